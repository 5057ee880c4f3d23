//! Flat config files. Each key is a long flag name of the chosen subcommand;
//! values are injected right after the subcommand token so explicit flags,
//! which come later on the command line, override them.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Command;

/// Flags where giving one on the command line suppresses the other from config.
const EXCLUSIVE: &[(&str, &str)] = &[("stride", "overlap"), ("thumbnail", "tissue-mask")];

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(tok) = it.next() {
        let tok = tok.to_string_lossy();
        if tok == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = tok.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn subcommand_index(argv: &[OsString], cmd: &Command) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].to_string_lossy();
        if tok.starts_with("--") {
            i += if tok.contains('=') { 1 } else { 2 };
            continue;
        }
        return cmd.find_subcommand(tok.as_ref()).map(|_| i);
    }
    None
}

fn flags_given(argv: &[OsString]) -> BTreeSet<String> {
    argv.iter()
        .filter_map(|t| {
            let t = t.to_string_lossy();
            let name = t.strip_prefix("--")?;
            Some(name.split('=').next().unwrap_or(name).to_string())
        })
        .collect()
}

fn value_tokens(key: &str, value: &toml::Value) -> Result<Vec<String>> {
    let flag = format!("--{key}");
    let scalar = |v: &toml::Value| -> Result<String> {
        Ok(match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            other => bail!("config key {key:?}: unsupported value {other}"),
        })
    };
    Ok(match value {
        toml::Value::Boolean(true) => vec![flag],
        toml::Value::Boolean(false) => vec![],
        toml::Value::Array(items) => {
            let mut out = Vec::new();
            for item in items {
                out.push(flag.clone());
                out.push(scalar(item)?);
            }
            out
        }
        v => vec![flag, scalar(v)?],
    })
}

/// Rewrites `argv` with the config file's entries, if `--config` is present.
pub fn expand_argv(argv: Vec<OsString>, cmd: &Command) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(sub_idx) = subcommand_index(&argv, cmd) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;

    let sub = cmd
        .find_subcommand(argv[sub_idx].to_string_lossy().as_ref())
        .expect("index points at a subcommand");
    let accepted: BTreeSet<String> = sub
        .get_arguments()
        .chain(cmd.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let given = flags_given(&argv);

    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in &table {
        if key == "config" || given.contains(key) {
            continue;
        }
        if !accepted.contains(key) {
            log::debug!("config key {key:?} does not apply to this subcommand");
            continue;
        }
        let excluded = EXCLUSIVE
            .iter()
            .any(|&(a, b)| (key == a && given.contains(b)) || (key == b && given.contains(a)));
        if excluded {
            continue;
        }
        injected.extend(value_tokens(key, value)?.into_iter().map(OsString::from));
    }
    let mut out = argv;
    out.splice(sub_idx + 1..sub_idx + 1, injected);
    Ok(out)
}
