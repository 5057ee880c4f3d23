mod common;

use std::path::Path;

use common::*;
use image::{Rgb, RgbImage};
use tempfile::tempdir;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(out: &std::process::Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not json: {line}"))
}

#[test]
fn plan_emits_five_tiles_on_896_by_448() {
    let dir = tempdir().unwrap();
    run_ok(dir.path(), &["plan", "--width", "896", "--height", "448"]);
    let grid: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("grid.json")).unwrap()).unwrap();
    let tiles = grid["tiles"].as_array().unwrap();
    assert_eq!(tiles.len(), 5);
    assert_eq!(grid["stride"], 112);
    let xs: Vec<u64> = tiles.iter().map(|t| t[1].as_u64().unwrap()).collect();
    assert_eq!(xs, [0, 112, 224, 336, 448]);
}

#[test]
fn segment_on_phantom_matches_analytic_mask() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    run_ok(d, &["phantom", "--seed", "5"]);
    run_ok(
        d,
        &[
            "segment",
            "--grid",
            "grid.json",
            "--embeddings",
            "embeddings.bin",
            "--prototypes",
            "prototypes.bin",
        ],
    );
    for f in [
        "mask.png",
        "mask.json",
        "similarity.json",
        "similarity_class0.pfm",
        "similarity_class1.pfm",
    ] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    run_ok(
        d,
        &[
            "evaluate",
            "--mask",
            "mask.png",
            "--gt",
            "expected_mask.png",
            "--gt-downsample",
            "112",
        ],
    );
    assert!(first_dsc(&d.join("report.jsonl")) >= 0.95);
}

#[test]
fn evaluate_prediction_against_itself_reports_one() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    run_ok(d, &["phantom", "--width", "1344", "--height", "1344"]);
    let out = run_ok(
        d,
        &[
            "evaluate",
            "--mask",
            "expected_mask.png",
            "--gt",
            "expected_mask.png",
            "--gt-downsample",
            "112",
        ],
    );
    assert_eq!(first_dsc(&d.join("report.jsonl")), 1.0);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("1.000±0.000"), "{table}");
    assert_eq!(table, std::fs::read_to_string(d.join("report.txt")).unwrap());
}

#[test]
fn subcommands_are_idempotent() {
    let dir = tempdir().unwrap();
    let prompts = sample_prompts();
    for run_dir in ["a", "b"] {
        let args = |rest: &[&str]| -> Vec<String> {
            ["--out-dir", run_dir, "--seed", "3"]
                .iter()
                .chain(rest)
                .map(|x| x.to_string())
                .collect()
        };
        let call = |rest: &[&str]| {
            let a = args(rest);
            run_ok(dir.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
        };
        call(&["plan", "--width", "1120", "--height", "896", "--slide-id", "s1"]);
        let grid = format!("{run_dir}/grid.json");
        call(&["mock-encode", "--grid", &grid, "--prompts", s(&prompts), "--dim", "32"]);
        call(&[
            "prototypes",
            "--prompts",
            s(&prompts),
            "--text-embeddings",
            &format!("{run_dir}/text_embeddings.bin"),
        ]);
        call(&[
            "segment",
            "--grid",
            &grid,
            "--embeddings",
            &format!("{run_dir}/embeddings.bin"),
            "--prototypes",
            &format!("{run_dir}/prototypes.bin"),
        ]);
    }
    for f in [
        "grid.json",
        "embeddings.bin",
        "text_embeddings.bin",
        "prototypes.bin",
        "mask.png",
        "mask.json",
        "similarity_class1.pfm",
    ] {
        assert!(
            same_bytes(&dir.path().join("a").join(f), &dir.path().join("b").join(f)),
            "{f} differs"
        );
    }
}

#[test]
fn pipeline_equals_composition() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let prompts = sample_prompts();
    let geom = ["--width", "1344", "--height", "896", "--slide-id", "p"];
    let mut pipe = vec![
        "--out-dir",
        "pipe",
        "--seed",
        "11",
        "pipeline",
        "--prompts",
        s(&prompts),
        "--dim",
        "24",
        "--norm-policy",
        "unit",
    ];
    pipe.extend(geom);
    run_ok(d, &pipe);

    let mut plan = vec!["--out-dir", "step", "plan"];
    plan.extend(geom);
    run_ok(d, &plan);
    run_ok(
        d,
        &[
            "--out-dir",
            "step",
            "--seed",
            "11",
            "mock-encode",
            "--grid",
            "step/grid.json",
            "--prompts",
            s(&prompts),
            "--dim",
            "24",
        ],
    );
    run_ok(
        d,
        &[
            "--out-dir",
            "step",
            "prototypes",
            "--prompts",
            s(&prompts),
            "--text-embeddings",
            "step/text_embeddings.bin",
            "--norm-policy",
            "unit",
        ],
    );
    run_ok(
        d,
        &[
            "--out-dir",
            "step",
            "segment",
            "--grid",
            "step/grid.json",
            "--embeddings",
            "step/embeddings.bin",
            "--prototypes",
            "step/prototypes.bin",
        ],
    );
    for f in [
        "grid.json",
        "embeddings.bin",
        "text_embeddings.bin",
        "prototypes.bin",
        "mask.png",
        "mask.json",
        "similarity.json",
        "similarity_class0.pfm",
        "similarity_class1.pfm",
    ] {
        assert!(
            same_bytes(&d.join("pipe").join(f), &d.join("step").join(f)),
            "{f} differs"
        );
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let out = run(dir.path(), &["plan", "--width", "896", "--height", "448", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stride_and_overlap_conflict() {
    let dir = tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "plan",
            "--width",
            "896",
            "--height",
            "448",
            "--stride",
            "8",
            "--overlap",
            "0.5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn domain_error_exits_one_with_json_line() {
    let dir = tempdir().unwrap();
    let out = run(dir.path(), &["plan", "--width", "100", "--height", "100"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "InvalidInput");
}

#[test]
fn truncated_embeddings_report_their_kind() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    run_ok(d, &["phantom", "--width", "896", "--height", "896"]);
    let bytes = std::fs::read(d.join("embeddings.bin")).unwrap();
    std::fs::write(d.join("short.bin"), &bytes[..bytes.len() - 3]).unwrap();
    let out = run(
        d,
        &[
            "segment",
            "--grid",
            "grid.json",
            "--embeddings",
            "short.bin",
            "--prototypes",
            "prototypes.bin",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "TruncatedError");
}

#[test]
fn mismatched_encoders_are_rejected() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    run_ok(d, &["phantom", "--width", "896", "--height", "896"]);
    run_ok(
        d,
        &["--out-dir", "m", "mock-encode", "--grid", "grid.json", "--dim", "64"],
    );
    let out = run(
        d,
        &[
            "segment",
            "--grid",
            "grid.json",
            "--embeddings",
            "m/embeddings.bin",
            "--prototypes",
            "prototypes.bin",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "InvalidInput");
}

#[test]
fn config_supplies_defaults_and_flags_win() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "width = 1344\nheight = 896\nstride = 224\nslide-id = \"cfg\"\n",
    )
    .unwrap();
    run_ok(d, &["--config", "run.toml", "--out-dir", "a", "plan"]);
    run_ok(
        d,
        &[
            "--config",
            "run.toml",
            "--out-dir",
            "b",
            "plan",
            "--overlap",
            "0.25",
            "--width",
            "896",
        ],
    );
    let read = |sub: &str| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(d.join(sub).join("grid.json")).unwrap()).unwrap()
    };
    let (a, b) = (read("a"), read("b"));
    assert_eq!(a["stride"], 224);
    assert_eq!(a["slide"]["id"], "cfg");
    assert_eq!(a["slide"]["width_px"], 1344);
    assert_eq!(b["stride"], 336);
    assert_eq!(b["slide"]["width_px"], 896);
}

fn pink_thumbnail(w: u32, h: u32, rect: (u32, u32, u32, u32)) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        if x >= rect.0 && x < rect.2 && y >= rect.1 && y < rect.3 {
            Rgb([220, 120, 180])
        } else {
            Rgb([245, 245, 245])
        }
    })
}

#[test]
fn plan_with_thumbnail_keeps_only_tissue_tiles() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    pink_thumbnail(56, 56, (0, 0, 28, 56))
        .save(d.join("thumb.png"))
        .unwrap();
    run_ok(
        d,
        &[
            "plan",
            "--width",
            "1792",
            "--height",
            "1792",
            "--thumbnail",
            "thumb.png",
            "--thumb-downsample",
            "32",
        ],
    );
    assert!(d.join("tissue.png").exists());
    let grid: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("grid.json")).unwrap()).unwrap();
    let tiles = grid["tiles"].as_array().unwrap();
    assert!(!tiles.is_empty());
    // Tissue covers x < 896; a tile needs a quarter of its area on tissue.
    assert!(tiles.iter().all(|t| t[1].as_u64().unwrap() <= 896 - 112));
}

#[test]
fn overlay_draws_at_thumbnail_size() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    run_ok(d, &["phantom", "--width", "1792", "--height", "1792"]);
    run_ok(
        d,
        &[
            "segment",
            "--grid",
            "grid.json",
            "--embeddings",
            "embeddings.bin",
            "--prototypes",
            "prototypes.bin",
        ],
    );
    pink_thumbnail(112, 112, (0, 0, 112, 112))
        .save(d.join("thumb.png"))
        .unwrap();
    run_ok(
        d,
        &[
            "overlay",
            "--thumbnail",
            "thumb.png",
            "--thumb-downsample",
            "16",
            "--mask",
            "mask.png",
            "--gt",
            "expected_mask.png",
            "--gt-downsample",
            "112",
        ],
    );
    let img = image::open(d.join("overlay.png")).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (112, 112));
    let count = |c: Rgb<u8>| img.pixels().filter(|&&p| p == c).count();
    assert!(count(Rgb([0, 0, 255])) > 0 || count(Rgb([0, 255, 0])) > 0);
    assert!(count(Rgb([0, 255, 0])) > 0);
}
