//! Prompt grids and prompt-ensemble class prototypes.

use std::io::Read;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embio::{EmbeddingFile, FileKind};
use crate::error::{Result, ZeusError};

pub const PROMPTS_SCHEMA: &str = "zeus-prompts/1";
pub const PLACEHOLDER: &str = "{}";

/// Marker appended to the `model_id` of prototype files to record the policy.
const POLICY_TAG: &str = ";ensemble=";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptClass {
    pub class_id: u64,
    pub display_name: String,
    pub classnames: Vec<String>,
}

/// Classnames per class and a shared list of templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub schema: String,
    pub classes: Vec<PromptClass>,
    pub templates: Vec<String>,
}

impl PromptSpec {
    pub fn new(classes: Vec<PromptClass>, templates: Vec<String>) -> Result<Self> {
        let spec = Self {
            schema: PROMPTS_SCHEMA.to_string(),
            classes,
            templates,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_reader<R: Read>(input: R) -> Result<Self> {
        let spec: Self = serde_json::from_reader(input)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ZeusError::InvalidPromptSpec(m));
        if self.schema != PROMPTS_SCHEMA {
            return bad(format!("expected schema {PROMPTS_SCHEMA}, found {}", self.schema));
        }
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        if self.templates.is_empty() {
            return bad("no templates".into());
        }
        for (i, class) in self.classes.iter().enumerate() {
            if class.class_id != i as u64 {
                return bad(format!(
                    "class ids must be dense from 0; position {i} has id {}",
                    class.class_id
                ));
            }
            if class.classnames.is_empty() {
                return bad(format!("class {} has no classnames", class.class_id));
            }
        }
        for t in &self.templates {
            let n = t.matches(PLACEHOLDER).count();
            if n != 1 {
                return bad(format!("template {t:?} has {n} placeholders, expected exactly 1"));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Number of expanded prompts for a class (classnames x templates).
    pub fn prompt_count(&self, class_id: u64) -> Option<usize> {
        self.classes
            .get(class_id as usize)
            .map(|c| c.classnames.len() * self.templates.len())
    }

    /// Hex SHA-256 of the canonical JSON serialization; stored in prototype
    /// and text-embedding files to tie them to their spec.
    pub fn spec_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("prompt spec serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Substitutes every classname into every template. Template-major order:
/// all classnames for template 0, then all for template 1, and so on.
pub fn expand_prompts(spec: &PromptSpec, class_id: u64) -> Result<Vec<String>> {
    spec.validate()?;
    let class = spec
        .classes
        .get(class_id as usize)
        .ok_or_else(|| ZeusError::InvalidPromptSpec(format!("class {class_id} not in prompt spec")))?;
    Ok(spec
        .templates
        .iter()
        .flat_map(|t| {
            class
                .classnames
                .iter()
                .map(move |name| t.replacen(PLACEHOLDER, name, 1))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPolicy {
    /// Plain componentwise mean of the encoder outputs.
    #[default]
    RawMean,
    /// Scale each embedding to unit length, then take the mean.
    NormalizeEachThenMean,
}

impl NormPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormPolicy::RawMean => "raw_mean",
            NormPolicy::NormalizeEachThenMean => "normalize_each_then_mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw_mean" | "raw" => Some(NormPolicy::RawMean),
            "normalize_each_then_mean" | "unit" => Some(NormPolicy::NormalizeEachThenMean),
            _ => None,
        }
    }
}

/// The encoded prompts of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbeddingSet {
    pub class_id: u64,
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl PromptEmbeddingSet {
    pub fn new(class_id: u64, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        if vectors.is_empty() || dim == 0 {
            return Err(ZeusError::InvalidInput(format!(
                "class {class_id}: need at least one non-empty prompt vector"
            )));
        }
        for v in &vectors {
            if v.len() != dim {
                return Err(ZeusError::DimMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ZeusError::InvalidInput(format!(
                    "class {class_id}: non-finite prompt embedding component"
                )));
            }
        }
        Ok(Self { class_id, dim, vectors })
    }
}

/// One averaged text embedding per class. Stored unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype {
    pub class_id: u64,
    pub vector: Vec<f64>,
    pub norm_policy: NormPolicy,
}

impl ClassPrototype {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Reduces a class's prompt embeddings to its prototype.
///
/// Each component is summed over the values sorted ascending, which makes
/// the result independent of the order the prompts arrive in.
pub fn ensemble(embs: &PromptEmbeddingSet, policy: NormPolicy) -> Result<ClassPrototype> {
    let set = PromptEmbeddingSet::new(embs.class_id, embs.vectors.clone())?;
    let rows: Vec<Vec<f64>> = match policy {
        NormPolicy::RawMean => set.vectors,
        NormPolicy::NormalizeEachThenMean => set
            .vectors
            .into_iter()
            .map(|v| {
                let n = l2(&v);
                if n < 1e-12 {
                    return Err(ZeusError::DegenerateVector(n));
                }
                Ok(v.into_iter().map(|x| x / n).collect())
            })
            .collect::<Result<_>>()?,
    };
    let count = rows.len() as f64;
    let mut column = Vec::with_capacity(rows.len());
    let vector: Vec<f64> = (0..set.dim)
        .map(|d| {
            column.clear();
            column.extend(rows.iter().map(|r| r[d]));
            column.sort_unstable_by(f64::total_cmp);
            column.iter().sum::<f64>() / count
        })
        .collect();
    let norm = l2(&vector);
    if !(norm >= 1e-12) {
        return Err(ZeusError::DegeneratePrototype {
            class_id: embs.class_id,
            norm,
        });
    }
    Ok(ClassPrototype {
        class_id: embs.class_id,
        vector,
        norm_policy: policy,
    })
}

/// Splits a per-prompt text-embedding file into one set per class, checking
/// the file against the spec's prompt counts.
pub fn group_prompt_embeddings(spec: &PromptSpec, file: &EmbeddingFile) -> Result<Vec<PromptEmbeddingSet>> {
    spec.validate()?;
    if file.kind != FileKind::Text {
        return Err(ZeusError::InvalidInput(
            "expected a ZEUSTXT1 text-embedding file".into(),
        ));
    }
    let mut sets = Vec::with_capacity(spec.num_classes());
    for class in &spec.classes {
        let vectors: Vec<Vec<f64>> = file
            .iter()
            .filter(|(id, _)| *id == class.class_id)
            .map(|(_, v)| v.iter().map(|&x| x as f64).collect())
            .collect();
        let expected = spec.prompt_count(class.class_id).unwrap_or(0);
        if vectors.len() != expected {
            return Err(ZeusError::InvalidInput(format!(
                "class {}: expected {expected} prompt embeddings, file has {}",
                class.class_id,
                vectors.len()
            )));
        }
        sets.push(PromptEmbeddingSet::new(class.class_id, vectors)?);
    }
    if let Some((id, _)) = file.iter().find(|(id, _)| *id as usize >= spec.num_classes()) {
        return Err(ZeusError::InvalidInput(format!(
            "text-embedding file has records for unknown class {id}"
        )));
    }
    Ok(sets)
}

/// Packs prototypes into a ZEUSTXT1 file, one record per class.
pub fn prototypes_to_file(protos: &[ClassPrototype], model_id: &str, spec_hash: &str) -> Result<EmbeddingFile> {
    let policy = protos.first().map(|p| p.norm_policy).unwrap_or_default();
    let dim = protos.first().map(ClassPrototype::dim).unwrap_or(0);
    let mut file = EmbeddingFile::new(
        FileKind::Text,
        format!("{model_id}{POLICY_TAG}{}", policy.as_str()),
        spec_hash.to_string(),
        dim,
    )?;
    for p in protos {
        let v: Vec<f32> = p.vector.iter().map(|&x| x as f32).collect();
        file.push(p.class_id, &v)?;
    }
    Ok(file)
}

/// Unpacks a prototype file; class ids must be dense from 0.
pub fn prototypes_from_file(file: &EmbeddingFile) -> Result<Vec<ClassPrototype>> {
    if file.kind != FileKind::Text {
        return Err(ZeusError::InvalidInput("expected a ZEUSTXT1 prototype file".into()));
    }
    let policy = file
        .model_id
        .rsplit_once(POLICY_TAG)
        .and_then(|(_, p)| NormPolicy::parse(p))
        .unwrap_or_default();
    file.iter()
        .enumerate()
        .map(|(i, (id, v))| {
            if id != i as u64 {
                return Err(ZeusError::InvalidInput(format!(
                    "prototype file must hold one record per class 0..C-1; position {i} has class {id}"
                )));
            }
            let vector: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            if l2(&vector) < 1e-12 {
                return Err(ZeusError::DegeneratePrototype {
                    class_id: id,
                    norm: l2(&vector),
                });
            }
            Ok(ClassPrototype {
                class_id: id,
                vector,
                norm_policy: policy,
            })
        })
        .collect()
}
