//! Human seed posts that root every discussion graph.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{is_clean, ToxicityScorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPost {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub source_tag: String,
    /// Filled by [`filter_seeds`]; ignored when a seed file is read back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tox: Option<f64>,
}

impl SeedPost {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source_tag: String::new(),
            tox: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedRecord {
    id: String,
    text: String,
    #[serde(default)]
    source_tag: String,
    /// Present in filtered files; scores are recomputed, so it is ignored.
    #[serde(default, rename = "tox")]
    _tox: Option<f64>,
}

/// Reads one JSON record per line, preserving file order. Blank lines are
/// skipped.
pub fn load_seeds(path: impl AsRef<Path>) -> Result<Vec<SeedPost>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_seeds(&content)
}

pub fn parse_seeds(content: &str) -> Result<Vec<SeedPost>> {
    let mut seen = HashSet::new();
    let mut seeds = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SeedRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.text.trim().is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "seed text is empty".into(),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::Corpus(format!(
                "duplicate seed id `{}` at line {}",
                record.id,
                i + 1
            )));
        }
        seeds.push(SeedPost {
            id: record.id,
            text: record.text,
            source_tag: record.source_tag,
            tox: None,
        });
    }
    Ok(seeds)
}

/// Keeps exactly the posts scoring below `tau_seed`, in order, each carrying
/// its score.
pub fn filter_seeds(
    seeds: &[SeedPost],
    scorer: &dyn ToxicityScorer,
    tau_seed: f64,
) -> Result<Vec<SeedPost>> {
    if !(tau_seed > 0.0 && tau_seed <= 1.0) {
        return Err(Error::config(format!(
            "seed threshold must lie in (0, 1], got {tau_seed}"
        )));
    }
    let mut kept = Vec::new();
    for seed in seeds {
        let tox = scorer.score(&seed.text).map_err(|e| Error::Scoring {
            subject: format!("seed `{}`", seed.id),
            message: e.to_string(),
        })?;
        if is_clean(tox, tau_seed) {
            kept.push(SeedPost {
                tox: Some(tox),
                ..seed.clone()
            });
        }
    }
    Ok(kept)
}

pub fn write_seeds(path: impl AsRef<Path>, seeds: &[SeedPost]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for seed in seeds {
        serde_json::to_writer(&mut out, seed)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}
