//! Counterfactual preference pairs for DPO fine-tuning.
//!
//! Each pair holds a neutral-arm reply (chosen) and the toxic-arm reply at the
//! same node (rejected), both attached to the toxic arm's context.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ContextEntry;
use crate::rollout::PairedRollout;
use crate::scoring::ToxicityScorer;

pub const DEFAULT_MIN_DELTA: f64 = 0.1;
/// Author tag of the memory summary when it is part of the context.
pub const MEMORY_AUTHOR: &str = "memory";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub seed_id: String,
    /// Position of the node in generation order (the seed is 0).
    pub turn: u32,
    pub context: Vec<ContextEntry>,
    pub chosen: String,
    pub rejected: String,
    pub tox_chosen: f64,
    pub tox_rejected: f64,
}

impl PreferencePair {
    pub fn delta(&self) -> f64 {
        self.tox_rejected - self.tox_chosen
    }
}

/// Pairs every downstream node present in both arms and keeps those with
/// `tox_rejected - tox_chosen > min_delta`. Output is ordered by seed id,
/// repeat, then turn.
pub fn extract_pairs(pairs: &[&PairedRollout], min_delta: f64) -> Result<Vec<PreferencePair>> {
    let mut sorted: Vec<&PairedRollout> = pairs.to_vec();
    sorted.sort_by(|a, b| (&a.seed_id, a.repeat).cmp(&(&b.seed_id, b.repeat)));
    let mut out = Vec::new();
    for p in sorted {
        if p.toxic.nodes.len() != p.neutral.nodes.len() {
            return Err(Error::Structure(format!(
                "arms of seed `{}` have {} and {} nodes",
                p.seed_id,
                p.toxic.nodes.len(),
                p.neutral.nodes.len()
            )));
        }
        for (turn, t) in p.toxic.nodes.iter().enumerate() {
            let n = p.neutral.node(&t.id).ok_or_else(|| {
                Error::Structure(format!(
                    "node `{}` of seed `{}` missing from the neutral arm",
                    t.id, p.seed_id
                ))
            })?;
            if n.focal != t.focal || n.depth != t.depth {
                return Err(Error::Structure(format!(
                    "node `{}` of seed `{}` differs in role between arms",
                    t.id, p.seed_id
                )));
            }
            if !t.is_downstream() {
                continue;
            }
            if t.tox - n.tox > min_delta {
                let mut context = Vec::with_capacity(t.context.len() + 1);
                if let Some(m) = &t.memory_summary {
                    context.push(ContextEntry::new(MEMORY_AUTHOR, m.clone()));
                }
                context.extend(t.context.iter().cloned());
                out.push(PreferencePair {
                    seed_id: p.seed_id.clone(),
                    turn: turn as u32,
                    context,
                    chosen: n.text.clone(),
                    rejected: t.text.clone(),
                    tox_chosen: n.tox,
                    tox_rejected: t.tox,
                });
            }
        }
    }
    Ok(out)
}

pub fn pairs_to_jsonl(pairs: &[PreferencePair]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn export_pairs(pairs: &[PreferencePair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = pairs_to_jsonl(pairs)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

/// Parses and schema-checks a pairs file body.
pub fn parse_pairs(content: &str) -> Result<Vec<PreferencePair>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let p: PreferencePair = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        for (name, v) in [
            ("tox_chosen", p.tox_chosen),
            ("tox_rejected", p.tox_rejected),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if p.seed_id.is_empty() {
            return Err(bad("seed_id is empty".into()));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn import_pairs(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&content)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairsValidation {
    pub count: usize,
}

/// Checks schema, optionally the delta filter, and optionally that stored
/// scores match a re-scoring of the texts.
pub fn validate_pairs_file(
    path: impl AsRef<Path>,
    min_delta: Option<f64>,
    scorer: Option<&dyn ToxicityScorer>,
) -> Result<PairsValidation> {
    let pairs = import_pairs(path)?;
    for (i, p) in pairs.iter().enumerate() {
        let line = i + 1;
        if let Some(md) = min_delta {
            if p.delta() <= md {
                return Err(Error::Parse {
                    line,
                    message: format!("delta {} is not above {md}", p.delta()),
                });
            }
        }
        if let Some(s) = scorer {
            let (c, r) = (s.score(&p.chosen)?, s.score(&p.rejected)?);
            if c != p.tox_chosen || r != p.tox_rejected {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "stored scores ({}, {}) differ from re-scored ({c}, {r})",
                        p.tox_chosen, p.tox_rejected
                    ),
                });
            }
            if let Some(md) = min_delta {
                if r - c <= md {
                    return Err(Error::Parse {
                        line,
                        message: format!("re-scored delta {} is not above {md}", r - c),
                    });
                }
            }
        }
    }
    Ok(PairsValidation { count: pairs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{run_paired, Backends, RolloutConfig};
    use crate::scoring::{Lexicon, LexiconScorer};
    use crate::seeds::SeedPost;

    fn chain_pair(id: &str, diagnostic: bool) -> PairedRollout {
        let mut cfg = RolloutConfig::chain(4, 0.8);
        cfg.diagnostic_identical_arms = diagnostic;
        let b = Backends::scripted(0.8, Lexicon::default()).unwrap();
        run_paired("c", &cfg, &SeedPost::new(id, "a calm opening post"), 0, &b).unwrap()
    }

    #[test]
    fn chain_yields_three_pairs() {
        let p = chain_pair("s", false);
        let out = extract_pairs(&[&p], 0.1).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.iter().map(|p| p.turn).collect::<Vec<_>>(), [2, 3, 4]);
        assert!(out.iter().all(|p| p.delta() == 0.4));
        // Context comes from the toxic arm: the focal reply is toxic there.
        assert!(out[0].context.iter().any(|c| c.text.contains("vile")));
        assert!(extract_pairs(&[&p], 0.5).unwrap().is_empty());
    }

    #[test]
    fn identical_arms_yield_nothing() {
        let p = chain_pair("s", true);
        assert!(extract_pairs(&[&p], 0.1).unwrap().is_empty());
    }

    #[test]
    fn misaligned_arms_rejected() {
        let mut p = chain_pair("s", false);
        p.neutral.nodes[2].id = "zz".into();
        assert!(matches!(
            extract_pairs(&[&p], 0.1),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let pairs =
            extract_pairs(&[&chain_pair("a", false), &chain_pair("b", false)], 0.1).unwrap();
        export_pairs(&pairs, &path).unwrap();
        assert_eq!(import_pairs(&path).unwrap(), pairs);
        let scorer = LexiconScorer::default();
        let v = validate_pairs_file(&path, Some(0.1), Some(&scorer)).unwrap();
        assert_eq!(v.count, 6);

        export_pairs(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
        assert_eq!(validate_pairs_file(&path, None, None).unwrap().count, 0);
    }

    #[test]
    fn missing_field_reports_line() {
        let good = String::from_utf8(
            pairs_to_jsonl(&extract_pairs(&[&chain_pair("a", false)], 0.1).unwrap()).unwrap(),
        )
        .unwrap();
        let first = good.lines().next().unwrap();
        let broken = first.replace("\"rejected\"", "\"rejectedx\"");
        let body = format!("{first}\n{broken}\n");
        assert!(matches!(
            parse_pairs(&body),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
