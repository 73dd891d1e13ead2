//! Extract counterfactual preference pairs from paired rollouts, write them
//! as JSONL and validate the file against a re-scoring.

use toxprop::dpo::{export_pairs, extract_pairs, validate_pairs_file, DEFAULT_MIN_DELTA};
use toxprop::rollout::{run_paired, Backends, RolloutConfig};
use toxprop::scoring::{Lexicon, LexiconScorer};
use toxprop::seeds::SeedPost;

fn main() -> toxprop::Result<()> {
    let cfg = RolloutConfig::chain(4, 0.8);
    let backends = Backends::scripted(0.8, Lexicon::default())?;
    let pairs = ["a", "b"]
        .iter()
        .map(|id| {
            run_paired(
                "chain",
                &cfg,
                &SeedPost::new(*id, "a calm opener"),
                0,
                &backends,
            )
        })
        .collect::<toxprop::Result<Vec<_>>>()?;
    let refs: Vec<_> = pairs.iter().collect();
    let prefs = extract_pairs(&refs, DEFAULT_MIN_DELTA)?;
    for p in &prefs {
        println!(
            "{} turn {}: chosen {:.1} vs rejected {:.1}, {} context entries",
            p.seed_id,
            p.turn,
            p.tox_chosen,
            p.tox_rejected,
            p.context.len()
        );
    }
    let path = std::env::temp_dir().join("toxprop_pairs.jsonl");
    export_pairs(&prefs, &path)?;
    let v = validate_pairs_file(
        &path,
        Some(DEFAULT_MIN_DELTA),
        Some(&LexiconScorer::default()),
    )?;
    println!("{} pairs written to {}", v.count, path.display());
    Ok(())
}
