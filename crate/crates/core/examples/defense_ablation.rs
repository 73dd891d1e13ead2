//! Run every defense preset on the same memory chain and compare Δμ, SPG
//! and turn-final toxicity.

use toxprop::interventions::{InterventionPolicy, PRESETS};
use toxprop::metrics::{build_report, ReportOptions};
use toxprop::rollout::{run_grid, Backends, GridCondition, MemoryConditioning, RolloutConfig};
use toxprop::scoring::Lexicon;
use toxprop::seeds::SeedPost;

fn main() -> toxprop::Result<()> {
    let seeds: Vec<SeedPost> = (0..10)
        .map(|i| SeedPost::new(format!("s{i}"), format!("question number {i} about zoning")))
        .collect();
    let mut conditions = Vec::new();
    for preset in PRESETS {
        let cfg = RolloutConfig::chain(4, 0.8)
            .with_memory(MemoryConditioning::SummaryPlusParent)
            .with_policy(InterventionPolicy::preset(preset)?);
        conditions.push(GridCondition {
            name: preset.to_string(),
            config: cfg,
            backends: Backends::scripted(0.8, Lexicon::default())?,
        });
    }
    let records = run_grid(&conditions, &seeds, 4)?;
    let opts = ReportOptions {
        bootstrap_b: 1000,
        ..ReportOptions::default()
    };
    let report = build_report(&records, &[], &opts)?;
    print!("{}", String::from_utf8_lossy(&report.ablation_csv()?));
    Ok(())
}
