//! SPG across a threshold grid for a laundering chain, with bootstrap
//! intervals, as a CSV on stdout.

use toxprop::metrics::{build_report, ReportOptions};
use toxprop::rollout::{run_grid, Backends, GridCondition, MemoryConditioning, RolloutConfig};
use toxprop::scoring::Lexicon;
use toxprop::seeds::SeedPost;

fn main() -> toxprop::Result<()> {
    let seeds: Vec<SeedPost> = (0..40)
        .map(|i| {
            SeedPost::new(
                format!("s{i:02}"),
                format!("thread {i}: thoughts on transit"),
            )
        })
        .collect();
    let cond = GridCondition {
        name: "summary_only".into(),
        config: RolloutConfig::chain(2, 0.8).with_memory(MemoryConditioning::SummaryOnly),
        backends: Backends::scripted(0.8, Lexicon::default())?,
    };
    let records = run_grid(&[cond], &seeds, 4)?;
    let report = build_report(&records, &[], &ReportOptions::default())?;
    print!("{}", String::from_utf8_lossy(&report.sweep_csv()?));
    Ok(())
}
