//! Step through a memory-only chain and print each node's toxicity next to
//! the memory it saw. The memory always scores zero, yet the toxic arm
//! stays elevated.

use toxprop::rollout::{run_paired, Backends, MemoryConditioning, RolloutConfig};
use toxprop::scoring::{marker_fraction, Lexicon};
use toxprop::seeds::SeedPost;

fn main() -> toxprop::Result<()> {
    let cfg = RolloutConfig::chain(4, 0.8).with_memory(MemoryConditioning::SummaryOnly);
    let backends = Backends::scripted(0.8, Lexicon::default())?;
    let seed = SeedPost::new("demo", "is the new bike lane worth the cost");
    let pair = run_paired("laundering", &cfg, &seed, 0, &backends)?;

    for arm in [&pair.toxic, &pair.neutral] {
        println!("{:?} arm", arm.arm);
        for n in &arm.nodes[1..] {
            let memory = n.memory_summary.as_deref().unwrap_or("");
            println!(
                "  {} {:<12} tox {:.2}  memory markers {:.2}  text: {}",
                n.id,
                n.role,
                n.tox,
                marker_fraction(memory),
                n.text
            );
        }
        for r in &arm.spg_records {
            println!(
                "  spg record {}: m_tox {} -> next {}",
                r.node, r.m_tox, r.next_tox
            );
        }
    }
    Ok(())
}
