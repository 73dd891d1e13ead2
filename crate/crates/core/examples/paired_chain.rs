//! The basic paired experiment: a 4-reply chain, toxic versus neutral focal
//! agent, full transcript visibility.

use toxprop::metrics::paired_effect;
use toxprop::rollout::{run_paired, Backends, RolloutConfig};
use toxprop::scoring::Lexicon;
use toxprop::seeds::SeedPost;

fn main() -> toxprop::Result<()> {
    let cfg = RolloutConfig::chain(4, 0.8);
    let backends = Backends::scripted(0.8, Lexicon::default())?;
    let seed = SeedPost::new("s1", "what should the city do about parking");
    let pair = run_paired("chain", &cfg, &seed, 0, &backends)?;

    println!("config digest {}", pair.config_digest);
    for (t, n) in pair.toxic.nodes.iter().zip(&pair.neutral.nodes) {
        println!(
            "{:<4} {:<6} {:<12} toxic {:.2}  neutral {:.2}",
            t.id, t.agent, t.role, t.tox, n.tox
        );
    }
    println!("delta mu = {}", paired_effect(&pair)?);
    Ok(())
}
