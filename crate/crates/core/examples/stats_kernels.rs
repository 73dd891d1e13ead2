//! The statistics used by the report on small hand-made samples.

use toxprop::stats::{bootstrap_ci, exact_mean, p95, stderr, wilcoxon_signed_rank, Alternative};

fn main() {
    let deltas = [0.2, 0.1, 0.3, 0.0, 0.2, -0.1, 0.4, 0.2, 0.1];
    println!(
        "mean {:?}, stderr {:?}",
        exact_mean(&deltas),
        stderr(&deltas)
    );
    for alt in [Alternative::Greater, Alternative::TwoSided] {
        let w = wilcoxon_signed_rank(&deltas, alt);
        println!(
            "wilcoxon {alt:?}: W+ {} n {} p {:.5} ({:?})",
            w.w_plus, w.n, w.p, w.method
        );
    }
    println!(
        "bootstrap 95% CI {:?}",
        bootstrap_ci(&deltas, 10_000, 0.95, 1)
    );

    let tox: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
    println!("p95 of 0.00..0.95 = {:?}", p95(&tox));

    let eight = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
    println!(
        "all-positive n=8: p = {}",
        wilcoxon_signed_rank(&eight, Alternative::Greater).p
    );
}
