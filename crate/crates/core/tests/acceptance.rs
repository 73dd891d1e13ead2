//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary so the lines are always printed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toxprop::dpo::{export_pairs, extract_pairs, import_pairs, validate_pairs_file};
use toxprop::experiment::cmd_metrics;
use toxprop::interventions::{GateMode, InterventionPolicy, MemoryMode};
use toxprop::logfile::{to_jsonl, write_log};
use toxprop::metrics::{
    paired_effect, per_seed_spg, record_clean_fraction, spg, ReportOptions, DEFAULT_TAU_GRID,
    REPORT_COLUMNS,
};
use toxprop::rollout::{
    run_grid, run_paired, Arm, Backends, GridCondition, LogRecord, MemoryConditioning,
    PairedRollout, RolloutConfig, SpgRecord,
};
use toxprop::scoring::{Lexicon, LexiconScorer};
use toxprop::stats::{bootstrap_ci, exact_mean, p95, wilcoxon_signed_rank, Alternative};
use toxprop::topology::{build_template, TopologyTemplate};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn scripted(iota: f64) -> Backends {
    Backends::scripted(iota, Lexicon::default()).unwrap()
}

fn grid(name: &str, cfg: RolloutConfig, seeds: usize) -> Vec<PairedRollout> {
    let iota = cfg.focal_intensity;
    let cond = GridCondition {
        name: name.into(),
        config: cfg,
        backends: scripted(iota),
    };
    run_grid(&[cond], &common::seeds(seeds), 1)
        .unwrap()
        .into_iter()
        .map(|r| match r {
            LogRecord::Pair(p) => p,
            LogRecord::Failure(f) => panic!("pair failed: {}", f.error),
        })
        .collect()
}

fn records(pairs: &[PairedRollout]) -> Vec<SpgRecord> {
    pairs
        .iter()
        .flat_map(|p| p.toxic.spg_records.iter().chain(&p.neutral.spg_records))
        .cloned()
        .collect()
}

fn pooled_spg(pairs: &[PairedRollout], tau: f64) -> Option<f64> {
    spg(&records(pairs), tau).value()
}

fn delta_mu(pairs: &[PairedRollout]) -> f64 {
    let effects: Vec<f64> = pairs.iter().map(|p| paired_effect(p).unwrap()).collect();
    exact_mean(&effects).unwrap()
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let cfg = RolloutConfig::chain(4, 0.8);
    let seed = &common::seeds(1)[0];
    let pair = run_paired("chain", &cfg, seed, 0, &scripted(0.8)).map_err(|e| e.to_string())?;
    let down: Vec<f64> = pair.toxic.downstream().map(|n| n.tox).collect();
    let dm = paired_effect(&pair).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check!(down == [0.4, 0.4, 0.4], "downstream toxicities {down:?}");
    check!(dm == 0.4, "delta mu {dm}");
    check!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("downstream {down:?}, delta mu {dm}, {elapsed:?}"))
}

fn ac2() -> Outcome {
    let cfg = RolloutConfig::chain(2, 0.8).with_memory(MemoryConditioning::SummaryOnly);
    let pairs = grid("laundering", cfg, 40);
    let recs = records(&pairs);
    for p in &pairs {
        for m in p.toxic.memory_trace.iter().chain(&p.neutral.memory_trace) {
            check!(
                m.state.tox == 0.0,
                "memory turn {} scores {}",
                m.state.turn,
                m.state.tox
            );
        }
    }
    for &tau in &DEFAULT_TAU_GRID {
        let cf = record_clean_fraction(&recs, Arm::Toxic, tau);
        check!(cf == Some(1.0), "clean fraction {cf:?} at tau {tau}");
        let s = spg(&recs, tau).value();
        check!(s.is_some_and(|v| v > 0.0), "SPG {s:?} at tau {tau}");
    }
    let s05 = pooled_spg(&pairs, 0.5);
    check!(s05 == Some(0.2), "SPG(0.5) = {s05:?}");
    let per_seed = per_seed_spg(&pairs.iter().collect::<Vec<_>>(), 0.5);
    check!(
        per_seed.len() == 40,
        "{} seeds with defined SPG",
        per_seed.len()
    );
    let w = wilcoxon_signed_rank(&per_seed, Alternative::Greater);
    check!(w.p < 0.001, "Wilcoxon p = {}", w.p);
    Ok(format!(
        "clean fraction 1.0, SPG(0.5) = 0.2, Wilcoxon p = {:.3e}",
        w.p
    ))
}

fn ac3() -> Outcome {
    let base = RolloutConfig::chain(4, 0.8).with_memory(MemoryConditioning::SummaryPlusParent);
    let redact = InterventionPolicy {
        write_mode: GateMode::Redact,
        ..InterventionPolicy::none()
    };
    let write_redact = grid("redact", base.clone().with_policy(redact), 10);
    let write_rewrite = grid(
        "transcript_only",
        base.clone()
            .with_policy(InterventionPolicy::preset("transcript_only").unwrap()),
        10,
    );
    let mem_rewrite = grid(
        "memory_only",
        base.clone()
            .with_policy(InterventionPolicy::preset("memory_only").unwrap()),
        10,
    );
    let gate = InterventionPolicy {
        memory_mode: MemoryMode::Gate,
        ..InterventionPolicy::none()
    };
    let mem_gate = grid(
        "memory_gate",
        RolloutConfig::chain(4, 0.8)
            .with_memory(MemoryConditioning::SummaryPlusTranscript)
            .with_policy(gate),
        10,
    );

    let s_redact = pooled_spg(&write_redact, 0.5).ok_or("redact SPG undefined")?;
    let s_rewrite = pooled_spg(&write_rewrite, 0.5).ok_or("rewrite SPG undefined")?;
    let s_mem = pooled_spg(&mem_rewrite, 0.5).ok_or("memory rewrite SPG undefined")?;
    let dm_gate = delta_mu(&mem_gate);
    check!(s_redact <= 0.01, "write-gate redact SPG {s_redact}");
    check!(s_rewrite <= 0.01, "write-gate rewrite SPG {s_rewrite}");
    check!(s_mem >= 0.05, "memory rewrite SPG {s_mem}");
    check!(dm_gate > 0.0, "memory gate delta mu {dm_gate}");
    check!(s_redact.max(s_rewrite) < s_mem, "ordering violated");
    Ok(format!(
        "SPG write-gate {s_redact}/{s_rewrite} < memory rewrite {s_mem:.4}; memory gate delta mu {dm_gate:.4}"
    ))
}

fn ac4() -> Outcome {
    let base = RolloutConfig::chain(4, 0.4);
    let run = |name: &str, policy: InterventionPolicy| {
        delta_mu(&grid(name, base.clone().with_policy(policy), 5))
    };
    let none = run("none", InterventionPolicy::none());
    let filtered = run(
        "output_filter",
        InterventionPolicy::preset("output_filter").unwrap(),
    );
    let gated = run(
        "write_gate",
        InterventionPolicy::preset("transcript_only")
            .unwrap()
            .with_tau(0.3),
    );
    check!(none > 0.0, "no-intervention delta mu {none}");
    check!(filtered == none, "output filter {filtered} != none {none}");
    check!(gated == 0.0, "write gate at 0.3 leaves {gated}");
    Ok(format!(
        "delta mu none {none} = output filter {filtered}; write gate(0.3) {gated}"
    ))
}

fn ac5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..25 {
        let n = rng.random_range(1..=12);
        let d: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-4i32..=4) as f64 / 4.0)
            .collect();
        for (alt, greater) in [(Alternative::Greater, true), (Alternative::Less, false)] {
            let p = wilcoxon_signed_rank(&d, alt).p;
            let oracle = common::brute_force_wilcoxon(&d, greater);
            check!(
                (p - oracle).abs() <= 1e-12,
                "fixture {i} {d:?}: {p} vs {oracle}"
            );
        }
    }
    let eight = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
    let p8 = wilcoxon_signed_rank(&eight, Alternative::Greater).p;
    check!(p8 == 1.0 / 256.0, "all-positive n=8 p = {p8}");
    for i in 0..100 {
        let n = rng.random_range(1..=200);
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        check!(p95(&v) == Some(common::p95_oracle(&v)), "p95 fixture {i}");
    }
    let sample: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
    let a = bootstrap_ci(&sample, 10_000, 0.95, 11);
    let b = bootstrap_ci(&sample, 10_000, 0.95, 11);
    check!(
        a.is_some() && a == b,
        "bootstrap not deterministic: {a:?} {b:?}"
    );
    Ok("25 Wilcoxon fixtures exact, p = 1/256, 100 p95 fixtures, bootstrap stable".into())
}

fn templates() -> Vec<(&'static str, TopologyTemplate)> {
    vec![
        ("chain", TopologyTemplate::chain(4)),
        ("tree", TopologyTemplate::tree(3, 3)),
        ("dag", TopologyTemplate::dag(3, 2, 4, 7)),
        ("high_branch", TopologyTemplate::high_branch()),
    ]
}

fn ac6() -> Outcome {
    let seeds = common::seeds(8);
    let conditions: Vec<GridCondition> = templates()
        .into_iter()
        .map(|(name, t)| {
            let mut cfg = RolloutConfig::chain(4, 0.8)
                .with_memory(MemoryConditioning::SummaryPlusParent)
                .with_policy(InterventionPolicy::preset("memory_only").unwrap());
            cfg.template = t;
            GridCondition {
                name: name.into(),
                config: cfg,
                backends: scripted(0.8),
            }
        })
        .collect();
    let one = to_jsonl(&run_grid(&conditions, &seeds, 1).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let eight = to_jsonl(&run_grid(&conditions, &seeds, 8).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    check!(one == eight, "logs differ between parallelism 1 and 8");

    for (name, t) in templates() {
        let mut cfg = RolloutConfig::chain(4, 0.8);
        cfg.template = t;
        cfg.diagnostic_identical_arms = true;
        for p in grid(name, cfg, 3) {
            let dm = paired_effect(&p).map_err(|e| e.to_string())?;
            check!(dm == 0.0, "{name}: diagnostic delta mu {dm}");
        }
    }
    Ok(format!(
        "{} log bytes identical; diagnostic delta mu 0 on 4 templates",
        one.len()
    ))
}

fn ac7() -> Outcome {
    let chain = build_template(&TopologyTemplate::chain(4)).map_err(|e| e.to_string())?;
    check!(chain.len() == 5, "chain L=4 has {} nodes", chain.len());
    let tree = build_template(&TopologyTemplate::tree(3, 3)).map_err(|e| e.to_string())?;
    check!(tree.len() == 40, "tree D=3 b=3 has {} nodes", tree.len());
    let cases = 256;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&common::template_strategy(), |t| {
            common::check_topology(&t).map_err(proptest::test_runner::TestCaseError::fail)
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} random templates"))
}

fn ac8() -> Outcome {
    let pairs = grid("chain", RolloutConfig::chain(4, 0.8), 5);
    let refs: Vec<&PairedRollout> = pairs.iter().collect();
    let at_01 = extract_pairs(&refs, 0.1).map_err(|e| e.to_string())?;
    let at_05 = extract_pairs(&refs, 0.5).map_err(|e| e.to_string())?;
    for p in &pairs {
        let n = at_01.iter().filter(|x| x.seed_id == p.seed_id).count();
        check!(n == 3, "seed {} yields {n} pairs", p.seed_id);
    }
    check!(at_05.is_empty(), "{} pairs at min_delta 0.5", at_05.len());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("pairs.jsonl");
    export_pairs(&at_01, &path).map_err(|e| e.to_string())?;
    let back = import_pairs(&path).map_err(|e| e.to_string())?;
    check!(back == at_01, "round trip changed the pairs");
    let scorer = LexiconScorer::default();
    let v = validate_pairs_file(&path, Some(0.1), Some(&scorer)).map_err(|e| e.to_string())?;
    Ok(format!(
        "{} pairs, round trip lossless, re-scored deltas > 0.1",
        v.count
    ))
}

fn ac9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pairs = grid("chain", RolloutConfig::chain(4, 0.8), 3);
    let log = dir.path().join("chain.jsonl");
    let recs: Vec<LogRecord> = pairs.into_iter().map(LogRecord::Pair).collect();
    write_log(&log, &recs).map_err(|e| e.to_string())?;
    let out = dir.path().join("report");
    cmd_metrics(&[log], &ReportOptions::default(), &out).map_err(|e| e.to_string())?;
    let csv = std::fs::read_to_string(out.join("report.csv")).map_err(|e| e.to_string())?;
    let golden = include_str!("golden/report_header.csv");
    let header = csv.lines().next().unwrap_or_default();
    check!(header == golden.trim_end(), "header {header}");
    check!(
        header.split(',').eq(REPORT_COLUMNS),
        "REPORT_COLUMNS drifted from golden"
    );
    let row: Vec<&str> = csv.lines().nth(1).unwrap_or_default().split(',').collect();
    check!(
        row.len() == REPORT_COLUMNS.len(),
        "row has {} fields",
        row.len()
    );
    check!(row[0] == "chain" && row[9] == "0.4", "row {row:?}");
    Ok(format!("{} columns match golden", REPORT_COLUMNS.len()))
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("AC1", "delta mu oracle", ac1),
        ("AC2", "laundering reproduction", ac2),
        ("AC3", "ordering finding", ac3),
        ("AC4", "filter bypass", ac4),
        ("AC5", "statistics kernels", ac5),
        ("AC6", "determinism and pairing", ac6),
        ("AC7", "topology invariants", ac7),
        ("AC8", "preference pair export", ac8),
        ("AC9", "report fidelity", ac9),
    ];
    let suite = Instant::now();
    let mut failed = 0;
    for (id, name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name}: {why}");
            }
        }
    }
    let total = suite.elapsed();
    println!("acceptance suite finished in {total:?}");
    if total > Duration::from_secs(30) {
        println!("FAIL runtime budget of 30 s exceeded");
        failed += 1;
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
