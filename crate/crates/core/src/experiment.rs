//! Command implementations behind the `toxprop` binary.

use std::path::{Path, PathBuf};

use crate::config::{BackendKind, ConditionConfig, ExperimentConfig};
use crate::dpo::{export_pairs, extract_pairs};
use crate::error::{Error, Result};
use crate::logfile::{read_log, to_jsonl, write_log};
use crate::metrics::{build_report, MetricsReport, ReportOptions};
use crate::rollout::{run_grid, GridCondition, LogRecord, PairedRollout};
use crate::seeds::{filter_seeds, load_seeds, write_seeds};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Template(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub backend: Option<BackendKind>,
    pub tau_grid: Option<Vec<f64>>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
            // Command-line paths are relative to the working directory.
            if o.is_relative() {
                cfg.output_dir = std::env::current_dir().unwrap_or_default().join(o);
            }
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        if let Some(b) = self.backend {
            cfg.backend.kind = b;
        }
        if let Some(g) = &self.tau_grid {
            cfg.tau_grid = g.clone();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub log_files: Vec<PathBuf>,
    pub pairs: usize,
    pub failures: usize,
    pub seeds_dropped: usize,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures == 0 {
            EXIT_OK
        } else {
            EXIT_PARTIAL
        }
    }
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run_conditions(
    cfg: &ExperimentConfig,
    conditions: &[ConditionConfig],
    prefix: &str,
) -> Result<(RunSummary, Vec<LogRecord>)> {
    let scorer = cfg.build_scorer()?;
    let seeds = load_seeds(cfg.seeds_file())?;
    let kept = filter_seeds(&seeds, scorer.as_ref(), cfg.seed_tau)?;
    let dropped = seeds.len() - kept.len();
    if dropped > 0 {
        log::info!(
            "dropped {dropped} seed(s) scoring at or above {}",
            cfg.seed_tau
        );
    }
    let mut grid = Vec::new();
    for c in conditions {
        let rc = cfg.rollout_config(c)?;
        rc.validate()?;
        let backends = cfg.build_backends(&rc, scorer.clone())?;
        grid.push(GridCondition {
            name: c.name.clone(),
            config: rc,
            backends,
        });
    }
    let records = run_grid(&grid, &kept, cfg.parallelism)?;

    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut files = Vec::new();
    for c in conditions {
        let mine: Vec<LogRecord> = records
            .iter()
            .filter(|r| r.condition() == c.name)
            .cloned()
            .collect();
        let path = out.join(format!("{prefix}{}.jsonl", c.name));
        write_log(&path, &mine)?;
        files.push(path);
    }
    let failures = records
        .iter()
        .filter(|r| matches!(r, LogRecord::Failure(_)))
        .count();
    for r in &records {
        if let LogRecord::Failure(f) = r {
            log::error!(
                "{} / {} / repeat {}: {}",
                f.condition,
                f.seed_id,
                f.repeat,
                f.error
            );
        }
    }
    Ok((
        RunSummary {
            log_files: files,
            pairs: records.len() - failures,
            failures,
            seeds_dropped: dropped,
        },
        records,
    ))
}

/// Validates the config, runs every condition and writes one log per
/// condition into the output directory.
pub fn cmd_run(config: &Path, overrides: &Overrides) -> Result<RunSummary> {
    let cfg = load_config(config, overrides)?;
    run_conditions(&cfg, &cfg.conditions, "").map(|(s, _)| s)
}

fn report_options(cfg: Option<&ExperimentConfig>, tau_grid: Option<&[f64]>) -> ReportOptions {
    let mut o = ReportOptions::default();
    if let Some(c) = cfg {
        o.report_tau = c.report_tau;
        o.tau_grid = c.tau_grid.clone();
        o.rng_seed = c.rng_seed;
    }
    if let Some(g) = tau_grid {
        o.tau_grid = g.to_vec();
    }
    o
}

/// Computes the report from log files and writes `report.csv`, `report.md`
/// and `spg_sweep.csv` into `out_dir`.
pub fn cmd_metrics(
    logs: &[PathBuf],
    opts: &ReportOptions,
    out_dir: &Path,
) -> Result<MetricsReport> {
    let mut records = Vec::new();
    let mut empty = Vec::new();
    for p in logs {
        let recs = read_log(p)?;
        if recs.is_empty() {
            empty.push(
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
        }
        records.extend(recs);
    }
    let report = build_report(&records, &empty, opts)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    report.write_all(out_dir)?;
    Ok(report)
}

/// Builds report options from an optional config file and tau-grid override.
pub fn metrics_options(config: Option<&Path>, tau_grid: Option<&[f64]>) -> Result<ReportOptions> {
    let cfg = match config {
        Some(p) => Some(ExperimentConfig::load(p)?),
        None => None,
    };
    let o = report_options(cfg.as_ref(), tau_grid);
    let mut errs = Vec::new();
    for &t in o.tau_grid.iter().chain([o.report_tau].iter()) {
        if !(t > 0.0 && t <= 1.0) {
            errs.push(format!("threshold {t} is outside (0, 1]"));
        }
    }
    if errs.is_empty() {
        Ok(o)
    } else {
        Err(Error::Config(errs))
    }
}

/// Runs the base condition under every ablation preset, then writes the
/// logs, the full report and `ablation.csv`.
pub fn cmd_ablate(config: &Path, overrides: &Overrides) -> Result<(RunSummary, MetricsReport)> {
    let cfg = load_config(config, overrides)?;
    let conditions = cfg.ablation_conditions()?;
    let (summary, records) = run_conditions(&cfg, &conditions, "ablation_")?;
    let opts = report_options(Some(&cfg), None);
    let report = build_report(&records, &[], &opts)?;
    let out = cfg.out_dir();
    report.write_all(&out)?;
    let path = out.join("ablation.csv");
    std::fs::write(&path, report.ablation_csv()?).map_err(|e| Error::io(&path, e))?;
    Ok((summary, report))
}

/// Extracts preference pairs from logs and writes them to `out`.
pub fn cmd_export_dpo(logs: &[PathBuf], min_delta: f64, out: &Path) -> Result<usize> {
    if !(min_delta >= 0.0) {
        return Err(Error::config(format!(
            "min_delta must be non-negative, got {min_delta}"
        )));
    }
    let mut records = Vec::new();
    for p in logs {
        records.extend(read_log(p)?);
    }
    let pairs: Vec<&PairedRollout> = records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Pair(p) => Some(p),
            LogRecord::Failure(_) => None,
        })
        .collect();
    let prefs = extract_pairs(&pairs, min_delta)?;
    export_pairs(&prefs, out)?;
    Ok(prefs.len())
}

/// Scores the config's seed file and writes the retained posts to `out`.
pub fn cmd_seeds_filter(config: &Path, out: &Path, tau: Option<f64>) -> Result<(usize, usize)> {
    let cfg = ExperimentConfig::load(config)?;
    let seeds = load_seeds(cfg.seeds_file())?;
    let scorer = cfg.build_scorer()?;
    let kept = filter_seeds(&seeds, scorer.as_ref(), tau.unwrap_or(cfg.seed_tau))?;
    write_seeds(out, &kept)?;
    Ok((seeds.len(), kept.len()))
}

/// Serialized bytes of the records a run would write, for comparisons.
pub fn log_bytes(records: &[LogRecord]) -> Result<Vec<u8>> {
    to_jsonl(records)
}

/// Parses a comma-separated threshold list.
pub fn parse_tau_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad threshold `{t}`: {e}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_grid_parsing() {
        assert_eq!(parse_tau_grid("0.1, 0.5").unwrap(), [0.1, 0.5]);
        assert!(parse_tau_grid("0.1,x").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Error::config("x").exit_code(), EXIT_VALIDATION);
        assert_eq!(Error::Generation("x".into()).exit_code(), EXIT_RUNTIME);
    }
}
