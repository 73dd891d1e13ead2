//! Statistical kernels: exact means, nearest-rank quantiles, Wilcoxon
//! signed-rank test and percentile bootstrap.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Largest sample size handled by exact enumeration.
pub const EXACT_MAX_N: usize = 25;
pub const DEFAULT_BOOTSTRAP_B: usize = 10_000;

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite value")
}

/// Mean computed in exact rational arithmetic and rounded once, so that e.g.
/// the mean of three copies of 0.4 is exactly 0.4.
pub fn exact_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let sum = values
        .iter()
        .fold(BigRational::zero(), |acc, &v| acc + rational(v));
    (sum / BigRational::from_integer(BigInt::from(values.len()))).to_f64()
}

/// `exact_mean(a) - exact_mean(b)` with a single rounding.
pub fn exact_mean_diff(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mean = |vs: &[f64]| {
        vs.iter()
            .fold(BigRational::zero(), |acc, &v| acc + rational(v))
            / BigRational::from_integer(BigInt::from(vs.len()))
    };
    (mean(a) - mean(b)).to_f64()
}

/// Sample standard error of the mean; `None` below two samples.
pub fn stderr(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let m = exact_mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt())
}

/// Nearest-rank percentile: the element at 1-based rank `ceil(pct/100 * n)`
/// of the ascending sort.
pub fn nearest_rank(values: &[f64], pct: u32) -> Option<f64> {
    if values.is_empty() || pct == 0 || pct > 100 {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = (pct as usize * n).div_ceil(100).max(1);
    Some(v[rank - 1])
}

pub fn p95(values: &[f64]) -> Option<f64> {
    nearest_rank(values, 95)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// No non-zero differences.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p: f64,
    /// Sample size after dropping zeros.
    pub n: usize,
    pub w_plus: f64,
    pub method: WilcoxonMethod,
}

/// Average ranks of `|d|`, doubled so ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let n = abs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged, times two.
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test. Zeros are dropped and ties get average ranks.
/// Exact null distribution for n <= 25, normal approximation with continuity
/// and tie corrections beyond.
pub fn wilcoxon_signed_rank(deltas: &[f64], alternative: Alternative) -> WilcoxonResult {
    let nz: Vec<f64> = deltas.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return WilcoxonResult {
            p: 1.0,
            n: 0,
            w_plus: 0.0,
            method: WilcoxonMethod::Degenerate,
        };
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let w_plus = w2 as f64 / 2.0;

    if n <= EXACT_MAX_N {
        let total: u64 = ranks.iter().sum();
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] > 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = (1u64 << n) as f64;
        let upper: u64 = counts[w2 as usize..].iter().sum();
        let lower: u64 = counts[..=w2 as usize].iter().sum();
        let pg = upper as f64 / all;
        let pl = lower as f64 / all;
        let p = match alternative {
            Alternative::Greater => pg,
            Alternative::Less => pl,
            Alternative::TwoSided => (2.0 * pg.min(pl)).min(1.0),
        };
        return WilcoxonResult {
            p,
            n,
            w_plus,
            method: WilcoxonMethod::Exact,
        };
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let sd = var.sqrt();
        let normal = Normal::standard();
        match alternative {
            Alternative::Greater => normal.sf((w_plus - mean - 0.5) / sd),
            Alternative::Less => normal.cdf((w_plus - mean + 0.5) / sd),
            Alternative::TwoSided => {
                let z = ((w_plus - mean).abs() - 0.5).max(0.0) / sd;
                (2.0 * normal.sf(z)).min(1.0)
            }
        }
    };
    WilcoxonResult {
        p,
        n,
        w_plus,
        method: WilcoxonMethod::Normal,
    }
}

/// Percentile bootstrap CI of the mean. Bounds are nearest-rank order
/// statistics of `b` resampled means; deterministic given `rng_seed`.
pub fn bootstrap_ci(samples: &[f64], b: usize, level: f64, rng_seed: u64) -> Option<(f64, f64)> {
    if samples.is_empty() || b == 0 || !(0.0 < level && level < 1.0) {
        return None;
    }
    let n = samples.len();
    let lo_val = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_val = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut means = Vec::with_capacity(b);
    for _ in 0..b {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += samples[rng.random_range(0..n)];
        }
        means.push((sum / n as f64).clamp(lo_val, hi_val));
    }
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    // Small epsilon keeps e.g. 0.025 * 10000 from rounding up past 250.
    let rank = |q: f64| ((q * b as f64 - 1e-9).ceil() as usize).clamp(1, b);
    Some((means[rank(tail) - 1], means[rank(1.0 - tail) - 1]))
}
