//! Small numerical toolkit shared by the information measures, the mixtures
//! and the simulator: log-space summation, quadrature rules, a log-space
//! adaptive Gauss–Kronrod integrator, golden-section search and a few
//! statistics helpers.

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use gauss_quad::{GaussHermite, GaussLegendre};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// `log Σ exp(v)` with the usual max shift. Empty input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogAccumulator {
    max: f64,
    scaled: f64,
}

impl Default for LogAccumulator {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }
}

impl LogAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, log_value: f64) {
        if log_value == f64::NEG_INFINITY {
            return;
        }
        if log_value <= self.max {
            self.scaled += (log_value - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - log_value).exp() + 1.0;
            self.max = log_value;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `ln Γ(x)`.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// `ln k!`.
pub fn ln_factorial(k: usize) -> f64 {
    statrs::function::factorial::ln_factorial(k as u64)
}

/// Gauss–Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(nodes: usize, a: f64, b: f64) -> Result<Vec<(f64, f64)>> {
    let rule = GaussLegendre::new(nodes)
        .map_err(|_| Error::InvalidArgument(format!("Gauss-Legendre rule needs >= 2 nodes, got {nodes}")))?;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Ok(rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect())
}

/// Gauss–Hermite rule rescaled so that `Σ w f(z) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
pub fn gauss_hermite_standard_normal(nodes: usize) -> Result<Vec<(f64, f64)>> {
    let rule = GaussHermite::new(nodes)
        .map_err(|_| Error::InvalidArgument(format!("Gauss-Hermite rule needs >= 2 nodes, got {nodes}")))?;
    let norm = PI.sqrt();
    Ok(rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (x * std::f64::consts::SQRT_2, w / norm))
        .collect())
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the odd-indexed Kronrod nodes 1, 3, 5, 7.
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    log_value: f64,
    log_error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.log_error == other.log_error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.log_error.total_cmp(&other.log_error)
    }
}

fn kronrod_panel(log_f: &impl Fn(f64) -> f64, a: f64, b: f64) -> Panel {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut values = [0.0f64; 15];
    for (i, &x) in GK_NODES.iter().enumerate() {
        if i == 7 {
            values[7] = log_f(mid);
        } else {
            values[i] = log_f(mid - half * x);
            values[14 - i] = log_f(mid + half * x);
        }
    }
    let shift = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Panel {
            a,
            b,
            log_value: f64::NEG_INFINITY,
            log_error: f64::NEG_INFINITY,
        };
    }
    let e = |i: usize| (values[i] - shift).exp();
    let mut kronrod = GK_WEIGHTS[7] * e(7);
    let mut gauss = G_WEIGHTS[3] * e(7);
    for i in 0..7 {
        let pair = e(i) + e(14 - i);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += G_WEIGHTS[i / 2] * pair;
        }
    }
    let log_value = shift + (kronrod * half).ln();
    let rel = ((kronrod - gauss).abs() / kronrod).max(1e-16);
    Panel {
        a,
        b,
        log_value,
        log_error: log_value + rel.ln(),
    }
}

/// `ln ∫_a^b exp(log_f(x)) dx` by adaptive Gauss–Kronrod (7/15) carried out
/// panel-by-panel in log space, so integrands far below `f64::MIN_POSITIVE`
/// are handled. `breakpoints` inside `(a, b)` seed the initial partition
/// (kinks, modes).
pub fn log_integrate(
    log_f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    rel_tol: f64,
) -> Result<f64> {
    if !(a < b) {
        return Err(Error::InvalidArgument(format!("empty interval [{a}, {b}]")));
    }
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&c| c > a && c < b)
        .collect();
    cuts.push(a);
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    // Pre-split each piece so narrow peaks are not missed by the first pass.
    let mut heap = BinaryHeap::new();
    for w in cuts.windows(2) {
        let pieces = 8;
        let step = (w[1] - w[0]) / pieces as f64;
        for j in 0..pieces {
            let lo = w[0] + step * j as f64;
            let hi = if j + 1 == pieces { w[1] } else { lo + step };
            heap.push(kronrod_panel(&log_f, lo, hi));
        }
    }
    let log_tol = rel_tol.ln();
    for _ in 0..20_000 {
        let total = log_sum_exp(&heap.iter().map(|p| p.log_value).collect::<Vec<_>>());
        if total == f64::NEG_INFINITY {
            return Ok(total);
        }
        let err = log_sum_exp(&heap.iter().map(|p| p.log_error).collect::<Vec<_>>());
        if err - total < log_tol {
            return Ok(total);
        }
        let worst = heap.pop().expect("non-empty panel heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(Panel {
                log_error: f64::NEG_INFINITY,
                ..worst
            });
            continue;
        }
        heap.push(kronrod_panel(&log_f, worst.a, mid));
        heap.push(kronrod_panel(&log_f, mid, worst.b));
    }
    Err(Error::Numerical(
        "adaptive quadrature did not reach the requested tolerance".into(),
    ))
}

/// Maximise a unimodal function on `[a, b]` by golden-section search.
/// Endpoints are compared too, so monotone functions return the right end.
pub fn golden_section_max(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let mid = 0.5 * (lo + hi);
    let mut best = (mid, f(mid));
    for x in [a, b] {
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    wilson_interval_for_mean(successes as f64 / trials as f64, trials, z)
}

/// Wilson interval around a sample mean of `[0, 1]`-valued draws. Their
/// variance is at most `p(1 − p)`, so this is conservative for
/// Rao–Blackwellised (fractional) error indicators.
pub fn wilson_interval_for_mean(p: f64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = p.clamp(0.0, 1.0);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// Ordinary least-squares line `y = intercept + slope * x` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "least squares needs at least two paired points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("least squares needs distinct x values".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_se, intercept_se) = if xs.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        let sigma2 = rss / (n - 2.0);
        let slope_se = (sigma2 / sxx).sqrt();
        let intercept_se = (sigma2 * (1.0 / n + mx * mx / sxx)).sqrt();
        (slope_se, intercept_se)
    } else {
        (0.0, 0.0)
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
    })
}

/// Entropy `H(P)` in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Checks that `p` is a probability vector (nonnegative, sums to one).
pub fn check_distribution(p: &[f64], len: usize) -> Result<()> {
    if p.len() != len {
        return Err(Error::InvalidArgument(format!(
            "distribution has {} entries, expected {len}",
            p.len()
        )));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("distribution {p:?} has invalid entries")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "distribution {p:?} sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// Splitmix64 finaliser, used to derive independent per-trial seeds.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trial `trial` of the experiment at blocklength `n`.
pub fn trial_seed(master: u64, n: usize, trial: u64) -> u64 {
    mix_seed(mix_seed(mix_seed(master) ^ n as u64) ^ trial)
}
