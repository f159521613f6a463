//! Scalar information quantities and the closed-form coding bounds built
//! from them: divergences, `sI_{1−s}`, mutual information, dispersion, the
//! threshold-decoder exponent, the optimal threshold rate, compound design
//! rules and second-order bounds.

use serde::Serialize;

use crate::channels::{fd_step, ChannelPoint, FamilyKind, Law, OutputLaw};
use crate::error::{invalid, Error, Result};
use crate::numerics::{golden_section_max, log_sum_exp, normal_cdf, normal_quantile};

/// Default Gauss–Hermite nodes per output dimension.
pub const DEFAULT_RESOLUTION: usize = 64;
/// Tolerance (in `s`) of the golden-section searches.
pub const S_TOLERANCE: f64 = 1e-8;

fn divergence_nodes(p: &dyn OutputLaw, q: &dyn OutputLaw, resolution: usize) -> Result<Vec<(f64, f64)>> {
    if p.space() != q.space() {
        return invalid("divergence between laws on different spaces");
    }
    let mut out = Vec::new();
    for (y, w) in p.expectation_nodes(resolution) {
        let lq = q.log_density(&y);
        if lq == f64::NEG_INFINITY {
            return Err(Error::Divergent);
        }
        out.push((w, p.log_density(&y) - lq));
    }
    Ok(out)
}

/// `D(P‖Q)`; [`Error::Divergent`] when `Q` vanishes where `P` does not.
pub fn kl_divergence(p: &dyn OutputLaw, q: &dyn OutputLaw, resolution: usize) -> Result<f64> {
    let nodes = divergence_nodes(p, q, resolution)?;
    Ok(nodes.iter().map(|(w, l)| w * l).sum::<f64>().max(0.0))
}

/// `D_{1+s}(P‖Q) = (1/s) ln E_P[(P/Q)^s]` for `s > −1`, `s ≠ 0`.
pub fn renyi_divergence(p: &dyn OutputLaw, q: &dyn OutputLaw, s: f64, resolution: usize) -> Result<f64> {
    if !(s > -1.0) || s == 0.0 {
        return invalid(format!("Rényi order parameter must satisfy s > -1, s != 0, got {s}"));
    }
    let nodes = divergence_nodes(p, q, resolution)?;
    let terms: Vec<f64> = nodes.iter().map(|(w, l)| w.ln() + s * l).collect();
    let v = log_sum_exp(&terms) / s;
    if !v.is_finite() {
        return Err(Error::Divergent);
    }
    Ok(v)
}

/// Integration nodes for the quantities of a pair `(P, W_θ)`: points `y_i`
/// with reference-measure weights `ν_i` (`∫ f dy ≈ Σ ν_i f(y_i)`) and the
/// table `ln W_x(y_i)` for every input.
#[derive(Debug, Clone)]
pub struct ChannelTable {
    input_dist: Vec<f64>,
    log_nu: Vec<f64>,
    /// `log_w[i][x]`.
    log_w: Vec<Vec<f64>>,
}

impl ChannelTable {
    pub fn new(input_dist: &[f64], point: &ChannelPoint, resolution: usize) -> Result<Self> {
        let d = point.family().inputs();
        crate::numerics::check_distribution(input_dist, d)?;
        let mut log_nu = Vec::new();
        let mut log_w = Vec::new();
        match point.family().kind() {
            FamilyKind::Dmc { outputs, .. } => {
                let rows: Vec<Vec<f64>> = (0..d)
                    .map(|x| point.transition_row(x).expect("finite family"))
                    .collect();
                for y in 0..*outputs {
                    log_nu.push(0.0);
                    log_w.push(rows.iter().map(|r| r[y].ln()).collect());
                }
            }
            _ => {
                let laws: Vec<Law> = (0..d).map(|x| point.conditional(x)).collect();
                for (x, law) in laws.iter().enumerate() {
                    if input_dist[x] == 0.0 {
                        continue;
                    }
                    for (y, w) in law.expectation_nodes(resolution) {
                        let row: Vec<f64> = laws.iter().map(|l| l.log_density(&y)).collect();
                        let mix = log_sum_exp(
                            &row.iter().zip(input_dist).map(|(l, p)| l + p.ln()).collect::<Vec<_>>(),
                        );
                        log_nu.push(input_dist[x].ln() + w.ln() - mix);
                        log_w.push(row);
                    }
                }
            }
        }
        Ok(Self {
            input_dist: input_dist.to_vec(),
            log_nu,
            log_w,
        })
    }

    /// Log-density of `W·P` at node `i`.
    fn log_mix(&self, i: usize) -> f64 {
        let t: Vec<f64> = self.log_w[i]
            .iter()
            .zip(&self.input_dist)
            .map(|(l, p)| l + p.ln())
            .collect();
        log_sum_exp(&t)
    }

    /// `sI_{1−s}(P, W)` for `s ∈ [0, 1]`.
    pub fn s_info(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        if s == 1.0 {
            let best = (0..self.log_w.len())
                .map(|i| {
                    self.log_w[i]
                        .iter()
                        .zip(&self.input_dist)
                        .filter(|(l, _)| **l > f64::NEG_INFINITY)
                        .map(|(_, p)| p)
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            return -best.ln();
        }
        let t = 1.0 - s;
        let terms: Vec<f64> = (0..self.log_w.len())
            .map(|i| {
                let inner: Vec<f64> = self.log_w[i]
                    .iter()
                    .zip(&self.input_dist)
                    .map(|(l, p)| p.ln() + t * l)
                    .collect();
                self.log_nu[i] + log_sum_exp(&inner) / t
            })
            .collect();
        -t * log_sum_exp(&terms)
    }

    fn information_density_moments(&self) -> (f64, f64) {
        let mut first = 0.0;
        let mut second = 0.0;
        for i in 0..self.log_w.len() {
            let mix = self.log_mix(i);
            let nu = self.log_nu[i].exp();
            for (l, p) in self.log_w[i].iter().zip(&self.input_dist) {
                if *p == 0.0 || *l == f64::NEG_INFINITY {
                    continue;
                }
                let weight = nu * p * l.exp();
                let density = l - mix;
                first += weight * density;
                second += weight * density * density;
            }
        }
        (first, second)
    }

    pub fn mutual_information(&self) -> f64 {
        self.information_density_moments().0.max(0.0)
    }

    pub fn dispersion(&self) -> f64 {
        let (i, _) = self.information_density_moments();
        // Centre explicitly rather than via E[ι²] − I² to limit cancellation.
        let mut v = 0.0;
        for k in 0..self.log_w.len() {
            let mix = self.log_mix(k);
            let nu = self.log_nu[k].exp();
            for (l, p) in self.log_w[k].iter().zip(&self.input_dist) {
                if *p == 0.0 || *l == f64::NEG_INFINITY {
                    continue;
                }
                let c = l - mix - i;
                v += nu * p * l.exp() * c * c;
            }
        }
        v.max(0.0)
    }

    /// `max_{s∈[0,1]} (sI_{1−s} − s·slope)/(1 + curvature·s)` and its argmax;
    /// concavity of the numerator makes the ratio unimodal for the
    /// curvatures used here (0 and ±1).
    fn maximise(&self, slope: f64, denominator: impl Fn(f64) -> f64) -> (f64, f64) {
        let (s, v) = golden_section_max(
            |s| (self.s_info(s) - s * slope) / denominator(s),
            0.0,
            1.0,
            S_TOLERANCE,
        );
        if v <= 0.0 {
            (0.0, 0.0)
        } else {
            (s, v)
        }
    }
}

pub fn gallager_s_info(input_dist: &[f64], point: &ChannelPoint, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return invalid(format!("s must lie in [0, 1], got {s}"));
    }
    let v = ChannelTable::new(input_dist, point, DEFAULT_RESOLUTION)?.s_info(s);
    if !v.is_finite() {
        return Err(Error::Numerical(format!("sI_(1-s) not finite at s={s}")));
    }
    Ok(v)
}

pub fn mutual_information(input_dist: &[f64], point: &ChannelPoint) -> Result<f64> {
    Ok(ChannelTable::new(input_dist, point, DEFAULT_RESOLUTION)?.mutual_information())
}

pub fn dispersion(input_dist: &[f64], point: &ChannelPoint) -> Result<f64> {
    Ok(ChannelTable::new(input_dist, point, DEFAULT_RESOLUTION)?.dispersion())
}

/// Encoder rate `R` and decoder threshold rate `R₁` (nats per symbol).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateParameters {
    pub rate: f64,
    pub threshold_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaRow {
    pub theta: Vec<f64>,
    pub value: f64,
    pub s_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentReport {
    /// `min(max_s(sI_{1−s} − sR₁), R₁ − R)`, worst case over the points.
    pub bound: f64,
    pub s_star: f64,
    pub threshold_rate: f64,
    pub per_theta: Vec<ThetaRow>,
}

/// Exponent guaranteed by the threshold decoder at each channel of `points`
/// (the reported bound is the worst case).
pub fn exponent_lower_bound(
    input_dist: &[f64],
    points: &[ChannelPoint],
    rates: RateParameters,
) -> Result<ExponentReport> {
    if points.is_empty() {
        return invalid("need at least one channel point");
    }
    let RateParameters { rate, threshold_rate } = rates;
    if !(threshold_rate > rate) {
        return invalid(format!(
            "the exponent bound requires R1 > R (got R={rate}, R1={threshold_rate})"
        ));
    }
    let mut rows = Vec::new();
    for p in points {
        let table = ChannelTable::new(input_dist, p, DEFAULT_RESOLUTION)?;
        let (s, inner) = table.maximise(threshold_rate, |_| 1.0);
        rows.push(ThetaRow {
            theta: p.theta().to_vec(),
            value: inner.min(threshold_rate - rate).max(0.0),
            s_star: s,
        });
    }
    let worst = rows
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("non-empty");
    Ok(ExponentReport {
        bound: worst.value,
        s_star: worst.s_star,
        threshold_rate,
        per_theta: rows.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalThreshold {
    pub threshold_rate: f64,
    /// `inf_θ max_s (sI_{1−s} − sR)/(1+s)`.
    pub bound: f64,
    pub s_star: f64,
    pub per_theta: Vec<ThetaRow>,
}

/// The threshold rate `R₁ = R + inf_θ max_s (sI_{1−s} − sR)/(1+s)` that
/// maximises the worst-case exponent, together with that exponent.
pub fn optimal_r1(input_dist: &[f64], points: &[ChannelPoint], rate: f64) -> Result<OptimalThreshold> {
    if points.is_empty() {
        return invalid("need at least one channel point");
    }
    let mut rows = Vec::new();
    for p in points {
        let table = ChannelTable::new(input_dist, p, DEFAULT_RESOLUTION)?;
        let (s, v) = table.maximise(rate, |s| 1.0 + s);
        rows.push(ThetaRow {
            theta: p.theta().to_vec(),
            value: v,
            s_star: s,
        });
    }
    let worst = rows
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("non-empty")
        .clone();
    Ok(OptimalThreshold {
        threshold_rate: rate + worst.value,
        bound: worst.value,
        s_star: worst.s_star,
        per_theta: rows,
    })
}

/// Gallager's random-coding exponent `max_s (sI_{1−s} − sR)/(1 − s)`, a
/// comparison line only (it is not achieved by the threshold decoder).
pub fn gallager_exponent(input_dist: &[f64], point: &ChannelPoint, rate: f64) -> Result<f64> {
    let table = ChannelTable::new(input_dist, point, DEFAULT_RESOLUTION)?;
    let (_, v) = golden_section_max(
        |s| {
            let v = (table.s_info(s) - s * rate) / (1.0 - s);
            if v.is_nan() { f64::NEG_INFINITY } else { v }
        },
        0.0,
        1.0 - 1e-9,
        S_TOLERANCE,
    );
    Ok(v.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DesignMethod {
    M1,
    M2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompoundDesign {
    pub method: DesignMethod,
    pub input_dist: Vec<f64>,
    pub threshold_rate: f64,
    /// Worst-case exponent guaranteed over the grid.
    pub bound: f64,
    /// Per candidate: the criterion it was ranked by.
    pub candidate_scores: Vec<f64>,
}

/// Chooses the input distribution and threshold for a compound channel
/// given by a finite grid of points.
///
/// M1 maximises `inf_θ I(P, W_θ)` and puts `R₁` at the midpoint of
/// `(R, inf_θ I)`; M2 maximises `inf_θ max_s (sI_{1−s} − sR)/(1+s)`.
pub fn compound_design(
    points: &[ChannelPoint],
    rate: f64,
    method: DesignMethod,
    candidates: &[Vec<f64>],
) -> Result<CompoundDesign> {
    if points.is_empty() || candidates.is_empty() {
        return invalid("compound design needs a non-empty grid and candidate list");
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for p in candidates {
        let score = match method {
            DesignMethod::M1 => {
                let mut worst = f64::INFINITY;
                for pt in points {
                    worst = worst.min(mutual_information(p, pt)?);
                }
                worst
            }
            DesignMethod::M2 => optimal_r1(p, points, rate)?.bound,
        };
        scores.push(score);
    }
    // First maximiser wins ties, keeping the choice deterministic.
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
    let p = candidates[best].clone();
    let (threshold_rate, bound) = match method {
        DesignMethod::M1 => {
            let inf_i = scores[best];
            if !(inf_i > rate) {
                return Err(Error::NoPositiveBound);
            }
            let r1 = 0.5 * (rate + inf_i);
            let report = exponent_lower_bound(
                &p,
                points,
                RateParameters {
                    rate,
                    threshold_rate: r1,
                },
            )?;
            (r1, report.bound)
        }
        DesignMethod::M2 => {
            if !(scores[best] > 0.0) {
                return Err(Error::NoPositiveBound);
            }
            (rate + scores[best], scores[best])
        }
    };
    Ok(CompoundDesign {
        method,
        input_dist: p,
        threshold_rate,
        bound,
        candidate_scores: scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondOrderReport {
    pub mutual_information: f64,
    pub dispersion: f64,
    pub first_order_rate: f64,
    pub second_order_rate: f64,
    /// Local first-order shift `f(θ₂)` when a perturbation was given.
    pub shift: Option<f64>,
    /// Limiting error bound.
    pub epsilon: f64,
}

/// Tolerance for declaring `I(P, W_θ) = R₁*`.
pub const FIRST_ORDER_MATCH_TOL: f64 = 1e-6;

/// The limiting error bound for a code of size `e^{nR₁* + √n R₂* − n^{1/4}}`:
/// 0 when `I > R₁*`, `Φ((R₂* − f)/√V)` when `I = R₁*`, and the trivial
/// bound 1 when `I < R₁*`.
pub fn second_order_bound(
    input_dist: &[f64],
    point: &ChannelPoint,
    first_order_rate: f64,
    second_order_rate: f64,
    shift: Option<f64>,
) -> Result<SecondOrderReport> {
    let table = ChannelTable::new(input_dist, point, DEFAULT_RESOLUTION)?;
    let i = table.mutual_information();
    let v = table.dispersion();
    let epsilon = if i > first_order_rate + FIRST_ORDER_MATCH_TOL {
        0.0
    } else if i < first_order_rate - FIRST_ORDER_MATCH_TOL {
        1.0
    } else {
        if !(v > 0.0) {
            return Err(Error::NonPositiveDispersion(v));
        }
        normal_cdf((second_order_rate - shift.unwrap_or(0.0)) / v.sqrt())
    };
    Ok(SecondOrderReport {
        mutual_information: i,
        dispersion: v,
        first_order_rate,
        second_order_rate,
        shift,
        epsilon,
    })
}

/// Inverse of the Gaussian branch: `R₂* = f + √V Φ⁻¹(ε)`.
pub fn second_order_rate_for(dispersion: f64, epsilon: f64, shift: f64) -> Result<f64> {
    if !(dispersion > 0.0) {
        return Err(Error::NonPositiveDispersion(dispersion));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("target error must lie in (0, 1), got {epsilon}"));
    }
    Ok(shift + dispersion.sqrt() * normal_quantile(epsilon))
}

/// `∇_θ I(P, W_θ)` at `point` by central differences.
pub fn information_gradient(input_dist: &[f64], point: &ChannelPoint) -> Result<Vec<f64>> {
    let k = point.theta().len();
    point.check_interior(&(0..k).collect::<Vec<_>>())?;
    let family = point.family();
    let mut grad = Vec::with_capacity(k);
    for i in 0..k {
        let h = fd_step(point.theta()[i]);
        let mut up = point.theta().to_vec();
        let mut dn = up.clone();
        up[i] += h;
        dn[i] -= h;
        let iu = mutual_information(input_dist, &family.point(up)?)?;
        let id = mutual_information(input_dist, &family.point(dn)?)?;
        grad.push((iu - id) / (2.0 * h));
    }
    Ok(grad)
}

/// `f(θ₂) = ∇_θ I(P, W_θ)|_{θ₁} · θ₂`.
pub fn local_shift(input_dist: &[f64], theta1: &ChannelPoint, theta2: &[f64]) -> Result<f64> {
    if theta2.len() != theta1.theta().len() {
        return invalid("perturbation dimension mismatch");
    }
    let g = information_gradient(input_dist, theta1)?;
    Ok(g.iter().zip(theta2).map(|(a, b)| a * b).sum())
}
