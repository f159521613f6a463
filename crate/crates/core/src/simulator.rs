//! The universal code `Φ_n`: a constant-composition codebook with the
//! first-match threshold decoder
//! `decode(yⁿ) = min{i : ln Q_{E(i)}(yⁿ) − ln Q_P(yⁿ) ≥ nR₁}`,
//! error estimation (exact enumeration, Monte Carlo, and a random-coding
//! ensemble mode for astronomically large codebooks), exponent fits and
//! second-order experiments.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channels::{ChannelFamily, ChannelPoint, Output};
use crate::combinatorics::{
    build_codebook, build_codebook_with_messages, log_multinomial, round_to_type, Codebook,
    CompositionType,
};
use crate::error::{invalid, Error, Result};
use crate::infomeasures::{
    local_shift, mutual_information, optimal_r1, second_order_bound, RateParameters,
    FIRST_ORDER_MATCH_TOL,
};
use crate::mixtures::{sample_counts, CodewordMixture, MixtureModel, MixtureTarget, PriorSpec};
use crate::numerics::{least_squares, log_sum_exp, trial_seed, wilson_interval_for_mean, LinearFit};

/// Largest `|𝒴|ⁿ` for exact enumeration of an explicit code.
pub const EXACT_OUTPUT_CAP: f64 = 1e6;
/// Largest number of joint-count tables enumerated by the ensemble.
pub const ENSEMBLE_TABLE_CAP: f64 = 2e6;
/// Explicit codebooks are used up to this many messages in `Auto` mode.
pub const AUTO_EXPLICIT_MESSAGES: f64 = 4096.0;
const Z95: f64 = 1.959963984540054;

/// Outcome of the threshold decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Decision {
    Message(usize),
    Erasure,
}

/// `ln M_n` for `M_n = max(2, ⌊e^{x}⌋)`, kept in the log domain when the
/// count overflows a float.
pub fn log_message_count(exponent: f64) -> f64 {
    if exponent < 700.0 {
        exponent.exp().floor().max(2.0).ln()
    } else {
        exponent
    }
}

/// An explicit universal code: codebook, block mixtures `Q_{x^n}` (shared
/// by all codewords of the composition), output mixture `Q_P` and `R₁`.
#[derive(Debug, Clone)]
pub struct UniversalCode {
    family: Arc<ChannelFamily>,
    codebook: Codebook,
    mixture: CodewordMixture,
    output: MixtureModel,
    threshold_rate: f64,
}

/// Draws a codebook for `composition` at `rates.rate` and attaches the
/// decoder with threshold `rates.threshold_rate`.
pub fn assemble_code(
    family: &Arc<ChannelFamily>,
    composition: &CompositionType,
    rates: RateParameters,
    priors: &PriorSpec,
    rng: &mut impl Rng,
    verify_packing: bool,
) -> Result<UniversalCode> {
    let book = build_codebook(composition, rates.rate, rng, verify_packing)?;
    UniversalCode::new(Arc::clone(family), book, rates.threshold_rate, priors)
}

impl UniversalCode {
    pub fn new(
        family: Arc<ChannelFamily>,
        codebook: Codebook,
        threshold_rate: f64,
        priors: &PriorSpec,
    ) -> Result<Self> {
        if threshold_rate.is_nan() {
            return invalid("threshold rate is NaN");
        }
        let composition = codebook.composition().clone();
        let mixture = CodewordMixture::new(Arc::clone(&family), &priors.per_input, &composition)?;
        let output = MixtureModel::new(
            Arc::clone(&family),
            priors.output.clone(),
            MixtureTarget::Output(composition.distribution()),
            composition.n(),
        )?;
        Ok(Self {
            family,
            codebook,
            mixture,
            output,
            threshold_rate,
        })
    }

    /// The same code with another threshold rate.
    pub fn with_threshold(&self, threshold_rate: f64) -> Self {
        Self {
            threshold_rate,
            ..self.clone()
        }
    }

    pub fn family(&self) -> &Arc<ChannelFamily> {
        &self.family
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn n(&self) -> usize {
        self.codebook.n()
    }

    pub fn messages(&self) -> usize {
        self.codebook.messages()
    }

    pub fn threshold_rate(&self) -> f64 {
        self.threshold_rate
    }

    pub fn codeword_mixture(&self) -> &CodewordMixture {
        &self.mixture
    }

    pub fn output_mixture(&self) -> &MixtureModel {
        &self.output
    }

    /// `ln Q_{E(i)}(yⁿ) − ln Q_P(yⁿ)` for every message.
    pub fn scores(&self, ys: &[Output]) -> Vec<f64> {
        let q_p = self.output.log_density(ys);
        let m1 = self.family.output_space().cardinality();
        self.codebook
            .codewords()
            .iter()
            .map(|word| {
                let q = match m1 {
                    Some(m1) => {
                        let mut joint = vec![vec![0usize; m1]; self.family.inputs()];
                        for (&x, y) in word.iter().zip(ys) {
                            match y {
                                Output::Symbol(s) if *s < m1 => joint[x][*s] += 1,
                                _ => return f64::NEG_INFINITY,
                            }
                        }
                        self.mixture
                            .log_density_joint_counts(&joint)
                            .unwrap_or(f64::NEG_INFINITY)
                    }
                    None => self.mixture.log_density(word, ys),
                };
                q - q_p
            })
            .collect()
    }

    /// Messages whose acceptance set `D̂_{E(i)}` contains `yⁿ`.
    pub fn accepting(&self, ys: &[Output]) -> Vec<usize> {
        let level = self.n() as f64 * self.threshold_rate;
        self.scores(ys)
            .iter()
            .enumerate()
            .filter(|(_, s)| **s >= level)
            .map(|(i, _)| i)
            .collect()
    }
}

/// First-match decoding; depends only on the code and the outputs.
pub fn decode(code: &UniversalCode, ys: &[Output]) -> Decision {
    if ys.len() != code.n() || code.threshold_rate == f64::INFINITY {
        return Decision::Erasure;
    }
    let level = code.n() as f64 * code.threshold_rate;
    let q_p = code.output.log_density(ys);
    let m1 = code.family.output_space().cardinality();
    let mut joint = m1.map(|m1| vec![vec![0usize; m1]; code.family.inputs()]);
    for (i, word) in code.codebook.codewords().iter().enumerate() {
        let q = match joint.as_mut() {
            Some(joint) => {
                let m1 = joint[0].len();
                joint.iter_mut().for_each(|r| r.fill(0));
                let mut ok = true;
                for (&x, y) in word.iter().zip(ys) {
                    match y {
                        Output::Symbol(s) if *s < m1 => joint[x][*s] += 1,
                        _ => ok = false,
                    }
                }
                if !ok {
                    return Decision::Erasure;
                }
                code.mixture.log_density_joint_counts(joint).unwrap_or(f64::NEG_INFINITY)
            }
            None => code.mixture.log_density(word, ys),
        };
        if q - q_p >= level {
            return Decision::Message(i);
        }
    }
    Decision::Erasure
}

/// Maximum-likelihood decoding with the true channel (comparison line):
/// `argmax_i ln W_{θ,E(i)}ⁿ(yⁿ)`, ties to the lowest index.
pub fn ml_decode_baseline(code: &UniversalCode, point: &ChannelPoint, ys: &[Output]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, word) in code.codebook.codewords().iter().enumerate() {
        let l = point.sequence_log_density(word, ys);
        if l > best.1 {
            best = (i, l);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ErrorMode {
    Exact,
    MonteCarlo { trials: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EstimateKind {
    Exact,
    MonteCarlo,
}

/// An estimate of `e_θ(Φ_n)` (erasures count as errors).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorEstimate {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Zero for exact evaluations.
    pub trials: u64,
    pub kind: EstimateKind,
    /// Probability (or frequency) of an erasure; explicit codes only.
    pub erasure: Option<f64>,
}

impl ErrorEstimate {
    fn exact(value: f64, erasure: Option<f64>) -> Self {
        let v = value.clamp(0.0, 1.0);
        Self {
            estimate: v,
            ci_low: v,
            ci_high: v,
            trials: 0,
            kind: EstimateKind::Exact,
            erasure,
        }
    }

    fn monte_carlo(mean: f64, trials: usize, erasure: Option<f64>) -> Self {
        let (lo, hi) = wilson_interval_for_mean(mean, trials as u64, Z95);
        Self {
            estimate: mean.clamp(0.0, 1.0),
            ci_low: lo,
            ci_high: hi,
            trials: trials as u64,
            kind: EstimateKind::MonteCarlo,
            erasure,
        }
    }

    /// The estimate with zero replaced by `1/(trials + 1)` (for log fits).
    pub fn floored(&self) -> (f64, bool) {
        if self.estimate > 0.0 {
            (self.estimate, false)
        } else {
            (1.0 / (self.trials as f64 + 1.0), true)
        }
    }
}

fn all_outputs(m1: usize, n: usize) -> Vec<Vec<Output>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * m1);
        for p in &out {
            for y in 0..m1 {
                let mut q = p.clone();
                q.push(Output::Symbol(y));
                next.push(q);
            }
        }
        out = next;
    }
    out
}

fn exact_space(code: &UniversalCode) -> Result<usize> {
    let m1 = code.family.output_space().cardinality().ok_or_else(|| {
        Error::Unsupported("exact error evaluation needs a finite output space".into())
    })?;
    let size = (m1 as f64).powi(code.n() as i32);
    if size > EXACT_OUTPUT_CAP {
        return Err(Error::CapExceeded {
            what: "output sequences for exact error evaluation",
            count: size,
            cap: EXACT_OUTPUT_CAP,
        });
    }
    Ok(m1)
}

/// Exact mass of every decoding region `D_i` and of the erasure set when
/// `word` is sent over the DMC with transition matrix `rows` (any matrix,
/// zeros allowed).
pub fn decision_masses(code: &UniversalCode, rows: &[Vec<f64>], word: &[usize]) -> Result<(Vec<f64>, f64)> {
    let m1 = exact_space(code)?;
    let mut masses = vec![0.0; code.messages()];
    let mut erasure = 0.0;
    for ys in all_outputs(m1, code.n()) {
        let p: f64 = word.iter().zip(&ys).map(|(&x, y)| rows[x][symbol(y)]).product();
        if p == 0.0 {
            continue;
        }
        match decode(code, &ys) {
            Decision::Message(i) => masses[i] += p,
            Decision::Erasure => erasure += p,
        }
    }
    Ok((masses, erasure))
}

fn symbol(y: &Output) -> usize {
    match y {
        Output::Symbol(s) => *s,
        _ => unreachable!("finite outputs"),
    }
}

/// Exact `e(Φ_n)` over the DMC with transition matrix `rows`.
pub fn exact_error_for_rows(code: &UniversalCode, rows: &[Vec<f64>]) -> Result<ErrorEstimate> {
    let m1 = exact_space(code)?;
    let m = code.messages() as f64;
    let mut correct = 0.0;
    let mut erasure = 0.0;
    for ys in all_outputs(m1, code.n()) {
        let d = decode(code, &ys);
        let mut total = 0.0;
        for (i, word) in code.codebook.codewords().iter().enumerate() {
            let p: f64 = word.iter().zip(&ys).map(|(&x, y)| rows[x][symbol(y)]).product();
            total += p;
            if d == Decision::Message(i) {
                correct += p;
            }
        }
        if d == Decision::Erasure {
            erasure += total;
        }
    }
    Ok(ErrorEstimate::exact(1.0 - correct / m, Some(erasure / m)))
}

/// `e_θ(Φ_n)` for an explicit code, exactly (finite `𝒴`, `|𝒴|ⁿ ≤ 10⁶`) or
/// by Monte Carlo over a uniformly random message.
pub fn estimate_error(code: &UniversalCode, point: &ChannelPoint, mode: ErrorMode) -> Result<ErrorEstimate> {
    if code.messages() == 1 {
        return Ok(match mode {
            ErrorMode::Exact => ErrorEstimate::exact(0.0, None),
            ErrorMode::MonteCarlo { trials, .. } => ErrorEstimate::monte_carlo(0.0, trials, None),
        });
    }
    match mode {
        ErrorMode::Exact => {
            let rows: Vec<Vec<f64>> = (0..code.family.inputs())
                .map(|x| point.transition_row(x))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Unsupported("exact error evaluation needs a DMC".into()))?;
            exact_error_for_rows(code, &rows)
        }
        ErrorMode::MonteCarlo { trials, seed } => {
            if trials == 0 {
                return invalid("Monte Carlo needs at least one trial");
            }
            let n = code.n();
            let outcomes: Vec<(bool, bool)> = (0..trials as u64)
                .into_par_iter()
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, n, t));
                    let i = rng.random_range(0..code.messages());
                    let ys: Vec<Output> = code.codebook.codeword(i).iter().map(|&x| point.sample_output(x, &mut rng)).collect();
                    let d = decode(code, &ys);
                    (d != Decision::Message(i), d == Decision::Erasure)
                })
                .collect();
            let errors = outcomes.iter().filter(|o| o.0).count() as f64;
            let erasures = outcomes.iter().filter(|o| o.1).count() as f64;
            Ok(ErrorEstimate::monte_carlo(errors / trials as f64, trials, Some(erasures / trials as f64)))
        }
    }
}

/// Paired Monte Carlo of the universal decoder against the informed ML
/// decoder on identical channel draws: `(universal errors, ML errors)`.
pub fn paired_ml_comparison(code: &UniversalCode, point: &ChannelPoint, trials: usize, seed: u64) -> (ErrorEstimate, ErrorEstimate) {
    let n = code.n();
    let outcomes: Vec<(bool, bool)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, n, t));
            let i = rng.random_range(0..code.messages());
            let ys: Vec<Output> = code.codebook.codeword(i).iter().map(|&x| point.sample_output(x, &mut rng)).collect();
            (decode(code, &ys) != Decision::Message(i), ml_decode_baseline(code, point, &ys) != i)
        })
        .collect();
    let u = outcomes.iter().filter(|o| o.0).count() as f64 / trials as f64;
    let m = outcomes.iter().filter(|o| o.1).count() as f64 / trials as f64;
    (ErrorEstimate::monte_carlo(u, trials, None), ErrorEstimate::monte_carlo(m, trials, None))
}

/// The random-coding ensemble of the universal code: `M` codewords drawn
/// independently and uniformly from `T_P`, decoded by the same threshold
/// rule. Its average error is computed without storing the codebook: given
/// the true codeword's joint type `N` with `yⁿ`, the message is decoded
/// correctly iff it passes the threshold and none of the codewords listed
/// before it does; each of those passes independently with probability
/// `q(yⁿ)`, which depends only on the output type. Averaging over a uniform
/// message position gives `1 − 1[pass]·(1 − (1 − q)^M)/(Mq)`. Finite
/// output alphabets only.
#[derive(Debug)]
pub struct EnsembleCode {
    family: Arc<ChannelFamily>,
    composition: CompositionType,
    log_messages: f64,
    threshold_rate: f64,
    mixture: CodewordMixture,
    output: MixtureModel,
    /// `ln q` keyed by output counts.
    q_cache: Mutex<HashMap<Vec<usize>, f64>>,
}

impl EnsembleCode {
    pub fn new(
        family: Arc<ChannelFamily>,
        composition: CompositionType,
        log_messages: f64,
        threshold_rate: f64,
        priors: &PriorSpec,
    ) -> Result<Self> {
        if family.output_space().cardinality().is_none() {
            return Err(Error::Unsupported("ensemble evaluation needs a finite output space".into()));
        }
        if !(log_messages >= 0.0) {
            return invalid("ln M must be >= 0");
        }
        let mixture = CodewordMixture::new(Arc::clone(&family), &priors.per_input, &composition)?;
        let output = MixtureModel::new(
            Arc::clone(&family),
            priors.output.clone(),
            MixtureTarget::Output(composition.distribution()),
            composition.n(),
        )?;
        Ok(Self {
            family,
            composition,
            log_messages,
            threshold_rate,
            mixture,
            output,
            q_cache: Mutex::new(HashMap::new()),
        })
    }

    /// Ensemble with `M_n = max(2, ⌊e^{nR − n^{1/4}}⌋)`.
    pub fn for_rate(
        family: Arc<ChannelFamily>,
        composition: CompositionType,
        rates: RateParameters,
        priors: &PriorSpec,
    ) -> Result<Self> {
        let n = composition.n() as f64;
        let lm = log_message_count(n * rates.rate - n.powf(0.25));
        Self::new(family, composition, lm, rates.threshold_rate, priors)
    }

    pub fn n(&self) -> usize {
        self.composition.n()
    }

    pub fn log_messages(&self) -> f64 {
        self.log_messages
    }

    pub fn threshold_rate(&self) -> f64 {
        self.threshold_rate
    }

    fn level(&self) -> f64 {
        self.n() as f64 * self.threshold_rate
    }

    fn log_output(&self, counts: &[usize]) -> Result<f64> {
        self.output.log_density_counts(counts)
    }

    /// `ln Q_{x^n}(yⁿ)` from the joint type.
    fn log_codeword(&self, joint: &[Vec<usize>]) -> Result<f64> {
        self.mixture.log_density_joint_counts(joint)
    }

    /// `ln q`: probability that a fresh codeword from `T_P` passes the
    /// threshold against an output with counts `col`.
    pub fn log_false_alarm(&self, col: &[usize]) -> Result<f64> {
        if let Some(v) = self.q_cache.lock().unwrap().get(col) {
            return Ok(*v);
        }
        let level = self.level() + self.log_output(col)?;
        let rows = self.composition.counts();
        let log_class = log_multinomial(rows);
        let mut terms = Vec::new();
        let mut count = 0.0;
        let mut err = None;
        for_each_table(rows, col, &mut |table| {
            count += 1.0;
            if count > ENSEMBLE_TABLE_CAP {
                err = Some(Error::CapExceeded {
                    what: "joint types with fixed margins",
                    count,
                    cap: ENSEMBLE_TABLE_CAP,
                });
                return false;
            }
            match self.log_codeword(table) {
                Ok(l) if l >= level => {
                    let col_split: f64 = (0..col.len())
                        .map(|y| log_multinomial(&table.iter().map(|r| r[y]).collect::<Vec<_>>()))
                        .sum();
                    terms.push(col_split - log_class);
                }
                Ok(_) => {}
                Err(e) => {
                    err = Some(e);
                    return false;
                }
            }
            true
        });
        if let Some(e) = err {
            return Err(e);
        }
        let v = log_sum_exp(&terms).min(0.0);
        self.q_cache.lock().unwrap().insert(col.to_vec(), v);
        Ok(v)
    }

    /// Conditional error given the true codeword's joint type.
    pub fn conditional_error(&self, joint: &[Vec<usize>]) -> Result<f64> {
        if self.threshold_rate == f64::INFINITY {
            return Ok(1.0);
        }
        let m1 = joint[0].len();
        let col: Vec<usize> = (0..m1).map(|y| joint.iter().map(|r| r[y]).sum()).collect();
        let score = self.log_codeword(joint)? - self.log_output(&col)?;
        if score < self.level() {
            return Ok(1.0);
        }
        let lq = self.log_false_alarm(&col)?;
        Ok(false_alarm_loss(lq, self.log_messages))
    }

    fn rows(&self, point: &ChannelPoint) -> Result<Vec<Vec<f64>>> {
        (0..self.family.inputs())
            .map(|x| point.transition_row(x))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Unsupported("ensemble evaluation needs a DMC".into()))
    }

    /// Ensemble-average error: exact over all joint types, or Monte Carlo
    /// over the true codeword's joint type (other codewords integrated out).
    pub fn estimate_error(&self, point: &ChannelPoint, mode: ErrorMode) -> Result<ErrorEstimate> {
        if !Arc::ptr_eq(point.family(), &self.family) && point.family().as_ref() != self.family.as_ref() {
            return invalid("channel point belongs to another family");
        }
        let rows = self.rows(point)?;
        let comp = self.composition.counts();
        let m1 = rows[0].len();
        match mode {
            ErrorMode::Exact => {
                let tables: f64 = comp
                    .iter()
                    .map(|&nx| crate::combinatorics::number_of_types(nx.max(1), m1))
                    .product();
                if tables > ENSEMBLE_TABLE_CAP {
                    return Err(Error::CapExceeded {
                        what: "joint types for exact ensemble evaluation",
                        count: tables,
                        cap: ENSEMBLE_TABLE_CAP,
                    });
                }
                let per_row: Vec<Vec<Vec<usize>>> = comp
                    .iter()
                    .map(|&nx| {
                        crate::combinatorics::enumerate_types(nx, m1)
                            .map(|ts| ts.into_iter().map(|t| t.counts().to_vec()).collect())
                            .unwrap_or_else(|_| vec![vec![0; m1]])
                    })
                    .collect();
                let log_rows: Vec<Vec<(f64, Vec<usize>)>> = per_row
                    .iter()
                    .zip(&rows)
                    .map(|(choices, w)| {
                        choices
                            .iter()
                            .map(|c| {
                                let lp = log_multinomial(c)
                                    + c.iter().zip(w).filter(|(k, _)| **k > 0).map(|(k, p)| *k as f64 * p.ln()).sum::<f64>();
                                (lp, c.clone())
                            })
                            .filter(|(lp, _)| lp.is_finite())
                            .collect()
                    })
                    .collect();
                let mut combos: Vec<(f64, Vec<Vec<usize>>)> = vec![(0.0, Vec::new())];
                for row in &log_rows {
                    let mut next = Vec::with_capacity(combos.len() * row.len());
                    for (lp, t) in &combos {
                        for (l, c) in row {
                            let mut tt = t.clone();
                            tt.push(c.clone());
                            next.push((lp + l, tt));
                        }
                    }
                    combos = next;
                }
                let parts: Vec<f64> = combos
                    .par_iter()
                    .map(|(lp, table)| Ok(lp.exp() * self.conditional_error(table)?))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(ErrorEstimate::exact(parts.iter().sum(), None))
            }
            ErrorMode::MonteCarlo { trials, seed } => {
                if trials == 0 {
                    return invalid("Monte Carlo needs at least one trial");
                }
                let n = self.n();
                let parts: Vec<f64> = (0..trials as u64)
                    .into_par_iter()
                    .map(|t| {
                        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, n, t));
                        let joint: Vec<Vec<usize>> = comp
                            .iter()
                            .zip(&rows)
                            .map(|(&nx, w)| sample_counts(w, nx, &mut rng))
                            .collect();
                        self.conditional_error(&joint)
                    })
                    .collect::<Result<_>>()?;
                Ok(ErrorEstimate::monte_carlo(parts.iter().sum::<f64>() / trials as f64, trials, None))
            }
        }
    }
}

/// `(1/M) Σ_{j<M} (1 − q)^j = (1 − (1 − q)^M)/(Mq)` from `ln q` and `ln M`.
pub fn no_false_alarm_average(log_q: f64, log_m: f64) -> f64 {
    1.0 - false_alarm_loss(log_q, log_m)
}

/// `1 − (1 − (1 − q)^M)/(Mq)`, evaluated without cancellation so that tiny
/// ensemble errors (≈ Mq/2) survive in floating point.
pub fn false_alarm_loss(log_q: f64, log_m: f64) -> f64 {
    if log_q == f64::NEG_INFINITY {
        return 0.0;
    }
    let q = log_q.exp();
    let x = (log_m + log_q).exp();
    if x == 0.0 {
        return 0.0;
    }
    if q >= 1.0 {
        return 1.0 - (-log_m).exp();
    }
    // y = −M ln(1 − q) = x·r with r = −ln(1 − q)/q ≥ 1
    let r = if q < 1e-8 { 1.0 + 0.5 * q } else { -(-q).ln_1p() / q };
    let y = x * r;
    // y − (1 − e^{−y}), by series for small y
    let h = if y < 1e-4 {
        y * y * (0.5 - y * (1.0 / 6.0 - y / 24.0))
    } else {
        y + (-y).exp_m1()
    };
    ((1.0 - r) + h / x).clamp(0.0, 1.0)
}

/// Visits every nonnegative integer table with the given row and column
/// sums; the visitor returns `false` to stop.
fn for_each_table(rows: &[usize], cols: &[usize], visit: &mut dyn FnMut(&[Vec<usize>]) -> bool) {
    let d = rows.len();
    let m = cols.len();
    let mut table = vec![vec![0usize; m]; d];
    let mut left = cols.to_vec();
    fn fill_row(
        x: usize,
        y: usize,
        remaining: usize,
        rows: &[usize],
        left: &mut Vec<usize>,
        table: &mut Vec<Vec<usize>>,
        visit: &mut dyn FnMut(&[Vec<usize>]) -> bool,
    ) -> bool {
        let d = rows.len();
        let m = left.len();
        if x + 1 == d {
            // the last row is forced by the column sums
            if left.iter().sum::<usize>() != rows[x] {
                return true;
            }
            table[x].copy_from_slice(left);
            return visit(table);
        }
        if y + 1 == m {
            if remaining > left[y] {
                return true;
            }
            table[x][y] = remaining;
            left[y] -= remaining;
            let go = fill_row(x + 1, 0, rows[x + 1], rows, left, table, visit);
            left[y] += remaining;
            return go;
        }
        let top = remaining.min(left[y]);
        for v in 0..=top {
            table[x][y] = v;
            left[y] -= v;
            let go = fill_row(x, y + 1, remaining - v, rows, left, table, visit);
            left[y] += v;
            if !go {
                return false;
            }
        }
        true
    }
    if rows.iter().sum::<usize>() != cols.iter().sum::<usize>() || d == 0 {
        return;
    }
    fill_row(0, 0, rows[0], rows, &mut left, &mut table, visit);
}

/// How codes are realised in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CodeConstruction {
    /// An explicit random codebook (`M_n` must be storable).
    Explicit { seed: u64, verify_packing: bool },
    /// The random-coding ensemble average (finite outputs).
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentRow {
    pub n: usize,
    pub log_messages: f64,
    pub threshold_rate: f64,
    pub error: ErrorEstimate,
    /// `−(1/n) ln e`, with zero errors replaced by `1/(trials + 1)`.
    pub exponent: f64,
    pub zero_substituted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub rate: f64,
    pub threshold_rate: f64,
    /// Exponent bound at the chosen threshold.
    pub bound: f64,
    pub rows: Vec<ExponentRow>,
    /// Regression of `−(1/n) ln e` on `1/n`; the intercept is the fitted
    /// asymptotic exponent.
    pub fit: LinearFit,
    pub fitted_exponent: f64,
    /// Some error estimate was zero and had to be floored.
    pub unusable: bool,
    pub pass: bool,
}

/// Simulates the universal code at each blocklength with `R₁` from
/// [`optimal_r1`] and compares the fitted exponent with the bound.
#[allow(clippy::too_many_arguments)]
pub fn fit_exponent(
    point: &ChannelPoint,
    input_dist: &[f64],
    rate: f64,
    ns: &[usize],
    mode: ErrorMode,
    construction: CodeConstruction,
    priors: &PriorSpec,
) -> Result<ExponentFit> {
    if ns.len() < 4 {
        return invalid("exponent fits need at least four blocklengths");
    }
    let design = optimal_r1(input_dist, std::slice::from_ref(point), rate)?;
    let r1 = design.threshold_rate;
    let family = point.family();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let comp = round_to_type(input_dist, n)?;
        let rates = RateParameters { rate, threshold_rate: r1 };
        let (lm, err) = match construction {
            CodeConstruction::Ensemble => {
                let ens = EnsembleCode::for_rate(Arc::clone(family), comp, rates, priors)?;
                (ens.log_messages(), ens.estimate_error(point, mode)?)
            }
            CodeConstruction::Explicit { seed, verify_packing } => {
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, n, u64::MAX));
                let code = assemble_code(family, &comp, rates, priors, &mut rng, verify_packing)?;
                ((code.messages() as f64).ln(), estimate_error(&code, point, mode)?)
            }
        };
        let (e, zero) = err.floored();
        rows.push(ExponentRow {
            n,
            log_messages: lm,
            threshold_rate: r1,
            error: err,
            exponent: -e.ln() / n as f64,
            zero_substituted: zero,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| 1.0 / r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.exponent).collect();
    let fit = least_squares(&xs, &ys)?;
    let bound = design.bound;
    Ok(ExponentFit {
        rate,
        threshold_rate: r1,
        bound,
        unusable: rows.iter().any(|r| r.zero_substituted),
        pass: fit.intercept >= bound - 2.0 * fit.intercept_se,
        fitted_exponent: fit.intercept,
        fit,
        rows,
    })
}

/// Second-order rate given directly or through a target error `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SecondOrderTarget {
    Rate(f64),
    Error(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondOrderRow {
    pub n: usize,
    pub log_messages: f64,
    pub threshold_rate: f64,
    pub theta: Vec<f64>,
    pub error: ErrorEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondOrderExperiment {
    pub first_order_rate: f64,
    pub second_order_rate: f64,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub dispersion: f64,
    /// `f(θ₂) = ∇I·θ₂`.
    pub shift: f64,
    /// `Φ((R₂* − f(θ₂))/√V)`.
    pub limit: f64,
    pub rows: Vec<SecondOrderRow>,
}

/// Runs codes of size `⌊e^{nR₁* + √n R₂* − n^{1/4}}⌋` with threshold
/// `R₁* + R₂*/√n + n^{−2/3}` over the channel `θ₁ + θ₂/√n`.
#[allow(clippy::too_many_arguments)]
pub fn run_second_order(
    theta1: &ChannelPoint,
    theta2: &[f64],
    input_dist: &[f64],
    first_order_rate: Option<f64>,
    target: SecondOrderTarget,
    ns: &[usize],
    mode: ErrorMode,
    construction: CodeConstruction,
    priors: &PriorSpec,
) -> Result<SecondOrderExperiment> {
    let family = theta1.family();
    if theta2.len() != family.dim() {
        return invalid("θ₂ dimension mismatch");
    }
    let info = mutual_information(input_dist, theta1)?;
    let r1_star = first_order_rate.unwrap_or(info);
    if (r1_star - info).abs() > FIRST_ORDER_MATCH_TOL {
        return invalid(format!(
            "second-order experiments need R1* = I(P, W) (got R1*={r1_star}, I={info})"
        ));
    }
    let shift = if theta2.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        local_shift(input_dist, theta1, theta2)?
    };
    let probe = second_order_bound(input_dist, theta1, r1_star, 0.0, Some(shift))?;
    let v = probe.dispersion;
    if !(v > 0.0) {
        return Err(Error::NonPositiveDispersion(v));
    }
    let r2 = match target {
        SecondOrderTarget::Rate(r) => r,
        SecondOrderTarget::Error(eps) => crate::infomeasures::second_order_rate_for(v, eps, shift)?,
    };
    let limit = second_order_bound(input_dist, theta1, r1_star, r2, Some(shift))?.epsilon;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let nf = n as f64;
        let theta: Vec<f64> = theta1.theta().iter().zip(theta2).map(|(a, b)| a + b / nf.sqrt()).collect();
        let point = family.point(theta.clone())?;
        let comp = round_to_type(input_dist, n)?;
        let lm = log_message_count(nf * r1_star + nf.sqrt() * r2 - nf.powf(0.25));
        let r1 = r1_star + r2 / nf.sqrt() + nf.powf(-2.0 / 3.0);
        let error = match construction {
            CodeConstruction::Ensemble => {
                EnsembleCode::new(Arc::clone(family), comp, lm, r1, priors)?.estimate_error(&point, mode)?
            }
            CodeConstruction::Explicit { seed, verify_packing } => {
                let m = lm.exp().round();
                if m > AUTO_EXPLICIT_MESSAGES * 256.0 {
                    return Err(Error::CapExceeded {
                        what: "explicit second-order codebook",
                        count: m,
                        cap: AUTO_EXPLICIT_MESSAGES * 256.0,
                    });
                }
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, n, u64::MAX));
                let book = build_codebook_with_messages(&comp, r1_star, m as usize, &mut rng, verify_packing)?;
                estimate_error(&UniversalCode::new(Arc::clone(family), book, r1, priors)?, &point, mode)?
            }
        };
        rows.push(SecondOrderRow {
            n,
            log_messages: lm,
            threshold_rate: r1,
            theta,
            error,
        });
    }
    Ok(SecondOrderExperiment {
        first_order_rate: r1_star,
        second_order_rate: r2,
        theta1: theta1.theta().to_vec(),
        theta2: theta2.to_vec(),
        dispersion: v,
        shift,
        limit,
        rows,
    })
}

/// CSV rows `n,M_n,R1,error,ci_low,ci_high,bound` (`M_n` as `ln M_n`).
pub fn exponent_csv(fit: &ExponentFit) -> String {
    let mut out = String::from("n,log_M,R1,error,ci_low,ci_high,bound\n");
    for r in &fit.rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.n, r.log_messages, r.threshold_rate, r.error.estimate, r.error.ci_low, r.error.ci_high, fit.bound
        ));
    }
    out
}

pub fn second_order_csv(exp: &SecondOrderExperiment) -> String {
    let mut out = String::from("n,log_M,R1,error,ci_low,ci_high,bound\n");
    for r in &exp.rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.n, r.log_messages, r.threshold_rate, r.error.estimate, r.error.ci_low, r.error.ci_high, exp.limit
        ));
    }
    out
}
