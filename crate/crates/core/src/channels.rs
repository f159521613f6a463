//! Parametric channel families whose per-input output laws are exponential
//! families: `W_{θ,x}(y) = W_{0,x}(y) exp(Σ_j θ^j g_{j,x}(y) − φ_x(θ))`.
//!
//! Three builtin families are provided: the logistic discrete memoryless
//! channel, the scalar Gaussian fading channel and the constant MIMO Gaussian
//! channel. Parameters live in axis-aligned boxes (or a nested sequence of
//! boxes for families that are only locally compact).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numerics::{gauss_hermite_standard_normal, log_sum_exp};

/// Default half-width of the logistic parameter box.
pub const DEFAULT_DMC_HALF_WIDTH: f64 = 6.0;
/// Default lower bound `ε₀` on Gaussian precisions (upper bound is `1/ε₀`).
pub const DEFAULT_PRECISION_FLOOR: f64 = 0.05;
/// Default half-width for the mean-type Gaussian coordinates.
pub const DEFAULT_GAUSSIAN_HALF_WIDTH: f64 = 8.0;

/// Output alphabet together with its reference measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OutputSpace {
    /// `{0, …, symbols−1}` with counting measure.
    Finite { symbols: usize },
    /// `ℝ` with Lebesgue measure.
    RealLine,
    /// `ℝ^dim` with Lebesgue measure.
    RealVector { dim: usize },
}

impl OutputSpace {
    pub fn finite(symbols: usize) -> Result<Self> {
        if symbols < 2 {
            return invalid(format!("finite output space needs >= 2 symbols, got {symbols}"));
        }
        Ok(Self::Finite { symbols })
    }

    pub fn real_vector(dim: usize) -> Result<Self> {
        match dim {
            0 => invalid("real-vector output space needs dimension >= 1"),
            1 => Ok(Self::RealLine),
            _ => Ok(Self::RealVector { dim }),
        }
    }

    /// Number of symbols for finite spaces.
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            Self::Finite { symbols } => Some(*symbols),
            _ => None,
        }
    }

    pub fn contains(&self, y: &Output) -> bool {
        match (self, y) {
            (Self::Finite { symbols }, Output::Symbol(s)) => s < symbols,
            (Self::RealLine, Output::Real(v)) => v.is_finite(),
            (Self::RealVector { dim }, Output::Vector(v)) => {
                v.len() == *dim && v.iter().all(|c| c.is_finite())
            }
            _ => false,
        }
    }
}

/// A single channel output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Output {
    Symbol(usize),
    Real(f64),
    Vector(Vec<f64>),
}

impl Output {
    fn symbol(&self) -> usize {
        match self {
            Output::Symbol(s) => *s,
            other => panic!("expected a finite output symbol, got {other:?}"),
        }
    }

    fn as_slice(&self) -> &[f64] {
        match self {
            Output::Real(v) => std::slice::from_ref(v),
            Output::Vector(v) => v,
            other => panic!("expected a real output, got {other:?}"),
        }
    }
}

/// Axis-aligned box `Π [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return invalid("box bounds must be non-empty and of equal length");
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return invalid(format!("invalid box side [{l}, {u}]"));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *l <= *t && *t <= *u)
    }

    pub fn contains_box(&self, other: &ParamBox) -> bool {
        self.contains(&other.lower) && self.contains(&other.upper)
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    /// Draws a point uniformly from the box.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect()
    }

    /// Same box shrunk by `fraction` of each side on both ends.
    pub fn shrink(&self, fraction: f64) -> ParamBox {
        let (lower, upper) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| {
                let m = (u - l) * fraction;
                (l + m, u - m)
            })
            .unzip();
        ParamBox { lower, upper }
    }

    fn vertices(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let k = self.dim();
        (0u64..(1u64 << k)).map(move |mask| {
            (0..k)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                })
                .collect()
        })
    }
}

/// The parameter set `Θ`: a compact box, or an increasing sequence of boxes
/// `Θ_1 ⊂ Θ_2 ⊂ …` (the last one bounds the explicitly represented part).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ParameterSet {
    Box(ParamBox),
    Nested(Vec<ParamBox>),
}

impl ParameterSet {
    /// Largest represented box.
    pub fn outer(&self) -> &ParamBox {
        match self {
            Self::Box(b) => b,
            Self::Nested(v) => v.last().expect("nested sets are non-empty"),
        }
    }

    pub fn shells(&self) -> &[ParamBox] {
        match self {
            Self::Box(b) => std::slice::from_ref(b),
            Self::Nested(v) => v,
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.outer().contains(theta)
    }
}

/// Which regularity condition the family is declared to satisfy; decides the
/// admissible universal mixture (continuous prior, grid, or nested grid).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConditionTag {
    A,
    B,
    C,
}

impl fmt::Display for ConditionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
        };
        f.write_str(s)
    }
}

/// Builtin family constructors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FamilyKind {
    /// Logistic DMC with `inputs` inputs and `outputs` output symbols.
    Dmc { inputs: usize, outputs: usize },
    /// `Y = a·s_x + Z`, `Z ~ N(b, v)`.
    GaussianFading { signals: Vec<f64> },
    /// `Y = A s_x + Z`, `Z ~ N_r(b, Σ)`.
    MimoGaussian {
        signals: Vec<Vec<f64>>,
        receive_dim: usize,
    },
}

/// A parametric channel family `{W_θ}_{θ∈Θ}` from a finite input alphabet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelFamily {
    kind: FamilyKind,
    params: ParameterSet,
    tag: ConditionTag,
    output_space: OutputSpace,
}

impl ChannelFamily {
    /// Logistic DMC: `W_θ(y|x) = e^{θ^{y,x}} / (1 + Σ_j e^{θ^{j,x}})` for
    /// `y ≥ 1` (and `1/(1+Σ)` for `y = 0`), box `[-6, 6]^{d·m}`.
    pub fn make_dmc_family(inputs: usize, m: usize) -> Result<Self> {
        // d = 1 is a plain parametric source (e.g. the Bernoulli family).
        if inputs < 1 || m < 1 {
            return invalid(format!("DMC needs d >= 1 and m >= 1, got d={inputs}, m={m}"));
        }
        let b = ParamBox::symmetric(inputs * m, DEFAULT_DMC_HALF_WIDTH)?;
        Self::dmc_with_box(inputs, m, b)
    }

    pub fn dmc_with_box(inputs: usize, m: usize, b: ParamBox) -> Result<Self> {
        // d = 1 is a plain parametric source (e.g. the Bernoulli family).
        if inputs < 1 || m < 1 {
            return invalid(format!("DMC needs d >= 1 and m >= 1, got d={inputs}, m={m}"));
        }
        if b.dim() != inputs * m {
            return invalid(format!("DMC box has dimension {}, expected {}", b.dim(), inputs * m));
        }
        Ok(Self {
            kind: FamilyKind::Dmc {
                inputs,
                outputs: m + 1,
            },
            params: ParameterSet::Box(b),
            tag: ConditionTag::A,
            output_space: OutputSpace::finite(m + 1)?,
        })
    }

    /// Natural parameters of a DMC given its transition matrix `rows[x][y]`
    /// (all entries positive): `θ^{y,x} = ln(W(y|x)/W(0|x))`.
    pub fn dmc_natural_parameters(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut theta = Vec::new();
        for row in rows {
            if row.len() < 2 || row.iter().any(|p| !(*p > 0.0)) {
                return invalid(format!("transition row {row:?} must have >= 2 positive entries"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return invalid(format!("transition row {row:?} does not sum to 1"));
            }
            theta.extend(row[1..].iter().map(|p| (p / row[0]).ln()));
        }
        Ok(theta)
    }

    /// Gaussian fading family with natural parameters `θ = (1/v, a/v, b/v)`
    /// on the default box `[ε₀, 1/ε₀] × [-8, 8]²`.
    pub fn make_gaussian_fading(signals: Vec<f64>) -> Result<Self> {
        Self::gaussian_fading_with_precision_floor(signals, DEFAULT_PRECISION_FLOOR)
    }

    pub fn gaussian_fading_with_precision_floor(signals: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor < 1.0) {
            return invalid(format!("precision floor must lie in (0, 1), got {floor}"));
        }
        let w = DEFAULT_GAUSSIAN_HALF_WIDTH;
        let b = ParamBox::new(vec![floor, -w, -w], vec![1.0 / floor, w, w])?;
        Self::gaussian_fading_with_box(signals, b)
    }

    pub fn gaussian_fading_with_box(signals: Vec<f64>, b: ParamBox) -> Result<Self> {
        if signals.len() < 2 {
            return invalid("Gaussian fading needs at least two signal points");
        }
        if signals.iter().any(|s| !s.is_finite()) {
            return invalid("signal points must be finite");
        }
        for (i, a) in signals.iter().enumerate() {
            if signals[i + 1..].contains(a) {
                return invalid(format!("duplicate signal point {a}"));
            }
        }
        if b.dim() != 3 {
            return invalid(format!("Gaussian fading box must be 3-dimensional, got {}", b.dim()));
        }
        if b.lower[0] <= 0.0 {
            return invalid("the precision coordinate must be bounded away from 0");
        }
        Ok(Self {
            kind: FamilyKind::GaussianFading { signals },
            params: ParameterSet::Box(b),
            tag: ConditionTag::B,
            output_space: OutputSpace::RealLine,
        })
    }

    /// Natural parameters `(1/v, a/v, b/v)` of `Y = a·s + Z`, `Z ~ N(b, v)`.
    pub fn fading_natural_parameters(a: f64, b: f64, v: f64) -> Result<Vec<f64>> {
        if !(v > 0.0) {
            return invalid(format!("noise variance must be positive, got {v}"));
        }
        Ok(vec![1.0 / v, a / v, b / v])
    }

    /// MIMO Gaussian family with `r` receive dimensions. Coordinates are the
    /// upper triangle of `Σ⁻¹` (row-major), then `Σ⁻¹A` (row-major, `r×t`),
    /// then `Σ⁻¹b`.
    pub fn make_mimo_gaussian(signals: Vec<Vec<f64>>, receive_dim: usize) -> Result<Self> {
        let t = signals.first().map_or(0, Vec::len);
        let floor = DEFAULT_PRECISION_FLOOR;
        let w = DEFAULT_GAUSSIAN_HALF_WIDTH;
        let off = if receive_dim > 1 {
            0.9 * floor / (receive_dim - 1) as f64
        } else {
            0.0
        };
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for i in 0..receive_dim {
            for j in i..receive_dim {
                if i == j {
                    lower.push(floor);
                    upper.push(1.0 / floor);
                } else {
                    lower.push(-off);
                    upper.push(off);
                }
            }
        }
        for _ in 0..receive_dim * (t + 1) {
            lower.push(-w);
            upper.push(w);
        }
        Self::mimo_gaussian_with_box(signals, receive_dim, ParamBox::new(lower, upper)?)
    }

    pub fn mimo_gaussian_with_box(
        signals: Vec<Vec<f64>>,
        receive_dim: usize,
        b: ParamBox,
    ) -> Result<Self> {
        if signals.len() < 2 {
            return invalid("MIMO family needs at least two signal vectors");
        }
        if receive_dim == 0 {
            return invalid("receive dimension must be >= 1");
        }
        let t = signals[0].len();
        if t == 0 || signals.iter().any(|s| s.len() != t) {
            return invalid("signal vectors must share a positive dimension");
        }
        if receive_dim > 3 {
            return Err(Error::Unsupported(
                "MIMO receive dimension above 3 (box positivity check is exhaustive over vertices)"
                    .into(),
            ));
        }
        let r = receive_dim;
        let k = r * (r + 1) / 2 + r * t + r;
        if b.dim() != k {
            return invalid(format!("MIMO box has dimension {}, expected {k}", b.dim()));
        }
        // The positive-definite cone is convex, so the box of precision
        // matrices lies inside it iff every vertex does.
        let tri = r * (r + 1) / 2;
        let precision_box = ParamBox::new(b.lower[..tri].to_vec(), b.upper[..tri].to_vec())?;
        for vertex in precision_box.vertices() {
            let m = symmetric_from_upper(&vertex, r);
            if m.cholesky().is_none() {
                return invalid(format!(
                    "parameter box contains a non-positive-definite precision matrix {vertex:?}"
                ));
            }
        }
        Ok(Self {
            kind: FamilyKind::MimoGaussian {
                signals,
                receive_dim,
            },
            params: ParameterSet::Box(b),
            tag: ConditionTag::B,
            output_space: OutputSpace::real_vector(r)?,
        })
    }

    /// Natural parameters of `Y = A s + Z`, `Z ~ N_r(b, Σ)`.
    pub fn mimo_natural_parameters(
        gain: &DMatrix<f64>,
        offset: &DVector<f64>,
        covariance: &DMatrix<f64>,
    ) -> Result<Vec<f64>> {
        let r = covariance.nrows();
        if covariance.ncols() != r || gain.nrows() != r || offset.len() != r {
            return invalid("inconsistent MIMO parameter shapes");
        }
        let precision = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("covariance must be positive definite".into()))?
            .inverse();
        let mut theta = Vec::new();
        for i in 0..r {
            for j in i..r {
                theta.push(precision[(i, j)]);
            }
        }
        let pa = &precision * gain;
        for i in 0..r {
            for j in 0..gain.ncols() {
                theta.push(pa[(i, j)]);
            }
        }
        theta.extend((&precision * offset).iter());
        Ok(theta)
    }

    /// Replaces the parameter set by nested boxes `Θ_1 ⊂ Θ_2 ⊂ …`; the family
    /// is then tagged for the nested-grid mixture.
    pub fn with_nested_boxes(mut self, boxes: Vec<ParamBox>) -> Result<Self> {
        if boxes.is_empty() {
            return invalid("nested parameter set needs at least one box");
        }
        for w in boxes.windows(2) {
            if !w[1].contains_box(&w[0]) {
                return invalid("nested boxes must be increasing");
            }
        }
        if boxes.iter().any(|b| b.dim() != self.dim()) {
            return invalid("nested box dimension mismatch");
        }
        if let FamilyKind::GaussianFading { .. } | FamilyKind::MimoGaussian { .. } = self.kind {
            let probe = Self {
                params: ParameterSet::Box(boxes.last().unwrap().clone()),
                ..self.clone()
            };
            match &probe.kind {
                FamilyKind::GaussianFading { signals } => {
                    Self::gaussian_fading_with_box(signals.clone(), probe.params.outer().clone())?;
                }
                FamilyKind::MimoGaussian {
                    signals,
                    receive_dim,
                } => {
                    Self::mimo_gaussian_with_box(
                        signals.clone(),
                        *receive_dim,
                        probe.params.outer().clone(),
                    )?;
                }
                FamilyKind::Dmc { .. } => {}
            }
        }
        self.params = ParameterSet::Nested(boxes);
        self.tag = ConditionTag::C;
        Ok(self)
    }

    /// Retags a boxed family as A (continuous prior) or B (grid prior).
    /// Tag C is only reachable through [`Self::with_nested_boxes`].
    pub fn with_tag(mut self, tag: ConditionTag) -> Result<Self> {
        match (&self.params, tag) {
            (ParameterSet::Box(_), ConditionTag::A | ConditionTag::B) => {
                self.tag = tag;
                Ok(self)
            }
            (ParameterSet::Nested(_), ConditionTag::C) => Ok(self),
            _ => invalid(format!("tag {tag} does not match the parameter set")),
        }
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn tag(&self) -> ConditionTag {
        self.tag
    }

    pub fn parameter_set(&self) -> &ParameterSet {
        &self.params
    }

    pub fn output_space(&self) -> OutputSpace {
        self.output_space
    }

    /// Input alphabet size `d`.
    pub fn inputs(&self) -> usize {
        match &self.kind {
            FamilyKind::Dmc { inputs, .. } => *inputs,
            FamilyKind::GaussianFading { signals } => signals.len(),
            FamilyKind::MimoGaussian { signals, .. } => signals.len(),
        }
    }

    /// Number of stored parameter coordinates `k`.
    pub fn dim(&self) -> usize {
        self.params.outer().dim()
    }

    pub fn component(&self, input: usize) -> ExpFamilyComponent<'_> {
        assert!(input < self.inputs(), "input {input} out of range");
        ExpFamilyComponent {
            family: self,
            input,
        }
    }

    /// Shares the family and validates `θ ∈ Θ`.
    pub fn point(self: &Arc<Self>, theta: Vec<f64>) -> Result<ChannelPoint> {
        ChannelPoint::new(Arc::clone(self), theta)
    }
}

fn symmetric_from_upper(upper: &[f64], r: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(r, r);
    let mut idx = 0;
    for i in 0..r {
        for j in i..r {
            m[(i, j)] = upper[idx];
            m[(j, i)] = upper[idx];
            idx += 1;
        }
    }
    m
}

/// The exponential family `{W_{θ,x}}_θ` seen by one input symbol `x`.
#[derive(Debug, Clone, Copy)]
pub struct ExpFamilyComponent<'a> {
    family: &'a ChannelFamily,
    input: usize,
}

impl<'a> ExpFamilyComponent<'a> {
    pub fn input(&self) -> usize {
        self.input
    }

    /// Coordinates of `θ` that enter `W_{θ,x}`.
    pub fn selector(&self) -> Vec<usize> {
        match &self.family.kind {
            FamilyKind::Dmc { outputs, .. } => {
                let m = outputs - 1;
                (self.input * m..(self.input + 1) * m).collect()
            }
            _ => (0..self.family.dim()).collect(),
        }
    }

    /// `k_x`.
    pub fn dim(&self) -> usize {
        self.selector().len()
    }

    /// Generator values `g_{j,x}(y)`, aligned with [`Self::selector`].
    pub fn generators(&self, y: &Output) -> Vec<f64> {
        match &self.family.kind {
            FamilyKind::Dmc { outputs, .. } => {
                let s = y.symbol();
                (1..*outputs).map(|j| if j == s { 1.0 } else { 0.0 }).collect()
            }
            FamilyKind::GaussianFading { signals } => {
                let v = y.as_slice()[0];
                vec![-0.5 * v * v, signals[self.input] * v, v]
            }
            FamilyKind::MimoGaussian {
                signals,
                receive_dim,
            } => {
                let y = y.as_slice();
                let r = *receive_dim;
                let s = &signals[self.input];
                let mut g = Vec::with_capacity(self.family.dim());
                for i in 0..r {
                    for j in i..r {
                        g.push(if i == j { -0.5 * y[i] * y[i] } else { -y[i] * y[j] });
                    }
                }
                for yi in y.iter().take(r) {
                    for sj in s {
                        g.push(yi * sj);
                    }
                }
                g.extend_from_slice(y);
                g
            }
        }
    }

    /// `ln W_{0,x}(y)`.
    pub fn base_log_density(&self, _y: &Output) -> f64 {
        match &self.family.kind {
            FamilyKind::Dmc { .. } => 0.0,
            FamilyKind::GaussianFading { .. } => -0.5 * (2.0 * PI).ln(),
            FamilyKind::MimoGaussian { receive_dim, .. } => {
                -0.5 * *receive_dim as f64 * (2.0 * PI).ln()
            }
        }
    }

    fn mimo_precision_and_eta(&self, theta: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let FamilyKind::MimoGaussian {
            signals,
            receive_dim,
        } = &self.family.kind
        else {
            unreachable!("MIMO helper on a non-MIMO family")
        };
        let r = *receive_dim;
        let t = signals[0].len();
        let tri = r * (r + 1) / 2;
        let precision = symmetric_from_upper(&theta[..tri], r);
        let s = &signals[self.input];
        let eta = DVector::from_fn(r, |i, _| {
            let row = &theta[tri + i * t..tri + (i + 1) * t];
            row.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() + theta[tri + r * t + i]
        });
        (precision, eta)
    }

    /// Potential (log-partition) `φ_x(θ)`.
    pub fn potential(&self, theta: &[f64]) -> f64 {
        match &self.family.kind {
            FamilyKind::Dmc { .. } => {
                let sel = self.selector();
                let mut v = vec![0.0];
                v.extend(sel.iter().map(|&i| theta[i]));
                log_sum_exp(&v)
            }
            FamilyKind::GaussianFading { signals } => {
                let eta = theta[1] * signals[self.input] + theta[2];
                eta * eta / (2.0 * theta[0]) - 0.5 * theta[0].ln()
            }
            FamilyKind::MimoGaussian { .. } => {
                let (precision, eta) = self.mimo_precision_and_eta(theta);
                match precision.cholesky() {
                    Some(ch) => {
                        let solved = ch.solve(&eta);
                        let log_det: f64 =
                            2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                        0.5 * eta.dot(&solved) - 0.5 * log_det
                    }
                    None => f64::INFINITY,
                }
            }
        }
    }

    /// `∇φ_x(θ)` over the selected coordinates (= mean of the generators).
    pub fn potential_gradient(&self, theta: &[f64]) -> Vec<f64> {
        match &self.family.kind {
            FamilyKind::Dmc { .. } => {
                let probs = dmc_row(theta, &self.selector());
                probs[1..].to_vec()
            }
            FamilyKind::GaussianFading { signals } => {
                let s = signals[self.input];
                let (p, eta) = (theta[0], theta[1] * s + theta[2]);
                vec![
                    -eta * eta / (2.0 * p * p) - 1.0 / (2.0 * p),
                    s * eta / p,
                    eta / p,
                ]
            }
            FamilyKind::MimoGaussian { .. } => {
                let sel = self.selector();
                sel.iter()
                    .map(|&i| {
                        let h = fd_step(theta[i]);
                        let mut up = theta.to_vec();
                        let mut dn = theta.to_vec();
                        up[i] += h;
                        dn[i] -= h;
                        (self.potential(&up) - self.potential(&dn)) / (2.0 * h)
                    })
                    .collect()
            }
        }
    }

    /// `∇²φ_x(θ)` over the selected coordinates: analytic for the logistic
    /// and scalar Gaussian families, central differences otherwise.
    pub fn potential_hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        match &self.family.kind {
            FamilyKind::Dmc { .. } => {
                let probs = dmc_row(theta, &self.selector());
                let p = &probs[1..];
                DMatrix::from_fn(p.len(), p.len(), |i, j| {
                    if i == j {
                        p[i] - p[i] * p[i]
                    } else {
                        -p[i] * p[j]
                    }
                })
            }
            FamilyKind::GaussianFading { signals } => {
                let s = signals[self.input];
                let (p, eta) = (theta[0], theta[1] * s + theta[2]);
                let h11 = eta * eta / p.powi(3) + 1.0 / (2.0 * p * p);
                let h12 = -s * eta / (p * p);
                let h13 = -eta / (p * p);
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[h11, h12, h13, h12, s * s / p, s / p, h13, s / p, 1.0 / p],
                )
            }
            FamilyKind::MimoGaussian { .. } => {
                finite_difference_hessian(|t| self.potential(t), theta, &self.selector())
            }
        }
    }

    /// `ln W_{θ,x}(y)` from the exponential-family form.
    pub fn log_density(&self, theta: &[f64], y: &Output) -> f64 {
        match &self.family.kind {
            FamilyKind::Dmc { .. } => {
                let sel = self.selector();
                let s = y.symbol();
                let num = if s == 0 { 0.0 } else { theta[sel[s - 1]] };
                num - self.potential(theta)
            }
            _ => {
                let sel = self.selector();
                let g = self.generators(y);
                let dot: f64 = sel.iter().zip(&g).map(|(&i, gi)| theta[i] * gi).sum();
                self.base_log_density(y) + dot - self.potential(theta)
            }
        }
    }
}

/// Step used by all central-difference derivatives of the potential.
pub fn fd_step(theta_i: f64) -> f64 {
    1e-4 * (1.0 + theta_i.abs())
}

pub(crate) fn finite_difference_hessian(
    f: impl Fn(&[f64]) -> f64,
    theta: &[f64],
    coords: &[usize],
) -> DMatrix<f64> {
    let k = coords.len();
    let mut h = DMatrix::zeros(k, k);
    let eval = |di: usize, si: f64, dj: usize, sj: f64| {
        let mut t = theta.to_vec();
        t[coords[di]] += si;
        t[coords[dj]] += sj;
        f(&t)
    };
    for a in 0..k {
        let ha = fd_step(theta[coords[a]]);
        for b in a..k {
            let hb = fd_step(theta[coords[b]]);
            let v = if a == b {
                let mut up = theta.to_vec();
                let mut dn = theta.to_vec();
                up[coords[a]] += ha;
                dn[coords[a]] -= ha;
                (f(&up) - 2.0 * f(theta) + f(&dn)) / (ha * ha)
            } else {
                (eval(a, ha, b, hb) - eval(a, ha, b, -hb) - eval(a, -ha, b, hb)
                    + eval(a, -ha, b, -hb))
                    / (4.0 * ha * hb)
            };
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

fn dmc_row(theta: &[f64], selector: &[usize]) -> Vec<f64> {
    let mut logits = vec![0.0];
    logits.extend(selector.iter().map(|&i| theta[i]));
    let lse = log_sum_exp(&logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// A member `W_θ` of a family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelPoint {
    #[serde(skip)]
    family: Arc<ChannelFamily>,
    theta: Vec<f64>,
}

impl ChannelPoint {
    pub fn new(family: Arc<ChannelFamily>, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != family.dim() || !family.params.contains(&theta) {
            return Err(Error::OutsideParameterSet { theta });
        }
        Ok(Self { family, theta })
    }

    pub fn family(&self) -> &Arc<ChannelFamily> {
        &self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `ln W_{θ,x}(y)`.
    pub fn log_density(&self, x: usize, y: &Output) -> f64 {
        self.family.component(x).log_density(&self.theta, y)
    }

    /// `Σ_i ln W_{θ,x_i}(y_i)`.
    pub fn sequence_log_density(&self, xs: &[usize], ys: &[Output]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(&x, y)| self.log_density(x, y))
            .sum()
    }

    /// Draws `y ~ W_{θ,x}`.
    pub fn sample_output(&self, x: usize, rng: &mut impl Rng) -> Output {
        match self.conditional(x) {
            Law::Finite(law) => Output::Symbol(law.sample(rng)),
            Law::Gaussian(law) => law.sample(rng),
        }
    }

    /// Transition probabilities `W_θ(·|x)` for finite-output families.
    pub fn transition_row(&self, x: usize) -> Option<Vec<f64>> {
        match &self.family.kind {
            FamilyKind::Dmc { .. } => Some(dmc_row(&self.theta, &self.family.component(x).selector())),
            _ => None,
        }
    }

    /// Fisher information `J_{θ,x} = ∇²φ_x(θ)` over the coordinates feeding `x`.
    /// Requires `θ ± step` to stay inside `Θ` along those coordinates.
    pub fn fisher_information(&self, x: usize) -> Result<DMatrix<f64>> {
        let comp = self.family.component(x);
        self.check_interior(&comp.selector())?;
        Ok(comp.potential_hessian(&self.theta))
    }

    pub(crate) fn check_interior(&self, coords: &[usize]) -> Result<()> {
        let b = self.family.params.outer();
        for &i in coords {
            let h = fd_step(self.theta[i]);
            if self.theta[i] - h < b.lower[i] || self.theta[i] + h > b.upper[i] {
                return Err(Error::NotInterior {
                    theta: self.theta.clone(),
                });
            }
        }
        Ok(())
    }

    /// The output law `W_{θ,x}`.
    pub fn conditional(&self, x: usize) -> Law {
        match &self.family.kind {
            FamilyKind::Dmc { .. } => Law::Finite(FiniteLaw {
                probs: self.transition_row(x).expect("finite family"),
            }),
            FamilyKind::GaussianFading { signals } => {
                let t = &self.theta;
                let var = 1.0 / t[0];
                let mean = (t[1] * signals[x] + t[2]) * var;
                Law::Gaussian(
                    GaussianLaw::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
                        .expect("precision box keeps the variance positive"),
                )
            }
            FamilyKind::MimoGaussian { .. } => {
                let (precision, eta) = self.family.component(x).mimo_precision_and_eta(&self.theta);
                let cov = precision
                    .cholesky()
                    .expect("box keeps precision positive definite")
                    .inverse();
                let mean = &cov * eta;
                Law::Gaussian(GaussianLaw::new(mean, cov).expect("positive definite covariance"))
            }
        }
    }

    /// The output law `W_θ·P = Σ_x P(x) W_{θ,x}`.
    pub fn output_law(&self, input_dist: &[f64]) -> MixtureLaw {
        MixtureLaw {
            components: input_dist
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(x, &p)| (p, self.conditional(x)))
                .collect(),
        }
    }
}

/// A probability law on an output space that can be evaluated pointwise and
/// integrated against.
pub trait OutputLaw {
    fn space(&self) -> OutputSpace;

    fn log_density(&self, y: &Output) -> f64;

    /// Nodes and weights with `Σ w f(y) ≈ E[f(Y)]`; exact for finite spaces,
    /// Gauss–Hermite with `resolution` nodes per dimension for Gaussians.
    fn expectation_nodes(&self, resolution: usize) -> Vec<(Output, f64)>;
}

/// A probability vector on `{0, …, m}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteLaw {
    probs: Vec<f64>,
}

impl FiniteLaw {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        crate::numerics::check_distribution(&probs, probs.len())?;
        if probs.len() < 2 {
            return invalid("a finite law needs at least two symbols");
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

impl OutputLaw for FiniteLaw {
    fn space(&self) -> OutputSpace {
        OutputSpace::Finite {
            symbols: self.probs.len(),
        }
    }

    fn log_density(&self, y: &Output) -> f64 {
        self.probs[y.symbol()].ln()
    }

    fn expectation_nodes(&self, _resolution: usize) -> Vec<(Output, f64)> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| (Output::Symbol(i), p))
            .collect()
    }
}

/// A (possibly multivariate) normal law.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let r = mean.len();
        if r == 0 || cov.nrows() != r || cov.ncols() != r {
            return invalid("Gaussian mean/covariance shape mismatch");
        }
        let ch = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("covariance must be positive definite".into()))?;
        let log_det: f64 = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = ch.inverse();
        Ok(Self {
            log_norm: -0.5 * (r as f64 * (2.0 * PI).ln() + log_det),
            chol: ch.l(),
            precision,
            mean,
            cov,
        })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn to_output(&self, v: DVector<f64>) -> Output {
        if v.len() == 1 {
            Output::Real(v[0])
        } else {
            Output::Vector(v.iter().copied().collect())
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Output {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        self.to_output(&self.mean + &self.chol * z)
    }
}

impl OutputLaw for GaussianLaw {
    fn space(&self) -> OutputSpace {
        OutputSpace::real_vector(self.mean.len()).expect("dim >= 1")
    }

    fn log_density(&self, y: &Output) -> f64 {
        let y = DVector::from_column_slice(y.as_slice());
        let d = y - &self.mean;
        self.log_norm - 0.5 * d.dot(&(&self.precision * &d))
    }

    fn expectation_nodes(&self, resolution: usize) -> Vec<(Output, f64)> {
        let r = self.mean.len();
        // Tensor rule; the per-dimension count shrinks so the total stays bounded.
        let per_dim = if r == 1 {
            resolution
        } else {
            resolution.min((2e5f64).powf(1.0 / r as f64).floor() as usize)
        }
        .max(2);
        let rule = gauss_hermite_standard_normal(per_dim).expect("at least two nodes");
        let total = per_dim.pow(r as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; r];
        for _ in 0..total {
            let z = DVector::from_fn(r, |i, _| rule[idx[i]].0);
            let w: f64 = idx.iter().map(|&i| rule[i].1).product();
            out.push((self.to_output(&self.mean + &self.chol * z), w));
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < per_dim {
                    break;
                }
                *slot = 0;
            }
        }
        out
    }
}

/// The conditional law of a builtin family.
#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    Finite(FiniteLaw),
    Gaussian(GaussianLaw),
}

impl OutputLaw for Law {
    fn space(&self) -> OutputSpace {
        match self {
            Law::Finite(l) => l.space(),
            Law::Gaussian(l) => l.space(),
        }
    }

    fn log_density(&self, y: &Output) -> f64 {
        match self {
            Law::Finite(l) => l.log_density(y),
            Law::Gaussian(l) => l.log_density(y),
        }
    }

    fn expectation_nodes(&self, resolution: usize) -> Vec<(Output, f64)> {
        match self {
            Law::Finite(l) => l.expectation_nodes(resolution),
            Law::Gaussian(l) => l.expectation_nodes(resolution),
        }
    }
}

/// Finite mixture `Σ_i w_i L_i` of laws on the same space.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureLaw {
    components: Vec<(f64, Law)>,
}

impl MixtureLaw {
    pub fn components(&self) -> &[(f64, Law)] {
        &self.components
    }
}

impl OutputLaw for MixtureLaw {
    fn space(&self) -> OutputSpace {
        self.components[0].1.space()
    }

    fn log_density(&self, y: &Output) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|(w, l)| w.ln() + l.log_density(y))
            .collect();
        log_sum_exp(&terms)
    }

    fn expectation_nodes(&self, resolution: usize) -> Vec<(Output, f64)> {
        if let Law::Finite(first) = &self.components[0].1 {
            let m = first.probs.len();
            let probs: Vec<f64> = (0..m)
                .map(|y| {
                    self.components
                        .iter()
                        .map(|(w, l)| match l {
                            Law::Finite(f) => w * f.probs[y],
                            Law::Gaussian(_) => unreachable!("mixed spaces"),
                        })
                        .sum()
                })
                .collect();
            return FiniteLaw { probs }.expectation_nodes(resolution);
        }
        self.components
            .iter()
            .flat_map(|(w, l)| {
                l.expectation_nodes(resolution)
                    .into_iter()
                    .map(move |(y, v)| (y, w * v))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gauss_legendre;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dmc(d: usize, m: usize) -> Arc<ChannelFamily> {
        Arc::new(ChannelFamily::make_dmc_family(d, m).unwrap())
    }

    #[test]
    fn dmc_zero_parameter_is_uniform() {
        let fam = dmc(2, 1);
        let pt = fam.point(vec![0.0, 0.0]).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                assert_abs_diff_eq!(pt.log_density(x, &Output::Symbol(y)).exp(), 0.5, epsilon = 1e-15);
                assert_abs_diff_eq!(pt.log_density(x, &Output::Symbol(y)), -0.693_147_180_559_945_3, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dmc_inverts_logistic_map() {
        // W(1|0) = 0.1, W(1|1) = 0.9: θ^{1,x} = ln(W(1|x)/W(0|x)).
        let theta =
            ChannelFamily::dmc_natural_parameters(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        assert_abs_diff_eq!(theta[0], -2.197_224_577_336_219_6, epsilon = 1e-12);
        assert_abs_diff_eq!(theta[1], 2.197_224_577_336_219_6, epsilon = 1e-12);
        let fam = dmc(2, 1);
        let pt = fam.point(theta).unwrap();
        assert_abs_diff_eq!(pt.transition_row(0).unwrap()[1], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(pt.transition_row(1).unwrap()[1], 0.9, epsilon = 1e-12);
    }

    #[test]
    fn dmc_rejects_degenerate_sizes() {
        assert!(ChannelFamily::make_dmc_family(0, 1).is_err());
        assert_eq!(ChannelFamily::make_dmc_family(1, 1).unwrap().dim(), 1);
        assert!(ChannelFamily::make_dmc_family(2, 0).is_err());
    }

    #[test]
    fn retagging_respects_the_parameter_set() {
        let f = ChannelFamily::make_dmc_family(2, 1).unwrap();
        assert_eq!(f.clone().with_tag(ConditionTag::B).unwrap().tag(), ConditionTag::B);
        assert!(f.clone().with_tag(ConditionTag::C).is_err());
        let nested = f
            .with_nested_boxes(vec![ParamBox::symmetric(2, 1.0).unwrap(), ParamBox::symmetric(2, 3.0).unwrap()])
            .unwrap();
        assert!(nested.clone().with_tag(ConditionTag::A).is_err());
        assert_eq!(nested.with_tag(ConditionTag::C).unwrap().tag(), ConditionTag::C);
    }

    #[test]
    fn dmc_three_by_three_normalises() {
        let fam = dmc(3, 2);
        assert_eq!(fam.dim(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let pt = fam.point(fam.parameter_set().outer().sample(&mut rng)).unwrap();
            for x in 0..3 {
                let total: f64 = (0..3).map(|y| pt.log_density(x, &Output::Symbol(y)).exp()).sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_fading_density_and_parameters() {
        let fam = Arc::new(ChannelFamily::make_gaussian_fading(vec![0.0, 1.0]).unwrap());
        let theta = ChannelFamily::fading_natural_parameters(1.0, 0.0, 1.0).unwrap();
        assert_eq!(theta, vec![1.0, 1.0, 0.0]);
        let pt = fam.point(theta).unwrap();
        assert_abs_diff_eq!(pt.log_density(0, &Output::Real(0.0)).exp(), 0.398_942_280_401_432_7, epsilon = 1e-12);
        assert_abs_diff_eq!(pt.log_density(1, &Output::Real(1.0)), -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_fading_normalises_under_independent_quadrature() {
        // (a, b, v) = (2, 1, 0.5), input signal 1: N(3, 0.5).
        let fam = Arc::new(ChannelFamily::make_gaussian_fading(vec![0.0, 1.0]).unwrap());
        let pt = fam
            .point(ChannelFamily::fading_natural_parameters(2.0, 1.0, 0.5).unwrap())
            .unwrap();
        let sd = 0.5f64.sqrt();
        let mut total = 0.0;
        let panels = 40;
        for p in 0..panels {
            let a = 3.0 - 14.0 * sd + 28.0 * sd * p as f64 / panels as f64;
            let b = a + 28.0 * sd / panels as f64;
            for (y, w) in gauss_legendre(20, a, b).unwrap() {
                total += w * pt.log_density(1, &Output::Real(y)).exp();
            }
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        let Law::Gaussian(law) = pt.conditional(1) else { panic!() };
        assert_abs_diff_eq!(law.mean()[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(law.covariance()[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_fading_rejects_bad_inputs() {
        assert!(ChannelFamily::make_gaussian_fading(vec![1.0, 1.0]).is_err());
        assert!(ChannelFamily::make_gaussian_fading(vec![1.0]).is_err());
        let touching = ParamBox::new(vec![0.0, -1.0, -1.0], vec![2.0, 1.0, 1.0]).unwrap();
        assert!(ChannelFamily::gaussian_fading_with_box(vec![0.0, 1.0], touching).is_err());
    }

    #[test]
    fn mimo_reduces_to_scalar_fading() {
        let scalar = Arc::new(ChannelFamily::make_gaussian_fading(vec![-1.0, 0.5]).unwrap());
        let mimo = Arc::new(
            ChannelFamily::mimo_gaussian_with_box(
                vec![vec![-1.0], vec![0.5]],
                1,
                scalar.parameter_set().outer().clone(),
            )
            .unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let theta = scalar.parameter_set().outer().sample(&mut rng);
            let x = rng.random_range(0..2);
            let y = Output::Real(rng.random_range(-5.0..5.0));
            let a = scalar.point(theta.clone()).unwrap().log_density(x, &y);
            let yv = Output::Vector(vec![match y {
                Output::Real(v) => v,
                _ => unreachable!(),
            }]);
            let _ = yv;
            let b = mimo.point(theta).unwrap().log_density(x, &y);
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn mimo_bivariate_standard_normal_mode() {
        let fam = Arc::new(
            ChannelFamily::make_mimo_gaussian(vec![vec![0.0, 0.0], vec![1.0, 0.0]], 2).unwrap(),
        );
        let theta = ChannelFamily::mimo_natural_parameters(
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        let pt = fam.point(theta).unwrap();
        let v = pt.log_density(0, &Output::Vector(vec![0.0, 0.0])).exp();
        assert_abs_diff_eq!(v, 0.159_154_943_091_895_34, epsilon = 1e-12);
    }

    #[test]
    fn mimo_density_integrates_to_one_by_tensor_quadrature() {
        let fam = Arc::new(
            ChannelFamily::make_mimo_gaussian(vec![vec![0.3], vec![-0.7]], 2).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = fam.parameter_set().outer().shrink(0.2).sample(&mut rng);
        let pt = fam.point(theta).unwrap();
        let Law::Gaussian(law) = pt.conditional(1) else { panic!() };
        let (m, c) = (law.mean().clone(), law.covariance().clone());
        let half: Vec<f64> = (0..2).map(|i| 12.0 * c[(i, i)].sqrt()).collect();
        let panels = 24;
        let mut rules = Vec::new();
        for i in 0..2 {
            let mut r = Vec::new();
            for p in 0..panels {
                let a = m[i] - half[i] + 2.0 * half[i] * p as f64 / panels as f64;
                r.extend(gauss_legendre(12, a, a + 2.0 * half[i] / panels as f64).unwrap());
            }
            rules.push(r);
        }
        let mut total = 0.0;
        for &(y0, w0) in &rules[0] {
            for &(y1, w1) in &rules[1] {
                total += w0 * w1 * pt.log_density(1, &Output::Vector(vec![y0, y1])).exp();
            }
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn mimo_rejects_indefinite_precision_box() {
        let b = ParamBox::new(
            vec![0.5, -2.0, 0.5, -1.0, -1.0, -1.0, -1.0],
            vec![2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        assert!(ChannelFamily::mimo_gaussian_with_box(vec![vec![0.0], vec![1.0]], 2, b).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_calibrated() {
        let fam = dmc(2, 1);
        let theta =
            ChannelFamily::dmc_natural_parameters(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let pt = fam.point(theta).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100_000)
                .map(|_| pt.sample_output(0, &mut rng))
                .collect::<Vec<_>>()
        };
        let a = draw(1);
        assert_eq!(a, draw(1));
        let flips = a.iter().filter(|y| **y == Output::Symbol(1)).count() as f64 / 1e5;
        assert!((flips - 0.1).abs() < 0.01, "flip rate {flips}");

        let g = Arc::new(ChannelFamily::make_gaussian_fading(vec![0.0, 1.0]).unwrap());
        let gp = g.point(vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mean: f64 = (0..100_000)
            .map(|_| match gp.sample_output(1, &mut rng) {
                Output::Real(v) => v,
                _ => unreachable!(),
            })
            .sum::<f64>()
            / 1e5;
        assert!(mean.abs() < 0.02, "sample mean {mean}");
    }

    #[test]
    fn fisher_information_matches_closed_forms() {
        let fam = dmc(2, 1);
        let pt = fam.point(vec![0.0, 1.0]).unwrap();
        let j = pt.fisher_information(0).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 0.25, epsilon = 1e-15);

        // Analytic Gaussian Hessian against central differences of φ.
        let g = Arc::new(ChannelFamily::make_gaussian_fading(vec![-1.0, 2.0]).unwrap());
        let p = g.point(vec![1.7, 0.4, -0.3]).unwrap();
        for x in 0..2 {
            let comp = g.component(x);
            let analytic = p.fisher_information(x).unwrap();
            let fd = finite_difference_hessian(|t| comp.potential(t), p.theta(), &[0, 1, 2]);
            assert!((analytic - fd).abs().max() < 1e-5);
        }
    }

    #[test]
    fn fisher_information_is_psd_and_needs_interior_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Arc::new(ChannelFamily::make_gaussian_fading(vec![-1.0, 2.0]).unwrap());
        let d = dmc(3, 2);
        for fam in [&g, &d] {
            for _ in 0..20 {
                let theta = fam.parameter_set().outer().shrink(0.01).sample(&mut rng);
                let pt = fam.point(theta).unwrap();
                for x in 0..fam.inputs() {
                    let j = pt.fisher_information(x).unwrap();
                    let eig = j.symmetric_eigenvalues();
                    assert!(eig.iter().all(|e| *e > -1e-9), "eigenvalues {eig}");
                }
            }
        }
        let edge = d.point(vec![6.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(edge.fisher_information(0), Err(Error::NotInterior { .. })));
        assert!(edge.fisher_information(1).is_ok());
    }

    #[test]
    fn outside_points_are_rejected() {
        let fam = dmc(2, 1);
        assert!(matches!(
            fam.point(vec![7.0, 0.0]),
            Err(Error::OutsideParameterSet { .. })
        ));
        assert!(fam.point(vec![0.0]).is_err());
    }

    #[test]
    fn nested_boxes_tag_family_c() {
        let fam = ChannelFamily::make_gaussian_fading(vec![0.0, 1.0]).unwrap();
        let inner = ParamBox::new(vec![0.5, -1.0, -1.0], vec![2.0, 1.0, 1.0]).unwrap();
        let outer = ParamBox::new(vec![0.25, -2.0, -2.0], vec![4.0, 2.0, 2.0]).unwrap();
        let nested = fam
            .clone()
            .with_nested_boxes(vec![inner.clone(), outer.clone()])
            .unwrap();
        assert_eq!(nested.tag(), ConditionTag::C);
        assert!(fam.with_nested_boxes(vec![outer, inner]).is_err());
    }
}
