//! Universal output distributions: Bayes mixtures `∫ P_θⁿ w(dθ)` over a
//! continuous prior, the grid mixture `Q_E` on `(1/√n)ℤ^k ∩ Θ`, the nested
//! grid mixture `Q_F`, the per-codeword product mixture `Q_{x^n}` and the
//! output mixture `Q_P`. Also Monte Carlo / exact Rényi divergence
//! estimates against these mixtures and the Clarke–Barron slope study.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channels::{ChannelFamily, ChannelPoint, ConditionTag, FamilyKind, Output, ParamBox};
use crate::combinatorics::{enumerate_types, log_multinomial, CompositionType};
use crate::error::{invalid, Error, Result};
use crate::numerics::{
    gauss_legendre, least_squares, ln_gamma, log_integrate, log_sum_exp, trial_seed, LinearFit,
};

/// Default Gauss–Legendre nodes per dimension for the uniform-box prior.
pub const DEFAULT_BOX_NODES: usize = 32;
/// Largest number of prior nodes a node-based mixture may hold.
pub const MAX_PRIOR_NODES: usize = 2_000_000;
/// Largest number of terms in the exact split-sum evaluation of `Q_P`.
pub const MAX_SPLIT_TERMS: f64 = 5e6;

/// How the prior over `Θ` is realised.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PriorKind {
    /// Dirichlet(α) on every transition row of a DMC (α = 1 is uniform on
    /// the simplex). Continuous and positive on the natural parameter space.
    Dirichlet { alpha: f64 },
    /// Uniform density on the parameter box, tensor Gauss–Legendre nodes.
    UniformBox { nodes: usize },
    /// Uniform weights on `(1/√n)ℤ^k ∩ Θ`, anchored at the lower corner.
    GridE,
    /// Shell weights `6/(π² i²)` over grids of the nested boxes; shells past
    /// the last represented box repeat it. `truncate = Some(N)` keeps only
    /// the first `N` shells and renormalises.
    NestedGridF { truncate: Option<usize> },
    /// A single parameter value (testing and oracles).
    Point { theta: Vec<f64> },
}

impl PriorKind {
    fn name(&self) -> &'static str {
        match self {
            Self::Dirichlet { .. } => "dirichlet",
            Self::UniformBox { .. } => "uniform-box",
            Self::GridE => "grid-e",
            Self::NestedGridF { .. } => "nested-grid-f",
            Self::Point { .. } => "point",
        }
    }

    /// Default prior for a family: continuous for tag A, grid for tag B,
    /// nested grid for tag C.
    pub fn default_for(family: &ChannelFamily) -> Self {
        match (family.tag(), family.kind()) {
            (ConditionTag::A, FamilyKind::Dmc { .. }) => Self::Dirichlet { alpha: 1.0 },
            (ConditionTag::A, _) => Self::UniformBox {
                nodes: DEFAULT_BOX_NODES,
            },
            (ConditionTag::B, _) => Self::GridE,
            (ConditionTag::C, _) => Self::NestedGridF { truncate: None },
        }
    }

    /// Rejects priors the family's condition tag does not admit.
    pub fn check_compatible(&self, family: &ChannelFamily) -> Result<()> {
        let incompatible = || Error::IncompatiblePrior {
            prior: self.name().into(),
            tag: family.tag().to_string(),
        };
        match self {
            Self::Dirichlet { alpha } => {
                if !matches!(family.kind(), FamilyKind::Dmc { .. }) || family.tag() != ConditionTag::A {
                    return Err(incompatible());
                }
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return invalid(format!("Dirichlet parameter must be positive, got {alpha}"));
                }
            }
            Self::UniformBox { nodes } => {
                if family.tag() != ConditionTag::A {
                    return Err(incompatible());
                }
                if *nodes < 2 {
                    return invalid("uniform-box prior needs >= 2 nodes per dimension");
                }
            }
            Self::GridE => {
                if family.tag() == ConditionTag::C {
                    return Err(incompatible());
                }
            }
            Self::NestedGridF { truncate } => {
                if *truncate == Some(0) {
                    return invalid("truncation must keep at least one shell");
                }
            }
            Self::Point { theta } => {
                if !family.parameter_set().contains(theta) {
                    return Err(Error::OutsideParameterSet {
                        theta: theta.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Priors for the per-input mixtures `w_x` and for the output mixture `w_P`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorSpec {
    pub per_input: PriorKind,
    pub output: PriorKind,
}

impl PriorSpec {
    pub fn default_for(family: &ChannelFamily) -> Self {
        let k = PriorKind::default_for(family);
        Self {
            per_input: k.clone(),
            output: k,
        }
    }

    pub fn uniform(kind: PriorKind) -> Self {
        Self {
            per_input: kind.clone(),
            output: kind,
        }
    }
}

/// Which i.i.d. law the mixture is built over.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MixtureTarget {
    /// `W_{θ,x}` for one input symbol.
    Input(usize),
    /// `W_θ·P` for an input distribution `P`.
    Output(Vec<f64>),
}

#[derive(Debug, Clone)]
enum Evaluator {
    DirichletInput {
        alpha: f64,
    },
    DirichletOutput {
        alpha: f64,
        input_dist: Vec<f64>,
    },
    /// `table[j][y] = ln P_{θ_j}(y)` for finite outputs.
    NodesFinite {
        log_weights: Vec<f64>,
        table: Vec<Vec<f64>>,
    },
    /// Exponential-family sufficient statistics for one input block.
    NodesExpFamily {
        log_weights: Vec<f64>,
        thetas: Vec<Vec<f64>>,
        potentials: Vec<f64>,
    },
    /// Direct evaluation of `Π_i (W_θ·P)(y_i)` for continuous outputs.
    NodesOutputDirect {
        log_weights: Vec<f64>,
        points: Vec<ChannelPoint>,
    },
}

/// A universal mixture over i.i.d. blocks of length `n`.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    family: Arc<ChannelFamily>,
    target: MixtureTarget,
    prior: PriorKind,
    n: usize,
    /// Parameter nodes and their prior log-weights (node-based priors only).
    nodes: Vec<(f64, Vec<f64>)>,
    eval: Evaluator,
}

/// Coordinates of `θ` the target law depends on.
fn target_coords(family: &ChannelFamily, target: &MixtureTarget) -> Vec<usize> {
    match target {
        MixtureTarget::Input(x) => family.component(*x).selector(),
        MixtureTarget::Output(_) => (0..family.dim()).collect(),
    }
}

fn sub_box(b: &ParamBox, coords: &[usize]) -> ParamBox {
    ParamBox::new(
        coords.iter().map(|&i| b.lower()[i]).collect(),
        coords.iter().map(|&i| b.upper()[i]).collect(),
    )
    .expect("sub-box of a valid box")
}

/// `(1/√n)ℤ^k ∩ box`, anchored at `anchor`, as per-axis node lists.
fn lattice_axes(b: &ParamBox, anchor: &[f64], n: usize) -> Vec<Vec<f64>> {
    let h = 1.0 / (n as f64).sqrt();
    (0..b.dim())
        .map(|i| {
            let start = ((b.lower()[i] - anchor[i]) / h - 1e-9).ceil().max(0.0) as usize;
            let stop = ((b.upper()[i] - anchor[i]) / h + 1e-9).floor();
            if stop < start as f64 {
                return Vec::new();
            }
            (start..=stop as usize).map(|j| anchor[i] + j as f64 * h).collect()
        })
        .collect()
}

fn axes_count(axes: &[Vec<f64>]) -> f64 {
    axes.iter().map(|a| a.len() as f64).product()
}

fn tensor_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for p in &out {
            for &v in axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Number of lattice points `|Θ_[n]|` of the grid mixture on a box.
pub fn grid_size(b: &ParamBox, n: usize) -> f64 {
    axes_count(&lattice_axes(b, b.lower(), n))
}

/// Shell weights for the nested-grid mixture with `represented` boxes:
/// exact tail (assigned to the outermost box) or truncation to `N` shells.
pub fn nested_shell_weights(represented: usize, truncate: Option<usize>) -> Vec<f64> {
    let w = |i: usize| 6.0 / (PI * PI * (i * i) as f64);
    match truncate {
        None => {
            let mut v: Vec<f64> = (1..=represented).map(w).collect();
            let head: f64 = v[..represented - 1].iter().sum();
            v[represented - 1] = 1.0 - head;
            v
        }
        Some(total) => {
            let mut v = vec![0.0; represented];
            for i in 1..=total {
                v[(i - 1).min(represented - 1)] += w(i);
            }
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        }
    }
}

impl MixtureModel {
    /// Builds `Q` for blocks of length `n` over the target law.
    pub fn new(
        family: Arc<ChannelFamily>,
        prior: PriorKind,
        target: MixtureTarget,
        n: usize,
    ) -> Result<Self> {
        if n == 0 {
            return invalid("mixture block length must be >= 1");
        }
        prior.check_compatible(&family)?;
        match &target {
            MixtureTarget::Input(x) if *x >= family.inputs() => {
                return invalid(format!("input {x} out of range"));
            }
            MixtureTarget::Output(p) => crate::numerics::check_distribution(p, family.inputs())?,
            _ => {}
        }
        let finite = family.output_space().cardinality().is_some();
        if let PriorKind::Dirichlet { alpha } = prior {
            let eval = match &target {
                MixtureTarget::Input(_) => Evaluator::DirichletInput { alpha },
                MixtureTarget::Output(p) => Evaluator::DirichletOutput {
                    alpha,
                    input_dist: p.clone(),
                },
            };
            return Ok(Self {
                family,
                target,
                prior,
                n,
                nodes: Vec::new(),
                eval,
            });
        }
        let nodes = Self::prior_nodes(&family, &prior, &target, n)?;
        let log_weights: Vec<f64> = nodes.iter().map(|(w, _)| *w).collect();
        let points: Vec<ChannelPoint> = nodes
            .iter()
            .map(|(_, t)| ChannelPoint::new(Arc::clone(&family), t.clone()))
            .collect::<Result<_>>()?;
        let eval = match (&target, finite) {
            (MixtureTarget::Input(x), true) => Evaluator::NodesFinite {
                log_weights,
                table: points.iter().map(|p| p.transition_row(*x).unwrap().iter().map(|v| v.ln()).collect()).collect(),
            },
            (MixtureTarget::Output(dist), true) => Evaluator::NodesFinite {
                log_weights,
                table: points
                    .iter()
                    .map(|p| {
                        let m = family.output_space().cardinality().unwrap();
                        (0..m)
                            .map(|y| {
                                (0..dist.len())
                                    .map(|x| dist[x] * p.transition_row(x).unwrap()[y])
                                    .sum::<f64>()
                                    .ln()
                            })
                            .collect()
                    })
                    .collect(),
            },
            (MixtureTarget::Input(x), false) => {
                let comp = family.component(*x);
                let sel = comp.selector();
                Evaluator::NodesExpFamily {
                    log_weights,
                    thetas: nodes.iter().map(|(_, t)| sel.iter().map(|&i| t[i]).collect()).collect(),
                    potentials: nodes.iter().map(|(_, t)| comp.potential(t)).collect(),
                }
            }
            (MixtureTarget::Output(_), false) => Evaluator::NodesOutputDirect { log_weights, points },
        };
        Ok(Self {
            family,
            target,
            prior,
            n,
            nodes,
            eval,
        })
    }

    fn prior_nodes(
        family: &ChannelFamily,
        prior: &PriorKind,
        target: &MixtureTarget,
        n: usize,
    ) -> Result<Vec<(f64, Vec<f64>)>> {
        let coords = target_coords(family, target);
        let outer = family.parameter_set().outer();
        // Coordinates the target ignores are pinned at the box midpoint.
        let embed = |vals: &[f64]| {
            let mut t: Vec<f64> = outer
                .lower()
                .iter()
                .zip(outer.upper())
                .map(|(l, u)| 0.5 * (l + u))
                .collect();
            for (&i, v) in coords.iter().zip(vals) {
                t[i] = *v;
            }
            t
        };
        let too_many = |count: f64| Error::CapExceeded {
            what: "mixture prior nodes",
            count,
            cap: MAX_PRIOR_NODES as f64,
        };
        match prior {
            PriorKind::Point { theta } => Ok(vec![(0.0, theta.clone())]),
            PriorKind::UniformBox { nodes } => {
                let b = sub_box(outer, &coords);
                let count = (*nodes as f64).powi(coords.len() as i32);
                if count > MAX_PRIOR_NODES as f64 {
                    return Err(too_many(count));
                }
                let rules: Vec<Vec<(f64, f64)>> = (0..b.dim())
                    .map(|i| gauss_legendre(*nodes, b.lower()[i], b.upper()[i]))
                    .collect::<Result<_>>()?;
                let vol = b.volume();
                let axes: Vec<Vec<f64>> = (0..rules.len()).map(|i| (0..rules[i].len()).map(|j| j as f64).collect()).collect();
                Ok(tensor_points(&axes)
                    .into_iter()
                    .map(|idx| {
                        let vals: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| rules[i][j as usize].0).collect();
                        let w: f64 = idx.iter().enumerate().map(|(i, &j)| rules[i][j as usize].1).product();
                        ((w / vol).ln(), embed(&vals))
                    })
                    .collect())
            }
            PriorKind::GridE => {
                let b = sub_box(outer, &coords);
                let axes = lattice_axes(&b, b.lower(), n);
                let count = axes_count(&axes);
                if count > MAX_PRIOR_NODES as f64 {
                    return Err(too_many(count));
                }
                if count == 0.0 {
                    return invalid("empty parameter grid");
                }
                let lw = -count.ln();
                Ok(tensor_points(&axes).into_iter().map(|v| (lw, embed(&v))).collect())
            }
            PriorKind::NestedGridF { truncate } => {
                let shells = family.parameter_set().shells();
                let outer_sub = sub_box(outer, &coords);
                let anchor = outer_sub.lower().to_vec();
                let axes = lattice_axes(&outer_sub, &anchor, n);
                let count = axes_count(&axes);
                if count > MAX_PRIOR_NODES as f64 {
                    return Err(too_many(count));
                }
                let weights = nested_shell_weights(shells.len(), *truncate);
                let points = tensor_points(&axes);
                let subs: Vec<ParamBox> = shells.iter().map(|s| sub_box(s, &coords)).collect();
                let inside = |b: &ParamBox, p: &[f64]| {
                    p.iter()
                        .enumerate()
                        .all(|(i, v)| *v >= b.lower()[i] - 1e-9 && *v <= b.upper()[i] + 1e-9)
                };
                let sizes: Vec<usize> = subs
                    .iter()
                    .map(|b| points.iter().filter(|p| inside(b, p)).count())
                    .collect();
                // Mass of shells whose grid is empty at this n goes to the outermost grid.
                let mut eff = weights.clone();
                for i in 0..eff.len() - 1 {
                    if sizes[i] == 0 {
                        let last = eff.len() - 1;
                        eff[last] += eff[i];
                        eff[i] = 0.0;
                    }
                }
                if sizes[sizes.len() - 1] == 0 {
                    return invalid("empty parameter grid");
                }
                Ok(points
                    .into_iter()
                    .map(|p| {
                        let w: f64 = subs
                            .iter()
                            .enumerate()
                            .filter(|(i, b)| eff[*i] > 0.0 && inside(b, &p))
                            .map(|(i, _)| eff[i] / sizes[i] as f64)
                            .sum();
                        (w.ln(), embed(&p))
                    })
                    .filter(|(w, _)| w.is_finite())
                    .collect())
            }
            PriorKind::Dirichlet { .. } => unreachable!("closed-form prior"),
        }
    }

    pub fn family(&self) -> &Arc<ChannelFamily> {
        &self.family
    }

    pub fn target(&self) -> &MixtureTarget {
        &self.target
    }

    pub fn prior(&self) -> &PriorKind {
        &self.prior
    }

    /// Block length the grid spacing was chosen for.
    pub fn block_length(&self) -> usize {
        self.n
    }

    /// Prior nodes `(ln weight, θ)`; empty for closed-form priors.
    pub fn nodes(&self) -> &[(f64, Vec<f64>)] {
        &self.nodes
    }

    /// Dimension of the prior (number of coordinates the target depends on).
    pub fn dim(&self) -> usize {
        target_coords(&self.family, &self.target).len()
    }

    /// Log-density `ln w(θ)` of a continuous prior with respect to Lebesgue
    /// measure on the target coordinates; `None` for discrete priors.
    pub fn log_prior_density(&self, theta: &[f64]) -> Option<f64> {
        let coords = target_coords(&self.family, &self.target);
        match (&self.prior, &self.target) {
            (PriorKind::UniformBox { .. }, _) => {
                Some(-sub_box(self.family.parameter_set().outer(), &coords).volume().ln())
            }
            (PriorKind::Dirichlet { alpha }, _) => {
                // Dirichlet on p pulled back through the softmax chart; the
                // Jacobian of θ ↦ (p_1..p_m) is Π_{y=0}^m p_y.
                let m1 = self.family.output_space().cardinality()?;
                let rows: Vec<usize> = match &self.target {
                    MixtureTarget::Input(x) => vec![*x],
                    MixtureTarget::Output(_) => (0..self.family.inputs()).collect(),
                };
                let pt = ChannelPoint::new(Arc::clone(&self.family), theta.to_vec()).ok()?;
                let mut total = 0.0;
                for x in rows {
                    let row = pt.transition_row(x)?;
                    total += ln_gamma(m1 as f64 * alpha) - m1 as f64 * ln_gamma(*alpha)
                        + alpha * row.iter().map(|p| p.ln()).sum::<f64>();
                }
                Some(total)
            }
            _ => None,
        }
    }

    fn symbols(&self) -> Result<usize> {
        self.family
            .output_space()
            .cardinality()
            .ok_or_else(|| Error::Unsupported("count statistics need a finite output space".into()))
    }

    /// `ln Q(yⁿ)` for any sequence with output counts `counts` (finite outputs).
    pub fn log_density_counts(&self, counts: &[usize]) -> Result<f64> {
        let m1 = self.symbols()?;
        if counts.len() != m1 {
            return invalid(format!("expected {m1} output counts, got {}", counts.len()));
        }
        Ok(match &self.eval {
            Evaluator::DirichletInput { alpha } => dirichlet_moment(*alpha, counts),
            Evaluator::DirichletOutput { alpha, input_dist } => {
                dirichlet_output_log_density(*alpha, input_dist, counts)?
            }
            Evaluator::NodesFinite { log_weights, table } => {
                let terms: Vec<f64> = log_weights
                    .iter()
                    .zip(table)
                    .map(|(w, row)| {
                        w + counts
                            .iter()
                            .zip(row)
                            .filter(|(c, _)| **c > 0)
                            .map(|(c, l)| *c as f64 * l)
                            .sum::<f64>()
                    })
                    .collect();
                log_sum_exp(&terms)
            }
            _ => unreachable!("finite outputs use count evaluators"),
        })
    }

    /// `ln Q(yⁿ)`; `-inf` for sequences outside the support.
    pub fn log_density(&self, ys: &[Output]) -> f64 {
        if let Ok(m1) = self.symbols() {
            let mut counts = vec![0usize; m1];
            for y in ys {
                match y {
                    Output::Symbol(s) if *s < m1 => counts[*s] += 1,
                    _ => return f64::NEG_INFINITY,
                }
            }
            return self.log_density_counts(&counts).unwrap_or(f64::NEG_INFINITY);
        }
        match &self.eval {
            Evaluator::NodesExpFamily {
                log_weights,
                thetas,
                potentials,
            } => {
                let MixtureTarget::Input(x) = self.target else { unreachable!() };
                let comp = self.family.component(x);
                let mut stats = vec![0.0; comp.dim()];
                let mut base = 0.0;
                for y in ys {
                    base += comp.base_log_density(y);
                    for (s, g) in stats.iter_mut().zip(comp.generators(y)) {
                        *s += g;
                    }
                }
                let len = ys.len() as f64;
                let terms: Vec<f64> = log_weights
                    .iter()
                    .zip(thetas)
                    .zip(potentials)
                    .map(|((w, t), phi)| {
                        w + t.iter().zip(&stats).map(|(a, b)| a * b).sum::<f64>() - len * phi
                    })
                    .collect();
                base + log_sum_exp(&terms)
            }
            Evaluator::NodesOutputDirect { log_weights, points } => {
                let MixtureTarget::Output(dist) = &self.target else { unreachable!() };
                let terms: Vec<f64> = log_weights
                    .iter()
                    .zip(points)
                    .map(|(w, p)| {
                        w + ys
                            .iter()
                            .map(|y| {
                                let t: Vec<f64> = dist
                                    .iter()
                                    .enumerate()
                                    .filter(|(_, q)| **q > 0.0)
                                    .map(|(x, q)| q.ln() + p.log_density(x, y))
                                    .collect();
                                log_sum_exp(&t)
                            })
                            .sum::<f64>()
                    })
                    .collect();
                log_sum_exp(&terms)
            }
            _ => unreachable!("finite evaluators handled above"),
        }
    }

    /// The i.i.d. law `P_θ` the mixture is built over, evaluated per symbol.
    fn member_log_density(&self, point: &ChannelPoint, y: &Output) -> f64 {
        match &self.target {
            MixtureTarget::Input(x) => point.log_density(*x, y),
            MixtureTarget::Output(dist) => {
                let t: Vec<f64> = dist
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| **q > 0.0)
                    .map(|(x, q)| q.ln() + point.log_density(x, y))
                    .collect();
                log_sum_exp(&t)
            }
        }
    }

    fn member_row(&self, point: &ChannelPoint) -> Option<Vec<f64>> {
        let m1 = self.family.output_space().cardinality()?;
        Some(match &self.target {
            MixtureTarget::Input(x) => point.transition_row(*x)?,
            MixtureTarget::Output(dist) => (0..m1)
                .map(|y| {
                    dist.iter()
                        .enumerate()
                        .map(|(x, q)| q * point.transition_row(x).unwrap()[y])
                        .sum()
                })
                .collect(),
        })
    }

    fn sample_member(&self, point: &ChannelPoint, rng: &mut ChaCha8Rng) -> Output {
        match &self.target {
            MixtureTarget::Input(x) => point.sample_output(*x, rng),
            MixtureTarget::Output(dist) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = dist.len() - 1;
                for (x, q) in dist.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        pick = x;
                        break;
                    }
                }
                point.sample_output(pick, rng)
            }
        }
    }
}

/// `ln E[Π_y p_y^{c_y}]` under Dirichlet(α,…,α): the probability of one
/// sequence with counts `c` under the Dirichlet–multinomial mixture.
pub fn dirichlet_moment(alpha: f64, counts: &[usize]) -> f64 {
    let m1 = counts.len() as f64;
    let n: usize = counts.iter().sum();
    let mut v = ln_gamma(m1 * alpha) - ln_gamma(m1 * alpha + n as f64);
    for &c in counts {
        if c > 0 {
            v += ln_gamma(alpha + c as f64) - ln_gamma(alpha);
        }
    }
    v
}

/// Density of `Σ_x a_x U_x` for independent uniforms and `Σ a_x = 1`,
/// using the symmetry `f(u) = f(1−u)` to keep cancellation small.
fn uniform_sum_density(a: &[f64], u: f64) -> f64 {
    let u = u.min(1.0 - u);
    if u <= 0.0 {
        return 0.0;
    }
    let d = a.len();
    if d == 1 {
        return 1.0;
    }
    let mut total = 0.0;
    for mask in 0u32..(1 << d) {
        let shift: f64 = (0..d).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).sum();
        if shift < u {
            let term = (u - shift).powi(d as i32 - 1);
            total += if mask.count_ones() % 2 == 0 { term } else { -term };
        }
    }
    let norm: f64 = (1..d).map(|k| k as f64).product::<f64>() * a.iter().product::<f64>();
    (total / norm).max(0.0)
}

/// `ln Q_P(yⁿ)` for the output mixture under independent Dirichlet(α) rows.
fn dirichlet_output_log_density(alpha: f64, input_dist: &[f64], counts: &[usize]) -> Result<f64> {
    let active: Vec<f64> = input_dist.iter().copied().filter(|p| *p > 0.0).collect();
    if active.len() == 1 {
        return Ok(dirichlet_moment(alpha, counts));
    }
    if counts.len() == 2 && alpha == 1.0 && active.len() <= 16 {
        // Binary outputs, uniform rows: u = Σ P(x) p_x(1) has a piecewise
        // polynomial density, so Q_P = ∫ f(u) u^{c₁} (1−u)^{c₀} du.
        let (c0, c1) = (counts[0] as f64, counts[1] as f64);
        let d = active.len();
        let mut breaks: Vec<f64> = (0u32..(1 << d))
            .map(|mask| (0..d).filter(|i| mask >> i & 1 == 1).map(|i| active[i]).sum())
            .collect();
        let n = c0 + c1;
        if n > 0.0 {
            breaks.push(c1 / n);
            let w = (c1 * c0 / n.max(1.0)).sqrt().max(1.0) / n;
            breaks.push(c1 / n - 4.0 * w);
            breaks.push(c1 / n + 4.0 * w);
        }
        return log_integrate(
            |u| {
                let f = uniform_sum_density(&active, u);
                if f <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mut v = f.ln();
                if c1 > 0.0 {
                    v += c1 * u.ln();
                }
                if c0 > 0.0 {
                    v += c0 * (1.0 - u).ln();
                }
                v
            },
            0.0,
            1.0,
            &breaks,
            1e-11,
        );
    }
    dirichlet_output_split_sum(alpha, input_dist, counts)
}

/// Exact `ln Q_P(yⁿ)` by expanding `Π_y (Σ_x P(x) p_x(y))^{c_y}` over the
/// per-input splits of every output count.
pub fn dirichlet_output_split_sum(alpha: f64, input_dist: &[f64], counts: &[usize]) -> Result<f64> {
    let active: Vec<(usize, f64)> = input_dist
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, p)| *p > 0.0)
        .collect();
    let d = active.len();
    let m1 = counts.len();
    let terms_estimate: f64 = counts
        .iter()
        .map(|&c| crate::combinatorics::number_of_types(c.max(1), d.max(2)))
        .product();
    if terms_estimate > MAX_SPLIT_TERMS {
        return Err(Error::CapExceeded {
            what: "split-sum terms for the output mixture",
            count: terms_estimate,
            cap: MAX_SPLIT_TERMS,
        });
    }
    let log_p: Vec<f64> = active.iter().map(|(_, p)| p.ln()).collect();
    let mut per_input = vec![vec![0usize; m1]; d];
    let mut acc = crate::numerics::LogAccumulator::new();
    fn splits(c: usize, parts: usize) -> Vec<Vec<usize>> {
        if parts == 1 {
            return vec![vec![c]];
        }
        let mut out = Vec::new();
        for first in 0..=c {
            for mut rest in splits(c - first, parts - 1) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }
    let split_lists: Vec<Vec<Vec<usize>>> = counts.iter().map(|&c| splits(c, d)).collect();
    #[allow(clippy::too_many_arguments)]
    fn rec(
        y: usize,
        log_term: f64,
        split_lists: &[Vec<Vec<usize>>],
        per_input: &mut Vec<Vec<usize>>,
        log_p: &[f64],
        alpha: f64,
        acc: &mut crate::numerics::LogAccumulator,
    ) {
        if y == split_lists.len() {
            let moments: f64 = per_input.iter().map(|c| dirichlet_moment(alpha, c)).sum();
            acc.add(log_term + moments);
            return;
        }
        for split in &split_lists[y] {
            let mut t = log_term + log_multinomial(split);
            for (x, &c) in split.iter().enumerate() {
                per_input[x][y] = c;
                t += c as f64 * log_p[x];
            }
            rec(y + 1, t, split_lists, per_input, log_p, alpha, acc);
        }
    }
    rec(0, 0.0, &split_lists, &mut per_input, &log_p, alpha, &mut acc);
    Ok(acc.value())
}

/// The product mixture `Q_{x^n}` over codewords of one composition: one
/// per-input mixture for each input block, built for the block length `n_x`.
#[derive(Debug, Clone)]
pub struct CodewordMixture {
    composition: CompositionType,
    blocks: Vec<Option<MixtureModel>>,
}

impl CodewordMixture {
    pub fn new(family: Arc<ChannelFamily>, prior: &PriorKind, composition: &CompositionType) -> Result<Self> {
        if composition.d() != family.inputs() {
            return invalid("composition and family disagree on the input alphabet");
        }
        let blocks = composition
            .counts()
            .iter()
            .enumerate()
            .map(|(x, &nx)| {
                if nx == 0 {
                    Ok(None)
                } else {
                    MixtureModel::new(Arc::clone(&family), prior.clone(), MixtureTarget::Input(x), nx).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            composition: composition.clone(),
            blocks,
        })
    }

    pub fn composition(&self) -> &CompositionType {
        &self.composition
    }

    pub fn block(&self, x: usize) -> Option<&MixtureModel> {
        self.blocks[x].as_ref()
    }

    /// `ln Q_{x^n}(yⁿ) = Σ_x ln Q_{w_x,x}(y restricted to {i : x_i = x})`.
    pub fn log_density(&self, xs: &[usize], ys: &[Output]) -> f64 {
        assert_eq!(xs.len(), ys.len(), "codeword and output lengths differ");
        let mut total = 0.0;
        for (x, block) in self.blocks.iter().enumerate() {
            let sub: Vec<Output> = xs
                .iter()
                .zip(ys)
                .filter(|(xi, _)| **xi == x)
                .map(|(_, y)| y.clone())
                .collect();
            match block {
                Some(model) => total += model.log_density(&sub),
                None if sub.is_empty() => {}
                None => return f64::NEG_INFINITY,
            }
        }
        total
    }

    /// Same, from the joint count matrix `joint[x][y]` (finite outputs).
    pub fn log_density_joint_counts(&self, joint: &[Vec<usize>]) -> Result<f64> {
        let mut total = 0.0;
        for (x, block) in self.blocks.iter().enumerate() {
            match block {
                Some(model) => total += model.log_density_counts(&joint[x])?,
                None if joint[x].iter().all(|&c| c == 0) => {}
                None => return Ok(f64::NEG_INFINITY),
            }
        }
        Ok(total)
    }
}

/// `ln Q_{x^n}(yⁿ)` for a single evaluation (builds the block mixtures).
pub fn codeword_mixture_logdensity(
    family: &Arc<ChannelFamily>,
    prior: &PriorKind,
    xs: &[usize],
    ys: &[Output],
) -> Result<f64> {
    let composition = CompositionType::of_word(xs, family.inputs())?;
    Ok(CodewordMixture::new(Arc::clone(family), prior, &composition)?.log_density(xs, ys))
}

/// How to evaluate `D_{1+s}(P_θⁿ‖Qⁿ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RenyiMethod {
    /// Exact summation over output-count vectors (finite outputs).
    Exact,
    /// Monte Carlo with the given number of trials and master seed.
    MonteCarlo { trials: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenyiEstimate {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: RenyiMethod,
    /// Set when the top 1% of Monte Carlo samples carry over half the mass.
    pub heavy_tail: bool,
}

/// `D_{1+s}(P_θⁿ‖Qⁿ)` where `P_θ` is the mixture's target law at `point`
/// and `n` is the mixture's block length.
pub fn estimate_renyi_to_mixture(
    point: &ChannelPoint,
    model: &MixtureModel,
    s: f64,
    method: RenyiMethod,
) -> Result<RenyiEstimate> {
    if !(s > 0.0) {
        return invalid(format!("s must be positive, got {s}"));
    }
    let n = model.block_length();
    match method {
        RenyiMethod::Exact => {
            let row = model
                .member_row(point)
                .ok_or_else(|| Error::Unsupported("exact Rényi evaluation needs finite outputs".into()))?;
            let log_row: Vec<f64> = row.iter().map(|p| p.ln()).collect();
            let types = enumerate_types(n, row.len())?;
            let mut acc = crate::numerics::LogAccumulator::new();
            for t in &types {
                let c = t.counts();
                let lp: f64 = c.iter().zip(&log_row).filter(|(k, _)| **k > 0).map(|(k, l)| *k as f64 * l).sum();
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let lq = model.log_density_counts(c)?;
                acc.add(log_multinomial(c) + (1.0 + s) * lp - s * lq);
            }
            let d = acc.value() / s;
            Ok(RenyiEstimate {
                estimate: d,
                ci_low: d,
                ci_high: d,
                method,
                heavy_tail: false,
            })
        }
        RenyiMethod::MonteCarlo { trials, seed } => {
            if trials < 1000 {
                return invalid("Monte Carlo Rényi estimates need >= 1000 trials");
            }
            let row = model.member_row(point);
            let logs: Vec<f64> = (0..trials as u64)
                .into_par_iter()
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, n, t));
                    match &row {
                        Some(r) => {
                            let c = sample_counts(r, n, &mut rng);
                            let lp: f64 = c.iter().zip(r).filter(|(k, _)| **k > 0).map(|(k, p)| *k as f64 * p.ln()).sum();
                            lp - model.log_density_counts(&c).expect("finite model")
                        }
                        None => {
                            let ys: Vec<Output> = (0..n).map(|_| model.sample_member(point, &mut rng)).collect();
                            let lp: f64 = ys.iter().map(|y| model.member_log_density(point, y)).sum();
                            lp - model.log_density(&ys)
                        }
                    }
                })
                .collect();
            let scaled: Vec<f64> = logs.iter().map(|l| s * l).collect();
            let shift = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let vals: Vec<f64> = scaled.iter().map(|v| (v - shift).exp()).collect();
            let t = trials as f64;
            let mean = vals.iter().sum::<f64>() / t;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
            let se = (var / t).sqrt();
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let top = (trials as f64 * 0.01).ceil() as usize;
            let heavy_tail = sorted[..top].iter().sum::<f64>() > 0.5 * mean * t;
            let to_d = |m: f64| (shift + m.max(f64::MIN_POSITIVE).ln()) / s;
            Ok(RenyiEstimate {
                estimate: to_d(mean),
                ci_low: to_d(mean - 1.96 * se),
                ci_high: to_d(mean + 1.96 * se),
                method,
                heavy_tail,
            })
        }
    }
}

/// Multinomial counts of `n` draws from `probs`.
pub fn sample_counts(probs: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut left = n as u64;
    let mut rest = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            out.push(left as usize);
            break;
        }
        let q = if rest > 0.0 { (p / rest).clamp(0.0, 1.0) } else { 0.0 };
        let k = if left == 0 || q == 0.0 {
            0
        } else if q >= 1.0 {
            left
        } else {
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        out.push(k as usize);
        left -= k;
        rest -= p;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClarkeBarronRow {
    pub n: usize,
    pub s: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub predicted_intercept: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClarkeBarronFit {
    pub fit: LinearFit,
    pub predicted_intercept: Option<f64>,
    pub rows: Vec<ClarkeBarronRow>,
}

/// Fits `D_{1+s}(P_θⁿ‖Qⁿ)` against `ln n` and reports the predicted
/// intercept `(k/2)ln(1/2π) + ½ln det J + ln(1/w(θ)) − (k/2s)ln(1+s)` for
/// continuous priors.
pub fn clarke_barron_slope(
    point: &ChannelPoint,
    prior: &PriorKind,
    target: &MixtureTarget,
    ns: &[usize],
    s: f64,
    method: RenyiMethod,
) -> Result<ClarkeBarronFit> {
    if ns.len() < 4 {
        return invalid("the slope study needs at least four blocklengths");
    }
    let mut rows = Vec::with_capacity(ns.len());
    let mut predicted = None;
    for &n in ns {
        let model = MixtureModel::new(Arc::clone(point.family()), prior.clone(), target.clone(), n)?;
        if predicted.is_none() {
            predicted = predicted_intercept(point, &model, s);
        }
        let est = estimate_renyi_to_mixture(point, &model, s, method)?;
        rows.push(ClarkeBarronRow {
            n,
            s,
            estimate: est.estimate,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
            predicted_intercept: predicted,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
    Ok(ClarkeBarronFit {
        fit: least_squares(&xs, &ys)?,
        predicted_intercept: predicted,
        rows,
    })
}

fn predicted_intercept(point: &ChannelPoint, model: &MixtureModel, s: f64) -> Option<f64> {
    let MixtureTarget::Input(x) = model.target() else { return None };
    let log_w = model.log_prior_density(point.theta())?;
    let j = point.family().component(*x).potential_hessian(point.theta());
    let k = j.nrows() as f64;
    let log_det = j.clone().cholesky()?.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
    Some(0.5 * k * (1.0 / (2.0 * PI)).ln() + 0.5 * log_det - log_w - 0.5 * k / s * (1.0 + s).ln())
}

/// CSV of a slope study: `n,s,estimate,ci_low,ci_high,predicted_intercept`.
pub fn clarke_barron_csv(fit: &ClarkeBarronFit) -> String {
    let mut out = String::from("n,s,estimate,ci_low,ci_high,predicted_intercept\n");
    for r in &fit.rows {
        let p = r.predicted_intercept.map(|v| format!("{v:?}")).unwrap_or_default();
        out.push_str(&format!("{},{:?},{:?},{:?},{:?},{}\n", r.n, r.s, r.estimate, r.ci_low, r.ci_high, p));
    }
    out
}

/// Right side of the grid-mixture bound `ln|Θ_[n]| + (J_θ + ε)/2`, with
/// `J_θ` read as `k·λ_max(J_θ)` for multi-dimensional parameters.
pub fn grid_e_bound(model: &MixtureModel, point: &ChannelPoint, epsilon: f64) -> Result<f64> {
    if model.prior() != &PriorKind::GridE {
        return invalid("the grid bound applies to grid-E mixtures");
    }
    let j: DMatrix<f64> = match model.target() {
        MixtureTarget::Input(x) => point.fisher_information(*x)?,
        MixtureTarget::Output(_) => {
            return Err(Error::Unsupported("grid bound for the output mixture".into()));
        }
    };
    let k = j.nrows() as f64;
    let lambda = j.symmetric_eigenvalues().max();
    Ok((model.nodes().len() as f64).ln() + 0.5 * (k * lambda + epsilon))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareCheck {
    pub ks_distance: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub dof: usize,
}

/// Simulates the normalised score `l = n^{-1/2} Σ (g(y_i) − ∇φ_x(θ))` and
/// compares the law of `lᵀ J⁻¹ l` with `χ²_k` in Kolmogorov–Smirnov distance.
pub fn chi_square_score_check(
    point: &ChannelPoint,
    x: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<ChiSquareCheck> {
    if trials < 2 {
        return invalid("need at least two trials");
    }
    let comp = point.family().component(x);
    let j = point.fisher_information(x)?;
    let j_inv = j
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Fisher information is singular".into()))?
        .inverse();
    let mean = comp.potential_gradient(point.theta());
    let row = point.transition_row(x);
    let k = mean.len();
    let mut stats: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, n, t));
            let mut sum = vec![0.0; k];
            match &row {
                Some(r) => {
                    let c = sample_counts(r, n, &mut rng);
                    for (i, s) in sum.iter_mut().enumerate() {
                        *s = c[i + 1] as f64;
                    }
                }
                None => {
                    for _ in 0..n {
                        let y = point.sample_output(x, &mut rng);
                        for (s, g) in sum.iter_mut().zip(comp.generators(&y)) {
                            *s += g;
                        }
                    }
                }
            }
            let l = nalgebra::DVector::from_iterator(
                k,
                sum.iter().zip(&mean).map(|(s, m)| (s - n as f64 * m) / (n as f64).sqrt()),
            );
            l.dot(&(&j_inv * &l))
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let chi = ChiSquared::new(k as f64).expect("positive dof");
    let t = trials as f64;
    let mut ks: f64 = 0.0;
    let mut i = 0;
    while i < stats.len() {
        // Step over ties so the empirical CDF is compared on both sides of a jump.
        let mut j = i;
        while j < stats.len() && stats[j] == stats[i] {
            j += 1;
        }
        let f = chi.cdf(stats[i]);
        ks = ks.max((f - i as f64 / t).abs()).max((j as f64 / t - f).abs());
        i = j;
    }
    let m = stats.iter().sum::<f64>() / t;
    let var = stats.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (t - 1.0);
    Ok(ChiSquareCheck {
        ks_distance: ks,
        mean: m,
        mean_se: (var / t).sqrt(),
        dof: k,
    })
}

/// The alternative output law `Σ_{x^n∈T_P} P_{T_P}(x^n) Q_{x^n}(yⁿ)` (tiny `n` only).
pub fn type_class_average_log_density(mixture: &CodewordMixture, ys: &[Output]) -> Result<f64> {
    let words = crate::combinatorics::enumerate_type_class(mixture.composition(), 100_000)?;
    let terms: Vec<f64> = words.iter().map(|w| mixture.log_density(w, ys)).collect();
    Ok(log_sum_exp(&terms) - (words.len() as f64).ln())
}
