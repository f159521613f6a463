//! Experiment configuration: the TOML schema, family construction, and the
//! semantic checks shared by `validate` and `run`.

use std::path::PathBuf;
use std::sync::Arc;

use serde::Deserialize;
use univcode_core::channels::{ChannelFamily, ChannelPoint, ConditionTag, FamilyKind, ParamBox};
use univcode_core::combinatorics::{
    message_count, number_of_types, round_to_type, type_class_size, CompositionType,
    DEFAULT_TYPE_CAP, MAX_EXPLICIT_MESSAGES,
};
use univcode_core::infomeasures::{dispersion, mutual_information, DesignMethod, FIRST_ORDER_MATCH_TOL};
use univcode_core::mixtures::{MixtureTarget, PriorKind, PriorSpec, RenyiMethod, DEFAULT_BOX_NODES};
use univcode_core::simulator::{
    log_message_count, CodeConstruction, ErrorMode, SecondOrderTarget, AUTO_EXPLICIT_MESSAGES,
    ENSEMBLE_TABLE_CAP, EXACT_OUTPUT_CAP,
};

/// Minimum Monte Carlo sample for the Rényi-to-mixture estimator.
const MIN_RENYI_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    ExponentBound,
    CompoundDesign,
    SimulateExponent,
    SecondOrder,
    ClarkeBarron,
    CodebookAudit,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::ExponentBound => "exponent-bound",
            Kind::CompoundDesign => "compound-design",
            Kind::SimulateExponent => "simulate-exponent",
            Kind::SecondOrder => "second-order",
            Kind::ClarkeBarron => "clarke-barron",
            Kind::CodebookAudit => "codebook-audit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum TagSpec {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilySpec {
    Dmc {
        inputs: usize,
        outputs: usize,
        half_width: Option<f64>,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
        nested: Option<Vec<BoxSpec>>,
        tag: Option<TagSpec>,
    },
    GaussianFading {
        signals: Vec<f64>,
        precision_floor: Option<f64>,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
        nested: Option<Vec<BoxSpec>>,
        tag: Option<TagSpec>,
    },
    MimoGaussian {
        signals: Vec<Vec<f64>>,
        receive_dim: usize,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
        nested: Option<Vec<BoxSpec>>,
        tag: Option<TagSpec>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstructionSpec {
    Explicit,
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorName {
    Default,
    Dirichlet,
    UniformBox,
    GridE,
    NestedGridF,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum MethodSpec {
    M1,
    M2,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub kind: Kind,
    pub seed: u64,
    pub name: Option<String>,
    pub out: Option<PathBuf>,
    pub family: Option<FamilySpec>,

    pub theta: Option<Vec<f64>>,
    pub transition: Option<Vec<Vec<f64>>>,
    pub thetas: Option<Vec<Vec<f64>>>,
    pub transitions: Option<Vec<Vec<Vec<f64>>>>,
    pub theta2: Option<Vec<f64>>,

    pub input_dist: Option<Vec<f64>>,
    pub candidates: Option<Vec<Vec<f64>>>,
    pub method: Option<MethodSpec>,

    pub rate: Option<f64>,
    pub threshold_rate: Option<f64>,
    pub first_order_rate: Option<f64>,
    pub second_order_rate: Option<f64>,
    pub epsilon: Option<f64>,

    pub ns: Option<Vec<usize>>,
    pub n: Option<usize>,
    pub composition: Option<Vec<usize>>,
    pub mode: Option<ModeSpec>,
    pub trials: Option<usize>,
    pub construction: Option<ConstructionSpec>,
    pub verify_packing: Option<bool>,

    pub prior: Option<PriorName>,
    pub alpha: Option<f64>,
    pub box_nodes: Option<usize>,
    pub truncate: Option<usize>,
    pub s: Option<f64>,
    pub input: Option<usize>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string())
    }
}

/// A fully resolved experiment, ready to run.
#[derive(Debug)]
pub enum Plan {
    ExponentBound {
        points: Vec<ChannelPoint>,
        input_dist: Vec<f64>,
        rate: f64,
        threshold_rate: Option<f64>,
    },
    CompoundDesign {
        points: Vec<ChannelPoint>,
        rate: f64,
        method: DesignMethod,
        candidates: Vec<Vec<f64>>,
    },
    SimulateExponent {
        point: ChannelPoint,
        input_dist: Vec<f64>,
        rate: f64,
        ns: Vec<usize>,
        mode: ErrorMode,
        construction: CodeConstruction,
        priors: PriorSpec,
    },
    SecondOrder {
        theta1: ChannelPoint,
        theta2: Vec<f64>,
        input_dist: Vec<f64>,
        first_order_rate: Option<f64>,
        target: SecondOrderTarget,
        ns: Vec<usize>,
        mode: ErrorMode,
        construction: CodeConstruction,
        priors: PriorSpec,
    },
    ClarkeBarron {
        point: ChannelPoint,
        prior: PriorKind,
        target: MixtureTarget,
        ns: Vec<usize>,
        s: f64,
        method: RenyiMethod,
    },
    CodebookAudit {
        composition: CompositionType,
        rate: f64,
        verify_packing: bool,
        seed: u64,
    },
}

/// Collected diagnostics; `need` records a missing field and yields `None`.
#[derive(Default)]
struct Diags(Vec<String>);

impl Diags {
    fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    fn need<T: Clone>(&mut self, kind: Kind, field: &str, v: &Option<T>) -> Option<T> {
        if v.is_none() {
            self.push(format!("missing field `{field}` (required by {})", kind.as_str()));
        }
        v.clone()
    }
}

/// Resolves a config into a runnable plan, or every diagnostic found.
pub fn prepare(cfg: &Config) -> Result<Plan, Vec<String>> {
    let mut d = Diags::default();
    let plan = resolve(cfg, &mut d);
    match plan {
        Some(p) if d.0.is_empty() => Ok(p),
        _ => {
            if d.0.is_empty() {
                d.push("configuration could not be resolved");
            }
            Err(d.0)
        }
    }
}

fn resolve(cfg: &Config, d: &mut Diags) -> Option<Plan> {
    let kind = cfg.kind;
    if kind == Kind::CodebookAudit {
        return resolve_audit(cfg, d);
    }
    let spec = d.need(kind, "family", &cfg.family)?;
    let family = match build_family(&spec) {
        Ok(f) => Arc::new(f),
        Err(e) => {
            d.push(format!("family: {e}"));
            return None;
        }
    };
    match kind {
        Kind::ExponentBound => {
            let points = grid_points(cfg, &family, d);
            let input_dist = d.need(kind, "input_dist", &cfg.input_dist);
            let rate = d.need(kind, "rate", &cfg.rate);
            if let Some(p) = &input_dist {
                check_dist("input_dist", p, family.inputs(), d);
            }
            if let (Some(r), Some(r1)) = (rate, cfg.threshold_rate) {
                if !(r1 > r) {
                    d.push(format!(
                        "threshold_rate must exceed rate: the exponent bound holds only for R1 > R (got R = {r}, R1 = {r1})"
                    ));
                }
            }
            if let Some(r) = rate {
                check_rate(r, d);
            }
            Some(Plan::ExponentBound {
                points: points?,
                input_dist: input_dist?,
                rate: rate?,
                threshold_rate: cfg.threshold_rate,
            })
        }
        Kind::CompoundDesign => {
            let points = grid_points(cfg, &family, d);
            let rate = d.need(kind, "rate", &cfg.rate);
            let method = d.need(kind, "method", &cfg.method);
            let candidates = d.need(kind, "candidates", &cfg.candidates);
            if let Some(c) = &candidates {
                if c.is_empty() {
                    d.push("candidates must not be empty");
                }
                for (i, p) in c.iter().enumerate() {
                    check_dist(&format!("candidates[{i}]"), p, family.inputs(), d);
                }
            }
            if let Some(r) = rate {
                check_rate(r, d);
            }
            Some(Plan::CompoundDesign {
                points: points?,
                rate: rate?,
                method: match method? {
                    MethodSpec::M1 => DesignMethod::M1,
                    MethodSpec::M2 => DesignMethod::M2,
                },
                candidates: candidates?,
            })
        }
        Kind::SimulateExponent => {
            let point = single_point(cfg, &family, d);
            let input_dist = d.need(kind, "input_dist", &cfg.input_dist);
            let rate = d.need(kind, "rate", &cfg.rate);
            let ns = need_ns(cfg, 4, d);
            if let Some(p) = &input_dist {
                check_dist("input_dist", p, family.inputs(), d);
            }
            let mode = error_mode(cfg, d);
            let construction = construction(cfg, &family, false);
            let priors = priors(cfg, &family, d);
            let (point, input_dist, rate, ns, mode, priors) = (point?, input_dist?, rate?, ns?, mode?, priors?);
            check_rate(rate, d);
            for &n in &ns {
                let Ok(comp) = round_to_type(&input_dist, n) else { continue };
                match construction {
                    CodeConstruction::Ensemble => check_ensemble(&family, &comp, mode, d),
                    CodeConstruction::Explicit { .. } => {
                        check_explicit(&family, &comp, message_count(n, rate), mode, d)
                    }
                }
            }
            Some(Plan::SimulateExponent {
                point,
                input_dist,
                rate,
                ns,
                mode,
                construction,
                priors,
            })
        }
        Kind::SecondOrder => {
            let theta1 = single_point(cfg, &family, d);
            let input_dist = d.need(kind, "input_dist", &cfg.input_dist);
            let ns = need_ns(cfg, 1, d);
            if let Some(p) = &input_dist {
                check_dist("input_dist", p, family.inputs(), d);
            }
            let target = match (cfg.second_order_rate, cfg.epsilon) {
                (Some(r), None) => Some(SecondOrderTarget::Rate(r)),
                (None, Some(e)) => {
                    if !(e > 0.0 && e < 1.0) {
                        d.push(format!("epsilon must lie in (0, 1), got {e}"));
                    }
                    Some(SecondOrderTarget::Error(e))
                }
                (Some(_), Some(_)) => {
                    d.push("give either second_order_rate or epsilon, not both");
                    None
                }
                (None, None) => {
                    d.push("missing field `second_order_rate` or `epsilon` (required by second-order)");
                    None
                }
            };
            let theta2 = cfg.theta2.clone().unwrap_or_else(|| vec![0.0; family.dim()]);
            if theta2.len() != family.dim() {
                d.push(format!("theta2 has {} coordinates, the family has {}", theta2.len(), family.dim()));
            }
            let mode = error_mode(cfg, d);
            let construction = construction(cfg, &family, false);
            let priors = priors(cfg, &family, d);
            let (theta1, input_dist, ns, target, mode, priors) =
                (theta1?, input_dist?, ns?, target?, mode?, priors?);
            if !d.0.is_empty() {
                return None;
            }
            // The Gaussian limit needs a positive dispersion and R1* = I.
            let info = mutual_information(&input_dist, &theta1);
            let v = dispersion(&input_dist, &theta1);
            let (info, v) = match (info, v) {
                (Ok(i), Ok(v)) => (i, v),
                (Err(e), _) | (_, Err(e)) => {
                    d.push(format!("information quantities at theta: {e}"));
                    return None;
                }
            };
            if !(v > 0.0) {
                d.push(format!("second-order analysis needs a positive dispersion V > 0 (got V = {v})"));
            }
            let r1_star = cfg.first_order_rate.unwrap_or(info);
            if (r1_star - info).abs() > FIRST_ORDER_MATCH_TOL {
                d.push(format!(
                    "first_order_rate must equal I(P, W) = {info} for the second-order regime (got {r1_star})"
                ));
            }
            let r2 = match target {
                SecondOrderTarget::Rate(r) => Some(r),
                SecondOrderTarget::Error(e) if v > 0.0 && e > 0.0 && e < 1.0 => {
                    // The shift only moves R2 by a bounded amount; caps use f = 0.
                    univcode_core::infomeasures::second_order_rate_for(v, e, 0.0).ok()
                }
                _ => None,
            };
            for &n in &ns {
                let Ok(comp) = round_to_type(&input_dist, n) else { continue };
                match construction {
                    CodeConstruction::Ensemble => check_ensemble(&family, &comp, mode, d),
                    CodeConstruction::Explicit { .. } => {
                        if let Some(r2) = r2 {
                            let nf = n as f64;
                            let m = log_message_count(nf * r1_star + nf.sqrt() * r2 - nf.powf(0.25)).exp().round();
                            if m > AUTO_EXPLICIT_MESSAGES * 256.0 {
                                d.push(format!(
                                    "explicit codebook at n = {n} would hold {m:.3e} messages (cap {:.0}); use construction = \"ensemble\"",
                                    AUTO_EXPLICIT_MESSAGES * 256.0
                                ));
                                continue;
                            }
                            check_explicit(&family, &comp, m, mode, d);
                        }
                    }
                }
            }
            Some(Plan::SecondOrder {
                theta1,
                theta2,
                input_dist,
                first_order_rate: cfg.first_order_rate,
                target,
                ns,
                mode,
                construction,
                priors,
            })
        }
        Kind::ClarkeBarron => {
            let point = single_point(cfg, &family, d);
            let ns = need_ns(cfg, 4, d);
            let s = cfg.s.unwrap_or(1.0);
            if !(s > 0.0 && s.is_finite()) {
                d.push(format!("s must be positive, got {s}"));
            }
            let target = match (cfg.input, &cfg.input_dist) {
                (Some(_), Some(_)) => {
                    d.push("give either input or input_dist, not both");
                    None
                }
                (_, Some(p)) => {
                    check_dist("input_dist", p, family.inputs(), d);
                    Some(MixtureTarget::Output(p.clone()))
                }
                (x, None) => {
                    let x = x.unwrap_or(0);
                    if x >= family.inputs() {
                        d.push(format!("input {x} out of range (family has {} inputs)", family.inputs()));
                    }
                    Some(MixtureTarget::Input(x))
                }
            };
            let priors = priors(cfg, &family, d);
            let method = match cfg.mode.unwrap_or(ModeSpec::Exact) {
                ModeSpec::Exact => {
                    match family.output_space().cardinality() {
                        None => d.push("exact Rényi estimation needs a finite output space; use mode = \"monte-carlo\""),
                        Some(m) => {
                            if let Some(&n) = cfg.ns.as_ref().and_then(|ns| ns.iter().max()) {
                                let types = number_of_types(n, m);
                                if types > DEFAULT_TYPE_CAP as f64 {
                                    d.push(format!(
                                        "exact mode at n = {n} enumerates {types:.3e} output types (cap {DEFAULT_TYPE_CAP})"
                                    ));
                                }
                            }
                        }
                    }
                    Some(RenyiMethod::Exact)
                }
                ModeSpec::MonteCarlo => match cfg.trials {
                    Some(t) if t >= MIN_RENYI_TRIALS => Some(RenyiMethod::MonteCarlo { trials: t, seed: cfg.seed }),
                    Some(t) => {
                        d.push(format!("Monte Carlo Rényi estimation needs trials >= {MIN_RENYI_TRIALS}, got {t}"));
                        None
                    }
                    None => {
                        d.push("missing field `trials` (required by mode = \"monte-carlo\")");
                        None
                    }
                },
            };
            Some(Plan::ClarkeBarron {
                point: point?,
                prior: priors?.per_input,
                target: target?,
                ns: ns?,
                s,
                method: method?,
            })
        }
        Kind::CodebookAudit => unreachable!("handled above"),
    }
}

fn resolve_audit(cfg: &Config, d: &mut Diags) -> Option<Plan> {
    let kind = cfg.kind;
    let rate = d.need(kind, "rate", &cfg.rate);
    let composition = match (&cfg.composition, cfg.n, &cfg.input_dist) {
        (Some(c), None, None) => CompositionType::new(c.clone()).map_err(|e| d.push(format!("composition: {e}"))).ok(),
        (None, Some(n), Some(p)) => {
            if let Some(spec) = &cfg.family {
                if let Ok(f) = build_family(spec) {
                    check_dist("input_dist", p, f.inputs(), d);
                }
            }
            round_to_type(p, n).map_err(|e| d.push(format!("input_dist: {e}"))).ok()
        }
        (None, None, None) => {
            d.push("missing field `composition` (or `n` with `input_dist`) (required by codebook-audit)");
            None
        }
        _ => {
            d.push("give either composition or n with input_dist");
            None
        }
    };
    if let (Some(c), Some(r)) = (&composition, rate) {
        check_rate(r, d);
        let m = message_count(c.n(), r);
        let class = type_class_size(c).log_size.exp().round();
        if m > class {
            d.push(format!("rate {r} asks for {m} messages but the type class holds only {class}"));
        } else if m > MAX_EXPLICIT_MESSAGES as f64 {
            d.push(format!("rate {r} asks for {m:.3e} messages (explicit cap {MAX_EXPLICIT_MESSAGES})"));
        }
    }
    Some(Plan::CodebookAudit {
        composition: composition?,
        rate: rate?,
        verify_packing: cfg.verify_packing.unwrap_or(true),
        seed: cfg.seed,
    })
}

pub fn build_family(spec: &FamilySpec) -> Result<ChannelFamily, String> {
    let err = |e: univcode_core::Error| e.to_string();
    let explicit_box = |lower: &Option<Vec<f64>>, upper: &Option<Vec<f64>>| -> Result<Option<ParamBox>, String> {
        match (lower, upper) {
            (Some(l), Some(u)) => ParamBox::new(l.clone(), u.clone()).map(Some).map_err(err),
            (None, None) => Ok(None),
            _ => Err("lower and upper must be given together".into()),
        }
    };
    let (family, nested, tag) = match spec {
        FamilySpec::Dmc {
            inputs,
            outputs,
            half_width,
            lower,
            upper,
            nested,
            tag,
        } => {
            if *outputs < 2 {
                return Err(format!("a DMC needs at least two output symbols, got {outputs}"));
            }
            let m = outputs - 1;
            let b = match (explicit_box(lower, upper)?, half_width) {
                (Some(_), Some(_)) => return Err("give either half_width or lower/upper".into()),
                (Some(b), None) => Some(b),
                (None, Some(h)) => Some(ParamBox::symmetric(inputs * m, *h).map_err(err)?),
                (None, None) => None,
            };
            let f = match b {
                Some(b) => ChannelFamily::dmc_with_box(*inputs, m, b),
                None => ChannelFamily::make_dmc_family(*inputs, m),
            };
            (f.map_err(err)?, nested, tag)
        }
        FamilySpec::GaussianFading {
            signals,
            precision_floor,
            lower,
            upper,
            nested,
            tag,
        } => {
            let f = match (explicit_box(lower, upper)?, precision_floor) {
                (Some(_), Some(_)) => return Err("give either precision_floor or lower/upper".into()),
                (Some(b), None) => ChannelFamily::gaussian_fading_with_box(signals.clone(), b),
                (None, Some(e)) => ChannelFamily::gaussian_fading_with_precision_floor(signals.clone(), *e),
                (None, None) => ChannelFamily::make_gaussian_fading(signals.clone()),
            };
            (f.map_err(err)?, nested, tag)
        }
        FamilySpec::MimoGaussian {
            signals,
            receive_dim,
            lower,
            upper,
            nested,
            tag,
        } => {
            let f = match explicit_box(lower, upper)? {
                Some(b) => ChannelFamily::mimo_gaussian_with_box(signals.clone(), *receive_dim, b),
                None => ChannelFamily::make_mimo_gaussian(signals.clone(), *receive_dim),
            };
            (f.map_err(err)?, nested, tag)
        }
    };
    let family = match nested {
        Some(boxes) => {
            let boxes = boxes
                .iter()
                .map(|b| ParamBox::new(b.lower.clone(), b.upper.clone()))
                .collect::<univcode_core::Result<Vec<_>>>()
                .map_err(err)?;
            family.with_nested_boxes(boxes).map_err(err)?
        }
        None => family,
    };
    match tag {
        Some(t) => family
            .with_tag(match t {
                TagSpec::A => ConditionTag::A,
                TagSpec::B => ConditionTag::B,
                TagSpec::C => ConditionTag::C,
            })
            .map_err(err),
        None => Ok(family),
    }
}

fn point_from(family: &Arc<ChannelFamily>, theta: Option<&Vec<f64>>, rows: Option<&Vec<Vec<f64>>>) -> Result<ChannelPoint, String> {
    let theta = match (theta, rows) {
        (Some(t), None) => t.clone(),
        (None, Some(r)) => {
            if !matches!(family.kind(), FamilyKind::Dmc { .. }) {
                return Err("transition matrices only describe DMC families".into());
            }
            ChannelFamily::dmc_natural_parameters(r).map_err(|e| e.to_string())?
        }
        _ => unreachable!("caller picks exactly one"),
    };
    if theta.len() != family.dim() {
        return Err(format!("theta has {} coordinates, the family has {}", theta.len(), family.dim()));
    }
    family.point(theta).map_err(|e| e.to_string())
}

fn single_point(cfg: &Config, family: &Arc<ChannelFamily>, d: &mut Diags) -> Option<ChannelPoint> {
    match (&cfg.theta, &cfg.transition) {
        (Some(_), Some(_)) => {
            d.push("give either theta or transition, not both");
            None
        }
        (None, None) => {
            d.push(format!("missing field `theta` or `transition` (required by {})", cfg.kind.as_str()));
            None
        }
        (t, r) => point_from(family, t.as_ref(), r.as_ref()).map_err(|e| d.push(format!("theta: {e}"))).ok(),
    }
}

/// `thetas`/`transitions` when given, otherwise the single point as a grid.
fn grid_points(cfg: &Config, family: &Arc<ChannelFamily>, d: &mut Diags) -> Option<Vec<ChannelPoint>> {
    let grid: Vec<Result<ChannelPoint, String>> = match (&cfg.thetas, &cfg.transitions) {
        (Some(_), Some(_)) => {
            d.push("give either thetas or transitions, not both");
            return None;
        }
        (Some(ts), None) => ts.iter().map(|t| point_from(family, Some(t), None)).collect(),
        (None, Some(rs)) => rs.iter().map(|r| point_from(family, None, Some(r))).collect(),
        (None, None) => return single_point(cfg, family, d).map(|p| vec![p]),
    };
    if grid.is_empty() {
        d.push("the channel grid must not be empty");
        return None;
    }
    let mut out = Vec::with_capacity(grid.len());
    for (i, p) in grid.into_iter().enumerate() {
        match p {
            Ok(p) => out.push(p),
            Err(e) => d.push(format!("grid point {i}: {e}")),
        }
    }
    Some(out)
}

fn need_ns(cfg: &Config, min: usize, d: &mut Diags) -> Option<Vec<usize>> {
    let ns = d.need(cfg.kind, "ns", &cfg.ns)?;
    if ns.len() < min {
        d.push(format!("{} needs at least {min} blocklengths in `ns`, got {}", cfg.kind.as_str(), ns.len()));
    }
    if ns.iter().any(|&n| n == 0) {
        d.push("blocklengths must be positive");
    }
    Some(ns)
}

fn check_dist(field: &str, p: &[f64], inputs: usize, d: &mut Diags) {
    if p.len() != inputs {
        d.push(format!("{field} has {} entries, the family has {inputs} inputs", p.len()));
    }
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        d.push(format!("{field} must be non-negative and finite"));
    } else if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        d.push(format!("{field} must sum to 1 (sums to {})", p.iter().sum::<f64>()));
    }
}

fn check_rate(r: f64, d: &mut Diags) {
    if !(r >= 0.0 && r.is_finite()) {
        d.push(format!("rate must be a non-negative number of nats, got {r}"));
    }
}

fn error_mode(cfg: &Config, d: &mut Diags) -> Option<ErrorMode> {
    match cfg.mode.unwrap_or(ModeSpec::Exact) {
        ModeSpec::Exact => Some(ErrorMode::Exact),
        ModeSpec::MonteCarlo => match cfg.trials {
            Some(t) if t > 0 => Some(ErrorMode::MonteCarlo { trials: t, seed: cfg.seed }),
            Some(_) => {
                d.push("trials must be positive");
                None
            }
            None => {
                d.push("missing field `trials` (required by mode = \"monte-carlo\")");
                None
            }
        },
    }
}

fn construction(cfg: &Config, family: &ChannelFamily, default_verify: bool) -> CodeConstruction {
    let finite = family.output_space().cardinality().is_some();
    let explicit = CodeConstruction::Explicit {
        seed: cfg.seed,
        verify_packing: cfg.verify_packing.unwrap_or(default_verify),
    };
    match cfg.construction {
        Some(ConstructionSpec::Explicit) => explicit,
        Some(ConstructionSpec::Ensemble) => CodeConstruction::Ensemble,
        None if finite => CodeConstruction::Ensemble,
        None => explicit,
    }
}

fn priors(cfg: &Config, family: &ChannelFamily, d: &mut Diags) -> Option<PriorSpec> {
    let kind = match cfg.prior.unwrap_or(PriorName::Default) {
        PriorName::Default => PriorKind::default_for(family),
        PriorName::Dirichlet => PriorKind::Dirichlet {
            alpha: cfg.alpha.unwrap_or(1.0),
        },
        PriorName::UniformBox => PriorKind::UniformBox {
            nodes: cfg.box_nodes.unwrap_or(DEFAULT_BOX_NODES),
        },
        PriorName::GridE => PriorKind::GridE,
        PriorName::NestedGridF => PriorKind::NestedGridF { truncate: cfg.truncate },
    };
    if let Err(e) = kind.check_compatible(family) {
        d.push(format!("prior: {e}"));
        return None;
    }
    Some(PriorSpec::uniform(kind))
}

fn check_ensemble(family: &ChannelFamily, comp: &CompositionType, mode: ErrorMode, d: &mut Diags) {
    let Some(m1) = family.output_space().cardinality() else {
        d.push("the ensemble construction needs a finite output space; use construction = \"explicit\"");
        return;
    };
    if mode == ErrorMode::Exact {
        let tables: f64 = comp.counts().iter().map(|&nx| number_of_types(nx.max(1), m1)).product();
        if tables > ENSEMBLE_TABLE_CAP {
            d.push(format!(
                "exact ensemble evaluation at n = {} enumerates {tables:.3e} joint types (cap {ENSEMBLE_TABLE_CAP:.0}); use mode = \"monte-carlo\"",
                comp.n()
            ));
        }
    }
}

fn check_explicit(family: &ChannelFamily, comp: &CompositionType, messages: f64, mode: ErrorMode, d: &mut Diags) {
    let n = comp.n();
    let class = type_class_size(comp).log_size.exp().round();
    if messages > class {
        d.push(format!("n = {n}: {messages:.3e} messages exceed the type class size {class:.3e}"));
    } else if messages > MAX_EXPLICIT_MESSAGES as f64 {
        d.push(format!(
            "n = {n}: explicit codebook of {messages:.3e} messages exceeds the cap {MAX_EXPLICIT_MESSAGES}; use construction = \"ensemble\""
        ));
    }
    if mode == ErrorMode::Exact {
        match family.output_space().cardinality() {
            None => d.push("exact error evaluation needs a finite output space; use mode = \"monte-carlo\""),
            Some(m1) => {
                let size = (m1 as f64).powi(n as i32);
                if size > EXACT_OUTPUT_CAP {
                    d.push(format!(
                        "exact mode at n = {n} enumerates |Y|^n = {size:.3e} output sequences (cap {EXACT_OUTPUT_CAP:.0}); use mode = \"monte-carlo\""
                    ));
                }
            }
        }
    }
}
