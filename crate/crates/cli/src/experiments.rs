//! Runs a resolved [`Plan`] and turns its result into report artifacts.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use univcode_core::combinatorics::{
    build_codebook, group_average_bound_check, type_class_size, GROUP_CHECK_MAX_D, GROUP_CHECK_MAX_N,
};
use univcode_core::infomeasures::{
    compound_design, exponent_lower_bound, gallager_exponent, mutual_information, optimal_r1,
    RateParameters,
};
use univcode_core::mixtures::{clarke_barron_csv, clarke_barron_slope, MixtureTarget};
use univcode_core::simulator::{exponent_csv, fit_exponent, run_second_order, second_order_csv};
use univcode_core::Error;

use crate::config::Plan;

/// Everything a run writes, computed before any file is touched.
pub struct Report {
    pub result: Value,
    pub csv: String,
    /// Additional artifacts as `(file suffix, contents)`.
    pub extra: Vec<(String, String)>,
    /// Set when the experiment ran but its built-in check failed.
    pub check_failure: Option<String>,
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

pub fn execute(plan: &Plan) -> Result<Report, Error> {
    match plan {
        Plan::ExponentBound {
            points,
            input_dist,
            rate,
            threshold_rate,
        } => {
            let (bound, s_star, r1, rows, source) = match threshold_rate {
                Some(r1) => {
                    let rep = exponent_lower_bound(
                        input_dist,
                        points,
                        RateParameters {
                            rate: *rate,
                            threshold_rate: *r1,
                        },
                    )?;
                    (rep.bound, rep.s_star, rep.threshold_rate, rep.per_theta, "given")
                }
                None => {
                    let rep = optimal_r1(input_dist, points, *rate)?;
                    (rep.bound, rep.s_star, rep.threshold_rate, rep.per_theta, "optimal")
                }
            };
            let mut csv = String::from("index,theta,value,s_star,mutual_information,gallager_exponent\n");
            let mut per_theta = Vec::with_capacity(rows.len());
            for (i, (row, pt)) in rows.iter().zip(points).enumerate() {
                let info = mutual_information(input_dist, pt)?;
                let gallager = gallager_exponent(input_dist, pt, *rate)?;
                let _ = writeln!(
                    csv,
                    "{i},{},{:?},{:?},{info:?},{gallager:?}",
                    join(&row.theta),
                    row.value,
                    row.s_star
                );
                per_theta.push(json!({
                    "theta": row.theta,
                    "value": row.value,
                    "s_star": row.s_star,
                    "mutual_information": info,
                    "gallager_exponent": gallager,
                }));
            }
            Ok(Report {
                result: json!({
                    "rate": rate,
                    "threshold_rate": r1,
                    "threshold_source": source,
                    "bound": bound,
                    "s_star": s_star,
                    "grid_points": points.len(),
                    "per_theta": per_theta,
                }),
                csv,
                extra: Vec::new(),
                check_failure: None,
            })
        }
        Plan::CompoundDesign {
            points,
            rate,
            method,
            candidates,
        } => {
            let design = compound_design(points, *rate, *method, candidates)?;
            let mut csv = String::from("candidate,input_dist,score,chosen\n");
            for (i, (p, score)) in candidates.iter().zip(&design.candidate_scores).enumerate() {
                let chosen = *p == design.input_dist;
                let _ = writeln!(csv, "{i},{},{score:?},{chosen}", join(p));
            }
            let mut result = to_value(&design);
            result["rate"] = json!(rate);
            result["grid_points"] = json!(points.len());
            Ok(Report {
                result,
                csv,
                extra: Vec::new(),
                check_failure: None,
            })
        }
        Plan::SimulateExponent {
            point,
            input_dist,
            rate,
            ns,
            mode,
            construction,
            priors,
        } => {
            let fit = fit_exponent(point, input_dist, *rate, ns, *mode, *construction, priors)?;
            let check_failure = (!fit.pass).then(|| {
                format!(
                    "fitted exponent {:.6} is below the bound {:.6} minus two standard errors ({:.6})",
                    fit.fitted_exponent, fit.bound, fit.fit.intercept_se
                )
            });
            let mut result = to_value(&fit);
            result["theta"] = json!(point.theta());
            result["mode"] = to_value(mode);
            result["construction"] = to_value(construction);
            Ok(Report {
                csv: exponent_csv(&fit),
                result,
                extra: Vec::new(),
                check_failure,
            })
        }
        Plan::SecondOrder {
            theta1,
            theta2,
            input_dist,
            first_order_rate,
            target,
            ns,
            mode,
            construction,
            priors,
        } => {
            let exp = run_second_order(
                theta1,
                theta2,
                input_dist,
                *first_order_rate,
                *target,
                ns,
                *mode,
                *construction,
                priors,
            )?;
            let mut result = to_value(&exp);
            result["mode"] = to_value(mode);
            result["construction"] = to_value(construction);
            Ok(Report {
                csv: second_order_csv(&exp),
                result,
                extra: Vec::new(),
                check_failure: None,
            })
        }
        Plan::ClarkeBarron {
            point,
            prior,
            target,
            ns,
            s,
            method,
        } => {
            let fit = clarke_barron_slope(point, prior, target, ns, *s, *method)?;
            let k = match target {
                MixtureTarget::Input(x) => point.family().component(*x).dim(),
                MixtureTarget::Output(_) => point.family().dim(),
            };
            let mut result = to_value(&fit);
            result["reference_slope"] = json!(k as f64 / 2.0);
            result["prior"] = to_value(prior);
            result["target"] = to_value(target);
            result["method"] = to_value(method);
            Ok(Report {
                csv: clarke_barron_csv(&fit),
                result,
                extra: Vec::new(),
                check_failure: None,
            })
        }
        Plan::CodebookAudit {
            composition,
            rate,
            verify_packing,
            seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let book = build_codebook(composition, *rate, &mut rng, *verify_packing)?;
            let class = type_class_size(composition);
            let mut csv = String::from("message,codeword\n");
            for (i, w) in book.codewords().iter().enumerate() {
                let word: Vec<String> = w.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(csv, "{i},{}", word.join(" "));
            }
            // The group-average inequality is cheap to audit only at small n.
            let group = if book.n() <= GROUP_CHECK_MAX_N && composition.d() <= GROUP_CHECK_MAX_D {
                let checks = book.codewords()[1..]
                    .iter()
                    .map(|w| group_average_bound_check(&book, book.codeword(0), w))
                    .collect::<Result<Vec<_>, _>>()?;
                let max_ratio = checks.iter().map(|c| c.ratio).fold(0.0, f64::max);
                json!({ "reference": 0, "checks": checks, "max_ratio": max_ratio })
            } else {
                Value::Null
            };
            let check_failure = match book.packing() {
                Some(p) if !p.satisfied => Some(format!(
                    "packing verification failed after {} rounds ({} violating shells)",
                    p.rounds, p.violations
                )),
                _ => None,
            };
            Ok(Report {
                result: json!({
                    "n": book.n(),
                    "composition": composition.counts(),
                    "rate": rate,
                    "messages": book.messages(),
                    "log_class_size": class.log_size,
                    "log_c": class.log_c,
                    "packing": book.packing(),
                    "group_average": group,
                }),
                csv,
                extra: vec![("codebook.txt".into(), book.to_text())],
                check_failure,
            })
        }
    }
}
