//! Sample-based certificates for the invariant regions, quench-time bounds,
//! blow-up rates and monotone approach of quenching trajectories.
//!
//! Every check inspects the stored samples only; nothing is claimed between
//! samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controls::ProblemSpec;
use crate::fields::{Branch, FieldKind, State};
use crate::integrator::Trajectory;

/// Absolute tolerance for inequality checks on state-space quantities.
pub const CHECK_TOL: f64 = 1e-9;
/// Relative decrease every step must achieve in [`check_monotone_approach`].
pub const MONOTONE_TOL: f64 = 1e-12;
/// Allowed growth of the rate constant over the final decade of approach.
pub const RATE_GROWTH_LIMIT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("region parameter out of range: {0}")]
    ParamOutOfRange(String),
    #[error("trajectory has no quench estimate")]
    NoQuench,
    #[error("check requires field {expected}, trajectory uses {actual}")]
    WrongField {
        expected: FieldKind,
        actual: FieldKind,
    },
    #[error("trajectory does not come from a control problem")]
    NotAProblem,
    #[error("not enough samples: {0}")]
    TooFewSamples(String),
}

/// Outcome of one certificate. `passed` holds exactly when `worst_margin`
/// clears the check's tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub name: String,
    pub passed: bool,
    pub worst_t: f64,
    pub worst_margin: f64,
    pub detail: String,
}

impl CertificateReport {
    fn from_margins(
        name: &str,
        tol: f64,
        margins: impl IntoIterator<Item = (f64, f64)>,
        detail: String,
    ) -> Self {
        let mut worst_t = 0.0;
        let mut worst = f64::INFINITY;
        for (t, m) in margins {
            if m < worst || m.is_nan() {
                worst = m;
                worst_t = t;
                if m.is_nan() {
                    break;
                }
            }
        }
        CertificateReport {
            name: name.to_string(),
            passed: worst >= -tol,
            worst_t,
            worst_margin: worst,
            detail,
        }
    }

    /// Combines several reports into one that passes only if all do.
    pub fn aggregate(name: &str, reports: &[CertificateReport]) -> CertificateReport {
        let failed: Vec<&CertificateReport> = reports.iter().filter(|r| !r.passed).collect();
        let worst = reports
            .iter()
            .min_by(|a, b| a.worst_margin.total_cmp(&b.worst_margin))
            .cloned();
        let (worst_t, worst_margin) =
            worst.map_or((0.0, f64::INFINITY), |r| (r.worst_t, r.worst_margin));
        CertificateReport {
            name: name.to_string(),
            passed: failed.is_empty(),
            worst_t,
            worst_margin,
            detail: if failed.is_empty() {
                format!("{} checks passed", reports.len())
            } else {
                format!(
                    "{} of {} checks failed; first: {} ({})",
                    failed.len(),
                    reports.len(),
                    failed[0].name,
                    failed[0].detail
                )
            },
        }
    }
}

/// Region constants for the invariant-region lemmas. Unset values default to
/// the matching data of `y0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionParams {
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub k1_tilde: Option<f64>,
    pub k2_tilde: Option<f64>,
    pub k3: Option<f64>,
    pub k3_tilde: Option<f64>,
    pub k4: Option<f64>,
    pub k4_tilde: Option<f64>,
}

fn in_open(name: &str, v: f64, lo: f64, hi: f64) -> Result<f64, AnalysisError> {
    if v > lo && v < hi {
        Ok(v)
    } else {
        Err(AnalysisError::ParamOutOfRange(format!(
            "{name} = {v} must lie in ({lo}, {hi})"
        )))
    }
}

/// Analytic upper bound on the quench time of every admissible control.
pub fn quench_time_bound(p: &ProblemSpec) -> f64 {
    let k0 = p.k0();
    match p.field {
        FieldKind::F1 => (p.y0.x1 - 1.0).powi(2),
        FieldKind::F2 => (2.0 * k0 + 1.0) * (p.y0.norm() - 1.0).powi(2) / (2.0 * k0),
        FieldKind::F3 => 1.0 / (4.0 * k0 * k0),
    }
}

fn samples(traj: &Trajectory) -> impl Iterator<Item = (f64, State)> + '_ {
    traj.times.iter().copied().zip(traj.states.iter().copied())
}

/// Checks that every sample stays inside the invariant region of its branch.
pub fn check_invariant_region(
    traj: &Trajectory,
    params: &RegionParams,
) -> Result<CertificateReport, AnalysisError> {
    let p = traj.problem().ok_or(AnalysisError::NotAProblem)?;
    let k0 = p.k0();
    let y0 = p.y0;
    let name = format!("invariant_region_{}", p.field);
    let report = match (p.field, p.branch()) {
        (FieldKind::F1, Branch::Below) => {
            let k1 = in_open(
                "K1",
                params.k1.unwrap_or(y0.x1),
                1.0 - 1.0 / (2.0 * k0),
                1.0,
            )?;
            let k2 = in_open(
                "K2",
                params.k2.unwrap_or(y0.x2),
                k0 + 1.0 / k0 - 1.0,
                f64::INFINITY,
            )?;
            CertificateReport::from_margins(
                &name,
                CHECK_TOL,
                samples(traj).map(|(t, y)| (t, (y.x1 - k1).min(1.0 - y.x1).min(y.x2 - k2))),
                format!("y1 in [{k1}, 1), y2 >= {k2}"),
            )
        }
        (FieldKind::F1, Branch::Above) => {
            let k1 = in_open(
                "K1~",
                params.k1_tilde.unwrap_or(y0.x1),
                1.0,
                1.0 + 1.0 / (2.0 * k0),
            )?;
            let k2 = in_open(
                "K2~",
                params.k2_tilde.unwrap_or(y0.x2),
                k0 + 1.0,
                f64::INFINITY,
            )?;
            CertificateReport::from_margins(
                &name,
                CHECK_TOL,
                samples(traj).map(|(t, y)| (t, (k1 - y.x1).min(y.x1 - 1.0).min(y.x2 - k2))),
                format!("y1 in (1, {k1}], y2 >= {k2}"),
            )
        }
        (FieldKind::F2, Branch::Below) => {
            let k3 = in_open(
                "K3",
                params.k3.unwrap_or(y0.norm()),
                1.0 - 1.0 / (2.0 * k0 + 1.0),
                1.0,
            )?;
            CertificateReport::from_margins(
                &name,
                CHECK_TOL,
                samples(traj).map(|(t, y)| (t, (y.norm() - k3).min(1.0 - y.norm()))),
                format!("|y| in [{k3}, 1)"),
            )
        }
        (FieldKind::F2, Branch::Above) => {
            let k3 = in_open(
                "K3~",
                params.k3_tilde.unwrap_or(y0.norm()),
                1.0,
                1.0 + 1.0 / (2.0 * k0),
            )?;
            CertificateReport::from_margins(
                &name,
                CHECK_TOL,
                samples(traj).map(|(t, y)| (t, (k3 - y.norm()).min(y.norm() - 1.0))),
                format!("|y| in (1, {k3}]"),
            )
        }
        (FieldKind::F3, Branch::Below) => {
            let w = (-1.5f64).exp() / (2.0 * k0);
            let k4 = in_open("K4", params.k4.unwrap_or(y0.x1.min(y0.x2)), 1.0 - w, 1.0)?;
            CertificateReport::from_margins(
                &name,
                CHECK_TOL,
                samples(traj).map(|(t, y)| {
                    let lower = (y.x1 - k4).min(y.x2 - k4);
                    let upper = (1.0 - y.x1).min(1.0 - y.x2);
                    (t, lower.min(upper))
                }),
                format!("y1, y2 in [{k4}, 1)"),
            )
        }
        (FieldKind::F3, Branch::Above) => {
            let w = (-1.5f64).exp() / (2.0 * k0);
            let k4 = in_open(
                "K4~",
                params.k4_tilde.unwrap_or(y0.x1.max(y0.x2)),
                1.0,
                1.0 + w,
            )?;
            CertificateReport::from_margins(
                &name,
                CHECK_TOL,
                samples(traj).map(|(t, y)| {
                    let upper = (k4 - y.x1).min(k4 - y.x2);
                    let lower = (y.x1 - 1.0).min(y.x2 - 1.0);
                    (t, lower.min(upper))
                }),
                format!("y1, y2 in (1, {k4}]"),
            )
        }
    };
    Ok(report)
}

/// Checks `t_hat + bracket width ≤ bound`.
pub fn check_quench_bound(traj: &Trajectory) -> Result<CertificateReport, AnalysisError> {
    let p = traj.problem().ok_or(AnalysisError::NotAProblem)?;
    let q = traj.quench.ok_or(AnalysisError::NoQuench)?;
    let bound = quench_time_bound(p);
    let margin = bound - (q.t_hat + q.width());
    Ok(CertificateReport {
        name: format!("quench_bound_{}", p.field),
        passed: margin >= 0.0,
        worst_t: q.t_hat,
        worst_margin: margin,
        detail: format!(
            "t_hat = {}, width = {}, bound = {bound}",
            q.t_hat,
            q.width()
        ),
    })
}

fn time_to_quench(traj: &Trajectory) -> Result<(f64, Vec<f64>), AnalysisError> {
    let t_hat = traj.t_hat().ok_or(AnalysisError::NoQuench)?;
    Ok((t_hat, traj.times.iter().map(|t| t_hat - t).collect()))
}

/// Rate constant `M = max (t_hat − t)^{2/3} / dist` and its growth over the
/// final decade of approach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSummary {
    pub m: f64,
    pub m_before_final_decade: f64,
    pub growth: f64,
    pub argmax_t: f64,
}

pub fn rate_summary(traj: &Trajectory) -> Result<RateSummary, AnalysisError> {
    let (_, tau) = time_to_quench(traj)?;
    let tau_min = tau.iter().copied().fold(f64::INFINITY, f64::min);
    let mut m = 0.0f64;
    let mut before = 0.0f64;
    let mut argmax_t = 0.0;
    for ((&t, &d), &s) in traj.times.iter().zip(&traj.distances).zip(&tau) {
        let v = s.powf(2.0 / 3.0) / d;
        if !(v <= m) {
            m = v;
            argmax_t = t;
        }
        if s > 10.0 * tau_min {
            before = before.max(v);
        }
    }
    let growth = if before > 0.0 {
        (m - before) / before
    } else {
        f64::INFINITY
    };
    Ok(RateSummary {
        m,
        m_before_final_decade: before,
        growth,
        argmax_t,
    })
}

/// Passes when the rate constant is finite and grows by less than 10% over
/// the final decade of `t_hat − t`.
pub fn check_rate_estimate(traj: &Trajectory) -> Result<CertificateReport, AnalysisError> {
    let s = rate_summary(traj)?;
    let margin = if s.m.is_finite() {
        RATE_GROWTH_LIMIT - s.growth
    } else {
        f64::NEG_INFINITY
    };
    Ok(CertificateReport {
        name: format!("rate_estimate_{}", traj.field()),
        passed: margin > 0.0,
        worst_t: s.argmax_t,
        worst_margin: margin,
        detail: format!("M = {}, growth over final decade = {}", s.m, s.growth),
    })
}

/// Least-squares slope of `ln dist` against `ln(t_hat − t)` over the samples
/// within one decade of the final distance.
pub fn approach_exponent(traj: &Trajectory) -> Result<f64, AnalysisError> {
    let (_, tau) = time_to_quench(traj)?;
    let d_min = traj.distances.iter().copied().fold(f64::INFINITY, f64::min);
    let pts: Vec<(f64, f64)> = traj
        .distances
        .iter()
        .zip(&tau)
        .filter(|(&d, &s)| d <= 10.0 * d_min && s > 0.0)
        .map(|(&d, &s)| (s.ln(), d.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(AnalysisError::TooFewSamples(format!(
            "{} samples in the final decade",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Ratio bounds `(1 − y2)/(1 − y1) ≤ e^{3/2}(1 − y2⁰)/(1 − y1⁰)` and the
/// mirrored one, for F3 trajectories.
pub fn check_f3_ratio(traj: &Trajectory) -> Result<CertificateReport, AnalysisError> {
    let field = traj.field();
    if field != FieldKind::F3 {
        return Err(AnalysisError::WrongField {
            expected: FieldKind::F3,
            actual: field,
        });
    }
    let y0 = traj.states[0];
    let e = 1.5f64.exp();
    let r0 = (1.0 - y0.x2) / (1.0 - y0.x1);
    let (b21, b12) = (r0 * e, e / r0);
    Ok(CertificateReport::from_margins(
        "f3_ratio",
        CHECK_TOL,
        samples(traj).map(|(t, y)| {
            let r = (1.0 - y.x2) / (1.0 - y.x1);
            (t, (b21 - r).min(b12 - 1.0 / r))
        }),
        format!("ratio bounds {b21} and {b12}"),
    ))
}

/// Checks that the distance to the singular set decreases strictly (by a
/// relative `1e-12` at least) between consecutive samples.
pub fn check_monotone_approach(traj: &Trajectory) -> CertificateReport {
    let field = traj.field();
    let dists = |y: State| -> [f64; 2] {
        match field {
            FieldKind::F1 => [(1.0 - y.x1).abs(); 2],
            FieldKind::F2 => [(1.0 - y.norm()).abs(); 2],
            FieldKind::F3 => [(1.0 - y.x1).abs(), (1.0 - y.x2).abs()],
        }
    };
    let margins = traj.states.windows(2).zip(&traj.times[1..]).map(|(w, &t)| {
        let a = dists(w[0]);
        let b = dists(w[1]);
        let m = (0..2)
            .map(|i| a[i] - b[i] - MONOTONE_TOL * a[i])
            .fold(f64::INFINITY, f64::min);
        (t, m)
    });
    let mut report = CertificateReport::from_margins(
        &format!("monotone_approach_{field}"),
        0.0,
        margins,
        "distance to the singular set strictly decreasing".into(),
    );
    if traj.len() < 2 {
        report.passed = false;
        report.worst_margin = f64::NEG_INFINITY;
        report.detail = "fewer than two samples".into();
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::{ControlSignal, MatrixSignal};
    use crate::fields::{Matrix2, Vec2};
    use crate::integrator::{
        integrate_comparison, integrate_to_quench, ComparisonKind, IntegratorConfig,
    };
    use approx::assert_abs_diff_eq;

    fn run(field: FieldKind, y0: Vec2, m: Matrix2, u: ControlSignal) -> Trajectory {
        let p = ProblemSpec::new(field, y0, 1.0, MatrixSignal::Constant(m)).unwrap();
        integrate_to_quench(&p, &u, &IntegratorConfig::default()).unwrap()
    }

    fn f1_below() -> Trajectory {
        run(
            FieldKind::F1,
            Vec2::new(0.9, 1.5),
            Matrix2::IDENTITY,
            ControlSignal::Constant(Vec2::new(-0.6, -0.8)),
        )
    }

    #[test]
    fn bounds() {
        let mk = |f, y0, m| ProblemSpec::new(f, y0, 1.0, MatrixSignal::Constant(m)).unwrap();
        assert_abs_diff_eq!(
            quench_time_bound(&mk(FieldKind::F1, Vec2::new(0.9, 1.5), Matrix2::IDENTITY)),
            0.01,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            quench_time_bound(&mk(
                FieldKind::F2,
                Vec2::new(0.75, 0.0),
                Matrix2::new(1.0, 0.0, 0.0, 0.0)
            )),
            0.09375,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            quench_time_bound(&mk(FieldKind::F3, Vec2::new(0.9, 0.9), Matrix2::IDENTITY)),
            0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn f1_below_region_and_monotonicity() {
        let traj = f1_below();
        let r = check_invariant_region(&traj, &RegionParams::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.worst_margin >= 0.0);
        assert!(check_monotone_approach(&traj).passed);
        let bad = RegionParams {
            k2: Some(2.5),
            ..RegionParams::default()
        };
        let r = check_invariant_region(&traj, &bad).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_t, 0.0);
        let out = RegionParams {
            k1: Some(0.2),
            ..RegionParams::default()
        };
        assert!(matches!(
            check_invariant_region(&traj, &out),
            Err(AnalysisError::ParamOutOfRange(_))
        ));
    }

    #[test]
    fn f1_above_is_monotone() {
        let traj = run(
            FieldKind::F1,
            Vec2::new(1.1, 2.5),
            Matrix2::IDENTITY,
            ControlSignal::Constant(Vec2::new(0.0, -1.0)),
        );
        assert!(check_monotone_approach(&traj).passed);
        assert!(
            check_invariant_region(&traj, &RegionParams::default())
                .unwrap()
                .passed
        );
    }

    #[test]
    fn f2_above_region_upper_bound() {
        let y0 = Vec2::new(0.0, 1.2);
        let traj = run(
            FieldKind::F2,
            y0,
            Matrix2::new(1.0, 0.0, 0.0, 0.0),
            ControlSignal::Constant(Vec2::new(1.0, 0.0)),
        );
        let params = RegionParams {
            k3_tilde: Some(1.2),
            ..RegionParams::default()
        };
        let r = check_invariant_region(&traj, &params).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(traj.states.iter().all(|y| y.norm() <= 1.2 + CHECK_TOL));
    }

    #[test]
    fn monotone_rejects_constant_paths() {
        let mut traj = f1_below();
        let y = traj.states[0];
        traj.states.iter_mut().for_each(|s| *s = y);
        assert!(!check_monotone_approach(&traj).passed);
    }

    #[test]
    fn rate_estimate_on_worked_example_and_comparison() {
        let traj = run(
            FieldKind::F2,
            Vec2::new(0.75, 0.0),
            Matrix2::new(1.0, 0.0, 0.0, 0.0),
            ControlSignal::Constant(Vec2::new(1.0, 0.0)),
        );
        let r = check_rate_estimate(&traj).unwrap();
        assert!(r.passed, "{r:?}");
        let chi = integrate_comparison(
            ComparisonKind::ChiF1 { y1_0: 0.9 },
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert!(check_rate_estimate(&chi).unwrap().passed);
        let mut cut = traj.clone();
        cut.quench = None;
        assert_eq!(check_rate_estimate(&cut), Err(AnalysisError::NoQuench));
    }

    #[test]
    fn exponent_is_one_half_on_closed_forms() {
        let cfg = IntegratorConfig::default();
        for kind in [
            ComparisonKind::ChiF1 { y1_0: 0.9 },
            ComparisonKind::ChiF3 { k0: 1.0 },
        ] {
            let chi = integrate_comparison(kind, &cfg).unwrap();
            let e = approach_exponent(&chi).unwrap();
            assert!((e - 0.5).abs() <= 0.05, "{kind:?}: {e}");
        }
    }

    #[test]
    fn f3_ratio_checks() {
        let traj = run(
            FieldKind::F3,
            Vec2::new(0.9, 0.9),
            Matrix2::IDENTITY,
            ControlSignal::Zero,
        );
        let r = check_f3_ratio(&traj).unwrap();
        assert!(r.passed);
        let mut warped = traj.clone();
        // Push y2 toward 1 much faster than y1 so the ratio escapes its bound.
        for y in warped.states.iter_mut().skip(1) {
            y.x2 = 1.0 - (1.0 - y.x2) * 1e-3;
        }
        assert!(!check_f3_ratio(&warped).unwrap().passed);
        let f1 = f1_below();
        assert!(matches!(
            check_f3_ratio(&f1),
            Err(AnalysisError::WrongField { .. })
        ));
    }

    #[test]
    fn reports_are_pure() {
        let traj = f1_below();
        assert_eq!(
            check_monotone_approach(&traj),
            check_monotone_approach(&traj)
        );
        assert_eq!(check_rate_estimate(&traj), check_rate_estimate(&traj));
    }

    #[test]
    fn bound_check_on_example() {
        let traj = run(
            FieldKind::F2,
            Vec2::new(0.75, 0.0),
            Matrix2::new(1.0, 0.0, 0.0, 0.0),
            ControlSignal::Zero,
        );
        assert!(check_quench_bound(&traj).unwrap().passed);
    }
}
