//! Seeded property suites behind `quench verify`. Each returns one report per
//! certificate; random suites aggregate their runs per field.

use quench_core::analysis::{
    approach_exponent, check_f3_ratio, check_invariant_region, check_monotone_approach,
    check_quench_bound, check_rate_estimate,
};
use quench_core::integrator::{
    integrate_comparison, integrate_to_quench, ComparisonKind, IntegratorError,
};
use quench_core::optimizer::{brute_force_search, sweep_search};
use quench_core::pmp::{default_epsilon, duality_check, integrate_adjoint, integrate_sensitivity};
use quench_core::sampling::{random_bang_bang, random_problem};
use quench_core::{
    CertificateReport, ControlSignal, FieldKind, IntegratorConfig, Matrix2, MatrixSignal, Method,
    ProblemSpec, RegionParams, SearchConfig, Trajectory, Vec2,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RUNS_PER_FIELD: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    /// The radial example with closed-form quench times.
    #[value(name = "paper-example", alias = "worked-example")]
    WorkedExample,
    Bounds,
    Invariants,
    Rates,
    Pmp,
    All,
}

pub fn run(suite: Suite, seed: u64, parallel: bool) -> Vec<CertificateReport> {
    match suite {
        Suite::WorkedExample => worked_example_suite(),
        Suite::Bounds => bounds(seed),
        Suite::Invariants => invariants(seed),
        Suite::Rates => rates(seed),
        Suite::Pmp => pmp(seed, parallel),
        Suite::All => {
            let mut v = worked_example_suite();
            v.extend(bounds(seed));
            v.extend(invariants(seed));
            v.extend(rates(seed));
            v.extend(pmp(seed, parallel));
            v
        }
    }
}

fn report(name: &str, margin: f64, worst_t: f64, detail: String) -> CertificateReport {
    CertificateReport {
        name: name.to_string(),
        passed: margin >= 0.0,
        worst_t,
        worst_margin: margin,
        detail,
    }
}

fn failure(name: &str, detail: String) -> CertificateReport {
    report(name, f64::NEG_INFINITY, 0.0, detail)
}

pub fn worked_example() -> ProblemSpec {
    ProblemSpec::new(
        FieldKind::F2,
        Vec2::new(0.75, 0.0),
        1.0,
        MatrixSignal::Constant(Matrix2::new(1.0, 0.0, 0.0, 0.0)),
    )
    .expect("inside the seed region")
}

fn quench_time(p: &ProblemSpec, u: &ControlSignal) -> Result<f64, IntegratorError> {
    Ok(integrate_to_quench(p, u, &IntegratorConfig::default())?
        .t_hat()
        .expect("quenched"))
}

fn closeness(
    name: &str,
    got: Result<f64, IntegratorError>,
    exact: f64,
    tol: f64,
) -> CertificateReport {
    match got {
        Ok(t) => report(
            name,
            tol - (t - exact).abs(),
            t,
            format!("t_hat = {t}, exact = {exact}, tolerance {tol}"),
        ),
        Err(e) => failure(name, e.to_string()),
    }
}

fn worked_example_suite() -> Vec<CertificateReport> {
    let p = worked_example();
    let bang = quench_time(&p, &ControlSignal::Constant(Vec2::new(1.0, 0.0)));
    let free = quench_time(&p, &ControlSignal::Zero);
    let mut out = vec![
        closeness("worked_example_bang", bang.clone(), 1.0 / 32.0, 1e-6),
        closeness(
            "worked_example_zero",
            free.clone(),
            -0.25 - 0.75f64.ln(),
            1e-6,
        ),
    ];
    out.push(match (bang, free) {
        (Ok(a), Ok(b)) => report(
            "worked_example_control_helps",
            (b - a) - 1e-3,
            a,
            format!("T(zero) - T(bang) = {}", b - a),
        ),
        _ => failure("worked_example_control_helps", "integration failed".into()),
    });
    for (name, kind) in comparison_cases() {
        let got = integrate_comparison(kind, &IntegratorConfig::default())
            .map(|t| t.t_hat().expect("quenched"));
        out.push(closeness(name, got, kind.quench_time(), 1e-8));
    }
    out
}

fn comparison_cases() -> [(&'static str, ComparisonKind); 3] {
    [
        ("comparison_f1", ComparisonKind::ChiF1 { y1_0: 0.9 }),
        ("comparison_f2", ComparisonKind::ChiF2 { r0: 0.75, k0: 1.0 }),
        ("comparison_f3", ComparisonKind::ChiF3 { k0: 2.0 }),
    ]
}

type Run = (ProblemSpec, Result<Trajectory, IntegratorError>);

/// The seeded runs shared by the bounds, invariants and rates suites.
fn random_runs(field: FieldKind, seed: u64) -> Vec<Run> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..RUNS_PER_FIELD)
        .map(|_| {
            let p = random_problem(field, &mut rng);
            let u = random_bang_bang(&p, 4, &mut rng);
            let traj = integrate_to_quench(&p, &u, &IntegratorConfig::default());
            (p, traj)
        })
        .collect()
}

fn per_run<F>(name: &str, runs: &[Run], mut check: F) -> CertificateReport
where
    F: FnMut(&ProblemSpec, &Trajectory) -> Vec<CertificateReport>,
{
    let mut reports = Vec::new();
    for (i, (p, traj)) in runs.iter().enumerate() {
        match traj {
            Ok(t) => reports.extend(check(p, t)),
            Err(e) => reports.push(failure(&format!("run {i}"), e.to_string())),
        }
    }
    CertificateReport::aggregate(name, &reports)
}

fn or_failure(
    name: &str,
    r: Result<CertificateReport, quench_core::analysis::AnalysisError>,
) -> CertificateReport {
    r.unwrap_or_else(|e| failure(name, e.to_string()))
}

fn bounds(seed: u64) -> Vec<CertificateReport> {
    FieldKind::ALL
        .iter()
        .map(|&field| {
            per_run(
                &format!("bounds_{field}"),
                &random_runs(field, seed),
                |_, t| vec![or_failure("quench_bound", check_quench_bound(t))],
            )
        })
        .collect()
}

fn invariants(seed: u64) -> Vec<CertificateReport> {
    FieldKind::ALL
        .iter()
        .map(|&field| {
            per_run(
                &format!("invariants_{field}"),
                &random_runs(field, seed),
                |p, t| {
                    let mut v = vec![
                        or_failure(
                            "invariant_region",
                            check_invariant_region(t, &RegionParams::default()),
                        ),
                        check_monotone_approach(t),
                    ];
                    if p.field == FieldKind::F3 {
                        v.push(or_failure("f3_ratio", check_f3_ratio(t)));
                    }
                    v
                },
            )
        })
        .collect()
}

fn rates(seed: u64) -> Vec<CertificateReport> {
    let mut out: Vec<CertificateReport> = FieldKind::ALL
        .iter()
        .map(|&field| {
            per_run(
                &format!("rates_{field}"),
                &random_runs(field, seed),
                |_, t| vec![or_failure("rate_estimate", check_rate_estimate(t))],
            )
        })
        .collect();
    for (name, kind) in comparison_cases() {
        let name = format!(
            "approach_exponent_{}",
            name.trim_start_matches("comparison_")
        );
        let exp = integrate_comparison(kind, &IntegratorConfig::default())
            .map_err(|e| e.to_string())
            .and_then(|t| approach_exponent(&t).map_err(|e| e.to_string()));
        out.push(match exp {
            Ok(e) => report(
                &name,
                0.05 - (e - 0.5).abs(),
                0.0,
                format!("fitted exponent {e}"),
            ),
            Err(e) => failure(&name, e),
        });
    }
    out
}

fn pmp(seed: u64, parallel: bool) -> Vec<CertificateReport> {
    let p = worked_example();
    let mut out = Vec::new();
    let sweep_cfg = SearchConfig {
        method: Method::Sweep,
        parallel,
        ..SearchConfig::default()
    };
    let brute_cfg = SearchConfig {
        n_intervals: 2,
        n_directions: 8,
        parallel,
        ..SearchConfig::default()
    };
    match (
        sweep_search(&p, &sweep_cfg, None),
        brute_force_search(&p, &brute_cfg),
    ) {
        (Ok(s), Ok(b)) => {
            let cert = s.certificate.expect("f2 results carry a certificate");
            let err = (s.best_t - 1.0 / 32.0).abs();
            let margin = (1e-5 - err)
                .min(1e-5 - cert.max_residual)
                .min(cert.nontriviality_ratio - 0.1)
                .min(if s.converged { 0.0 } else { -1.0 });
            out.push(report(
                "pmp_sweep_example",
                margin,
                cert.worst_t,
                format!(
                    "best_t = {}, residual = {}, ratio = {}, converged = {}",
                    s.best_t, cert.max_residual, cert.nontriviality_ratio, s.converged
                ),
            ));
            let gap = (s.best_t - b.best_t).abs();
            out.push(report(
                "pmp_brute_agreement",
                1e-4 - gap,
                0.0,
                format!("sweep {} vs brute {}", s.best_t, b.best_t),
            ));
        }
        (Err(e), _) | (_, Err(e)) => out.push(failure("pmp_sweep_example", e.to_string())),
    }
    out.push(duality(seed));
    out
}

/// Duality identity and decay bound on 20 random (problem, perturbation) pairs.
fn duality(seed: u64) -> CertificateReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for k in 0..20 {
        let field = if k % 2 == 0 {
            FieldKind::F1
        } else {
            FieldKind::F2
        };
        let p = random_problem(field, &mut rng);
        let n = rng.random_range(2..6);
        let u = random_bang_bang(&p, n, &mut rng);
        let u_alt = random_bang_bang(&p, n, &mut rng);
        let name = format!("pair {k}");
        let r = (|| -> Result<CertificateReport, String> {
            let traj = integrate_to_quench(&p, &u, &IntegratorConfig::default())
                .map_err(|e| e.to_string())?;
            let t_hat = traj.t_hat().expect("quenched");
            let sens =
                integrate_sensitivity(&traj, &u_alt, 0.5 * t_hat).map_err(|e| e.to_string())?;
            let adj = integrate_adjoint(
                &traj,
                default_epsilon(t_hat, IntegratorConfig::default().delta_stop),
            )
            .map_err(|e| e.to_string())?;
            let d = duality_check(&traj, &adj, &sens).map_err(|e| e.to_string())?;
            let tol = 1e-6 * (1.0 + d.pairing.abs());
            let margin = if adj.decay_constant.is_finite() {
                (tol - d.residual) / tol
            } else {
                -1.0
            };
            Ok(report(
                &name,
                margin,
                0.5 * t_hat,
                format!(
                    "residual {} against {tol}, C1 = {}",
                    d.residual, adj.decay_constant
                ),
            ))
        })();
        reports.push(r.unwrap_or_else(|e| failure(&name, e)));
    }
    CertificateReport::aggregate("pmp_duality", &reports)
}
