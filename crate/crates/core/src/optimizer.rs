//! Searches for quench-time-minimizing piecewise-constant controls.
//!
//! All methods use a control grid of `n_intervals` pieces spanning the
//! analytic quench-time bound, with zero extension afterwards. Candidates are
//! ranked by bracket midpoint; two candidates whose midpoints differ by less
//! than their combined bracket widths are ordered by candidate index.

use std::sync::atomic::{AtomicUsize, Ordering};

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{quench_time_bound, CertificateReport};
use crate::controls::{
    ekeland_distance, eval_control, pmp_argmax, ControlError, ControlSignal, Extension,
    PiecewiseControl, ProblemSpec,
};
use crate::fields::{FieldKind, Vec2};
use crate::integrator::{integrate_to_quench, IntegratorConfig, IntegratorError, QuenchEstimate};
use crate::pmp::{
    default_epsilon, integrate_adjoint, pmp_certificate, PMPCertificate, PmpError,
    DEFAULT_RESIDUAL_TOL,
};

/// Largest brute-force candidate count.
pub const BRUTE_BUDGET: usize = 1_000_000;
/// Largest parameter dimension for the direct search.
pub const DIRECT_MAX_DIM: usize = 12;
/// Consecutive increases of `t_hat` that stop the sweep.
pub const NO_DESCENT_LIMIT: usize = 5;
/// Threshold for counting an interval as moved in a sweep update.
pub const MOVE_TOL: f64 = 1e-6;
/// Points per interval used to average the pointwise maximizer.
const SWEEP_POINTS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("search budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Pmp(#[from] PmpError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Brute,
    Sweep,
    Direct,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Brute => "brute",
            Method::Sweep => "sweep",
            Method::Direct => "direct",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "brute" => Ok(Method::Brute),
            "sweep" => Ok(Method::Sweep),
            "direct" => Ok(Method::Direct),
            other => Err(format!(
                "unknown method '{other}' (expected brute, sweep or direct)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub method: Method,
    pub n_intervals: usize,
    pub n_directions: usize,
    pub include_zero: bool,
    pub damping: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
    pub seed: u64,
    /// Multi-start count for the direct search (the zero start is always first).
    pub n_starts: usize,
    /// Simplex iterations per direct-search start.
    pub direct_iters: u64,
    /// Evaluate independent candidates on the rayon pool.
    pub parallel: bool,
    pub integrator: IntegratorConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            method: Method::Brute,
            n_intervals: 4,
            n_directions: 8,
            include_zero: true,
            damping: 0.5,
            max_iters: 60,
            conv_tol: 1e-6,
            seed: 42,
            n_starts: 4,
            direct_iters: 200,
            parallel: true,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.n_intervals < 1 {
            return Err(OptimizerError::InvalidConfig(
                "n_intervals must be at least 1".into(),
            ));
        }
        if self.n_directions < 2 {
            return Err(OptimizerError::InvalidConfig(
                "n_directions must be at least 2".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(OptimizerError::InvalidConfig(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.conv_tol >= 0.0) {
            return Err(OptimizerError::InvalidConfig(
                "conv_tol must be nonnegative".into(),
            ));
        }
        if self.n_starts < 1 {
            return Err(OptimizerError::InvalidConfig(
                "n_starts must be at least 1".into(),
            ));
        }
        self.integrator.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub t_hat: f64,
    /// Fraction of intervals moved by the update that produced this iterate.
    pub step: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub method: Method,
    pub best_control: ControlSignal,
    pub best_t: f64,
    pub bracket: (f64, f64),
    pub bound: f64,
    pub zero_control_t: f64,
    pub certificate: Option<PMPCertificate>,
    pub evaluations: usize,
    pub history: Vec<HistoryEntry>,
    pub converged: bool,
    pub warning: Option<String>,
}

/// A control grid spanning the analytic bound.
fn grid_step(p: &ProblemSpec, n: usize) -> f64 {
    quench_time_bound(p) / n as f64
}

fn piecewise(step: f64, values: Vec<Vec2>) -> ControlSignal {
    ControlSignal::Piecewise(PiecewiseControl {
        grid_step: step,
        values,
        extension: Extension::Zero,
    })
}

/// `a` ranks strictly before `b` (which has the smaller candidate index).
fn beats(a: &QuenchEstimate, b: &QuenchEstimate) -> bool {
    a.midpoint() < b.midpoint() - (a.width() + b.width())
}

#[derive(Debug, Clone)]
struct Scored {
    index: usize,
    quench: Option<QuenchEstimate>,
}

fn evaluate(p: &ProblemSpec, u: &ControlSignal, cfg: &IntegratorConfig) -> Option<QuenchEstimate> {
    integrate_to_quench(p, u, cfg).ok().and_then(|t| t.quench)
}

fn pick_best(scored: &[Scored]) -> Option<&Scored> {
    let mut best: Option<&Scored> = None;
    for s in scored {
        let Some(q) = &s.quench else { continue };
        match best {
            Some(b) if !beats(q, b.quench.as_ref().expect("scored")) => {}
            _ => best = Some(s),
        }
    }
    best
}

fn zero_time(p: &ProblemSpec, cfg: &IntegratorConfig) -> Result<f64, OptimizerError> {
    let q = integrate_to_quench(p, &ControlSignal::Zero, cfg)?
        .quench
        .expect("quenched runs carry an estimate");
    Ok(q.t_hat)
}

/// Certificate for F1/F2 candidates; `None` for F3.
fn certify(
    p: &ProblemSpec,
    u: &ControlSignal,
    cfg: &IntegratorConfig,
) -> Result<Option<PMPCertificate>, OptimizerError> {
    if p.field == FieldKind::F3 {
        return Ok(None);
    }
    let traj = integrate_to_quench(p, u, cfg)?;
    let t_hat = traj.t_hat().expect("quenched");
    let adj = integrate_adjoint(&traj, default_epsilon(t_hat, cfg.delta_stop))?;
    Ok(Some(pmp_certificate(&traj, u, &adj, DEFAULT_RESIDUAL_TOL)?))
}

/// Bang-bang values `ρ0(cos 2πj/n, sin 2πj/n)`, followed by zero if requested.
pub fn direction_set(rho0: f64, n_directions: usize, include_zero: bool) -> Vec<Vec2> {
    let mut v: Vec<Vec2> = (0..n_directions)
        .map(|j| {
            let a = std::f64::consts::TAU * j as f64 / n_directions as f64;
            Vec2::new(rho0 * a.cos(), rho0 * a.sin())
        })
        .collect();
    if include_zero {
        v.push(Vec2::ZERO);
    }
    v
}

/// Enumerates every bang-bang piecewise control on the grid and keeps the fastest.
pub fn brute_force_search(
    p: &ProblemSpec,
    cfg: &SearchConfig,
) -> Result<SearchResult, OptimizerError> {
    cfg.validate()?;
    let options = direction_set(p.rho0, cfg.n_directions, cfg.include_zero);
    let total = (options.len() as u128)
        .checked_pow(cfg.n_intervals as u32)
        .unwrap_or(u128::MAX);
    if total > BRUTE_BUDGET as u128 {
        return Err(OptimizerError::BudgetExceeded(format!(
            "{} candidates exceed the limit of {BRUTE_BUDGET}",
            total
        )));
    }
    let total = total as usize;
    let step = grid_step(p, cfg.n_intervals);
    let candidate = |index: usize| -> ControlSignal {
        let mut values = vec![Vec2::ZERO; cfg.n_intervals];
        let mut rest = index;
        for slot in values.iter_mut().rev() {
            *slot = options[rest % options.len()];
            rest /= options.len();
        }
        piecewise(step, values)
    };
    let score = |index: usize| Scored {
        index,
        quench: evaluate(p, &candidate(index), &cfg.integrator),
    };
    let scored: Vec<Scored> = if cfg.parallel {
        (0..total).into_par_iter().map(score).collect()
    } else {
        (0..total).map(score).collect()
    };
    let failures = scored.iter().filter(|s| s.quench.is_none()).count();
    let best = pick_best(&scored)
        .ok_or_else(|| OptimizerError::Precondition("no candidate could be integrated".into()))?;
    let q = best.quench.expect("scored");
    let best_control = candidate(best.index);
    let certificate = certify(p, &best_control, &cfg.integrator)?;
    Ok(SearchResult {
        method: Method::Brute,
        best_control,
        best_t: q.t_hat,
        bracket: (q.bracket_lo, q.bracket_hi),
        bound: quench_time_bound(p),
        zero_control_t: zero_time(p, &cfg.integrator)?,
        certificate,
        evaluations: total,
        history: vec![HistoryEntry {
            iteration: 0,
            t_hat: q.t_hat,
            step: None,
        }],
        converged: true,
        warning: (failures > 0).then(|| format!("{failures} candidates failed to integrate")),
    })
}

/// Forward-backward sweep: integrate, solve the adjoint, move each interval
/// toward the averaged pointwise maximizer.
pub fn sweep_search(
    p: &ProblemSpec,
    cfg: &SearchConfig,
    initial: Option<&ControlSignal>,
) -> Result<SearchResult, OptimizerError> {
    cfg.validate()?;
    if p.field == FieldKind::F3 {
        return Err(OptimizerError::Unsupported(
            "sweep unsupported for f3".into(),
        ));
    }
    let n = cfg.n_intervals;
    let step = grid_step(p, n);
    let mut values: Vec<Vec2> = match initial {
        None => vec![Vec2::ZERO; n],
        Some(u) => {
            p.check_admissible(u)?;
            if u.is_feedback() {
                return Err(OptimizerError::Unsupported(
                    "sweep needs a non-feedback initial control".into(),
                ));
            }
            (0..n)
                .map(|k| eval_control(u, (k as f64 + 0.5) * step))
                .collect()
        }
    };
    let icfg = &cfg.integrator;
    let mut history = Vec::new();
    let mut best: Option<(QuenchEstimate, Vec<Vec2>)> = None;
    let mut evaluations = 0;
    let mut last_step: Option<f64> = None;
    let mut prev_t = f64::INFINITY;
    let mut increases = 0;
    let mut converged = false;
    let mut warning = None;

    for iteration in 0..cfg.max_iters.max(1) {
        let u = piecewise(step, values.clone());
        let traj = integrate_to_quench(p, &u, icfg)?;
        evaluations += 1;
        let q = traj.quench.expect("quenched runs carry an estimate");
        history.push(HistoryEntry {
            iteration,
            t_hat: q.t_hat,
            step: last_step,
        });
        // Later iterates replace earlier ones unless clearly slower.
        if best.as_ref().is_none_or(|(b, _)| !beats(b, &q)) {
            best = Some((q, values.clone()));
        }
        if last_step.is_some_and(|s| s <= cfg.conv_tol) {
            converged = true;
            break;
        }
        if q.t_hat > prev_t {
            increases += 1;
            if increases >= NO_DESCENT_LIMIT {
                warning = Some(format!(
                    "NoDescent: t_hat increased for {NO_DESCENT_LIMIT} consecutive iterations"
                ));
                break;
            }
        } else {
            increases = 0;
        }
        prev_t = q.t_hat;

        let adj = integrate_adjoint(&traj, default_epsilon(q.t_hat, icfg.delta_stop))?;
        let covered = adj.terminal_time;
        let mut moved = 0;
        for (k, v) in values.iter_mut().enumerate() {
            let a = k as f64 * step;
            let b = ((k + 1) as f64 * step).min(covered);
            if !(b > a) {
                continue;
            }
            let mut avg = Vec2::ZERO;
            for m in 0..SWEEP_POINTS {
                let t = a + (m as f64 + 0.5) * (b - a) / SWEEP_POINTS as f64;
                avg += pmp_argmax(adj.psi_at(t), &p.matrix.at(t), p.rho0);
            }
            avg = avg * (1.0 / SWEEP_POINTS as f64);
            let next = (*v * (1.0 - cfg.damping) + avg * cfg.damping).project_to_ball(p.rho0);
            if (next - *v).max_abs() > MOVE_TOL {
                moved += 1;
            }
            *v = next;
        }
        last_step = Some(moved as f64 / n as f64);
    }
    if !converged && warning.is_none() {
        warning = Some(format!(
            "no convergence within {} iterations",
            cfg.max_iters
        ));
    }
    let (q, values) = best.expect("at least one iterate");
    let best_control = piecewise(step, values);
    let certificate = certify(p, &best_control, icfg)?;
    Ok(SearchResult {
        method: Method::Sweep,
        best_control,
        best_t: q.t_hat,
        bracket: (q.bracket_lo, q.bracket_hi),
        bound: quench_time_bound(p),
        zero_control_t: zero_time(p, icfg)?,
        certificate,
        evaluations,
        history,
        converged,
        warning,
    })
}

/// Objective of the direct search: quench-time midpoint of the projected control.
struct DirectCost<'a> {
    p: &'a ProblemSpec,
    step: f64,
    cfg: &'a IntegratorConfig,
    penalty: f64,
    evaluations: AtomicUsize,
}

impl DirectCost<'_> {
    fn control(&self, x: &[f64]) -> ControlSignal {
        let values = x
            .chunks(2)
            .map(|c| Vec2::new(c[0], c[1]).project_to_ball(self.p.rho0))
            .collect();
        piecewise(self.step, values)
    }
}

impl CostFunction for DirectCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> Result<f64, argmin::core::Error> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        if x.iter().any(|v| !v.is_finite()) {
            return Ok(self.penalty);
        }
        Ok(evaluate(self.p, &self.control(x), self.cfg).map_or(self.penalty, |q| q.midpoint()))
    }
}

/// Best cost, best parameters and evaluation count of one simplex start.
type StartOutcome = (f64, Vec<f64>, usize);

/// Derivative-free simplex search over the per-interval control values.
pub fn direct_search(p: &ProblemSpec, cfg: &SearchConfig) -> Result<SearchResult, OptimizerError> {
    cfg.validate()?;
    let dim = 2 * cfg.n_intervals;
    if dim > DIRECT_MAX_DIM {
        return Err(OptimizerError::BudgetExceeded(format!(
            "{dim} parameters exceed the direct-search limit of {DIRECT_MAX_DIM}"
        )));
    }
    let bound = quench_time_bound(p);
    let step = grid_step(p, cfg.n_intervals);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![vec![0.0; dim]];
    for _ in 1..cfg.n_starts {
        let mut x = Vec::with_capacity(dim);
        for _ in 0..cfg.n_intervals {
            let r = p.rho0 * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            x.push(r * a.cos());
            x.push(r * a.sin());
        }
        starts.push(x);
    }
    let edge = 0.25 * p.rho0;
    let run_start = |x0: &Vec<f64>| -> Result<(f64, Vec<f64>, usize), OptimizerError> {
        let cost = DirectCost {
            p,
            step,
            cfg: &cfg.integrator,
            penalty: 10.0 * bound,
            evaluations: AtomicUsize::new(0),
        };
        let mut simplex = vec![x0.clone()];
        for i in 0..dim {
            let mut v = x0.clone();
            v[i] += if v[i] > 0.0 { -edge } else { edge };
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-13)
            .map_err(|e| OptimizerError::InvalidConfig(e.to_string()))?;
        let res = Executor::new(cost, solver)
            .configure(|s| s.max_iters(cfg.direct_iters))
            .run()
            .map_err(|e| OptimizerError::InvalidConfig(format!("simplex search failed: {e}")))?;
        let evals = res
            .problem
            .problem
            .as_ref()
            .map_or(0, |c| c.evaluations.load(Ordering::Relaxed));
        let best_param = res.state.best_param.clone().unwrap_or_else(|| x0.clone());
        Ok((res.state.best_cost, best_param, evals))
    };
    let runs: Vec<Result<StartOutcome, OptimizerError>> = if cfg.parallel {
        starts.par_iter().map(run_start).collect()
    } else {
        starts.iter().map(run_start).collect()
    };
    let mut evaluations = 0;
    let mut history = Vec::new();
    let mut best: Option<(usize, QuenchEstimate, ControlSignal)> = None;
    let helper = DirectCost {
        p,
        step,
        cfg: &cfg.integrator,
        penalty: 10.0 * bound,
        evaluations: AtomicUsize::new(0),
    };
    for (i, run) in runs.into_iter().enumerate() {
        let (cost, x, evals) = run?;
        evaluations += evals;
        history.push(HistoryEntry {
            iteration: i,
            t_hat: cost,
            step: None,
        });
        let u = helper.control(&x);
        let Some(q) = evaluate(p, &u, &cfg.integrator) else {
            continue;
        };
        evaluations += 1;
        if best.as_ref().is_none_or(|(_, b, _)| beats(&q, b)) {
            best = Some((i, q, u));
        }
    }
    let (_, q, best_control) = best.ok_or_else(|| {
        OptimizerError::Precondition("no start produced a quenching control".into())
    })?;
    let certificate = certify(p, &best_control, &cfg.integrator)?;
    Ok(SearchResult {
        method: Method::Direct,
        best_control,
        best_t: q.t_hat,
        bracket: (q.bracket_lo, q.bracket_hi),
        bound,
        zero_control_t: zero_time(p, &cfg.integrator)?,
        certificate,
        evaluations,
        history,
        converged: true,
        warning: None,
    })
}

/// Runs the search selected by `cfg.method`.
pub fn search(p: &ProblemSpec, cfg: &SearchConfig) -> Result<SearchResult, OptimizerError> {
    match cfg.method {
        Method::Brute => brute_force_search(p, cfg),
        Method::Sweep => sweep_search(p, cfg, None),
        Method::Direct => direct_search(p, cfg),
    }
}

/// Re-expresses `u` on a grid no coarser than `max_step`, covering `horizon`.
fn refine(
    u: &ControlSignal,
    max_step: f64,
    horizon: f64,
) -> Result<PiecewiseControl, OptimizerError> {
    match u {
        ControlSignal::Zero | ControlSignal::Constant(_) => {
            let n = (horizon / max_step).ceil().max(1.0) as usize;
            let v = eval_control(u, 0.0);
            let ext = if matches!(u, ControlSignal::Zero) {
                Extension::Zero
            } else {
                Extension::Hold
            };
            Ok(PiecewiseControl::new(max_step, vec![v; n], ext)?)
        }
        ControlSignal::Piecewise(pc) => {
            let m = (pc.grid_step / max_step).ceil().max(1.0) as usize;
            let fine = pc.grid_step / m as f64;
            let values = pc
                .values
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, m))
                .collect();
            Ok(PiecewiseControl::new(fine, values, pc.extension)?)
        }
        ControlSignal::Feedback(_) => Err(OptimizerError::Unsupported(
            "perturbation test needs a non-feedback control".into(),
        )),
    }
}

/// Informal stability check: small perturbations of `u` (Ekeland distance at
/// most `window / 10`) should not make the solution quench inside `[0, window]`.
pub fn perturbation_smoke_test(
    p: &ProblemSpec,
    u: &ControlSignal,
    window: f64,
    n: usize,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<CertificateReport, OptimizerError> {
    let name = "perturbation_smoke_test";
    let base = integrate_to_quench(p, u, cfg)?;
    let t_hat = base.t_hat().expect("quenched");
    if !(window >= 0.0) || window >= t_hat {
        return Err(OptimizerError::Precondition(format!(
            "window {window} must lie in [0, t_hat = {t_hat})"
        )));
    }
    if window == 0.0 || n == 0 {
        return Ok(CertificateReport {
            name: name.into(),
            passed: true,
            worst_t: 0.0,
            worst_margin: f64::INFINITY,
            detail: "vacuous: empty window or no perturbations".into(),
        });
    }
    let fine = refine(u, window / 10.0, 2.0 * quench_time_bound(p))?;
    let pieces_in_window = ((window / fine.grid_step).floor() as usize).clamp(1, fine.values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut worst_t = 0.0;
    let mut failures = 0;
    for _ in 0..n {
        let mut values = fine.values.clone();
        let k = rng.random_range(0..pieces_in_window);
        let r = p.rho0 * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        values[k] = Vec2::new(r * a.cos(), r * a.sin());
        let perturbed = ControlSignal::Piecewise(PiecewiseControl::new(
            fine.grid_step,
            values,
            fine.extension,
        )?);
        let d = ekeland_distance(u, &perturbed, window)?;
        debug_assert!(d <= window / 10.0 * (1.0 + 1e-9));
        let margin = match integrate_to_quench(p, &perturbed, cfg) {
            Ok(t) => t.t_hat().expect("quenched") - window,
            Err(_) => f64::NEG_INFINITY,
        };
        if !(margin > 0.0) {
            failures += 1;
        }
        if margin < worst {
            worst = margin;
            worst_t = k as f64 * fine.grid_step;
        }
    }
    Ok(CertificateReport {
        name: name.into(),
        passed: failures == 0,
        worst_t,
        worst_margin: worst,
        detail: format!(
            "{} of {n} perturbations kept [0, {window}] quench-free",
            n - failures
        ),
    })
}
