//! Regularized adjoint and variational equations along a computed trajectory,
//! and the maximum-principle certificate built from them.
//!
//! The adjoint solves `ψ' = −Jᵀψ` backward from `t_hat − ε`, where `J` is the
//! standard Jacobian of the field. The variational equation is
//! `z' = J z + B(u_alt − u)` with `z(0) = 0`. Both are integrated with
//! classical RK4 on a refinement of the trajectory's own sample grid, reading
//! the state from its cubic Hermite interpolant.

use thiserror::Error;

use crate::controls::{eval_control, pmp_argmax, ControlError, ControlSignal, ProblemSpec};
use crate::fields::{eval_jacobian, singular_distance, FieldError, FieldKind, State, Vec2};
use crate::integrator::{hermite, integrate_window, IntegratorConfig, IntegratorError, Trajectory};

/// RK4 substeps per trajectory interval.
const SUBSTEPS: usize = 4;
/// Smallest acceptable nontriviality ratio.
pub const NONTRIVIALITY_THRESHOLD: f64 = 0.1;
/// Default tolerance on the maximum-condition residual.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmpError {
    #[error("no maximum principle is available for {0}")]
    UnsupportedField(FieldKind),
    #[error("epsilon = {epsilon} must lie in (0, t_hat = {t_hat})")]
    EpsilonTooLarge { epsilon: f64, t_hat: f64 },
    #[error("trajectory has no quench estimate")]
    NoQuench,
    #[error("trajectory does not come from a control problem")]
    NotAProblem,
    #[error("horizon {horizon} is outside the adjoint window [0, {end}]")]
    HorizonOutOfRange { horizon: f64, end: f64 },
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Default regularization: `max(1e-3·t_hat, 10·δ^{2/3})`, capped at `t_hat / 2`.
pub fn default_epsilon(t_hat: f64, delta_stop: f64) -> f64 {
    (1e-3 * t_hat)
        .max(10.0 * delta_stop.powf(2.0 / 3.0))
        .min(0.5 * t_hat)
}

/// Terminal adjoint value at the regularized end point.
pub fn terminal_condition(field: FieldKind, y: State) -> Result<Vec2, PmpError> {
    match field {
        FieldKind::F1 => Ok(Vec2::new(1.0 - y.x1, 0.0)),
        FieldKind::F2 => {
            let r = y.norm();
            Ok(y * ((1.0 - r) / r))
        }
        FieldKind::F3 => Err(PmpError::UnsupportedField(FieldKind::F3)),
    }
}

/// Ratio whose limit at the quench time is 1 for a correctly normalized adjoint.
pub fn nontriviality_ratio(field: FieldKind, y: State, psi: Vec2) -> Result<f64, PmpError> {
    match field {
        FieldKind::F1 => Ok(psi.x1 / (1.0 - y.x1)),
        FieldKind::F2 => Ok(psi.dot(y * (1.0 / (1.0 - y.norm())))),
        FieldKind::F3 => Err(PmpError::UnsupportedField(FieldKind::F3)),
    }
}

/// Samples of the regularized adjoint, stored in decreasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPath {
    pub field: FieldKind,
    pub times: Vec<f64>,
    pub psi: Vec<Vec2>,
    pub dpsi: Vec<Vec2>,
    pub states: Vec<State>,
    pub epsilon: f64,
    pub terminal_time: f64,
    pub terminal_condition: Vec2,
    /// `max ‖ψ(t)‖ / dist(y(t))` over the samples.
    pub decay_constant: f64,
}

impl AdjointPath {
    /// Hermite interpolation of `ψ`; clamped to the end values outside `[0, T]`.
    pub fn psi_at(&self, t: f64) -> Vec2 {
        let n = self.times.len();
        if t >= self.times[0] {
            return self.psi[0];
        }
        if t <= self.times[n - 1] {
            return self.psi[n - 1];
        }
        let i = self.times.partition_point(|&s| s > t);
        hermite(
            self.times[i],
            self.psi[i],
            self.dpsi[i],
            self.times[i - 1],
            self.psi[i - 1],
            self.dpsi[i - 1],
            t,
        )
    }

    /// Ratio at every sample, in the stored (decreasing time) order.
    pub fn ratios(&self) -> Vec<f64> {
        self.states
            .iter()
            .zip(&self.psi)
            .map(|(&y, &p)| nontriviality_ratio(self.field, y, p).unwrap_or(f64::NAN))
            .collect()
    }
}

fn require_pmp_field(field: FieldKind) -> Result<(), PmpError> {
    if field == FieldKind::F3 {
        Err(PmpError::UnsupportedField(field))
    } else {
        Ok(())
    }
}

/// Hermite state lookup restricted to trajectory interval `i`.
fn state_in(traj: &Trajectory, i: usize, t: f64) -> State {
    hermite(
        traj.times[i],
        traj.states[i],
        traj.slopes_out[i],
        traj.times[i + 1],
        traj.states[i + 1],
        traj.slopes_in[i + 1],
        t,
    )
}

fn interval_of(traj: &Trajectory, t: f64) -> usize {
    let n = traj.times.len();
    traj.times.partition_point(|&s| s <= t).clamp(1, n - 1) - 1
}

fn adjoint_rhs(field: FieldKind, y: State, psi: Vec2) -> Result<Vec2, PmpError> {
    let j = eval_jacobian(field, y)?;
    Ok(-j.transpose().mul_vec(psi))
}

/// Integrates the regularized adjoint backward from `t_hat − ε` to 0.
pub fn integrate_adjoint(traj: &Trajectory, epsilon: f64) -> Result<AdjointPath, PmpError> {
    let p = traj.problem().ok_or(PmpError::NotAProblem)?;
    require_pmp_field(p.field)?;
    let t_hat = traj.t_hat().ok_or(PmpError::NoQuench)?;
    if !(epsilon > 0.0 && epsilon < t_hat) {
        return Err(PmpError::EpsilonTooLarge { epsilon, t_hat });
    }
    let field = p.field;
    let t_term = (t_hat - epsilon).min(traj.t_end());
    let i_term = interval_of(traj, t_term);
    let y_term = state_in(traj, i_term, t_term);
    let psi_term = terminal_condition(field, y_term)?;

    let mut times = vec![t_term];
    let mut psi = vec![psi_term];
    let mut dpsi = vec![adjoint_rhs(field, y_term, psi_term)?];
    let mut states = vec![y_term];

    let mut t = t_term;
    let mut cur = psi_term;
    for i in (0..=i_term).rev() {
        let a = traj.times[i];
        if !(a < t) {
            continue;
        }
        let h = (a - t) / SUBSTEPS as f64;
        for s in 0..SUBSTEPS {
            let t0 = t + h * s as f64;
            let t1 = if s + 1 == SUBSTEPS {
                a
            } else {
                t + h * (s + 1) as f64
            };
            let f = |tt: f64, v: Vec2| adjoint_rhs(field, state_in(traj, i, tt), v);
            let k1 = f(t0, cur)?;
            let k2 = f(t0 + 0.5 * h, cur + k1 * (0.5 * h))?;
            let k3 = f(t0 + 0.5 * h, cur + k2 * (0.5 * h))?;
            let k4 = f(t1, cur + k3 * h)?;
            cur += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        t = a;
        let y = traj.states[i];
        times.push(t);
        psi.push(cur);
        dpsi.push(adjoint_rhs(field, y, cur)?);
        states.push(y);
    }
    let decay_constant = states
        .iter()
        .zip(&psi)
        .map(|(&y, p)| p.norm() / singular_distance(field, y))
        .fold(0.0, f64::max);
    Ok(AdjointPath {
        field,
        times,
        psi,
        dpsi,
        states,
        epsilon,
        terminal_time: t_term,
        terminal_condition: psi_term,
        decay_constant,
    })
}

/// Solution of the variational equation along a trajectory.
#[derive(Debug, Clone)]
pub struct SensitivityPath {
    pub times: Vec<f64>,
    pub z: Vec<Vec2>,
    pub u: ControlSignal,
    pub u_alt: ControlSignal,
}

impl SensitivityPath {
    pub fn z_end(&self) -> Vec2 {
        *self.z.last().expect("nonempty")
    }
}

/// Integration grid on `[0, horizon]`: trajectory samples plus the jumps of
/// both controls.
fn forward_grid(traj: &Trajectory, u_alt: &ControlSignal, horizon: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = traj
        .times
        .iter()
        .copied()
        .filter(|&t| t < horizon)
        .collect();
    grid.extend(u_alt.jumps_in(0.0, horizon));
    grid.push(horizon);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Control perturbation `B(t)(u_alt(t) − u(t))`, sampled at `seg_t` unless a
/// feedback law requires the exact time.
fn forcing(p: &ProblemSpec, u: &ControlSignal, u_alt: &ControlSignal, t: f64, seg_t: f64) -> Vec2 {
    let at = |c: &ControlSignal| {
        if c.is_feedback() {
            eval_control(c, t)
        } else {
            eval_control(c, seg_t)
        }
    };
    p.matrix.at(seg_t).mul_vec(at(u_alt) - at(u))
}

/// Integrates `z' = J z + B(u_alt − u)` with `z(0) = 0` up to `horizon`.
pub fn integrate_sensitivity(
    traj: &Trajectory,
    u_alt: &ControlSignal,
    horizon: f64,
) -> Result<SensitivityPath, PmpError> {
    let p = traj.problem().ok_or(PmpError::NotAProblem)?;
    require_pmp_field(p.field)?;
    let end = traj.t_end();
    if !(horizon > 0.0 && horizon <= end) {
        return Err(PmpError::HorizonOutOfRange { horizon, end });
    }
    p.check_admissible(u_alt)?;
    let u = &traj.control;
    let field = p.field;
    let grid = forward_grid(traj, u_alt, horizon);
    let mut times = vec![0.0];
    let mut z = vec![Vec2::ZERO];
    let mut cur = Vec2::ZERO;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let i = interval_of(traj, 0.5 * (a + b));
        let seg_t = 0.5 * (a + b);
        let f = |tt: f64, v: Vec2| -> Result<Vec2, PmpError> {
            let j = eval_jacobian(field, state_in(traj, i, tt))?;
            Ok(j.mul_vec(v) + forcing(p, u, u_alt, tt, seg_t))
        };
        let h = (b - a) / SUBSTEPS as f64;
        for s in 0..SUBSTEPS {
            let t0 = a + h * s as f64;
            let k1 = f(t0, cur)?;
            let k2 = f(t0 + 0.5 * h, cur + k1 * (0.5 * h))?;
            let k3 = f(t0 + 0.5 * h, cur + k2 * (0.5 * h))?;
            let k4 = f(t0 + h, cur + k3 * h)?;
            cur += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        times.push(b);
        z.push(cur);
    }
    Ok(SensitivityPath {
        times,
        z,
        u: u.clone(),
        u_alt: u_alt.clone(),
    })
}

/// Both sides of `⟨ψ(T), z(T)⟩ = ∫₀ᵀ ⟨ψ, B(u_alt − u)⟩ dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityCheck {
    pub pairing: f64,
    pub integral: f64,
    pub residual: f64,
}

/// Evaluates the adjoint/variational duality identity at the sensitivity horizon.
pub fn duality_check(
    traj: &Trajectory,
    adj: &AdjointPath,
    sens: &SensitivityPath,
) -> Result<DualityCheck, PmpError> {
    let p = traj.problem().ok_or(PmpError::NotAProblem)?;
    let horizon = *sens.times.last().expect("nonempty");
    if horizon > adj.terminal_time {
        return Err(PmpError::HorizonOutOfRange {
            horizon,
            end: adj.terminal_time,
        });
    }
    // Three-point Gauss–Legendre on each interval where the forcing is smooth.
    let nodes = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
    let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let mut integral = 0.0;
    for w in sens.times.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        for (x, wt) in nodes.iter().zip(weights) {
            let t = mid + half * x;
            integral += wt * half * adj.psi_at(t).dot(forcing(p, &sens.u, &sens.u_alt, t, mid));
        }
    }
    let pairing = adj.psi_at(horizon).dot(sens.z_end());
    Ok(DualityCheck {
        pairing,
        integral,
        residual: (pairing - integral).abs(),
    })
}

/// Numerical check of the maximum condition and nontriviality for a candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PMPCertificate {
    /// `sup_t max_u ⟨ψ, B u⟩ − ⟨ψ, B u*⟩`, evaluated between adjoint samples.
    pub max_residual: f64,
    pub worst_t: f64,
    pub terminal_norm: f64,
    /// Distance between the stored terminal value and the terminal formula.
    pub terminal_error: f64,
    pub nontriviality_ratio: f64,
    pub passed: bool,
}

/// Evaluates the maximum-principle certificate of `u_star` along `traj`.
pub fn pmp_certificate(
    traj: &Trajectory,
    u_star: &ControlSignal,
    adj: &AdjointPath,
    residual_tol: f64,
) -> Result<PMPCertificate, PmpError> {
    let p = traj.problem().ok_or(PmpError::NotAProblem)?;
    require_pmp_field(p.field)?;
    let mut max_residual = f64::NEG_INFINITY;
    let mut worst_t = 0.0;
    for w in adj.times.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let psi = adj.psi_at(t);
        let b = p.matrix.at(t);
        let best = pmp_argmax(psi, &b, p.rho0);
        let r = psi.dot(b.mul_vec(best - eval_control(u_star, t)));
        if r > max_residual || r.is_nan() {
            max_residual = r;
            worst_t = t;
        }
    }
    let y_term = traj.state_at(adj.terminal_time);
    let expected = terminal_condition(p.field, y_term)?;
    let terminal = adj.psi[0];
    let terminal_error = (terminal - expected).norm();
    let n = adj.times.len() - 1;
    let ratio = nontriviality_ratio(p.field, adj.states[n], adj.psi[n])?;
    let terminal_ok = terminal_error <= 1e-9 * (1.0 + expected.norm());
    let passed = max_residual <= residual_tol && ratio >= NONTRIVIALITY_THRESHOLD && terminal_ok;
    Ok(PMPCertificate {
        max_residual,
        worst_t,
        terminal_norm: terminal.norm(),
        terminal_error,
        nontriviality_ratio: ratio,
        passed,
    })
}

/// Penalty `(dist(y(t* − ε)))² / 2`; zero if the run quenches earlier.
pub fn penalty_value(
    p: &ProblemSpec,
    u: &ControlSignal,
    t_star: f64,
    epsilon: f64,
    cfg: &IntegratorConfig,
) -> Result<f64, PmpError> {
    require_pmp_field(p.field)?;
    if !(epsilon > 0.0 && epsilon < t_star) {
        return Err(PmpError::EpsilonTooLarge {
            epsilon,
            t_hat: t_star,
        });
    }
    let traj = integrate_window(p, u, cfg, t_star - epsilon)?;
    if traj.quench.is_some() {
        return Ok(0.0);
    }
    let y = *traj.states.last().expect("nonempty");
    Ok(0.5 * singular_distance(p.field, y).powi(2))
}
