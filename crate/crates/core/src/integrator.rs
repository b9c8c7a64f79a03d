//! Adaptive Dormand–Prince 5(4) integration up to the quenching time, the
//! tail extrapolation that turns a stopped run into a quench-time estimate,
//! and closed-form comparison systems used as oracles.
//!
//! Integration is split into segments at every discontinuity of `B(·)` and
//! `u(·)`, so no step straddles a jump. Inside a segment the piecewise data is
//! looked up at the segment midpoint, which keeps the right endpoint on the
//! correct piece.

use thiserror::Error;

use crate::analysis::quench_time_bound;
use crate::controls::{eval_control, ControlError, ControlSignal, ProblemSpec};
use crate::fields::{eval_field, on_branch, singular_distance, Branch, FieldKind, State, Vec2};

/// Default relative tolerance.
pub const DEFAULT_RTOL: f64 = 1e-9;
/// Default absolute tolerance.
pub const DEFAULT_ATOL: f64 = 1e-12;
/// Default stopping distance to the singular set.
pub const DEFAULT_DELTA_STOP: f64 = 1e-6;
/// Horizon used for oracle systems that have no analytic bound.
pub const ORACLE_T_CAP: f64 = 100.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const PI_ALPHA: f64 = 0.7 / 5.0;
const PI_BETA: f64 = 0.4 / 5.0;
const GEOMETRIC_CAP: f64 = 0.25;
const MAX_STEPS: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("no quench before the horizon t_cap = {t_cap}")]
    HorizonExceeded { t_cap: f64 },
    #[error("trajectory left its branch at t = {t} (y = {y})")]
    LeftSeedRegion { t: f64, y: State },
    #[error("step size underflow at t = {t} (h = {h})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step budget of {0} accepted steps exhausted")]
    TooManySteps(usize),
    #[error("quench model mismatch: {0}")]
    ModelMismatch(String),
    #[error("t = {t} lies outside the closed-form window [0, {end}]")]
    OutOfWindow { t: f64, end: f64 },
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Step-size and stopping controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub delta_stop: f64,
    /// Largest step; `None` means `t_cap / 16`.
    pub max_step: Option<f64>,
    /// Hard horizon; `None` means twice the analytic quench-time bound.
    pub t_cap: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            delta_stop: DEFAULT_DELTA_STOP,
            max_step: None,
            t_cap: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegratorError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(IntegratorError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("rtol", self.rtol)?;
        positive("atol", self.atol)?;
        positive("delta_stop", self.delta_stop)?;
        if let Some(m) = self.max_step {
            positive("max_step", m)?;
        }
        if let Some(c) = self.t_cap {
            positive("t_cap", c)?;
        }
        if self.delta_stop <= 100.0 * self.atol {
            return Err(IntegratorError::InvalidConfig(format!(
                "delta_stop = {} must exceed 100 * atol = {}",
                self.delta_stop,
                100.0 * self.atol
            )));
        }
        Ok(())
    }
}

/// Closed-form comparison systems that bound the quench times from above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComparisonKind {
    /// `χ' = 1 / (2(1 − χ))`, `χ(0) = y1_0`.
    ChiF1 { y1_0: f64 },
    /// `χ' = (1 − 1/(2K0+1)) / (2(1 − χ))`, `χ(0) = r0`.
    ChiF2 { r0: f64, k0: f64 },
    /// Coupled pair `χ1' = 1/(2(1 − χ2))`, `χ2' = 1/(2(1 − χ1))` from `1 − 1/(2K0)`.
    ChiF3 { k0: f64 },
}

impl ComparisonKind {
    fn validate(&self) -> Result<(), IntegratorError> {
        let ok = match *self {
            ComparisonKind::ChiF1 { y1_0 } => y1_0 < 1.0 && y1_0.is_finite(),
            ComparisonKind::ChiF2 { r0, k0 } => {
                (0.0..1.0).contains(&r0) && k0 > 0.0 && k0.is_finite()
            }
            ComparisonKind::ChiF3 { k0 } => k0 > 0.0 && k0.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(IntegratorError::InvalidConfig(format!(
                "invalid comparison parameters {self:?}"
            )))
        }
    }

    fn rate(&self) -> f64 {
        match *self {
            ComparisonKind::ChiF1 { .. } => 1.0,
            ComparisonKind::ChiF2 { k0, .. } => 1.0 - 1.0 / (2.0 * k0 + 1.0),
            ComparisonKind::ChiF3 { .. } => 1.0,
        }
    }

    fn initial_gap_sq(&self) -> f64 {
        match *self {
            ComparisonKind::ChiF1 { y1_0 } => (y1_0 - 1.0).powi(2),
            ComparisonKind::ChiF2 { r0, .. } => (r0 - 1.0).powi(2),
            ComparisonKind::ChiF3 { k0 } => 1.0 / (4.0 * k0 * k0),
        }
    }

    /// Exact quench time of the comparison solution.
    pub fn quench_time(&self) -> f64 {
        self.initial_gap_sq() / self.rate()
    }

    pub fn initial_state(&self) -> State {
        match *self {
            ComparisonKind::ChiF1 { y1_0 } => Vec2::new(y1_0, 0.0),
            ComparisonKind::ChiF2 { r0, .. } => Vec2::new(r0, 0.0),
            ComparisonKind::ChiF3 { k0 } => {
                let c = 1.0 - 1.0 / (2.0 * k0);
                Vec2::new(c, c)
            }
        }
    }
}

/// Closed-form value of the comparison solution at time `t`.
pub fn comparison_solution(kind: ComparisonKind, t: f64) -> Result<f64, IntegratorError> {
    kind.validate()?;
    let end = kind.quench_time();
    if !(t >= 0.0 && t <= end) {
        return Err(IntegratorError::OutOfWindow { t, end });
    }
    let gap_sq = (kind.initial_gap_sq() - kind.rate() * t).max(0.0);
    Ok(1.0 - gap_sq.sqrt())
}

/// A scalar drift signal for the radial reduction of `F2`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarSignal {
    Constant(f64),
    /// Left-closed pieces of width `grid_step`, zero afterwards.
    Piecewise {
        grid_step: f64,
        values: Vec<f64>,
    },
}

impl ScalarSignal {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            ScalarSignal::Constant(v) => *v,
            ScalarSignal::Piecewise { grid_step, values } => {
                let k = (t / grid_step).floor().max(0.0) as usize;
                values.get(k).copied().unwrap_or(0.0)
            }
        }
    }

    fn sup(&self) -> f64 {
        match self {
            ScalarSignal::Constant(v) => v.abs(),
            ScalarSignal::Piecewise { values, .. } => {
                values.iter().map(|v| v.abs()).fold(0.0, f64::max)
            }
        }
    }

    fn jumps_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        match self {
            ScalarSignal::Constant(_) => Vec::new(),
            ScalarSignal::Piecewise { grid_step, values } => (1..=values.len())
                .map(|k| k as f64 * grid_step)
                .filter(|&b| b > t0 && b < t1)
                .collect(),
        }
    }
}

/// Where a trajectory came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Problem(ProblemSpec),
    Comparison(ComparisonKind),
    /// Radial reduction `r' = r/(1 − r) + drift(t)` embedded as `(r, 0)`.
    Radial {
        r0: f64,
        drift: ScalarSignal,
    },
}

/// Lyapunov-like gauge that vanishes on the singular set and decreases at a
/// finite rate near it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gauge {
    /// `(1 − y1)² / 2`.
    HalfSquare,
    /// `(1 − ‖y‖)² / 2`.
    Radius,
    /// `(1 − y1)(1 − y2)`.
    Product,
}

impl Gauge {
    pub fn value(self, y: State) -> f64 {
        match self {
            Gauge::HalfSquare => 0.5 * (1.0 - y.x1).powi(2),
            Gauge::Radius => 0.5 * (1.0 - y.norm()).powi(2),
            Gauge::Product => (1.0 - y.x1) * (1.0 - y.x2),
        }
    }

    pub fn gradient(self, y: State) -> Vec2 {
        match self {
            Gauge::HalfSquare => Vec2::new(y.x1 - 1.0, 0.0),
            Gauge::Radius => {
                let r = y.norm();
                y * ((r - 1.0) / r)
            }
            Gauge::Product => Vec2::new(y.x2 - 1.0, y.x1 - 1.0),
        }
    }
}

/// The local model used to extrapolate the quench time from a stopped run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuenchModel {
    pub gauge: Gauge,
    /// Bound on the control-induced part of the right-hand side.
    pub drift_bound: f64,
}

/// One tail sample fed to [`estimate_quench_time`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSample {
    pub t: f64,
    pub y: State,
    /// Full right-hand side at `(t, y)`.
    pub rate: Vec2,
    /// Right-hand side without the control term.
    pub free_rate: Vec2,
}

/// Estimated quench time with a model-based bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuenchEstimate {
    pub t_hat: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub terminal_state: State,
    /// Finite limit data: `y2` for F1, `‖y‖` for F2, the farther coordinate for F3.
    pub limit_value: f64,
}

impl QuenchEstimate {
    pub fn width(&self) -> f64 {
        self.bracket_hi - self.bracket_lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.bracket_lo + self.bracket_hi)
    }
}

/// Extrapolates the quench time from the last samples of a run.
///
/// The gauge `g` satisfies `g' = ∇g·(f + Bu)`; its rate is essentially
/// constant near the singular set, so the remaining time is `g / (−g')`. The
/// bracket replaces the control term by its worst case `±drift_bound·‖∇g‖`,
/// widened by the rounding floor of `steps` accumulated time additions.
pub fn estimate_quench_time(
    model: &QuenchModel,
    tail: &[TailSample],
    steps: usize,
) -> Result<QuenchEstimate, IntegratorError> {
    if tail.len() < 3 {
        return Err(IntegratorError::ModelMismatch(format!(
            "need at least 3 tail samples, got {}",
            tail.len()
        )));
    }
    let gauge_values: Vec<f64> = tail.iter().map(|s| model.gauge.value(s.y)).collect();
    if gauge_values.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(IntegratorError::ModelMismatch(
            "distance is not decreasing over the tail".into(),
        ));
    }
    let last = tail[tail.len() - 1];
    let g = gauge_values[gauge_values.len() - 1];
    let grad = model.gauge.gradient(last.y);
    let rate = -grad.dot(last.rate);
    if !(rate > 0.0) {
        return Err(IntegratorError::ModelMismatch(format!(
            "gauge is not decreasing at t = {} (rate {rate})",
            last.t
        )));
    }
    let free = -grad.dot(last.free_rate);
    let slack = model.drift_bound * grad.norm();
    let slow = free - slack;
    if !(slow > 0.0) {
        return Err(IntegratorError::ModelMismatch(format!(
            "worst-case drift can stall the approach at t = {} (rate {free}, slack {slack})",
            last.t
        )));
    }
    let t_end = last.t;
    let t_hat = t_end + g / rate;
    let floor = (steps.max(1) as f64) * f64::EPSILON * t_hat.abs();
    let lo = (t_end + g / (free + slack)).min(t_hat) - floor;
    let hi = (t_end + g / slow).max(t_hat) + floor;
    Ok(QuenchEstimate {
        t_hat,
        bracket_lo: lo.max(t_end),
        bracket_hi: hi,
        terminal_state: last.y,
        limit_value: 0.0,
    })
}

/// Accepted/rejected step counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// A sampled solution on `[0, t_end]`, optionally ending in a quench estimate.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub origin: Origin,
    pub control: ControlSignal,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Right-hand side leaving each sample (first stage of the next step).
    pub slopes_out: Vec<Vec2>,
    /// Right-hand side arriving at each sample (last stage of the previous step).
    pub slopes_in: Vec<Vec2>,
    pub distances: Vec<f64>,
    pub quench: Option<QuenchEstimate>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn problem(&self) -> Option<&ProblemSpec> {
        match &self.origin {
            Origin::Problem(p) => Some(p),
            _ => None,
        }
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has samples")
    }

    pub fn t_hat(&self) -> Option<f64> {
        self.quench.map(|q| q.t_hat)
    }

    /// Field used for distances and branch predicates.
    pub fn field(&self) -> FieldKind {
        match &self.origin {
            Origin::Problem(p) => p.field,
            Origin::Comparison(ComparisonKind::ChiF3 { .. }) => FieldKind::F3,
            Origin::Comparison(_) | Origin::Radial { .. } => FieldKind::F1,
        }
    }

    pub fn branch(&self) -> Branch {
        match &self.origin {
            Origin::Problem(p) => p.branch(),
            Origin::Radial { r0, .. } if *r0 > 1.0 => Branch::Above,
            _ => Branch::Below,
        }
    }

    /// Cubic Hermite interpolation of the state on `[0, t_end]`.
    pub fn state_at(&self, t: f64) -> State {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.states[0];
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        hermite(
            self.times[i],
            self.states[i],
            self.slopes_out[i],
            self.times[i + 1],
            self.states[i + 1],
            self.slopes_in[i + 1],
            t,
        )
    }
}

/// Cubic Hermite interpolant through `(t0, y0, f0)` and `(t1, y1, f1)`.
pub fn hermite(t0: f64, y0: Vec2, f0: Vec2, t1: f64, y1: Vec2, f1: Vec2, t: f64) -> Vec2 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    y0 * h00 + f0 * (h10 * h) + y1 * h01 + f1 * (h11 * h)
}

#[derive(Debug, Clone, Copy)]
struct Singular;

/// Right-hand side of one of the integrable systems.
enum Dynamics<'a> {
    Problem {
        p: &'a ProblemSpec,
        u: &'a ControlSignal,
    },
    Comparison(ComparisonKind),
    Radial {
        drift: &'a ScalarSignal,
    },
}

fn scalar_guard(y: f64) -> Result<f64, Singular> {
    let d = 1.0 - y;
    if d.abs() < crate::fields::SINGULAR_GUARD * (1.0 + y.abs()) || !d.is_finite() {
        Err(Singular)
    } else {
        Ok(d)
    }
}

impl Dynamics<'_> {
    /// `seg_t` selects the active piece of piecewise data.
    fn rhs(&self, t: f64, y: State, seg_t: f64) -> Result<Vec2, Singular> {
        match self {
            Dynamics::Problem { p, u } => {
                let f = eval_field(p.field, y).map_err(|_| Singular)?;
                let ut = if u.is_feedback() {
                    eval_control(u, t)
                } else {
                    eval_control(u, seg_t)
                };
                Ok(f + p.matrix.at(seg_t).mul_vec(ut))
            }
            Dynamics::Comparison(kind) => match kind {
                ComparisonKind::ChiF3 { .. } => {
                    let d1 = scalar_guard(y.x1)?;
                    let d2 = scalar_guard(y.x2)?;
                    Ok(Vec2::new(0.5 / d2, 0.5 / d1))
                }
                _ => Ok(Vec2::new(0.5 * kind.rate() / scalar_guard(y.x1)?, 0.0)),
            },
            Dynamics::Radial { drift } => {
                let d = scalar_guard(y.x1)?;
                Ok(Vec2::new(y.x1 / d + drift.at(seg_t), 0.0))
            }
        }
    }

    fn free_rhs(&self, y: State) -> Result<Vec2, Singular> {
        match self {
            Dynamics::Problem { p, .. } => eval_field(p.field, y).map_err(|_| Singular),
            Dynamics::Comparison(_) => self.rhs(0.0, y, 0.0),
            Dynamics::Radial { .. } => Ok(Vec2::new(y.x1 / scalar_guard(y.x1)?, 0.0)),
        }
    }

    fn field(&self) -> FieldKind {
        match self {
            Dynamics::Problem { p, .. } => p.field,
            Dynamics::Comparison(ComparisonKind::ChiF3 { .. }) => FieldKind::F3,
            _ => FieldKind::F1,
        }
    }

    fn distance(&self, y: State) -> f64 {
        singular_distance(self.field(), y)
    }

    fn on_branch(&self, branch: Branch, y: State) -> bool {
        match self {
            Dynamics::Radial { .. } if branch == Branch::Below => y.x1 > 0.0 && y.x1 < 1.0,
            _ => on_branch(self.field(), branch, y),
        }
    }

    fn jumps_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        match self {
            Dynamics::Problem { p, u } => {
                let mut j = p.matrix.jumps_in(t0, t1);
                j.extend(u.jumps_in(t0, t1));
                j
            }
            Dynamics::Comparison(_) => Vec::new(),
            Dynamics::Radial { drift } => drift.jumps_in(t0, t1),
        }
    }

    fn model(&self) -> QuenchModel {
        match self {
            Dynamics::Problem { p, .. } => QuenchModel {
                gauge: match p.field {
                    FieldKind::F1 => Gauge::HalfSquare,
                    FieldKind::F2 => Gauge::Radius,
                    FieldKind::F3 => Gauge::Product,
                },
                drift_bound: p.k0(),
            },
            Dynamics::Comparison(ComparisonKind::ChiF3 { .. }) => QuenchModel {
                gauge: Gauge::Product,
                drift_bound: 0.0,
            },
            Dynamics::Comparison(_) => QuenchModel {
                gauge: Gauge::HalfSquare,
                drift_bound: 0.0,
            },
            Dynamics::Radial { drift } => QuenchModel {
                gauge: Gauge::HalfSquare,
                drift_bound: drift.sup(),
            },
        }
    }

    fn limit_value(&self, y: State) -> f64 {
        match self.field() {
            FieldKind::F1 => match self {
                Dynamics::Problem { .. } => y.x2,
                _ => y.x1,
            },
            FieldKind::F2 => y.norm(),
            FieldKind::F3 => {
                if (1.0 - y.x1).abs() >= (1.0 - y.x2).abs() {
                    y.x1
                } else {
                    y.x2
                }
            }
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct StepResult {
    y: State,
    err: Vec2,
    k7: Vec2,
}

fn dp_step(
    sys: &Dynamics<'_>,
    t: f64,
    y: State,
    k1: Vec2,
    h: f64,
    seg_t: f64,
) -> Result<StepResult, Singular> {
    let k2 = sys.rhs(t + C2 * h, y + k1 * (h * A21), seg_t)?;
    let k3 = sys.rhs(t + C3 * h, y + (k1 * A31 + k2 * A32) * h, seg_t)?;
    let k4 = sys.rhs(t + C4 * h, y + (k1 * A41 + k2 * A42 + k3 * A43) * h, seg_t)?;
    let k5 = sys.rhs(
        t + C5 * h,
        y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h,
        seg_t,
    )?;
    let k6 = sys.rhs(
        t + h,
        y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h,
        seg_t,
    )?;
    let y_new = y + (k1 * B1 + k3 * B3 + k4 * B4 + k5 * B5 + k6 * B6) * h;
    let k7 = sys.rhs(t + h, y_new, seg_t)?;
    let err = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
    Ok(StepResult { y: y_new, err, k7 })
}

fn error_norm(cfg: &IntegratorConfig, y: State, y_new: State, err: Vec2, dist: f64) -> f64 {
    let sc1 = cfg.atol + cfg.rtol * y.x1.abs().max(y_new.x1.abs());
    let sc2 = cfg.atol + cfg.rtol * y.x2.abs().max(y_new.x2.abs());
    let standard = (0.5 * ((err.x1 / sc1).powi(2) + (err.x2 / sc2).powi(2))).sqrt();
    let relative = err.norm() / (cfg.atol + cfg.rtol * dist);
    standard.max(relative)
}

enum Stop {
    Quench,
    Window,
}

/// Drives the adaptive integration. `t_stop` ends the run early without a quench.
fn run(
    sys: &Dynamics<'_>,
    y0: State,
    branch: Branch,
    cfg: &IntegratorConfig,
    t_cap: f64,
    t_stop: Option<f64>,
) -> Result<(RawPath, Stop), IntegratorError> {
    cfg.validate()?;
    let end = t_stop.map_or(t_cap, |s| s.min(t_cap));
    let max_step = cfg.max_step.unwrap_or(t_cap / 16.0);
    let mut segments = sys.jumps_in(0.0, end);
    segments.push(end);
    segments.sort_by(f64::total_cmp);
    segments.dedup();

    let mut path = RawPath::default();
    let mut stats = StepStats::default();
    let mut t = 0.0;
    let mut y = y0;
    let mut seg_idx = 0;
    let mut seg_start = 0.0;
    let seg_mid = |a: f64, b: f64| 0.5 * (a + b);
    let mut seg_t = seg_mid(seg_start, segments[0]);
    let mut k1 = sys
        .rhs(t, y, seg_t)
        .map_err(|_| IntegratorError::LeftSeedRegion { t, y })?;
    stats.evaluations += 1;
    let mut dist = sys.distance(y);
    path.push(t, y, k1, k1, dist);

    let speed = k1.norm().max(f64::MIN_POSITIVE);
    let mut h = (GEOMETRIC_CAP * dist / speed).min(max_step).min(1e-3 * end);
    let mut err_prev: f64 = 1.0;

    loop {
        if dist <= cfg.delta_stop {
            stats.accepted = path.times.len() - 1;
            path.stats = stats;
            return Ok((path, Stop::Quench));
        }
        let seg_end = segments[seg_idx];
        let geometric = GEOMETRIC_CAP * dist / k1.norm().max(f64::MIN_POSITIVE);
        h = h.min(max_step).min(geometric);
        let mut landing = false;
        let remaining = seg_end - t;
        if 1.01 * h >= remaining {
            h = remaining;
            landing = true;
        } else if h > 0.5 * remaining {
            // Split the rest evenly instead of leaving a sliver before the jump.
            h = 0.5 * remaining;
        }
        let h_min = 16.0 * f64::EPSILON * t.abs().max(f64::MIN_POSITIVE);
        if h <= h_min || t + h == t {
            return Err(IntegratorError::StepSizeUnderflow { t, h });
        }
        let step = dp_step(sys, t, y, k1, h, seg_t);
        stats.evaluations += 6;
        let res = match step {
            Ok(r) if r.y.is_finite() && sys.on_branch(branch, r.y) => r,
            Ok(r) if r.y.is_finite() => {
                stats.rejected += 1;
                h *= 0.25;
                if h <= h_min {
                    return Err(IntegratorError::LeftSeedRegion { t: t + h, y: r.y });
                }
                continue;
            }
            _ => {
                stats.rejected += 1;
                h *= 0.25;
                continue;
            }
        };
        let new_dist = sys.distance(res.y);
        let en = error_norm(cfg, y, res.y, res.err, dist.min(new_dist));
        if !(en <= 1.0) {
            stats.rejected += 1;
            let fac = if en.is_finite() {
                (SAFETY * en.powf(-0.2)).max(FAC_MIN)
            } else {
                FAC_MIN
            };
            h *= fac;
            continue;
        }
        let t_new = if landing { seg_end } else { t + h };
        let mut fac = SAFETY * en.max(1e-10).powf(-PI_ALPHA) * err_prev.powf(PI_BETA);
        fac = fac.clamp(FAC_MIN, FAC_MAX);
        err_prev = en.max(1e-4);
        let h_next = h * fac;
        t = t_new;
        y = res.y;
        dist = new_dist;
        k1 = res.k7;
        let slope_in = res.k7;
        if path.times.len() > MAX_STEPS {
            return Err(IntegratorError::TooManySteps(MAX_STEPS));
        }
        if landing {
            if seg_idx + 1 == segments.len() {
                path.push(t, y, slope_in, slope_in, dist);
                stats.accepted = path.times.len() - 1;
                path.stats = stats;
                if dist <= cfg.delta_stop {
                    return Ok((path, Stop::Quench));
                }
                return match t_stop {
                    Some(s) if t >= s => Ok((path, Stop::Window)),
                    _ => Err(IntegratorError::HorizonExceeded { t_cap }),
                };
            }
            seg_idx += 1;
            seg_start = t;
            seg_t = seg_mid(seg_start, segments[seg_idx]);
            k1 = sys
                .rhs(t, y, seg_t)
                .map_err(|_| IntegratorError::LeftSeedRegion { t, y })?;
            stats.evaluations += 1;
        }
        path.push(t, y, k1, slope_in, dist);
        h = h_next;
    }
}

#[derive(Debug, Default)]
struct RawPath {
    times: Vec<f64>,
    states: Vec<State>,
    slopes_out: Vec<Vec2>,
    slopes_in: Vec<Vec2>,
    distances: Vec<f64>,
    stats: StepStats,
}

impl RawPath {
    fn push(&mut self, t: f64, y: State, out: Vec2, inc: Vec2, d: f64) {
        self.times.push(t);
        self.states.push(y);
        self.slopes_out.push(out);
        self.slopes_in.push(inc);
        self.distances.push(d);
    }
}

fn finish(
    sys: &Dynamics<'_>,
    origin: Origin,
    control: ControlSignal,
    path: RawPath,
    stop: Stop,
) -> Result<Trajectory, IntegratorError> {
    let quench = match stop {
        Stop::Window => None,
        Stop::Quench => {
            let n = path.times.len();
            let from = n.saturating_sub(3);
            let mut tail = Vec::with_capacity(n - from);
            for i in from..n {
                let y = path.states[i];
                let free = sys.free_rhs(y).map_err(|_| {
                    IntegratorError::ModelMismatch(format!(
                        "singular evaluation at the tail sample t = {}",
                        path.times[i]
                    ))
                })?;
                tail.push(TailSample {
                    t: path.times[i],
                    y,
                    rate: path.slopes_in[i],
                    free_rate: free,
                });
            }
            let mut q = estimate_quench_time(&sys.model(), &tail, path.stats.accepted)?;
            q.limit_value = sys.limit_value(q.terminal_state);
            Some(q)
        }
    };
    Ok(Trajectory {
        origin,
        control,
        times: path.times,
        states: path.states,
        slopes_out: path.slopes_out,
        slopes_in: path.slopes_in,
        distances: path.distances,
        quench,
        stats: path.stats,
    })
}

/// Horizon used for a problem when the configuration leaves it open.
pub fn default_t_cap(p: &ProblemSpec) -> f64 {
    2.0 * quench_time_bound(p)
}

/// Integrates `y' = f(y) + B(t)u(t)` from `y0` until the singular set is
/// within `delta_stop`, then attaches a quench estimate.
pub fn integrate_to_quench(
    p: &ProblemSpec,
    u: &ControlSignal,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegratorError> {
    p.check_admissible(u)?;
    let sys = Dynamics::Problem { p, u };
    let t_cap = cfg.t_cap.unwrap_or_else(|| default_t_cap(p));
    let (path, stop) = run(&sys, p.y0, p.branch(), cfg, t_cap, None)?;
    finish(&sys, Origin::Problem(p.clone()), u.clone(), path, stop)
}

/// Integrates on `[0, t_stop]`. The result carries a quench estimate only if
/// the run reached the singular set before `t_stop`.
pub fn integrate_window(
    p: &ProblemSpec,
    u: &ControlSignal,
    cfg: &IntegratorConfig,
    t_stop: f64,
) -> Result<Trajectory, IntegratorError> {
    if !(t_stop > 0.0) || !t_stop.is_finite() {
        return Err(IntegratorError::InvalidConfig(format!(
            "window end must be positive, got {t_stop}"
        )));
    }
    p.check_admissible(u)?;
    let sys = Dynamics::Problem { p, u };
    let t_cap = cfg.t_cap.unwrap_or_else(|| default_t_cap(p)).max(t_stop);
    let (path, stop) = run(&sys, p.y0, p.branch(), cfg, t_cap, Some(t_stop))?;
    finish(&sys, Origin::Problem(p.clone()), u.clone(), path, stop)
}

/// Integrates a comparison system with the generic engine.
pub fn integrate_comparison(
    kind: ComparisonKind,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegratorError> {
    kind.validate()?;
    let sys = Dynamics::Comparison(kind);
    let t_cap = cfg.t_cap.unwrap_or(2.0 * kind.quench_time());
    let (path, stop) = run(&sys, kind.initial_state(), Branch::Below, cfg, t_cap, None)?;
    finish(
        &sys,
        Origin::Comparison(kind),
        ControlSignal::Zero,
        path,
        stop,
    )
}

/// Integrates the radial reduction `r' = r/(1 − r) + drift(t)` of `F2`.
///
/// The state is embedded as `(r, 0)`.
pub fn integrate_radial_f2(
    r0: f64,
    drift: &ScalarSignal,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegratorError> {
    if !(r0 > 0.0) || r0 == 1.0 || !r0.is_finite() {
        return Err(IntegratorError::InvalidConfig(format!(
            "radius must be positive and off 1, got {r0}"
        )));
    }
    let sys = Dynamics::Radial { drift };
    let branch = if r0 < 1.0 {
        Branch::Below
    } else {
        Branch::Above
    };
    let t_cap = cfg.t_cap.unwrap_or(ORACLE_T_CAP);
    let (path, stop) = run(&sys, Vec2::new(r0, 0.0), branch, cfg, t_cap, None)?;
    finish(
        &sys,
        Origin::Radial {
            r0,
            drift: drift.clone(),
        },
        ControlSignal::Zero,
        path,
        stop,
    )
}
