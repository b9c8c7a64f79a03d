//! Admissible controls, the matrix signal `B(t)`, problem specifications and
//! the pointwise maximizer of the Pontryagin maximum condition.

use std::sync::Arc;

use thiserror::Error;

use crate::fields::{in_seed_region, Branch, FieldError, FieldKind, Matrix2, State, Vec2};
use crate::pmp::AdjointPath;

/// Componentwise tolerance under which two control values are considered equal.
pub const AGREE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("initial state {y0} is not in the seed region of {field} for K0 = {k0}")]
    NotInSeedRegion {
        field: FieldKind,
        y0: State,
        k0: f64,
    },
    #[error("inadmissible control: {0}")]
    Inadmissible(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// The (piecewise constant) matrix function `B(t)` multiplying the control.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSignal {
    Constant(Matrix2),
    /// `matrices[k]` is active on `[breakpoints[k], breakpoints[k + 1])`; the
    /// last matrix stays active forever.
    Piecewise {
        breakpoints: Vec<f64>,
        matrices: Vec<Matrix2>,
    },
}

impl MatrixSignal {
    /// Validated piecewise signal. Breakpoints must start at 0 and increase strictly.
    pub fn piecewise(breakpoints: Vec<f64>, matrices: Vec<Matrix2>) -> Result<Self, ControlError> {
        let s = MatrixSignal::Piecewise {
            breakpoints,
            matrices,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        match self {
            MatrixSignal::Constant(m) => {
                if !m.is_finite() {
                    return Err(ControlError::InvalidParameter(
                        "B has non-finite entries".into(),
                    ));
                }
            }
            MatrixSignal::Piecewise {
                breakpoints,
                matrices,
            } => {
                if matrices.is_empty() {
                    return Err(ControlError::InvalidParameter("B has no pieces".into()));
                }
                if breakpoints.len() != matrices.len() {
                    return Err(ControlError::InvalidParameter(format!(
                        "B has {} breakpoints but {} matrices",
                        breakpoints.len(),
                        matrices.len()
                    )));
                }
                if breakpoints[0] != 0.0 {
                    return Err(ControlError::InvalidParameter(
                        "B breakpoints must start at 0".into(),
                    ));
                }
                if breakpoints
                    .windows(2)
                    .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
                {
                    return Err(ControlError::InvalidParameter(
                        "B breakpoints must be finite and strictly increasing".into(),
                    ));
                }
                if matrices.iter().any(|m| !m.is_finite()) {
                    return Err(ControlError::InvalidParameter(
                        "B has non-finite entries".into(),
                    ));
                }
            }
        }
        if self.pieces().iter().all(|m| m.is_zero()) {
            return Err(ControlError::InvalidParameter(
                "B must be nontrivial".into(),
            ));
        }
        Ok(())
    }

    pub fn pieces(&self) -> &[Matrix2] {
        match self {
            MatrixSignal::Constant(m) => std::slice::from_ref(m),
            MatrixSignal::Piecewise { matrices, .. } => matrices,
        }
    }

    /// `B(t)`; intervals are left-closed.
    pub fn at(&self, t: f64) -> Matrix2 {
        match self {
            MatrixSignal::Constant(m) => *m,
            MatrixSignal::Piecewise {
                breakpoints,
                matrices,
            } => {
                let k = breakpoints.partition_point(|&b| b <= t);
                matrices[k.saturating_sub(1)]
            }
        }
    }

    /// Discontinuities of the signal inside the open interval `(t0, t1)`.
    pub fn jumps_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        match self {
            MatrixSignal::Constant(_) => Vec::new(),
            MatrixSignal::Piecewise { breakpoints, .. } => breakpoints
                .iter()
                .copied()
                .filter(|&b| b > t0 && b < t1)
                .collect(),
        }
    }
}

/// `K0 = esssup ‖B(t)‖ · ρ0`, the largest drift the control can inject.
pub fn compute_k0(b: &MatrixSignal, rho0: f64) -> Result<f64, ControlError> {
    if !(rho0 > 0.0) || !rho0.is_finite() {
        return Err(ControlError::InvalidParameter(format!(
            "rho0 must be positive, got {rho0}"
        )));
    }
    let pieces = b.pieces();
    if pieces.is_empty() {
        return Err(ControlError::InvalidParameter("B has no pieces".into()));
    }
    let max = pieces
        .iter()
        .map(Matrix2::spectral_norm)
        .fold(0.0, f64::max);
    Ok(max * rho0)
}

/// `B(t) u`, i.e. the pair `(b1(t, u), b2(t, u))`.
pub fn apply_b(b: &MatrixSignal, t: f64, u: Vec2) -> Vec2 {
    b.at(t).mul_vec(u)
}

/// Maximizer of `⟨ψ, B u⟩` over the closed ball of radius `rho0`.
///
/// Returns the zero vector when `Bᵀψ` is numerically zero.
pub fn pmp_argmax(psi: Vec2, bt: &Matrix2, rho0: f64) -> Vec2 {
    let w = bt.transpose().mul_vec(psi);
    let tie_eps = 1e-12 * (1.0 + psi.norm()) * (1.0 + bt.spectral_norm());
    let n = w.norm();
    if n <= tie_eps {
        Vec2::ZERO
    } else {
        w * (rho0 / n)
    }
}

/// Behaviour of a piecewise control after its last piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extension {
    #[default]
    Zero,
    Hold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseControl {
    pub grid_step: f64,
    pub values: Vec<Vec2>,
    pub extension: Extension,
}

impl PiecewiseControl {
    pub fn new(
        grid_step: f64,
        values: Vec<Vec2>,
        extension: Extension,
    ) -> Result<Self, ControlError> {
        if !(grid_step > 0.0) || !grid_step.is_finite() {
            return Err(ControlError::InvalidParameter(format!(
                "grid_step must be positive, got {grid_step}"
            )));
        }
        if values.is_empty() {
            return Err(ControlError::InvalidParameter(
                "piecewise control needs values".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ControlError::InvalidParameter(
                "non-finite control value".into(),
            ));
        }
        Ok(Self {
            grid_step,
            values,
            extension,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.grid_step * self.values.len() as f64
    }

    fn index(&self, t: f64) -> usize {
        (t / self.grid_step).floor().max(0.0) as usize
    }

    pub fn at(&self, t: f64) -> Vec2 {
        let k = self.index(t);
        match self.values.get(k) {
            Some(v) => *v,
            None => match self.extension {
                Extension::Zero => Vec2::ZERO,
                Extension::Hold => *self.values.last().expect("nonempty"),
            },
        }
    }

    fn jumps(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.values.len();
        let last = match self.extension {
            Extension::Zero => n,
            Extension::Hold => n - 1,
        };
        (1..=last).map(move |k| k as f64 * self.grid_step)
    }
}

/// Control law `u(t) = argmax ⟨ψ(t), B(t) u⟩` built from a computed adjoint.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub adjoint: AdjointPath,
    pub matrix: MatrixSignal,
    pub rho0: f64,
}

impl FeedbackLaw {
    pub fn at(&self, t: f64) -> Vec2 {
        pmp_argmax(self.adjoint.psi_at(t), &self.matrix.at(t), self.rho0)
    }
}

/// An admissible control `u(·)`.
#[derive(Debug, Clone)]
pub enum ControlSignal {
    Zero,
    Constant(Vec2),
    Piecewise(PiecewiseControl),
    Feedback(Arc<FeedbackLaw>),
}

impl ControlSignal {
    /// Piecewise control with zero extension.
    pub fn piecewise(grid_step: f64, values: Vec<Vec2>) -> Result<Self, ControlError> {
        Ok(ControlSignal::Piecewise(PiecewiseControl::new(
            grid_step,
            values,
            Extension::Zero,
        )?))
    }

    /// Discontinuities inside the open interval `(t0, t1)`.
    ///
    /// Feedback laws report none; their values are sampled at every stage.
    pub fn jumps_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        match self {
            ControlSignal::Piecewise(pc) => pc.jumps().filter(|&b| b > t0 && b < t1).collect(),
            _ => Vec::new(),
        }
    }

    pub fn is_feedback(&self) -> bool {
        matches!(self, ControlSignal::Feedback(_))
    }

    /// Largest norm the signal attains, if it can be computed without sampling.
    pub fn sup_norm(&self) -> Option<f64> {
        match self {
            ControlSignal::Zero => Some(0.0),
            ControlSignal::Constant(v) => Some(v.norm()),
            ControlSignal::Piecewise(pc) => {
                Some(pc.values.iter().map(|v| v.norm()).fold(0.0, f64::max))
            }
            ControlSignal::Feedback(law) => Some(law.rho0),
        }
    }
}

/// Value of `u` at time `t` (left-closed pieces).
pub fn eval_control(u: &ControlSignal, t: f64) -> Vec2 {
    match u {
        ControlSignal::Zero => Vec2::ZERO,
        ControlSignal::Constant(v) => *v,
        ControlSignal::Piecewise(pc) => pc.at(t),
        ControlSignal::Feedback(law) => law.at(t),
    }
}

/// Measure of `{t ∈ [0, horizon] : u(t) ≠ v(t)}`.
pub fn ekeland_distance(
    u: &ControlSignal,
    v: &ControlSignal,
    horizon: f64,
) -> Result<f64, ControlError> {
    if u.is_feedback() || v.is_feedback() {
        return Err(ControlError::Unsupported(
            "Ekeland distance is not defined for feedback controls".into(),
        ));
    }
    if !(horizon > 0.0) {
        return Err(ControlError::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let mut grid = vec![0.0, horizon];
    grid.extend(u.jumps_in(0.0, horizon));
    grid.extend(v.jumps_in(0.0, horizon));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut measure = 0.0;
    for w in grid.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if (eval_control(u, mid) - eval_control(v, mid)).max_abs() > AGREE_TOL {
            measure += w[1] - w[0];
        }
    }
    Ok(measure)
}

/// A validated instance of the time-optimal quenching problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub field: FieldKind,
    pub y0: State,
    pub rho0: f64,
    pub matrix: MatrixSignal,
    k0: f64,
    branch: Branch,
}

impl ProblemSpec {
    /// Validates the data, derives `K0`, and checks that `y0` lies in the seed region.
    pub fn new(
        field: FieldKind,
        y0: State,
        rho0: f64,
        matrix: MatrixSignal,
    ) -> Result<Self, ControlError> {
        if !y0.is_finite() {
            return Err(ControlError::InvalidParameter("y0 must be finite".into()));
        }
        matrix.validate()?;
        let k0 = compute_k0(&matrix, rho0)?;
        let branch = in_seed_region(field, y0, k0)?.ok_or(ControlError::NotInSeedRegion {
            field,
            y0,
            k0,
        })?;
        Ok(Self {
            field,
            y0,
            rho0,
            matrix,
            k0,
            branch,
        })
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    /// Checks `‖u(t)‖ ≤ ρ0` for every value the signal can take.
    pub fn check_admissible(&self, u: &ControlSignal) -> Result<(), ControlError> {
        if let ControlSignal::Piecewise(pc) = u {
            PiecewiseControl::new(pc.grid_step, pc.values.clone(), pc.extension)?;
        }
        if let ControlSignal::Constant(v) = u {
            if !v.is_finite() {
                return Err(ControlError::InvalidParameter(
                    "non-finite control value".into(),
                ));
            }
        }
        let sup = u.sup_norm().unwrap_or(0.0);
        if sup > self.rho0 * (1.0 + 1e-12) {
            return Err(ControlError::Inadmissible(format!(
                "control norm {sup} exceeds rho0 = {}",
                self.rho0
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn e1() -> Matrix2 {
        Matrix2::new(1.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn k0_examples() {
        assert_eq!(compute_k0(&MatrixSignal::Constant(e1()), 1.0).unwrap(), 1.0);
        assert_eq!(
            compute_k0(&MatrixSignal::Constant(Matrix2::IDENTITY), 2.5).unwrap(),
            2.5
        );
        assert_abs_diff_eq!(
            compute_k0(
                &MatrixSignal::Constant(Matrix2::new(3.0, 0.0, 0.0, 4.0)),
                1.0
            )
            .unwrap(),
            4.0,
            epsilon = 1e-15
        );
        assert!(compute_k0(&MatrixSignal::Constant(e1()), 0.0).is_err());
        let pw =
            MatrixSignal::piecewise(vec![0.0, 0.1], vec![e1(), Matrix2::new(0.0, 2.0, 0.0, 0.0)])
                .unwrap();
        assert_eq!(compute_k0(&pw, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn matrix_signal_validation() {
        assert!(MatrixSignal::piecewise(vec![0.1], vec![e1()]).is_err());
        assert!(MatrixSignal::piecewise(vec![0.0, 0.0], vec![e1(), e1()]).is_err());
        assert!(MatrixSignal::piecewise(vec![0.0], vec![]).is_err());
        assert!(MatrixSignal::Constant(Matrix2::ZERO).validate().is_err());
        let pw = MatrixSignal::piecewise(vec![0.0, 0.5], vec![e1(), Matrix2::IDENTITY]).unwrap();
        assert_eq!(pw.at(0.49), e1());
        assert_eq!(pw.at(0.5), Matrix2::IDENTITY);
        assert_eq!(pw.jumps_in(0.0, 1.0), vec![0.5]);
    }

    #[test]
    fn control_values() {
        assert_eq!(
            eval_control(&ControlSignal::Constant(Vec2::new(1.0, 0.0)), 0.7),
            Vec2::new(1.0, 0.0)
        );
        assert_eq!(eval_control(&ControlSignal::Zero, 5.0), Vec2::ZERO);
        let pw =
            ControlSignal::piecewise(0.5, vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]).unwrap();
        assert_eq!(eval_control(&pw, 0.5), Vec2::new(0.0, 1.0));
        assert_eq!(eval_control(&pw, 0.4999), Vec2::new(1.0, 0.0));
        assert_eq!(eval_control(&pw, 1.0), Vec2::ZERO);
        let held = ControlSignal::Piecewise(
            PiecewiseControl::new(
                0.5,
                vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
                Extension::Hold,
            )
            .unwrap(),
        );
        assert_eq!(eval_control(&held, 7.0), Vec2::new(0.0, 1.0));
        assert_eq!(held.jumps_in(0.0, 10.0), vec![0.5]);
        assert_eq!(pw.jumps_in(0.0, 10.0), vec![0.5, 1.0]);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(
            pmp_argmax(Vec2::new(1.0, 0.0), &Matrix2::IDENTITY, 2.0),
            Vec2::new(2.0, 0.0)
        );
        assert_eq!(pmp_argmax(Vec2::new(0.0, 1.0), &e1(), 1.0), Vec2::ZERO);
        let u = pmp_argmax(Vec2::new(3.0, 4.0), &Matrix2::IDENTITY, 1.0);
        assert_abs_diff_eq!(u.x1, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(u.x2, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn ekeland_examples() {
        let c = ControlSignal::Constant(Vec2::new(1.0, 0.0));
        assert_eq!(ekeland_distance(&c, &c, 1.0).unwrap(), 0.0);
        let pw = ControlSignal::piecewise(0.5, vec![Vec2::new(1.0, 0.0), Vec2::ZERO]).unwrap();
        assert_eq!(
            ekeland_distance(&pw, &ControlSignal::Zero, 1.0).unwrap(),
            0.5
        );
        assert_eq!(
            ekeland_distance(&c, &ControlSignal::Zero, 2.0).unwrap(),
            2.0
        );
    }

    #[test]
    fn apply_b_examples() {
        let b = MatrixSignal::Constant(e1());
        assert_eq!(apply_b(&b, 0.3, Vec2::new(1.0, 0.0)), Vec2::new(1.0, 0.0));
        let id = MatrixSignal::Constant(Matrix2::IDENTITY);
        assert_eq!(
            apply_b(&id, 2.0, Vec2::new(0.3, -0.2)),
            Vec2::new(0.3, -0.2)
        );
        let swap = MatrixSignal::Constant(Matrix2::new(0.0, 1.0, 1.0, 0.0));
        assert_eq!(
            apply_b(&swap, 0.0, Vec2::new(1.0, 0.0)),
            Vec2::new(0.0, 1.0)
        );
    }

    #[test]
    fn problem_spec_derives_k0_and_branch() {
        let p = ProblemSpec::new(
            FieldKind::F2,
            Vec2::new(0.75, 0.0),
            1.0,
            MatrixSignal::Constant(e1()),
        )
        .unwrap();
        assert_eq!(p.k0(), 1.0);
        assert_eq!(p.branch(), Branch::Below);
        assert!(p
            .check_admissible(&ControlSignal::Constant(Vec2::new(1.0, 0.0)))
            .is_ok());
        assert!(matches!(
            p.check_admissible(&ControlSignal::Constant(Vec2::new(1.0, 0.1))),
            Err(ControlError::Inadmissible(_))
        ));
        let err = ProblemSpec::new(
            FieldKind::F2,
            Vec2::new(0.5, 0.0),
            1.0,
            MatrixSignal::Constant(e1()),
        );
        assert!(matches!(err, Err(ControlError::NotInSeedRegion { .. })));
    }

    fn vec_in_ball(r: f64) -> impl Strategy<Value = Vec2> {
        (0.0f64..=1.0, 0.0..std::f64::consts::TAU)
            .prop_map(move |(s, a)| Vec2::new(a.cos(), a.sin()) * (r * s))
    }

    fn matrix() -> impl Strategy<Value = Matrix2> {
        (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0)
            .prop_map(|(a, b, c, d)| Matrix2::new(a, b, c, d))
    }

    fn piecewise_signal() -> impl Strategy<Value = ControlSignal> {
        (
            prop_oneof![Just(0.25), Just(0.5), Just(0.2)],
            proptest::collection::vec(
                prop_oneof![
                    Just(Vec2::ZERO),
                    Just(Vec2::new(1.0, 0.0)),
                    Just(Vec2::new(0.0, -1.0))
                ],
                1..8,
            ),
        )
            .prop_map(|(h, v)| ControlSignal::piecewise(h, v).unwrap())
    }

    proptest! {
        #[test]
        fn drift_bounded_by_k0(m in matrix(), rho0 in 0.1f64..3.0, u in vec_in_ball(1.0), t in 0.0f64..2.0) {
            prop_assume!(!m.is_zero());
            let b = MatrixSignal::Constant(m);
            let k0 = compute_k0(&b, rho0).unwrap();
            let v = apply_b(&b, t, u * rho0);
            prop_assert!(v.norm() <= k0 + 1e-12 * (1.0 + k0));
        }

        #[test]
        fn argmax_is_on_the_sphere_or_zero(psi in vec_in_ball(5.0), m in matrix(), rho0 in 0.1f64..3.0) {
            let u = pmp_argmax(psi, &m, rho0);
            let n = u.norm();
            prop_assert!(n == 0.0 || (n - rho0).abs() <= 1e-12 * rho0);
        }

        #[test]
        fn argmax_dominates_ball(
            psi in vec_in_ball(5.0),
            m in matrix(),
            rho0 in 0.1f64..3.0,
            others in proptest::collection::vec(vec_in_ball(1.0), 1000),
        ) {
            let best = psi.dot(m.mul_vec(pmp_argmax(psi, &m, rho0)));
            for u in others {
                let val = psi.dot(m.mul_vec(u * rho0));
                prop_assert!(best >= val - 1e-12 * (1.0 + best.abs()));
            }
        }

        #[test]
        fn ekeland_is_a_pseudometric(a in piecewise_signal(), b in piecewise_signal(), c in piecewise_signal(), h in 0.1f64..3.0) {
            let ab = ekeland_distance(&a, &b, h).unwrap();
            let ba = ekeland_distance(&b, &a, h).unwrap();
            let bc = ekeland_distance(&b, &c, h).unwrap();
            let ac = ekeland_distance(&a, &c, h).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-15);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(ekeland_distance(&a, &a, h).unwrap() == 0.0);
        }
    }
}
