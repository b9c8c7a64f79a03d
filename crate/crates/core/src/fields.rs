//! The three singular planar vector fields, their Jacobians, distances to the
//! singular (quench) sets and the seed regions from which every admissible
//! control produces a quench.
//!
//! Jacobians follow the standard orientation `J[i][j] = ∂f_i/∂y_j`. Adjoint
//! code that needs the transposed convention applies it locally.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative radius below which a point counts as lying on the singular set.
pub const SINGULAR_GUARD: f64 = 1e-14;

/// A point or direction in the plane.
///
/// Used both for states `y = (y1, y2)` and control values `u = (u1, u2)`.
/// Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x1: f64,
    pub x2: f64,
}

/// System state `y = (y1, y2)`.
pub type State = Vec2;

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x1: 0.0, x2: 0.0 };

    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x1 * other.x1 + self.x2 * other.x2
    }

    pub fn norm(self) -> f64 {
        self.x1.hypot(self.x2)
    }

    pub fn is_finite(self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }

    /// Component-wise maximum of absolute values.
    pub fn max_abs(self) -> f64 {
        self.x1.abs().max(self.x2.abs())
    }

    /// Nearest point of the closed ball of radius `radius` around the origin.
    pub fn project_to_ball(self, radius: f64) -> Vec2 {
        let n = self.norm();
        if n <= radius {
            self
        } else {
            self * (radius / n)
        }
    }

    pub fn swap(self) -> Vec2 {
        Vec2::new(self.x2, self.x1)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x1, v.x2]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x1 + o.x1, self.x2 + o.x2)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x1 += o.x1;
        self.x2 += o.x2;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x1 - o.x1, self.x2 - o.x2)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x1, -self.x2)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x1 * s, self.x2 * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x1, self.x2)
    }
}

/// A real 2×2 matrix, row-major.
///
/// Serialized as `[[b11, b12], [b21, b22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Matrix2 {
    pub b11: f64,
    pub b12: f64,
    pub b21: f64,
    pub b22: f64,
}

impl Matrix2 {
    pub const IDENTITY: Matrix2 = Matrix2::new(1.0, 0.0, 0.0, 1.0);
    pub const ZERO: Matrix2 = Matrix2::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(b11: f64, b12: f64, b21: f64, b22: f64) -> Self {
        Self { b11, b12, b21, b22 }
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.b11 * v.x1 + self.b12 * v.x2,
            self.b21 * v.x1 + self.b22 * v.x2,
        )
    }

    pub fn transpose(&self) -> Matrix2 {
        Matrix2::new(self.b11, self.b21, self.b12, self.b22)
    }

    pub fn scale(&self, s: f64) -> Matrix2 {
        Matrix2::new(self.b11 * s, self.b12 * s, self.b21 * s, self.b22 * s)
    }

    pub fn is_finite(&self) -> bool {
        [self.b11, self.b12, self.b21, self.b22]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        [self.b11, self.b12, self.b21, self.b22]
            .iter()
            .all(|&v| v == 0.0)
    }

    /// Operator norm induced by the Euclidean norm (largest singular value).
    pub fn spectral_norm(&self) -> f64 {
        let p = (self.b11 + self.b22).hypot(self.b21 - self.b12);
        let q = (self.b11 - self.b22).hypot(self.b21 + self.b12);
        0.5 * (p + q)
    }
}

impl From<[[f64; 2]; 2]> for Matrix2 {
    fn from(m: [[f64; 2]; 2]) -> Self {
        Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
    }
}

impl From<Matrix2> for [[f64; 2]; 2] {
    fn from(m: Matrix2) -> Self {
        [[m.b11, m.b12], [m.b21, m.b22]]
    }
}

/// Which of the three vector fields drives the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    /// `f(y) = (y2 / (1 - y1), y1 + y2)`, singular on `y1 = 1`.
    F1,
    /// `f(y) = y / (1 - |y|)`, singular on the unit circle.
    F2,
    /// `f(y) = (1 / (1 - y2), 1 / (1 - y1))`, singular on `y1 = 1` or `y2 = 1`.
    F3,
}

impl FieldKind {
    pub const ALL: [FieldKind; 3] = [FieldKind::F1, FieldKind::F2, FieldKind::F3];

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::F1 => "f1",
            FieldKind::F2 => "f2",
            FieldKind::F3 => "f3",
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Side of the singular set a trajectory lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Below,
    Above,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("{kind} is singular at {y}")]
    SingularInput { kind: FieldKind, y: State },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn guard(kind: FieldKind, y: State) -> Result<(), FieldError> {
    if !y.is_finite() || singular_distance(kind, y) < SINGULAR_GUARD * (1.0 + y.norm()) {
        return Err(FieldError::SingularInput { kind, y });
    }
    Ok(())
}

/// Evaluates `f(y)` for the chosen field.
pub fn eval_field(kind: FieldKind, y: State) -> Result<State, FieldError> {
    guard(kind, y)?;
    let v = match kind {
        FieldKind::F1 => Vec2::new(y.x2 / (1.0 - y.x1), y.x1 + y.x2),
        FieldKind::F2 => y * (1.0 / (1.0 - y.norm())),
        FieldKind::F3 => Vec2::new(1.0 / (1.0 - y.x2), 1.0 / (1.0 - y.x1)),
    };
    Ok(v)
}

/// Standard Jacobian `J[i][j] = ∂f_i/∂y_j` of the chosen field.
pub fn eval_jacobian(kind: FieldKind, y: State) -> Result<Matrix2, FieldError> {
    guard(kind, y)?;
    let m = match kind {
        FieldKind::F1 => {
            let d = 1.0 - y.x1;
            Matrix2::new(y.x2 / (d * d), 1.0 / d, 1.0, 1.0)
        }
        FieldKind::F2 => {
            let r = y.norm();
            let d = 1.0 - r;
            if r == 0.0 {
                Matrix2::IDENTITY
            } else {
                let s = 1.0 / (d * d);
                let off = y.x1 * y.x2 / r;
                Matrix2::new(
                    s * (d + y.x1 * y.x1 / r),
                    s * off,
                    s * off,
                    s * (d + y.x2 * y.x2 / r),
                )
            }
        }
        FieldKind::F3 => {
            let d1 = 1.0 - y.x1;
            let d2 = 1.0 - y.x2;
            Matrix2::new(0.0, 1.0 / (d2 * d2), 1.0 / (d1 * d1), 0.0)
        }
    };
    Ok(m)
}

/// Distance-like measure to the singular set; zero on the set itself.
pub fn singular_distance(kind: FieldKind, y: State) -> f64 {
    match kind {
        FieldKind::F1 => (1.0 - y.x1).abs(),
        FieldKind::F2 => (1.0 - y.norm()).abs(),
        FieldKind::F3 => (1.0 - y.x1).abs().min((1.0 - y.x2).abs()),
    }
}

/// Branch predicate: does `y` lie strictly on side `branch` of the singular set?
///
/// For `F3` both coordinates must be on the same side.
pub fn on_branch(kind: FieldKind, branch: Branch, y: State) -> bool {
    let below = |v: f64| v < 1.0;
    let above = |v: f64| v > 1.0;
    match (kind, branch) {
        (FieldKind::F1, Branch::Below) => below(y.x1),
        (FieldKind::F1, Branch::Above) => above(y.x1),
        (FieldKind::F2, Branch::Below) => below(y.norm()),
        (FieldKind::F2, Branch::Above) => above(y.norm()),
        (FieldKind::F3, Branch::Below) => below(y.x1) && below(y.x2),
        (FieldKind::F3, Branch::Above) => above(y.x1) && above(y.x2),
    }
}

/// Side of the singular set `y` lies on, if it is well defined.
pub fn branch_of(kind: FieldKind, y: State) -> Option<Branch> {
    [Branch::Below, Branch::Above]
        .into_iter()
        .find(|&b| on_branch(kind, b, y))
}

/// Membership of `y0` in the seed region `S^f` for drift bound `k0`.
///
/// All interval endpoints are excluded.
pub fn in_seed_region(kind: FieldKind, y0: State, k0: f64) -> Result<Option<Branch>, FieldError> {
    if !(k0 > 0.0) || !k0.is_finite() {
        return Err(FieldError::InvalidParameter(format!(
            "drift bound K0 must be positive, got {k0}"
        )));
    }
    let open = |v: f64, lo: f64, hi: f64| v > lo && v < hi;
    let branch = match kind {
        FieldKind::F1 => {
            let below = open(y0.x1, 1.0 - 1.0 / (2.0 * k0), 1.0) && y0.x2 > k0 + 1.0 / k0 - 1.0;
            let above = open(y0.x1, 1.0, 1.0 + 1.0 / (2.0 * k0)) && y0.x2 > k0 + 1.0;
            pick(below, above)
        }
        FieldKind::F2 => {
            let r = y0.norm();
            let below = open(r, 1.0 - 1.0 / (2.0 * k0 + 1.0), 1.0);
            let above = open(r, 1.0, 1.0 + 1.0 / (2.0 * k0));
            pick(below, above)
        }
        FieldKind::F3 => {
            let w = (-1.5f64).exp() / (2.0 * k0);
            let below = open(y0.x1, 1.0 - w, 1.0) && open(y0.x2, 1.0 - w, 1.0);
            let above = open(y0.x1, 1.0, 1.0 + w) && open(y0.x2, 1.0, 1.0 + w);
            pick(below, above)
        }
    };
    Ok(branch)
}

fn pick(below: bool, above: bool) -> Option<Branch> {
    match (below, above) {
        (true, _) => Some(Branch::Below),
        (false, true) => Some(Branch::Above),
        _ => None,
    }
}
