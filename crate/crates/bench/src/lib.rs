//! Fixtures shared by the criterion benchmarks.

use quench_core::FieldKind;
use quench_core::{Matrix2, MatrixSignal, ProblemSpec, Vec2};

/// The radial `F2` problem from `(3/4, 0)` with `B = [[1, 0], [0, 0]]`, `ρ0 = 1`.
pub fn radial_example() -> ProblemSpec {
    ProblemSpec::new(
        FieldKind::F2,
        Vec2::new(0.75, 0.0),
        1.0,
        MatrixSignal::Constant(Matrix2::new(1.0, 0.0, 0.0, 0.0)),
    )
    .expect("valid problem")
}

/// An `F1` problem below the singular line with a full-rank `B`.
pub fn f1_example() -> ProblemSpec {
    ProblemSpec::new(
        FieldKind::F1,
        Vec2::new(0.9, 1.5),
        1.0,
        MatrixSignal::Constant(Matrix2::IDENTITY),
    )
    .expect("valid problem")
}
