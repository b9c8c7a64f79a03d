//! Seeded generators of random admissible problems and bang-bang controls,
//! shared by the property suites and the CLI `verify` command.

use rand::Rng;

use crate::analysis::quench_time_bound;
use crate::controls::{compute_k0, ControlSignal, MatrixSignal, ProblemSpec};
use crate::fields::{FieldKind, Matrix2, Vec2};

fn random_matrix<R: Rng>(rng: &mut R) -> Matrix2 {
    loop {
        let m = Matrix2::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if m.spectral_norm() > 0.1 {
            return m;
        }
    }
}

/// Constant or two-piece matrix signal with entries in `[-1, 1]`.
pub fn random_matrix_signal<R: Rng>(rng: &mut R) -> MatrixSignal {
    if rng.random_bool(0.5) {
        MatrixSignal::Constant(random_matrix(rng))
    } else {
        let switch = rng.random_range(0.001..0.05);
        MatrixSignal::Piecewise {
            breakpoints: vec![0.0, switch],
            matrices: vec![random_matrix(rng), random_matrix(rng)],
        }
    }
}

/// A random problem whose initial state lies strictly inside the seed region.
///
/// Both branches are drawn with equal probability.
pub fn random_problem<R: Rng>(field: FieldKind, rng: &mut R) -> ProblemSpec {
    let rho0 = rng.random_range(0.5..2.0);
    let matrix = random_matrix_signal(rng);
    let k0 = compute_k0(&matrix, rho0).expect("valid signal");
    let below = rng.random_bool(0.5);
    let mut s = || rng.random_range(0.05..0.95);
    let y0 = match field {
        FieldKind::F1 => {
            let (y1, floor) = if below {
                (1.0 - s() / (2.0 * k0), k0 + 1.0 / k0 - 1.0)
            } else {
                (1.0 + s() / (2.0 * k0), k0 + 1.0)
            };
            Vec2::new(y1, floor + 3.0 * s())
        }
        FieldKind::F2 => {
            let r = if below {
                1.0 - s() / (2.0 * k0 + 1.0)
            } else {
                1.0 + s() / (2.0 * k0)
            };
            let a = std::f64::consts::TAU * s();
            Vec2::new(r * a.cos(), r * a.sin())
        }
        FieldKind::F3 => {
            let w = (-1.5f64).exp() / (2.0 * k0);
            let sign = if below { -1.0 } else { 1.0 };
            Vec2::new(1.0 + sign * s() * w, 1.0 + sign * s() * w)
        }
    };
    ProblemSpec::new(field, y0, rho0, matrix).expect("sampled inside the seed region")
}

/// Piecewise control with `n_intervals` random unit-direction values of norm
/// `ρ0` on a grid spanning the analytic bound.
pub fn random_bang_bang<R: Rng>(p: &ProblemSpec, n_intervals: usize, rng: &mut R) -> ControlSignal {
    let step = quench_time_bound(p) / n_intervals as f64;
    let values = (0..n_intervals)
        .map(|_| {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            Vec2::new(p.rho0 * a.cos(), p.rho0 * a.sin())
        })
        .collect();
    ControlSignal::piecewise(step, values).expect("positive step")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_are_admissible_and_reproducible() {
        for field in FieldKind::ALL {
            let mut a = ChaCha8Rng::seed_from_u64(7);
            let mut b = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..50 {
                let p = random_problem(field, &mut a);
                let q = random_problem(field, &mut b);
                assert_eq!(p, q);
                let u = random_bang_bang(&p, 4, &mut a);
                random_bang_bang(&q, 4, &mut b);
                p.check_admissible(&u).unwrap();
            }
        }
    }
}
