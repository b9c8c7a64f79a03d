//! Cross-module properties of the integrator, the certificates and the
//! adjoint, checked on seeded random problems.

use proptest::prelude::*;
use quench_core::analysis::{check_quench_bound, quench_time_bound, rate_summary};
use quench_core::integrator::{
    integrate_comparison, integrate_radial_f2, integrate_to_quench, ComparisonKind, ScalarSignal,
};
use quench_core::pmp::{default_epsilon, integrate_adjoint};
use quench_core::sampling::{random_bang_bang, random_problem};
use quench_core::{
    ControlSignal, FieldKind, IntegratorConfig, Matrix2, MatrixSignal, ProblemSpec, Vec2,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn field_strategy() -> impl Strategy<Value = FieldKind> {
    prop_oneof![
        Just(FieldKind::F1),
        Just(FieldKind::F2),
        Just(FieldKind::F3)
    ]
}

fn sample(field: FieldKind, seed: u64) -> (ProblemSpec, ControlSignal) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_problem(field, &mut rng);
    let u = random_bang_bang(&p, 4, &mut rng);
    (p, u)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quench_time_respects_the_bound(field in field_strategy(), seed in any::<u64>()) {
        let (p, u) = sample(field, seed);
        let traj = integrate_to_quench(&p, &u, &IntegratorConfig::default()).unwrap();
        let q = traj.quench.as_ref().unwrap();
        prop_assert!(q.t_hat <= quench_time_bound(&p) + q.width());
        prop_assert!(check_quench_bound(&traj).unwrap().passed);
    }

    #[test]
    fn halving_delta_stop_moves_t_hat_within_the_bracket(field in field_strategy(), seed in any::<u64>()) {
        let (p, u) = sample(field, seed);
        let coarse = integrate_to_quench(&p, &u, &IntegratorConfig::default()).unwrap();
        let cfg = IntegratorConfig { delta_stop: 0.5e-6, ..IntegratorConfig::default() };
        let fine = integrate_to_quench(&p, &u, &cfg).unwrap();
        let (a, b) = (coarse.quench.unwrap(), fine.quench.unwrap());
        prop_assert!((a.t_hat - b.t_hat).abs() <= a.width().max(b.width()) + 1e-12,
            "{} vs {}, widths {} {}", a.t_hat, b.t_hat, a.width(), b.width());
    }

    #[test]
    fn rate_constant_is_stable_under_rtol_halving(field in field_strategy(), seed in any::<u64>()) {
        let (p, u) = sample(field, seed);
        let a = integrate_to_quench(&p, &u, &IntegratorConfig::default()).unwrap();
        let cfg = IntegratorConfig { rtol: 0.5e-9, ..IntegratorConfig::default() };
        let b = integrate_to_quench(&p, &u, &cfg).unwrap();
        let (ma, mb) = (rate_summary(&a).unwrap().m, rate_summary(&b).unwrap().m);
        prop_assert!(ma.is_finite() && mb.is_finite());
        prop_assert!((ma - mb).abs() <= 0.05 * ma, "{ma} vs {mb}");
    }

    #[test]
    fn radial_reduction_matches_the_planar_system(r0 in 0.2f64..0.95, c in -1.0f64..1.0) {
        // With B = diag(1, 0) and u = (c, 0) the orbit stays on the positive axis.
        let p = ProblemSpec::new(
            FieldKind::F2,
            Vec2::new(r0, 0.0),
            1.0,
            MatrixSignal::Constant(Matrix2::new(1.0, 0.0, 0.0, 0.0)),
        );
        prop_assume!(p.is_ok());
        let p = p.unwrap();
        let planar = integrate_to_quench(&p, &ControlSignal::Constant(Vec2::new(c, 0.0)), &IntegratorConfig::default())
            .unwrap();
        let radial = integrate_radial_f2(r0, &ScalarSignal::Constant(c), &IntegratorConfig::default()).unwrap();
        prop_assert!((planar.t_hat().unwrap() - radial.t_hat().unwrap()).abs() <= 1e-8);
    }
}

#[test]
fn comparison_systems_dominate_every_sampled_control() {
    // The bound is the comparison quench time, so each sampled t_hat must sit
    // below the integrated comparison system as well.
    for field in [FieldKind::F1, FieldKind::F2, FieldKind::F3] {
        for seed in 0..20 {
            let (p, u) = sample(field, seed);
            let kind = match field {
                FieldKind::F1 => ComparisonKind::ChiF1 { y1_0: p.y0.x1 },
                FieldKind::F2 => ComparisonKind::ChiF2 {
                    r0: p.y0.norm(),
                    k0: p.k0(),
                },
                FieldKind::F3 => ComparisonKind::ChiF3 { k0: p.k0() },
            };
            if p.y0.x1 > 1.0 || p.y0.norm() > 1.0 {
                continue;
            }
            let chi = integrate_comparison(kind, &IntegratorConfig::default())
                .unwrap()
                .quench
                .unwrap();
            let q = integrate_to_quench(&p, &u, &IntegratorConfig::default())
                .unwrap()
                .quench
                .unwrap();
            assert!(
                q.t_hat <= chi.t_hat + chi.width() + q.width(),
                "{field}: {} > {}",
                q.t_hat,
                chi.t_hat
            );
        }
    }
}

#[test]
fn adjoint_is_stable_under_epsilon_halving() {
    let p = ProblemSpec::new(
        FieldKind::F2,
        Vec2::new(0.75, 0.0),
        1.0,
        MatrixSignal::Constant(Matrix2::new(1.0, 0.0, 0.0, 0.0)),
    )
    .unwrap();
    let traj = integrate_to_quench(
        &p,
        &ControlSignal::Constant(Vec2::new(1.0, 0.0)),
        &IntegratorConfig::default(),
    )
    .unwrap();
    let t_hat = traj.t_hat().unwrap();
    let eps = default_epsilon(t_hat, 1e-6);
    let a = integrate_adjoint(&traj, eps).unwrap();
    let b = integrate_adjoint(&traj, 0.5 * eps).unwrap();
    for t in [0.0, 0.25 * t_hat, 0.5 * t_hat, 0.75 * t_hat] {
        let (pa, pb) = (a.psi_at(t), b.psi_at(t));
        assert!(
            (pa - pb).norm() <= 0.05 * pa.norm(),
            "t = {t}: {pa:?} vs {pb:?}"
        );
    }
}

#[test]
fn decay_constant_is_finite_on_random_problems() {
    for field in [FieldKind::F1, FieldKind::F2] {
        for seed in 0..20 {
            let (p, u) = sample(field, seed);
            let traj = integrate_to_quench(&p, &u, &IntegratorConfig::default()).unwrap();
            let t_hat = traj.t_hat().unwrap();
            let adj = integrate_adjoint(&traj, default_epsilon(t_hat, 1e-6)).unwrap();
            assert!(adj.decay_constant.is_finite() && adj.decay_constant > 0.0);
            for (y, psi) in adj.states.iter().zip(&adj.psi) {
                let d = quench_core::fields::singular_distance(field, *y);
                assert!(psi.norm() <= adj.decay_constant * d * (1.0 + 1e-12));
            }
        }
    }
}
