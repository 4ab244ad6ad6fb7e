use dcue::selfcheck::random_instance;
use dcue::{MomentSystem, ResidualData};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn instance(seed: u64, n: usize, m: usize) -> ResidualData {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed), n, m)
}

/// A diagonally dominated random matrix, comfortably invertible.
fn invertible(seed: u64, m: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    DMatrix::from_fn(m, m, |i, j| {
        let e: f64 = rng.sample(StandardNormal);
        if i == j {
            e + 3.0 * e.signum()
        } else {
            0.5 * e
        }
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_invariant_to_instrument_basis(
        seed in any::<u64>(), n in 60usize..300, m in 2usize..8, beta in -5.0..5.0f64,
    ) {
        let rd = instance(seed, n, m);
        let a = invertible(seed, m);
        let q = MomentSystem::new(&rd).q_hat(beta).unwrap();
        let q_rot = MomentSystem::new(&rd.transform_instruments(&a)).q_hat(beta).unwrap();
        prop_assert!(rel(q, q_rot) < 1e-10, "{q} vs {q_rot}");
    }

    #[test]
    fn gradient_matches_central_difference(
        seed in any::<u64>(), n in 60usize..300, m in 1usize..8, beta in -5.0..5.0f64,
    ) {
        let ms = MomentSystem::new(&instance(seed, n, m));
        let h = 1e-6 * beta.abs().max(1.0);
        let fd = (ms.q_hat(beta + h).unwrap() - ms.q_hat(beta - h).unwrap()) / (2.0 * h);
        let exact = ms.dq_dbeta(beta).unwrap();
        // Q-scaled floor: rounding in Q̂ limits the difference to ~ε·Q/h
        let floor = ms.q_hat(beta).unwrap().max(1.0);
        prop_assert!((fd - exact).abs() / exact.abs().max(floor) < 1e-6, "{fd} vs {exact}");
    }

    #[test]
    fn omega_derivative_matches_central_difference(
        seed in any::<u64>(), n in 60usize..300, m in 1usize..8, beta in -5.0..5.0f64,
    ) {
        let ms = MomentSystem::new(&instance(seed, n, m));
        let h = 1e-6 * beta.abs().max(1.0);
        let fd = (ms.omega(beta + h) - ms.omega(beta - h)) / (2.0 * h);
        let exact = ms.d_omega_dbeta(beta);
        prop_assert!((&fd - &exact).amax() < 1e-6 * exact.amax().max(1.0));
    }

    #[test]
    fn d_hat_matches_explicit_inverse(
        seed in any::<u64>(), n in 60usize..300, m in 1usize..8, beta in -5.0..5.0f64,
    ) {
        let ms = MomentSystem::new(&instance(seed, n, m));
        let inv = ms.omega(beta).try_inverse().unwrap();
        let explicit: DVector<f64> = ms.g_jacobian() - ms.cross_jacobian_moment(beta) * (inv * ms.g_bar(beta));
        let d = ms.d_hat(beta).unwrap();
        prop_assert!((&d - &explicit).amax() < 1e-9 * explicit.amax().max(1.0));
    }

    #[test]
    fn d_hat_equals_jacobian_at_just_identified_root(seed in any::<u64>(), n in 30usize..300) {
        let ms = MomentSystem::new(&instance(seed, n, 1));
        let root = ms.szy()[0] / ms.szd()[0];
        let d = ms.d_hat(root).unwrap();
        let g = ms.g_jacobian();
        prop_assert!((d[0] - g[0]).abs() < 1e-12 * g[0].abs().max(1.0));
    }

    #[test]
    fn objective_is_nonnegative(seed in any::<u64>(), m in 1usize..8, beta in -50.0..50.0f64) {
        let ms = MomentSystem::new(&instance(seed, 150, m));
        prop_assert!(ms.q_hat(beta).unwrap() >= 0.0);
    }
}
