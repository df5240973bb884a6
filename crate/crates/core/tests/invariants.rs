use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nonlocal_fronts::banded::BandMatrix;
use nonlocal_fronts::cauchy::{comparison_test, random_ordered_pair};
use nonlocal_fronts::config::ExperimentConfig;
use nonlocal_fronts::entire::{p_bound_check, p_closed_form, phase_shift, time_grid, PParams};
use nonlocal_fronts::field::{convolve, GridFunction};
use nonlocal_fronts::kernel::KernelSpec;
use nonlocal_fronts::quad::linear_fit;
use nonlocal_fronts::reaction::IgnitionNonlinearity;

fn grid_fn(values: &[f64], fl: f64, fr: f64) -> GridFunction {
    GridFunction::new(-(values.len() as f64) * 0.05, 0.1, values.to_vec(), fl, fr)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampled_weights_have_unit_mass(shift in -2.0f64..2.0, h in 0.02f64..0.2) {
        let k = KernelSpec::asymmetric_example().shifted(shift).sample(h).unwrap();
        let total: f64 = k.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(k.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn constants_are_fixed_by_convolution(level in 0.0f64..1.5, shift in -1.0f64..1.0) {
        let k = KernelSpec::asymmetric_example().shifted(shift).sample(0.1).unwrap();
        let u = GridFunction::constant(-10.0, 10.0, 0.1, level);
        let ju = convolve(&k, &u).unwrap();
        prop_assert!(ju.values.iter().all(|v| (v - level).abs() < 1e-12));
    }

    #[test]
    fn convolution_preserves_order(
        base in proptest::collection::vec(0.0f64..1.0, 120),
        bump in proptest::collection::vec(0.0f64..0.5, 120),
    ) {
        let k = KernelSpec::asymmetric_example().sample(0.1).unwrap();
        let upper: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let ju = convolve(&k, &grid_fn(&base, 0.0, 1.0)).unwrap();
        let jv = convolve(&k, &grid_fn(&upper, 0.0, 1.0)).unwrap();
        prop_assert!(ju.values.iter().zip(&jv.values).all(|(a, b)| *a <= *b + 1e-14));
    }

    #[test]
    fn reflection_mirrors_the_transform(mu in -0.9f64..0.9) {
        let spec = KernelSpec::asymmetric_example();
        let a = spec.mgf(mu, 1e-12).unwrap();
        let b = spec.reflect().mgf(-mu, 1e-12).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn shifting_moves_the_mean(s in -3.0f64..3.0) {
        let m1 = KernelSpec::asymmetric_example().shifted(s).moment(1, 1e-12).unwrap();
        prop_assert!((m1 - s).abs() < 1e-9);
    }

    #[test]
    fn ignition_shape(rho in 0.05f64..0.6, target in 0.1f64..0.9, u in 0.0f64..1.0) {
        let f = IgnitionNonlinearity::with_max_slope(rho, 3, target).unwrap();
        let v = f.eval(u).unwrap();
        if u <= rho {
            prop_assert_eq!(v, 0.0);
        } else {
            prop_assert!(v >= 0.0);
        }
        prop_assert!(f.eval_prime(1.0).unwrap() < 0.0);
        let rc = f.derive_constants(1e-10).unwrap();
        prop_assert!((rc.fprime_max - target).abs() < 1e-6);
    }

    #[test]
    fn phase_shift_lines_up_both_fronts(
        c in 0.05f64..2.0,
        gap in 0.05f64..2.0,
        omega in -20.0f64..0.0,
        theta in -20.0f64..20.0,
    ) {
        // Level sets x + ct + θ and x + ĉt - θ map onto the ω-frame ones.
        let c_hat = c - gap;
        let s = phase_shift(c, c_hat, omega, theta);
        prop_assert!((s.x0 + c * s.t0 + omega - theta).abs() < 1e-9 * (1.0 + theta.abs() + omega.abs()) / gap.min(1.0));
        prop_assert!((s.x0 + c_hat * s.t0 - omega + theta).abs() < 1e-9 * (1.0 + theta.abs() + omega.abs()) / gap.min(1.0));
    }

    #[test]
    fn phase_function_is_increasing_and_bounded(
        c in 0.1f64..1.5,
        c_hat in -1.5f64..0.0,
        n in 0.5f64..50.0,
        sigma in 0.05f64..1.0,
    ) {
        let p = PParams::new(c, c_hat, n, sigma, -1.0).unwrap();
        let ts = time_grid(-30.0, 0.25);
        let vals: Vec<f64> = ts.iter().map(|&t| p_closed_form(&p, t).unwrap()).collect();
        prop_assert!(vals.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(p_bound_check(&p, &ts).unwrap().holds);
    }

    #[test]
    fn exact_lines_are_fitted_exactly(slope in -5.0f64..5.0, icpt in -5.0f64..5.0) {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + icpt).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-10 && (fit.intercept - icpt).abs() < 1e-10);
    }

    #[test]
    fn banded_lu_solves_dominant_systems(
        diag in proptest::collection::vec(4.0f64..8.0, 30),
        off in proptest::collection::vec(-1.0f64..1.0, 120),
    ) {
        let n = 30;
        let mut a = BandMatrix::zeros(n, 2, 2);
        let mut k = 0;
        for i in 0..n {
            a.set(i, i, diag[i]);
            for j in [i.wrapping_sub(2), i.wrapping_sub(1), i + 1, i + 2] {
                if j < n {
                    a.set(i, j, off[k % off.len()]);
                    k += 1;
                }
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = a.mul_vec(&x);
        a.factor().unwrap().solve(&mut b);
        prop_assert!(b.iter().zip(&x).all(|(p, q)| (p - q).abs() < 1e-10));
    }

    #[test]
    fn config_survives_json(seed in any::<u64>(), shift in -2.0f64..2.0) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.kernel.shift = shift;
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ordered_data_stay_ordered(seed in any::<u64>(), shift in -1.0f64..1.0) {
        let k = KernelSpec::asymmetric_example().shifted(shift).sample(0.1).unwrap();
        let nl = IgnitionNonlinearity::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, v) = random_ordered_pair(&mut rng, -15.0, 15.0, 0.1, 1.0);
        let rep = comparison_test(&k, &nl, &u, &v, 3.0, 0.1).unwrap();
        prop_assert!(rep.passed, "{:?}", rep);
    }
}
