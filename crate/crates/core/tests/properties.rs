use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use selftest_core::bell::{born_table, check_no_signalling, ObservableSet, ProjectiveMeasurement, EXACT_NS_TOL};
use selftest_core::highdim::{build_qudit_settings, build_qudit_settings_with, reconstruct_coefficients, reconstruct_with, PairingMode, QuditLayout};
use selftest_core::noise::{dephase, mix_white, sample_counts};
use selftest_core::qcore::random::{haar_unitary, random_density, random_pure, random_qubit_observable};
use selftest_core::qcore::{fidelity_to_pure, partial_trace, purity, ComplexMatrix, DensityMatrix, Party, SchmidtState};
use selftest_core::tiltedchsh::{beta_value, extract_theta, optimal_settings, quantum_bound};
use selftest_core::tomo::{reconstruct_with_basis, tomo_projectors, tomography_probabilities};

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn assert_valid(m: &ComplexMatrix) {
    DensityMatrix::new(m.clone()).expect("valid density matrix");
}

fn random_measurement(dim: usize, r: &mut ChaCha20Rng) -> ProjectiveMeasurement {
    let u = haar_unitary(dim, r);
    ProjectiveMeasurement::computational(dim).conjugated(&u)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kron_is_associative_and_mixes_products(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b, c) = (haar_unitary(2, &mut r), haar_unitary(3, &mut r), haar_unitary(2, &mut r));
        let left = a.kron(&b).kron(&c);
        let right = a.kron(&b.kron(&c));
        prop_assert!(left.max_abs_diff(&right) < 1e-13);
        let (a2, b2) = (haar_unitary(2, &mut r), haar_unitary(3, &mut r));
        let mixed = a.kron(&b).matmul(&a2.kron(&b2));
        prop_assert!(mixed.max_abs_diff(&a.matmul(&a2).kron(&b.matmul(&b2))) < 1e-13);
    }

    #[test]
    fn partial_trace_of_product_states(seed in any::<u64>(), da in 2usize..5, db in 2usize..5) {
        let mut r = rng(seed);
        let (ra, rb) = (random_density(da, &mut r), random_density(db, &mut r));
        let joint = DensityMatrix::product(&ra, &rb);
        let ta = partial_trace(&joint, (da, db), Party::A).unwrap();
        let tb = partial_trace(&joint, (da, db), Party::B).unwrap();
        prop_assert!(ta.matrix().max_abs_diff(ra.matrix()) < 1e-13);
        prop_assert!(tb.matrix().max_abs_diff(rb.matrix()) < 1e-13);
    }

    #[test]
    fn fidelity_is_linear_in_the_state(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let (r1, r2) = (random_density(4, &mut r), random_density(4, &mut r));
        let psi = random_pure(4, &mut r);
        let mix = DensityMatrix::new(&r1.matrix().scale_real(p) + &r2.matrix().scale_real(1.0 - p)).unwrap();
        let lhs = fidelity_to_pure(&mix, &psi).unwrap();
        let rhs = p * fidelity_to_pure(&r1, &psi).unwrap() + (1.0 - p) * fidelity_to_pure(&r2, &psi).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn purity_bounds_and_pure_states(seed in any::<u64>(), n in 2usize..9) {
        let mut r = rng(seed);
        let p = purity(&random_density(n, &mut r));
        prop_assert!(p >= 1.0 / n as f64 - 1e-12 && p <= 1.0 + 1e-12);
        let pure = DensityMatrix::from_pure(&random_pure(n, &mut r)).unwrap();
        prop_assert!((purity(&pure) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn born_tables_are_normalized_and_non_signalling(seed in any::<u64>(), d in 2usize..5) {
        let mut r = rng(seed);
        let rho = random_density(d * d, &mut r);
        let alice = ObservableSet::new((0..3).map(|_| random_measurement(d, &mut r)).collect()).unwrap();
        let bob = ObservableSet::new((0..2).map(|_| random_measurement(d, &mut r)).collect()).unwrap();
        let t = born_table(&rho, &alice, &bob).unwrap();
        prop_assert!(t.probs().iter().all(|&p| p >= 0.0));
        prop_assert!(check_no_signalling(&t, EXACT_NS_TOL).pass);
    }

    #[test]
    fn noise_channels_preserve_states(seed in any::<u64>(), v in 0.0f64..=1.0, lambda in 0.0f64..=1.0, d in 2usize..5) {
        let mut r = rng(seed);
        let rho = random_density(d * d, &mut r);
        assert_valid(mix_white(&rho, v).unwrap().matrix());
        assert_valid(dephase(&rho, lambda, (d, d)).unwrap().matrix());
    }

    #[test]
    fn white_noise_purity_increases_with_visibility(seed in any::<u64>(), v in 0.0f64..0.99) {
        let mut r = rng(seed);
        let pure = DensityMatrix::from_pure(&random_pure(4, &mut r)).unwrap();
        let lo = purity(&mix_white(&pure, v).unwrap());
        let hi = purity(&mix_white(&pure, v + 0.01).unwrap());
        prop_assert!(hi > lo);
    }

    #[test]
    fn gap_is_nonnegative_for_quantum_tables(seed in any::<u64>()) {
        // b(α) bounds every quantum strategy, so the extracted gap cannot be negative
        let mut r = rng(seed);
        let rho = random_density(4, &mut r);
        let obs = |r: &mut ChaCha20Rng| ProjectiveMeasurement::from_observable(&random_qubit_observable(r)).unwrap();
        let alice = ObservableSet::new(vec![obs(&mut r), obs(&mut r)]).unwrap();
        let bob = ObservableSet::new(vec![obs(&mut r), obs(&mut r)]).unwrap();
        let t = born_table(&rho, &alice, &bob).unwrap();
        let e = extract_theta(&t).unwrap();
        prop_assert!(e.gap >= -1e-12, "{e:?}");
        prop_assert!(beta_value(&t, e.alpha0).unwrap() <= quantum_bound(e.alpha0) + 1e-12);
    }

    #[test]
    fn ideal_extraction_recovers_theta(theta in 1e-3f64..std::f64::consts::FRAC_PI_4) {
        let o = optimal_settings(theta).unwrap();
        let rho = DensityMatrix::from_pure(&selftest_core::qcore::target_amplitudes(theta)).unwrap();
        let e = extract_theta(&born_table(&rho, &o.settings.alice, &o.settings.bob).unwrap()).unwrap();
        prop_assert!((e.theta - theta).abs() < 1e-7);
        prop_assert!(e.gap.abs() < 1e-9);
    }

    #[test]
    fn qudit_reconstruction_is_exact(raw in prop::collection::vec(0.05f64..1.0, 3..=4)) {
        let (state, _) = SchmidtState::normalized(raw).unwrap();
        let s = build_qudit_settings(&state).unwrap().settings;
        let t = born_table(&state.density(), &s.alice, &s.bob).unwrap();
        let rec = reconstruct_coefficients(&t, state.d()).unwrap();
        for (e, c) in rec.coeffs_est.iter().zip(state.coeffs()) {
            prop_assert!((e - c).abs() < 1e-6);
        }
        prop_assert!(rec.consistency_residual < 1e-6);
    }

    #[test]
    fn reconstruction_is_permutation_covariant(raw in prop::collection::vec(0.05f64..1.0, 4), perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
        let (state, _) = SchmidtState::normalized(raw).unwrap();
        let mut permuted = vec![0.0; 4];
        for (i, &c) in state.coeffs().iter().enumerate() {
            permuted[perm[i]] = c;
        }
        let pstate = SchmidtState::new(permuted).unwrap();
        let layout = QuditLayout::standard(4).unwrap().permuted(&perm).unwrap();
        let s = build_qudit_settings_with(&layout, &pstate).unwrap().settings;
        let rec = reconstruct_with(&born_table(&pstate.density(), &s.alice, &s.bob).unwrap(), &layout, PairingMode::Primary).unwrap();
        for i in 0..4 {
            prop_assert!((rec.coeffs_est[perm[i]] - state.coeffs()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn tomography_inverts_exact_data(seed in any::<u64>(), d in 2usize..5) {
        let mut r = rng(seed);
        let rho = random_density(d * d, &mut r);
        let basis = tomo_projectors(d).unwrap();
        let rec = reconstruct_with_basis(&tomography_probabilities(&rho, &basis).unwrap(), &basis).unwrap();
        prop_assert!(rec.rho.matrix().max_abs_diff(rho.matrix()) < 1e-10);
    }

    #[test]
    fn sampled_counts_sum_per_setting(seed in any::<u64>(), n in 1u64..5000) {
        let o = optimal_settings(0.4).unwrap();
        let rho = random_density(4, &mut rng(seed));
        let t = born_table(&rho, &o.settings.alice, &o.settings.bob).unwrap();
        let s = sample_counts(&t, n, seed).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                prop_assert_eq!(s.setting_total(x, y), Some(n));
            }
        }
    }
}
