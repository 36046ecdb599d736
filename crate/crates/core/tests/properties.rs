use nalgebra::Complex;
use proptest::prelude::*;
use qnet::cmatrix::{self, CMatrix, RMatrix};
use qnet::frequency::{self, FreqPoint};
use qnet::generate::{self, GenKind, GenOptions};
use qnet::network_model::{self, BlockParams};
use qnet::performance::{self, WeightSequence};
use qnet::realizability;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn random_chain(seed: u64, n: usize) -> BlockParams {
    generate::random_block(&GenOptions::chain(seed, n, GenKind::Random)).unwrap()
}

fn with_solved_theta(p: BlockParams) -> BlockParams {
    let theta = realizability::solve_theta(&p).unwrap().theta;
    p.with_theta(theta)
}

fn pr_chain(seed: u64, n: usize) -> BlockParams {
    let opts = GenOptions { m0: 4, m_plus: vec![2], ..GenOptions::chain(seed, n, GenKind::PrConsistent) };
    generate::generate(&opts).unwrap()
}

fn pow(m: &CMatrix, p: usize) -> CMatrix {
    (0..p).fold(CMatrix::identity(m.nrows(), m.ncols()), |acc, _| acc * m)
}

proptest! {
    #![proptest_config(config(40))]

    #[test]
    fn block_circulant_generator_diagonalizes(seed in 0u64..10_000, n in 1usize..=5, sites in 3usize..=10) {
        let p = random_chain(seed, n);
        let g = cmatrix::complexify(&network_model::assemble_chain_generator(&p, sites).unwrap());
        let t = network_model::dft_block_transform(&g, sites, n).unwrap();
        let grid = frequency::frequency_grid(sites, 1).unwrap();
        for (l, z) in grid.iter().enumerate() {
            for k in 0..sites {
                let block = t.view((l * n, k * n), (n, n)).into_owned();
                if l == k {
                    let az = frequency::mode_matrices(&p, z).unwrap().az;
                    prop_assert!((block - az).norm() <= 1e-10);
                } else {
                    prop_assert!(block.norm() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn generator_is_translation_invariant(seed in 0u64..10_000, n in 1usize..=4, sites in 3usize..=9) {
        let p = random_chain(seed, n);
        let g = network_model::assemble_chain_generator(&p, sites).unwrap();
        let s = network_model::cyclic_shift(sites, n);
        prop_assert!((&g * &s - &s * &g).norm() <= 1e-14 * g.norm().max(1.0));
    }

    #[test]
    fn mode_matrices_are_conjugation_symmetric(seed in 0u64..10_000, n in 1usize..=4, phi in -3.1f64..3.1) {
        let p = random_chain(seed, n);
        let z = FreqPoint::from_angles(&[phi]).unwrap();
        let m = frequency::mode_matrices(&p, &z).unwrap();
        let mi = frequency::mode_matrices(&p, &z.inverse()).unwrap();
        prop_assert!((mi.az - m.az.conjugate()).norm() <= 1e-13 * m.az.norm().max(1.0));
        prop_assert!((mi.bz - m.bz.conjugate()).norm() <= 1e-13 * m.bz.norm().max(1.0));
    }

    #[test]
    fn coupling_matrix_is_unitary(phi in -3.2f64..3.2, psi in -3.2f64..3.2) {
        let p = generate::generate(&GenOptions {
            seed: 1,
            n: 2,
            m0: 2,
            m_plus: vec![1, 2],
            m_minus: vec![2, 1],
            kind: GenKind::Random,
        })
        .unwrap();
        let z = FreqPoint::from_angles(&[phi, psi]).unwrap();
        let k = frequency::coupling_matrix(&z, &p.dims).unwrap();
        prop_assert!((&k * k.adjoint() - CMatrix::identity(k.nrows(), k.nrows())).norm() <= 1e-13);
    }

    #[test]
    fn aps_table_sums_to_powers(seed in 0u64..10_000, n in 1usize..=5, phis in prop::collection::vec(-3.2f64..3.2, 10)) {
        let p = random_chain(seed, n);
        let tables = frequency::aps_tables(&p, n).unwrap();
        for phi in phis {
            let z = FreqPoint::from_angles(&[phi]).unwrap();
            let az = frequency::mode_matrices(&p, &z).unwrap().az;
            for (order, table) in tables.iter().enumerate() {
                let err = (table.evaluate(z.components()[0]) - pow(&az, order)).norm();
                prop_assert!(err <= 1e-9 * az.norm().max(1.0).powi(order as i32), "p = {}: {:e}", order, err);
            }
        }
    }

    #[test]
    fn frequency_and_algebraic_forms_agree(seed in 0u64..100_000, n in 1usize..=6, pr in any::<bool>()) {
        let p = if pr && n % 2 == 0 { pr_chain(seed, n) } else { with_solved_theta(random_chain(seed, n)) };
        let sites = network_model::FragmentSpec::min_sites_for_algebraic_conditions(n);
        let t1 = realizability::check_theorem1_with_tol(&p, sites, 1e-8).unwrap();
        let t2 = realizability::check_theorem2_with_tol(&p, 1e-8).unwrap();
        prop_assert_eq!(t1.pass, t2.pass);
    }

    #[test]
    fn ccr_coefficients_are_antisymmetric_in_the_exponent(seed in 0u64..10_000, n in 1usize..=5, perturb in -1.0f64..1.0) {
        let mut p = with_solved_theta(random_chain(seed, n));
        if let Some(t) = p.theta.as_mut() {
            let extra = generate::canonical_j(n) * perturb;
            *t += extra;
        }
        let coeffs = realizability::ccr_laurent_coeffs(&p, 7).unwrap();
        for s in 0..=2i64 {
            let a = coeffs.get(s).unwrap();
            let b = coeffs.get(-s).unwrap();
            prop_assert!((b + a.transpose()).norm() <= 1e-10 * a.norm().max(1.0));
        }
    }

    #[test]
    fn recovered_theta_scales_quadratically(seed in 0u64..10_000, n in 1usize..=4, lambda in 0.2f64..3.0, pr in any::<bool>()) {
        let p = if pr && n % 2 == 0 { pr_chain(seed, n) } else { random_chain(seed, n) };
        let base = realizability::solve_theta(&p).unwrap();
        let mut q = p.clone();
        q.b *= lambda;
        for ax in &mut q.axes {
            ax.d_plus *= lambda;
            ax.d_minus *= lambda;
        }
        let scaled = realizability::solve_theta(&q).unwrap();
        let want = &base.theta * (lambda * lambda);
        prop_assert!((scaled.theta - &want).norm() <= 1e-9 * want.norm().max(1.0));
    }

    #[test]
    fn steady_covariance_is_psd_and_symmetric(seed in 0u64..10_000, n in 1usize..=4, phi in -3.1f64..3.1) {
        let p = random_chain(seed, n);
        let z = FreqPoint::from_angles(&[phi]).unwrap();
        let c = performance::covariance_parts(&p, &z).unwrap();
        let ci = performance::covariance_parts(&p, &z.inverse()).unwrap();
        prop_assert!(cmatrix::psd_check(&c.s, 1e-9).unwrap());
        let scale = c.s.norm().max(1.0);
        prop_assert!((&ci.symmetric_part - c.symmetric_part.conjugate()).norm() <= 1e-10 * scale);
        prop_assert!((&ci.commutator_part - c.commutator_part.conjugate()).norm() <= 1e-10 * scale);
    }

    #[test]
    fn heisenberg_property_for_realizable_chains(seed in 0u64..10_000, half in 1usize..=3) {
        let p = pr_chain(seed, 2 * half);
        let r = performance::heisenberg_check(&p, 16).unwrap();
        prop_assert!(r.max_deviation <= 1e-8);
        prop_assert!(r.min_eigenvalue >= -1e-9);
    }

    #[test]
    fn finite_weights_mirror_exactly(seed in 0u64..1000) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let x = generate::uniform(&mut rng, 3, 3, 1.0);
        let blocks = vec![
            (vec![0], &x + x.transpose()),
            (vec![1], generate::uniform(&mut rng, 3, 3, 1.0)),
            (vec![-2], generate::uniform(&mut rng, 3, 3, 1.0)),
        ];
        let w = WeightSequence::finite(1, 3, blocks).unwrap();
        let qnet::performance::WeightKind::Finite(map) = &w.kind else { panic!("finite weights") };
        for (k, m) in map {
            prop_assert_eq!(&map[&vec![-k[0]]], &m.transpose());
        }
        for phi in [-2.0, -0.3, 0.0, 1.1] {
            let z = FreqPoint::from_angles(&[phi]).unwrap();
            let s = w.spectrum(&z).unwrap();
            let si = w.spectrum(&z.inverse()).unwrap();
            prop_assert!((&si - s.transpose()).norm() <= 1e-12 * s.norm().max(1.0));
            prop_assert!((&s - s.adjoint()).norm() <= 1e-12 * s.norm().max(1.0));
        }
    }

    #[test]
    fn cost_is_nonnegative_for_psd_weights(seed in 0u64..10_000, n in 1usize..=3, rho in 0.0f64..0.9) {
        let p = random_chain(seed, n);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let x = generate::uniform(&mut rng, n, n, 1.0);
        let w = WeightSequence::geometric(1, rho, &x * x.transpose()).unwrap();
        let c = performance::finite_cost(&p, &w, 8).unwrap();
        prop_assert!(c.cost_per_site >= -1e-9);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn realizable_commutators_do_not_drift(seed in 0u64..10_000, half in 1usize..=2, sites in 5usize..=8, t in 0.0f64..10.0) {
        let p = pr_chain(seed, 2 * half);
        let grid = frequency::frequency_grid(sites, 1).unwrap();
        for z in &grid {
            for v in &grid {
                let f = realizability::commutator_flow(&p, sites, z, v, t).unwrap();
                prop_assert!(f.drift.norm() <= 1e-9);
                prop_assert!(f.xy.norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn xy_flow_matches_runge_kutta(seed in 0u64..10_000, n in 1usize..=3, t in 0.1f64..5.0) {
        let p = with_solved_theta(random_chain(seed, n));
        let sites = 5;
        let z = FreqPoint::root(sites, &[2]).unwrap();
        let m = frequency::mode_matrices(&p, &z).unwrap();
        let theta = cmatrix::complexify(p.theta().unwrap());
        let c = cmatrix::complexify(&p.stacked_c());
        let d = cmatrix::complexify(&p.stacked_d());
        let j = cmatrix::complexify(&p.j);
        let v = &theta * c.transpose() + &m.bz * j * d.transpose();
        let scale = Complex::new(0.0, 2.0 * sites as f64);
        let want = qnet::simulate::integrate_affine(&m.az, &v, t).unwrap() * scale;
        let got = realizability::commutator_flow(&p, sites, &z, &z, t).unwrap().xy;
        prop_assert!((&got - &want).norm() <= 1e-7 * want.norm().max(1.0), "{:e}", (&got - &want).norm());
    }
}

#[test]
fn chain_spectrum_is_the_union_of_mode_spectra() {
    let sites = 6;
    for seed in 0..5 {
        let p = random_chain(seed, 3);
        let g = cmatrix::complexify(&network_model::assemble_chain_generator(&p, sites).unwrap());
        let mut whole: Vec<_> = cmatrix::eigenvalues(&g).unwrap();
        let mut parts: Vec<_> = frequency::mode_grid(&p, sites)
            .unwrap()
            .iter()
            .flat_map(|m| cmatrix::eigenvalues(&m.az).unwrap())
            .collect();
        assert_eq!(whole.len(), parts.len());
        let key = |a: &Complex<f64>, b: &Complex<f64>| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im));
        whole.sort_by(key);
        parts.sort_by(key);
        for w in &whole {
            let nearest = parts.iter().map(|q| (q - w).norm()).fold(f64::INFINITY, f64::min);
            assert!(nearest <= 1e-8, "seed {seed}: {w} has no partner ({nearest:e})");
        }
    }
}

#[test]
fn finite_cost_error_shrinks_with_n() {
    for seed in 0..5 {
        let p = random_chain(seed, 2);
        let w = WeightSequence::geometric(1, 0.5, RMatrix::identity(2, 2)).unwrap();
        let limit = performance::cost_limit(&p, &w).unwrap().cost_per_site;
        let errs: Vec<f64> = [16, 32, 64, 128]
            .iter()
            .map(|&n| (performance::finite_cost(&p, &w, n).unwrap().cost_per_site - limit).abs())
            .collect();
        assert!(errs.windows(2).all(|e| e[1] <= e[0] + 1e-12), "seed {seed}: {errs:?}");
    }
}
