//! Structural analysis against dynamical ground truth: invariant states are
//! fixed by the propagated semigroup, verdicts are basis-independent, and
//! the Monte Carlo purification falsifier agrees with the algebra on the
//! duplicated-block model.

use qtraj_core::linalg::{c, identity, pauli_x, pauli_z, trace_re, CMat};
use qtraj_core::model::{evolve_master, ModelSpec};
use qtraj_core::structure::{
    analyze, check_purification, minimal_enclosures, PurificationMcParams, PurificationMethod,
    PurificationVerdict, StructureOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn qnd_qubit() -> ModelSpec {
    ModelSpec::new(CMat::zeros(2, 2), vec![pauli_z()], vec![]).unwrap()
}

fn duplicated_block_model() -> ModelSpec {
    let h = identity(2).kronecker(&pauli_x());
    let l = identity(2).kronecker(&pauli_z());
    ModelSpec::new(h, vec![l], vec![]).unwrap()
}

fn random_unitary(dim: usize, rng: &mut ChaCha8Rng) -> CMat {
    let g = CMat::from_fn(dim, dim, |_, _| {
        c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    g.qr().q()
}

fn algebraic_options() -> StructureOptions {
    StructureOptions {
        purification: PurificationMethod::Algebraic,
        ..StructureOptions::default()
    }
}

#[test]
fn invariant_states_are_fixed_by_the_semigroup() {
    for spec in [qnd_qubit(), duplicated_block_model()] {
        let dec = minimal_enclosures(&spec).unwrap();
        for state in &dec.states {
            for t in [1.0, 10.0] {
                let evolved = evolve_master(&spec, state, t).unwrap();
                assert!(
                    (evolved.matrix() - state.matrix()).norm() < 1e-8,
                    "invariant state moved under e^(tL) at t={t}"
                );
            }
        }
    }
}

#[test]
fn verdicts_are_invariant_under_unitary_conjugation() {
    let base = analyze(&qnd_qubit(), &algebraic_options()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let u = random_unitary(2, &mut rng);
        let spec = qnd_qubit().conjugated(&u).unwrap();
        let report = analyze(&spec, &algebraic_options()).unwrap();
        assert_eq!(report.n_enclosures(), base.n_enclosures());
        assert_eq!(report.spectral_ok, base.spectral_ok);
        assert_eq!(report.identifiable, base.identifiable);
        assert_eq!(report.purification.verdict, base.purification.verdict);
        // spectra agree as multisets
        for (a, b) in report
            .liouvillian_spectrum
            .iter()
            .zip(base.liouvillian_spectrum.iter())
        {
            assert!((a - b).norm() < 1e-8);
        }
    }
}

#[test]
fn block_verdicts_are_invariant_under_unitary_conjugation() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..3 {
        let u = random_unitary(4, &mut rng);
        let spec = duplicated_block_model().conjugated(&u).unwrap();
        let report = analyze(&spec, &algebraic_options()).unwrap();
        assert_eq!(report.n_enclosures(), 2);
        assert!(!report.identifiable);
        assert_eq!(report.purification.verdict, PurificationVerdict::Fails);
    }
}

#[test]
fn enclosure_projectors_carry_their_states_supports() {
    let dec = minimal_enclosures(&duplicated_block_model()).unwrap();
    let mut sum = CMat::zeros(4, 4);
    for (proj, state) in dec.projectors.iter().zip(dec.states.iter()) {
        // the state lives entirely inside its enclosure
        let compressed = proj * state.matrix() * proj;
        assert!((compressed - state.matrix()).norm() < 1e-8);
        assert!((trace_re(proj) - 2.0).abs() < 1e-8);
        sum += proj;
    }
    assert!((sum - identity(4)).norm() < 1e-8);
}

#[test]
fn mc_falsifier_agrees_with_algebra_on_the_block_model() {
    let spec = duplicated_block_model();
    let params = PurificationMcParams {
        trajectories: 8,
        horizon: 8.0,
        dt: 1e-3,
        seed: 4242,
    };
    let report = check_purification(&spec, &PurificationMethod::Auto(params.clone())).unwrap();
    assert_eq!(report.verdict, PurificationVerdict::Fails);
    // the duplicated blocks pin a doubly-degenerate Gram operator
    assert!(report.mc_second_eigenvalue.unwrap() > 0.1);
    assert!(report.algebraic_witness.is_some());

    let mc_only = check_purification(&spec, &PurificationMethod::MonteCarlo(params)).unwrap();
    assert_eq!(mc_only.verdict, PurificationVerdict::Fails);
}

#[test]
fn mc_falsifier_sees_purification_where_it_holds() {
    // a generic 3-level model with a single non-normal diffusive channel
    let mut l = CMat::zeros(3, 3);
    l[(0, 1)] = c(1.0, 0.0);
    l[(1, 2)] = c(0.7, 0.2);
    l[(0, 0)] = c(0.3, 0.0);
    let spec = ModelSpec::new(CMat::zeros(3, 3), vec![l], vec![]).unwrap();
    let report = check_purification(
        &spec,
        &PurificationMethod::MonteCarlo(PurificationMcParams {
            trajectories: 8,
            horizon: 25.0,
            dt: 1e-3,
            seed: 7,
        }),
    )
    .unwrap();
    assert_eq!(report.verdict, PurificationVerdict::Holds);
    assert!(report.mc_second_eigenvalue.unwrap() < 1e-4);
}
