//! The assembled superoperator matrices against direct operator-by-operator
//! application, duality between the generator and its adjoint, and
//! preservation properties of the master-equation propagation.

use proptest::prelude::*;
use qtraj_core::linalg::{c, hermiticity_defect, identity, trace_re, CMat, DensityMatrix};
use qtraj_core::model::{adjoint_lindbladian, evolve_master, lindbladian, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(dim: usize, rng: &mut ChaCha8Rng) -> CMat {
    CMat::from_fn(dim, dim, |_, _| {
        c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    })
}

fn random_density(dim: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let g = random_matrix(dim, rng);
    let m = &g * g.adjoint() + identity(dim).scale(1e-3);
    let tr = trace_re(&m);
    DensityMatrix::new(m.scale(1.0 / tr)).unwrap()
}

fn random_spec(dim: usize, n_diffusive: usize, n_jump: usize, rng: &mut ChaCha8Rng) -> ModelSpec {
    let g = random_matrix(dim, rng);
    let h = (&g + g.adjoint()).scale(0.5);
    let diffusive = (0..n_diffusive).map(|_| random_matrix(dim, rng)).collect();
    let jump = (0..n_jump).map(|_| random_matrix(dim, rng)).collect();
    ModelSpec::new(h, diffusive, jump).unwrap()
}

/// Generator applied operator by operator, sidestepping the vectorized
/// matrix entirely.
fn lindblad_direct(spec: &ModelSpec, rho: &CMat) -> CMat {
    let h = spec.hamiltonian();
    let mut out = (h * rho - rho * h) * c(0.0, -1.0);
    for a in spec.diffusive_ops().iter().chain(spec.jump_ops()) {
        let gram = a.adjoint() * a;
        out += a * rho * a.adjoint();
        out -= (&gram * rho + rho * gram).scale(0.5);
    }
    out
}

#[test]
fn superoperator_matches_direct_action_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (dim, p, q) in [(2, 1, 0), (2, 0, 1), (3, 2, 1), (4, 1, 1)] {
        let spec = random_spec(dim, p, q, &mut rng);
        let gen = lindbladian(&spec);
        for _ in 0..20 {
            let rho = random_density(dim, &mut rng);
            let via_matrix = gen.apply(rho.matrix());
            let direct = lindblad_direct(&spec, rho.matrix());
            assert!(
                (via_matrix - direct).norm() < 1e-12,
                "superoperator disagrees with direct action (dim {dim})"
            );
        }
    }
}

#[test]
fn adjoint_satisfies_duality_pairing() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for (dim, p, q) in [(2, 1, 0), (3, 1, 1), (4, 2, 0)] {
        let spec = random_spec(dim, p, q, &mut rng);
        let gen = lindbladian(&spec);
        let adj = adjoint_lindbladian(&spec);
        for _ in 0..10 {
            let a = random_matrix(dim, &mut rng);
            let rho = random_matrix(dim, &mut rng);
            let lhs = (adj.apply(&a) * &rho).trace();
            let rhs = (&a * gen.apply(&rho)).trace();
            assert!((lhs - rhs).norm() < 1e-10, "duality violated at dim {dim}");
        }
    }
}

#[test]
fn generator_preserves_trace_hermiticity_and_adjoint_is_unital() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    for (dim, p, q) in [(2, 1, 1), (3, 2, 0), (5, 1, 2)] {
        let spec = random_spec(dim, p, q, &mut rng);
        let gen = lindbladian(&spec);
        let adj = adjoint_lindbladian(&spec);
        assert!(adj.apply(&identity(dim)).norm() < 1e-11);
        for _ in 0..10 {
            let rho = random_density(dim, &mut rng);
            let image = gen.apply(rho.matrix());
            assert!(trace_re(&image).abs() < 1e-11);
            assert!(image.trace().im.abs() < 1e-11);
            assert!(hermiticity_defect(&image) < 1e-11);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn master_equation_preserves_the_state_simplex(
        seed in 0u64..10_000,
        t in prop::sample::select(vec![0.3, 1.0, 7.0, 30.0, 100.0]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(2, 1, 1, &mut rng);
        let rho = random_density(2, &mut rng);
        let out = evolve_master(&spec, &rho, t).unwrap();
        prop_assert!((trace_re(out.matrix()) - 1.0).abs() < 1e-9);
        let (evals, _) = qtraj_core::linalg::eig_hermitian(&out.as_hermitian()).unwrap();
        prop_assert!(evals[0] >= -1e-10);
    }
}
