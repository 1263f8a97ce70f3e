use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use std::hint::black_box;

use nalgebra::DMatrix;
use num_complex::Complex64;
use qtraj_core::linalg::{fidelity, pauli_x, pauli_z, DensityMatrix};
use qtraj_core::model::{evolve_master, ModelSpec};
use qtraj_core::sde::{trajectory_rng, SimConfig, Stepper};
use qtraj_core::structure::{analyze, PurificationMethod, StructureOptions};

type CMat = DMatrix<Complex64>;

fn qnd_qubit() -> ModelSpec {
    ModelSpec::new(CMat::zeros(2, 2), vec![pauli_z()], vec![]).unwrap()
}

fn block_model() -> ModelSpec {
    let h = CMat::identity(2, 2).kronecker(&pauli_x());
    let l = CMat::identity(2, 2).kronecker(&pauli_z());
    ModelSpec::new(h, vec![l], vec![]).unwrap()
}

fn plus_state(dim: usize) -> DensityMatrix {
    let v = nalgebra::DVector::from_element(dim, Complex64::new(1.0, 0.0));
    DensityMatrix::pure(&v)
}

fn bench_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("stepper");
    let n_steps = 1000u64;
    group.throughput(Throughput::Elements(n_steps));
    for (name, spec) in [("qubit_diffusive", qnd_qubit()), ("dim4_block", block_model())] {
        let dim = spec.dim();
        let cfg = SimConfig::new(1e-3, 1.0, 7);
        group.bench_function(name, |b| {
            b.iter_batched(
                || {
                    (
                        Stepper::new(&spec, &plus_state(dim), &DensityMatrix::chaotic(dim), &cfg)
                            .unwrap(),
                        trajectory_rng(7, 0),
                    )
                },
                |(mut stepper, mut rng)| {
                    for _ in 0..n_steps {
                        stepper.advance(&mut rng).unwrap();
                    }
                    black_box(stepper.state().log_norm)
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn bench_fidelity(c: &mut Criterion) {
    let rho = plus_state(4);
    let sigma = DensityMatrix::chaotic(4);
    c.bench_function("fidelity_dim4", |b| {
        b.iter(|| fidelity(black_box(&rho), black_box(&sigma)).unwrap())
    });
}

fn bench_master_equation(c: &mut Criterion) {
    let spec = block_model();
    let rho = DensityMatrix::chaotic(4);
    c.bench_function("evolve_master_dim4", |b| {
        b.iter(|| evolve_master(black_box(&spec), black_box(&rho), black_box(5.0)).unwrap())
    });
}

fn bench_structure(c: &mut Criterion) {
    let spec = qnd_qubit();
    let opts = StructureOptions {
        purification: PurificationMethod::Algebraic,
        ..StructureOptions::default()
    };
    c.bench_function("analyze_qubit", |b| {
        b.iter(|| analyze(black_box(&spec), black_box(&opts)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_steps,
    bench_fidelity,
    bench_master_equation,
    bench_structure
);
criterion_main!(benches);
