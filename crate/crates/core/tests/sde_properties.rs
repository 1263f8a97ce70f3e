//! Pathwise and ensemble properties of the jump-diffusion integrator:
//! consistency with the direct Euler discretization of the state equation,
//! agreement of the ensemble mean with the master equation, martingale
//! behavior of the likelihood and enclosure weights, and the selection of a
//! measurement eigenstate.

use qtraj_core::linalg::{c, identity, trace_re, CMat, CVec, DensityMatrix};
use qtraj_core::linalg::{pauli_z, sigma_minus};
use qtraj_core::model::{lindbladian, ModelSpec};
use qtraj_core::sde::{
    simulate_pair, simulate_reference, trajectory_rng, SimConfig, Stepper,
};
use rand::Rng;
use rand_distr::StandardNormal;

fn qnd_qubit() -> ModelSpec {
    ModelSpec::new(CMat::zeros(2, 2), vec![pauli_z()], vec![]).unwrap()
}

fn amplitude_damping() -> ModelSpec {
    ModelSpec::new(CMat::zeros(2, 2), vec![], vec![sigma_minus()]).unwrap()
}

fn plus_state() -> DensityMatrix {
    DensityMatrix::pure(&CVec::from_column_slice(&[c(1., 0.), c(1., 0.)]))
}

fn excited() -> DensityMatrix {
    DensityMatrix::pure(&CVec::from_column_slice(&[c(0., 0.), c(1., 0.)]))
}

/// Direct Euler step of the nonlinear state equation, driven by the same
/// innovation draws the propagator route consumes. The two discretizations
/// agree to first order in dt along a common noise realization.
fn direct_euler_path(spec: &ModelSpec, rho0: &DensityMatrix, cfg: &SimConfig, traj: u64) -> CMat {
    let gen = lindbladian(spec);
    let l = &spec.diffusive_ops()[0];
    let l_herm = l + l.adjoint();
    let mut rng = trajectory_rng(cfg.seed, traj);
    let mut rho = rho0.matrix().clone();
    let sqrt_dt = cfg.dt.sqrt();
    for _ in 0..cfg.n_steps() {
        let z: f64 = rng.sample(StandardNormal);
        let dw = sqrt_dt * z;
        let drift = gen.apply(&rho);
        let mean = (&l_herm * &rho).trace().re;
        let diffusion = l * &rho + &rho * l.adjoint() - rho.scale(mean);
        rho += drift.scale(cfg.dt) + diffusion * c(dw, 0.0);
    }
    rho
}

fn propagator_path(spec: &ModelSpec, rho0: &DensityMatrix, cfg: &SimConfig, traj: u64) -> CMat {
    let chaotic = DensityMatrix::chaotic(spec.dim());
    let mut stepper = Stepper::new(spec, rho0, &chaotic, cfg).unwrap();
    let mut rng = trajectory_rng(cfg.seed, traj);
    for _ in 0..cfg.n_steps() {
        stepper.advance(&mut rng).unwrap();
    }
    stepper.state().rho.matrix().clone()
}

#[test]
fn propagator_route_converges_to_direct_euler_path() {
    // Rabi drive plus dephasing keeps the state away from the pure-state
    // boundary, where the two discretizations would separate chaotically.
    // They differ in their second-order noise terms, so the pathwise gap
    // shrinks like sqrt(dt) along a common noise realization.
    let spec = ModelSpec::new(
        qtraj_core::linalg::pauli_x(),
        vec![pauli_z()],
        vec![],
    )
    .unwrap();
    let rho0 = plus_state();
    let mut gaps = [0.0_f64; 2];
    for (slot, dt) in [1e-3, 1e-5].into_iter().enumerate() {
        let cfg = SimConfig::new(dt, 1.0, 314);
        for traj in 0..4 {
            let a = propagator_path(&spec, &rho0, &cfg, traj);
            let b = direct_euler_path(&spec, &rho0, &cfg, traj);
            gaps[slot] = gaps[slot].max((a - b).norm());
        }
    }
    assert!(gaps[0] < 0.15, "dt=1e-3 gap {}", gaps[0]);
    assert!(gaps[1] < 0.03, "dt=1e-5 gap {}", gaps[1]);
    assert!(gaps[1] < gaps[0], "refinement must shrink the gap: {gaps:?}");
}

#[test]
fn ensemble_mean_tracks_master_equation_for_amplitude_damping() {
    // closed form: excited population decays like e^{-t}
    let spec = amplitude_damping();
    let cfg = SimConfig::new(2e-3, 1.0, 2718);
    let n = 600;
    let mut mean_pop = 0.0;
    for traj in 0..n {
        let rec = simulate_pair(
            &spec,
            &excited(),
            &DensityMatrix::chaotic(2),
            None,
            &[1.0],
            &cfg,
            traj,
        )
        .unwrap();
        mean_pop += rec.rho[0].matrix()[(1, 1)].re;
    }
    mean_pop /= n as f64;
    let exact = (-1.0_f64).exp();
    // population is roughly Bernoulli(e^-1): sd ~ 0.48/sqrt(600) ~ 0.02
    assert!(
        (mean_pop - exact).abs() < 0.065,
        "mean population {mean_pop} vs {exact}"
    );
}

#[test]
fn likelihood_mean_stays_at_one_under_reference_measure() {
    let spec = amplitude_damping();
    let cfg = SimConfig::new(2e-3, 2.0, 555);
    let n = 800;
    let rho = excited();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for traj in 0..n {
        let rec = simulate_reference(&spec, std::slice::from_ref(&rho), &[2.0], &cfg, traj).unwrap();
        let z = rec.z[0][0];
        assert!(z >= 0.0);
        sum += z;
        sumsq += z * z;
    }
    let mean = sum / n as f64;
    let var = (sumsq - sum * sum / n as f64) / (n as f64 - 1.0);
    let se = (var / n as f64).sqrt();
    assert!(
        (mean - 1.0).abs() <= 3.0 * se.max(1e-6),
        "E[Z] = {mean} +- {se}"
    );
}

#[test]
fn enclosure_weight_is_a_martingale_and_selects_an_eigenstate() {
    // diffusive population monitoring: the ground-state weight
    // q = <0|rho|0> starts at 1/2, stays at 1/2 in mean, and ends near
    // 0 or 1 with equal probability
    let spec = qnd_qubit();
    let cfg = SimConfig::new(1e-3, 10.0, 90210);
    let n = 400;
    let mut sum_q_mid = 0.0;
    let mut sum_q_end = 0.0;
    let mut selected_ground = 0usize;
    let mut resolved = 0usize;
    for traj in 0..n {
        let rec = simulate_pair(
            &spec,
            &plus_state(),
            &DensityMatrix::chaotic(2),
            None,
            &[5.0, 10.0],
            &cfg,
            traj,
        )
        .unwrap();
        let q_mid = rec.rho[0].matrix()[(0, 0)].re;
        let q_end = rec.rho[1].matrix()[(0, 0)].re;
        sum_q_mid += q_mid;
        sum_q_end += q_end;
        if q_end > 0.99 {
            selected_ground += 1;
            resolved += 1;
        } else if q_end < 0.01 {
            resolved += 1;
        }
    }
    let nf = n as f64;
    // martingale: mean stays at 1/2 (sd of q is at most 1/2)
    let band = 3.0 * 0.5 / nf.sqrt();
    assert!((sum_q_mid / nf - 0.5).abs() < band + 0.02);
    assert!((sum_q_end / nf - 0.5).abs() < band + 0.02);
    // selection: nearly all trajectories resolve by T=10 and split evenly
    assert!(resolved as f64 / nf > 0.97, "resolved {resolved}/{n}");
    let frac = selected_ground as f64 / nf;
    let binom = 3.0 * (0.25 / nf).sqrt();
    assert!((frac - 0.5).abs() <= binom + 0.02, "selection fraction {frac}");
}

#[test]
fn purifying_measurement_drives_fidelity_toward_one() {
    let spec = qnd_qubit();
    let cfg = SimConfig::new(1e-3, 12.0, 777);
    let n = 60;
    let mut mean_first = 0.0;
    let mut mean_last = 0.0;
    for traj in 0..n {
        let rec = simulate_pair(
            &spec,
            &plus_state(),
            &DensityMatrix::chaotic(2),
            None,
            &[0.0, 12.0],
            &cfg,
            traj,
        )
        .unwrap();
        mean_first += rec.fidelity[0];
        mean_last += rec.fidelity[1];
    }
    mean_first /= n as f64;
    mean_last /= n as f64;
    assert!((mean_first - 0.5).abs() < 1e-12, "F(rho0, I/2) = 1/2");
    assert!(mean_last > 0.95, "mean final fidelity {mean_last}");
}

#[test]
fn jump_counts_match_poisson_rate_for_reference_measure() {
    // under the reference measure jumps arrive at unit rate
    let spec = amplitude_damping();
    let cfg = SimConfig::new(1e-2, 5.0, 31);
    let n = 300;
    let mut total = 0u64;
    for traj in 0..n {
        let mut stepper = Stepper::new_reference(&spec, &cfg).unwrap();
        let mut rng = trajectory_rng(cfg.seed, traj);
        for _ in 0..cfg.n_steps() {
            stepper.advance(&mut rng).unwrap();
        }
        total += stepper.state().jump_counts[0];
    }
    let mean = total as f64 / n as f64;
    // Poisson(5): sd sqrt(5) ~ 2.24, se ~ 0.13
    assert!((mean - 5.0).abs() < 0.45, "mean jump count {mean}");
}

#[test]
fn enclosure_weights_are_probabilities_summing_to_one() {
    let spec = qnd_qubit();
    let dec = qtraj_core::structure::minimal_enclosures(&spec).unwrap();
    let duals = qtraj_core::structure::dual_projectors(&spec, &dec.states).unwrap();
    let cfg = SimConfig::new(1e-3, 6.0, 616);
    for traj in 0..5 {
        let rec = simulate_pair(
            &spec,
            &plus_state(),
            &DensityMatrix::chaotic(2),
            Some(&duals),
            &[0.0, 1.0, 3.0, 6.0],
            &cfg,
            traj,
        )
        .unwrap();
        for row in rec.q_rho.iter().chain(rec.q_rho_hat.iter()) {
            for &q in row {
                assert!((-1e-8..=1.0 + 1e-8).contains(&q), "weight {q} out of range");
            }
            let total: f64 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-8, "weights sum to {total}");
        }
    }
}

#[test]
fn gram_fidelity_rejects_orthogonal_filter_support() {
    // an artificial state whose propagator annihilates the filter's support
    let mut propagator = CMat::zeros(2, 2);
    propagator[(1, 1)] = c(1.0, 0.0);
    let state = qtraj_core::sde::PairState {
        rho: excited(),
        rho_hat: excited(),
        propagator,
        log_norm: 0.0,
        jump_counts: vec![],
        time: 1.0,
    };
    let ground = DensityMatrix::pure(&CVec::from_column_slice(&[c(1., 0.), c(0., 0.)]));
    let err = qtraj_core::sde::fidelity_from_gram(&state, &excited(), &ground).unwrap_err();
    assert!(matches!(err, qtraj_core::Error::DegenerateState { .. }));
}

#[test]
fn cesaro_mean_is_a_valid_state_and_trapezoid_consistent() {
    let spec = qnd_qubit();
    let cfg = SimConfig::new(1e-3, 3.0, 8);
    let rec = simulate_pair(
        &spec,
        &plus_state(),
        &DensityMatrix::chaotic(2),
        None,
        &[1.0, 3.0],
        &cfg,
        0,
    )
    .unwrap();
    for cm in rec.cesaro_rho.iter().chain(rec.cesaro_rho_hat.iter()) {
        assert!((trace_re(cm.matrix()) - 1.0).abs() < 1e-10);
        let (evals, _) = qtraj_core::linalg::eig_hermitian(&cm.as_hermitian()).unwrap();
        assert!(evals[0] >= -1e-12);
    }
    // identity-channel model averages to the frozen state exactly
    let frozen = ModelSpec::new(CMat::zeros(2, 2), vec![], vec![identity(2)]).unwrap();
    let rec = simulate_pair(
        &frozen,
        &plus_state(),
        &DensityMatrix::chaotic(2),
        None,
        &[2.0],
        &cfg,
        0,
    )
    .unwrap();
    assert!((rec.cesaro_rho[0].matrix() - plus_state().matrix()).norm() < 1e-9);
}
