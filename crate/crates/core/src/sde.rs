//! Jump-diffusion integration of the coupled system: true trajectory,
//! estimated filter, normalized propagator and log-likelihood.
//!
//! The canonical state evolution goes through the propagator: each step
//! applies the Euler transfer matrix of the linear propagator equation to a
//! Frobenius-normalized S_t (the discarded scale accumulates in `log_norm`),
//! and both states are recovered by the exact congruence S rho S* / tr
//! against the trajectory's initial states. This keeps the states positive
//! semidefinite by construction and makes the fidelity identity through the
//! propagator Gram operator hold pathwise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{
    c, fidelity, herm_sqrt, identity, kernel_inclusion, trace_re, CMat, DensityMatrix,
    HermitianMatrix,
};
use crate::model::{drift_k, ModelSpec};

/// ln(1e-300): below this total log-weight a trajectory is declared dead.
const DEATH_LOG_THRESHOLD: f64 = -690.77552789821368;

/// Step size, horizon and reproducibility knobs for one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Cap on the per-step jump probability intensity*dt; steps exceeding it
    /// abort with a step-size error.
    pub max_jump_prob: f64,
    /// Propagator renormalization cadence in steps.
    pub renorm_every: u32,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> Self {
        Self {
            dt,
            horizon,
            seed,
            max_jump_prob: 0.1,
            renorm_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig {
                reason: format!("dt must be positive, got {}", self.dt),
            });
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig {
                reason: "horizon must be at least one step".into(),
            });
        }
        if !(self.max_jump_prob > 0.0 && self.max_jump_prob <= 0.1) {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "max_jump_prob must lie in (0, 0.1], got {}",
                    self.max_jump_prob
                ),
            });
        }
        if self.renorm_every == 0 {
            return Err(Error::InvalidConfig {
                reason: "renorm_every must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        (self.horizon / self.dt).round().max(1.0) as u64
    }
}

/// Counter-based per-trajectory random stream: reproducible regardless of
/// how trajectories are scheduled across workers.
pub fn trajectory_rng(seed: u64, trajectory_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trajectory_index.to_le_bytes());
    key[16..24].copy_from_slice(b"qtrajsde");
    ChaCha8Rng::from_seed(key)
}

/// Coupled simulation state at one instant.
#[derive(Debug, Clone)]
pub struct PairState {
    pub rho: DensityMatrix,
    pub rho_hat: DensityMatrix,
    /// Propagator rescaled to unit Frobenius norm.
    pub propagator: CMat,
    /// Accumulated log of the discarded scale: S_t = e^{log_norm} * propagator.
    pub log_norm: f64,
    pub jump_counts: Vec<u64>,
    pub time: f64,
}

/// Normalized Gram operator of the propagator: M = S*S / tr(S*S).
/// Positive semidefinite with unit trace for any S.
pub fn gram_operator(state: &PairState) -> HermitianMatrix {
    let g = state.propagator.adjoint() * &state.propagator;
    let tr = trace_re(&g);
    HermitianMatrix::symmetrized(&g.scale(1.0 / tr))
}

/// Fidelity of the pair evaluated through the Gram operator:
/// F(sqrt(M) rho0 sqrt(M)/tr(M rho0), sqrt(M) rho_hat0 sqrt(M)/tr(M rho_hat0)).
/// Algebraically identical to F(rho_t, rho_hat_t) for any propagator,
/// independent of discretization error.
pub fn fidelity_from_gram(
    state: &PairState,
    rho0: &DensityMatrix,
    rho_hat0: &DensityMatrix,
) -> Result<f64> {
    let m = gram_operator(state);
    let tr_rho = trace_prod_re(m.matrix(), rho0.matrix());
    let tr_hat = trace_prod_re(m.matrix(), rho_hat0.matrix());
    if tr_hat <= 1e-14 {
        return Err(Error::DegenerateState { trace: tr_hat });
    }
    if tr_rho <= 1e-14 {
        return Err(Error::DegenerateState { trace: tr_rho });
    }
    let root = herm_sqrt(&m)?;
    let a = (root.matrix() * rho0.matrix() * root.matrix()).scale(1.0 / tr_rho);
    let b = (root.matrix() * rho_hat0.matrix() * root.matrix()).scale(1.0 / tr_hat);
    fidelity(
        &DensityMatrix::from_psd_unchecked(&a),
        &DensityMatrix::from_psd_unchecked(&b),
    )
}

/// Enclosure weights tr(M_i rho) for a list of dual projectors.
pub fn enclosure_weights(rho: &CMat, dual_projectors: &[HermitianMatrix]) -> Vec<f64> {
    dual_projectors
        .iter()
        .map(|m| trace_prod_re(m.matrix(), rho))
        .collect()
}

/// Re tr(A B) without forming the product.
pub fn trace_prod_re(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)];
            let y = b[(j, i)];
            s += x.re * y.re - x.im * y.im;
        }
    }
    s
}

fn conj_transpose_into(src: &CMat, dst: &mut CMat) {
    let n = src.nrows();
    for i in 0..n {
        for j in 0..n {
            dst[(i, j)] = src[(j, i)].conj();
        }
    }
}

enum Mode {
    /// Physical measure: innovations get the measurement backaction drift and
    /// jumps fire at the state-dependent intensity.
    Physical,
    /// Reference measure: driftless Wiener increments, unit-rate jumps, no
    /// state tracking.
    Reference,
}

/// Integrates one trajectory. Holds the trajectory's initial states (the
/// congruence recovers rho_t and rho_hat_t from them every step) together
/// with preassembled model matrices and reusable step buffers.
pub struct Stepper {
    dim: usize,
    mode: Mode,
    dt: f64,
    sqrt_dt: f64,
    max_jump_prob: f64,
    renorm_every: u64,
    /// I + (K + (n_jump/2) Id) dt, the deterministic part of the transfer.
    ident_keff_dt: CMat,
    l_ops: Vec<CMat>,
    /// L + L* per diffusive channel, for the backaction drift.
    l_herm: Vec<CMat>,
    /// C - Id per jump channel.
    c_minus_id: Vec<CMat>,
    /// C*C per jump channel, for intensities.
    c_gram: Vec<CMat>,
    rho0: CMat,
    rho_hat0: CMat,

    p: CMat,
    p_adj: CMat,
    log_norm: f64,
    rho: CMat,
    rho_hat: CMat,
    rho_prev: CMat,
    time: f64,
    step_index: u64,
    jump_counts: Vec<u64>,
    jump_times: Vec<Vec<f64>>,

    t_buf: CMat,
    p_next: CMat,
    work: CMat,
    cong: CMat,
    drifts: Vec<f64>,
    dw: Vec<f64>,
    jumped: Vec<bool>,
    cesaro_rho: CMat,
    cesaro_rho_hat: CMat,
}

impl Stepper {
    /// A stepper for the coupled pair under the physical measure of `rho0`.
    pub fn new(
        spec: &ModelSpec,
        rho0: &DensityMatrix,
        rho_hat0: &DensityMatrix,
        cfg: &SimConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if rho0.dim() != spec.dim() || rho_hat0.dim() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                got: rho0.dim(),
            });
        }
        Ok(Self::build(spec, rho0, rho_hat0, cfg, Mode::Physical))
    }

    /// A stepper for the propagator alone under the reference measure.
    pub fn new_reference(spec: &ModelSpec, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let chaotic = DensityMatrix::chaotic(spec.dim());
        Ok(Self::build(spec, &chaotic, &chaotic, cfg, Mode::Reference))
    }

    fn build(
        spec: &ModelSpec,
        rho0: &DensityMatrix,
        rho_hat0: &DensityMatrix,
        cfg: &SimConfig,
        mode: Mode,
    ) -> Self {
        let dim = spec.dim();
        let n_jump = spec.n_jump();
        let keff = drift_k(spec) + identity(dim).scale(n_jump as f64 / 2.0);
        let ident_keff_dt = identity(dim) + keff.scale(cfg.dt);
        let k = dim as f64;
        Self {
            dim,
            mode,
            dt: cfg.dt,
            sqrt_dt: cfg.dt.sqrt(),
            max_jump_prob: cfg.max_jump_prob,
            renorm_every: cfg.renorm_every as u64,
            ident_keff_dt,
            l_ops: spec.diffusive_ops().to_vec(),
            l_herm: spec
                .diffusive_ops()
                .iter()
                .map(|l| l + l.adjoint())
                .collect(),
            c_minus_id: spec
                .jump_ops()
                .iter()
                .map(|cj| cj - identity(dim))
                .collect(),
            c_gram: spec.jump_ops().iter().map(|cj| cj.adjoint() * cj).collect(),
            rho0: rho0.matrix().clone(),
            rho_hat0: rho_hat0.matrix().clone(),
            p: identity(dim).scale(1.0 / k.sqrt()),
            p_adj: identity(dim).scale(1.0 / k.sqrt()),
            log_norm: 0.5 * k.ln(),
            rho: rho0.matrix().clone(),
            rho_hat: rho_hat0.matrix().clone(),
            rho_prev: rho0.matrix().clone(),
            time: 0.0,
            step_index: 0,
            jump_counts: vec![0; n_jump],
            jump_times: vec![Vec::new(); n_jump],
            t_buf: CMat::zeros(dim, dim),
            p_next: CMat::zeros(dim, dim),
            work: CMat::zeros(dim, dim),
            cong: CMat::zeros(dim, dim),
            drifts: vec![0.0; spec.n_diffusive()],
            dw: vec![0.0; spec.n_diffusive()],
            jumped: vec![false; n_jump],
            cesaro_rho: CMat::zeros(dim, dim),
            cesaro_rho_hat: CMat::zeros(dim, dim),
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Materialize the current instant as a `PairState`.
    pub fn state(&self) -> PairState {
        PairState {
            rho: DensityMatrix::from_psd_unchecked(&self.rho),
            rho_hat: DensityMatrix::from_psd_unchecked(&self.rho_hat),
            propagator: self.p.clone(),
            log_norm: self.log_norm,
            jump_counts: self.jump_counts.clone(),
            time: self.time,
        }
    }

    /// Running time integrals of the two states, normalized to Cesaro means.
    /// At t = 0 the means are the initial states by convention.
    pub fn cesaro_means(&self) -> (DensityMatrix, DensityMatrix) {
        if self.time > 0.0 {
            let inv = 1.0 / self.time;
            (
                DensityMatrix::from_psd_unchecked(&self.cesaro_rho.scale(inv)),
                DensityMatrix::from_psd_unchecked(&self.cesaro_rho_hat.scale(inv)),
            )
        } else {
            (
                DensityMatrix::from_psd_unchecked(&self.rho0),
                DensityMatrix::from_psd_unchecked(&self.rho_hat0),
            )
        }
    }

    /// One Euler step of the propagator equation, then state recovery by
    /// congruence. At most one jump fires per channel per step.
    pub fn advance(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let dt = self.dt;
        let physical = matches!(self.mode, Mode::Physical);

        for i in 0..self.l_ops.len() {
            self.drifts[i] = if physical {
                trace_prod_re(&self.l_herm[i], &self.rho)
            } else {
                0.0
            };
        }
        // Draw order is fixed: diffusive channels in index order, then jump
        // channels, every step, so streams are scheduling-independent.
        for i in 0..self.l_ops.len() {
            let z: f64 = rng.sample(StandardNormal);
            self.dw[i] = self.sqrt_dt * z + self.drifts[i] * dt;
        }
        for j in 0..self.c_minus_id.len() {
            let intensity = if physical {
                trace_prod_re(&self.c_gram[j], &self.rho).max(0.0)
            } else {
                1.0
            };
            if intensity * dt > self.max_jump_prob {
                return Err(Error::StepSizeTooLarge {
                    time: self.time,
                    intensity,
                    cap: self.max_jump_prob,
                });
            }
            let u: f64 = rng.random();
            self.jumped[j] = u < 1.0 - (-intensity * dt).exp();
        }

        self.t_buf.copy_from(&self.ident_keff_dt);
        for i in 0..self.l_ops.len() {
            let w = c(self.dw[i], 0.0);
            let l = &self.l_ops[i];
            for r in 0..self.dim {
                for s in 0..self.dim {
                    self.t_buf[(r, s)] += l[(r, s)] * w;
                }
            }
        }
        for j in 0..self.c_minus_id.len() {
            if self.jumped[j] {
                let cj = &self.c_minus_id[j];
                for r in 0..self.dim {
                    for s in 0..self.dim {
                        self.t_buf[(r, s)] += cj[(r, s)];
                    }
                }
            }
        }

        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        self.p_next.gemm(one, &self.t_buf, &self.p, zero);
        std::mem::swap(&mut self.p, &mut self.p_next);
        self.step_index += 1;
        self.time = self.step_index as f64 * dt;

        if self.step_index % self.renorm_every == 0 {
            let nrm = self.p.norm();
            if !(nrm.is_finite() && nrm > 0.0) {
                return Err(Error::TrajectoryDeath { time: self.time });
            }
            self.log_norm += nrm.ln();
            self.p.unscale_mut(nrm);
        }
        conj_transpose_into(&self.p, &mut self.p_adj);

        for j in 0..self.jumped.len() {
            if self.jumped[j] {
                self.jump_counts[j] += 1;
                self.jump_times[j].push(self.time);
            }
        }

        if physical {
            self.rho_prev.copy_from(&self.rho);
            let tau = self.congruence_trace(true)?;
            self.normalize_congruence(tau, true);
            let tau_hat = self.congruence_trace(false)?;
            self.normalize_congruence(tau_hat, false);
            // trapezoidal running integrals for the Cesaro means; the
            // pre-step estimated state sits in `cong` after the swap above
            let w = c(0.5 * dt, 0.0);
            for r in 0..self.dim {
                for s in 0..self.dim {
                    self.cesaro_rho[(r, s)] += (self.rho_prev[(r, s)] + self.rho[(r, s)]) * w;
                    self.cesaro_rho_hat[(r, s)] +=
                        (self.cong[(r, s)] + self.rho_hat[(r, s)]) * w;
                }
            }
        }
        Ok(())
    }

    /// P rho_init P* into the `cong` buffer; returns its trace and checks
    /// the total weight against the death threshold.
    fn congruence_trace(&mut self, true_state: bool) -> Result<f64> {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        let init = if true_state { &self.rho0 } else { &self.rho_hat0 };
        self.work.gemm(one, &self.p, init, zero);
        self.cong.gemm(one, &self.work, &self.p_adj, zero);
        let tau = trace_re(&self.cong);
        if !tau.is_finite() || tau <= 0.0 || 2.0 * self.log_norm + tau.ln() <= DEATH_LOG_THRESHOLD
        {
            return Err(Error::TrajectoryDeath { time: self.time });
        }
        Ok(tau)
    }

    /// Overwrite rho (or rho_hat) with the symmetrized, trace-normalized
    /// congruence sitting in `cong`. For the estimated state the previous
    /// value is left parked in `cong` for the trapezoid rule.
    fn normalize_congruence(&mut self, tau: f64, true_state: bool) {
        let inv = 1.0 / tau;
        let n = self.dim;
        if true_state {
            for i in 0..n {
                for j in i..n {
                    let v = (self.cong[(i, j)] + self.cong[(j, i)].conj()) * c(0.5 * inv, 0.0);
                    self.rho[(i, j)] = v;
                    self.rho[(j, i)] = v.conj();
                }
            }
        } else {
            std::mem::swap(&mut self.rho_hat, &mut self.cong);
            // after the swap rho_hat holds the raw congruence, cong the
            // previous estimated state
            for i in 0..n {
                for j in i..n {
                    let v =
                        (self.rho_hat[(i, j)] + self.rho_hat[(j, i)].conj()) * c(0.5 * inv, 0.0);
                    self.rho_hat[(i, j)] = v;
                    self.rho_hat[(j, i)] = v.conj();
                }
            }
        }
    }

    /// Z^rho = tr(S*S rho) with S = e^{log_norm} P.
    pub fn likelihood(&mut self, rho: &CMat) -> f64 {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        self.work.gemm(one, &self.p_adj, &self.p, zero);
        let g = trace_prod_re(&self.work, rho);
        (2.0 * self.log_norm + g.max(f64::MIN_POSITIVE).ln()).exp()
    }

    fn take_jump_times(&mut self) -> Vec<Vec<f64>> {
        std::mem::take(&mut self.jump_times)
    }
}

/// Per-trajectory record: time series at the requested sample times plus
/// running Cesaro means and jump bookkeeping.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub sample_times: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub fidelity_via_gram: Vec<f64>,
    /// Enclosure weights per sample time; rows are empty when no dual
    /// projectors were supplied.
    pub q_rho: Vec<Vec<f64>>,
    pub q_rho_hat: Vec<Vec<f64>>,
    pub rho: Vec<DensityMatrix>,
    pub rho_hat: Vec<DensityMatrix>,
    pub cesaro_rho: Vec<DensityMatrix>,
    pub cesaro_rho_hat: Vec<DensityMatrix>,
    /// Trace distance between the two running Cesaro means.
    pub cesaro_distance: Vec<f64>,
    pub jump_counts: Vec<Vec<u64>>,
    pub jump_times: Vec<Vec<f64>>,
    pub final_state: PairState,
}

fn sample_schedule(sample_times: &[f64], cfg: &SimConfig) -> Result<(Vec<u64>, Vec<usize>)> {
    let n_steps = cfg.n_steps();
    if sample_times
        .iter()
        .any(|&t| !(t >= 0.0 && t <= cfg.horizon + 0.5 * cfg.dt))
    {
        return Err(Error::InvalidConfig {
            reason: "sample times must lie within [0, horizon]".into(),
        });
    }
    let steps: Vec<u64> = sample_times
        .iter()
        .map(|&t| ((t / cfg.dt).round() as u64).min(n_steps))
        .collect();
    let mut order: Vec<usize> = (0..sample_times.len()).collect();
    order.sort_by_key(|&i| steps[i]);
    Ok((steps, order))
}

/// Simulate the coupled pair under the physical measure of the true state,
/// both filters driven by the single realized record.
pub fn simulate_pair(
    spec: &ModelSpec,
    rho0: &DensityMatrix,
    rho_hat0: &DensityMatrix,
    dual_projectors: Option<&[HermitianMatrix]>,
    sample_times: &[f64],
    cfg: &SimConfig,
    trajectory_index: u64,
) -> Result<PathRecord> {
    let inclusion = kernel_inclusion(rho_hat0, rho0, 1e-10)?;
    if !inclusion.holds {
        let v = inclusion.violation.unwrap();
        let overlap = (v.adjoint() * rho0.matrix() * &v)[(0, 0)].re;
        return Err(Error::KernelInclusion {
            overlap,
            eigenvector: v.iter().copied().collect(),
        });
    }
    let (sample_steps, order) = sample_schedule(sample_times, cfg)?;
    let n_steps = cfg.n_steps();
    let mut stepper = Stepper::new(spec, rho0, rho_hat0, cfg)?;
    let mut rng = trajectory_rng(cfg.seed, trajectory_index);
    let projectors = dual_projectors.unwrap_or(&[]);

    let n_samples = sample_times.len();
    let mut record = PathRecord {
        sample_times: sample_times.to_vec(),
        fidelity: vec![0.0; n_samples],
        fidelity_via_gram: vec![0.0; n_samples],
        q_rho: vec![Vec::new(); n_samples],
        q_rho_hat: vec![Vec::new(); n_samples],
        rho: Vec::with_capacity(n_samples),
        rho_hat: Vec::with_capacity(n_samples),
        cesaro_rho: Vec::with_capacity(n_samples),
        cesaro_rho_hat: Vec::with_capacity(n_samples),
        cesaro_distance: vec![0.0; n_samples],
        jump_counts: vec![Vec::new(); n_samples],
        jump_times: Vec::new(),
        final_state: PairState {
            rho: rho0.clone(),
            rho_hat: rho_hat0.clone(),
            propagator: identity(spec.dim()),
            log_norm: 0.0,
            jump_counts: vec![0; spec.n_jump()],
            time: 0.0,
        },
    };
    // placeholder slots so samples can be written in caller order
    for _ in 0..n_samples {
        record.rho.push(rho0.clone());
        record.rho_hat.push(rho_hat0.clone());
        record.cesaro_rho.push(rho0.clone());
        record.cesaro_rho_hat.push(rho_hat0.clone());
    }

    let mut next = 0;
    for step_idx in 0..=n_steps {
        while next < n_samples && sample_steps[order[next]] == step_idx {
            let slot = order[next];
            write_sample(&mut stepper, rho0, rho_hat0, projectors, &mut record, slot)?;
            next += 1;
        }
        if step_idx == n_steps {
            break;
        }
        stepper.advance(&mut rng)?;
    }
    debug_assert_eq!(next, n_samples);

    record.jump_times = stepper.take_jump_times();
    record.final_state = stepper.state();
    Ok(record)
}

fn write_sample(
    stepper: &mut Stepper,
    rho0: &DensityMatrix,
    rho_hat0: &DensityMatrix,
    projectors: &[HermitianMatrix],
    record: &mut PathRecord,
    slot: usize,
) -> Result<()> {
    let state = stepper.state();
    record.fidelity[slot] = fidelity(&state.rho, &state.rho_hat)?;
    record.fidelity_via_gram[slot] = fidelity_from_gram(&state, rho0, rho_hat0)?;
    record.q_rho[slot] = enclosure_weights(state.rho.matrix(), projectors);
    record.q_rho_hat[slot] = enclosure_weights(state.rho_hat.matrix(), projectors);
    let (ces_rho, ces_hat) = stepper.cesaro_means();
    record.cesaro_distance[slot] =
        crate::linalg::trace_distance(ces_rho.matrix(), ces_hat.matrix())?;
    record.cesaro_rho[slot] = ces_rho;
    record.cesaro_rho_hat[slot] = ces_hat;
    record.rho[slot] = state.rho.clone();
    record.rho_hat[slot] = state.rho_hat.clone();
    record.jump_counts[slot] = state.jump_counts.clone();
    Ok(())
}

/// Likelihood series under the reference measure.
#[derive(Debug, Clone)]
pub struct ReferenceRecord {
    pub sample_times: Vec<f64>,
    /// z[state_index][sample_index] = tr(S*S rho_i) at that sample time.
    pub z: Vec<Vec<f64>>,
}

/// Simulate the propagator under the reference measure (driftless Wiener
/// increments, unit-rate jumps) and record the likelihood Z^rho for each
/// given state. Z_0 = 1 and Z stays nonnegative pathwise.
pub fn simulate_reference(
    spec: &ModelSpec,
    states: &[DensityMatrix],
    sample_times: &[f64],
    cfg: &SimConfig,
    trajectory_index: u64,
) -> Result<ReferenceRecord> {
    let (sample_steps, order) = sample_schedule(sample_times, cfg)?;
    let n_steps = cfg.n_steps();
    let mut stepper = Stepper::new_reference(spec, cfg)?;
    let mut rng = trajectory_rng(cfg.seed, trajectory_index);

    let mut z = vec![vec![0.0; sample_times.len()]; states.len()];
    let mut next = 0;
    for step_idx in 0..=n_steps {
        while next < order.len() && sample_steps[order[next]] == step_idx {
            let slot = order[next];
            for (si, rho) in states.iter().enumerate() {
                z[si][slot] = stepper.likelihood(rho.matrix());
            }
            next += 1;
        }
        if step_idx == n_steps {
            break;
        }
        stepper.advance(&mut rng)?;
    }
    Ok(ReferenceRecord {
        sample_times: sample_times.to_vec(),
        z,
    })
}
