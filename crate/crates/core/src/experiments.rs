//! Monte Carlo ensembles probing the long-time behavior of the coupled
//! filter pair: fidelity convergence, likelihood and enclosure-weight
//! martingales, the selection law, Cesaro-mean agreement, and consistency
//! of the ensemble mean with the master equation.
//!
//! Trajectories are embarrassingly parallel; aggregation always runs in
//! ascending trajectory-index order so results are bit-identical for any
//! worker count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{kernel_inclusion, trace_distance, CMat, DensityMatrix, HermitianMatrix};
use crate::model::{evolve_master, ModelSpec};
use crate::sde::{simulate_pair, simulate_reference, trace_prod_re, PathRecord, SimConfig};
use crate::structure::StructureReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Fidelity,
    Martingales,
    Gamma,
    Cesaro,
    MasterEq,
    Reference,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Fidelity => "fidelity",
            Self::Martingales => "martingales",
            Self::Gamma => "gamma",
            Self::Cesaro => "cesaro",
            Self::MasterEq => "master_eq",
            Self::Reference => "reference",
        }
    }

    /// Whether the experiment needs the enclosure decomposition.
    pub fn needs_structure(&self) -> bool {
        matches!(self, Self::Martingales | Self::Gamma | Self::Cesaro)
    }
}

/// Calibrated convergence thresholds. The limit theorems are rate-free;
/// these bounds are artifact calibration, kept in configuration rather than
/// in code.
#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    /// Bound on the median Cesaro trace distance at the final sample time.
    pub cesaro_median: f64,
    /// Bound on the mean of max_{u!=v} Q_u(T) Q_v(T).
    pub q_product: f64,
    /// Width of statistical acceptance bands, in standard errors.
    pub sigmas: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            cesaro_median: 0.1,
            q_product: 0.02,
            sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub rho0: DensityMatrix,
    pub rho_hat0: DensityMatrix,
    pub n_traj: usize,
    pub sim: SimConfig,
    pub sample_times: Vec<f64>,
    pub kind: ExperimentKind,
    /// A trajectory is classified once its largest enclosure weight exceeds
    /// this threshold; otherwise it counts as unresolved.
    pub gamma_threshold: f64,
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.n_traj == 0 {
            return Err(Error::InvalidConfig {
                reason: "n_traj must be positive".into(),
            });
        }
        if self.sample_times.is_empty() {
            return Err(Error::InvalidConfig {
                reason: "at least one sample time is required".into(),
            });
        }
        if self
            .sample_times
            .windows(2)
            .any(|w| w[1] < w[0])
        {
            return Err(Error::InvalidConfig {
                reason: "sample times must be ascending".into(),
            });
        }
        if self
            .sample_times
            .iter()
            .any(|&t| t < 0.0 || t > self.sim.horizon + 0.5 * self.sim.dt)
        {
            return Err(Error::InvalidConfig {
                reason: "sample times must lie within [0, horizon]".into(),
            });
        }
        if !(self.gamma_threshold > 0.5 && self.gamma_threshold < 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "gamma_threshold must lie in (0.5, 1), got {}",
                    self.gamma_threshold
                ),
            });
        }
        let inclusion = kernel_inclusion(&self.rho_hat0, &self.rho0, 1e-10)?;
        if !inclusion.holds {
            let v = inclusion.violation.unwrap();
            let overlap = (v.adjoint() * self.rho0.matrix() * &v)[(0, 0)].re;
            return Err(Error::KernelInclusion {
                overlap,
                eigenvector: v.iter().copied().collect(),
            });
        }
        Ok(())
    }
}

/// Mean and standard error per sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStat {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

/// One named acceptance statistic: passes when value <= bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    /// Whether the underlying limit theorem's hypotheses were verified for
    /// this model; unchecked assertions are exploratory only.
    pub theorem_backed: bool,
}

impl Assertion {
    fn new(name: impl Into<String>, value: f64, bound: f64, theorem_backed: bool) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            pass: value <= bound,
            theorem_backed,
        }
    }
}

/// Empirical selection law at the horizon.
#[derive(Debug, Clone)]
pub struct GammaLaw {
    /// Trajectories classified into each enclosure.
    pub counts: Vec<usize>,
    pub unresolved: usize,
    /// Initial enclosure weights tr(M_i rho_0): the predicted law.
    pub initial_weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CesaroStats {
    pub median_distance: Vec<f64>,
    pub p90_distance: Vec<f64>,
    /// Distance of the running Cesaro mean of the true filter to the
    /// invariant mixture weighted by its final enclosure weights.
    pub median_dist_to_mixture_rho: Vec<f64>,
    pub median_dist_to_mixture_rho_hat: Vec<f64>,
    /// Fraction of trajectories, among those resolved for both filters,
    /// whose selections agree.
    pub gamma_agreement: Option<f64>,
    pub resolved_both: usize,
    /// Final Cesaro means per trajectory, in trajectory order.
    pub final_cesaro_rho: Vec<CMat>,
    pub final_cesaro_rho_hat: Vec<CMat>,
}

/// Ensemble mean of the state against the master-equation propagation.
#[derive(Debug, Clone)]
pub struct MasterEqStats {
    pub mean: Vec<CMat>,
    /// Entrywise standard error of the complex mean.
    pub se: Vec<DMatrix<f64>>,
    pub exact: Vec<CMat>,
    /// Per sample time: max over entries of |mean - exact| / max(sigmas*SE, 5*dt).
    pub max_violation_ratio: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunMetadata {
    pub seed: u64,
    pub n_traj: usize,
    pub failed_trajectories: usize,
    pub workers: usize,
    pub wall_time_s: f64,
    pub theorem_backed: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloSummary {
    pub kind: ExperimentKind,
    pub sample_times: Vec<f64>,
    pub fidelity: Option<SeriesStat>,
    /// Per-time maximum of |F_direct - F_via_gram| over the ensemble.
    pub fidelity_gap: Option<Vec<f64>>,
    pub q_rho: Vec<SeriesStat>,
    pub q_rho_hat: Vec<SeriesStat>,
    /// Per-time ensemble mean of max_{u!=v} Q_u Q_v for the true filter.
    pub q_product_mean: Option<Vec<f64>>,
    /// Likelihood statistics per tracked initial state (reference runs).
    pub z: Vec<SeriesStat>,
    pub master_eq: Option<MasterEqStats>,
    pub gamma: Option<GammaLaw>,
    pub cesaro: Option<CesaroStats>,
    pub assertions: Vec<Assertion>,
    pub metadata: RunMetadata,
}

impl MonteCarloSummary {
    fn empty(kind: ExperimentKind, cfg: &ExperimentConfig, workers: usize) -> Self {
        Self {
            kind,
            sample_times: cfg.sample_times.clone(),
            fidelity: None,
            fidelity_gap: None,
            q_rho: Vec::new(),
            q_rho_hat: Vec::new(),
            q_product_mean: None,
            z: Vec::new(),
            master_eq: None,
            gamma: None,
            cesaro: None,
            assertions: Vec::new(),
            metadata: RunMetadata {
                seed: cfg.sim.seed,
                n_traj: cfg.n_traj,
                failed_trajectories: 0,
                workers,
                wall_time_s: 0.0,
                theorem_backed: true,
                notes: Vec::new(),
            },
        }
    }

    pub fn failed_assertions(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| !a.pass)
    }

    /// First failed assertion whose theorem hypotheses were verified.
    pub fn failed_theorem_assertion(&self) -> Option<&Assertion> {
        self.assertions
            .iter()
            .find(|a| !a.pass && a.theorem_backed)
    }
}

/// Run a closure on a dedicated thread pool with the given worker count
/// (0 = rayon's default). Results do not depend on the worker count.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool construction")
            .install(f)
    }
}

/// Run `n_traj` independent trajectories in parallel and collect results in
/// index order. More than 1% failures aborts: silently dropping failed
/// paths would bias the martingale statistics.
fn run_ensemble<T: Send>(
    n_traj: usize,
    job: impl Fn(u64) -> Result<T> + Sync,
) -> Result<(Vec<T>, usize)> {
    let raw: Vec<Result<T>> = (0..n_traj as u64).into_par_iter().map(&job).collect();
    let mut out = Vec::with_capacity(n_traj);
    let mut failed = 0usize;
    let mut first_failure: Option<String> = None;
    for r in raw {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed * 100 > n_traj {
        return Err(Error::TooManyFailures {
            failed,
            total: n_traj,
            first: first_failure.unwrap_or_default(),
        });
    }
    Ok((out, failed))
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / ((n - 1) as f64 * n as f64)).sqrt())
}

fn series_stat(records: &[PathRecord], extract: impl Fn(&PathRecord, usize) -> f64) -> SeriesStat {
    let n_times = records.first().map_or(0, |r| r.sample_times.len());
    let mut mean = Vec::with_capacity(n_times);
    let mut se = Vec::with_capacity(n_times);
    let mut buf = Vec::with_capacity(records.len());
    for t in 0..n_times {
        buf.clear();
        buf.extend(records.iter().map(|r| extract(r, t)));
        let (m, s) = mean_se(&buf);
        mean.push(m);
        se.push(s);
    }
    SeriesStat { mean, se }
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn percentile_of(mut values: Vec<f64>, p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
    values[idx]
}

/// Enclosure structure needed by the martingale, selection and Cesaro runs.
struct EnclosureData {
    duals: Vec<HermitianMatrix>,
    states: Vec<DensityMatrix>,
    theorem_backed: bool,
    notes: Vec<String>,
}

fn enclosure_data(
    cfg: &ExperimentConfig,
    report: Option<&StructureReport>,
) -> Result<EnclosureData> {
    let mut notes = Vec::new();
    let (duals, states, identifiable, spectral_ok) = match report {
        Some(r) => (
            r.dual_projectors.clone(),
            r.invariant_states.clone(),
            r.identifiable,
            r.spectral_ok,
        ),
        None => {
            let dec = crate::structure::minimal_enclosures(&cfg.model)?;
            let duals = crate::structure::dual_projectors(&cfg.model, &dec.states)?;
            let spectrum = crate::structure::liouvillian_spectrum(&cfg.model);
            let spectral_ok =
                crate::structure::check_spectral(&spectrum, crate::structure::SPECTRAL_TOL);
            let (identifiable, _) = crate::structure::check_identifiability(
                &cfg.model,
                &dec.states,
                crate::structure::IDENTIFIABILITY_TOL,
            );
            (duals, dec.states, identifiable, spectral_ok)
        }
    };
    let theorem_backed = identifiable && spectral_ok;
    if !theorem_backed {
        notes.push(
            "identifiability or spectral hypotheses unverified: results are exploratory".into(),
        );
    }
    Ok(EnclosureData {
        duals,
        states,
        theorem_backed,
        notes,
    })
}

/// Classify a trajectory by its dominant enclosure weight at the horizon.
fn classify(q_final: &[f64], threshold: f64) -> Option<usize> {
    let mut best = 0;
    for i in 1..q_final.len() {
        if q_final[i] > q_final[best] {
            best = i;
        }
    }
    (q_final[best] > threshold).then_some(best)
}

fn max_pair_product(q: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for u in 0..q.len() {
        for v in (u + 1)..q.len() {
            worst = worst.max(q[u] * q[v]);
        }
    }
    worst
}

/// Dispatch on the configured experiment kind.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    report: Option<&StructureReport>,
    workers: usize,
) -> Result<MonteCarloSummary> {
    match cfg.kind {
        ExperimentKind::Fidelity => run_fidelity(cfg, workers),
        ExperimentKind::Martingales | ExperimentKind::Reference => {
            run_martingales(cfg, report, workers)
        }
        ExperimentKind::Gamma => run_gamma(cfg, report, workers),
        ExperimentKind::Cesaro => run_cesaro(cfg, report, workers),
        ExperimentKind::MasterEq => run_master_eq(cfg, workers),
    }
}

/// Fidelity between the two filters across the ensemble, with the pathwise
/// identity between the direct and Gram-operator evaluations.
pub fn run_fidelity(cfg: &ExperimentConfig, workers: usize) -> Result<MonteCarloSummary> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let (records, failed) = with_workers(workers, || {
        run_ensemble(cfg.n_traj, |idx| {
            simulate_pair(
                &cfg.model,
                &cfg.rho0,
                &cfg.rho_hat0,
                None,
                &cfg.sample_times,
                &cfg.sim,
                idx,
            )
        })
    })?;

    let fidelity = series_stat(&records, |r, t| r.fidelity[t]);
    let n_times = cfg.sample_times.len();
    let gap: Vec<f64> = (0..n_times)
        .map(|t| {
            records
                .iter()
                .map(|r| (r.fidelity[t] - r.fidelity_via_gram[t]).abs())
                .fold(0.0, f64::max)
        })
        .collect();

    let mut assertions = Vec::new();
    assertions.push(Assertion::new(
        "dual_fidelity_identity",
        gap.iter().cloned().fold(0.0, f64::max),
        1e-8,
        true,
    ));
    assertions.push(nondecreasing_assertion(
        "fidelity_mean_nondecreasing",
        &records,
        |r, t| r.fidelity[t],
        cfg.tolerances.sigmas,
    ));

    let mut summary = MonteCarloSummary::empty(ExperimentKind::Fidelity, cfg, workers);
    summary.fidelity = Some(fidelity);
    summary.fidelity_gap = Some(gap);
    summary.assertions = assertions;
    summary.metadata.failed_trajectories = failed;
    summary.metadata.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

/// Mean of a pathwise series must not decrease between consecutive sample
/// times, within `sigmas` standard errors of the paired differences.
fn nondecreasing_assertion(
    name: &str,
    records: &[PathRecord],
    extract: impl Fn(&PathRecord, usize) -> f64,
    sigmas: f64,
) -> Assertion {
    let n_times = records.first().map_or(0, |r| r.sample_times.len());
    let mut worst = f64::NEG_INFINITY;
    for t in 0..n_times.saturating_sub(1) {
        let diffs: Vec<f64> = records
            .iter()
            .map(|r| extract(r, t + 1) - extract(r, t))
            .collect();
        let (mean, se) = mean_se(&diffs);
        // decrease beyond the band is a violation
        worst = worst.max(-(mean + sigmas * se.max(1e-12)));
    }
    if worst == f64::NEG_INFINITY {
        worst = 0.0;
    }
    Assertion::new(name, worst, 0.0, true)
}

/// Martingale diagnostics: under the physical measure the enclosure weights
/// stay at their initial values in mean; under the reference measure the
/// likelihood stays at one.
pub fn run_martingales(
    cfg: &ExperimentConfig,
    report: Option<&StructureReport>,
    workers: usize,
) -> Result<MonteCarloSummary> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    if cfg.kind == ExperimentKind::Reference {
        let states = [cfg.rho0.clone(), cfg.rho_hat0.clone()];
        let (records, failed) = with_workers(workers, || {
            run_ensemble(cfg.n_traj, |idx| {
                simulate_reference(&cfg.model, &states, &cfg.sample_times, &cfg.sim, idx)
            })
        })?;
        let n_times = cfg.sample_times.len();
        let mut z_stats = Vec::new();
        let mut assertions = Vec::new();
        for (si, label) in ["rho", "rho_hat"].iter().enumerate() {
            let mut mean = Vec::with_capacity(n_times);
            let mut se = Vec::with_capacity(n_times);
            let mut worst = 0.0_f64;
            for t in 0..n_times {
                let vals: Vec<f64> = records.iter().map(|r| r.z[si][t]).collect();
                let (m, s) = mean_se(&vals);
                mean.push(m);
                se.push(s);
                worst = worst.max((m - 1.0).abs() / s.max(1e-12));
            }
            z_stats.push(SeriesStat { mean, se });
            assertions.push(Assertion::new(
                format!("z_martingale_{label}"),
                worst,
                cfg.tolerances.sigmas,
                true,
            ));
        }
        let mut summary = MonteCarloSummary::empty(ExperimentKind::Reference, cfg, workers);
        summary.z = z_stats;
        summary.assertions = assertions;
        summary.metadata.failed_trajectories = failed;
        summary.metadata.wall_time_s = start.elapsed().as_secs_f64();
        return Ok(summary);
    }

    let enclosure = enclosure_data(cfg, report)?;
    let (records, failed) = with_workers(workers, || {
        run_ensemble(cfg.n_traj, |idx| {
            simulate_pair(
                &cfg.model,
                &cfg.rho0,
                &cfg.rho_hat0,
                Some(&enclosure.duals),
                &cfg.sample_times,
                &cfg.sim,
                idx,
            )
        })
    })?;

    let n_enc = enclosure.duals.len();
    let q0: Vec<f64> = enclosure
        .duals
        .iter()
        .map(|m| trace_prod_re(m.matrix(), cfg.rho0.matrix()))
        .collect();
    let mut q_rho = Vec::with_capacity(n_enc);
    let mut q_rho_hat = Vec::with_capacity(n_enc);
    let mut assertions = Vec::new();
    for i in 0..n_enc {
        let stat = series_stat(&records, |r, t| r.q_rho[t][i]);
        let worst = stat
            .mean
            .iter()
            .zip(stat.se.iter())
            .map(|(m, s)| (m - q0[i]).abs() / s.max(1e-12))
            .fold(0.0, f64::max);
        assertions.push(Assertion::new(
            format!("q_martingale_{i}"),
            worst,
            cfg.tolerances.sigmas,
            true,
        ));
        q_rho.push(stat);
        q_rho_hat.push(series_stat(&records, |r, t| r.q_rho_hat[t][i]));
    }

    let mut summary = MonteCarloSummary::empty(ExperimentKind::Martingales, cfg, workers);
    summary.q_rho = q_rho;
    summary.q_rho_hat = q_rho_hat;
    summary.assertions = assertions;
    summary.metadata.failed_trajectories = failed;
    summary.metadata.theorem_backed = enclosure.theorem_backed;
    summary.metadata.notes = enclosure.notes;
    summary.metadata.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

/// The selection law: each trajectory's enclosure weights collapse onto one
/// enclosure, picked with probability equal to the initial weight.
pub fn run_gamma(
    cfg: &ExperimentConfig,
    report: Option<&StructureReport>,
    workers: usize,
) -> Result<MonteCarloSummary> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let enclosure = enclosure_data(cfg, report)?;
    let (records, failed) = with_workers(workers, || {
        run_ensemble(cfg.n_traj, |idx| {
            simulate_pair(
                &cfg.model,
                &cfg.rho0,
                &cfg.rho_hat0,
                Some(&enclosure.duals),
                &cfg.sample_times,
                &cfg.sim,
                idx,
            )
        })
    })?;

    let n_enc = enclosure.duals.len();
    let n_times = cfg.sample_times.len();
    let last = n_times - 1;
    let q0: Vec<f64> = enclosure
        .duals
        .iter()
        .map(|m| trace_prod_re(m.matrix(), cfg.rho0.matrix()))
        .collect();

    let mut counts = vec![0usize; n_enc];
    let mut unresolved = 0usize;
    for r in &records {
        match classify(&r.q_rho[last], cfg.gamma_threshold) {
            Some(i) => counts[i] += 1,
            None => unresolved += 1,
        }
    }

    let q_product: Vec<f64> = (0..n_times)
        .map(|t| {
            records
                .iter()
                .map(|r| max_pair_product(&r.q_rho[t]))
                .sum::<f64>()
                / records.len() as f64
        })
        .collect();

    let n = records.len() as f64;
    let mut assertions = Vec::new();
    for i in 0..n_enc {
        let empirical = counts[i] as f64 / n;
        let band = cfg.tolerances.sigmas * (q0[i] * (1.0 - q0[i]) / n).sqrt();
        assertions.push(Assertion::new(
            format!("gamma_law_{i}"),
            (empirical - q0[i]).abs(),
            band.max(1e-12),
            enclosure.theorem_backed,
        ));
    }
    assertions.push(Assertion::new(
        "q_product",
        q_product[last],
        cfg.tolerances.q_product,
        enclosure.theorem_backed,
    ));

    let mut notes = enclosure.notes;
    let unresolved_fraction = unresolved as f64 / n;
    if unresolved_fraction > 0.1 {
        notes.push(format!(
            "horizon too short: {:.1}% of trajectories unresolved at the final sample time",
            100.0 * unresolved_fraction
        ));
    }

    let mut summary = MonteCarloSummary::empty(ExperimentKind::Gamma, cfg, workers);
    summary.q_rho = (0..n_enc)
        .map(|i| series_stat(&records, |r, t| r.q_rho[t][i]))
        .collect();
    summary.q_rho_hat = (0..n_enc)
        .map(|i| series_stat(&records, |r, t| r.q_rho_hat[t][i]))
        .collect();
    summary.q_product_mean = Some(q_product);
    summary.gamma = Some(GammaLaw {
        counts,
        unresolved,
        initial_weights: q0,
    });
    summary.assertions = assertions;
    summary.metadata.failed_trajectories = failed;
    summary.metadata.theorem_backed = enclosure.theorem_backed;
    summary.metadata.notes = notes;
    summary.metadata.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

/// Agreement of the two running Cesaro means, their distance to the
/// invariant mixture selected at the horizon, and the consistency of the
/// selections read off either filter.
pub fn run_cesaro(
    cfg: &ExperimentConfig,
    report: Option<&StructureReport>,
    workers: usize,
) -> Result<MonteCarloSummary> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let enclosure = enclosure_data(cfg, report)?;
    let (records, failed) = with_workers(workers, || {
        run_ensemble(cfg.n_traj, |idx| {
            simulate_pair(
                &cfg.model,
                &cfg.rho0,
                &cfg.rho_hat0,
                Some(&enclosure.duals),
                &cfg.sample_times,
                &cfg.sim,
                idx,
            )
        })
    })?;

    let n_times = cfg.sample_times.len();
    let last = n_times - 1;
    let dim = cfg.model.dim();

    let mixture = |weights: &[f64]| -> CMat {
        let mut m = CMat::zeros(dim, dim);
        for (w, state) in weights.iter().zip(enclosure.states.iter()) {
            m += state.matrix().scale(*w);
        }
        m
    };

    let mut median_distance = Vec::with_capacity(n_times);
    let mut p90_distance = Vec::with_capacity(n_times);
    let mut med_mix_rho = Vec::with_capacity(n_times);
    let mut med_mix_hat = Vec::with_capacity(n_times);
    for t in 0..n_times {
        let d: Vec<f64> = records.iter().map(|r| r.cesaro_distance[t]).collect();
        median_distance.push(median_of(d.clone()));
        p90_distance.push(percentile_of(d, 0.9));
        let dr: Result<Vec<f64>> = records
            .iter()
            .map(|r| trace_distance(r.cesaro_rho[t].matrix(), &mixture(&r.q_rho[last])))
            .collect();
        med_mix_rho.push(median_of(dr?));
        let dh: Result<Vec<f64>> = records
            .iter()
            .map(|r| trace_distance(r.cesaro_rho_hat[t].matrix(), &mixture(&r.q_rho_hat[last])))
            .collect();
        med_mix_hat.push(median_of(dh?));
    }

    let mut resolved_both = 0usize;
    let mut agree = 0usize;
    for r in &records {
        let g_rho = classify(&r.q_rho[last], cfg.gamma_threshold);
        let g_hat = classify(&r.q_rho_hat[last], cfg.gamma_threshold);
        if let (Some(a), Some(b)) = (g_rho, g_hat) {
            resolved_both += 1;
            if a == b {
                agree += 1;
            }
        }
    }
    let gamma_agreement = (resolved_both > 0).then(|| agree as f64 / resolved_both as f64);

    let mut assertions = Vec::new();
    assertions.push(Assertion::new(
        "cesaro_median_final",
        median_distance[last],
        cfg.tolerances.cesaro_median,
        enclosure.theorem_backed,
    ));
    let worst_increase = median_distance
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    assertions.push(Assertion::new(
        "cesaro_median_decreasing",
        if worst_increase == f64::NEG_INFINITY {
            0.0
        } else {
            worst_increase
        },
        0.0,
        enclosure.theorem_backed,
    ));
    if let Some(a) = gamma_agreement {
        assertions.push(Assertion::new(
            "gamma_agreement",
            1.0 - a,
            0.01,
            enclosure.theorem_backed,
        ));
    }

    let mut summary = MonteCarloSummary::empty(ExperimentKind::Cesaro, cfg, workers);
    summary.q_rho = (0..enclosure.duals.len())
        .map(|i| series_stat(&records, |r, t| r.q_rho[t][i]))
        .collect();
    summary.q_rho_hat = (0..enclosure.duals.len())
        .map(|i| series_stat(&records, |r, t| r.q_rho_hat[t][i]))
        .collect();
    summary.cesaro = Some(CesaroStats {
        median_distance,
        p90_distance,
        median_dist_to_mixture_rho: med_mix_rho,
        median_dist_to_mixture_rho_hat: med_mix_hat,
        gamma_agreement,
        resolved_both,
        final_cesaro_rho: records
            .iter()
            .map(|r| r.cesaro_rho[last].matrix().clone())
            .collect(),
        final_cesaro_rho_hat: records
            .iter()
            .map(|r| r.cesaro_rho_hat[last].matrix().clone())
            .collect(),
    });
    summary.assertions = assertions;
    summary.metadata.failed_trajectories = failed;
    summary.metadata.theorem_backed = enclosure.theorem_backed;
    summary.metadata.notes = enclosure.notes;
    summary.metadata.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

/// Ensemble mean of the true state against e^{tL}(rho_0), entrywise, with
/// tolerance max(sigmas*SE, 5*dt) per entry.
pub fn run_master_eq(cfg: &ExperimentConfig, workers: usize) -> Result<MonteCarloSummary> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let (records, failed) = with_workers(workers, || {
        run_ensemble(cfg.n_traj, |idx| {
            simulate_pair(
                &cfg.model,
                &cfg.rho0,
                &cfg.rho_hat0,
                None,
                &cfg.sample_times,
                &cfg.sim,
                idx,
            )
        })
    })?;

    let dim = cfg.model.dim();
    let n = records.len() as f64;
    let n_times = cfg.sample_times.len();
    let mut means = Vec::with_capacity(n_times);
    let mut ses = Vec::with_capacity(n_times);
    let mut exacts = Vec::with_capacity(n_times);
    let mut ratios = Vec::with_capacity(n_times);
    for t in 0..n_times {
        let mut mean = CMat::zeros(dim, dim);
        for r in &records {
            mean += r.rho[t].matrix();
        }
        mean.unscale_mut(n);
        let mut se = DMatrix::<f64>::zeros(dim, dim);
        for r in &records {
            for i in 0..dim {
                for j in 0..dim {
                    let d = r.rho[t].matrix()[(i, j)] - mean[(i, j)];
                    se[(i, j)] += d.norm_sqr();
                }
            }
        }
        let denom = if records.len() > 1 {
            (n - 1.0) * n
        } else {
            1.0
        };
        se.apply(|x| *x = (*x / denom).sqrt());

        let exact = evolve_master(&cfg.model, &cfg.rho0, cfg.sample_times[t])?;
        let mut worst = 0.0_f64;
        for i in 0..dim {
            for j in 0..dim {
                let err = (mean[(i, j)] - exact.matrix()[(i, j)]).norm();
                let tol = (cfg.tolerances.sigmas * se[(i, j)]).max(5.0 * cfg.sim.dt);
                worst = worst.max(err / tol);
            }
        }
        means.push(mean);
        ses.push(se);
        exacts.push(exact.into_matrix());
        ratios.push(worst);
    }

    let mut summary = MonteCarloSummary::empty(ExperimentKind::MasterEq, cfg, workers);
    summary.assertions = vec![Assertion::new(
        "master_eq_consistency",
        ratios.iter().cloned().fold(0.0, f64::max),
        1.0,
        true,
    )];
    summary.master_eq = Some(MasterEqStats {
        mean: means,
        se: ses,
        exact: exacts,
        max_violation_ratio: ratios,
    });
    summary.metadata.failed_trajectories = failed;
    summary.metadata.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}
