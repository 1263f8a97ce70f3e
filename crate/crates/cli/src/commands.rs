//! The three commands behind the binary: structure analysis, trajectory
//! dumps, and Monte Carlo experiments.
//!
//! Exit code contract: 0 success, 1 input error, 2 model or precondition
//! rejection, 3 theorem-backed assertion failure.

use std::path::{Path, PathBuf};

use qtraj_core::experiments::{run_experiment, MonteCarloSummary};
use qtraj_core::linalg::CMat;
use qtraj_core::sde::simulate_pair;
use qtraj_core::structure::{
    analyze, PurificationMcParams, PurificationMethod, StructureOptions, StructureReport,
};

use crate::config::{ConfigError, ConfigFile};
use crate::csv_out;
use crate::manifest::{ManifestAssertion, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Unparseable or malformed input: exit 1.
    Input,
    /// The model or a precondition was rejected: exit 2.
    Rejection,
    /// A theorem-backed assertion failed: exit 3.
    Assertion,
}

#[derive(Debug)]
pub struct CommandError {
    pub kind: FailureKind,
    pub message: String,
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Input => 1,
            FailureKind::Rejection => 2,
            FailureKind::Assertion => 3,
        }
    }
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        Self {
            kind: FailureKind::Input,
            message: e.message,
        }
    }
}

impl From<qtraj_core::Error> for CommandError {
    fn from(e: qtraj_core::Error) -> Self {
        let kind = match e {
            qtraj_core::Error::InvalidConfig { .. } => FailureKind::Input,
            _ => FailureKind::Rejection,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

fn io_error(e: std::io::Error, what: &str) -> CommandError {
    CommandError {
        kind: FailureKind::Input,
        message: format!("{what}: {e}"),
    }
}

fn structure_options(config: &ConfigFile) -> StructureOptions {
    StructureOptions {
        purification: PurificationMethod::Auto(PurificationMcParams {
            seed: config.sim.seed,
            ..PurificationMcParams::default()
        }),
        ..StructureOptions::default()
    }
}

fn matrix_block(m: &CMat, indent: &str) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        out.push_str(indent);
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            out.push_str(&format!("{:+.9e}{:+.9e}i  ", z.re, z.im));
        }
        out.push('\n');
    }
    out
}

/// Human-readable structure report.
pub fn render_report(config: &ConfigFile, report: &StructureReport) -> String {
    let mut out = String::new();
    out.push_str("structure report\n");
    out.push_str("================\n");
    out.push_str(&format!("config_hash: {}\n", config.hash()));
    out.push_str(&format!("dimension: {}\n", config.model.dim));
    out.push_str(&format!(
        "channels: {} diffusive, {} jump\n",
        config.model.diffusive.len(),
        config.model.jump.len()
    ));
    let decaying_dim = report
        .decaying_projector
        .diagonal()
        .iter()
        .map(|z| z.re)
        .sum::<f64>()
        .round() as usize;
    out.push_str(&format!("decaying_dimension: {decaying_dim}\n"));
    out.push_str(&format!("enclosures: {}\n", report.n_enclosures()));
    out.push_str(&format!("spectral_ok: {}\n", report.spectral_ok));
    out.push_str(&format!("identifiable: {}\n", report.identifiable));
    out.push_str(&format!("purification: {}\n", report.purification.verdict));
    if let Some(second) = report.purification.mc_second_eigenvalue {
        out.push_str(&format!(
            "purification_mc_second_eigenvalue: {second:.3e}\n"
        ));
    }
    if report.purification.algebraic_witness.is_some() {
        out.push_str("purification_witness: scalar-compression subspace found\n");
    }

    out.push_str("\nliouvillian spectrum\n");
    for z in &report.liouvillian_spectrum {
        out.push_str(&format!("  {:+.9e} {:+.9e}i\n", z.re, z.im));
    }

    for (i, state) in report.invariant_states.iter().enumerate() {
        out.push_str(&format!("\ninvariant state {i}\n"));
        out.push_str(&matrix_block(state.matrix(), "  "));
    }
    for (i, dual) in report.dual_projectors.iter().enumerate() {
        out.push_str(&format!("\ndual projector {i}\n"));
        out.push_str(&matrix_block(dual.matrix(), "  "));
    }

    out.push_str("\nidentifiability statistics (rows: invariant states)\n");
    out.push_str("  state");
    for name in &report.identifiability.channel_names {
        out.push_str(&format!("  {name:>14}"));
    }
    out.push('\n');
    for (i, row) in report.identifiability.statistics.iter().enumerate() {
        out.push_str(&format!("  {i:>5}"));
        for v in row {
            out.push_str(&format!("  {v:>+14.6e}"));
        }
        out.push('\n');
    }

    if report.warnings.is_empty() {
        out.push_str("\nwarnings: none\n");
    } else {
        out.push_str("\nwarnings\n");
        for w in &report.warnings {
            out.push_str(&format!("  - {w}\n"));
        }
    }
    out
}

/// `analyze <config>`: print the structure report to stdout.
pub fn cmd_analyze(config_path: &Path) -> Result<String, CommandError> {
    let config = ConfigFile::load(config_path)?;
    let spec = config.to_model_spec()?;
    let report = analyze(&spec, &structure_options(&config))?;
    Ok(render_report(&config, &report))
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub trajectories: Option<u64>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub combined: bool,
}

/// `simulate <config>`: write one CSV per trajectory (or one combined
/// long-format CSV) into the output directory.
pub fn cmd_simulate(
    config_path: &Path,
    opts: &SimulateOptions,
) -> Result<Vec<PathBuf>, CommandError> {
    let config = ConfigFile::load(config_path)?;
    let spec = config.to_model_spec()?;
    let (rho0, rho_hat0) = config.initial_states()?;
    let mut sim = config.to_sim_config();
    if let Some(seed) = opts.seed {
        sim.seed = seed;
    }
    let n_traj = opts
        .trajectories
        .or_else(|| config.experiment.as_ref().map(|e| e.n_traj as u64))
        .unwrap_or(1);
    let sample_times = config.sample_times();

    // enclosure weights are recorded when the model admits the analysis
    let duals = match qtraj_core::structure::minimal_enclosures(&spec)
        .and_then(|dec| qtraj_core::structure::dual_projectors(&spec, &dec.states))
    {
        Ok(duals) => Some(duals),
        Err(e) => {
            eprintln!("note: enclosure analysis unavailable ({e}); omitting weight columns");
            None
        }
    };

    std::fs::create_dir_all(&opts.out_dir)
        .map_err(|e| io_error(e, "cannot create output directory"))?;

    let mut records = Vec::with_capacity(n_traj as usize);
    for idx in 0..n_traj {
        records.push(simulate_pair(
            &spec,
            &rho0,
            &rho_hat0,
            duals.as_deref(),
            &sample_times,
            &sim,
            idx,
        )?);
    }

    let mut written = Vec::new();
    if opts.combined {
        let path = opts.out_dir.join("trajectories.csv");
        std::fs::write(&path, csv_out::combined_csv(&records, spec.n_jump()))
            .map_err(|e| io_error(e, "cannot write trajectories.csv"))?;
        written.push(path);
    } else {
        for (idx, record) in records.iter().enumerate() {
            let path = opts.out_dir.join(format!("trajectory_{idx:04}.csv"));
            std::fs::write(&path, csv_out::trajectory_csv(record, spec.n_jump()))
                .map_err(|e| io_error(e, "cannot write trajectory csv"))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// `experiment <config>`: run the configured Monte Carlo experiment, write
/// the summary CSV plus manifest, and fail with exit 3 when a
/// theorem-backed assertion does not hold.
pub fn cmd_experiment(
    config_path: &Path,
    out_dir: &Path,
    workers: usize,
) -> Result<(MonteCarloSummary, Vec<PathBuf>), CommandError> {
    let started = std::time::Instant::now();
    let config = ConfigFile::load(config_path)?;
    let experiment = config.to_experiment_config()?;
    experiment.validate()?;
    let summary = run_experiment(&experiment, None, workers)?;

    std::fs::create_dir_all(out_dir).map_err(|e| io_error(e, "cannot create output directory"))?;
    let mut artifacts = Vec::new();
    let summary_path = out_dir.join("summary.csv");
    std::fs::write(&summary_path, csv_out::summary_csv(&summary))
        .map_err(|e| io_error(e, "cannot write summary.csv"))?;
    artifacts.push("summary.csv".to_string());
    if let Some(gamma) = csv_out::gamma_law_csv(&summary) {
        let path = out_dir.join("gamma_law.csv");
        std::fs::write(&path, gamma).map_err(|e| io_error(e, "cannot write gamma_law.csv"))?;
        artifacts.push("gamma_law.csv".to_string());
    }

    let manifest = RunManifest {
        config_path: config_path.display().to_string(),
        config_hash: config.hash(),
        output_dir: out_dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: started.elapsed().as_secs_f64(),
        artifacts: artifacts.clone(),
        notes: summary.metadata.notes.clone(),
        assertions: summary
            .assertions
            .iter()
            .map(|a| ManifestAssertion {
                name: a.name.clone(),
                value: a.value,
                bound: a.bound,
                pass: a.pass,
                theorem_backed: a.theorem_backed,
            })
            .collect(),
    };
    let manifest_path = manifest
        .write(out_dir)
        .map_err(|e| io_error(e, "cannot write manifest"))?;

    let mut written: Vec<PathBuf> = artifacts.iter().map(|a| out_dir.join(a)).collect();
    written.push(manifest_path);

    if let Some(failed) = summary.failed_theorem_assertion() {
        return Err(CommandError {
            kind: FailureKind::Assertion,
            message: format!(
                "assertion '{}' failed: statistic {:.6e} exceeds bound {:.6e}",
                failed.name, failed.value, failed.bound
            ),
        });
    }
    Ok((summary, written))
}
