//! Configuration file format: a single TOML document holding the model,
//! initial states, integrator settings and experiment selection. Complex
//! matrices are encoded as row-major arrays of [re, im] pairs.

use serde::{Deserialize, Serialize};

use qtraj_core::experiments::{ExperimentConfig, ExperimentKind, Tolerances};
use qtraj_core::linalg::{c, CMat, DensityMatrix};
use qtraj_core::model::ModelSpec;
use qtraj_core::sde::SimConfig;

/// An input-shaped problem: unparseable file, malformed field, unknown
/// enum value. Distinct from model rejection, which happens later.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(message: impl Into<String>) -> ConfigError {
    ConfigError {
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub model: ModelSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSection>,
    pub sim: SimSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub dim: usize,
    /// Row-major [re, im] pairs; omitted or empty means the zero matrix.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diffusive: Vec<OperatorEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jump: Vec<OperatorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorEntry {
    pub matrix: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSection {
    pub rho: Vec<[f64; 2]>,
    pub rho_hat: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_jump_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub renorm_every: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub kind: String,
    pub n_traj: usize,
    pub sample_times: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cesaro_median: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_product: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<f64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| err(format!("config parse error: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical serialization: field order is fixed by the struct layout,
    /// floats print in shortest round-trip form.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serialization")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    pub fn to_model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let dim = self.model.dim;
        if dim == 0 {
            return Err(err("model.dim: must be positive"));
        }
        let h = match &self.model.hamiltonian {
            None => CMat::zeros(dim, dim),
            Some(entries) if entries.is_empty() => CMat::zeros(dim, dim),
            Some(entries) => matrix_from_pairs(dim, entries, "model.hamiltonian")?,
        };
        let diffusive = self
            .model
            .diffusive
            .iter()
            .enumerate()
            .map(|(i, op)| {
                matrix_from_pairs(dim, &op.matrix, &format!("model.diffusive[{i}].matrix"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let jump = self
            .model
            .jump
            .iter()
            .enumerate()
            .map(|(i, op)| matrix_from_pairs(dim, &op.matrix, &format!("model.jump[{i}].matrix")))
            .collect::<Result<Vec<_>, _>>()?;
        ModelSpec::new(h, diffusive, jump).map_err(|e| err(format!("model: {e}")))
    }

    pub fn to_sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            horizon: self.sim.horizon,
            seed: self.sim.seed,
            max_jump_prob: self.sim.max_jump_prob.unwrap_or(0.1),
            renorm_every: self.sim.renorm_every.unwrap_or(1),
        }
    }

    pub fn initial_states(&self) -> Result<(DensityMatrix, DensityMatrix), ConfigError> {
        let dim = self.model.dim;
        let section = self
            .initial
            .as_ref()
            .ok_or_else(|| err("missing [initial] section"))?;
        let rho = matrix_from_pairs(dim, &section.rho, "initial.rho")?;
        let rho_hat = matrix_from_pairs(dim, &section.rho_hat, "initial.rho_hat")?;
        let rho = DensityMatrix::new(rho).map_err(|e| err(format!("initial.rho: {e}")))?;
        let rho_hat =
            DensityMatrix::new(rho_hat).map_err(|e| err(format!("initial.rho_hat: {e}")))?;
        Ok((rho, rho_hat))
    }

    pub fn experiment_kind(&self) -> Result<ExperimentKind, ConfigError> {
        let section = self
            .experiment
            .as_ref()
            .ok_or_else(|| err("missing [experiment] section"))?;
        parse_kind(&section.kind)
    }

    pub fn to_experiment_config(&self) -> Result<ExperimentConfig, ConfigError> {
        let section = self
            .experiment
            .as_ref()
            .ok_or_else(|| err("missing [experiment] section"))?;
        let (rho0, rho_hat0) = self.initial_states()?;
        let defaults = Tolerances::default();
        let tolerances = match &section.tolerances {
            None => defaults,
            Some(t) => Tolerances {
                cesaro_median: t.cesaro_median.unwrap_or(defaults.cesaro_median),
                q_product: t.q_product.unwrap_or(defaults.q_product),
                sigmas: t.sigmas.unwrap_or(defaults.sigmas),
            },
        };
        Ok(ExperimentConfig {
            model: self.to_model_spec()?,
            rho0,
            rho_hat0,
            n_traj: section.n_traj,
            sim: self.to_sim_config(),
            sample_times: section.sample_times.clone(),
            kind: parse_kind(&section.kind)?,
            gamma_threshold: section.gamma_threshold.unwrap_or(0.95),
            tolerances,
        })
    }

    /// Sample times for plain trajectory dumps: the experiment grid when
    /// present, otherwise a uniform 101-point grid over the horizon.
    pub fn sample_times(&self) -> Vec<f64> {
        match &self.experiment {
            Some(e) if !e.sample_times.is_empty() => e.sample_times.clone(),
            _ => (0..=100)
                .map(|i| self.sim.horizon * i as f64 / 100.0)
                .collect(),
        }
    }
}

fn parse_kind(name: &str) -> Result<ExperimentKind, ConfigError> {
    match name {
        "fidelity" => Ok(ExperimentKind::Fidelity),
        "martingales" => Ok(ExperimentKind::Martingales),
        "gamma" => Ok(ExperimentKind::Gamma),
        "cesaro" => Ok(ExperimentKind::Cesaro),
        "master_eq" => Ok(ExperimentKind::MasterEq),
        "reference" => Ok(ExperimentKind::Reference),
        other => Err(err(format!(
            "experiment.kind: unknown experiment '{other}' (expected fidelity, martingales, gamma, cesaro, master_eq or reference)"
        ))),
    }
}

fn matrix_from_pairs(dim: usize, entries: &[[f64; 2]], field: &str) -> Result<CMat, ConfigError> {
    if entries.len() != dim * dim {
        return Err(err(format!(
            "{field}: expected {} entries for a {dim}x{dim} matrix, got {}",
            dim * dim,
            entries.len()
        )));
    }
    if entries.iter().flatten().any(|v| !v.is_finite()) {
        return Err(err(format!("{field}: entries must be finite")));
    }
    Ok(CMat::from_fn(dim, dim, |i, j| {
        let [re, im] = entries[i * dim + j];
        c(re, im)
    }))
}

/// Row-major [re, im] encoding of a matrix, the inverse of
/// `matrix_from_pairs`.
pub fn matrix_to_pairs(m: &CMat) -> Vec<[f64; 2]> {
    let dim = m.nrows();
    let mut out = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            out.push([m[(i, j)].re, m[(i, j)].im]);
        }
    }
    out
}
