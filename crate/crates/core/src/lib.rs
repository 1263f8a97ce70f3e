//! Simulation and analysis of continuous-time quantum trajectories and
//! their estimated filters: jump-diffusion integration of the coupled
//! true/estimated pair, fidelity and likelihood diagnostics, fixed-point
//! structure of the Lindblad generator, and Monte Carlo experiments that
//! probe the long-time behavior of each quantity.

pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod sde;
pub mod structure;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, DensityMatrix, HermitianMatrix};
pub use model::{ModelSpec, Superoperator};
pub use sde::{PairState, PathRecord, SimConfig};
pub use structure::{PurificationVerdict, StructureReport};
