//! Measurement model: Hamiltonian plus diffusive and jump channels, the
//! associated Lindblad generator and its adjoint as superoperator matrices,
//! and deterministic master-equation propagation.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    c, expm, hermiticity_defect, identity, is_finite, project_to_density, CMat,
    DensityMatrix, HermitianMatrix,
};

/// The measurement model: dimension k, Hamiltonian H, diffusive operators
/// L_1..L_p (homodyne-type channels) and jump operators C_{p+1}..C_n
/// (counting-type channels).
#[derive(Debug, Clone)]
pub struct ModelSpec {
    dim: usize,
    hamiltonian: HermitianMatrix,
    diffusive_ops: Vec<CMat>,
    jump_ops: Vec<CMat>,
}

impl ModelSpec {
    pub fn new(hamiltonian: CMat, diffusive_ops: Vec<CMat>, jump_ops: Vec<CMat>) -> Result<Self> {
        let dim = hamiltonian.nrows();
        if dim == 0 || hamiltonian.ncols() != dim {
            return Err(Error::InvalidModel {
                reason: "Hamiltonian must be square with positive dimension".into(),
            });
        }
        let defect = hermiticity_defect(&hamiltonian);
        if defect > 1e-12 * hamiltonian.norm().max(1.0) {
            return Err(Error::InvalidModel {
                reason: format!("Hamiltonian is not Hermitian (defect {defect:.3e})"),
            });
        }
        if diffusive_ops.is_empty() && jump_ops.is_empty() {
            return Err(Error::InvalidModel {
                reason: "model must have at least one noise channel".into(),
            });
        }
        for (kind, op) in diffusive_ops
            .iter()
            .map(|o| ("diffusive", o))
            .chain(jump_ops.iter().map(|o| ("jump", o)))
        {
            if op.nrows() != dim || op.ncols() != dim {
                return Err(Error::InvalidModel {
                    reason: format!("{kind} operator is not {dim}x{dim}"),
                });
            }
            if !is_finite(op) {
                return Err(Error::InvalidModel {
                    reason: format!("{kind} operator has non-finite entries"),
                });
            }
        }
        let hamiltonian = HermitianMatrix::new(hamiltonian)?;
        Ok(Self {
            dim,
            hamiltonian,
            diffusive_ops,
            jump_ops,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &CMat {
        self.hamiltonian.matrix()
    }

    pub fn diffusive_ops(&self) -> &[CMat] {
        &self.diffusive_ops
    }

    pub fn jump_ops(&self) -> &[CMat] {
        &self.jump_ops
    }

    pub fn n_diffusive(&self) -> usize {
        self.diffusive_ops.len()
    }

    pub fn n_jump(&self) -> usize {
        self.jump_ops.len()
    }

    /// All channel operators, diffusive first.
    pub fn all_ops(&self) -> impl Iterator<Item = &CMat> {
        self.diffusive_ops.iter().chain(self.jump_ops.iter())
    }

    /// Conjugate the whole model by a unitary: H -> UHU*, A -> UAU*.
    pub fn conjugated(&self, u: &CMat) -> Result<Self> {
        let map = |m: &CMat| u * m * u.adjoint();
        Self::new(
            map(self.hamiltonian.matrix()),
            self.diffusive_ops.iter().map(&map).collect(),
            self.jump_ops.iter().map(&map).collect(),
        )
    }
}

/// Drift operator K = -iH - (1/2) (sum L*L + sum C*C) appearing in the
/// propagator equation.
pub fn drift_k(spec: &ModelSpec) -> CMat {
    let mut k = spec.hamiltonian() * c(0.0, -1.0);
    for op in spec.all_ops() {
        k -= (op.adjoint() * op).scale(0.5);
    }
    k
}

/// A linear map on k x k matrices stored as a k^2 x k^2 matrix acting on
/// column-stacked vectorizations: vec(A rho B) = (B^T kron A) vec(rho).
#[derive(Debug, Clone)]
pub struct Superoperator {
    dim: usize,
    matrix: CMat,
}

impl Superoperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    /// Apply to a k x k matrix through the vectorized representation.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let v = vectorize(rho);
        let out = &self.matrix * v;
        unvectorize(&out, self.dim)
    }
}

/// Column-stacking vectorization.
pub fn vectorize(m: &CMat) -> nalgebra::DVector<Complex64> {
    nalgebra::DVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &nalgebra::DVector<Complex64>, dim: usize) -> CMat {
    CMat::from_column_slice(dim, dim, v.as_slice())
}

/// Left-multiplication superoperator: rho -> A rho.
fn left_mul(a: &CMat) -> CMat {
    identity(a.nrows()).kronecker(a)
}

/// Right-multiplication superoperator: rho -> rho B.
fn right_mul(b: &CMat) -> CMat {
    b.transpose().kronecker(&identity(b.nrows()))
}

/// Sandwich superoperator: rho -> A rho B.
fn sandwich(a: &CMat, b: &CMat) -> CMat {
    b.transpose().kronecker(a)
}

/// The Lindblad generator
/// L(rho) = -i[H, rho] + sum_a (A rho A* - (1/2){A*A, rho})
/// over all channels, as a superoperator matrix.
pub fn lindbladian(spec: &ModelSpec) -> Superoperator {
    let dim = spec.dim();
    let h = spec.hamiltonian();
    let mut m = (left_mul(h) - right_mul(h)) * c(0.0, -1.0);
    for a in spec.all_ops() {
        let gram = a.adjoint() * a;
        m += sandwich(a, &a.adjoint());
        m -= (left_mul(&gram) + right_mul(&gram)).scale(0.5);
    }
    Superoperator { dim, matrix: m }
}

/// The adjoint generator with respect to the Hilbert-Schmidt pairing:
/// L*(X) = i[H, X] + sum_a (A* X A - (1/2){A*A, X}). Unital: L*(I) = 0.
pub fn adjoint_lindbladian(spec: &ModelSpec) -> Superoperator {
    let dim = spec.dim();
    let h = spec.hamiltonian();
    let mut m = (left_mul(h) - right_mul(h)) * c(0.0, 1.0);
    for a in spec.all_ops() {
        let gram = a.adjoint() * a;
        m += sandwich(&a.adjoint(), a);
        m -= (left_mul(&gram) + right_mul(&gram)).scale(0.5);
    }
    Superoperator { dim, matrix: m }
}

/// Propagate the master equation: e^{t L}(rho). Exact to solver precision
/// via the exponential of the assembled superoperator; this is the oracle
/// the Monte Carlo mean is checked against.
pub fn evolve_master(spec: &ModelSpec, rho: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    if t < 0.0 {
        return Err(Error::InvalidConfig {
            reason: format!("evolution time must be nonnegative, got {t}"),
        });
    }
    let gen = lindbladian(spec);
    let prop = expm(&(gen.matrix() * c(t, 0.0)))?;
    let out = unvectorize(&(&prop * vectorize(rho.matrix())), spec.dim());
    let h = HermitianMatrix::symmetrized(&out);
    let projected = project_to_density(&h)?;
    let drift = (projected.matrix() - &out).norm();
    if drift > 1e-8 {
        return Err(Error::NumericalFailure {
            context: "master equation propagation left the state simplex",
            dim: spec.dim(),
            matrix: out,
        });
    }
    Ok(projected)
}
