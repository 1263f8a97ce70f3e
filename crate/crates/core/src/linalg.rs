//! Dense complex linear algebra for small fixed dimensions (k <= ~8):
//! Hermitian eigendecomposition, matrix functions, density-matrix hygiene,
//! and quantum fidelity.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Tolerance under which a matrix is accepted as Hermitian.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Eigenvalues of a density matrix may dip this far below zero from roundoff.
pub const DENSITY_EIG_TOL: f64 = 1e-10;
/// Trace of a density matrix must be 1 within this tolerance.
pub const DENSITY_TRACE_TOL: f64 = 1e-10;
/// Below this an eigenvalue is treated as a genuine PSD violation.
pub const PSD_VIOLATION_TOL: f64 = 1e-8;
/// A trace this small cannot be normalized away.
pub const DEGENERATE_TRACE_TOL: f64 = 1e-12;

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
}

pub fn pauli_y() -> CMat {
    CMat::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
}

pub fn pauli_z() -> CMat {
    CMat::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
}

/// Lowering operator |0><1| (maps the excited basis state to the ground one).
pub fn sigma_minus() -> CMat {
    CMat::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)])
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Real part of the trace (the trace itself for Hermitian matrices).
pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Hilbert-Schmidt inner product tr(A* B).
pub fn hs_inner(a: &CMat, b: &CMat) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Deviation from Hermitianity in Frobenius norm.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    (m - m.adjoint()).norm()
}

fn symmetrize(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// A Hermitian matrix, kept exactly self-adjoint by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMat);

impl HermitianMatrix {
    /// Symmetrizes the input as (A + A*)/2. Rejects non-finite entries and
    /// inputs farther than `HERMITICITY_TOL` from their Hermitian part.
    pub fn new(m: CMat) -> Result<Self> {
        if !is_finite(&m) {
            let dim = m.nrows();
            return Err(Error::NumericalFailure {
                context: "hermitian construction",
                dim,
                matrix: m,
            });
        }
        let defect = hermiticity_defect(&m);
        if defect > HERMITICITY_TOL * m.norm().max(1.0) {
            return Err(Error::InvalidModel {
                reason: format!("matrix is not Hermitian (defect {defect:.3e})"),
            });
        }
        Ok(Self(symmetrize(&m)))
    }

    /// Symmetrizes without the deviation check. For use where the input is
    /// Hermitian by construction (congruences, sums of Hermitian terms).
    pub fn symmetrized(m: &CMat) -> Self {
        Self(symmetrize(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }
}

/// A density matrix: Hermitian, positive semidefinite, unit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMat);

impl DensityMatrix {
    /// Validates Hermiticity, positivity (within `DENSITY_EIG_TOL`) and unit
    /// trace (within `DENSITY_TRACE_TOL`).
    pub fn new(m: CMat) -> Result<Self> {
        let h = HermitianMatrix::new(m)?;
        let tr = trace_re(h.matrix());
        if (tr - 1.0).abs() > DENSITY_TRACE_TOL {
            return Err(Error::InvalidConfig {
                reason: format!("density matrix trace is {tr}, expected 1"),
            });
        }
        let (evals, _) = eig_hermitian(&h)?;
        if evals[0] < -DENSITY_EIG_TOL {
            return Err(Error::NotPsd {
                min_eigenvalue: evals[0],
            });
        }
        Ok(Self(h.into_matrix()))
    }

    /// Wraps a matrix that is PSD and trace-one by construction, applying
    /// only symmetrization. The congruence S rho S* / tr path relies on this
    /// to avoid an eigendecomposition per step.
    pub fn from_psd_unchecked(m: &CMat) -> Self {
        Self(symmetrize(m))
    }

    /// The maximally mixed state I/k.
    pub fn chaotic(dim: usize) -> Self {
        Self(identity(dim).scale(1.0 / dim as f64))
    }

    /// Pure state |v><v| from a (not necessarily normalized) vector.
    pub fn pure(v: &CVec) -> Self {
        let n2 = v.norm_squared();
        Self((v * v.adjoint()).scale(1.0 / n2))
    }

    /// Diagonal state from a probability vector.
    pub fn from_populations(p: &[f64]) -> Result<Self> {
        let total: f64 = p.iter().sum();
        if p.iter().any(|&x| x < 0.0) || total <= DEGENERATE_TRACE_TOL {
            return Err(Error::InvalidConfig {
                reason: "populations must be nonnegative with positive sum".into(),
            });
        }
        let d = CVec::from_iterator(p.len(), p.iter().map(|&x| c(x / total, 0.0)));
        Ok(Self(CMat::from_diagonal(&d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn as_hermitian(&self) -> HermitianMatrix {
        HermitianMatrix(self.0.clone())
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }
}

/// Eigendecomposition of a Hermitian matrix. Returns eigenvalues in
/// ascending order with matching orthonormal eigenvector columns.
pub fn eig_hermitian(a: &HermitianMatrix) -> Result<(Vec<f64>, CMat)> {
    let dim = a.dim();
    let se = nalgebra::SymmetricEigen::try_new(a.matrix().clone(), f64::EPSILON, 4096).ok_or(
        Error::NumericalFailure {
            context: "hermitian eigendecomposition",
            dim,
            matrix: a.matrix().clone(),
        },
    )?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let evals: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(dim, dim);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &se.eigenvectors.column(i));
    }
    Ok((evals, vecs))
}

/// Rebuild V f(diag) V* from an eigendecomposition.
fn from_eig(evals: impl Iterator<Item = f64>, vecs: &CMat) -> CMat {
    let d = CVec::from_iterator(vecs.nrows(), evals.map(|x| c(x, 0.0)));
    vecs * CMat::from_diagonal(&d) * vecs.adjoint()
}

/// Principal square root of a PSD Hermitian matrix. Eigenvalues in
/// [-`PSD_VIOLATION_TOL`, 0) are clipped to zero; anything lower is an
/// error. Eigenvalue dirt of size eps on singular inputs perturbs the root
/// by sqrt(eps); the square B*B still reproduces the input to eps.
pub fn herm_sqrt(a: &HermitianMatrix) -> Result<HermitianMatrix> {
    let (evals, vecs) = eig_hermitian(a)?;
    if evals[0] < -PSD_VIOLATION_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: evals[0],
        });
    }
    let root = from_eig(evals.iter().map(|&x| x.max(0.0).sqrt()), &vecs);
    Ok(HermitianMatrix::symmetrized(&root))
}

/// Quantum fidelity F(rho, sigma) = tr^2 sqrt(sqrt(rho) sigma sqrt(rho)).
///
/// Equals 1 exactly when the states coincide and reduces to <x|rho|x> when
/// sigma = |x><x| is pure. Eigenvalues of the inner product matrix at
/// roundoff scale are clipped to zero before the outer square root: the
/// root amplifies eigenvalue dirt of size eps to sqrt(eps), and negatives
/// would produce NaN on near-singular inputs.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    let sr = herm_sqrt(&rho.as_hermitian())?;
    let inner = HermitianMatrix::symmetrized(&(sr.matrix() * sigma.matrix() * sr.matrix()));
    let (evals, _) = eig_hermitian(&inner)?;
    let floor = 8.0 * f64::EPSILON * evals.last().copied().unwrap_or(0.0).max(0.0);
    let s: f64 = evals
        .iter()
        .map(|&x| if x > floor { x.sqrt() } else { 0.0 })
        .sum();
    Ok((s * s).clamp(0.0, 1.0))
}

/// Matrix exponential via scaling and squaring.
pub fn expm(a: &CMat) -> Result<CMat> {
    if !is_finite(a) {
        return Err(Error::NumericalFailure {
            context: "expm input",
            dim: a.nrows(),
            matrix: a.clone(),
        });
    }
    let e = a.clone().exp();
    if !is_finite(&e) {
        return Err(Error::NumericalFailure {
            context: "expm overflow",
            dim: a.nrows(),
            matrix: a.clone(),
        });
    }
    Ok(e)
}

/// Clip negative eigenvalues to zero and renormalize the trace to one.
/// Valid density matrices pass through unchanged (up to roundoff).
pub fn project_to_density(a: &HermitianMatrix) -> Result<DensityMatrix> {
    if trace_re(a.matrix()) <= DEGENERATE_TRACE_TOL {
        return Err(Error::DegenerateState {
            trace: trace_re(a.matrix()),
        });
    }
    let (evals, vecs) = eig_hermitian(a)?;
    let clipped: Vec<f64> = evals.iter().map(|&x| x.max(0.0)).collect();
    let tr: f64 = clipped.iter().sum();
    if tr <= DEGENERATE_TRACE_TOL {
        return Err(Error::DegenerateState { trace: tr });
    }
    let m = from_eig(clipped.iter().map(|&x| x / tr), &vecs);
    Ok(DensityMatrix(symmetrize(&m)))
}

/// Outcome of the kernel inclusion test ker(rho_hat) subset ker(rho).
#[derive(Debug, Clone)]
pub struct KernelInclusion {
    pub holds: bool,
    /// Smallest constant with rho <= c * rho_hat on supp(rho_hat);
    /// meaningful only when `holds`.
    pub constant: f64,
    /// A null eigenvector of rho_hat with nonzero weight in rho, if any.
    pub violation: Option<CVec>,
}

/// Checks whether every null direction of `rho_hat` is also null for `rho`,
/// and computes the domination constant c = max eig of
/// pinv_sqrt(rho_hat) rho pinv_sqrt(rho_hat) on supp(rho_hat).
pub fn kernel_inclusion(rho_hat: &DensityMatrix, rho: &DensityMatrix, tol: f64) -> Result<KernelInclusion> {
    let (evals, vecs) = eig_hermitian(&rho_hat.as_hermitian())?;
    let mut violation = None;
    let mut holds = true;
    for i in 0..evals.len() {
        if evals[i] <= tol {
            let v = vecs.column(i);
            let overlap = (v.adjoint() * rho.matrix() * v)[(0, 0)].re;
            if overlap > tol {
                holds = false;
                violation = Some(v.into_owned());
                break;
            }
        }
    }
    let pinv_sqrt = from_eig(
        evals.iter().map(|&x| if x > tol { 1.0 / x.sqrt() } else { 0.0 }),
        &vecs,
    );
    let compressed =
        HermitianMatrix::symmetrized(&(&pinv_sqrt * rho.matrix() * &pinv_sqrt));
    let (cev, _) = eig_hermitian(&compressed)?;
    let constant = cev.last().copied().unwrap_or(0.0);
    Ok(KernelInclusion {
        holds,
        constant,
        violation,
    })
}

/// Trace distance (1/2)||a - b||_1 between Hermitian matrices.
pub fn trace_distance(a: &CMat, b: &CMat) -> Result<f64> {
    let diff = HermitianMatrix::symmetrized(&(a - b));
    let (evals, _) = eig_hermitian(&diff)?;
    Ok(0.5 * evals.iter().map(|x| x.abs()).sum::<f64>())
}
