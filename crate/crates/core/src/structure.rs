//! Static analysis of the Lindblad generator: invariant states, the
//! decaying/recurrent split, minimal enclosures with their dual projectors,
//! the generator's spectrum, and verdicts for the spectral, identifiability
//! and purification conditions.
//!
//! The generator preserves Hermiticity, so most of the linear algebra here
//! runs on its real matrix representation over an orthonormal Hermitian
//! operator basis: null vectors of that representation are Hermitian fixed
//! points directly, and its eigenvalues are exactly the generator's.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    c, eig_hermitian, hs_inner, identity, project_to_density, trace_re, CMat, DensityMatrix,
    HermitianMatrix,
};
use crate::model::{adjoint_lindbladian, lindbladian, ModelSpec, Superoperator};
use crate::sde::{gram_operator, SimConfig, Stepper};

type RMat = DMatrix<f64>;
type RVec = DVector<f64>;

/// Singular values at or below this count as null directions of the generator.
pub const NULL_SPACE_TOL: f64 = 1e-9;
/// Eigenvalues within this of the imaginary axis count as peripheral.
pub const SPECTRAL_TOL: f64 = 1e-7;
/// Channel statistics closer than this cannot separate two invariant states.
pub const IDENTIFIABILITY_TOL: f64 = 1e-6;
/// Eigenvalues of an averaged state at or below this span the decaying subspace.
const DECAY_EIG_TOL: f64 = 1e-7;

/// Monte Carlo falsifier parameters for the purification check.
#[derive(Debug, Clone, PartialEq)]
pub struct PurificationMcParams {
    pub trajectories: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for PurificationMcParams {
    fn default() -> Self {
        Self {
            trajectories: 32,
            horizon: 30.0,
            dt: 1e-3,
            seed: 0x9d2c_5680,
        }
    }
}

/// How to decide the purification verdict for dimensions above two
/// (dimension two has an exact characterization and ignores this choice).
#[derive(Debug, Clone, PartialEq)]
pub enum PurificationMethod {
    /// Algebraic witness search plus Monte Carlo falsifier; disagreement
    /// yields `Unknown`.
    Auto(PurificationMcParams),
    /// Witness search only: `Fails` on a witness, otherwise `Unknown`.
    Algebraic,
    /// Monte Carlo falsifier only.
    MonteCarlo(PurificationMcParams),
}

impl Default for PurificationMethod {
    fn default() -> Self {
        Self::Auto(PurificationMcParams::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PurificationVerdict {
    Holds,
    Fails,
    Unknown,
}

impl std::fmt::Display for PurificationVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Holds => write!(f, "Holds"),
            Self::Fails => write!(f, "Fails"),
            Self::Unknown => write!(f, "Unknown"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PurificationReport {
    pub verdict: PurificationVerdict,
    /// Projector onto a rank >= 2 subspace on which every channel
    /// compresses to a scalar, when the algebraic search found one.
    pub algebraic_witness: Option<CMat>,
    /// Largest second eigenvalue of the propagator Gram operator observed
    /// at the Monte Carlo horizon, when the falsifier ran.
    pub mc_second_eigenvalue: Option<f64>,
}

/// Per-state channel statistics used by the identifiability check:
/// tr((L+L*) rho) for diffusive channels, tr(C rho C*) for jump channels.
#[derive(Debug, Clone)]
pub struct IdentifiabilityWitness {
    pub channel_names: Vec<String>,
    /// statistics[state][channel]
    pub statistics: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct StructureReport {
    pub fixed_point_basis: Vec<HermitianMatrix>,
    pub invariant_states: Vec<DensityMatrix>,
    /// Orthogonal projectors onto the minimal enclosures.
    pub enclosures: Vec<CMat>,
    pub dual_projectors: Vec<HermitianMatrix>,
    pub liouvillian_spectrum: Vec<Complex64>,
    pub decaying_projector: CMat,
    pub spectral_ok: bool,
    pub identifiable: bool,
    pub identifiability: IdentifiabilityWitness,
    pub purification: PurificationReport,
    pub warnings: Vec<String>,
}

impl StructureReport {
    pub fn n_enclosures(&self) -> usize {
        self.invariant_states.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureOptions {
    pub null_space_tol: f64,
    pub spectral_tol: f64,
    pub identifiability_tol: f64,
    pub purification: PurificationMethod,
}

impl Default for StructureOptions {
    fn default() -> Self {
        Self {
            null_space_tol: NULL_SPACE_TOL,
            spectral_tol: SPECTRAL_TOL,
            identifiability_tol: IDENTIFIABILITY_TOL,
            purification: PurificationMethod::default(),
        }
    }
}

/// Orthonormal Hermitian operator basis: k diagonal units, then the
/// symmetric and antisymmetric off-diagonal combinations.
pub fn hermitian_basis(dim: usize) -> Vec<CMat> {
    let mut basis = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        let mut m = CMat::zeros(dim, dim);
        m[(i, i)] = c(1.0, 0.0);
        basis.push(m);
    }
    let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
    for i in 0..dim {
        for j in (i + 1)..dim {
            let mut m = CMat::zeros(dim, dim);
            m[(i, j)] = c(inv_sqrt2, 0.0);
            m[(j, i)] = c(inv_sqrt2, 0.0);
            basis.push(m);
            let mut m = CMat::zeros(dim, dim);
            m[(i, j)] = c(0.0, -inv_sqrt2);
            m[(j, i)] = c(0.0, inv_sqrt2);
            basis.push(m);
        }
    }
    basis
}

fn coords(m: &CMat, basis: &[CMat]) -> RVec {
    RVec::from_iterator(basis.len(), basis.iter().map(|b| hs_inner(b, m).re))
}

fn reconstruct(x: &RVec, basis: &[CMat]) -> CMat {
    let dim = basis[0].nrows();
    let mut out = CMat::zeros(dim, dim);
    for (w, b) in x.iter().zip(basis.iter()) {
        out += b.scale(*w);
    }
    out
}

/// Real matrix of a Hermiticity-preserving superoperator in the Hermitian
/// operator basis. Its eigenvalues (as complex numbers) coincide with the
/// superoperator's.
pub fn real_representation(op: &Superoperator, basis: &[CMat]) -> RMat {
    let n = basis.len();
    let mut r = RMat::zeros(n, n);
    for (col, b) in basis.iter().enumerate() {
        let image = op.apply(b);
        for (row, a) in basis.iter().enumerate() {
            r[(row, col)] = hs_inner(a, &image).re;
        }
    }
    r
}

/// Eigenvalues of the generator, sorted by real then imaginary part.
pub fn liouvillian_spectrum(spec: &ModelSpec) -> Vec<Complex64> {
    let basis = hermitian_basis(spec.dim());
    let r = real_representation(&lindbladian(spec), &basis);
    let mut evals: Vec<Complex64> = r.complex_eigenvalues().iter().copied().collect();
    evals.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    evals
}

/// True when no eigenvalue sits on the imaginary axis away from zero
/// (zero itself is always present and does not disqualify).
pub fn check_spectral(spectrum: &[Complex64], tol: f64) -> bool {
    !spectrum
        .iter()
        .any(|z| z.re.abs() <= tol && z.im.abs() > tol)
}

struct NullSpace {
    /// Columns are orthonormal coordinate vectors spanning the null space.
    basis: RMat,
    /// Smallest retained (non-null) singular value.
    gap: f64,
    tol: f64,
}

/// Right null space of an n x m matrix with n >= m. Null vectors are the
/// right singular vectors whose singular values fall at or below the
/// threshold; they come back as orthonormal columns.
fn null_space(r: &RMat, tol_scale: f64) -> Result<NullSpace> {
    let m = r.ncols();
    assert!(r.nrows() >= m, "null_space expects a square or tall matrix");
    let svd = r.clone().svd(false, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let tol = tol_scale * smax.max(1.0);
    // singular values come out in descending order
    let dim_null = sv.iter().filter(|&&s| s <= tol).count();
    let v_t = svd.v_t.unwrap();
    let mut basis = RMat::zeros(m, dim_null);
    for i in 0..dim_null {
        basis.set_column(i, &v_t.row(m - dim_null + i).transpose());
    }
    let gap = if dim_null < m {
        sv[m - dim_null - 1]
    } else {
        f64::INFINITY
    };
    Ok(NullSpace { basis, gap, tol })
}

/// Hermitian basis of the generator's kernel, with an optional warning when
/// the null space is poorly separated from the slowest decaying mode.
pub fn fixed_points(spec: &ModelSpec) -> Result<(Vec<HermitianMatrix>, Option<String>)> {
    fixed_points_with(spec, NULL_SPACE_TOL)
}

pub fn fixed_points_with(
    spec: &ModelSpec,
    tol: f64,
) -> Result<(Vec<HermitianMatrix>, Option<String>)> {
    let basis = hermitian_basis(spec.dim());
    let r = real_representation(&lindbladian(spec), &basis);
    let ns = null_space(&r, tol)?;
    if ns.basis.ncols() == 0 {
        return Err(Error::NumericalFailure {
            context: "generator kernel not found",
            dim: spec.dim(),
            matrix: CMat::zeros(0, 0),
        });
    }
    let warning = (ns.gap < 10.0 * ns.tol).then(|| {
        format!(
            "ambiguous kernel: smallest retained singular value {:.3e} is within 10x of the null threshold {:.3e}",
            ns.gap, ns.tol
        )
    });
    let elements = (0..ns.basis.ncols())
        .map(|i| {
            let col = ns.basis.column(i).into_owned();
            HermitianMatrix::symmetrized(&reconstruct(&col, &basis))
        })
        .collect();
    Ok((elements, warning))
}

/// Shared scaffolding for kernel-component extraction: the generator's real
/// representation together with its null space.
struct KernelSolver {
    basis: Vec<CMat>,
    rep: RMat,
    null_basis: RMat,
}

impl KernelSolver {
    fn new(spec: &ModelSpec, tol: f64) -> Result<Self> {
        let basis = hermitian_basis(spec.dim());
        let rep = real_representation(&lindbladian(spec), &basis);
        let ns = null_space(&rep, tol)?;
        if ns.basis.ncols() == 0 {
            return Err(Error::NumericalFailure {
                context: "generator kernel not found",
                dim: spec.dim(),
                matrix: CMat::zeros(0, 0),
            });
        }
        Ok(Self {
            basis,
            rep,
            null_basis: ns.basis,
        })
    }

    /// Component of `x` in the kernel along the image: the limit of the
    /// running time average of e^{tL}(x). Solved as the least-squares
    /// decomposition x = N a + R w, which is exact because the kernel is
    /// semisimple for a trace-norm contraction semigroup.
    fn cesaro_component(&self, x: &CMat) -> Result<CMat> {
        let n = self.basis.len();
        let d = self.null_basis.ncols();
        let mut stacked = RMat::zeros(n, d + n);
        stacked.view_mut((0, 0), (n, d)).copy_from(&self.null_basis);
        stacked.view_mut((0, d), (n, n)).copy_from(&self.rep);
        let rhs = coords(x, &self.basis);
        let svd = stacked.svd(true, true);
        let sol = svd.solve(&rhs, 1e-12).map_err(|_| Error::NumericalFailure {
            context: "kernel/image split",
            dim: n,
            matrix: x.clone(),
        })?;
        let a = sol.rows(0, d).into_owned();
        Ok(reconstruct(&(&self.null_basis * a), &self.basis))
    }

    /// Coordinate matrix (in kernel coordinates) of the map A -> A - P A P,
    /// whose null space is the part of the kernel supported inside P.
    fn restricted_kernel(&self, proj: &CMat) -> Result<RMat> {
        let n = self.basis.len();
        let d = self.null_basis.ncols();
        let mut g = RMat::zeros(n, d);
        for j in 0..d {
            let col = self.null_basis.column(j).into_owned();
            let a = reconstruct(&col, &self.basis);
            let compressed = proj * &a * proj;
            g.set_column(j, &coords(&(&a - compressed), &self.basis));
        }
        Ok(g)
    }

    fn element(&self, kernel_coords: &RVec) -> CMat {
        reconstruct(&(&self.null_basis * kernel_coords), &self.basis)
    }
}

/// Orthogonal projector onto the decaying subspace: the kernel of the
/// time-averaged evolution of the chaotic state. Also reports whether
/// peripheral (nonzero imaginary-axis) eigenvalues are present; the
/// averaged construction remains valid there, but pointwise convergence of
/// the semigroup does not, so a warning is attached.
pub fn decaying_subspace(spec: &ModelSpec) -> Result<(CMat, Option<String>)> {
    let dim = spec.dim();
    let solver = KernelSolver::new(spec, NULL_SPACE_TOL)?;
    let averaged = solver.cesaro_component(&identity(dim).scale(1.0 / dim as f64))?;
    let state = project_to_density(&HermitianMatrix::symmetrized(&averaged))?;
    let (evals, vecs) = eig_hermitian(&state.as_hermitian())?;
    let proj = eigvec_projector(&evals, &vecs, |ev| ev <= DECAY_EIG_TOL);
    let spectrum = liouvillian_spectrum(spec);
    let warning = (!check_spectral(&spectrum, SPECTRAL_TOL)).then(|| {
        "peripheral spectrum present: the decaying subspace is taken from the time-averaged evolution".to_string()
    });
    Ok((proj, warning))
}

/// Sum of |v><v| over the eigenvectors whose eigenvalue passes `keep`.
fn eigvec_projector(evals: &[f64], vecs: &CMat, keep: impl Fn(f64) -> bool) -> CMat {
    let dim = vecs.nrows();
    let mut proj = CMat::zeros(dim, dim);
    for (i, &ev) in evals.iter().enumerate() {
        if keep(ev) {
            let v = vecs.column(i);
            proj += v * v.adjoint();
        }
    }
    proj
}

/// Orthonormal basis (columns) of the range of an orthogonal projector.
fn projector_basis(proj: &CMat) -> Result<CMat> {
    let dim = proj.nrows();
    let (evals, vecs) = eig_hermitian(&HermitianMatrix::symmetrized(proj))?;
    let cols: Vec<usize> = (0..dim).filter(|&i| evals[i] > 0.5).collect();
    let mut q = CMat::zeros(dim, cols.len());
    for (out, &i) in cols.iter().enumerate() {
        q.set_column(out, &vecs.column(i));
    }
    Ok(q)
}

fn support_projector(h: &HermitianMatrix, rel_tol: f64) -> Result<CMat> {
    let (evals, vecs) = eig_hermitian(h)?;
    let max = evals.iter().cloned().fold(0.0_f64, f64::max);
    Ok(eigvec_projector(&evals, &vecs, |ev| ev > rel_tol * max))
}

/// The unique decomposition into minimal enclosures: mutually orthogonal
/// supports V_i carrying the minimal invariant states rho_i.
#[derive(Debug, Clone)]
pub struct MinimalDecomposition {
    pub projectors: Vec<CMat>,
    pub states: Vec<DensityMatrix>,
}

/// Decompose the space into minimal enclosures. Requires a trivial decaying
/// subspace; models with one are rejected as unsupported.
pub fn minimal_enclosures(spec: &ModelSpec) -> Result<MinimalDecomposition> {
    let dim = spec.dim();
    let (decaying, _) = decaying_subspace(spec)?;
    let decaying_dim = trace_re(&decaying).round() as usize;
    if decaying_dim > 0 {
        return Err(Error::UnsupportedModel { decaying_dim });
    }
    let solver = KernelSolver::new(spec, NULL_SPACE_TOL)?;

    let mut projectors: Vec<CMat> = Vec::new();
    let mut states: Vec<DensityMatrix> = Vec::new();
    let mut remaining = identity(dim);
    let mut remaining_dim = dim;

    while remaining_dim > 0 {
        // invariant state faithful on the remaining enclosure
        let seed = remaining.scale(1.0 / remaining_dim as f64);
        let averaged = solver.cesaro_component(&seed)?;
        let leak = (&averaged - &remaining * &averaged * &remaining).norm();
        if leak > 1e-7 {
            return Err(Error::DecompositionNotUnique {
                reason: format!(
                    "time average of a state supported on a candidate enclosure leaks outside it (norm {leak:.3e})"
                ),
            });
        }
        let rho_v = project_to_density(&HermitianMatrix::symmetrized(&averaged))?;
        let (proj, state) = extract_minimal(&solver, rho_v, remaining.clone())?;
        remaining -= &proj;
        // re-orthogonalize the complement projector
        remaining = {
            let (evals, vecs) = eig_hermitian(&HermitianMatrix::symmetrized(&remaining))?;
            eigvec_projector(&evals, &vecs, |ev| ev > 0.5)
        };
        remaining_dim = trace_re(&remaining).round() as usize;
        projectors.push(proj);
        states.push(state);
    }

    verify_decomposition(spec, &projectors, &states)?;
    Ok(MinimalDecomposition { projectors, states })
}

/// Walk down from a faithful invariant state on an enclosure to a minimal
/// one: while the kernel restricted to the support has dimension above one,
/// split off the positive invariant combination with strictly smaller
/// support and recurse on it.
fn extract_minimal(
    solver: &KernelSolver,
    mut rho_v: DensityMatrix,
    mut proj: CMat,
) -> Result<(CMat, DensityMatrix)> {
    let dim = proj.nrows();
    loop {
        let current_dim = trace_re(&proj).round() as usize;
        let g = solver.restricted_kernel(&proj)?;
        let restricted = null_space(&g, 1e-8)?;
        if restricted.basis.ncols() == 0 {
            return Err(Error::DecompositionNotUnique {
                reason: "no invariant element is supported inside a candidate enclosure".into(),
            });
        }
        if restricted.basis.ncols() == 1 {
            return Ok((proj, rho_v));
        }
        // pick a kernel element supported in V and independent of rho_v
        let rho_coords = coords(rho_v.matrix(), &solver.basis);
        let rho_norm2 = rho_coords.norm_squared();
        let mut candidate: Option<CMat> = None;
        for i in 0..restricted.basis.ncols() {
            let col = restricted.basis.column(i).into_owned();
            let a = solver.element(&col);
            let overlap = hs_inner(rho_v.matrix(), &a).re / rho_norm2;
            let perp = &a - rho_v.matrix().scale(overlap);
            if perp.norm() > 1e-8 {
                candidate = Some(perp);
                break;
            }
        }
        let a = candidate.ok_or(Error::DecompositionNotUnique {
            reason: "restricted kernel exceeds one dimension but no independent element found"
                .into(),
        })?;

        // largest generalized eigenvalue of A relative to rho_v on V
        let q = projector_basis(&proj)?;
        let rho_small = HermitianMatrix::symmetrized(&(q.adjoint() * rho_v.matrix() * &q));
        let a_small = q.adjoint() * &a * &q;
        let (revals, rvecs) = eig_hermitian(&rho_small)?;
        let inv_sqrt = {
            let d = nalgebra::DVector::from_iterator(
                revals.len(),
                revals.iter().map(|&x| c(1.0 / x.max(1e-14).sqrt(), 0.0)),
            );
            &rvecs * CMat::from_diagonal(&d) * rvecs.adjoint()
        };
        let pencil = HermitianMatrix::symmetrized(&(&inv_sqrt * a_small * &inv_sqrt));
        let (pevals, _) = eig_hermitian(&pencil)?;
        let lambda_max = *pevals.last().unwrap();

        // positive invariant combination, singular on V
        let sigma = HermitianMatrix::symmetrized(&(rho_v.matrix().scale(lambda_max) - &a));
        let new_proj = support_projector(&sigma, 1e-8)?;
        let new_dim = trace_re(&new_proj).round() as usize;
        if new_dim == 0 || new_dim >= current_dim {
            return Err(Error::NumericalFailure {
                context: "enclosure splitting did not reduce the support",
                dim,
                matrix: sigma.into_matrix(),
            });
        }
        rho_v = project_to_density(&sigma)?;
        proj = new_proj;
    }
}

fn verify_decomposition(
    spec: &ModelSpec,
    projectors: &[CMat],
    states: &[DensityMatrix],
) -> Result<()> {
    let dim = spec.dim();
    let gen = lindbladian(spec);
    let mut sum = CMat::zeros(dim, dim);
    for p in projectors {
        sum += p;
    }
    if (&sum - identity(dim)).norm() > 1e-8 {
        return Err(Error::DecompositionNotUnique {
            reason: "enclosure projectors do not resolve the identity".into(),
        });
    }
    for (i, p) in projectors.iter().enumerate() {
        for q in projectors.iter().skip(i + 1) {
            if (p * q).norm() > 1e-8 {
                return Err(Error::DecompositionNotUnique {
                    reason: "enclosure projectors are not mutually orthogonal".into(),
                });
            }
        }
    }
    for state in states {
        let residual = gen.apply(state.matrix()).norm();
        if residual > 1e-9 {
            return Err(Error::NumericalFailure {
                context: "extracted state is not invariant",
                dim,
                matrix: state.matrix().clone(),
            });
        }
    }
    Ok(())
}

/// Dual projectors M_i: the basis of fixed points of the adjoint generator
/// recombined to satisfy tr(M_k rho_i) = delta_ki. Under a trivial decaying
/// subspace they are orthogonal projectors resolving the identity, which is
/// verified before returning.
pub fn dual_projectors(
    spec: &ModelSpec,
    states: &[DensityMatrix],
) -> Result<Vec<HermitianMatrix>> {
    let basis = hermitian_basis(spec.dim());
    let rep = real_representation(&adjoint_lindbladian(spec), &basis);
    let ns = null_space(&rep, NULL_SPACE_TOL)?;
    let d = ns.basis.ncols();
    let k = states.len();
    if d < k {
        return Err(Error::BiorthogonalSingular { condition: f64::INFINITY });
    }
    let duals: Vec<CMat> = (0..d)
        .map(|i| reconstruct(&ns.basis.column(i).into_owned(), &basis))
        .collect();

    // biorthogonality system G c_i = e_i, minimum-norm solution
    let mut g = RMat::zeros(k, d);
    for (u, state) in states.iter().enumerate() {
        for (j, dual) in duals.iter().enumerate() {
            g[(u, j)] = hs_inner(dual, state.matrix()).re;
        }
    }
    let svd = g.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 1e-10 * smax.max(1.0) {
        return Err(Error::BiorthogonalSingular {
            condition: smax / smin.max(f64::MIN_POSITIVE),
        });
    }
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut e = RVec::zeros(k);
        e[i] = 1.0;
        let coeff = svd.solve(&e, 1e-12).map_err(|_| Error::BiorthogonalSingular {
            condition: smax / smin.max(f64::MIN_POSITIVE),
        })?;
        let mut m = CMat::zeros(spec.dim(), spec.dim());
        for (w, dual) in coeff.iter().zip(duals.iter()) {
            m += dual.scale(*w);
        }
        out.push(HermitianMatrix::symmetrized(&m));
    }

    // verification: biorthogonality, resolution of identity, projector property
    for (i, m) in out.iter().enumerate() {
        for (u, state) in states.iter().enumerate() {
            let v = hs_inner(m.matrix(), state.matrix()).re;
            let target = if i == u { 1.0 } else { 0.0 };
            if (v - target).abs() > 1e-8 {
                return Err(Error::BiorthogonalSingular {
                    condition: smax / smin.max(f64::MIN_POSITIVE),
                });
            }
        }
    }
    let mut sum = CMat::zeros(spec.dim(), spec.dim());
    for m in &out {
        sum += m.matrix();
    }
    if (&sum - identity(spec.dim())).norm() > 1e-8 {
        return Err(Error::DecompositionNotUnique {
            reason: "dual projectors do not sum to the identity".into(),
        });
    }
    for m in &out {
        if (m.matrix() * m.matrix() - m.matrix()).norm() > 1e-7 {
            return Err(Error::DecompositionNotUnique {
                reason: "a dual fixed point is not an orthogonal projector".into(),
            });
        }
    }
    Ok(out)
}

/// Channel statistics per invariant state, and whether every pair of states
/// is separated by at least one channel.
pub fn check_identifiability(
    spec: &ModelSpec,
    states: &[DensityMatrix],
    tol: f64,
) -> (bool, IdentifiabilityWitness) {
    let mut channel_names = Vec::new();
    for i in 0..spec.n_diffusive() {
        channel_names.push(format!("diffusive[{i}]"));
    }
    for j in 0..spec.n_jump() {
        channel_names.push(format!("jump[{j}]"));
    }
    let statistics: Vec<Vec<f64>> = states
        .iter()
        .map(|state| {
            let rho = state.matrix();
            let mut row = Vec::with_capacity(channel_names.len());
            for l in spec.diffusive_ops() {
                row.push(hs_inner(&(l + l.adjoint()), rho).re);
            }
            for cj in spec.jump_ops() {
                row.push(trace_re(&(cj * rho * cj.adjoint())));
            }
            row
        })
        .collect();
    let mut identifiable = true;
    for u in 0..states.len() {
        for v in (u + 1)..states.len() {
            let separated = statistics[u]
                .iter()
                .zip(statistics[v].iter())
                .any(|(a, b)| (a - b).abs() > tol);
            if !separated {
                identifiable = false;
            }
        }
    }
    (
        identifiable,
        IdentifiabilityWitness {
            channel_names,
            statistics,
        },
    )
}

/// Recursive search for a rank >= 2 subspace on which every family member
/// compresses to a scalar: refine eigenvalue clusters member by member.
/// Finding one is a proof; exhausting the search is not.
fn scalar_compression_subspace(family: &[CMat], q: &CMat) -> Result<Option<CMat>> {
    if family.is_empty() {
        return Ok(Some(q.clone()));
    }
    let m = q.ncols();
    if m < 2 {
        return Ok(None);
    }
    let x = HermitianMatrix::symmetrized(&(q.adjoint() * &family[0] * q));
    let (evals, vecs) = eig_hermitian(&x)?;
    let scale = evals.iter().fold(1.0_f64, |acc, &e| acc.max(e.abs()));
    let ctol = 1e-8 * scale;
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && evals[end] - evals[end - 1] <= ctol {
            end += 1;
        }
        if end - start >= 2 {
            let mut sub = CMat::zeros(m, end - start);
            for (out, i) in (start..end).enumerate() {
                sub.set_column(out, &vecs.column(i));
            }
            let refined = q * sub;
            if let Some(found) = scalar_compression_subspace(&family[1..], &refined)? {
                return Ok(Some(found));
            }
        }
        start = end;
    }
    Ok(None)
}

fn purification_family(spec: &ModelSpec) -> Vec<CMat> {
    let mut family: Vec<CMat> = spec
        .diffusive_ops()
        .iter()
        .map(|l| l + l.adjoint())
        .collect();
    family.extend(spec.jump_ops().iter().map(|cj| cj.adjoint() * cj));
    family
}

fn is_scalar(m: &CMat, tol: f64) -> bool {
    let dim = m.nrows();
    let mean = trace_re(m) / dim as f64;
    (m - identity(dim).scale(mean)).norm() <= tol
}

/// Largest second eigenvalue of the Gram operator over an ensemble of long
/// trajectories started from the chaotic state.
fn mc_second_eigenvalue(spec: &ModelSpec, params: &PurificationMcParams) -> Result<f64> {
    let chaotic = DensityMatrix::chaotic(spec.dim());
    let cfg = SimConfig::new(params.dt, params.horizon, params.seed);
    let mut worst = 0.0_f64;
    for traj in 0..params.trajectories {
        let mut stepper = Stepper::new(spec, &chaotic, &chaotic, &cfg)?;
        let mut rng = crate::sde::trajectory_rng(cfg.seed, traj as u64);
        for _ in 0..cfg.n_steps() {
            stepper.advance(&mut rng)?;
        }
        let m = gram_operator(&stepper.state());
        let (evals, _) = eig_hermitian(&m)?;
        let second = evals[evals.len() - 2];
        worst = worst.max(second);
    }
    Ok(worst)
}

/// Purification verdict. Dimension two has an exact characterization:
/// purification fails exactly when every diffusive L has L + L* scalar and
/// every jump C is a scalar multiple of a unitary. For higher dimensions
/// the verdict combines the algebraic witness search with the Monte Carlo
/// falsifier; `Unknown` is surfaced rather than guessed.
pub fn check_purification(
    spec: &ModelSpec,
    method: &PurificationMethod,
) -> Result<PurificationReport> {
    let dim = spec.dim();
    if dim < 2 {
        return Ok(PurificationReport {
            verdict: PurificationVerdict::Holds,
            algebraic_witness: None,
            mc_second_eigenvalue: None,
        });
    }
    if dim == 2 {
        let tol = 1e-10;
        let all_scalar = purification_family(spec).iter().all(|x| is_scalar(x, tol));
        return Ok(PurificationReport {
            verdict: if all_scalar {
                PurificationVerdict::Fails
            } else {
                PurificationVerdict::Holds
            },
            algebraic_witness: None,
            mc_second_eigenvalue: None,
        });
    }

    let family = purification_family(spec);
    let witness = match method {
        PurificationMethod::MonteCarlo(_) => None,
        _ => {
            let found = scalar_compression_subspace(&family, &identity(dim))?;
            found.map(|q| &q * q.adjoint())
        }
    };
    let mc = match method {
        PurificationMethod::Algebraic => None,
        PurificationMethod::Auto(params) | PurificationMethod::MonteCarlo(params) => {
            Some(mc_second_eigenvalue(spec, params)?)
        }
    };

    let verdict = match (&witness, mc) {
        (Some(_), Some(second)) => {
            if second < 1e-4 {
                // algebraic witness says fail, ensemble purified anyway
                PurificationVerdict::Unknown
            } else {
                PurificationVerdict::Fails
            }
        }
        (Some(_), None) => PurificationVerdict::Fails,
        (None, Some(second)) => {
            if second < 1e-4 {
                PurificationVerdict::Holds
            } else {
                PurificationVerdict::Fails
            }
        }
        (None, None) => PurificationVerdict::Unknown,
    };
    Ok(PurificationReport {
        verdict,
        algebraic_witness: witness,
        mc_second_eigenvalue: mc,
    })
}

/// Full structural analysis. Fails with `UnsupportedModel` when the
/// decaying subspace is nontrivial.
pub fn analyze(spec: &ModelSpec, opts: &StructureOptions) -> Result<StructureReport> {
    let mut warnings = Vec::new();
    let spectrum = liouvillian_spectrum(spec);
    let spectral_ok = check_spectral(&spectrum, opts.spectral_tol);
    let (fixed_basis, kernel_warning) = fixed_points_with(spec, opts.null_space_tol)?;
    if let Some(w) = kernel_warning {
        warnings.push(w);
    }
    let (decaying, peripheral_warning) = decaying_subspace(spec)?;
    if let Some(w) = peripheral_warning {
        warnings.push(w);
    }
    let decomposition = minimal_enclosures(spec)?;
    let duals = dual_projectors(spec, &decomposition.states)?;
    let (identifiable, identifiability) =
        check_identifiability(spec, &decomposition.states, opts.identifiability_tol);
    let purification = check_purification(spec, &opts.purification)?;

    Ok(StructureReport {
        fixed_point_basis: fixed_basis,
        invariant_states: decomposition.states,
        enclosures: decomposition.projectors,
        dual_projectors: duals,
        liouvillian_spectrum: spectrum,
        decaying_projector: decaying,
        spectral_ok,
        identifiable,
        identifiability,
        purification,
        warnings,
    })
}
