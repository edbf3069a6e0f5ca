//! Dense linear-algebra substrate for null-space editing.
//!
//! Everything here works on column-major `f64` matrices whose columns are
//! concept representations. Projectors act from the left on those columns:
//! a projector `P` built from a source set `T` satisfies `P·T ≈ 0`, so any
//! perturbation of the form `Δ·P` leaves `W·T` untouched.
//!
//! Two constructors exist. [`null_space_projector`] decomposes the source
//! directly; [`gram_projector`] decomposes the `d×d` Gram matrix `T·Tᵀ`,
//! which has the same left null space but a size independent of the number
//! of columns.

use std::cmp::Ordering;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{EditError, Result};

pub type Matrix = DMatrix<f64>;

/// Relative singular-value cutoff used when none is given.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Condition estimates above this reject a normal-equation solve.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative eigenvalue floor for the Gram route. Squaring the source halves
/// the usable precision, so Gram eigenvalues below `1e-12·λ_max` (singular
/// values below `1e-6·σ_max`) cannot be told apart from rounding noise.
pub const GRAM_EIGEN_FLOOR: f64 = 1e-12;

pub(crate) fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EditError::NonFiniteInput(what))
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol >= 0.0 {
        Ok(())
    } else {
        Err(EditError::InvalidArgument(format!(
            "tolerance must be finite and >= 0, got {tol}"
        )))
    }
}

pub(crate) fn check_ridge(ridge: f64) -> Result<()> {
    if ridge.is_finite() && ridge >= 0.0 {
        Ok(())
    } else {
        Err(EditError::InvalidArgument(format!(
            "ridge must be finite and >= 0, got {ridge}"
        )))
    }
}

/// Horizontal concatenation `[a b]`.
pub fn hstack(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(EditError::shape(format!(
            "cannot concatenate {} rows with {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    Ok(out)
}

/// `m·mᵀ`, symmetrized.
pub fn gram(m: &Matrix) -> Matrix {
    let g = m * m.transpose();
    symmetrize(&g)
}

pub(crate) fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

// ── Domain types ────────────────────────────────────────────────────

/// A `d×n` matrix whose columns are text-token representations.
///
/// `n = 0` is the empty set and is legal. The label is a free-form role tag
/// such as `"preserve"`, `"erase"`, `"target"` or `"ledger"`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    data: Matrix,
    label: String,
}

impl EmbeddingSet {
    pub fn new(data: Matrix, label: impl Into<String>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(EditError::shape("embedding dimension must be >= 1"));
        }
        ensure_finite(&data, "embedding set")?;
        Ok(Self {
            data,
            label: label.into(),
        })
    }

    pub fn empty(dim: usize, label: impl Into<String>) -> Self {
        assert!(dim > 0, "embedding dimension must be >= 1");
        Self {
            data: Matrix::zeros(dim, 0),
            label: label.into(),
        }
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn into_data(self) -> Matrix {
        self.data
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Representation dimension `d`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of concept tokens `n`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// Column-wise concatenation; keeps this set's label.
    pub fn concat(&self, other: &EmbeddingSet) -> Result<EmbeddingSet> {
        Ok(Self {
            data: hstack(&self.data, &other.data)?,
            label: self.label.clone(),
        })
    }

    pub fn gram(&self) -> Matrix {
        gram(&self.data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Key,
    Value,
}

/// A `d_out×d_in` cross-attention projection (`W_k` or `W_v`).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    data: Matrix,
    kind: WeightKind,
}

impl WeightMatrix {
    pub fn new(data: Matrix, kind: WeightKind) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(EditError::shape("weight matrix must be nonempty"));
        }
        ensure_finite(&data, "weight matrix")?;
        Ok(Self { data, kind })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn into_data(self) -> Matrix {
        self.data
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn d_out(&self) -> usize {
        self.data.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.data.ncols()
    }

    /// `W·T` with a dimension check.
    pub fn map(&self, set: &EmbeddingSet) -> Result<Matrix> {
        if set.dim() != self.d_in() {
            return Err(EditError::shape(format!(
                "weight expects inputs of dimension {}, `{}` has {}",
                self.d_in(),
                set.label(),
                set.dim()
            )));
        }
        Ok(&self.data * set.data())
    }
}

/// Symmetric idempotent `d×d` matrix annihilating a source set.
///
/// The orthonormal basis of its range is kept alongside the dense matrix;
/// solvers work in that basis so that `Δ·P = Δ` holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceProjector {
    data: Matrix,
    basis: Matrix,
    source_rank: usize,
    kept_dim: usize,
    tol: f64,
}

impl NullSpaceProjector {
    /// Builds `P = Û·Ûᵀ` from an orthonormal basis whose columns are already
    /// ordered from smallest to largest source singular value.
    fn from_ordered_basis(
        ordered: Matrix,
        cap: Option<usize>,
        source_rank: usize,
        tol: f64,
    ) -> Self {
        let natural = ordered.ncols();
        let kept = cap.map_or(natural, |c| c.min(natural));
        let basis = ordered.columns(0, kept).into_owned();
        let data = symmetrize(&(&basis * basis.transpose()));
        Self {
            data,
            basis,
            source_rank,
            kept_dim: kept,
            tol,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: Matrix::identity(dim, dim),
            basis: Matrix::identity(dim, dim),
            source_rank: 0,
            kept_dim: dim,
            tol: 0.0,
        }
    }

    /// Recovers a projector from a stored dense matrix (e.g. a bundle).
    ///
    /// The range basis is re-derived from the eigenvectors whose eigenvalue
    /// rounds to one.
    pub fn from_matrix(data: Matrix, tol: f64) -> Result<Self> {
        if data.nrows() != data.ncols() || data.nrows() == 0 {
            return Err(EditError::shape(format!(
                "projector must be square and nonempty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        ensure_finite(&data, "projector")?;
        let dim = data.nrows();
        let eig = SymmetricEigen::new(symmetrize(&data));
        let mut cols: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        cols.sort_unstable();
        let mut basis = Matrix::zeros(dim, cols.len());
        for (j, &i) in cols.iter().enumerate() {
            basis.set_column(j, &eig.eigenvectors.column(i));
        }
        let kept = cols.len();
        Ok(Self {
            data,
            basis,
            source_rank: dim - kept,
            kept_dim: kept,
            tol,
        })
    }

    /// Same source, kept dimension capped at `cap`. Basis columns are ordered
    /// smallest singular value first, so truncations are nested.
    pub fn truncated(&self, cap: usize) -> Self {
        if cap >= self.kept_dim {
            return self.clone();
        }
        Self::from_ordered_basis(self.basis.clone(), Some(cap), self.source_rank, self.tol)
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    /// Orthonormal `d×kept_dim` basis of the retained null space.
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn source_rank(&self) -> usize {
        self.source_rank
    }

    pub fn kept_dim(&self) -> usize {
        self.kept_dim
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_identity(&self) -> bool {
        self.kept_dim == self.dim()
    }

    /// Basis to restrict to, or `None` when the projector is the identity.
    pub(crate) fn restriction(&self) -> Option<&Matrix> {
        if self.is_identity() {
            None
        } else {
            Some(&self.basis)
        }
    }

    /// `P·x`, evaluated through the basis.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.nrows() != self.dim() {
            return Err(EditError::shape(format!(
                "projector of dimension {} applied to {} rows",
                self.dim(),
                x.nrows()
            )));
        }
        if self.is_identity() {
            return Ok(x.clone());
        }
        Ok(&self.basis * (self.basis.transpose() * x))
    }

    /// Measures the projector laws against the set it should annihilate.
    pub fn check(&self, source: &Matrix) -> ProjectorCheck {
        let p = &self.data;
        let p_max = p.amax();
        let p_fro = p.norm();
        let annihilated = if source.nrows() == self.dim() {
            (p * source).norm()
        } else {
            f64::INFINITY
        };
        ProjectorCheck {
            symmetry: (p - p.transpose()).amax() / (1.0 + p_max),
            idempotence: (p * p - p).norm() / (1.0 + p_fro),
            annihilation: annihilated / (1.0 + source.norm()),
            trace_error: (p.trace() - self.kept_dim as f64).abs(),
        }
    }
}

/// Relative violations of the projector laws; see [`NullSpaceProjector::check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectorCheck {
    pub symmetry: f64,
    pub idempotence: f64,
    pub annihilation: f64,
    pub trace_error: f64,
}

impl ProjectorCheck {
    pub const SYMMETRY_TOL: f64 = 1e-10;
    pub const IDEMPOTENCE_TOL: f64 = 1e-8;
    pub const ANNIHILATION_TOL: f64 = 1e-8;
    pub const TRACE_TOL: f64 = 1e-6;

    pub fn holds(&self) -> bool {
        self.symmetry <= Self::SYMMETRY_TOL
            && self.idempotence <= Self::IDEMPOTENCE_TOL
            && self.annihilation <= Self::ANNIHILATION_TOL
            && self.trace_error <= Self::TRACE_TOL
    }
}

/// Full left factor, sorted singular values and thin right factor:
/// `A = U[:, ..k]·diag(σ)·Vᵀ` with `k = min(d, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `d×d` orthogonal.
    pub left_vectors: Matrix,
    /// Nonincreasing, length `min(d, n)`.
    pub singular_values: DVector<f64>,
    /// `n×min(d, n)` with orthonormal columns.
    pub right_vectors: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.singular_values.len();
        let u = self.left_vectors.columns(0, k);
        let scaled = Matrix::from_fn(u.nrows(), k, |i, j| u[(i, j)] * self.singular_values[j]);
        scaled * self.right_vectors.transpose()
    }
}

// ── Decompositions ──────────────────────────────────────────────────

/// Singular value decomposition with a complete `d×d` left factor.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(EditError::shape("svd of an empty matrix"));
    }
    ensure_finite(a, "svd input")?;
    let (d, n) = a.shape();
    let k = d.min(n);

    let (u_raw, sigma_raw, v_raw) = checked_svd(a).ok_or(EditError::NoConvergence("svd"))?;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        sigma_raw[j]
            .partial_cmp(&sigma_raw[i])
            .unwrap_or(Ordering::Equal)
    });
    let singular_values = DVector::from_iterator(k, order.iter().map(|&i| sigma_raw[i]));
    let mut u_thin = Matrix::zeros(d, k);
    let mut right = Matrix::zeros(n, k);
    for (j, &i) in order.iter().enumerate() {
        u_thin.set_column(j, &u_raw.column(i));
        right.set_column(j, &v_raw.column(i));
    }

    // Left vectors paired with (numerically) zero singular values are not
    // reliably orthonormal; rebuild them by completing the trustworthy ones.
    let top = singular_values.get(0).copied().unwrap_or(0.0);
    let floor = top * (d.max(n) as f64) * f64::EPSILON;
    let reliable = singular_values.iter().take_while(|&&s| s > floor).count();
    let left_vectors = complete_basis(&u_thin.columns(0, reliable).into_owned());
    Ok(SvdResult {
        left_vectors,
        singular_values,
        right_vectors: right,
    })
}

// Factors are checked against the input before they are accepted.
const SVD_RECONSTRUCTION_TOL: f64 = 1e-11;

/// Thin factors `(U, σ, V)` of `a`, computed with faer.
fn checked_svd(a: &Matrix) -> Option<(Matrix, DVector<f64>, Matrix)> {
    let (d, n) = a.shape();
    let k = d.min(n);
    let f = faer::Mat::<f64>::from_fn(d, n, |i, j| a[(i, j)]).thin_svd().ok()?;
    let (u, s, v) = (f.U(), f.S().column_vector(), f.V());
    let u = Matrix::from_fn(d, k, |i, j| u[(i, j)]);
    let sigma = DVector::from_fn(k, |i, _| s[i]);
    let v = Matrix::from_fn(n, k, |i, j| v[(i, j)]);
    let recon = Matrix::from_fn(d, k, |i, j| u[(i, j)] * sigma[j]) * v.transpose();
    let ok = sigma.iter().all(|x| x.is_finite())
        && (recon - a).norm() <= SVD_RECONSTRUCTION_TOL * a.norm();
    ok.then_some((u, sigma, v))
}

/// Extends `d×k` orthonormal columns to a `d×d` orthogonal matrix whose
/// first `k` columns are the input.
fn complete_basis(u: &Matrix) -> Matrix {
    let (d, k) = u.shape();
    if k == d {
        return u.clone();
    }
    let mut aug = Matrix::zeros(d, k + d);
    aug.columns_mut(0, k).copy_from(u);
    aug.columns_mut(k, d).fill_with_identity();
    let mut q = aug.qr().q();
    q.columns_mut(0, k).copy_from(u);
    q
}

/// Null-space projector of `source`, from the left singular vectors whose
/// singular values fall at or below `tol·σ_max`.
///
/// With `kept_dim_cap` below the natural null dimension only the vectors
/// with the smallest singular values are kept.
pub fn null_space_projector(
    source: &EmbeddingSet,
    tol: f64,
    kept_dim_cap: Option<usize>,
) -> Result<NullSpaceProjector> {
    check_tol(tol)?;
    let d = source.dim();
    check_cap(kept_dim_cap, d)?;
    if source.is_empty() {
        return Ok(NullSpaceProjector::from_ordered_basis(
            Matrix::identity(d, d),
            kept_dim_cap,
            0,
            tol,
        ));
    }

    let f = svd(source.data())?;
    let sigma_max = f.singular_values.get(0).copied().unwrap_or(0.0);
    let cutoff = tol * sigma_max;
    let sigma = |i: usize| f.singular_values.get(i).copied().unwrap_or(0.0);
    // Singular values are sorted, so the null directions are a suffix; walk
    // it backwards to order them smallest first.
    let null: Vec<usize> = (0..d).rev().filter(|&i| sigma(i) <= cutoff).collect();
    let mut ordered = Matrix::zeros(d, null.len());
    for (j, &i) in null.iter().enumerate() {
        ordered.set_column(j, &f.left_vectors.column(i));
    }
    let rank = d - null.len();
    Ok(NullSpaceProjector::from_ordered_basis(
        ordered,
        kept_dim_cap,
        rank,
        tol,
    ))
}

fn check_cap(cap: Option<usize>, dim: usize) -> Result<()> {
    match cap {
        Some(c) if c > dim => Err(EditError::CapExceedsDimension { cap: c, dim }),
        _ => Ok(()),
    }
}

/// Null-space projector computed from the Gram matrix `source·sourceᵀ`.
pub fn gram_projector(source: &EmbeddingSet, tol: f64) -> Result<NullSpaceProjector> {
    projector_from_gram(&source.gram(), tol, None)
}

/// [`gram_projector`] with a kept-dimension cap.
pub fn gram_projector_capped(
    source: &EmbeddingSet,
    tol: f64,
    kept_dim_cap: Option<usize>,
) -> Result<NullSpaceProjector> {
    projector_from_gram(&source.gram(), tol, kept_dim_cap)
}

/// Projector annihilating every set whose Gram matrix is `gram`.
///
/// Eigenvalues `λ_i ≤ max(tol², GRAM_EIGEN_FLOOR)·λ_max` count as null, which
/// matches the direct cutoff `σ_i ≤ tol·σ_max` since `λ_i = σ_i²`.
pub fn projector_from_gram(
    gram: &Matrix,
    tol: f64,
    kept_dim_cap: Option<usize>,
) -> Result<NullSpaceProjector> {
    check_tol(tol)?;
    if gram.nrows() != gram.ncols() || gram.nrows() == 0 {
        return Err(EditError::shape(format!(
            "gram matrix must be square and nonempty, got {}x{}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    ensure_finite(gram, "gram matrix")?;
    let d = gram.nrows();
    check_cap(kept_dim_cap, d)?;

    let eig = SymmetricEigen::new(symmetrize(gram));
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let lambda_max = lambda.iter().copied().fold(0.0, f64::max);
    let cutoff = (tol * tol).max(GRAM_EIGEN_FLOOR) * lambda_max;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| lambda[i].partial_cmp(&lambda[j]).unwrap_or(Ordering::Equal));
    let null: Vec<usize> = order.into_iter().filter(|&i| lambda[i] <= cutoff).collect();
    let mut ordered = Matrix::zeros(d, null.len());
    for (j, &i) in null.iter().enumerate() {
        ordered.set_column(j, &eig.eigenvectors.column(i));
    }
    let rank = d - null.len();
    Ok(NullSpaceProjector::from_ordered_basis(
        ordered,
        kept_dim_cap,
        rank,
        tol,
    ))
}

/// Moore–Penrose pseudo-inverse with singular-value cutoff `tol·σ_max`.
pub fn pseudo_inverse(a: &Matrix, tol: f64) -> Result<Matrix> {
    check_tol(tol)?;
    let f = svd(a)?;
    let k = f.singular_values.len();
    let cutoff = tol * f.singular_values.get(0).copied().unwrap_or(0.0);
    let mut out = Matrix::zeros(a.ncols(), a.nrows());
    for j in 0..k {
        let s = f.singular_values[j];
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let v = f.right_vectors.column(j);
        let u = f.left_vectors.column(j);
        out += (v * u.transpose()) / s;
    }
    Ok(out)
}

// ── Normal-equation kernel ──────────────────────────────────────────

/// Solves `M·X = rhs` for symmetric positive definite `M`, refusing
/// matrices whose Cholesky-based condition estimate exceeds [`MAX_CONDITION`].
pub fn spd_solve(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if m.nrows() == 0 {
        return Ok(Matrix::zeros(0, rhs.ncols()));
    }
    let chol = Cholesky::new(symmetrize(m)).ok_or(EditError::SingularSystem {
        condition: f64::INFINITY,
    })?;
    let diag = chol.l_dirty().diagonal();
    let lmax = diag.iter().copied().fold(0.0, f64::max);
    let lmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if lmin > 0.0 {
        (lmax / lmin).powi(2)
    } else {
        f64::INFINITY
    };
    if !(condition <= MAX_CONDITION) {
        return Err(EditError::SingularSystem { condition });
    }
    Ok(chol.solve(rhs))
}

/// Minimizes `‖B·Z − R‖² + tr(B·E·Bᵀ) + ridge·‖B‖²` over `B`.
///
/// Without an extra Gram term the smaller of the two equivalent systems is
/// solved: `(Z·Zᵀ + ridge·I)` when `Z` has at least as many columns as rows,
/// `(Zᵀ·Z + ridge·I)` otherwise. With `ridge = 0` the second form yields the
/// minimum-norm interpolant.
pub(crate) fn ridge_normal_solve(
    z: &Matrix,
    r: &Matrix,
    extra: Option<&Matrix>,
    ridge: f64,
) -> Result<Matrix> {
    let (k, n) = z.shape();
    if k == 0 || (n == 0 && extra.is_none()) {
        return Ok(Matrix::zeros(r.nrows(), k));
    }
    if extra.is_none() && n < k {
        let mut m = z.transpose() * z;
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        let y_t = spd_solve(&m, &r.transpose())?;
        return Ok(y_t.transpose() * z.transpose());
    }
    let mut m = z * z.transpose();
    if let Some(e) = extra {
        m += e;
    }
    for i in 0..k {
        m[(i, i)] += ridge;
    }
    let rhs = z * r.transpose();
    Ok(spd_solve(&m, &rhs)?.transpose())
}

/// Shared solve behind every editor: returns `D = Q·B·Ûᵀ` minimizing
///
/// `‖(W + D)·K − V‖² + tr(D·G·Dᵀ) + ridge·‖D‖²`
///
/// where `Q` (output side) and `Û` (input side) are orthonormal bases of
/// the allowed subspaces (`None` = unrestricted) and `G` is an optional
/// extra input-space Gram penalty.
pub(crate) fn constrained_update(
    w: &Matrix,
    keys: &Matrix,
    targets: &Matrix,
    out_basis: Option<&Matrix>,
    in_basis: Option<&Matrix>,
    extra_gram: Option<&Matrix>,
    ridge: f64,
) -> Result<Matrix> {
    check_ridge(ridge)?;
    let (d_out, d_in) = w.shape();
    if keys.nrows() != d_in {
        return Err(EditError::shape(format!(
            "inputs have {} rows, weight expects {}",
            keys.nrows(),
            d_in
        )));
    }
    if targets.nrows() != d_out || targets.ncols() != keys.ncols() {
        return Err(EditError::shape(format!(
            "targets are {}x{}, expected {}x{}",
            targets.nrows(),
            targets.ncols(),
            d_out,
            keys.ncols()
        )));
    }
    let residual = targets - w * keys;
    let residual = match out_basis {
        Some(q) => q.transpose() * residual,
        None => residual,
    };
    let z = match in_basis {
        Some(u) => u.transpose() * keys,
        None => keys.clone(),
    };
    let extra_gram = extra_gram.filter(|g| g.iter().any(|&v| v != 0.0));
    let extra = extra_gram.map(|g| match in_basis {
        Some(u) => symmetrize(&(u.transpose() * g * u)),
        None => g.clone(),
    });
    if residual.iter().all(|&v| v == 0.0) {
        return Ok(Matrix::zeros(d_out, d_in));
    }
    let b = ridge_normal_solve(&z, &residual, extra.as_ref(), ridge)?;
    let b = match out_basis {
        Some(q) => q * b,
        None => b,
    };
    Ok(match in_basis {
        Some(u) => b * u.transpose(),
        None => b,
    })
}

/// Returns `Δ_applied = Δ̂·P` where `Δ̂` minimizes
/// `‖(W + Δ̂·P)·inputs − targets‖² + ridge·‖Δ̂·P‖²`.
pub fn projected_least_squares(
    w: &WeightMatrix,
    inputs: &EmbeddingSet,
    targets: &Matrix,
    projector: &NullSpaceProjector,
    ridge: f64,
) -> Result<Matrix> {
    ensure_finite(targets, "targets")?;
    if projector.dim() != w.d_in() {
        return Err(EditError::shape(format!(
            "projector dimension {} does not match weight input dimension {}",
            projector.dim(),
            w.d_in()
        )));
    }
    constrained_update(
        w.data(),
        inputs.data(),
        targets,
        None,
        projector.restriction(),
        None,
        ridge,
    )
}
