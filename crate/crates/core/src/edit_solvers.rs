//! Closed-form editors for cross-attention projections.
//!
//! Three algorithms share one solve kernel:
//!
//! - [`uce_edit`]: the baseline that trades erasure against preservation
//!   inside a single regularized least-squares problem.
//! - [`ace_edit`]: erasure-only least squares restricted to the null space
//!   of the preserved inputs, with each weight's alignment targets projected
//!   onto the null space of the *other* weight's preserved outputs.
//! - [`sequential_edit`]: null-space restricted edits that also penalize
//!   disturbance of previously edited keys held in a [`KnowledgeLedger`].
//!
//! Targets enter as raw embeddings `S` and are mapped through the original
//! weight of the same kind (`S′ = W_k·S`, `S″ = W_v·S`) before any
//! projection. Output-space projectors multiply targets from the left.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{EditError, Result};
use crate::linalg::{
    constrained_update, ensure_finite, gram, hstack, projector_from_gram, symmetrize,
    EmbeddingSet, Matrix, NullSpaceProjector, WeightKind, WeightMatrix, DEFAULT_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EditMode {
    #[serde(rename = "uce")]
    UceBaseline,
    #[serde(rename = "ace")]
    Ace,
    #[serde(rename = "sequential")]
    Sequential,
}

impl EditMode {
    pub const ALL: [EditMode; 3] = [EditMode::UceBaseline, EditMode::Ace, EditMode::Sequential];

    pub fn as_str(self) -> &'static str {
        match self {
            EditMode::UceBaseline => "uce",
            EditMode::Ace => "ace",
            EditMode::Sequential => "sequential",
        }
    }
}

impl fmt::Display for EditMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EditMode {
    type Err = EditError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uce" | "ucebaseline" | "uce_baseline" => Ok(EditMode::UceBaseline),
            "ace" => Ok(EditMode::Ace),
            "sequential" | "seq" => Ok(EditMode::Sequential),
            other => Err(EditError::InvalidArgument(format!("unknown edit mode `{other}`"))),
        }
    }
}

/// Inputs of one edit: concepts to erase, their safe targets, and concepts
/// whose outputs must not move.
#[derive(Debug, Clone)]
pub struct EditRequest {
    pub erase: EmbeddingSet,
    pub targets: EmbeddingSet,
    pub preserve: EmbeddingSet,
    pub mode: EditMode,
    pub ridge: f64,
    pub tol: f64,
    pub kept_dim_cap: Option<usize>,
    /// Sequential mode only: project targets onto the null space of the
    /// ledger's output basis before solving.
    pub output_projection: bool,
}

impl EditRequest {
    pub const DEFAULT_RIDGE: f64 = 1.0;

    pub fn new(
        mode: EditMode,
        erase: EmbeddingSet,
        targets: EmbeddingSet,
        preserve: EmbeddingSet,
    ) -> Result<Self> {
        let req = Self {
            erase,
            targets,
            preserve,
            mode,
            ridge: Self::DEFAULT_RIDGE,
            tol: DEFAULT_TOL,
            kept_dim_cap: None,
            output_projection: false,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_kept_dim_cap(mut self, cap: Option<usize>) -> Self {
        self.kept_dim_cap = cap;
        self
    }

    pub fn with_output_projection(mut self, on: bool) -> Self {
        self.output_projection = on;
        self
    }

    pub fn with_mode(mut self, mode: EditMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.erase.len() != self.targets.len() {
            return Err(EditError::shape(format!(
                "{} erase columns but {} target columns",
                self.erase.len(),
                self.targets.len()
            )));
        }
        let d = self.erase.dim();
        if self.targets.dim() != d || self.preserve.dim() != d {
            return Err(EditError::shape(format!(
                "erase/targets/preserve dimensions differ: {}/{}/{}",
                d,
                self.targets.dim(),
                self.preserve.dim()
            )));
        }
        Ok(())
    }

    fn expect_mode(&self, mode: EditMode) -> Result<()> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(EditError::InvalidArgument(format!(
                "request mode is {}, solver expects {}",
                self.mode, mode
            )))
        }
    }
}

/// Perturbations plus diagnostics.
///
/// Single-weight solvers fill only the slot matching the weight's kind.
#[derive(Debug, Clone)]
pub struct EditResult {
    pub delta_k: Option<Matrix>,
    pub delta_v: Option<Matrix>,
    /// Frobenius norm of `(W + Δ)·T₁ − target` over every edited weight.
    pub erasure_residual: f64,
    /// `‖Δ·T₀‖_F / ‖W·T₀‖_F` over every edited weight.
    pub preservation_drift: f64,
    pub projector_rank_in: usize,
    pub projector_rank_out: usize,
    pub wall_time: Duration,
}

impl EditResult {
    pub fn delta(&self, kind: WeightKind) -> Option<&Matrix> {
        match kind {
            WeightKind::Key => self.delta_k.as_ref(),
            WeightKind::Value => self.delta_v.as_ref(),
        }
    }

    pub fn diagnostics(&self) -> EditDiagnostics {
        EditDiagnostics {
            erasure_residual: self.erasure_residual,
            preservation_drift: self.preservation_drift,
            projector_rank_in: self.projector_rank_in,
            projector_rank_out: self.projector_rank_out,
            wall_time_s: self.wall_time.as_secs_f64(),
        }
    }

    fn single(
        kind: WeightKind,
        delta: Matrix,
        fit: Fit,
        rank_in: usize,
        rank_out: usize,
        started: Instant,
    ) -> Self {
        let (delta_k, delta_v) = match kind {
            WeightKind::Key => (Some(delta), None),
            WeightKind::Value => (None, Some(delta)),
        };
        Self {
            delta_k,
            delta_v,
            erasure_residual: fit.residual(),
            preservation_drift: fit.drift(),
            projector_rank_in: rank_in,
            projector_rank_out: rank_out,
            wall_time: started.elapsed(),
        }
    }
}

/// Serializable summary of an [`EditResult`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditDiagnostics {
    pub erasure_residual: f64,
    pub preservation_drift: f64,
    pub projector_rank_in: usize,
    pub projector_rank_out: usize,
    pub wall_time_s: f64,
}

/// Accumulates squared residual and drift terms across weights.
#[derive(Debug, Default, Clone, Copy)]
struct Fit {
    residual_sq: f64,
    drift_sq: f64,
    base_sq: f64,
}

impl Fit {
    fn add(
        &mut self,
        w: &Matrix,
        delta: &Matrix,
        erase: &Matrix,
        target: &Matrix,
        preserve: &Matrix,
    ) {
        let fitted = (w + delta) * erase;
        self.residual_sq += (fitted - target).norm_squared();
        if preserve.ncols() > 0 {
            self.drift_sq += (delta * preserve).norm_squared();
            self.base_sq += (w * preserve).norm_squared();
        }
    }

    fn residual(&self) -> f64 {
        self.residual_sq.sqrt()
    }

    fn drift(&self) -> f64 {
        relative_change(self.drift_sq.sqrt(), self.base_sq.sqrt())
    }
}

pub(crate) fn relative_change(change: f64, base: f64) -> f64 {
    if base > 0.0 {
        change / base
    } else {
        change
    }
}

fn check_weight_input(w: &WeightMatrix, req: &EditRequest) -> Result<()> {
    if w.d_in() != req.erase.dim() {
        return Err(EditError::shape(format!(
            "weight input dimension {} does not match embedding dimension {}",
            w.d_in(),
            req.erase.dim()
        )));
    }
    Ok(())
}

fn check_pair(w_k: &WeightMatrix, w_v: &WeightMatrix) -> Result<()> {
    if w_k.data().shape() != w_v.data().shape() {
        return Err(EditError::shape(format!(
            "key and value weights differ in shape: {:?} vs {:?}",
            w_k.data().shape(),
            w_v.data().shape()
        )));
    }
    Ok(())
}

// ── UCE baseline ────────────────────────────────────────────────────

/// Baseline closed form
/// `Δ = (S′ − W·T₁)·T₁ᵀ·(T₁T₁ᵀ + T₀T₀ᵀ + ridge·I)⁻¹`.
///
/// Rank-deficient instances with `ridge = 0` fall back to the minimum-norm
/// solution when the stacked inputs `[T₁ T₀]` have full column rank.
pub fn uce_edit(w: &WeightMatrix, req: &EditRequest) -> Result<EditResult> {
    req.expect_mode(EditMode::UceBaseline)?;
    req.validate()?;
    check_weight_input(w, req)?;
    let started = Instant::now();
    let mapped = w.map(&req.targets)?;
    let delta = uce_delta_mapped(w, &req.erase, &mapped, &req.preserve, req.ridge)?;
    let mut fit = Fit::default();
    fit.add(
        w.data(),
        &delta,
        req.erase.data(),
        &mapped,
        req.preserve.data(),
    );
    Ok(EditResult::single(
        w.kind(),
        delta,
        fit,
        w.d_in(),
        w.d_out(),
        started,
    ))
}

/// Baseline perturbation alone, recomputing `T₀·T₀ᵀ` on every call.
pub fn uce_delta(
    w: &WeightMatrix,
    erase: &EmbeddingSet,
    targets: &EmbeddingSet,
    preserve: &EmbeddingSet,
    ridge: f64,
) -> Result<Matrix> {
    if erase.len() != targets.len() || preserve.dim() != erase.dim() {
        return Err(EditError::shape("erase, targets and preserve do not conform"));
    }
    let mapped = w.map(targets)?;
    uce_delta_mapped(w, erase, &mapped, preserve, ridge)
}

fn uce_delta_mapped(
    w: &WeightMatrix,
    erase: &EmbeddingSet,
    mapped_targets: &Matrix,
    preserve: &EmbeddingSet,
    ridge: f64,
) -> Result<Matrix> {
    if erase.is_empty() {
        return Ok(Matrix::zeros(w.d_out(), w.d_in()));
    }
    if w.d_in() <= erase.len() + preserve.len() {
        return uce_delta_from_gram(w.data(), erase.data(), mapped_targets, &preserve.gram(), ridge);
    }
    // Fewer columns than dimensions: solve in column space.
    let inputs = hstack(erase.data(), preserve.data())?;
    let outputs = hstack(mapped_targets, &(w.data() * preserve.data()))?;
    constrained_update(w.data(), &inputs, &outputs, None, None, None, ridge)
}

fn uce_delta_from_gram(
    w: &Matrix,
    erase: &Matrix,
    mapped_targets: &Matrix,
    preserve_gram: &Matrix,
    ridge: f64,
) -> Result<Matrix> {
    crate::linalg::check_ridge(ridge)?;
    let residual = mapped_targets - w * erase;
    if residual.iter().all(|&v| v == 0.0) {
        return Ok(Matrix::zeros(w.nrows(), w.ncols()));
    }
    let mut normal = gram(erase) + preserve_gram;
    for i in 0..normal.nrows() {
        normal[(i, i)] += ridge;
    }
    let rhs = erase * residual.transpose();
    Ok(crate::linalg::spd_solve(&normal, &rhs)?.transpose())
}

/// UCE delta against a precomputed preserve Gram `T₀·T₀ᵀ`.
pub fn uce_delta_with_gram(
    w: &WeightMatrix,
    erase: &EmbeddingSet,
    targets: &EmbeddingSet,
    preserve_gram: &Matrix,
    ridge: f64,
) -> Result<Matrix> {
    if preserve_gram.shape() != (w.d_in(), w.d_in()) {
        return Err(EditError::shape("preserve gram must be d_in x d_in"));
    }
    if erase.dim() != w.d_in() || erase.len() != targets.len() {
        return Err(EditError::shape("erase set does not conform to weight and targets"));
    }
    let mapped = w.map(targets)?;
    if erase.is_empty() {
        return Ok(Matrix::zeros(w.d_out(), w.d_in()));
    }
    uce_delta_from_gram(w.data(), erase.data(), &mapped, preserve_gram, ridge)
}

// ── ACE ─────────────────────────────────────────────────────────────

/// The three projectors an ACE edit needs. They depend only on the
/// preserved set and the weights' action on it, so they can be built once
/// and reused across edits.
#[derive(Debug, Clone)]
pub struct AceProjectors {
    /// `P`: null space of `T₀` in input space.
    pub input: NullSpaceProjector,
    /// `P′`: null space of `W_k·T₀`.
    pub key_out: NullSpaceProjector,
    /// `P″`: null space of `W_v·T₀`.
    pub value_out: NullSpaceProjector,
}

impl AceProjectors {
    pub fn build(
        w_k: &WeightMatrix,
        w_v: &WeightMatrix,
        preserve: &EmbeddingSet,
        tol: f64,
        kept_dim_cap: Option<usize>,
    ) -> Result<Self> {
        Self::from_preserve_gram(w_k, w_v, &preserve.gram(), tol, kept_dim_cap)
    }

    /// Builds all three projectors from `G = T₀·T₀ᵀ`; the output-space Grams
    /// are `W·G·Wᵀ`, so nothing here scales with the number of preserved
    /// concepts.
    pub fn from_preserve_gram(
        w_k: &WeightMatrix,
        w_v: &WeightMatrix,
        preserve_gram: &Matrix,
        tol: f64,
        kept_dim_cap: Option<usize>,
    ) -> Result<Self> {
        check_pair(w_k, w_v)?;
        if preserve_gram.shape() != (w_k.d_in(), w_k.d_in()) {
            return Err(EditError::shape("preserve gram must be d_in x d_in"));
        }
        let input = projector_from_gram(preserve_gram, tol, kept_dim_cap)?;
        if input.kept_dim() == 0 {
            return Err(EditError::EmptyNullSpace { side: "input" });
        }
        let out_gram = |w: &WeightMatrix| symmetrize(&(w.data() * preserve_gram * w.data().transpose()));
        let key_out = projector_from_gram(&out_gram(w_k), tol, None)?;
        let value_out = projector_from_gram(&out_gram(w_v), tol, None)?;
        Ok(Self {
            input,
            key_out,
            value_out,
        })
    }
}

/// Raw ACE perturbations with the cross-projected targets they fit.
#[derive(Debug, Clone)]
pub struct AceDeltas {
    pub delta_k: Matrix,
    pub delta_v: Matrix,
    /// `P″·W_k·S`
    pub target_k: Matrix,
    /// `P′·W_v·S`
    pub target_v: Matrix,
}

/// Solves both halves of the cross-projected objective without diagnostics.
pub fn ace_deltas(
    w_k: &WeightMatrix,
    w_v: &WeightMatrix,
    erase: &EmbeddingSet,
    targets: &EmbeddingSet,
    projectors: &AceProjectors,
    ridge: f64,
) -> Result<AceDeltas> {
    check_pair(w_k, w_v)?;
    if erase.len() != targets.len() {
        return Err(EditError::shape("erase and targets differ in column count"));
    }
    let target_k = projectors.value_out.apply(&w_k.map(targets)?)?;
    let target_v = projectors.key_out.apply(&w_v.map(targets)?)?;
    let restrict = projectors.input.restriction();
    let delta_k = constrained_update(w_k.data(), erase.data(), &target_k, None, restrict, None, ridge)?;
    let delta_v = constrained_update(w_v.data(), erase.data(), &target_v, None, restrict, None, ridge)?;
    Ok(AceDeltas {
        delta_k,
        delta_v,
        target_k,
        target_v,
    })
}

/// Full ACE edit: input null-space projection of the perturbation plus
/// cross null-space projection of the alignment targets.
pub fn ace_edit(w_k: &WeightMatrix, w_v: &WeightMatrix, req: &EditRequest) -> Result<EditResult> {
    req.expect_mode(EditMode::Ace)?;
    req.validate()?;
    check_weight_input(w_k, req)?;
    check_pair(w_k, w_v)?;
    let started = Instant::now();
    let projectors = AceProjectors::build(w_k, w_v, &req.preserve, req.tol, req.kept_dim_cap)?;
    ace_finish(w_k, w_v, req, &projectors, started)
}

/// ACE edit reusing projectors built earlier for the same preserved set.
pub fn ace_edit_with(
    w_k: &WeightMatrix,
    w_v: &WeightMatrix,
    req: &EditRequest,
    projectors: &AceProjectors,
) -> Result<EditResult> {
    req.validate()?;
    check_weight_input(w_k, req)?;
    ace_finish(w_k, w_v, req, projectors, Instant::now())
}

fn ace_finish(
    w_k: &WeightMatrix,
    w_v: &WeightMatrix,
    req: &EditRequest,
    projectors: &AceProjectors,
    started: Instant,
) -> Result<EditResult> {
    let d = ace_deltas(w_k, w_v, &req.erase, &req.targets, projectors, req.ridge)?;
    let mut fit = Fit::default();
    let (t1, t0) = (req.erase.data(), req.preserve.data());
    fit.add(w_k.data(), &d.delta_k, t1, &d.target_k, t0);
    fit.add(w_v.data(), &d.delta_v, t1, &d.target_v, t0);
    Ok(EditResult {
        delta_k: Some(d.delta_k),
        delta_v: Some(d.delta_v),
        erasure_residual: fit.residual(),
        preservation_drift: fit.drift(),
        projector_rank_in: projectors.input.kept_dim(),
        projector_rank_out: projectors.value_out.kept_dim(),
        wall_time: started.elapsed(),
    })
}

/// Erasure-only least squares on both weights with no projection at all;
/// the first of the three ACE steps in isolation.
pub fn erase_only_edit(
    w_k: &WeightMatrix,
    w_v: &WeightMatrix,
    req: &EditRequest,
) -> Result<EditResult> {
    req.validate()?;
    check_weight_input(w_k, req)?;
    check_pair(w_k, w_v)?;
    let started = Instant::now();
    let mut fit = Fit::default();
    let mut solve = |w: &WeightMatrix| -> Result<Matrix> {
        let target = w.map(&req.targets)?;
        let delta = constrained_update(w.data(), req.erase.data(), &target, None, None, None, req.ridge)?;
        fit.add(w.data(), &delta, req.erase.data(), &target, req.preserve.data());
        Ok(delta)
    };
    let delta_k = solve(w_k)?;
    let delta_v = solve(w_v)?;
    Ok(EditResult {
        delta_k: Some(delta_k),
        delta_v: Some(delta_v),
        erasure_residual: fit.residual(),
        preservation_drift: fit.drift(),
        projector_rank_in: w_k.d_in(),
        projector_rank_out: w_k.d_out(),
        wall_time: started.elapsed(),
    })
}

// ── Sequential editing ──────────────────────────────────────────────

/// Previously edited knowledge: the accumulated key Gram `K_p·K_pᵀ` and the
/// value columns `V_p` written so far.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeLedger {
    gram_keys: Matrix,
    output_basis: EmbeddingSet,
    edit_count: usize,
}

impl KnowledgeLedger {
    pub fn new(d_in: usize, d_out: usize) -> Self {
        Self {
            gram_keys: Matrix::zeros(d_in, d_in),
            output_basis: EmbeddingSet::empty(d_out, "ledger"),
            edit_count: 0,
        }
    }

    /// Ledger seeded with a prior key Gram and value columns, counted as
    /// `edit_count` earlier edits.
    pub fn from_parts(gram_keys: Matrix, output_basis: EmbeddingSet, edit_count: usize) -> Result<Self> {
        if gram_keys.nrows() != gram_keys.ncols() || gram_keys.nrows() == 0 {
            return Err(EditError::shape("ledger key gram must be square and nonempty"));
        }
        ensure_finite(&gram_keys, "ledger key gram")?;
        Ok(Self {
            gram_keys: symmetrize(&gram_keys),
            output_basis,
            edit_count,
        })
    }

    pub fn gram_keys(&self) -> &Matrix {
        &self.gram_keys
    }

    pub fn output_basis(&self) -> &EmbeddingSet {
        &self.output_basis
    }

    pub fn edit_count(&self) -> usize {
        self.edit_count
    }

    pub fn d_in(&self) -> usize {
        self.gram_keys.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.output_basis.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.edit_count == 0
    }

    /// Returns a new ledger with `keys` and `values` folded in.
    pub fn absorb(&self, keys: &EmbeddingSet, values: &EmbeddingSet) -> Result<Self> {
        if keys.dim() != self.d_in() || values.dim() != self.d_out() {
            return Err(EditError::shape(format!(
                "ledger is {}->{}, got keys of dim {} and values of dim {}",
                self.d_in(),
                self.d_out(),
                keys.dim(),
                values.dim()
            )));
        }
        if keys.len() != values.len() {
            return Err(EditError::shape("keys and values differ in column count"));
        }
        Ok(Self {
            gram_keys: &self.gram_keys + keys.gram(),
            output_basis: self.output_basis.concat(values)?,
            edit_count: self.edit_count + 1,
        })
    }
}

pub fn absorb_edit(
    ledger: &KnowledgeLedger,
    keys: &EmbeddingSet,
    values: &EmbeddingSet,
) -> Result<KnowledgeLedger> {
    ledger.absorb(keys, values)
}

/// Null-space edit that also protects previously edited keys:
///
/// `Δ = R·K₁ᵀ·P·(K_pK_pᵀ·P + K₁K₁ᵀ·P + ridge·I)⁻¹`, `R = W·S − W·K₁`.
///
/// Solved in the basis of `P`, which gives the same matrix whenever the
/// printed inverse exists and stays defined when `ridge = 0`.
pub fn sequential_edit(
    w: &WeightMatrix,
    req: &EditRequest,
    ledger: &KnowledgeLedger,
) -> Result<EditResult> {
    req.expect_mode(EditMode::Sequential)?;
    req.validate()?;
    check_weight_input(w, req)?;
    let started = Instant::now();
    let projector = projector_from_gram(&req.preserve.gram(), req.tol, req.kept_dim_cap)?;
    sequential_finish(w, req, ledger, &projector, started)
}

/// [`sequential_edit`] with a prebuilt input projector.
pub fn sequential_edit_with(
    w: &WeightMatrix,
    req: &EditRequest,
    ledger: &KnowledgeLedger,
    projector: &NullSpaceProjector,
) -> Result<EditResult> {
    req.validate()?;
    check_weight_input(w, req)?;
    if projector.dim() != w.d_in() {
        return Err(EditError::shape("projector dimension does not match weight input"));
    }
    sequential_finish(w, req, ledger, projector, Instant::now())
}

fn sequential_finish(
    w: &WeightMatrix,
    req: &EditRequest,
    ledger: &KnowledgeLedger,
    projector: &NullSpaceProjector,
    started: Instant,
) -> Result<EditResult> {
    if ledger.d_in() != w.d_in() || ledger.d_out() != w.d_out() {
        return Err(EditError::shape(format!(
            "ledger is {}->{}, weight is {}->{}",
            ledger.d_in(),
            ledger.d_out(),
            w.d_in(),
            w.d_out()
        )));
    }
    let mut target = w.map(&req.targets)?;
    let mut rank_out = w.d_out();
    if req.output_projection {
        let p_out = projector_from_gram(&ledger.output_basis().gram(), req.tol, None)?;
        target = p_out.apply(&target)?;
        rank_out = p_out.kept_dim();
    }
    let extra = (!ledger.is_empty()).then(|| ledger.gram_keys());
    let delta = constrained_update(
        w.data(),
        req.erase.data(),
        &target,
        None,
        projector.restriction(),
        extra,
        req.ridge,
    )?;
    let mut fit = Fit::default();
    fit.add(w.data(), &delta, req.erase.data(), &target, req.preserve.data());
    Ok(EditResult::single(
        w.kind(),
        delta,
        fit,
        projector.kept_dim(),
        rank_out,
        started,
    ))
}

/// Entrywise `W + Δ`.
pub fn apply_edit(w: &WeightMatrix, delta: &Matrix) -> Result<WeightMatrix> {
    if w.data().shape() != delta.shape() {
        return Err(EditError::shape(format!(
            "delta is {:?}, weight is {:?}",
            delta.shape(),
            w.data().shape()
        )));
    }
    WeightMatrix::new(w.data() + delta, w.kind())
}
