//! Attribute-ratio debiasing.
//!
//! Edits here are confined on both sides: the input side to the null space
//! of retained knowledge (`P₂`), the output side to the null space of
//! attribute values balanced in earlier rounds (`P₁`), so the applied
//! perturbation `P₁·Δ·P₂` satisfies `(P₁ΔP₂)ᵀ·V_p = 0`.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edit_solvers::{sequential_edit_with, EditRequest, EditResult, KnowledgeLedger};
use crate::error::{EditError, Result};
use crate::linalg::{
    check_ridge, constrained_update, projector_from_gram, EmbeddingSet, Matrix,
    NullSpaceProjector, WeightMatrix,
};

const SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub desired: f64,
    pub measured: f64,
}

/// Desired and measured attribute proportions for one concept. This is also
/// the on-disk proportions file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub concept: String,
    pub attributes: Vec<Attribute>,
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        if self.attributes.len() < 2 {
            return Err(EditError::InvalidArgument(format!(
                "`{}` needs at least two attributes",
                self.concept
            )));
        }
        for a in &self.attributes {
            for (what, p) in [("desired", a.desired), ("measured", a.measured)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(EditError::InvalidArgument(format!(
                        "{what} proportion of `{}` is {p}, outside [0, 1]",
                        a.name
                    )));
                }
            }
        }
        let total: f64 = self.attributes.iter().map(|a| a.desired).sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(EditError::InvalidArgument(format!(
                "desired proportions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: BiasSpec = serde_json::from_str(text)
            .map_err(|e| EditError::InvalidArgument(format!("proportions file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EditError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub attributes: Vec<String>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasReport {
    pub concept: String,
    pub attributes: Vec<String>,
    /// Aligned with `attributes`.
    pub per_attribute_delta: Vec<f64>,
    pub chosen_dimension: usize,
    pub rounds: Vec<RoundLog>,
}

/// Normalized deviation `|p_desired − p_actual| / p_desired`; zero means the
/// measured proportion hits the desired one exactly.
pub fn bias_delta(p_desired: f64, p_actual: f64) -> Result<f64> {
    if p_desired == 0.0 {
        return Err(EditError::ZeroDesired);
    }
    if !(p_desired > 0.0 && p_desired <= 1.0) || !(0.0..=1.0).contains(&p_actual) {
        return Err(EditError::InvalidArgument(format!(
            "proportions out of range: desired {p_desired}, actual {p_actual}"
        )));
    }
    Ok((p_desired - p_actual).abs() / p_desired)
}

/// Orders attributes into editing rounds: the two most represented first,
/// then the rest one at a time by decreasing measured proportion. Ties go
/// to the lexicographically smaller name.
pub fn multi_round_plan(spec: &BiasSpec) -> Vec<Vec<String>> {
    let mut ranked: Vec<&Attribute> = spec.attributes.iter().collect();
    ranked.sort_by(|a, b| {
        b.measured
            .partial_cmp(&a.measured)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    let mut rounds = Vec::new();
    let mut rest = ranked.into_iter().map(|a| a.name.clone());
    let first: Vec<String> = rest.by_ref().take(2).collect();
    if !first.is_empty() {
        rounds.push(first);
    }
    rounds.extend(rest.map(|name| vec![name]));
    rounds
}

/// Target proportions for one round. A pair is equalized to the mean of its
/// desired values; a singleton keeps its own desired value.
pub fn round_targets(spec: &BiasSpec, round: &[String]) -> Vec<(String, f64)> {
    let desired: Vec<f64> = round
        .iter()
        .filter_map(|n| spec.attributes.iter().find(|a| &a.name == n))
        .map(|a| a.desired)
        .collect();
    if desired.is_empty() {
        return Vec::new();
    }
    let mean = desired.iter().sum::<f64>() / desired.len() as f64;
    round.iter().map(|n| (n.clone(), mean)).collect()
}

/// Edit restricted on both sides. Returns `P₁·Δ̂·P₂` minimizing
///
/// `‖(W + P₁Δ̂P₂)·K₁ − V₁‖² + ‖P₁Δ̂P₂·K_p‖² + ridge·‖P₁Δ̂P₂‖²`
///
/// with `K_p·K_pᵀ` taken from the ledger.
pub fn two_sided_edit(
    w: &WeightMatrix,
    keys: &EmbeddingSet,
    targets: &Matrix,
    p_out: &NullSpaceProjector,
    p_in: &NullSpaceProjector,
    ledger: &KnowledgeLedger,
    ridge: f64,
) -> Result<Matrix> {
    check_ridge(ridge)?;
    if p_out.dim() != w.d_out() || p_in.dim() != w.d_in() {
        return Err(EditError::shape(format!(
            "projectors are {}/{} for a {}x{} weight",
            p_out.dim(),
            p_in.dim(),
            w.d_out(),
            w.d_in()
        )));
    }
    if ledger.d_in() != w.d_in() || ledger.d_out() != w.d_out() {
        return Err(EditError::shape("ledger does not match weight dimensions"));
    }
    if p_out.kept_dim() == 0 {
        return Err(EditError::EmptyNullSpace { side: "output" });
    }
    if p_in.kept_dim() == 0 {
        return Err(EditError::EmptyNullSpace { side: "input" });
    }
    let extra = (!ledger.is_empty()).then(|| ledger.gram_keys());
    constrained_update(
        w.data(),
        keys.data(),
        targets,
        p_out.restriction(),
        p_in.restriction(),
        extra,
        ridge,
    )
}

/// Smallest dimension in `[dim_lo, dim_hi]` whose evaluation reports a
/// residual at or below `epsilon`, found by bisection. `eval` must be
/// nonincreasing in the dimension.
pub fn search_dimension<T>(
    dim_lo: usize,
    dim_hi: usize,
    epsilon: f64,
    mut eval: impl FnMut(usize) -> Result<(f64, T)>,
) -> Result<(usize, T)> {
    if dim_lo > dim_hi {
        return Err(EditError::InvalidArgument(format!(
            "empty dimension range [{dim_lo}, {dim_hi}]"
        )));
    }
    let (top_residual, top) = eval(dim_hi)?;
    if !(top_residual <= epsilon) {
        return Err(EditError::Infeasible {
            lo: dim_lo,
            hi: dim_hi,
            epsilon,
            best: top_residual,
        });
    }
    let (mut lo, mut hi) = (dim_lo, dim_hi);
    let mut best = top;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        let (residual, value) = eval(mid)?;
        if residual <= epsilon {
            hi = mid;
            best = value;
        } else {
            lo = mid + 1;
        }
    }
    Ok((hi, best))
}

/// Chooses the null-space dimension for a single-weight edit: the smallest
/// kept dimension whose edit reaches `erasure_residual ≤ epsilon`.
///
/// Each candidate keeps the retained directions with the smallest singular
/// values of `request.preserve` and solves against an empty ledger.
pub fn dimension_search(
    w: &WeightMatrix,
    request: &EditRequest,
    epsilon: f64,
    dim_lo: usize,
    dim_hi: usize,
) -> Result<(usize, EditResult)> {
    request.validate()?;
    if dim_hi > w.d_in() {
        return Err(EditError::CapExceedsDimension {
            cap: dim_hi,
            dim: w.d_in(),
        });
    }
    let full = projector_from_gram(&request.preserve.gram(), request.tol, None)?;
    let ledger = KnowledgeLedger::new(w.d_in(), w.d_out());
    search_dimension(dim_lo, dim_hi, epsilon, |cap| {
        let res = sequential_edit_with(w, request, &ledger, &full.truncated(cap))?;
        Ok((res.erasure_residual, res))
    })
}

/// Everything the debias pipeline consumes besides the proportions.
#[derive(Debug, Clone)]
pub struct DebiasInputs<'a> {
    pub weight: &'a WeightMatrix,
    /// `K₁`: source-prompt keys, one column per attribute when available.
    pub keys: &'a EmbeddingSet,
    /// `V₁`: desired outputs for `keys`.
    pub targets: &'a Matrix,
    /// Retained knowledge in input space; defines `P₂`.
    pub retain: &'a EmbeddingSet,
    /// `V_p`: attribute outputs balanced earlier; defines `P₁`.
    pub prior_values: &'a EmbeddingSet,
    /// `K_p`: keys edited earlier, penalized through the ledger.
    pub prior_keys: Option<&'a EmbeddingSet>,
    pub ridge: f64,
    pub tol: f64,
    /// `(epsilon, dim_lo, dim_hi)` for the null-space dimension search.
    pub search: Option<(f64, usize, usize)>,
}

/// Runs one two-sided debias edit and assembles its report.
pub fn run_debias(spec: &BiasSpec, inputs: &DebiasInputs<'_>) -> Result<(Matrix, DebiasReport)> {
    spec.validate()?;
    let w = inputs.weight;
    let p_out = projector_from_gram(&inputs.prior_values.gram(), inputs.tol, None)?;
    let p_in_full = projector_from_gram(&inputs.retain.gram(), inputs.tol, None)?;
    let ledger = match inputs.prior_keys {
        Some(k) if !k.is_empty() => {
            KnowledgeLedger::from_parts(k.gram(), inputs.prior_values.clone(), 1)?
        }
        _ => KnowledgeLedger::from_parts(
            Matrix::zeros(w.d_in(), w.d_in()),
            inputs.prior_values.clone(),
            0,
        )?,
    };
    let solve = |p_in: &NullSpaceProjector| {
        two_sided_edit(w, inputs.keys, inputs.targets, &p_out, p_in, &ledger, inputs.ridge)
    };
    let mismatch = |delta: &Matrix| (w.data() + delta) * inputs.keys.data() - inputs.targets;

    let (chosen, delta) = match inputs.search {
        Some((epsilon, lo, hi)) => search_dimension(lo, hi, epsilon, |cap| {
            let delta = solve(&p_in_full.truncated(cap))?;
            Ok((mismatch(&delta).norm(), delta))
        })?,
        None => (p_in_full.kept_dim(), solve(&p_in_full)?),
    };

    let miss = mismatch(&delta);
    let per_column = miss.ncols() == spec.attributes.len();
    let rounds = multi_round_plan(spec)
        .into_iter()
        .map(|names| {
            let residual = if per_column {
                names
                    .iter()
                    .filter_map(|n| spec.attributes.iter().position(|a| &a.name == n))
                    .map(|j| miss.column(j).norm_squared())
                    .sum::<f64>()
                    .sqrt()
            } else {
                miss.norm()
            };
            RoundLog {
                attributes: names,
                residual,
            }
        })
        .collect();

    let per_attribute_delta = spec
        .attributes
        .iter()
        .map(|a| bias_delta(a.desired, a.measured))
        .collect::<Result<Vec<_>>>()?;
    let report = DebiasReport {
        concept: spec.concept.clone(),
        attributes: spec.attributes.iter().map(|a| a.name.clone()).collect(),
        per_attribute_delta,
        chosen_dimension: chosen,
        rounds,
    };
    Ok((delta, report))
}
