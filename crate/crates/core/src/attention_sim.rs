//! Toy single-head cross-attention used to probe how edited key/value
//! projections change attention outputs.
//!
//! Image features act as queries; prompt tokens are mapped through `W_k`
//! and `W_v`. No output projection, no positional terms.

use serde::{Deserialize, Serialize};

use crate::edit_solvers::{apply_edit, relative_change, EditResult};
use crate::error::{EditError, Result};
use crate::linalg::{EmbeddingSet, Matrix, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenRole {
    Preserve,
    Erase,
}

#[derive(Debug, Clone)]
pub struct AttentionInstance {
    /// `m×d_out` query rows.
    pub queries: Matrix,
    pub w_k: WeightMatrix,
    pub w_v: WeightMatrix,
    pub tokens: EmbeddingSet,
    pub token_roles: Vec<TokenRole>,
}

impl AttentionInstance {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(EditError::shape("attention needs at least one token"));
        }
        if self.token_roles.len() != self.tokens.len() {
            return Err(EditError::shape(format!(
                "{} tokens but {} roles",
                self.tokens.len(),
                self.token_roles.len()
            )));
        }
        check_dims(&self.queries, &self.w_k, &self.w_v, &self.tokens)
    }

    /// Instance restricted to the tokens with `role`, or `None` if there are none.
    pub fn sub_prompt(&self, role: TokenRole) -> Option<AttentionInstance> {
        let cols: Vec<usize> = (0..self.tokens.len())
            .filter(|&j| self.token_roles[j] == role)
            .collect();
        if cols.is_empty() {
            return None;
        }
        let data = self.tokens.data().select_columns(cols.iter());
        Some(AttentionInstance {
            queries: self.queries.clone(),
            w_k: self.w_k.clone(),
            w_v: self.w_v.clone(),
            tokens: EmbeddingSet::new(data, self.tokens.label()).ok()?,
            token_roles: vec![role; cols.len()],
        })
    }
}

fn check_dims(queries: &Matrix, w_k: &WeightMatrix, w_v: &WeightMatrix, tokens: &EmbeddingSet) -> Result<()> {
    if w_k.d_in() != tokens.dim() || w_v.d_in() != tokens.dim() {
        return Err(EditError::shape("token dimension does not match weight inputs"));
    }
    if queries.ncols() != w_k.d_out() {
        return Err(EditError::shape(format!(
            "queries have {} columns, keys live in dimension {}",
            queries.ncols(),
            w_k.d_out()
        )));
    }
    Ok(())
}

// Plain loops with ascending accumulation: results do not depend on which
// matrix-multiply kernel the backend picks, so they are reproducible bit for bit.
fn product(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.nrows(), b.ncols(), |i, j| {
        let mut acc = 0.0;
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, j)];
        }
        acc
    })
}

/// Numerically stable softmax of each row.
pub fn softmax_rows(scores: &Matrix) -> Matrix {
    let mut out = scores.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Attention weights `softmax(Q·Kᵀ/√d_out)` for keys `K = W_k·tokens`.
pub fn attention_weights(queries: &Matrix, w_k: &WeightMatrix, tokens: &EmbeddingSet) -> Result<Matrix> {
    if w_k.d_in() != tokens.dim() {
        return Err(EditError::shape("token dimension does not match key weight"));
    }
    let keys = product(w_k.data(), tokens.data());
    if queries.ncols() != keys.nrows() {
        return Err(EditError::shape("query and key dimensions differ"));
    }
    let root = (keys.nrows() as f64).sqrt();
    Ok(softmax_rows(&product(queries, &keys).map(|s| s / root)))
}

/// `m×d_out` attention output: softmax weights times `(W_v·tokens)ᵀ`.
pub fn cross_attention_forward(inst: &AttentionInstance) -> Result<Matrix> {
    inst.validate()?;
    let weights = attention_weights(&inst.queries, &inst.w_k, &inst.tokens)?;
    let values = product(inst.w_v.data(), inst.tokens.data());
    Ok(product(&weights, &values.transpose()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecouplingShift {
    pub preserve_shift: f64,
    pub erase_shift: f64,
}

/// Relative change of the attention output on the preserve-only and
/// erase-only sub-prompts between the original and edited weights.
/// A role with no tokens reports zero shift.
pub fn recoupling_probe(inst: &AttentionInstance, edit: &EditResult) -> Result<RecouplingShift> {
    inst.validate()?;
    let w_k = match &edit.delta_k {
        Some(d) => apply_edit(&inst.w_k, d)?,
        None => inst.w_k.clone(),
    };
    let w_v = match &edit.delta_v {
        Some(d) => apply_edit(&inst.w_v, d)?,
        None => inst.w_v.clone(),
    };
    let shift = |role: TokenRole| -> Result<f64> {
        let Some(sub) = inst.sub_prompt(role) else {
            return Ok(0.0);
        };
        let before = cross_attention_forward(&sub)?;
        let edited = AttentionInstance {
            w_k: w_k.clone(),
            w_v: w_v.clone(),
            ..sub
        };
        let after = cross_attention_forward(&edited)?;
        Ok(relative_change((after - &before).norm(), before.norm()))
    };
    Ok(RecouplingShift {
        preserve_shift: shift(TokenRole::Preserve)?,
        erase_shift: shift(TokenRole::Erase)?,
    })
}
