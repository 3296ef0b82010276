//! Tiled attention for grids too large to hold an `N x N` matrix.
//!
//! Rows are processed independently; within a row, key columns are visited in
//! blocks while an online softmax state (running max, running denominator,
//! running weighted value sum) is folded forward. The rescaling keeps every
//! exponential in range, so the result matches the materialized path within
//! 1e-6 regardless of block size.

use crate::error::{FlowError, Result};
use crate::grid::{dot, Matrix};

use super::{query_pos_products, GmaParams, GmaVariant};

/// Key-block width used by the automatic dispatch in `gma_forward`.
pub const DEFAULT_BLOCK: usize = 1024;

/// Computes `softmax(logits) * V` without materializing the logits.
pub fn attention_value_product(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    params: &GmaParams,
    variant: GmaVariant,
    h: usize,
    w: usize,
    block: usize,
) -> Result<Matrix> {
    let n = h * w;
    if q.rows() != n || k.rows() != n || v.rows() != n {
        return Err(FlowError::shape(format!(
            "Q/K/V rows {}/{}/{} disagree with grid {h}x{w}",
            q.rows(),
            k.rows(),
            v.rows()
        )));
    }
    if block == 0 {
        return Err(FlowError::invalid("block size must be positive"));
    }
    let d_m = v.cols();
    let scale = 1.0 / (params.d_in as f64).sqrt();
    let use_pos = variant != GmaVariant::ContentOnly;
    let (qpv, qph) = if use_pos {
        (query_pos_products(q, params, h, true)?, query_pos_products(q, params, w, false)?)
    } else {
        (Matrix::zeros(0, 0), Matrix::zeros(0, 0))
    };

    let mut out = Matrix::zeros(n, d_m);
    let mut logits = vec![0.0f64; block];
    for i in 0..n {
        let (ri, ci) = (i / w, i % w);
        let qi = q.row(i);
        let mut running_max = f64::NEG_INFINITY;
        let mut denom = 0.0f64;
        let mut acc = vec![0.0f64; d_m];

        let mut start = 0usize;
        while start < n {
            let end = (start + block).min(n);
            let mut block_max = f64::NEG_INFINITY;
            for (slot, j) in (start..end).enumerate() {
                let content = match variant {
                    GmaVariant::PositionOnly => 0.0,
                    _ => dot(qi, k.row(j)),
                };
                let pos = if use_pos {
                    let (rj, cj) = (j / w, j % w);
                    let dr = (rj as isize - ri as isize + h as isize - 1) as usize;
                    let dc = (cj as isize - ci as isize + w as isize - 1) as usize;
                    qpv.get(i, dr) + qph.get(i, dc)
                } else {
                    0.0
                };
                let l = (content + pos) * scale;
                if !l.is_finite() {
                    return Err(FlowError::NonFinite(format!("logit at row {i}, column {j}")));
                }
                logits[slot] = l;
                block_max = block_max.max(l);
            }
            let new_max = running_max.max(block_max);
            if new_max > running_max && running_max != f64::NEG_INFINITY {
                // fold the previous partial sums into the new reference point
                let rescale = (running_max - new_max).exp();
                denom *= rescale;
                for a in acc.iter_mut() {
                    *a *= rescale;
                }
            }
            running_max = new_max;
            for (slot, j) in (start..end).enumerate() {
                let e = (logits[slot] - running_max).exp();
                denom += e;
                let vj = v.row(j);
                for (a, &val) in acc.iter_mut().zip(vj) {
                    *a += e * val;
                }
            }
            start = end;
        }

        let out_row = out.row_mut(i);
        for (o, a) in out_row.iter_mut().zip(&acc) {
            *o = a / denom;
        }
    }
    Ok(out)
}
