//! Analytic gradients of the aggregation module.
//!
//! For loss `L = sum(upstream ⊙ y_hat)` the chain runs backward through the
//! residual sum, the `alpha` gate, the attention-value product, the row-wise
//! softmax (Jacobian `diag(a) - a a^T` per row), the `1/sqrt(D_in)` scaling,
//! the positional-embedding gather, and the three linear projections. Every
//! formula here is validated against central finite differences by the
//! gradient-check module.

use crate::error::{FlowError, Result};
use crate::grid::{flatten_hw, softmax_rows, FeatureMap, Matrix};

use super::{
    attention_logits, check_forward_shapes, effective_alpha, project_qkv, AlphaMode, GmaConfig,
    GmaParams, GmaVariant, MATERIALIZE_LIMIT,
};

/// Gradients with respect to every parameter and both inputs. Shapes mirror
/// [`GmaParams`]; `dx`/`dy` are flattened `N x D_c` / `N x D_m`.
#[derive(Debug, Clone)]
pub struct GmaGrads {
    pub d_w_qry: Matrix,
    pub d_w_key: Matrix,
    pub d_w_val: Matrix,
    pub d_alpha: f64,
    pub d_pos_v: Matrix,
    pub d_pos_h: Matrix,
    pub dx: Matrix,
    pub dy: Matrix,
}

pub fn gma_backward(
    x: &FeatureMap,
    y: &FeatureMap,
    params: &GmaParams,
    config: &GmaConfig,
    upstream: &Matrix,
) -> Result<GmaGrads> {
    check_forward_shapes(x, y, params, config)?;
    let (h, w) = (x.height(), x.width());
    let n = h * w;
    if n > MATERIALIZE_LIMIT {
        return Err(FlowError::invalid(format!(
            "backward materializes attention; grid has {n} pixels, limit {MATERIALIZE_LIMIT}"
        )));
    }
    if upstream.rows() != n || upstream.cols() != params.d_m {
        return Err(FlowError::shape(format!(
            "upstream is {}x{}, expected {n}x{}",
            upstream.rows(),
            upstream.cols(),
            params.d_m
        )));
    }

    let xf = flatten_hw(x);
    let yf = flatten_hw(y);
    let (q, k, v) = project_qkv(x, y, params)?;
    let logits = attention_logits(&q, &k, params, config.variant, h, w)?;
    let a = softmax_rows(&logits)?;
    let z = a.as_matrix().matmul(&v)?;
    let alpha = effective_alpha(params, config);
    let scale = 1.0 / (params.d_in as f64).sqrt();

    // gate: d_alpha = sum(G ⊙ Z) only when the gate is a parameter
    let d_alpha = match config.alpha_mode {
        AlphaMode::Learned => upstream.data().iter().zip(z.data()).map(|(g, z)| g * z).sum(),
        AlphaMode::FixedOne => 0.0,
    };

    // dZ = alpha * G
    let mut dz = upstream.clone();
    for val in dz.data_mut() {
        *val *= alpha;
    }

    // value branch: dV = A^T dZ, dA = dZ V^T
    let dv = a.as_matrix().matmul_tn(&dz)?;
    let da = dz.matmul_nt(&v)?;

    // softmax rows: dL_ij = A_ij (dA_ij - sum_k dA_ik A_ik)
    let mut dl = Matrix::zeros(n, n);
    for i in 0..n {
        let a_row = a.row(i);
        let da_row = da.row(i);
        let inner: f64 = a_row.iter().zip(da_row).map(|(&aw, &g)| aw * g).sum();
        let dl_row = dl.row_mut(i);
        for j in 0..n {
            dl_row[j] = a_row[j] * (da_row[j] - inner);
        }
    }

    // logit branch per variant
    let mut dq = Matrix::zeros(n, params.d_in);
    let mut dk = Matrix::zeros(n, params.d_in);
    let mut d_pos_v = Matrix::zeros(params.pos_v.rows(), params.pos_v.cols());
    let mut d_pos_h = Matrix::zeros(params.pos_h.rows(), params.pos_h.cols());

    if config.variant != GmaVariant::PositionOnly {
        // content term: dQ += dL K / s, dK = dL^T Q / s
        let dq_content = dl.matmul(&k)?;
        for (out, src) in dq.data_mut().iter_mut().zip(dq_content.data()) {
            *out += src * scale;
        }
        let dk_content = dl.matmul_tn(&q)?;
        for (out, src) in dk.data_mut().iter_mut().zip(dk_content.data()) {
            *out += src * scale;
        }
    }
    if config.variant != GmaVariant::ContentOnly {
        // positional term: gather on the forward becomes scatter-add here
        for i in 0..n {
            let (ri, ci) = (i / w, i % w);
            let qi: Vec<f64> = q.row(i).to_vec();
            for j in 0..n {
                let g = dl.get(i, j) * scale;
                if g == 0.0 {
                    continue;
                }
                let (rj, cj) = (j / w, j % w);
                let vr = (rj as isize - ri as isize + params.h_max as isize - 1) as usize;
                let hc = (cj as isize - ci as isize + params.w_max as isize - 1) as usize;
                let pv = params.pos_v.row(vr);
                let ph = params.pos_h.row(hc);
                let dq_row = dq.row_mut(i);
                for ch in 0..params.d_in {
                    dq_row[ch] += g * (pv[ch] + ph[ch]);
                }
                let dpv = d_pos_v.row_mut(vr);
                for ch in 0..params.d_in {
                    dpv[ch] += g * qi[ch];
                }
                let dph = d_pos_h.row_mut(hc);
                for ch in 0..params.d_in {
                    dph[ch] += g * qi[ch];
                }
            }
        }
    }

    // projections: dW = dOut^T In, dIn += dOut W
    let d_w_qry = dq.matmul_tn(&xf)?;
    let d_w_key = dk.matmul_tn(&xf)?;
    let d_w_val = dv.matmul_tn(&yf)?;

    let mut dx = dq.matmul(&params.w_qry)?;
    let dx_key = dk.matmul(&params.w_key)?;
    for (out, src) in dx.data_mut().iter_mut().zip(dx_key.data()) {
        *out += src;
    }

    let mut dy = dv.matmul(&params.w_val)?;
    if config.residual {
        for (out, src) in dy.data_mut().iter_mut().zip(upstream.data()) {
            *out += src;
        }
    }

    Ok(GmaGrads { d_w_qry, d_w_key, d_w_val, d_alpha, d_pos_v, d_pos_h, dx, dy })
}
