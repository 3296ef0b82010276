//! Finite-difference oracle for the aggregation module's analytic gradients.
//!
//! Central differences in double precision; the analytic backward pass is
//! trusted only after it matches this oracle on random small instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{FlowError, Result};
use crate::gma::{gma_backward, gma_forward, GmaConfig, GmaParams, GmaVariant};
use crate::grid::{FeatureMap, Matrix};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Default pass threshold on the max relative error.
pub const DEFAULT_THRESHOLD: f64 = 1e-4;
/// Relative-error denominator floor.
pub const REL_FLOOR: f64 = 1e-8;

/// Central differences `(f(p + h e_k) - f(p - h e_k)) / 2h` per coordinate.
pub fn finite_diff(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(FlowError::invalid(format!("step must be positive, got {step}")));
    }
    let mut scratch = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let original = scratch[k];
        scratch[k] = original + step;
        let plus = loss(&scratch)?;
        scratch[k] = original - step;
        let minus = loss(&scratch)?;
        scratch[k] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(FlowError::NonFinite(format!(
                "loss not finite near coordinate {k}: f+ = {plus}, f- = {minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst-case agreement for one parameter block.
#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub len: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Flat coordinate within the block where the relative error peaks.
    pub argmax: usize,
}

/// Oracle verdict over every parameter and input block.
#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub variant: String,
    pub seed: u64,
    pub step: f64,
    pub threshold: f64,
    pub blocks: Vec<ParamCheck>,
    pub passed: bool,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    /// Plain-text table, one block per row.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "gradient check: {} seed {} step {:.1e} threshold {:.1e}\n",
            self.variant, self.seed, self.step, self.threshold
        ));
        out.push_str(&format!(
            "{:<8} {:>6} {:>13} {:>13} {:>7}\n",
            "block", "size", "max abs err", "max rel err", "argmax"
        ));
        for b in &self.blocks {
            out.push_str(&format!(
                "{:<8} {:>6} {:>13.3e} {:>13.3e} {:>7}\n",
                b.name, b.len, b.max_abs_err, b.max_rel_err, b.argmax
            ));
        }
        out.push_str(if self.passed { "PASS\n" } else { "FAIL\n" });
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn variant_name(variant: GmaVariant) -> &'static str {
    match variant {
        GmaVariant::ContentOnly => "content",
        GmaVariant::ContentPlusPosition => "content+position",
        GmaVariant::PositionOnly => "position",
    }
}

/// Random instance for checking: dense positional tables and a nonzero gate
/// so every path through the module carries gradient.
pub fn random_check_instance(
    height: usize,
    width: usize,
    d: usize,
    seed: u64,
) -> Result<(FeatureMap, FeatureMap, GmaParams, Matrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |rows: usize, cols: usize| -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).expect("sized data")
    };
    let w_qry = fill(d, d);
    let w_key = fill(d, d);
    let w_val = fill(d, d);
    let pos_v = fill(2 * height - 1, d);
    let pos_h = fill(2 * width - 1, d);
    let alpha = rng.random_range(0.25..1.0);
    let params =
        GmaParams::new(d, d, d, height, width, w_qry, w_key, w_val, alpha, pos_v, pos_h)?;
    let n = height * width;
    let x = FeatureMap::from_vec(
        height,
        width,
        d,
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let y = FeatureMap::from_vec(
        height,
        width,
        d,
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let upstream =
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    Ok((x, y, params, upstream))
}

/// Flat layout: w_qry, w_key, w_val, alpha, pos_v, pos_h, x, y.
fn pack(params: &GmaParams, x: &FeatureMap, y: &FeatureMap) -> Vec<f64> {
    let mut flat = Vec::new();
    flat.extend_from_slice(params.w_qry.data());
    flat.extend_from_slice(params.w_key.data());
    flat.extend_from_slice(params.w_val.data());
    flat.push(params.alpha);
    flat.extend_from_slice(params.pos_v.data());
    flat.extend_from_slice(params.pos_h.data());
    flat.extend_from_slice(x.data());
    flat.extend_from_slice(y.data());
    flat
}

fn unpack(
    flat: &[f64],
    like: &GmaParams,
    height: usize,
    width: usize,
) -> Result<(GmaParams, FeatureMap, FeatureMap)> {
    let mut cursor = 0usize;
    let mut take = |len: usize| -> &[f64] {
        let s = &flat[cursor..cursor + len];
        cursor += len;
        s
    };
    let matrix = |rows: usize, cols: usize, s: &[f64]| Matrix::from_vec(rows, cols, s.to_vec());
    let w_qry = matrix(like.d_in, like.d_c, take(like.d_in * like.d_c))?;
    let w_key = matrix(like.d_in, like.d_c, take(like.d_in * like.d_c))?;
    let w_val = matrix(like.d_m, like.d_m, take(like.d_m * like.d_m))?;
    let alpha = take(1)[0];
    let pos_v = matrix(2 * like.h_max - 1, like.d_in, take((2 * like.h_max - 1) * like.d_in))?;
    let pos_h = matrix(2 * like.w_max - 1, like.d_in, take((2 * like.w_max - 1) * like.d_in))?;
    let params = GmaParams::new(
        like.d_in, like.d_c, like.d_m, like.h_max, like.w_max, w_qry, w_key, w_val, alpha, pos_v,
        pos_h,
    )?;
    let n = height * width;
    let x = FeatureMap::from_vec(height, width, like.d_c, take(n * like.d_c).to_vec())?;
    let y = FeatureMap::from_vec(height, width, like.d_m, take(n * like.d_m).to_vec())?;
    debug_assert_eq!(cursor, flat.len());
    Ok((params, x, y))
}

/// Checks the analytic backward pass of every block against central finite
/// differences on a random instance.
///
/// The loss is `sum(upstream .* y_hat)` for a fixed random upstream, so its
/// gradient with respect to `y_hat` is exactly `upstream`.
pub fn check_gma(
    height: usize,
    width: usize,
    d: usize,
    variant: GmaVariant,
    seed: u64,
    step: f64,
    threshold: f64,
) -> Result<GradReport> {
    let n = height * width;
    if n == 0 || n > 16 || d == 0 || d > 8 {
        return Err(FlowError::invalid(format!(
            "oracle runs at desk scale: need 1 <= H*W <= 16 and 1 <= D <= 8, got N={n}, D={d}"
        )));
    }
    if !(threshold > 0.0) {
        return Err(FlowError::invalid(format!("threshold must be positive, got {threshold}")));
    }

    let (x, y, params, upstream) = random_check_instance(height, width, d, seed)?;
    let mut config = GmaConfig::standard(d, d, d);
    config.variant = variant;

    let grads = gma_backward(&x, &y, &params, &config, &upstream)?;
    let analytic = {
        let mut flat = Vec::new();
        flat.extend_from_slice(grads.d_w_qry.data());
        flat.extend_from_slice(grads.d_w_key.data());
        flat.extend_from_slice(grads.d_w_val.data());
        flat.push(grads.d_alpha);
        flat.extend_from_slice(grads.d_pos_v.data());
        flat.extend_from_slice(grads.d_pos_h.data());
        flat.extend_from_slice(grads.dx.data());
        flat.extend_from_slice(grads.dy.data());
        flat
    };

    let flat = pack(&params, &x, &y);
    let numeric = finite_diff(
        |p| {
            let (params, x, y) = unpack(p, &params, height, width)?;
            let out = gma_forward(&x, &y, &params, &config)?;
            Ok(out.y_hat.data().iter().zip(upstream.data()).map(|(o, g)| o * g).sum())
        },
        &flat,
        step,
    )?;
    debug_assert_eq!(analytic.len(), numeric.len());

    let block_sizes = [
        ("w_qry", d * d),
        ("w_key", d * d),
        ("w_val", d * d),
        ("alpha", 1),
        ("pos_v", (2 * height - 1) * d),
        ("pos_h", (2 * width - 1) * d),
        ("x", n * d),
        ("y", n * d),
    ];
    let mut blocks = Vec::new();
    let mut offset = 0usize;
    for (name, len) in block_sizes {
        let mut max_abs = 0.0f64;
        let mut max_rel = 0.0f64;
        let mut argmax = 0usize;
        for k in 0..len {
            let (a, m) = (analytic[offset + k], numeric[offset + k]);
            max_abs = max_abs.max((a - m).abs());
            let rel = relative_error(a, m);
            if rel > max_rel {
                max_rel = rel;
                argmax = k;
            }
        }
        blocks.push(ParamCheck {
            name: name.to_string(),
            len,
            max_abs_err: max_abs,
            max_rel_err: max_rel,
            argmax,
        });
        offset += len;
    }
    let passed = blocks.iter().all(|b| b.max_rel_err < threshold);
    Ok(GradReport {
        variant: variant_name(variant).to_string(),
        seed,
        step,
        threshold,
        blocks,
        passed,
    })
}
