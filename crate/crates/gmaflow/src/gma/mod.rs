//! Global motion aggregation.
//!
//! Motion features are aggregated across the whole frame, weighted by an
//! attention matrix computed from appearance self-similarity of the reference
//! frame: query and key vectors are projections of context features `x`,
//! value vectors are projections of motion features `y`, and the aggregate
//! enters through a learned gate `alpha` that starts at zero, so an untrained
//! module is exactly the identity on `y`.
//!
//! Three attention variants are supported:
//!
//! - `ContentOnly`: logit(i,j) = <Q_i, K_j> / sqrt(D_in)
//! - `ContentPlusPosition`: logit(i,j) = <Q_i, K_j + p_{j-i}> / sqrt(D_in)
//! - `PositionOnly`: logit(i,j) = <Q_i, p_{j-i}> / sqrt(D_in)
//!
//! where `p_{j-i}` is the sum of a vertical and a horizontal relative
//! positional embedding indexed by the pixel offset `j - i`.
//!
//! Grids up to [`MATERIALIZE_LIMIT`] pixels materialize the full N x N
//! attention; larger grids take a tiled streaming-softmax path that never
//! holds more than one row block of logits (see [`streaming`]).

pub mod backward;
pub mod streaming;

pub use backward::{gma_backward, GmaGrads};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FlowError, Result};
use crate::grid::{flatten_hw, softmax_rows, unflatten_hw, AttentionMatrix, FeatureMap, Matrix};

/// Largest pixel count for which the full attention matrix is built.
pub const MATERIALIZE_LIMIT: usize = 4096;

/// Which similarity feeds the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmaVariant {
    ContentOnly,
    ContentPlusPosition,
    PositionOnly,
}

/// Whether the aggregation gate is the learned scalar or pinned to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    Learned,
    FixedOne,
}

/// How aggregated features join the module output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    /// `[y | y_hat | x]`
    Concatenate,
    /// `[y_hat | x]`
    Replace,
}

/// Ablation switches and channel counts for one module instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GmaConfig {
    pub variant: GmaVariant,
    pub alpha_mode: AlphaMode,
    pub combine_mode: CombineMode,
    /// Keep the identity path `y + ...`; without it the output is pure
    /// aggregate.
    pub residual: bool,
    pub d_in: usize,
    pub d_c: usize,
    pub d_m: usize,
}

impl GmaConfig {
    /// Content-only attention, learned gate, concatenated output, residual
    /// on: the combination the full model uses.
    pub fn standard(d_in: usize, d_c: usize, d_m: usize) -> Self {
        GmaConfig {
            variant: GmaVariant::ContentOnly,
            alpha_mode: AlphaMode::Learned,
            combine_mode: CombineMode::Concatenate,
            residual: true,
            d_in,
            d_c,
            d_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_c == 0 || self.d_m == 0 {
            return Err(FlowError::invalid(format!(
                "channel counts must be at least 1, got D_in={}, D_c={}, D_m={}",
                self.d_in, self.d_c, self.d_m
            )));
        }
        Ok(())
    }

    /// Channel count of the combined output map.
    pub fn combined_channels(&self) -> usize {
        match self.combine_mode {
            CombineMode::Concatenate => 2 * self.d_m + self.d_c,
            CombineMode::Replace => self.d_m + self.d_c,
        }
    }
}

/// Projection weights, gate scalar and relative positional tables.
///
/// `pos_v` stores embeddings for vertical offsets `-(H_max-1)..=(H_max-1)`;
/// offset `d` lives at row `d + H_max - 1`. `pos_h` mirrors this for
/// horizontal offsets with `W_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmaParams {
    pub d_in: usize,
    pub d_c: usize,
    pub d_m: usize,
    pub h_max: usize,
    pub w_max: usize,
    /// `D_in x D_c`; queries are `W_qry * x_i`.
    pub w_qry: Matrix,
    /// `D_in x D_c`; keys are `W_key * x_i`.
    pub w_key: Matrix,
    /// `D_m x D_m`; values are `W_val * y_i`.
    pub w_val: Matrix,
    pub alpha: f64,
    /// `(2*H_max - 1) x D_in`.
    pub pos_v: Matrix,
    /// `(2*W_max - 1) x D_in`.
    pub pos_h: Matrix,
}

impl GmaParams {
    pub fn new(
        d_in: usize,
        d_c: usize,
        d_m: usize,
        h_max: usize,
        w_max: usize,
        w_qry: Matrix,
        w_key: Matrix,
        w_val: Matrix,
        alpha: f64,
        pos_v: Matrix,
        pos_h: Matrix,
    ) -> Result<Self> {
        let params = GmaParams { d_in, d_c, d_m, h_max, w_max, w_qry, w_key, w_val, alpha, pos_v, pos_h };
        params.validate()?;
        Ok(params)
    }

    /// Deterministic initialization: projection weights uniform on
    /// `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, gate zero, positional tables
    /// zero. With the zero gate the whole module is the identity on `y`.
    pub fn seeded(d_in: usize, d_c: usize, d_m: usize, h_max: usize, w_max: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            Matrix::from_vec(rows, cols, data)
        };
        let w_qry = draw(d_in, d_c, d_c)?;
        let w_key = draw(d_in, d_c, d_c)?;
        let w_val = draw(d_m, d_m, d_m)?;
        GmaParams::new(
            d_in,
            d_c,
            d_m,
            h_max,
            w_max,
            w_qry,
            w_key,
            w_val,
            0.0,
            Matrix::zeros(2 * h_max - 1, d_in),
            Matrix::zeros(2 * w_max - 1, d_in),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_c == 0 || self.d_m == 0 {
            return Err(FlowError::invalid("channel counts must be at least 1"));
        }
        if self.h_max == 0 || self.w_max == 0 {
            return Err(FlowError::invalid("positional table extents must be at least 1"));
        }
        let expect = [
            ("W_qry", self.w_qry.rows(), self.w_qry.cols(), self.d_in, self.d_c),
            ("W_key", self.w_key.rows(), self.w_key.cols(), self.d_in, self.d_c),
            ("W_val", self.w_val.rows(), self.w_val.cols(), self.d_m, self.d_m),
            ("pos_v", self.pos_v.rows(), self.pos_v.cols(), 2 * self.h_max - 1, self.d_in),
            ("pos_h", self.pos_h.rows(), self.pos_h.cols(), 2 * self.w_max - 1, self.d_in),
        ];
        for (name, rows, cols, want_rows, want_cols) in expect {
            if rows != want_rows || cols != want_cols {
                return Err(FlowError::shape(format!(
                    "{name} is {rows}x{cols}, expected {want_rows}x{want_cols}"
                )));
            }
        }
        if !self.alpha.is_finite() {
            return Err(FlowError::NonFinite("alpha".into()));
        }
        Ok(())
    }

    /// Table row for a vertical offset; errors when the grid outgrows the
    /// configured `H_max` rather than clamping.
    pub fn pos_v_row(&self, offset: isize) -> Result<&[f64]> {
        table_row(&self.pos_v, offset, self.h_max, "vertical")
    }

    pub fn pos_h_row(&self, offset: isize) -> Result<&[f64]> {
        table_row(&self.pos_h, offset, self.w_max, "horizontal")
    }
}

fn table_row<'t>(table: &'t Matrix, offset: isize, max: usize, axis: &str) -> Result<&'t [f64]> {
    let bound = max as isize - 1;
    if offset < -bound || offset > bound {
        return Err(FlowError::invalid(format!(
            "{axis} offset {offset} outside positional table range -{bound}..={bound}"
        )));
    }
    Ok(table.row((offset + bound) as usize))
}

/// Projects context features to queries/keys and motion features to values.
///
/// `Q_i = W_qry x_i`, `K_i = W_key x_i`, `V_i = W_val y_i` for every flat
/// pixel index `i`.
pub fn project_qkv(
    x: &FeatureMap,
    y: &FeatureMap,
    params: &GmaParams,
) -> Result<(Matrix, Matrix, Matrix)> {
    if !x.same_spatial(y) {
        return Err(FlowError::shape(format!(
            "context {}x{} vs motion {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    if x.channels() != params.d_c {
        return Err(FlowError::shape(format!(
            "context has {} channels, params expect D_c={}",
            x.channels(),
            params.d_c
        )));
    }
    if y.channels() != params.d_m {
        return Err(FlowError::shape(format!(
            "motion has {} channels, params expect D_m={}",
            y.channels(),
            params.d_m
        )));
    }
    let xf = flatten_hw(x);
    let yf = flatten_hw(y);
    let q = xf.matmul_nt(&params.w_qry)?;
    let k = xf.matmul_nt(&params.w_key)?;
    let v = yf.matmul_nt(&params.w_val)?;
    Ok((q, k, v))
}

/// Per-query dot products with every in-range positional embedding.
///
/// Row `i`, column `d + (extent-1)` holds `<Q_i, table[d]>` for offsets
/// `d in -(extent-1)..=(extent-1)`. Shared by the materialized and streaming
/// logit paths so the two agree term for term.
pub(crate) fn query_pos_products(
    q: &Matrix,
    params: &GmaParams,
    extent: usize,
    vertical: bool,
) -> Result<Matrix> {
    let span = 2 * extent - 1;
    let mut out = Matrix::zeros(q.rows(), span);
    for i in 0..q.rows() {
        let qi = q.row(i);
        for (col, d) in (-(extent as isize - 1)..=(extent as isize - 1)).enumerate() {
            let row = if vertical { params.pos_v_row(d)? } else { params.pos_h_row(d)? };
            out.set(i, col, crate::grid::dot(qi, row));
        }
    }
    Ok(out)
}

/// Attention logits for one variant on an `H x W` grid, full `N x N`.
pub fn attention_logits(
    q: &Matrix,
    k: &Matrix,
    params: &GmaParams,
    variant: GmaVariant,
    h: usize,
    w: usize,
) -> Result<Matrix> {
    let n = h * w;
    if q.rows() != n || k.rows() != n {
        return Err(FlowError::shape(format!(
            "Q has {} rows, K has {}, grid {h}x{w} needs {n}",
            q.rows(),
            k.rows()
        )));
    }
    if q.cols() != params.d_in || k.cols() != params.d_in {
        return Err(FlowError::shape(format!(
            "Q/K must have D_in={} columns, got {} and {}",
            params.d_in,
            q.cols(),
            k.cols()
        )));
    }
    let scale = 1.0 / (params.d_in as f64).sqrt();
    let mut logits = match variant {
        GmaVariant::PositionOnly => Matrix::zeros(n, n),
        _ => q.matmul_nt(k)?,
    };
    if variant == GmaVariant::ContentOnly {
        for v in logits.data_mut() {
            *v *= scale;
        }
        return Ok(logits);
    }
    // positional terms decompose: <Q_i, pos_v[dr] + pos_h[dc]> splits per axis
    let qpv = query_pos_products(q, params, h, true)?;
    let qph = query_pos_products(q, params, w, false)?;
    for i in 0..n {
        let (ri, ci) = (i / w, i % w);
        for j in 0..n {
            let (rj, cj) = (j / w, j % w);
            let dr = (rj as isize - ri as isize + h as isize - 1) as usize;
            let dc = (cj as isize - ci as isize + w as isize - 1) as usize;
            let pos_term = qpv.get(i, dr) + qph.get(i, dc);
            let v = logits.get(i, j) + pos_term;
            logits.set(i, j, v * scale);
        }
    }
    Ok(logits)
}

/// Weighted aggregation with optional residual:
/// `y_hat = [y +] alpha * (A V)`.
///
/// At `alpha == 0` with the residual the result is `y` bit-for-bit; the
/// aggregate term is skipped entirely rather than multiplied through.
pub fn aggregate(
    y: &Matrix,
    a: &AttentionMatrix,
    v: &Matrix,
    alpha: f64,
    residual: bool,
) -> Result<Matrix> {
    if y.rows() != v.rows() || y.cols() != v.cols() {
        return Err(FlowError::shape(format!(
            "y is {}x{}, V is {}x{}",
            y.rows(),
            y.cols(),
            v.rows(),
            v.cols()
        )));
    }
    if a.size() != y.rows() {
        return Err(FlowError::shape(format!(
            "attention is {0}x{0}, features have {1} rows",
            a.size(),
            y.rows()
        )));
    }
    if alpha == 0.0 {
        return Ok(if residual { y.clone() } else { Matrix::zeros(y.rows(), y.cols()) });
    }
    let av = a.as_matrix().matmul(v)?;
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for idx in 0..out.data().len() {
        let base = if residual { y.data()[idx] } else { 0.0 };
        out.data_mut()[idx] = base + alpha * av.data()[idx];
    }
    Ok(out)
}

/// Forward result: aggregated motion features, the attention used (absent on
/// the streaming path), and the combined output map.
#[derive(Debug, Clone)]
pub struct GmaOutput {
    /// `N x D_m` aggregated motion features.
    pub y_hat: Matrix,
    /// Full attention matrix; `None` when the grid exceeded
    /// [`MATERIALIZE_LIMIT`] and the streaming path ran.
    pub attention: Option<AttentionMatrix>,
    /// `[y | y_hat | x]` or `[y_hat | x]` depending on the combine mode.
    pub combined: FeatureMap,
}

fn effective_alpha(params: &GmaParams, config: &GmaConfig) -> f64 {
    match config.alpha_mode {
        AlphaMode::Learned => params.alpha,
        AlphaMode::FixedOne => 1.0,
    }
}

fn check_forward_shapes(x: &FeatureMap, y: &FeatureMap, params: &GmaParams, config: &GmaConfig) -> Result<()> {
    config.validate()?;
    params.validate()?;
    if config.d_in != params.d_in || config.d_c != params.d_c || config.d_m != params.d_m {
        return Err(FlowError::shape(format!(
            "config dims ({}, {}, {}) disagree with params ({}, {}, {})",
            config.d_in, config.d_c, config.d_m, params.d_in, params.d_c, params.d_m
        )));
    }
    if !x.same_spatial(y) {
        return Err(FlowError::shape(format!(
            "context {}x{} vs motion {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    Ok(())
}

/// Runs the full module: project, attend, aggregate, combine.
pub fn gma_forward(
    x: &FeatureMap,
    y: &FeatureMap,
    params: &GmaParams,
    config: &GmaConfig,
) -> Result<GmaOutput> {
    check_forward_shapes(x, y, params, config)?;
    let (h, w) = (x.height(), x.width());
    let n = h * w;
    let (q, k, v) = project_qkv(x, y, params)?;
    let yf = flatten_hw(y);
    let alpha = effective_alpha(params, config);

    let (y_hat, attention) = if n <= MATERIALIZE_LIMIT {
        let logits = attention_logits(&q, &k, params, config.variant, h, w)?;
        let a = softmax_rows(&logits)?;
        let y_hat = aggregate(&yf, &a, &v, alpha, config.residual)?;
        (y_hat, Some(a))
    } else {
        let av = streaming::attention_value_product(&q, &k, &v, params, config.variant, h, w, streaming::DEFAULT_BLOCK)?;
        let mut y_hat = Matrix::zeros(n, params.d_m);
        for idx in 0..y_hat.data().len() {
            let base = if config.residual { yf.data()[idx] } else { 0.0 };
            y_hat.data_mut()[idx] =
                if alpha == 0.0 { base } else { base + alpha * av.data()[idx] };
        }
        (y_hat, None)
    };

    let y_hat_fm = unflatten_hw(&y_hat, h, w)?;
    let combined = match config.combine_mode {
        CombineMode::Concatenate => FeatureMap::concat_channels(&[y, &y_hat_fm, x])?,
        CombineMode::Replace => FeatureMap::concat_channels(&[&y_hat_fm, x])?,
    };
    Ok(GmaOutput { y_hat, attention, combined })
}
