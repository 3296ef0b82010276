//! Dense-grid types and the numeric primitives the rest of the crate builds on.
//!
//! Everything is stored row-major in `(row, col, channel)` order and computed
//! in double precision. Values are immutable once constructed, so instances
//! can be shared freely across threads.

use crate::error::{FlowError, Result};

/// Dense 2D matrix of `f64`, row-major.
///
/// Used for flattened feature maps (`N x D`), projection weights and attention
/// logits. Deliberately small: only the products and reductions the flow
/// modules need, no general tensor algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(FlowError::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// One row as a contiguous slice.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(FlowError::shape(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T`. Contracts the column axes of both operands, which keeps
    /// every inner loop on contiguous rows.
    pub fn matmul_nt(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(FlowError::shape(format!(
                "matmul_nt {}x{} * ({}x{})^T",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a, rhs.row(j));
            }
        }
        Ok(out)
    }

    /// `self^T * rhs`.
    pub fn matmul_tn(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(FlowError::shape(format!(
                "matmul_tn ({}x{})^T * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let a = self.row(k);
            let b = rhs.row(k);
            for (i, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += av * bv;
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense `H x W x D` grid of real-valued features, row-major
/// `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(FlowError::shape(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite(format!("feature map value at flat index {pos}")));
        }
        Ok(FeatureMap { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixel locations, `H * W`.
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    /// Channel vector of one pixel as a contiguous slice.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn same_spatial(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Concatenate maps along the channel axis. All inputs must share H and W.
    pub fn concat_channels(parts: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = parts
            .first()
            .ok_or_else(|| FlowError::invalid("concat_channels needs at least one map"))?;
        let (h, w) = (first.height, first.width);
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut out = FeatureMap::zeros(h, w, channels);
        for part in parts {
            if part.height != h || part.width != w {
                return Err(FlowError::shape(format!(
                    "concat_channels: {}x{} vs {}x{}",
                    part.height, part.width, h, w
                )));
            }
        }
        for r in 0..h {
            for c in 0..w {
                let dst = out.pixel_mut(r, c);
                let mut offset = 0;
                for part in parts {
                    dst[offset..offset + part.channels].copy_from_slice(part.pixel(r, c));
                    offset += part.channels;
                }
            }
        }
        Ok(out)
    }
}

/// Reinterpret an `H x W x D` feature map as an `N x D` matrix, `N = H * W`,
/// with pixel `(r, c)` at flat row `r * W + c`. Bit-exact.
pub fn flatten_hw(fm: &FeatureMap) -> Matrix {
    // identical memory layout, only the indexing view changes
    Matrix {
        rows: fm.height * fm.width,
        cols: fm.channels,
        data: fm.data.clone(),
    }
}

/// Inverse of [`flatten_hw`]; fails if `m.rows() != height * width`.
pub fn unflatten_hw(m: &Matrix, height: usize, width: usize) -> Result<FeatureMap> {
    if m.rows != height * width {
        return Err(FlowError::shape(format!(
            "unflatten: {} rows cannot fill a {height}x{width} grid",
            m.rows
        )));
    }
    Ok(FeatureMap {
        height,
        width,
        channels: m.cols,
        data: m.data.clone(),
    })
}

/// Flat index of pixel `(row, col)` on a grid of width `w`.
#[inline]
pub fn flat_index(row: usize, col: usize, w: usize) -> usize {
    row * w + col
}

/// Per-pixel 2D displacement field in pixel units with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    valid: Vec<bool>,
}

impl FlowField {
    /// Zero flow, everywhere valid.
    pub fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        FlowField { height, width, u: vec![0.0; n], v: vec![0.0; n], valid: vec![true; n] }
    }

    pub fn from_components(
        height: usize,
        width: usize,
        u: Vec<f64>,
        v: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = height * width;
        if u.len() != n || v.len() != n || valid.len() != n {
            return Err(FlowError::shape(format!(
                "flow {height}x{width} needs {n} values per component"
            )));
        }
        for i in 0..n {
            if valid[i] && !(u[i].is_finite() && v[i].is_finite()) {
                return Err(FlowError::NonFinite(format!(
                    "flow vector at pixel ({}, {})",
                    i / width,
                    i % width
                )));
            }
        }
        Ok(FlowField { height, width, u, v, valid })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn u_at(&self, row: usize, col: usize) -> f64 {
        self.u[row * self.width + col]
    }

    #[inline]
    pub fn v_at(&self, row: usize, col: usize) -> f64 {
        self.v[row * self.width + col]
    }

    #[inline]
    pub fn valid_at(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn set_vector(&mut self, row: usize, col: usize, u: f64, v: f64) {
        let i = row * self.width + col;
        self.u[i] = u;
        self.v[i] = v;
    }

    pub fn set_valid(&mut self, row: usize, col: usize, valid: bool) {
        self.valid[row * self.width + col] = valid;
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Elementwise sum; a pixel stays valid only if valid in both fields.
    pub fn add(&self, other: &FlowField) -> Result<FlowField> {
        if self.height != other.height || self.width != other.width {
            return Err(FlowError::shape(format!(
                "flow add {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let n = self.u.len();
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut valid = vec![false; n];
        for i in 0..n {
            u[i] = self.u[i] + other.u[i];
            v[i] = self.v[i] + other.v[i];
            valid[i] = self.valid[i] && other.valid[i];
        }
        Ok(FlowField { height: self.height, width: self.width, u, v, valid })
    }

    /// The two displacement components as a 2-channel feature map (u, v).
    pub fn to_feature_map(&self) -> FeatureMap {
        let mut fm = FeatureMap::zeros(self.height, self.width, 2);
        for r in 0..self.height {
            for c in 0..self.width {
                fm.set(r, c, 0, self.u_at(r, c));
                fm.set(r, c, 1, self.v_at(r, c));
            }
        }
        fm
    }
}

/// Row-stochastic attention weights: entries are nonnegative and every row
/// sums to one within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    inner: Matrix,
}

impl AttentionMatrix {
    pub const ROW_SUM_TOL: f64 = 1e-6;

    /// Validates squareness, nonnegativity and row sums.
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(FlowError::shape(format!(
                "attention matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        for r in 0..m.rows {
            let row = m.row(r);
            if row.iter().any(|&w| !(w >= 0.0)) {
                return Err(FlowError::invalid(format!("negative attention weight in row {r}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(FlowError::invalid(format!(
                    "attention row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(AttentionMatrix { inner: m })
    }

    pub fn size(&self) -> usize {
        self.inner.rows
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.inner.get(r, c)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        self.inner.row(r)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }
}

/// Row-wise softmax with per-row max subtraction.
///
/// Stable for logit magnitudes up to at least 1e4; rejects non-finite input
/// with a diagnostic naming the offending row.
pub fn softmax_rows(logits: &Matrix) -> Result<AttentionMatrix> {
    if logits.rows != logits.cols {
        return Err(FlowError::shape(format!(
            "softmax_rows expects a square grid, got {}x{}",
            logits.rows, logits.cols
        )));
    }
    let mut out = Matrix::zeros(logits.rows, logits.cols);
    for r in 0..logits.rows {
        let row = logits.row(r);
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite(format!("logit at row {r}, column {c}")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out_row = out.row_mut(r);
        let mut sum = 0.0;
        for (o, &v) in out_row.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    AttentionMatrix::from_matrix(out)
}

/// `H x W` image with 1 (grayscale) or 3 (RGB) channels, values in `[0, 1]`,
/// row-major `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(FlowError::invalid(format!("image channels must be 1 or 3, got {channels}")));
        }
        Ok(ImageGrid { height, width, channels, data: vec![0.0; height * width * channels] })
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(FlowError::invalid(format!("image channels must be 1 or 3, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(FlowError::shape(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(*v >= 0.0 && *v <= 1.0)) {
            return Err(FlowError::invalid(format!(
                "image value {} at flat index {pos} outside [0, 1]",
                data[pos]
            )));
        }
        Ok(ImageGrid { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    /// View as a feature map (same layout, no value scaling).
    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.clone(),
        }
    }
}
