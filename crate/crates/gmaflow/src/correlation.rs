//! All-pairs correlation volume, pooled pyramid, and windowed lookup.
//!
//! The level-0 volume holds `<F1_i, F2_j> / sqrt(D)` for every pixel pair;
//! coarser levels average-pool the target dimensions 2x2 at a time. Lookup
//! bilinearly samples a `(2r+1)^2` window around the flow target at every
//! level, with zero padding outside the frame, and stacks the samples
//! level-major then window row-major.

use crate::error::{FlowError, Result};
use crate::grid::{flatten_hw, FeatureMap, FlowField};

pub const DEFAULT_NUM_LEVELS: usize = 4;
pub const DEFAULT_RADIUS: usize = 4;

/// One pyramid level: for each source pixel a `h2 x w2` map over target
/// positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrLevel {
    /// Source grid extents (shared by all levels).
    pub height: usize,
    pub width: usize,
    /// Target grid extents at this level.
    pub h2: usize,
    pub w2: usize,
    data: Vec<f64>,
}

impl CorrLevel {
    pub fn zeros(height: usize, width: usize, h2: usize, w2: usize) -> Self {
        CorrLevel { height, width, h2, w2, data: vec![0.0; height * width * h2 * w2] }
    }

    #[inline]
    pub fn get(&self, src: usize, r2: usize, c2: usize) -> f64 {
        self.data[(src * self.h2 + r2) * self.w2 + c2]
    }

    #[inline]
    pub fn set(&mut self, src: usize, r2: usize, c2: usize, v: f64) {
        self.data[(src * self.h2 + r2) * self.w2 + c2] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Pooled correlation pyramid with the lookup radius it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrPyramid {
    pub levels: Vec<CorrLevel>,
    pub radius: usize,
}

impl CorrPyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn height(&self) -> usize {
        self.levels[0].height
    }

    pub fn width(&self) -> usize {
        self.levels[0].width
    }

    /// Channel count produced by [`lookup`] at radius `r`.
    pub fn lookup_channels(num_levels: usize, radius: usize) -> usize {
        num_levels * (2 * radius + 1) * (2 * radius + 1)
    }
}

/// Level-0 volume: entry `(i, j) = <F1_i, F2_j> / sqrt(D)`.
pub fn all_pairs_correlation(f1: &FeatureMap, f2: &FeatureMap) -> Result<CorrLevel> {
    if !f1.same_spatial(f2) || f1.channels() != f2.channels() {
        return Err(FlowError::shape(format!(
            "feature maps {}x{}x{} vs {}x{}x{}",
            f1.height(),
            f1.width(),
            f1.channels(),
            f2.height(),
            f2.width(),
            f2.channels()
        )));
    }
    let (h, w) = (f1.height(), f1.width());
    let a = flatten_hw(f1);
    let b = flatten_hw(f2);
    let mut prod = a.matmul_nt(&b)?;
    let scale = 1.0 / (f1.channels() as f64).sqrt();
    for v in prod.data_mut() {
        *v *= scale;
    }
    let mut level = CorrLevel::zeros(h, w, h, w);
    level.data.copy_from_slice(prod.data());
    Ok(level)
}

/// Pools the target dims 2x2 per level. The target extents must divide by
/// `2^(num_levels-1)`.
pub fn build_pyramid(vol: CorrLevel, num_levels: usize, radius: usize) -> Result<CorrPyramid> {
    if num_levels == 0 {
        return Err(FlowError::invalid("pyramid needs at least one level"));
    }
    let divisor = 1usize << (num_levels - 1);
    if vol.h2 % divisor != 0 || vol.w2 % divisor != 0 {
        return Err(FlowError::invalid(format!(
            "target grid {}x{} not divisible by 2^{} for {num_levels} levels",
            vol.h2,
            vol.w2,
            num_levels - 1
        )));
    }
    let n = vol.height * vol.width;
    let mut levels = vec![vol];
    for _ in 1..num_levels {
        let prev = levels.last().unwrap();
        let (h2, w2) = (prev.h2 / 2, prev.w2 / 2);
        let mut next = CorrLevel::zeros(prev.height, prev.width, h2, w2);
        for src in 0..n {
            for r2 in 0..h2 {
                for c2 in 0..w2 {
                    let sum = prev.get(src, 2 * r2, 2 * c2)
                        + prev.get(src, 2 * r2, 2 * c2 + 1)
                        + prev.get(src, 2 * r2 + 1, 2 * c2)
                        + prev.get(src, 2 * r2 + 1, 2 * c2 + 1);
                    next.set(src, r2, c2, sum / 4.0);
                }
            }
        }
        levels.push(next);
    }
    Ok(CorrPyramid { levels, radius })
}

/// Bilinear sample of one source pixel's target map at continuous `(y, x)`,
/// zero outside the grid.
fn bilinear(level: &CorrLevel, src: usize, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let wy = y - y0;
    let wx = x - x0;
    let mut acc = 0.0;
    for (dy, weight_y) in [(0i64, 1.0 - wy), (1, wy)] {
        if weight_y == 0.0 {
            continue;
        }
        let yy = y0 as i64 + dy;
        if yy < 0 || yy >= level.h2 as i64 {
            continue;
        }
        for (dx, weight_x) in [(0i64, 1.0 - wx), (1, wx)] {
            if weight_x == 0.0 {
                continue;
            }
            let xx = x0 as i64 + dx;
            if xx < 0 || xx >= level.w2 as i64 {
                continue;
            }
            acc += weight_y * weight_x * level.get(src, yy as usize, xx as usize);
        }
    }
    acc
}

/// Samples correlation windows around the flow target at every level.
///
/// Output channels: `num_levels * (2r+1)^2`, ordered level-major, then window
/// rows top to bottom, then columns left to right.
pub fn lookup(pyr: &CorrPyramid, flow: &FlowField, radius: usize) -> Result<FeatureMap> {
    let (h, w) = (pyr.height(), pyr.width());
    if flow.height() != h || flow.width() != w {
        return Err(FlowError::shape(format!(
            "flow {}x{} vs pyramid {h}x{w}",
            flow.height(),
            flow.width()
        )));
    }
    let side = 2 * radius + 1;
    let channels = CorrPyramid::lookup_channels(pyr.num_levels(), radius);
    let mut out = FeatureMap::zeros(h, w, channels);
    for r in 0..h {
        for c in 0..w {
            let src = r * w + c;
            let tx = c as f64 + flow.u_at(r, c);
            let ty = r as f64 + flow.v_at(r, c);
            let px = out.pixel_mut(r, c);
            for (li, level) in pyr.levels.iter().enumerate() {
                let scale = (1u64 << li) as f64;
                let cy = ty / scale;
                let cx = tx / scale;
                for dy in 0..side {
                    for dx in 0..side {
                        let sy = cy + dy as f64 - radius as f64;
                        let sx = cx + dx as f64 - radius as f64;
                        px[li * side * side + dy * side + dx] = bilinear(level, src, sy, sx);
                    }
                }
            }
        }
    }
    Ok(out)
}
