//! Feature and context encoders: small stacks of strided convolutions that
//! take full-resolution images to 1/8-resolution feature maps.
//!
//! Convolutions are plain cross-correlation with zero "same" padding applied
//! before the stride, so each stride-2 stage exactly halves even extents.
//! Weights are either loaded from a container or drawn from a seeded
//! generator; nothing here trains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FlowError, Result};
use crate::grid::{FeatureMap, ImageGrid};

/// Downsampling factor of both encoders.
pub const ENCODER_STRIDE: usize = 8;

/// Desk-scale channel defaults.
pub const DEFAULT_D_FEAT: usize = 32;
pub const DEFAULT_D_C: usize = 32;
pub const DEFAULT_D_H: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    ReLU,
    Tanh,
    None,
}

impl Nonlinearity {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::ReLU => v.max(0.0),
            Nonlinearity::Tanh => v.tanh(),
            Nonlinearity::None => v,
        }
    }

    /// Stable numeric code used by the weight container.
    pub fn code(self) -> u32 {
        match self {
            Nonlinearity::None => 0,
            Nonlinearity::ReLU => 1,
            Nonlinearity::Tanh => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Nonlinearity::None),
            1 => Ok(Nonlinearity::ReLU),
            2 => Ok(Nonlinearity::Tanh),
            other => Err(FlowError::Format(format!("unknown nonlinearity code {other}"))),
        }
    }
}

/// One convolution layer: square `kernel x kernel` window, stride, weights in
/// `[c_out][c_in][kr][kc]` row-major order, per-output-channel bias, and the
/// nonlinearity applied after.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub nonlinearity: Nonlinearity,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(FlowError::invalid(format!(
                "kernel must be odd and positive, got {}",
                self.kernel
            )));
        }
        if self.stride == 0 {
            return Err(FlowError::invalid("stride must be at least 1"));
        }
        let want = self.kernel * self.kernel * self.c_in * self.c_out;
        if self.weights.len() != want {
            return Err(FlowError::shape(format!(
                "conv weights: {} values for {}x{}x{}x{}",
                self.weights.len(),
                self.c_out,
                self.c_in,
                self.kernel,
                self.kernel
            )));
        }
        if self.bias.len() != self.c_out {
            return Err(FlowError::shape(format!(
                "conv bias: {} values for {} output channels",
                self.bias.len(),
                self.c_out
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, co: usize, ci: usize, kr: usize, kc: usize) -> f64 {
        self.weights[((co * self.c_in + ci) * self.kernel + kr) * self.kernel + kc]
    }

    /// Uniform weights and biases on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// `fan_in = kernel^2 * c_in`.
    pub fn seeded(
        kernel: usize,
        stride: usize,
        c_in: usize,
        c_out: usize,
        nonlinearity: Nonlinearity,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = kernel * kernel * c_in;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights =
            (0..kernel * kernel * c_in * c_out).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..c_out).map(|_| rng.random_range(-bound..bound)).collect();
        ConvSpec { kernel, stride, c_in, c_out, weights, bias, nonlinearity }
    }

    /// All-zero weights and biases; handy for fixtures.
    pub fn zeroed(
        kernel: usize,
        stride: usize,
        c_in: usize,
        c_out: usize,
        nonlinearity: Nonlinearity,
    ) -> Self {
        ConvSpec {
            kernel,
            stride,
            c_in,
            c_out,
            weights: vec![0.0; kernel * kernel * c_in * c_out],
            bias: vec![0.0; c_out],
            nonlinearity,
        }
    }
}

/// Strided cross-correlation with zero "same" padding.
///
/// Output extent per axis is `ceil(extent / stride)`.
pub fn conv2d(input: &FeatureMap, spec: &ConvSpec) -> Result<FeatureMap> {
    spec.validate()?;
    if input.channels() != spec.c_in {
        return Err(FlowError::shape(format!(
            "conv expects {} input channels, got {}",
            spec.c_in,
            input.channels()
        )));
    }
    let (h, w) = (input.height(), input.width());
    let pad = (spec.kernel / 2) as i64;
    let h_out = h.div_ceil(spec.stride);
    let w_out = w.div_ceil(spec.stride);
    let mut out = FeatureMap::zeros(h_out, w_out, spec.c_out);
    for ro in 0..h_out {
        for co_idx in 0..w_out {
            let base_r = (ro * spec.stride) as i64 - pad;
            let base_c = (co_idx * spec.stride) as i64 - pad;
            let px = out.pixel_mut(ro, co_idx);
            for co in 0..spec.c_out {
                let mut acc = spec.bias[co];
                for kr in 0..spec.kernel {
                    let rr = base_r + kr as i64;
                    if rr < 0 || rr >= h as i64 {
                        continue;
                    }
                    for kc in 0..spec.kernel {
                        let cc = base_c + kc as i64;
                        if cc < 0 || cc >= w as i64 {
                            continue;
                        }
                        let in_px = input.pixel(rr as usize, cc as usize);
                        for ci in 0..spec.c_in {
                            acc += in_px[ci] * spec.weight(co, ci, kr, kc);
                        }
                    }
                }
                px[co] = spec.nonlinearity.apply(acc);
            }
        }
    }
    Ok(out)
}

/// A stack of convolution layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub layers: Vec<ConvSpec>,
}

impl EncoderWeights {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(FlowError::invalid("encoder needs at least one layer"));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[0].c_out != pair[1].c_in {
                return Err(FlowError::shape(format!(
                    "layer boundary: {} outputs feed {} inputs",
                    pair[0].c_out, pair[1].c_in
                )));
            }
        }
        Ok(())
    }

    /// Total spatial downsampling of the stack.
    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map(|l| l.c_out).unwrap_or(0)
    }

    /// Three stride-2 ReLU stages: 3 -> 16 -> 24 -> `d_out`.
    pub fn seeded_feature(d_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderWeights {
            layers: vec![
                ConvSpec::seeded(3, 2, 3, 16, Nonlinearity::ReLU, &mut rng),
                ConvSpec::seeded(3, 2, 16, 24, Nonlinearity::ReLU, &mut rng),
                ConvSpec::seeded(3, 2, 24, d_out, Nonlinearity::ReLU, &mut rng),
            ],
        }
    }

    /// Like the feature stack but with a linear final layer wide enough to
    /// split into context and initial hidden state.
    pub fn seeded_context(d_c: usize, d_h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderWeights {
            layers: vec![
                ConvSpec::seeded(3, 2, 3, 16, Nonlinearity::ReLU, &mut rng),
                ConvSpec::seeded(3, 2, 16, 24, Nonlinearity::ReLU, &mut rng),
                ConvSpec::seeded(3, 2, 24, d_c + d_h, Nonlinearity::None, &mut rng),
            ],
        }
    }

    pub fn apply(&self, input: &FeatureMap) -> Result<FeatureMap> {
        self.validate()?;
        let mut current = input.clone();
        for layer in &self.layers {
            current = conv2d(&current, layer)?;
        }
        Ok(current)
    }
}

fn check_divisible(img: &ImageGrid, stride: usize) -> Result<()> {
    if img.height() % stride != 0 || img.width() % stride != 0 {
        return Err(FlowError::invalid(format!(
            "image {}x{} not divisible by encoder stride {stride}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Runs the matching-feature encoder on one frame.
pub fn feature_encoder(img: &ImageGrid, weights: &EncoderWeights) -> Result<FeatureMap> {
    check_divisible(img, weights.total_stride())?;
    let input = to_rgb_features(img);
    weights.apply(&input)
}

/// Runs the context encoder on the reference frame and splits the result
/// into context features (no nonlinearity) and the initial GRU hidden state
/// (Tanh), `d_c` and remaining channels respectively.
pub fn context_encoder(
    img: &ImageGrid,
    weights: &EncoderWeights,
    d_c: usize,
) -> Result<(FeatureMap, FeatureMap)> {
    check_divisible(img, weights.total_stride())?;
    let total = weights.output_channels();
    if d_c == 0 || d_c >= total {
        return Err(FlowError::invalid(format!(
            "context split {d_c} out of {total} output channels leaves no hidden state"
        )));
    }
    let input = to_rgb_features(img);
    let full = weights.apply(&input)?;
    let d_h = total - d_c;
    let (h, w) = (full.height(), full.width());
    let mut context = FeatureMap::zeros(h, w, d_c);
    let mut hidden = FeatureMap::zeros(h, w, d_h);
    for r in 0..h {
        for c in 0..w {
            let px = full.pixel(r, c);
            context.pixel_mut(r, c).copy_from_slice(&px[0..d_c]);
            for (dst, &src) in hidden.pixel_mut(r, c).iter_mut().zip(&px[d_c..]) {
                *dst = src.tanh();
            }
        }
    }
    Ok((context, hidden))
}

/// Images enter the encoders as 3-channel features; grayscale replicates.
fn to_rgb_features(img: &ImageGrid) -> FeatureMap {
    if img.channels() == 3 {
        return img.to_feature_map();
    }
    let mut out = FeatureMap::zeros(img.height(), img.width(), 3);
    for r in 0..img.height() {
        for c in 0..img.width() {
            let v = img.get(r, c, 0);
            out.pixel_mut(r, c).copy_from_slice(&[v, v, v]);
        }
    }
    out
}
