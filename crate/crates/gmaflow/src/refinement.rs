//! Iterative refinement: correlation lookup features are encoded to motion
//! features, optionally aggregated globally, and decoded by a convolutional
//! GRU into residual flows that accumulate into the estimate.
//!
//! The loop runs at 1/8 resolution and the final flow is upsampled bilinearly
//! with values scaled by 8. Everything is deterministic given weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::correlation::{all_pairs_correlation, build_pyramid, lookup, CorrPyramid};
use crate::encoder::{
    context_encoder, conv2d, feature_encoder, ConvSpec, EncoderWeights, Nonlinearity,
};
use crate::error::{FlowError, Result};
use crate::gma::{gma_forward, GmaConfig, GmaParams};
use crate::grid::{AttentionMatrix, FeatureMap, FlowField, ImageGrid};

/// Distinct generator streams per weight group, so adding or removing one
/// group never shifts another group's draws.
pub mod seed_stream {
    pub const FEATURE_ENCODER: u64 = 1;
    pub const CONTEXT_ENCODER: u64 = 2;
    pub const MOTION_ENCODER: u64 = 3;
    pub const GMA: u64 = 4;
    pub const GRU: u64 = 5;
}

/// GRU hidden state; entries stay strictly inside (-1, 1) because every
/// update is a convex blend of the previous state and a Tanh candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub hidden: FeatureMap,
}

/// One refinement step as recorded in the trace.
#[derive(Debug, Clone)]
pub struct IterationStep {
    /// Residual flow predicted this step, 1/8 resolution.
    pub residual: FlowField,
    /// Accumulated flow after this step, 1/8 resolution.
    pub accumulated: FlowField,
    /// Attention used this step, when aggregation ran on the materialized
    /// path.
    pub attention: Option<AttentionMatrix>,
    pub hidden_min: f64,
    pub hidden_max: f64,
}

/// Per-iteration record of the refinement loop.
#[derive(Debug, Clone, Default)]
pub struct IterationTrace {
    pub steps: Vec<IterationStep>,
}

/// Two convolutions on correlation features, one on the flow, one fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionEncoderWeights {
    pub corr1: ConvSpec,
    pub corr2: ConvSpec,
    pub flow1: ConvSpec,
    pub fusion: ConvSpec,
}

impl MotionEncoderWeights {
    pub fn seeded(lookup_channels: usize, d_m: usize, rng: &mut ChaCha8Rng) -> Self {
        MotionEncoderWeights {
            corr1: ConvSpec::seeded(3, 1, lookup_channels, 48, Nonlinearity::ReLU, rng),
            corr2: ConvSpec::seeded(3, 1, 48, 32, Nonlinearity::ReLU, rng),
            flow1: ConvSpec::seeded(3, 1, 2, 16, Nonlinearity::ReLU, rng),
            fusion: ConvSpec::seeded(3, 1, 32 + 16, d_m, Nonlinearity::None, rng),
        }
    }

    pub fn layers(&self) -> [&ConvSpec; 4] {
        [&self.corr1, &self.corr2, &self.flow1, &self.fusion]
    }

    pub fn validate(&self) -> Result<()> {
        for layer in self.layers() {
            layer.validate()?;
        }
        if self.corr1.c_out != self.corr2.c_in {
            return Err(FlowError::shape("motion encoder: corr1 output feeds corr2"));
        }
        if self.flow1.c_in != 2 {
            return Err(FlowError::shape("motion encoder: flow conv takes 2 channels"));
        }
        if self.fusion.c_in != self.corr2.c_out + self.flow1.c_out {
            return Err(FlowError::shape(
                "motion encoder: fusion input is corr2 + flow1 outputs",
            ));
        }
        Ok(())
    }

    pub fn d_m(&self) -> usize {
        self.fusion.c_out
    }
}

/// Convolutional GRU gates plus the two-layer flow head.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    /// Update gate; logistic applied after the convolution.
    pub gate_z: ConvSpec,
    /// Reset gate; logistic applied after the convolution.
    pub gate_r: ConvSpec,
    /// Candidate state; Tanh is the layer's own nonlinearity.
    pub candidate: ConvSpec,
    pub flow_head1: ConvSpec,
    pub flow_head2: ConvSpec,
}

impl GruWeights {
    pub fn seeded(d_h: usize, d_x: usize, rng: &mut ChaCha8Rng) -> Self {
        let c_in = d_h + d_x;
        GruWeights {
            gate_z: ConvSpec::seeded(3, 1, c_in, d_h, Nonlinearity::None, rng),
            gate_r: ConvSpec::seeded(3, 1, c_in, d_h, Nonlinearity::None, rng),
            candidate: ConvSpec::seeded(3, 1, c_in, d_h, Nonlinearity::Tanh, rng),
            flow_head1: ConvSpec::seeded(3, 1, d_h, 16, Nonlinearity::ReLU, rng),
            flow_head2: ConvSpec::seeded(3, 1, 16, 2, Nonlinearity::None, rng),
        }
    }

    pub fn layers(&self) -> [&ConvSpec; 5] {
        [&self.gate_z, &self.gate_r, &self.candidate, &self.flow_head1, &self.flow_head2]
    }

    pub fn validate(&self) -> Result<()> {
        for layer in self.layers() {
            layer.validate()?;
        }
        let d_h = self.gate_z.c_out;
        if self.gate_r.c_out != d_h || self.candidate.c_out != d_h {
            return Err(FlowError::shape("GRU gates must share the hidden width"));
        }
        if self.gate_z.c_in != self.gate_r.c_in || self.gate_z.c_in != self.candidate.c_in {
            return Err(FlowError::shape("GRU gates must share the input width"));
        }
        if self.flow_head1.c_in != d_h || self.flow_head2.c_in != self.flow_head1.c_out {
            return Err(FlowError::shape("flow head must consume the hidden state"));
        }
        if self.flow_head2.c_out != 2 {
            return Err(FlowError::shape("flow head must emit two channels"));
        }
        Ok(())
    }

    pub fn d_h(&self) -> usize {
        self.gate_z.c_out
    }

    /// Channels the GRU expects beyond its own hidden state.
    pub fn d_x(&self) -> usize {
        self.gate_z.c_in - self.gate_z.c_out
    }
}

/// Encodes lookup results and the current flow into motion features `y`.
pub fn motion_encoder(
    corr_features: &FeatureMap,
    flow: &FlowField,
    weights: &MotionEncoderWeights,
) -> Result<FeatureMap> {
    weights.validate()?;
    if corr_features.height() != flow.height() || corr_features.width() != flow.width() {
        return Err(FlowError::shape(format!(
            "correlation features {}x{} vs flow {}x{}",
            corr_features.height(),
            corr_features.width(),
            flow.height(),
            flow.width()
        )));
    }
    let a = conv2d(&conv2d(corr_features, &weights.corr1)?, &weights.corr2)?;
    let b = conv2d(&flow.to_feature_map(), &weights.flow1)?;
    let fused = FeatureMap::concat_channels(&[&a, &b])?;
    conv2d(&fused, &weights.fusion)
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One GRU step: `z = sigma(Wz [h|x])`, `r = sigma(Wr [h|x])`,
/// `q = tanh(Wq [r*h|x])`, `h' = (1-z) h + z q`, then the flow head reads
/// the new hidden state.
pub fn gru_update(
    state: &GruState,
    inputs: &FeatureMap,
    weights: &GruWeights,
) -> Result<(GruState, FlowField)> {
    weights.validate()?;
    let h = &state.hidden;
    if !h.same_spatial(inputs) {
        return Err(FlowError::shape(format!(
            "hidden {}x{} vs inputs {}x{}",
            h.height(),
            h.width(),
            inputs.height(),
            inputs.width()
        )));
    }
    if h.channels() != weights.d_h() || inputs.channels() != weights.d_x() {
        return Err(FlowError::shape(format!(
            "GRU weights expect hidden {} + inputs {}, got {} + {}",
            weights.d_h(),
            weights.d_x(),
            h.channels(),
            inputs.channels()
        )));
    }

    let hx = FeatureMap::concat_channels(&[h, inputs])?;
    let mut z = conv2d(&hx, &weights.gate_z)?;
    for v in z.data_mut() {
        *v = sigmoid(*v);
    }
    let mut r = conv2d(&hx, &weights.gate_r)?;
    for v in r.data_mut() {
        *v = sigmoid(*v);
    }

    let mut rh = h.clone();
    for (v, g) in rh.data_mut().iter_mut().zip(r.data()) {
        *v *= g;
    }
    let rhx = FeatureMap::concat_channels(&[&rh, inputs])?;
    let q = conv2d(&rhx, &weights.candidate)?;

    let mut new_hidden = FeatureMap::zeros(h.height(), h.width(), h.channels());
    for i in 0..new_hidden.data().len() {
        let zi = z.data()[i];
        new_hidden.data_mut()[i] = (1.0 - zi) * h.data()[i] + zi * q.data()[i];
    }

    let head = conv2d(&conv2d(&new_hidden, &weights.flow_head1)?, &weights.flow_head2)?;
    let (gh, gw) = (head.height(), head.width());
    let mut delta = FlowField::zeros(gh, gw);
    for row in 0..gh {
        for col in 0..gw {
            let px = head.pixel(row, col);
            if !(px[0].is_finite() && px[1].is_finite()) {
                return Err(FlowError::NonFinite(format!("residual flow at ({row}, {col})")));
            }
            delta.set_vector(row, col, px[0], px[1]);
        }
    }
    Ok((GruState { hidden: new_hidden }, delta))
}

/// Whether and how global aggregation runs inside the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmaSetting {
    Off,
    On(GmaConfig),
}

/// Loop shape and channel widths for one pipeline instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub iterations: usize,
    pub gma: GmaSetting,
    pub corr_levels: usize,
    pub corr_radius: usize,
    pub d_feat: usize,
    pub d_c: usize,
    pub d_h: usize,
    pub d_m: usize,
    /// Record attention matrices in the trace (memory per step is N^2).
    pub keep_attention: bool,
}

impl PipelineConfig {
    /// Desk-scale defaults: 12 iterations, 4 correlation levels at radius 4,
    /// 32 channels everywhere, content-only aggregation.
    pub fn standard() -> Self {
        PipelineConfig {
            iterations: 12,
            gma: GmaSetting::On(GmaConfig::standard(32, 32, 32)),
            corr_levels: 4,
            corr_radius: 4,
            d_feat: 32,
            d_c: 32,
            d_h: 32,
            d_m: 32,
            keep_attention: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(FlowError::invalid("pipeline needs at least one iteration"));
        }
        if self.d_feat == 0 || self.d_c == 0 || self.d_h == 0 || self.d_m == 0 {
            return Err(FlowError::invalid("channel widths must be at least 1"));
        }
        if let GmaSetting::On(g) = self.gma {
            g.validate()?;
            if g.d_c != self.d_c || g.d_m != self.d_m {
                return Err(FlowError::shape(format!(
                    "aggregation dims (D_c={}, D_m={}) disagree with pipeline (D_c={}, D_m={})",
                    g.d_c, g.d_m, self.d_c, self.d_m
                )));
            }
        }
        Ok(())
    }

    /// Channels the GRU receives besides its hidden state.
    pub fn gru_input_channels(&self) -> usize {
        match self.gma {
            GmaSetting::On(g) => g.combined_channels(),
            GmaSetting::Off => self.d_m + self.d_c,
        }
    }
}

/// Every learned tensor the pipeline touches.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineWeights {
    pub feature: EncoderWeights,
    pub context: EncoderWeights,
    pub motion: MotionEncoderWeights,
    /// Present iff the pipeline aggregates.
    pub gma: Option<GmaParams>,
    pub gru: GruWeights,
}

impl PipelineWeights {
    /// Draws every weight group from its own generator stream of `seed`, so
    /// two configs that share a group get bit-identical values for it.
    /// `h_max`/`w_max` size the positional tables (1/8-resolution extents).
    pub fn seeded(config: &PipelineConfig, h_max: usize, w_max: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let stream = |salt: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(salt);
            rng
        };
        let mut rng = stream(seed_stream::FEATURE_ENCODER);
        let feature = EncoderWeights {
            layers: vec![
                ConvSpec::seeded(3, 2, 3, 16, Nonlinearity::ReLU, &mut rng),
                ConvSpec::seeded(3, 2, 16, 24, Nonlinearity::ReLU, &mut rng),
                ConvSpec::seeded(3, 2, 24, config.d_feat, Nonlinearity::ReLU, &mut rng),
            ],
        };
        let mut rng = stream(seed_stream::CONTEXT_ENCODER);
        let context = EncoderWeights {
            layers: vec![
                ConvSpec::seeded(3, 2, 3, 16, Nonlinearity::ReLU, &mut rng),
                ConvSpec::seeded(3, 2, 16, 24, Nonlinearity::ReLU, &mut rng),
                ConvSpec::seeded(3, 2, 24, config.d_c + config.d_h, Nonlinearity::None, &mut rng),
            ],
        };
        let lookup_channels =
            CorrPyramid::lookup_channels(config.corr_levels, config.corr_radius);
        let mut rng = stream(seed_stream::MOTION_ENCODER);
        let motion = MotionEncoderWeights::seeded(lookup_channels, config.d_m, &mut rng);
        let gma = match config.gma {
            GmaSetting::On(g) => {
                let mut params = GmaParams::seeded(g.d_in, g.d_c, g.d_m, h_max, w_max, 0)?;
                let mut rng = stream(seed_stream::GMA);
                let draw = |rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng| {
                    use rand::Rng;
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let data =
                        (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
                    crate::grid::Matrix::from_vec(rows, cols, data)
                };
                params.w_qry = draw(g.d_in, g.d_c, g.d_c, &mut rng)?;
                params.w_key = draw(g.d_in, g.d_c, g.d_c, &mut rng)?;
                params.w_val = draw(g.d_m, g.d_m, g.d_m, &mut rng)?;
                Some(params)
            }
            GmaSetting::Off => None,
        };
        let mut rng = stream(seed_stream::GRU);
        let gru = GruWeights::seeded(config.d_h, config.gru_input_channels(), &mut rng);
        Ok(PipelineWeights { feature, context, motion, gma, gru })
    }

    pub fn validate_against(&self, config: &PipelineConfig) -> Result<()> {
        config.validate()?;
        self.feature.validate()?;
        self.context.validate()?;
        self.motion.validate()?;
        self.gru.validate()?;
        if self.feature.output_channels() != config.d_feat {
            return Err(FlowError::shape("feature encoder width disagrees with config"));
        }
        if self.context.output_channels() != config.d_c + config.d_h {
            return Err(FlowError::shape("context encoder width disagrees with config"));
        }
        if self.motion.d_m() != config.d_m {
            return Err(FlowError::shape("motion encoder width disagrees with config"));
        }
        match (&self.gma, config.gma) {
            (Some(p), GmaSetting::On(g)) => {
                if p.d_in != g.d_in || p.d_c != g.d_c || p.d_m != g.d_m {
                    return Err(FlowError::shape(
                        "aggregation weights disagree with config dims",
                    ));
                }
            }
            (None, GmaSetting::Off) => {}
            (Some(_), GmaSetting::Off) => {
                return Err(FlowError::invalid(
                    "aggregation weights present but aggregation is off",
                ));
            }
            (None, GmaSetting::On(_)) => {
                return Err(FlowError::invalid(
                    "aggregation enabled but no aggregation weights",
                ));
            }
        }
        if self.gru.d_h() != config.d_h || self.gru.d_x() != config.gru_input_channels() {
            return Err(FlowError::shape(format!(
                "GRU weights ({} + {}) disagree with config ({} + {})",
                self.gru.d_h(),
                self.gru.d_x(),
                config.d_h,
                config.gru_input_channels()
            )));
        }
        Ok(())
    }
}

/// Bilinear upsampling by an integer factor with flow values scaled by the
/// same factor; samples map through pixel centers with edge clamping.
pub fn upsample_flow(flow: &FlowField, factor: usize) -> FlowField {
    let (h, w) = (flow.height() * factor, flow.width() * factor);
    let mut out = FlowField::zeros(h, w);
    let scale = factor as f64;
    for r in 0..h {
        for c in 0..w {
            let sy = (r as f64 + 0.5) / scale - 0.5;
            let sx = (c as f64 + 0.5) / scale - 0.5;
            let y0 = sy.floor();
            let x0 = sx.floor();
            let wy = sy - y0;
            let wx = sx - x0;
            let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
            let mut u = 0.0;
            let mut v = 0.0;
            for (dy, weight_y) in [(0i64, 1.0 - wy), (1, wy)] {
                for (dx, weight_x) in [(0i64, 1.0 - wx), (1, wx)] {
                    let rr = clamp(y0 as i64 + dy, flow.height());
                    let cc = clamp(x0 as i64 + dx, flow.width());
                    let weight = weight_y * weight_x;
                    u += weight * flow.u_at(rr, cc);
                    v += weight * flow.v_at(rr, cc);
                }
            }
            out.set_vector(r, c, u * scale, v * scale);
        }
    }
    out
}

fn hidden_bounds(h: &FeatureMap) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in h.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Runs the full estimator: encoders, correlation pyramid, refinement loop,
/// and final upsampling. Returns the full-resolution flow and the
/// per-iteration trace.
pub fn run_pipeline(
    img1: &ImageGrid,
    img2: &ImageGrid,
    weights: &PipelineWeights,
    config: &PipelineConfig,
) -> Result<(FlowField, IterationTrace)> {
    weights.validate_against(config)?;
    if img1.height() != img2.height() || img1.width() != img2.width() {
        return Err(FlowError::shape(format!(
            "frames {}x{} vs {}x{}",
            img1.height(),
            img1.width(),
            img2.height(),
            img2.width()
        )));
    }

    let f1 = feature_encoder(img1, &weights.feature)?;
    let f2 = feature_encoder(img2, &weights.feature)?;
    let (context, hidden0) = context_encoder(img1, &weights.context, config.d_c)?;

    let vol = all_pairs_correlation(&f1, &f2)?;
    let pyramid = build_pyramid(vol, config.corr_levels, config.corr_radius)?;

    let (gh, gw) = (f1.height(), f1.width());
    let mut flow = FlowField::zeros(gh, gw);
    let mut state = GruState { hidden: hidden0 };
    let mut trace = IterationTrace::default();

    for _ in 0..config.iterations {
        let corr_features = lookup(&pyramid, &flow, config.corr_radius)?;
        let y = motion_encoder(&corr_features, &flow, &weights.motion)?;
        let (inputs, attention) = match (&config.gma, &weights.gma) {
            (GmaSetting::On(g), Some(params)) => {
                let out = gma_forward(&context, &y, params, g)?;
                let attention = if config.keep_attention { out.attention } else { None };
                (out.combined, attention)
            }
            _ => (FeatureMap::concat_channels(&[&y, &context])?, None),
        };
        let (new_state, delta) = gru_update(&state, &inputs, &weights.gru)?;
        state = new_state;
        flow = flow.add(&delta)?;
        let (hidden_min, hidden_max) = hidden_bounds(&state.hidden);
        trace.steps.push(IterationStep {
            residual: delta,
            accumulated: flow.clone(),
            attention,
            hidden_min,
            hidden_max,
        });
    }

    let full = upsample_flow(&flow, crate::encoder::ENCODER_STRIDE);
    Ok((full, trace))
}
