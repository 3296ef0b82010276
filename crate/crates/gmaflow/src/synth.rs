//! Seeded synthetic scenes: translating textured layers over a translating
//! background, with exact ground-truth flow and occlusion labels.
//!
//! Translations are integer-valued, so ground truth is exact and brightness
//! constancy holds bit for bit on non-occluded pixels. Textures are
//! per-pixel noise quantized to 8 bits, which survives PPM round trips
//! unchanged and gives correlation lookups distinctive signatures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::grid::{FlowField, ImageGrid};
use crate::metrics::{partition_occlusion, OcclusionPartition};

/// Largest canvas side and translation magnitude accepted.
pub const MAX_CANVAS: usize = 1 << 12;
/// Texture RNG streams start here; pipeline weight streams stay below.
const TEXTURE_STREAM_BASE: u64 = 100;

/// One opaque rectangular layer: position and size in frame 1, an integer
/// translation to frame 2, and a depth (larger = nearer the camera).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Column of the left edge in frame 1 (may start off-canvas).
    pub x: i64,
    /// Row of the top edge in frame 1.
    pub y: i64,
    pub width: usize,
    pub height: usize,
    /// Horizontal translation in pixels, positive rightward.
    pub u: i64,
    /// Vertical translation in pixels, positive downward.
    pub v: i64,
    /// Depth order; layers must be listed with strictly increasing depth.
    pub depth: u32,
    /// Texture seed override; derived from the scene seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture_seed: Option<u64>,
}

/// Background translation; the background is below every layer and covers
/// the whole canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub u: i64,
    pub v: i64,
}

/// Full scene description. Serialized as TOML:
///
/// ```toml
/// height = 32
/// width = 32
/// seed = 7
///
/// [background]
/// u = 5
/// v = 0
///
/// [[layers]]
/// x = 10
/// y = 10
/// width = 8
/// height = 8
/// u = -2
/// v = 1
/// depth = 1
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub background: BackgroundSpec,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(FlowError::invalid("canvas must be non-empty"));
        }
        if self.height > MAX_CANVAS || self.width > MAX_CANVAS {
            return Err(FlowError::invalid(format!(
                "canvas {}x{} above desk scale (limit {MAX_CANVAS})",
                self.height, self.width
            )));
        }
        let check_shift = |u: i64, v: i64, what: &str| -> Result<()> {
            if u.unsigned_abs() > MAX_CANVAS as u64 || v.unsigned_abs() > MAX_CANVAS as u64 {
                return Err(FlowError::invalid(format!(
                    "{what} translation ({u}, {v}) above desk scale (limit {MAX_CANVAS})"
                )));
            }
            Ok(())
        };
        check_shift(self.background.u, self.background.v, "background")?;
        let mut prev_depth: Option<u32> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.width == 0 || layer.height == 0 {
                return Err(FlowError::invalid(format!(
                    "layer {i} has zero area ({}x{})",
                    layer.width, layer.height
                )));
            }
            if layer.width > MAX_CANVAS || layer.height > MAX_CANVAS {
                return Err(FlowError::invalid(format!("layer {i} above desk scale")));
            }
            check_shift(layer.u, layer.v, &format!("layer {i}"))?;
            if let Some(prev) = prev_depth {
                if layer.depth <= prev {
                    return Err(FlowError::invalid(format!(
                        "layer {i} depth {} must exceed previous depth {prev}",
                        layer.depth
                    )));
                }
            }
            prev_depth = Some(layer.depth);
        }
        Ok(())
    }

    /// Parses the TOML schema shown on [`SceneSpec`]. Syntax and schema
    /// errors keep the parser's line/column diagnostics.
    pub fn from_toml_str(text: &str) -> Result<SceneSpec> {
        let spec: SceneSpec =
            toml::from_str(text).map_err(|e| FlowError::Parse(format!("scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| FlowError::Parse(format!("scene spec: {e}")))
    }
}

/// Frame pair plus exact ground truth.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub img1: ImageGrid,
    pub img2: ImageGrid,
    pub gt: FlowField,
    /// True where the frame-1 pixel is occluded in frame 2.
    pub occ: Vec<bool>,
    pub partition: OcclusionPartition,
}

/// 8-bit noise patch in layer-local coordinates.
struct Texture {
    origin_r: i64,
    origin_c: i64,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Texture {
    fn generate(rng: &mut ChaCha8Rng, origin_r: i64, origin_c: i64, rows: usize, cols: usize) -> Self {
        let data = (0..rows * cols * 3)
            .map(|_| rng.random_range(0..=255u8) as f64 / 255.0)
            .collect();
        Texture { origin_r, origin_c, rows, cols, data }
    }

    fn sample(&self, local_r: i64, local_c: i64, ch: usize) -> f64 {
        let r = local_r - self.origin_r;
        let c = local_c - self.origin_c;
        debug_assert!(r >= 0 && (r as usize) < self.rows && c >= 0 && (c as usize) < self.cols);
        self.data[(r as usize * self.cols + c as usize) * 3 + ch]
    }
}

/// Layer geometry shared by both frames; `index` of `None` is the background.
struct Sheet {
    /// Frame-1 top-left corner; the background uses the canvas origin.
    origin_r: i64,
    origin_c: i64,
    rows: i64,
    cols: i64,
    u: i64,
    v: i64,
    texture: Texture,
}

impl Sheet {
    fn covers_frame1(&self, r: i64, c: i64) -> bool {
        r >= self.origin_r
            && r < self.origin_r + self.rows
            && c >= self.origin_c
            && c < self.origin_c + self.cols
    }

    fn covers_frame2(&self, r: i64, c: i64) -> bool {
        self.covers_frame1(r - self.v, c - self.u)
    }

    /// Color in frame 1 at canvas pixel `(r, c)`; caller checked coverage.
    fn color_frame1(&self, r: i64, c: i64, ch: usize) -> f64 {
        self.texture.sample(r - self.origin_r, c - self.origin_c, ch)
    }

    /// Color in frame 2; the sheet carried its texture along its translation.
    fn color_frame2(&self, r: i64, c: i64, ch: usize) -> f64 {
        self.color_frame1(r - self.v, c - self.u, ch)
    }
}

fn build_sheets(spec: &SceneSpec) -> Vec<Sheet> {
    let stream_rng = |index: u64, explicit: Option<u64>| -> ChaCha8Rng {
        match explicit {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(TEXTURE_STREAM_BASE + index);
                rng
            }
        }
    };

    let mut sheets = Vec::with_capacity(spec.layers.len() + 1);

    // Background texture must cover every local coordinate sampled by either
    // frame: frame 1 reads [0, H) x [0, W), frame 2 reads that range shifted
    // by the negated translation.
    let (bu, bv) = (spec.background.u, spec.background.v);
    let mut bg_rng = stream_rng(0, None);
    let bg_texture = Texture::generate(
        &mut bg_rng,
        (-bv).min(0),
        (-bu).min(0),
        spec.height + bv.unsigned_abs() as usize,
        spec.width + bu.unsigned_abs() as usize,
    );
    sheets.push(Sheet {
        origin_r: 0,
        origin_c: 0,
        rows: spec.height as i64,
        cols: spec.width as i64,
        u: bu,
        v: bv,
        texture: bg_texture,
    });

    for (i, layer) in spec.layers.iter().enumerate() {
        let mut rng = stream_rng(i as u64 + 1, layer.texture_seed);
        let texture = Texture::generate(&mut rng, 0, 0, layer.height, layer.width);
        sheets.push(Sheet {
            origin_r: layer.y,
            origin_c: layer.x,
            rows: layer.height as i64,
            cols: layer.width as i64,
            u: layer.u,
            v: layer.v,
            texture,
        });
    }
    sheets
}

/// Index of the topmost sheet covering the pixel. Sheets are ordered bottom
/// (background) to top, so the highest covering index wins. The background
/// covers the canvas in frame 1 but may expose nothing at frame-2 border
/// pixels it translated away from; those stay covered by definition since
/// frame 2's background fills the frame too (it is unbounded noise, clipped
/// by the texture we generated for exactly this range).
fn owner_frame1(sheets: &[Sheet], r: i64, c: i64) -> usize {
    (0..sheets.len()).rev().find(|&i| sheets[i].covers_frame1(r, c)).unwrap_or(0)
}

fn owner_frame2(sheets: &[Sheet], r: i64, c: i64) -> usize {
    (0..sheets.len())
        .rev()
        .find(|&i| i == 0 || sheets[i].covers_frame2(r, c))
        .unwrap_or(0)
}

/// Renders the frame pair with exact ground truth.
///
/// Ground truth at a pixel is the translation of the topmost sheet covering
/// it in frame 1. A pixel is occluded when its target leaves the frame or a
/// strictly higher sheet covers the target in frame 2.
pub fn render_pair(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let sheets = build_sheets(spec);

    let mut img1 = ImageGrid::zeros(h, w, 3)?;
    let mut img2 = ImageGrid::zeros(h, w, 3)?;
    let mut gt = FlowField::zeros(h, w);
    let mut occ = vec![false; h * w];

    for r in 0..h {
        for c in 0..w {
            let (ri, ci) = (r as i64, c as i64);

            let own1 = owner_frame1(&sheets, ri, ci);
            for ch in 0..3 {
                img1.set(r, c, ch, sheets[own1].color_frame1(ri, ci, ch));
            }
            gt.set_vector(r, c, sheets[own1].u as f64, sheets[own1].v as f64);

            let own2 = owner_frame2(&sheets, ri, ci);
            for ch in 0..3 {
                img2.set(r, c, ch, sheets[own2].color_frame2(ri, ci, ch));
            }

            // occlusion: target off-frame, or covered by a strictly higher
            // sheet at the target in frame 2
            let (tr, tc) = (ri + sheets[own1].v, ci + sheets[own1].u);
            let outside = tr < 0 || tr >= h as i64 || tc < 0 || tc >= w as i64;
            occ[r * w + c] = outside || owner_frame2(&sheets, tr, tc) > own1;
        }
    }

    let partition = partition_occlusion(&occ, &gt)?;
    Ok(RenderedScene { img1, img2, gt, occ, partition })
}
