//! Flow colorization with the canonical 55-bin color wheel, and grayscale
//! attention heatmaps.

use crate::error::{FlowError, Result};
use crate::grid::{AttentionMatrix, FlowField, ImageGrid};

/// Segment lengths of the canonical color wheel, in hue order.
pub const WHEEL_SEGMENTS: [(usize, [f64; 3], [f64; 3]); 6] = [
    // (bins, start color, ramped channel target) per segment:
    // red->yellow, yellow->green, green->cyan, cyan->blue, blue->magenta,
    // magenta->red
    (15, [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]),
    (6, [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]),
    (4, [0.0, 1.0, 0.0], [0.0, 1.0, 1.0]),
    (11, [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]),
    (13, [0.0, 0.0, 1.0], [1.0, 0.0, 1.0]),
    (6, [1.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
];

/// Number of wheel entries (sum of segment lengths).
pub const WHEEL_BINS: usize = 55;

/// The 55-entry color wheel. Each segment ramps linearly from its start
/// color toward the next segment's start; bin 0 is pure red.
pub fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(WHEEL_BINS);
    for &(bins, start, end) in WHEEL_SEGMENTS.iter() {
        for i in 0..bins {
            let t = i as f64 / bins as f64;
            wheel.push([
                start[0] + t * (end[0] - start[0]),
                start[1] + t * (end[1] - start[1]),
                start[2] + t * (end[2] - start[2]),
            ]);
        }
    }
    debug_assert_eq!(wheel.len(), WHEEL_BINS);
    wheel
}

/// Smallest normalization divisor; keeps zero fields at zero magnitude
/// instead of dividing by zero.
pub const NORM_FLOOR: f64 = 1e-5;

/// Colorizes flow: direction selects the wheel hue, magnitude (normalized by
/// `max_norm`, default the maximum over valid pixels) sets saturation. Zero
/// vectors render white, magnitudes above `max_norm` are dimmed, invalid
/// pixels render black.
pub fn flow_to_color(flow: &FlowField, max_norm: Option<f64>) -> Result<ImageGrid> {
    let (h, w) = (flow.height(), flow.width());
    let norm = match max_norm {
        Some(m) => {
            if !(m > 0.0) || !m.is_finite() {
                return Err(FlowError::invalid(format!("max_norm must be positive, got {m}")));
            }
            m
        }
        None => {
            let mut max = 0.0f64;
            for r in 0..h {
                for c in 0..w {
                    if flow.valid_at(r, c) {
                        max = max.max(flow.u_at(r, c).hypot(flow.v_at(r, c)));
                    }
                }
            }
            max.max(NORM_FLOOR)
        }
    };

    let wheel = color_wheel();
    let ncols = wheel.len();
    let mut img = ImageGrid::zeros(h, w, 3)?;
    for r in 0..h {
        for c in 0..w {
            if !flow.valid_at(r, c) {
                continue; // black
            }
            let u = flow.u_at(r, c) / norm;
            let v = flow.v_at(r, c) / norm;
            let rad = u.hypot(v);
            // angle in [-1, 1]; the sign of zero matters: (u, 0) with u > 0
            // yields atan2(-0, -u) = -pi, landing exactly on bin 0
            let a = (-v).atan2(-u) / std::f64::consts::PI;
            let fk = (a + 1.0) / 2.0 * (ncols as f64 - 1.0);
            let k0 = (fk.floor() as usize).min(ncols - 1);
            let k1 = (k0 + 1) % ncols;
            let f = fk - k0 as f64;
            for ch in 0..3 {
                let col = (1.0 - f) * wheel[k0][ch] + f * wheel[k1][ch];
                let shaded = if rad <= 1.0 {
                    1.0 - rad * (1.0 - col) // white at zero magnitude
                } else {
                    col * 0.75 // out-of-range marker
                };
                img.set(r, c, ch, shaded.clamp(0.0, 1.0));
            }
        }
    }
    Ok(img)
}

/// One attention row rendered as an `H x W` grayscale map, min-max
/// normalized to [0, 1]. An all-equal row maps to all zeros by convention.
pub fn attention_heatmap(
    attention: &AttentionMatrix,
    query_pixel: usize,
    height: usize,
    width: usize,
) -> Result<ImageGrid> {
    if attention.size() != height * width {
        return Err(FlowError::shape(format!(
            "attention over {} pixels cannot reshape to {height}x{width}",
            attention.size()
        )));
    }
    if query_pixel >= attention.size() {
        return Err(FlowError::invalid(format!(
            "query pixel {query_pixel} out of range for {} pixels",
            attention.size()
        )));
    }
    let row = attention.row(query_pixel);
    let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut img = ImageGrid::zeros(height, width, 1)?;
    if max > min {
        let scale = 1.0 / (max - min);
        for r in 0..height {
            for c in 0..width {
                img.set(r, c, 0, (row[r * width + c] - min) * scale);
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{softmax_rows, Matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent wheel table from the documented bin counts, built with
    /// the classic integer ramp (255 * i / bins scaled back to [0, 1]).
    fn reference_wheel() -> Vec<[f64; 3]> {
        let (ry, yg, gc, cb, bm, mr) = (15usize, 6, 4, 11, 13, 6);
        let mut wheel = Vec::new();
        for i in 0..ry {
            wheel.push([1.0, i as f64 / ry as f64, 0.0]);
        }
        for i in 0..yg {
            wheel.push([1.0 - i as f64 / yg as f64, 1.0, 0.0]);
        }
        for i in 0..gc {
            wheel.push([0.0, 1.0, i as f64 / gc as f64]);
        }
        for i in 0..cb {
            wheel.push([0.0, 1.0 - i as f64 / cb as f64, 1.0]);
        }
        for i in 0..bm {
            wheel.push([i as f64 / bm as f64, 0.0, 1.0]);
        }
        for i in 0..mr {
            wheel.push([1.0, 0.0, 1.0 - i as f64 / mr as f64]);
        }
        wheel
    }

    #[test]
    fn wheel_matches_reference_table() {
        let wheel = color_wheel();
        let reference = reference_wheel();
        assert_eq!(wheel.len(), 55);
        assert_eq!(reference.len(), 55);
        for (i, (a, b)) in wheel.iter().zip(reference.iter()).enumerate() {
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() < 1e-12, "bin {i} channel {ch}: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn zero_flow_renders_white() {
        let flow = FlowField::zeros(4, 4);
        let img = flow_to_color(&flow, None).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn max_norm_flow_hits_pure_zero_angle_color() {
        let mut flow = FlowField::zeros(1, 1);
        flow.set_vector(0, 0, 3.0, 0.0);
        let img = flow_to_color(&flow, Some(3.0)).unwrap();
        // bin 0 is pure red; full saturation at rad = 1
        assert!((img.get(0, 0, 0) - 1.0).abs() < 1e-12);
        assert!(img.get(0, 0, 1).abs() < 1e-12);
        assert!(img.get(0, 0, 2).abs() < 1e-12);
    }

    #[test]
    fn uniform_scaling_leaves_auto_normalized_image_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = FlowField::zeros(5, 5);
        let mut b = FlowField::zeros(5, 5);
        for r in 0..5 {
            for c in 0..5 {
                let (u, v) = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
                a.set_vector(r, c, u, v);
                b.set_vector(r, c, 2.0 * u, 2.0 * v);
            }
        }
        let img_a = flow_to_color(&a, None).unwrap();
        let img_b = flow_to_color(&b, None).unwrap();
        assert_eq!(img_a.data(), img_b.data());
    }

    #[test]
    fn channels_stay_in_unit_range_and_invalid_is_black() {
        let mut flow = FlowField::zeros(6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for r in 0..6 {
            for c in 0..6 {
                flow.set_vector(r, c, rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0));
            }
        }
        flow.set_valid(2, 2, false);
        // a max_norm below the actual maximum exercises the dimmed branch
        let img = flow_to_color(&flow, Some(1.5)).unwrap();
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for ch in 0..3 {
            assert_eq!(img.get(2, 2, ch), 0.0);
        }
    }

    #[test]
    fn rejects_nonpositive_max_norm() {
        let flow = FlowField::zeros(2, 2);
        assert!(flow_to_color(&flow, Some(0.0)).is_err());
        assert!(flow_to_color(&flow, Some(-1.0)).is_err());
    }

    fn attention_from_rows(rows: Vec<Vec<f64>>) -> AttentionMatrix {
        let n = rows.len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        let logits = Matrix::from_vec(n, n, data).unwrap();
        softmax_rows(&logits).unwrap()
    }

    #[test]
    fn uniform_attention_maps_to_zero() {
        let att = attention_from_rows(vec![vec![0.0; 4]; 4]);
        let img = attention_heatmap(&att, 1, 2, 2).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_row_yields_single_bright_pixel() {
        // huge logit produces a near-one-hot softmax row
        let mut rows = vec![vec![0.0; 4]; 4];
        rows[2][3] = 50.0;
        let att = attention_from_rows(rows);
        let img = attention_heatmap(&att, 2, 2, 2).unwrap();
        assert_eq!(img.get(1, 1, 0), 1.0);
        assert!(img.get(0, 0, 0) < 1e-12);
        assert!(img.get(0, 1, 0) < 1e-12);
        assert!(img.get(1, 0, 0) < 1e-12);
    }

    #[test]
    fn brightness_ordering_tracks_attention_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let att = attention_from_rows(rows);
        for q in [0usize, 5, 11] {
            let img = attention_heatmap(&att, q, 3, 4).unwrap();
            let row = att.row(q);
            let argmax = (0..n).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(img.get(argmax / 4, argmax % 4, 0), 1.0);
            // pairwise ordering is preserved by the affine rescale
            for i in 0..n {
                for j in 0..n {
                    let bi = img.get(i / 4, i % 4, 0);
                    let bj = img.get(j / 4, j % 4, 0);
                    assert_eq!(row[i] > row[j], bi > bj);
                }
            }
        }
    }

    #[test]
    fn heatmap_rejects_bad_indices_and_shapes() {
        let att = attention_from_rows(vec![vec![0.0; 4]; 4]);
        assert!(attention_heatmap(&att, 4, 2, 2).is_err());
        assert!(attention_heatmap(&att, 0, 3, 2).is_err());
    }
}
