//! Colorize a flow field with the 55-bin color wheel and export an
//! attention heatmap, both as portable pixmaps.
//!
//! Run with: cargo run --example visualize_flow

use gmaflow::gma::{gma_forward, GmaConfig, GmaParams};
use gmaflow::grid::{FeatureMap, FlowField};
use gmaflow::io::write_image_file;
use gmaflow::viz::{attention_heatmap, color_wheel, flow_to_color};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gmaflow::Result<()> {
    let out_dir = std::env::temp_dir().join("gmaflow_visualize_flow");
    std::fs::create_dir_all(&out_dir)?;

    // a rotating flow field covers every wheel hue
    let n = 64usize;
    let mut flow = FlowField::zeros(n, n);
    let center = (n as f64 - 1.0) / 2.0;
    for r in 0..n {
        for c in 0..n {
            flow.set_vector(r, c, -(r as f64 - center), c as f64 - center);
        }
    }
    let img = flow_to_color(&flow, None)?;
    let flow_path = out_dir.join("rotation.ppm");
    write_image_file(&img, &flow_path)?;
    println!("wrote {}", flow_path.display());

    let wheel = color_wheel();
    println!("wheel has {} bins; bin 0 = {:?}", wheel.len(), wheel[0]);

    // attention heatmap for the center query of a small aggregation instance
    let (h, w, d) = (8usize, 8usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let context = FeatureMap::from_vec(
        h,
        w,
        d,
        (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let motion = FeatureMap::from_vec(
        h,
        w,
        d,
        (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let params = GmaParams::seeded(d, d, d, h, w, 4)?;
    let out = gma_forward(&context, &motion, &params, &GmaConfig::standard(d, d, d))?;
    let attention = out.attention.expect("materialized at this size");

    let query = (h / 2) * w + w / 2;
    let heat = attention_heatmap(&attention, query, h, w)?;
    let heat_path = out_dir.join("attention_center.pgm");
    write_image_file(&heat, &heat_path)?;
    println!("wrote {}", heat_path.display());

    // brightest pixel in the map is the attention argmax
    let row = attention.row(query);
    let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    assert_eq!(heat.get(argmax / w, argmax % w, 0), 1.0);
    println!("brightest heatmap pixel matches attention argmax ({argmax})");
    Ok(())
}
