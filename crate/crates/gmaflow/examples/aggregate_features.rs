//! Global aggregation on a feature grid: the module output is an exact
//! identity at gate zero and a softmax-weighted global average at gate one.
//!
//! Run with: cargo run --example aggregate_features

use gmaflow::gma::{gma_forward, GmaConfig, GmaParams};
use gmaflow::grid::{flatten_hw, FeatureMap, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_map(h: usize, w: usize, d: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    let data = (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMap::from_vec(h, w, d, data).expect("sized data")
}

fn main() -> gmaflow::Result<()> {
    let (h, w, d) = (4usize, 5usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let context = random_map(h, w, d, &mut rng);
    let motion = random_map(h, w, d, &mut rng);

    let config = GmaConfig::standard(d, d, d);
    let mut params = GmaParams::seeded(d, d, d, h, w, 7)?;

    // the gate initializes to zero, so the module starts as the identity
    let out = gma_forward(&context, &motion, &params, &config)?;
    let motion_flat: Matrix = flatten_hw(&motion);
    assert_eq!(out.y_hat.data(), motion_flat.data());
    println!("alpha = 0: output is the motion features, bit for bit");

    // opening the gate mixes in globally aggregated motion
    params.alpha = 1.0;
    let out = gma_forward(&context, &motion, &params, &config)?;
    let diff: f64 = out
        .y_hat
        .data()
        .iter()
        .zip(motion_flat.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / motion_flat.data().len() as f64;
    println!("alpha = 1: mean |output - motion| = {diff:.4}");

    let attention = out.attention.expect("materialized at this size");
    let row = attention.row(0);
    let sum: f64 = row.iter().sum();
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "attention row 0: {} weights, sum {:.6}, max {:.4}",
        row.len(),
        sum,
        max
    );

    // combined output carries [motion | aggregated | context]
    println!(
        "combined map: {}x{} with {} channels",
        out.combined.height(),
        out.combined.width(),
        out.combined.channels()
    );
    Ok(())
}
