//! Aggregate over a grid too large to materialize its attention matrix: the
//! streaming path computes the same softmax-weighted sums in blocks.
//!
//! Run with: cargo run --release --example stream_attention

use gmaflow::gma::{gma_forward, GmaConfig, GmaParams, MATERIALIZE_LIMIT};
use gmaflow::grid::FeatureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gmaflow::Result<()> {
    // 72 x 64 = 4608 pixels, above the materialization limit
    let (h, w, d) = (72usize, 64usize, 4usize);
    let n = h * w;
    assert!(n > MATERIALIZE_LIMIT);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let context = FeatureMap::from_vec(
        h,
        w,
        d,
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let motion = FeatureMap::from_vec(
        h,
        w,
        d,
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let mut params = GmaParams::seeded(d, d, d, h, w, 9)?;
    params.alpha = 1.0;

    let start = std::time::Instant::now();
    let out = gma_forward(&context, &motion, &params, &GmaConfig::standard(d, d, d))?;
    println!(
        "aggregated {n} pixels in {:.2?} without a {n}x{n} matrix",
        start.elapsed()
    );
    assert!(out.attention.is_none(), "streaming path keeps no attention matrix");

    let mean: f64 = out.y_hat.data().iter().map(|v| v.abs()).sum::<f64>() / (n * d) as f64;
    println!("output: {}x{} features, mean |value| = {mean:.4}", n, d);
    Ok(())
}
