//! Round-trip every learned tensor through the binary weight containers and
//! confirm the reloaded pipeline reproduces the same flow bit for bit.
//!
//! Run with: cargo run --example save_load_weights

use gmaflow::io::{load_pipeline_weights, save_pipeline_weights};
use gmaflow::refinement::{run_pipeline, PipelineConfig, PipelineWeights};
use gmaflow::synth::{render_pair, BackgroundSpec, SceneSpec};

fn main() -> gmaflow::Result<()> {
    let dir = std::env::temp_dir().join("gmaflow_weights_demo");
    let _ = std::fs::remove_dir_all(&dir);

    let mut config = PipelineConfig::standard();
    config.iterations = 4;
    // a 32x32 frame gives a 4x4 correlation grid: three levels fit
    config.corr_levels = 3;
    let weights = PipelineWeights::seeded(&config, 4, 4, 123)?;

    save_pipeline_weights(&weights, &dir)?;
    for entry in std::fs::read_dir(&dir)? {
        let entry = entry?;
        println!("{} ({} bytes)", entry.file_name().to_string_lossy(), entry.metadata()?.len());
    }

    let reloaded = load_pipeline_weights(&dir, true)?;
    assert_eq!(reloaded, weights);
    println!("reloaded weights equal the originals exactly");

    let spec = SceneSpec {
        height: 32,
        width: 32,
        seed: 0,
        background: BackgroundSpec { u: 1, v: 1 },
        layers: vec![],
    };
    let scene = render_pair(&spec)?;
    let (flow_a, _) = run_pipeline(&scene.img1, &scene.img2, &weights, &config)?;
    let (flow_b, _) = run_pipeline(&scene.img1, &scene.img2, &reloaded, &config)?;
    assert_eq!(flow_a.u(), flow_b.u());
    assert_eq!(flow_a.v(), flow_b.v());
    println!("pipeline output identical with original and reloaded weights");

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
