//! The config-driven pipeline: synthesize a scene, run the random forest
//! end to end, then replay the run from its manifest.

use smallgeo::pipeline::{self, load_config, PipelineConfig, Preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("smallgeo-pipeline");
    let mut cfg = PipelineConfig::default();
    cfg.synth.preset = Preset::Separable;
    cfg.run.out = root.join("scene");
    pipeline::synth(&cfg)?;

    let mut run = load_config(&root.join("scene/pipeline.toml"))?;
    run.run.out = root.join("rf");
    let manifest = pipeline::run(&run)?;
    for a in &manifest.artifacts {
        println!("{} {}", a.sha256, a.path.display());
    }

    let mut replay = load_config(&root.join("rf/manifest.json"))?;
    replay.run.out = root.join("rf_replay");
    pipeline::run(&replay)?;
    let same = std::fs::read(root.join("rf/report.json"))? == std::fs::read(root.join("rf_replay/report.json"))?;
    println!("replayed report identical: {same}");
    Ok(())
}
