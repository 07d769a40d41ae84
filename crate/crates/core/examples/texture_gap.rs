//! Pixel learners versus the patch U-Net on a checkerboard texture class.
//!
//! ```text
//! cargo run --release --example texture_gap -- [epochs]
//! ```

use std::time::Instant;

use smallgeo::classify::predict_raster;
use smallgeo::forest::{train_forest, ForestConfig};
use smallgeo::labels::{rasterize_polygons, sample_pixels, split_polygons};
use smallgeo::metrics::{confusion_with_classes, metrics};
use smallgeo::synth::{generate_scene, SceneSpec};
use smallgeo::unet::{extract_patches, predict_scene, train_unet, UNetConfig};

fn main() -> smallgeo::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let spec = SceneSpec::with_texture();
    let scene = generate_scene(&spec, 42)?;
    let (w, h, gt) = (spec.width, spec.height, scene.raster.geotransform());
    let (train, test) = split_polygons(&scene.polygons, 0.25, 42)?;
    let train_labels = rasterize_polygons(&train, w, h, gt)?;
    let test_labels = rasterize_polygons(&test, w, h, gt)?;
    let ids = scene.schema.ids();
    let texture = spec.texture_classes[0].class_id;

    let t = Instant::now();
    let samples = sample_pixels(&scene.raster, &train_labels, 500, 42)?;
    let forest = train_forest(&samples, &ForestConfig::default())?;
    let rf = metrics(&confusion_with_classes(&predict_raster(&forest, &scene.raster)?, &test_labels, &ids)?);
    println!(
        "rf   texture F1 {:.3}  macro F1 {:.3}  ({:.1?})",
        rf.f1(texture).unwrap_or(0.0),
        rf.macro_avg.f1,
        t.elapsed()
    );

    let t = Instant::now();
    let all = extract_patches(&scene.raster, Some(&train_labels), 16)?;
    let keep: Vec<usize> = (0..all.len()).filter(|&i| all.is_supervised(i)).collect();
    let patches = all.select(&keep);
    let cfg = UNetConfig {
        n_classes: ids.len(),
        epochs,
        ..Default::default()
    };
    let model = train_unet(&patches, &cfg)?;
    let pred = predict_scene(&model, &scene.raster)?;
    let un = metrics(&confusion_with_classes(&pred, &test_labels, &ids)?);
    let hist = &model.loss_history;
    println!(
        "unet texture F1 {:.3}  macro F1 {:.3}  ({} patches, loss {:.3} -> {:.3}, {:.1?})",
        un.f1(texture).unwrap_or(0.0),
        un.macro_avg.f1,
        patches.len(),
        hist[0],
        hist[hist.len() - 1],
        t.elapsed()
    );
    Ok(())
}
