//! Trains a small patch U-Net and saves it in the versioned model format.
//!
//! ```text
//! cargo run --release --example unet_training -- [epochs]
//! ```

use smallgeo::labels::rasterize_polygons;
use smallgeo::model_io::{load_model, save_model, Model};
use smallgeo::synth::{generate_scene, SceneSpec};
use smallgeo::unet::{extract_patches, predict_scene, train_unet, UNetConfig};

fn main() -> smallgeo::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let mut spec = SceneSpec::with_texture();
    spec.width = 128;
    spec.height = 128;
    let scene = generate_scene(&spec, 3)?;
    let labels = rasterize_polygons(&scene.polygons, spec.width, spec.height, scene.raster.geotransform())?;

    let all = extract_patches(&scene.raster, Some(&labels), 16)?;
    let keep: Vec<usize> = (0..all.len()).filter(|&i| all.is_supervised(i)).collect();
    let patches = all.select(&keep);
    let cfg = UNetConfig {
        n_classes: scene.schema.ids().len(),
        depth: 4,
        epochs,
        ..Default::default()
    };
    let model = train_unet(&patches, &cfg)?;
    println!("{} parameters, {} training patches", model.n_params(), patches.len());
    for (e, loss) in model.loss_history.iter().enumerate().step_by((epochs / 10).max(1)) {
        println!("epoch {e:>4}  loss {loss:.4}");
    }

    let path = std::env::temp_dir().join("smallgeo-unet.json");
    save_model(&Model::UNet(model.clone()), &path)?;
    let reloaded = load_model(&path)?;
    assert_eq!(reloaded.predict(&scene.raster)?, predict_scene(&model, &scene.raster)?);
    println!("saved and reloaded {}", path.display());
    Ok(())
}
