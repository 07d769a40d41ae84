//! Random forest on sampled pixels, then a full-scene class map.

use smallgeo::classify::predict_raster;
use smallgeo::forest::{forest_predict, train_forest, ForestConfig};
use smallgeo::labels::{rasterize_polygons, sample_pixels, split_polygons};
use smallgeo::metrics::{confusion_with_classes, metrics};
use smallgeo::synth::{generate_scene, SceneSpec};

fn main() -> smallgeo::Result<()> {
    let scene = generate_scene(&SceneSpec::separable(), 1)?;
    let (w, h, gt) = (scene.raster.width(), scene.raster.height(), scene.raster.geotransform());
    let (train, test) = split_polygons(&scene.polygons, 0.25, 1)?;
    let samples = sample_pixels(&scene.raster, &rasterize_polygons(&train, w, h, gt)?, 500, 1)?;

    let cfg = ForestConfig { n_trees: 50, ..Default::default() };
    let forest = train_forest(&samples, &cfg)?;
    let deepest = forest.trees().iter().map(|t| t.depth()).max().unwrap_or(0);
    println!("{} trees, mtry {}, deepest {deepest}", forest.trees().len(), forest.mtry());

    let (class, votes) = forest_predict(&forest, &scene.raster.pixel(w / 2, h / 2))?;
    println!("center pixel -> class {class}, votes {votes:?}");

    let map = predict_raster(&forest, &scene.raster)?;
    let m = metrics(&confusion_with_classes(&map, &rasterize_polygons(&test, w, h, gt)?, &scene.schema.ids())?);
    println!("held-out macro F1 {:.3}", m.macro_avg.f1);
    Ok(())
}
