//! Polygons to a label raster, then stratified pixel samples and per-class
//! band statistics.

use smallgeo::labels::{class_band_stats, rasterize_with_owners, sample_pixels_with_owners, split_polygons};
use smallgeo::synth::{generate_scene, SceneSpec};

fn main() -> smallgeo::Result<()> {
    let scene = generate_scene(&SceneSpec::separable(), 7)?;
    let (w, h, gt) = (scene.raster.width(), scene.raster.height(), scene.raster.geotransform());

    let (train, test) = split_polygons(&scene.polygons, 0.25, 7)?;
    println!("{} polygons: {} train, {} test", scene.polygons.len(), train.len(), test.len());

    let ras = rasterize_with_owners(&train, w, h, gt)?;
    let labeled = ras.labels.labels().iter().filter(|&&v| v != 0).count();
    println!("{labeled} labeled pixels, {} claimed twice", ras.overlapping_pixels);

    let samples = sample_pixels_with_owners(&scene.raster, &ras.labels, Some(&ras.owners), 200, 7)?;
    let stats = class_band_stats(&samples)?;
    for c in &stats.classes {
        let name = scene.schema.name(c.class_id).unwrap_or("?");
        println!("class {} {name:<13} n={:<4} band0 mean {:.3} std {:.3}", c.class_id, c.count, c.mean[0], c.std[0]);
    }
    Ok(())
}
