//! Generates the separable and texture scenes and writes one to disk.

use smallgeo::labels::write_polygons;
use smallgeo::raster::{write_bandstack, write_class_map};
use smallgeo::synth::{generate_scene, layout, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, spec) in [("separable", SceneSpec::separable()), ("texture", SceneSpec::with_texture())] {
        let scene = generate_scene(&spec, 42)?;
        let regions = layout(&spec, 42)?;
        println!(
            "{name}: {}x{}x{}, {} classes, {} regions, {} label polygons",
            spec.width,
            spec.height,
            spec.n_bands,
            spec.n_classes(),
            regions.len(),
            scene.polygons.len()
        );
        let dir = std::env::temp_dir().join(format!("smallgeo-{name}"));
        std::fs::create_dir_all(&dir)?;
        write_bandstack(&scene.raster, &dir.join("scene"))?;
        write_class_map(&scene.truth, &scene.schema, &dir.join("truth"))?;
        write_polygons(&scene.polygons, &dir.join("polygons.geojson"))?;
        println!("  written to {}", dir.display());
    }
    Ok(())
}
