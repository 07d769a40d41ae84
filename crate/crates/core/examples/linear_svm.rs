//! One-vs-one linear SVM with a KKT audit of every pairwise machine.

use smallgeo::classify::predict_raster;
use smallgeo::labels::{rasterize_polygons, sample_pixels, split_polygons};
use smallgeo::metrics::{confusion_with_classes, metrics};
use smallgeo::svm::{audit_kkt, train_linear_svm, SvmConfig};
use smallgeo::synth::{generate_scene, SceneSpec};

fn main() -> smallgeo::Result<()> {
    let scene = generate_scene(&SceneSpec::separable(), 2)?;
    let (w, h, gt) = (scene.raster.width(), scene.raster.height(), scene.raster.geotransform());
    let (train, test) = split_polygons(&scene.polygons, 0.25, 2)?;
    let samples = sample_pixels(&scene.raster, &rasterize_polygons(&train, w, h, gt)?, 200, 2)?;

    let model = train_linear_svm(&samples, &SvmConfig::default())?;
    for warning in model.warnings() {
        println!("warning: {warning}");
    }
    for a in audit_kkt(&model, &samples) {
        println!(
            "{} vs {}: max KKT violation {:.4}, weight residual {:.1e}",
            a.positive, a.negative, a.max_violation, a.weight_residual
        );
    }

    let map = predict_raster(&model, &scene.raster)?;
    let m = metrics(&confusion_with_classes(&map, &rasterize_polygons(&test, w, h, gt)?, &scene.schema.ids())?);
    println!("held-out macro F1 {:.3}", m.macro_avg.f1);
    Ok(())
}
