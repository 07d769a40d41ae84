//! Confusion matrices, per-class F1 and a side-by-side report.

use smallgeo::metrics::{confusion_with_classes, report, ModelResult};
use smallgeo::raster::{ClassEntry, ClassSchema, GeoTransform, LabelRaster};

fn main() -> smallgeo::Result<()> {
    let gt = GeoTransform::unit();
    let truth = LabelRaster::new(4, 2, vec![1, 1, 2, 2, 3, 3, 0, 0], gt)?;
    let good = LabelRaster::new(4, 2, vec![1, 1, 2, 2, 3, 1, 2, 0], gt)?;
    let poor = LabelRaster::new(4, 2, vec![2, 1, 1, 0, 3, 3, 1, 1], gt)?;
    let schema = ClassSchema::new(vec![
        ClassEntry { id: 1, name: "crop".into(), color: [230, 200, 60] },
        ClassEntry { id: 2, name: "grass".into(), color: [120, 200, 90] },
        ClassEntry { id: 3, name: "urban".into(), color: [150, 150, 150] },
    ])?;
    let ids = schema.ids();

    let results = vec![
        ModelResult::new("good", confusion_with_classes(&good, &truth, &ids)?),
        ModelResult::new("poor", confusion_with_classes(&poor, &truth, &ids)?),
    ];
    let path = std::env::temp_dir().join("smallgeo-report.json");
    let r = report(results, &schema, &path)?;
    print!("{}", r.to_table());
    Ok(())
}
