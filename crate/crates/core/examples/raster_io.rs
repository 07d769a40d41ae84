//! Band-stack round trip, cropping and a colored class map.

use smallgeo::raster::{
    read_bandstack, read_label_raster, write_bandstack, write_class_map, ClassEntry, ClassSchema, GeoTransform,
    LabelRaster, RasterStack,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("smallgeo-raster-io");
    std::fs::create_dir_all(&dir)?;

    let (w, h, bands) = (40, 30, 3);
    let values: Vec<f32> = (0..w * h * bands).map(|i| (i % 97) as f32 / 97.0).collect();
    let gt = GeoTransform::new(500_000.0, 10.0, 4_200_000.0, 10.0);
    let raster = RasterStack::new(w, h, bands, values, gt, Some(-9999.0))?;
    write_bandstack(&raster, &dir.join("stack"))?;
    let back = read_bandstack(&dir.join("stack.hdr"))?;
    assert_eq!(back, raster);

    let crop = back.crop(10, 5, 16, 16)?;
    println!(
        "cropped {}x{} starting at world ({}, {})",
        crop.width(),
        crop.height(),
        crop.geotransform().origin_x(),
        crop.geotransform().origin_y()
    );

    let schema = ClassSchema::new(vec![
        ClassEntry { id: 1, name: "water".into(), color: [30, 80, 200] },
        ClassEntry { id: 2, name: "forest".into(), color: [20, 120, 40] },
    ])?;
    let labels: Vec<u8> = (0..w * h).map(|i| if i % w < w / 2 { 1 } else { 2 }).collect();
    let map = LabelRaster::new(w, h, labels, gt)?;
    write_class_map(&map, &schema, &dir.join("classmap"))?;
    assert_eq!(read_label_raster(&dir.join("classmap.hdr"))?, map);
    println!("wrote {}", dir.display());
    Ok(())
}
