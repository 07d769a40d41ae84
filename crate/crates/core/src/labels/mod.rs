//! Expert-labeled polygons: rasterization, pixel sampling, band statistics,
//! train/test splitting and standardization.

mod geojson;
mod polygon;
mod sampling;

pub use geojson::{parse_polygons, polygons_to_geojson, read_polygons, write_polygons};
pub use polygon::{
    point_in_polygon, rasterize_polygons, rasterize_with_owners, LabeledPolygon, Point, Rasterization,
};
pub use sampling::{
    apply_scaler, class_band_stats, fit_scaler, sample_pixels, sample_pixels_with_owners, split_polygon_indices,
    split_polygons, ClassBandStats, ClassStats, Provenance, SampleSet, Scaler,
};
