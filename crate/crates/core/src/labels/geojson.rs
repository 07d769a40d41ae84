//! The canonical polygon exchange format: a GeoJSON `FeatureCollection` of
//! `Polygon` features, each with integer `class_id` and text `class_name`
//! properties, coordinates already in raster CRS.

use std::path::Path;

use serde_json::{json, Value};

use super::polygon::{LabeledPolygon, Point};
use crate::error::{Error, Result};

fn ring(v: &Value, what: &str) -> Result<Vec<Point>> {
    v.as_array()
        .ok_or_else(|| Error::GeoJson(format!("{what} is not an array")))?
        .iter()
        .map(|p| {
            let xy = p.as_array().filter(|a| a.len() >= 2);
            match xy.map(|a| (a[0].as_f64(), a[1].as_f64())) {
                Some((Some(x), Some(y))) => Ok([x, y]),
                _ => Err(Error::GeoJson(format!("bad position in {what}: {p}"))),
            }
        })
        .collect()
}

pub fn parse_polygons(text: &str) -> Result<Vec<LabeledPolygon>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::GeoJson(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::GeoJson("root must be a FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::GeoJson("missing features array".into()))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::GeoJson(format!("feature {i}: missing geometry")))?;
        let kind = geom.get("type").and_then(Value::as_str);
        if kind != Some("Polygon") {
            return Err(Error::GeoJson(format!(
                "feature {i}: geometry type {kind:?}, expected Polygon"
            )));
        }
        let props = f
            .get("properties")
            .ok_or_else(|| Error::GeoJson(format!("feature {i}: missing properties")))?;
        let class_id = props
            .get("class_id")
            .and_then(Value::as_u64)
            .filter(|&v| (1..=255).contains(&v))
            .ok_or_else(|| Error::GeoJson(format!("feature {i}: class_id must be an integer in 1..=255")))?;
        let class_name = props
            .get("class_name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::GeoJson(format!("feature {i}: missing class_name")))?;
        let rings = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::GeoJson(format!("feature {i}: empty coordinates")))?;
        let exterior = ring(&rings[0], "exterior ring")?;
        let holes = rings[1..]
            .iter()
            .map(|r| ring(r, "interior ring"))
            .collect::<Result<Vec<_>>>()?;
        out.push(
            LabeledPolygon::with_holes(class_id as u8, class_name, exterior, holes)
                .map_err(|e| Error::GeoJson(format!("feature {i}: {e}")))?,
        );
    }
    Ok(out)
}

pub fn read_polygons(path: &Path) -> Result<Vec<LabeledPolygon>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_polygons(&text)
}

fn closed(r: &[Point]) -> Value {
    let mut pts: Vec<Value> = r.iter().map(|p| json!([p[0], p[1]])).collect();
    if let Some(first) = r.first() {
        pts.push(json!([first[0], first[1]]));
    }
    Value::Array(pts)
}

pub fn polygons_to_geojson(polys: &[LabeledPolygon]) -> String {
    let features: Vec<Value> = polys
        .iter()
        .map(|p| {
            let mut rings = vec![closed(p.exterior())];
            rings.extend(p.holes().iter().map(|h| closed(h)));
            json!({
                "type": "Feature",
                "properties": { "class_id": p.class_id, "class_name": p.class_name },
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    let fc = json!({ "type": "FeatureCollection", "features": features });
    serde_json::to_string_pretty(&fc).expect("geojson values serialize")
}

pub fn write_polygons(polys: &[LabeledPolygon], path: &Path) -> Result<()> {
    crate::raster::write_bytes(path, polygons_to_geojson(polys).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_vertices() {
        let p = LabeledPolygon::with_holes(
            3,
            "agroforestry",
            vec![[0.1, 0.2], [10.000000000000002, 0.2], [5.5, 7.25]],
            vec![vec![[4.0, 1.0], [6.0, 1.0], [5.0, 2.0]]],
        )
        .unwrap();
        let back = parse_polygons(&polygons_to_geojson(&[p.clone()])).unwrap();
        assert_eq!(back, vec![p]);
    }

    #[test]
    fn rejects_missing_class_id() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature",
            "properties":{"class_name":"x"},
            "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[0,1],[0,0]]]}}]}"#;
        assert!(matches!(parse_polygons(text), Err(Error::GeoJson(_))));
    }

    #[test]
    fn rejects_non_polygon() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature",
            "properties":{"class_id":1,"class_name":"x"},
            "geometry":{"type":"Point","coordinates":[0,0]}}]}"#;
        assert!(parse_polygons(text).is_err());
    }
}
