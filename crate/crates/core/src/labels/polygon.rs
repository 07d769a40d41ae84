//! Labeled polygons and their conversion to per-pixel class ids.
//!
//! Membership uses the even-odd crossing rule over all rings with a
//! half-open edge convention: an edge from `a` to `b` is crossed by the
//! `+x` ray from `(px, py)` when exactly one endpoint lies strictly above
//! `py` and the crossing abscissa is strictly greater than `px`. For an
//! axis-aligned box `[x0, x1] x [y0, y1]` this makes the member set
//! `[x0, x1) x [y0, y1)`: the minimum edges are inside, the maximum edges
//! outside. Adjacent polygons sharing an edge therefore never both claim a
//! point on it. Pixels are tested at their centers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{GeoTransform, LabelRaster};

pub type Point = [f64; 2];

/// An expert-labeled area in raster world coordinates. Rings are implicitly
/// closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPolygon {
    pub class_id: u8,
    pub class_name: String,
    exterior: Vec<Point>,
    holes: Vec<Vec<Point>>,
}

fn normalize_ring(mut ring: Vec<Point>, what: &str) -> Result<Vec<Point>> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{what} has non-finite coordinates")));
    }
    let mut distinct: Vec<Point> = Vec::with_capacity(3);
    for p in &ring {
        if !distinct.contains(p) {
            distinct.push(*p);
            if distinct.len() >= 3 {
                return Ok(ring);
            }
        }
    }
    Err(Error::Validation(format!(
        "{what} needs at least 3 distinct vertices"
    )))
}

impl LabeledPolygon {
    pub fn new(class_id: u8, class_name: impl Into<String>, exterior: Vec<Point>) -> Result<Self> {
        Self::with_holes(class_id, class_name, exterior, Vec::new())
    }

    pub fn with_holes(
        class_id: u8,
        class_name: impl Into<String>,
        exterior: Vec<Point>,
        holes: Vec<Vec<Point>>,
    ) -> Result<Self> {
        if class_id == 0 {
            return Err(Error::Validation("polygon class_id must be nonzero".into()));
        }
        let exterior = normalize_ring(exterior, "exterior ring")?;
        let holes = holes
            .into_iter()
            .map(|h| normalize_ring(h, "interior ring"))
            .collect::<Result<_>>()?;
        Ok(LabeledPolygon {
            class_id,
            class_name: class_name.into(),
            exterior,
            holes,
        })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`, counterclockwise.
    pub fn rect(class_id: u8, class_name: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(class_id, class_name, vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn exterior(&self) -> &[Point] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.holes
    }

    fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.rings().flat_map(|r| {
            (0..r.len()).map(move |i| (r[i], r[(i + 1) % r.len()]))
        })
    }

    /// `(min_y, max_y)` over all rings.
    fn y_range(&self) -> (f64, f64) {
        self.rings()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])))
    }
}

/// Abscissa where the edge `a -> b` crosses the horizontal line `y`, under
/// the half-open rule. Shared by the point test and the scanline fill so
/// both agree bit-for-bit.
#[inline]
fn crossing_x(a: Point, b: Point, y: f64) -> Option<f64> {
    if (a[1] > y) != (b[1] > y) {
        Some(a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]))
    } else {
        None
    }
}

/// Even-odd membership of `pt`; points inside holes are outside.
pub fn point_in_polygon(pt: Point, poly: &LabeledPolygon) -> bool {
    let mut inside = false;
    for (a, b) in poly.edges() {
        if let Some(x) = crossing_x(a, b, pt[1]) {
            if pt[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Outcome of rasterizing a polygon list.
#[derive(Debug, Clone)]
pub struct Rasterization {
    pub labels: LabelRaster,
    /// Per pixel, `1 + index` of the polygon that labeled it, or 0.
    pub owners: Vec<u32>,
    /// Pixels claimed by more than one polygon.
    pub overlapping_pixels: usize,
}

/// Labels each pixel with the class of the polygon containing its center.
/// Later polygons overwrite earlier ones.
pub fn rasterize_polygons(
    polys: &[LabeledPolygon],
    width: usize,
    height: usize,
    geotransform: GeoTransform,
) -> Result<LabelRaster> {
    Ok(rasterize_with_owners(polys, width, height, geotransform)?.labels)
}

pub fn rasterize_with_owners(
    polys: &[LabeledPolygon],
    width: usize,
    height: usize,
    geotransform: GeoTransform,
) -> Result<Rasterization> {
    geotransform.validate()?;
    let mut labels = LabelRaster::zeros(width, height, geotransform);
    let mut owners = vec![0u32; width * height];
    let mut overlapping = 0usize;
    let mut shared = vec![false; width * height];
    let mut xs: Vec<f64> = Vec::new();
    let centers_x: Vec<f64> = (0..width).map(|c| geotransform.pixel_center(c, 0).0).collect();

    for (pi, poly) in polys.iter().enumerate() {
        let (ymin, ymax) = poly.y_range();
        for row in 0..height {
            let cy = geotransform.pixel_center(0, row).1;
            if cy < ymin || cy > ymax {
                continue;
            }
            xs.clear();
            xs.extend(poly.edges().filter_map(|(a, b)| crossing_x(a, b, cy)));
            if xs.is_empty() {
                continue;
            }
            xs.sort_by(f64::total_cmp);
            // inside iff the number of crossings strictly right of cx is odd
            let mut at_or_left = 0usize;
            for (col, &cx) in centers_x.iter().enumerate() {
                while at_or_left < xs.len() && xs[at_or_left] <= cx {
                    at_or_left += 1;
                }
                if at_or_left == xs.len() {
                    break;
                }
                if (xs.len() - at_or_left) % 2 == 1 {
                    let idx = row * width + col;
                    if owners[idx] != 0 && !shared[idx] {
                        shared[idx] = true;
                        overlapping += 1;
                    }
                    owners[idx] = pi as u32 + 1;
                    labels.labels_mut()[idx] = poly.class_id;
                }
            }
        }
    }
    if overlapping > 0 {
        log::warn!("{overlapping} pixel(s) covered by overlapping polygons; later polygons win");
    }
    Ok(Rasterization {
        labels,
        owners,
        overlapping_pixels: overlapping,
    })
}
