#![allow(dead_code)]

use rand::Rng;
use smallgeo::labels::{LabeledPolygon, Point};
use smallgeo::raster::{GeoTransform, LabelRaster, RasterStack};
use smallgeo::rng;

/// Star-shaped 12-gon around `(cx, cy)` with alternating outer and inner
/// radii, so every other vertex is reflex.
pub fn concave_polygon(r: &mut impl Rng, class_id: u8, cx: f64, cy: f64, radius: f64) -> LabeledPolygon {
    let phase = r.random::<f64>() * std::f64::consts::TAU;
    let ring: Vec<Point> = (0..12)
        .map(|i| {
            let t = phase + i as f64 * std::f64::consts::TAU / 12.0 + r.random_range(-0.1..0.1);
            let rad = if i % 2 == 0 {
                radius * r.random_range(0.75..1.0)
            } else {
                radius * r.random_range(0.2..0.5)
            };
            [cx + rad * t.cos(), cy + rad * t.sin()]
        })
        .collect();
    assert!(is_concave(&ring));
    LabeledPolygon::new(class_id, format!("class {class_id}"), ring).unwrap()
}

pub fn is_concave(ring: &[Point]) -> bool {
    let n = ring.len();
    let signs: Vec<bool> = (0..n)
        .map(|i| {
            let (a, b, c) = (ring[i], ring[(i + 1) % n], ring[(i + 2) % n]);
            (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) > 0.0
        })
        .collect();
    signs.iter().any(|&s| s) && signs.iter().any(|&s| !s)
}

/// Winding number of `ring` around `p`.
pub fn winding_number(p: Point, ring: &[Point]) -> i32 {
    let is_left = |a: Point, b: Point| (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
    let mut wn = 0;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        if a[1] <= p[1] {
            if b[1] > p[1] && is_left(a, b) > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && is_left(a, b) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Per-pixel oracle: test every pixel center against every polygon, last
/// containing polygon wins.
pub fn brute_force_labels(polys: &[LabeledPolygon], w: usize, h: usize, gt: GeoTransform) -> Vec<u8> {
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = gt.pixel_center(x, y);
            for p in polys {
                if winding_number([cx, cy], p.exterior()) != 0 {
                    out[y * w + x] = p.class_id;
                }
            }
        }
    }
    out
}

pub fn random_raster(w: usize, h: usize, bands: usize, seed: u64) -> RasterStack {
    let mut r = rng::seeded(seed);
    let values: Vec<f32> = (0..w * h * bands).map(|_| r.random_range(-1.0..1.0)).collect();
    RasterStack::new(w, h, bands, values, GeoTransform::unit(), None).unwrap()
}

pub fn random_labels(w: usize, h: usize, k: u8, seed: u64) -> LabelRaster {
    let mut r = rng::seeded(seed);
    let labels: Vec<u8> = (0..w * h).map(|_| r.random_range(0..=k)).collect();
    LabelRaster::new(w, h, labels, GeoTransform::unit()).unwrap()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

pub fn uniform(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Largest relative error between `analytic` and the central difference of
/// `f` around `x`.
pub fn check(x: &[f64], analytic: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut xp = x.to_vec();
    let mut worst = 0f64;
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let down = f(&xp);
        xp[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
