//! Seeded synthetic scenes with known truth.
//!
//! The scene is cut into a grid of rectangular regions, each assigned to
//! one class by a seeded shuffle. Spectral regions draw every pixel from
//! their class's per-band Gaussian. Texture regions form a checkerboard
//! whose cells alternate between two parent classes, so single pixels look
//! like a 50/50 mixture of the parents and only the spatial pattern gives
//! the class away. Each region gets one centered rectangular training
//! polygon covering roughly `label_fraction` of its area.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabeledPolygon;
use crate::raster::{ClassEntry, ClassSchema, GeoTransform, LabelRaster, RasterStack};
use crate::rng;

const LAYOUT_STREAM: u64 = 0x4c41_594f;
const PIXEL_SIZE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralClass {
    pub class_id: u8,
    pub name: String,
    pub color: [u8; 3],
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    /// Checked to sit at least four combined standard deviations away from
    /// every other separable class in some band.
    #[serde(default = "yes")]
    pub separable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureClass {
    pub class_id: u8,
    pub name: String,
    pub color: [u8; 3],
    pub parent_a: u8,
    pub parent_b: u8,
    pub checker_period: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub n_bands: usize,
    pub classes: Vec<SpectralClass>,
    #[serde(default)]
    pub texture_classes: Vec<TextureClass>,
    pub regions_per_class: usize,
    pub label_fraction: f64,
}

const NAMES: [(&str, [u8; 3]); 6] = [
    ("water", [30, 90, 200]),
    ("mixed forest", [20, 110, 40]),
    ("rice field", [170, 220, 90]),
    ("settlement", [200, 60, 50]),
    ("grassland", [230, 200, 110]),
    ("bare soil", [140, 100, 70]),
];

impl SceneSpec {
    /// 256x256x8 with `n` well separated spectral classes, 4 regions each.
    pub fn separable_classes(n: usize) -> SceneSpec {
        let n_bands = 8;
        let classes = (0..n)
            .map(|i| {
                let (name, color) = NAMES
                    .get(i)
                    .map(|&(s, c)| (s.to_string(), c))
                    .unwrap_or_else(|| (format!("class {}", i + 1), [(40 * i) as u8, 128, 255 - (30 * i) as u8]));
                SpectralClass {
                    class_id: i as u8 + 1,
                    name,
                    color,
                    mean: (0..n_bands)
                        .map(|b| 0.08 + 0.14 * ((i + 2 * b) % n.max(1)) as f32)
                        .collect(),
                    std: vec![0.015; n_bands],
                    separable: true,
                }
            })
            .collect();
        SceneSpec {
            width: 256,
            height: 256,
            n_bands,
            classes,
            texture_classes: Vec::new(),
            regions_per_class: 4,
            label_fraction: 0.3,
        }
    }

    /// Six separable classes only.
    pub fn separable() -> SceneSpec {
        Self::separable_classes(6)
    }

    /// Six separable classes plus one period-2 checkerboard of classes 1
    /// and 2.
    pub fn with_texture() -> SceneSpec {
        let mut s = Self::separable();
        s.texture_classes.push(TextureClass {
            class_id: 7,
            name: "agroforestry".into(),
            color: [255, 0, 255],
            parent_a: 1,
            parent_b: 2,
            checker_period: 2,
        });
        s
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len() + self.texture_classes.len()
    }

    pub fn schema(&self) -> Result<ClassSchema> {
        ClassSchema::new(
            self.classes
                .iter()
                .map(|c| ClassEntry {
                    id: c.class_id,
                    name: c.name.clone(),
                    color: c.color,
                })
                .chain(self.texture_classes.iter().map(|t| ClassEntry {
                    id: t.class_id,
                    name: t.name.clone(),
                    color: t.color,
                }))
                .collect(),
        )
    }

    fn spectral(&self, id: u8) -> Option<&SpectralClass> {
        self.classes.iter().find(|c| c.class_id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.width == 0 || self.height == 0 || self.n_bands == 0 {
            return bad("scene dimensions must be positive".into());
        }
        if self.classes.is_empty() && self.texture_classes.is_empty() {
            return bad("scene needs at least one class".into());
        }
        if self.regions_per_class == 0 {
            return bad("regions_per_class must be positive".into());
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label_fraction {} outside (0, 1]", self.label_fraction));
        }
        self.schema()?;
        for c in &self.classes {
            if c.mean.len() != self.n_bands || c.std.len() != self.n_bands {
                return bad(format!("class {} needs {} means and stds", c.class_id, self.n_bands));
            }
            if c.mean.iter().chain(&c.std).any(|v| !v.is_finite()) || c.std.iter().any(|&s| s < 0.0) {
                return bad(format!("class {} has non-finite mean or negative std", c.class_id));
            }
        }
        for t in &self.texture_classes {
            if self.spectral(t.parent_a).is_none() || self.spectral(t.parent_b).is_none() {
                return bad(format!("texture class {} references an undefined parent", t.class_id));
            }
            if t.checker_period == 0 {
                return bad(format!("texture class {} has checker_period 0", t.class_id));
            }
        }
        let sep: Vec<&SpectralClass> = self.classes.iter().filter(|c| c.separable).collect();
        for (i, a) in sep.iter().enumerate() {
            for b in &sep[i + 1..] {
                let apart = (0..self.n_bands)
                    .any(|k| (a.mean[k] - b.mean[k]).abs() >= 4.0 * (a.std[k] + b.std[k]));
                if !apart {
                    return bad(format!(
                        "classes {} and {} are not 4 std apart in any band",
                        a.class_id, b.class_id
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Grid of `rows x cols` cells with `cols` the smallest divisor of `n`
/// that is at least `sqrt(n)`.
fn grid(n: usize) -> (usize, usize) {
    let cols = (1..=n).find(|&c| n % c == 0 && c * c >= n).unwrap_or(n);
    (n / cols, cols)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub raster: RasterStack,
    pub truth: LabelRaster,
    pub polygons: Vec<LabeledPolygon>,
    pub schema: ClassSchema,
}

/// One region's pixel rectangle `[x0, x1) x [y0, y1)` and class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub class_id: u8,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Region rectangles in grid order, with classes assigned by `seed`.
pub fn layout(spec: &SceneSpec, seed: u64) -> Result<Vec<Region>> {
    let ids: Vec<u8> = spec
        .classes
        .iter()
        .map(|c| c.class_id)
        .chain(spec.texture_classes.iter().map(|t| t.class_id))
        .collect();
    let n = ids.len() * spec.regions_per_class;
    let (rows, cols) = grid(n);
    if cols > spec.width || rows > spec.height {
        return Err(Error::Layout(format!(
            "{rows}x{cols} region grid does not fit a {}x{} scene",
            spec.width, spec.height
        )));
    }
    let mut assign: Vec<u8> = ids.iter().flat_map(|&id| std::iter::repeat_n(id, spec.regions_per_class)).collect();
    assign.shuffle(&mut rng::stream(seed, LAYOUT_STREAM));
    let mut out = Vec::with_capacity(n);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Region {
                class_id: assign[r * cols + c],
                x0: c * spec.width / cols,
                x1: (c + 1) * spec.width / cols,
                y0: r * spec.height / rows,
                y1: (r + 1) * spec.height / rows,
            });
        }
    }
    Ok(out)
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let schema = spec.schema()?;
    let regions = layout(spec, seed)?;
    let (w, h, nb) = (spec.width, spec.height, spec.n_bands);
    let gt = GeoTransform::new(0.0, PIXEL_SIZE, h as f64 * PIXEL_SIZE, PIXEL_SIZE);
    let mut values = vec![0f32; w * h * nb];
    let mut truth = vec![0u8; w * h];
    let mut polygons = Vec::with_capacity(regions.len());
    let dists = |c: &SpectralClass| -> Vec<Normal<f32>> {
        c.mean
            .iter()
            .zip(&c.std)
            .map(|(&m, &s)| Normal::new(m, s).expect("validated std"))
            .collect()
    };
    let scale = spec.label_fraction.sqrt();
    for (ri, reg) in regions.iter().enumerate() {
        let mut r = rng::stream(seed, ri as u64);
        // per-pixel distribution chooser for this region
        let (a, b, period) = match spec.spectral(reg.class_id) {
            Some(c) => (dists(c), None, 1),
            None => {
                let t = spec
                    .texture_classes
                    .iter()
                    .find(|t| t.class_id == reg.class_id)
                    .expect("layout ids come from the spec");
                (
                    dists(spec.spectral(t.parent_a).expect("validated")),
                    Some(dists(spec.spectral(t.parent_b).expect("validated"))),
                    t.checker_period,
                )
            }
        };
        for y in reg.y0..reg.y1 {
            for x in reg.x0..reg.x1 {
                let cell = ((x - reg.x0) / period + (y - reg.y0) / period) % 2;
                let d = match (&b, cell) {
                    (Some(b), 1) => b,
                    _ => &a,
                };
                for (band, dist) in d.iter().enumerate() {
                    values[band * w * h + y * w + x] = dist.sample(&mut r);
                }
                truth[y * w + x] = reg.class_id;
            }
        }
        let (rw, rh) = (reg.x1 - reg.x0, reg.y1 - reg.y0);
        let pw = ((rw as f64 * scale).round() as usize).clamp(1, rw);
        let ph = ((rh as f64 * scale).round() as usize).clamp(1, rh);
        let px0 = reg.x0 + (rw - pw) / 2;
        let py0 = reg.y0 + (rh - ph) / 2;
        let (wx0, wy0) = gt.pixel_to_world(px0 as f64, (py0 + ph) as f64);
        let (wx1, wy1) = gt.pixel_to_world((px0 + pw) as f64, py0 as f64);
        let name = schema.name(reg.class_id).unwrap_or_default().to_string();
        polygons.push(LabeledPolygon::rect(reg.class_id, name, wx0, wy0, wx1, wy1)?);
    }
    let band_names = (1..=nb).map(|b| format!("b{b}")).collect();
    Ok(Scene {
        raster: RasterStack::new(w, h, nb, values, gt, None)?.with_band_names(band_names)?,
        truth: LabelRaster::new(w, h, truth, gt)?,
        polygons,
        schema,
    })
}
