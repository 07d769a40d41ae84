//! Training pixel draws, per-class band descriptors, polygon-level
//! train/test splits and feature standardization.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::polygon::LabeledPolygon;
use crate::error::{Error, Result};
use crate::raster::{write_csv, ClassSchema, LabelRaster, RasterStack};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    /// Index of the polygon the pixel was rasterized from, when known.
    pub polygon: Option<usize>,
    pub x: usize,
    pub y: usize,
}

/// `n x d` feature rows (row-major) with class labels and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    features: Vec<f32>,
    labels: Vec<u8>,
    feature_names: Vec<String>,
    provenance: Vec<Provenance>,
}

impl SampleSet {
    pub fn new(
        features: Vec<f32>,
        labels: Vec<u8>,
        feature_names: Vec<String>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let d = feature_names.len();
        let n = labels.len();
        if d == 0 {
            return Err(Error::Validation("sample set needs at least one feature".into()));
        }
        if features.len() != n * d || provenance.len() != n {
            return Err(Error::Validation(format!(
                "sample set sizes disagree: {} features, {n} labels, {} provenance rows, d = {d}",
                features.len(),
                provenance.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("sample features must be finite".into()));
        }
        if labels.contains(&0) {
            return Err(Error::Validation("sample labels must be nonzero".into()));
        }
        Ok(SampleSet {
            features,
            labels,
            feature_names,
            provenance,
        })
    }

    /// Builds a set from plain rows, with synthetic provenance.
    pub fn from_rows(rows: &[Vec<f32>], labels: &[u8]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Validation("ragged feature rows".into()));
        }
        let names = (0..d).map(|i| format!("b{}", i + 1)).collect();
        let prov = (0..rows.len())
            .map(|i| Provenance { polygon: None, x: i, y: 0 })
            .collect();
        SampleSet::new(rows.concat(), labels.to_vec(), names, prov)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }
    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }
    pub fn features(&self) -> &[f32] {
        &self.features
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<u8> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Writes `label,polygon,x,y,<feature names...>` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, |w| {
            let mut header = vec!["label".to_string(), "polygon".into(), "x".into(), "y".into()];
            header.extend(self.feature_names.iter().cloned());
            w.write_record(&header)?;
            for i in 0..self.len() {
                let p = self.provenance[i];
                let mut rec = vec![
                    self.labels[i].to_string(),
                    p.polygon.map_or(String::new(), |v| v.to_string()),
                    p.x.to_string(),
                    p.y.to_string(),
                ];
                rec.extend(self.row(i).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
            Ok(())
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bad = |m: String| Error::Validation(format!("{}: {m}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.len() < 5 || &header[0] != "label" {
            return Err(bad("expected label,polygon,x,y,<features...> header".into()));
        }
        let names: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
        let (mut feats, mut labels, mut prov) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num = |i: usize| rec.get(i).unwrap_or("").to_string();
            labels.push(num(0).parse::<u8>().map_err(|e| bad(e.to_string()))?);
            let polygon = match num(1).as_str() {
                "" => None,
                s => Some(s.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            };
            prov.push(Provenance {
                polygon,
                x: num(2).parse().map_err(|_| bad("bad x".into()))?,
                y: num(3).parse().map_err(|_| bad("bad y".into()))?,
            });
            for i in 4..header.len() {
                feats.push(num(i).parse::<f32>().map_err(|e| bad(e.to_string()))?);
            }
        }
        SampleSet::new(feats, labels, names, prov)
    }
}

fn band_names(raster: &RasterStack) -> Vec<String> {
    match raster.band_names() {
        Some(n) => n.to_vec(),
        None => (0..raster.n_bands()).map(|i| format!("b{}", i + 1)).collect(),
    }
}

/// Draws up to `n_per_class` distinct labeled pixels per class.
pub fn sample_pixels(raster: &RasterStack, labels: &LabelRaster, n_per_class: usize, seed: u64) -> Result<SampleSet> {
    sample_pixels_with_owners(raster, labels, None, n_per_class, seed)
}

/// As [`sample_pixels`], recording the owning polygon of each draw when an
/// owner map (from [`super::rasterize_with_owners`]) is supplied.
///
/// Each class draws from its own seeded stream, uniformly without
/// replacement, skipping pixels that carry nodata in any band.
pub fn sample_pixels_with_owners(
    raster: &RasterStack,
    labels: &LabelRaster,
    owners: Option<&[u32]>,
    n_per_class: usize,
    seed: u64,
) -> Result<SampleSet> {
    if !labels.matches_dims(raster) {
        return Err(Error::Dimension(format!(
            "labels {}x{} vs raster {}x{}",
            labels.width(),
            labels.height(),
            raster.width(),
            raster.height()
        )));
    }
    if let Some(o) = owners {
        if o.len() != labels.labels().len() {
            return Err(Error::Dimension("owner map size differs from labels".into()));
        }
    }
    let d = raster.n_bands();
    let mut positions: Vec<Vec<usize>> = vec![Vec::new(); 256];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l != 0 {
            positions[l as usize].push(i);
        }
    }
    let (mut feats, mut out_labels, mut prov) = (Vec::new(), Vec::new(), Vec::new());
    let mut px = vec![0f32; d];
    for class in labels.class_ids() {
        let pool = &mut positions[class as usize];
        let mut rng = rng::stream(seed, class as u64);
        let mut taken = 0;
        let mut i = 0;
        while taken < n_per_class && i < pool.len() {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
            let idx = pool[i];
            i += 1;
            if raster.pixel_is_nodata(idx) {
                continue;
            }
            raster.pixel_into(idx, &mut px);
            feats.extend_from_slice(&px);
            out_labels.push(class);
            prov.push(Provenance {
                polygon: owners.and_then(|o| o[idx].checked_sub(1).map(|v| v as usize)),
                x: idx % raster.width(),
                y: idx / raster.width(),
            });
            taken += 1;
        }
        if taken == 0 {
            return Err(Error::EmptyClass(class));
        }
    }
    SampleSet::new(feats, out_labels, band_names(raster), prov)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: u8,
    pub count: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBandStats {
    pub feature_names: Vec<String>,
    pub classes: Vec<ClassStats>,
}

/// Sums in ascending value order so the result depends only on the multiset.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Per-class, per-band mean and population standard deviation.
pub fn class_band_stats(samples: &SampleSet) -> Result<ClassBandStats> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples".into()));
    }
    let d = samples.n_features();
    let mut classes = Vec::new();
    for class in samples.classes() {
        let rows: Vec<usize> = (0..samples.len()).filter(|&i| samples.labels[i] == class).collect();
        let n = rows.len() as f64;
        let mut mean = Vec::with_capacity(d);
        let mut std = Vec::with_capacity(d);
        for b in 0..d {
            let mut vals: Vec<f64> = rows.iter().map(|&i| samples.row(i)[b] as f64).collect();
            let m = ordered_sum(&mut vals) / n;
            let mut sq: Vec<f64> = vals.iter().map(|v| (v - m) * (v - m)).collect();
            mean.push(m);
            std.push((ordered_sum(&mut sq) / n).sqrt());
        }
        classes.push(ClassStats {
            class_id: class,
            count: rows.len(),
            mean,
            std,
        });
    }
    Ok(ClassBandStats {
        feature_names: samples.feature_names.clone(),
        classes,
    })
}

impl ClassBandStats {
    /// Writes `class_id,class_name,band,mean,std,count` rows.
    pub fn write_csv(&self, schema: &ClassSchema, path: &Path) -> Result<()> {
        write_csv(path, |w| {
            w.write_record(["class_id", "class_name", "band", "mean", "std", "count"])?;
            for c in &self.classes {
                let name = schema.name(c.class_id).unwrap_or("");
                for (b, band) in self.feature_names.iter().enumerate() {
                    w.serialize((c.class_id, name, band, c.mean[b], c.std[b], c.count))?;
                }
            }
            Ok(())
        })
    }
}

fn test_count(fraction: f64, n: usize) -> usize {
    // absorb representation error such as 0.3 * 10 = 3.0000000000000004
    let raw = fraction * n as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Stratified polygon split: per class, `ceil(test_fraction * count)`
/// randomly chosen polygons go to the test side. Returns sorted index lists
/// `(train, test)` into `polys`.
pub fn split_polygon_indices(polys: &[LabeledPolygon], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Validation(format!(
            "test_fraction {test_fraction} outside [0, 1]"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 256];
    for (i, p) in polys.iter().enumerate() {
        by_class[p.class_id as usize].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::UnsplittableClass(class as u8));
        }
        let k = test_count(test_fraction, members.len());
        let mut rng = rng::stream(seed, class as u64);
        for i in 0..k {
            let j = rng.random_range(i..members.len());
            members.swap(i, j);
        }
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_polygons(
    polys: &[LabeledPolygon],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledPolygon>, Vec<LabeledPolygon>)> {
    let (tr, te) = split_polygon_indices(polys, test_fraction, seed)?;
    Ok((
        tr.into_iter().map(|i| polys[i].clone()).collect(),
        te.into_iter().map(|i| polys[i].clone()).collect(),
    ))
}

/// Per-band standardization. Bands with zero variance pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(samples: &SampleSet) -> Result<Scaler> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("cannot fit a scaler on zero samples".into()));
        }
        let d = samples.n_features();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for i in 0..samples.len() {
            for (m, &v) in mean.iter_mut().zip(samples.row(i)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..samples.len() {
            for ((s, &v), m) in var.iter_mut().zip(samples.row(i)).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Scaler { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes one feature vector into `out`.
    pub fn transform_into(&self, x: &[f32], out: &mut [f64]) {
        for (b, (o, &v)) in out.iter_mut().zip(x).enumerate() {
            let s = self.std[b];
            *o = if s > 0.0 { (v as f64 - self.mean[b]) / s } else { v as f64 };
        }
    }

    /// Standardizes a row-major feature block.
    pub fn apply(&self, features: &[f32]) -> Vec<f32> {
        let d = self.dim();
        let mut out = vec![0f64; d];
        let mut res = Vec::with_capacity(features.len());
        for row in features.chunks_exact(d) {
            self.transform_into(row, &mut out);
            res.extend(out.iter().map(|&v| v as f32));
        }
        res
    }
}

pub fn fit_scaler(samples: &SampleSet) -> Result<Scaler> {
    Scaler::fit(samples)
}

pub fn apply_scaler(scaler: &Scaler, features: &[f32]) -> Vec<f32> {
    scaler.apply(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn scene(w: usize, h: usize, label: impl Fn(usize) -> u8) -> (RasterStack, LabelRaster) {
        let n = w * h;
        let values = (0..2 * n).map(|i| (i % 97) as f32).collect();
        let r = RasterStack::new(w, h, 2, values, GeoTransform::unit(), Some(-1.0)).unwrap();
        let l = LabelRaster::new(w, h, (0..n).map(label).collect(), GeoTransform::unit()).unwrap();
        (r, l)
    }

    #[test]
    fn cardinality_and_cap() {
        let (r, l) = scene(20, 10, |i| if i < 100 { 1 } else { 0 });
        let s = sample_pixels(&r, &l, 50, 3).unwrap();
        assert_eq!(s.len(), 50);
        let mut pos: Vec<_> = s.provenance().iter().map(|p| (p.x, p.y)).collect();
        pos.sort_unstable();
        pos.dedup();
        assert_eq!(pos.len(), 50);
        assert!(s.labels().iter().all(|&c| c == 1));

        let s = sample_pixels(&r, &l, 200, 3).unwrap();
        assert_eq!(s.len(), 100);
    }

    #[test]
    fn deterministic_per_seed() {
        let (r, l) = scene(16, 16, |i| (i % 3) as u8);
        assert_eq!(sample_pixels(&r, &l, 20, 9).unwrap(), sample_pixels(&r, &l, 20, 9).unwrap());
        assert_ne!(sample_pixels(&r, &l, 20, 9).unwrap(), sample_pixels(&r, &l, 20, 10).unwrap());
    }

    #[test]
    fn nodata_skipped_and_empty_class_reported() {
        let n = 4;
        let values = vec![-1.0, 5.0, -1.0, 7.0, 1.0, 1.0, 1.0, 1.0];
        let r = RasterStack::new(4, 1, 2, values, GeoTransform::unit(), Some(-1.0)).unwrap();
        let l = LabelRaster::new(4, 1, vec![1, 1, 2, 2], GeoTransform::unit()).unwrap();
        let s = sample_pixels(&r, &l, n, 0).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.features().iter().all(|&v| v != -1.0));

        let l = LabelRaster::new(4, 1, vec![3, 1, 3, 2], GeoTransform::unit()).unwrap();
        assert!(matches!(sample_pixels(&r, &l, n, 0), Err(Error::EmptyClass(3))));
    }

    #[test]
    fn stats_small_cases() {
        let s = SampleSet::from_rows(&[vec![1.0, 4.0], vec![3.0, 4.0], vec![9.0, 2.0]], &[1, 1, 2]).unwrap();
        let st = class_band_stats(&s).unwrap();
        assert_eq!(st.classes[0].mean, vec![2.0, 4.0]);
        assert_eq!(st.classes[0].std, vec![1.0, 0.0]);
        assert_eq!(st.classes[0].count, 2);
        assert_eq!(st.classes[1].mean, vec![9.0, 2.0]);
        assert_eq!(st.classes[1].std, vec![0.0, 0.0]);
    }

    #[test]
    fn stats_permutation_invariant() {
        let rows: Vec<Vec<f32>> = (0..40).map(|i| vec![(i as f32 * 0.37).sin(), (i * i) as f32 * 1e-3]).collect();
        let labels: Vec<u8> = (0..40).map(|i| 1 + (i % 3) as u8).collect();
        let a = class_band_stats(&SampleSet::from_rows(&rows, &labels).unwrap()).unwrap();
        let mut idx: Vec<usize> = (0..40).rev().collect();
        idx.rotate_left(7);
        let rows2: Vec<_> = idx.iter().map(|&i| rows[i].clone()).collect();
        let labels2: Vec<_> = idx.iter().map(|&i| labels[i]).collect();
        let b = class_band_stats(&SampleSet::from_rows(&rows2, &labels2).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    fn polys(counts: &[(u8, usize)]) -> Vec<LabeledPolygon> {
        let mut v = Vec::new();
        for &(c, n) in counts {
            for i in 0..n {
                let x = v.len() as f64 * 2.0 + i as f64 * 0.0;
                v.push(LabeledPolygon::rect(c, format!("c{c}"), x, 0.0, x + 1.0, 1.0).unwrap());
            }
        }
        v
    }

    #[test]
    fn split_arithmetic_and_partition() {
        let p = polys(&[(1, 4)]);
        let (tr, te) = split_polygons(&p, 0.25, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (3, 1));

        let p = polys(&[(1, 3), (2, 10)]);
        let (tr, te) = split_polygon_indices(&p, 0.3, 5).unwrap();
        assert_eq!(te.len(), 1 + 3);
        let mut all: Vec<_> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..13).collect::<Vec<_>>());
        assert_eq!(split_polygon_indices(&p, 0.3, 5).unwrap(), (tr, te));
    }

    #[test]
    fn split_zero_fraction_and_singletons() {
        let p = polys(&[(1, 2), (2, 3)]);
        let (tr, te) = split_polygons(&p, 0.0, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 0));
        let p = polys(&[(1, 2), (4, 1)]);
        assert!(matches!(split_polygons(&p, 0.5, 1), Err(Error::UnsplittableClass(4))));
    }

    #[test]
    fn scaler_standardizes() {
        let rows: Vec<Vec<f32>> = (0..50).map(|i| vec![i as f32 * 0.1 + 3.0, 2.5, (i % 7) as f32]).collect();
        let s = SampleSet::from_rows(&rows, &vec![1; 50]).unwrap();
        let sc = fit_scaler(&s).unwrap();
        let z = apply_scaler(&sc, s.features());
        for b in [0usize, 2] {
            let col: Vec<f64> = z.chunks(3).map(|r| r[b] as f64).collect();
            let m = col.iter().sum::<f64>() / 50.0;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-5, "mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
        assert!(z.chunks(3).all(|r| r[1] == 2.5));
    }

    #[test]
    fn samples_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (r, l) = scene(8, 8, |i| 1 + (i % 2) as u8);
        let s = sample_pixels(&r, &l, 5, 2).unwrap();
        let p = dir.path().join("s.csv");
        s.write_csv(&p).unwrap();
        assert_eq!(SampleSet::read_csv(&p).unwrap(), s);
    }
}
