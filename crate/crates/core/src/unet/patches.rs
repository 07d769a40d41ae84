//! Non-overlapping patch tiling and reassembly.
//!
//! The raster is tiled from the top-left corner in `patch x patch` blocks.
//! Right and bottom edges are padded to the next multiple of the patch size
//! by mirror reflection (edge pixel not repeated). Padded and nodata pixels
//! are marked invalid; nodata values are replaced by the band's mean over
//! valid pixels so the network sees finite inputs.

use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::raster::{GeoTransform, LabelRaster, RasterStack};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub inputs: Tensor4<f32>,
    /// Class ids per patch pixel, 0 = unlabeled.
    pub targets: Vec<u8>,
    pub valid_mask: Vec<bool>,
    /// Top-left pixel of each patch in the source raster.
    pub origins: Vec<(usize, usize)>,
    pub patch_size: usize,
    pub source_width: usize,
    pub source_height: usize,
    pub geotransform: GeoTransform,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.origins.len()
    }
    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
    pub fn pixels_per_patch(&self) -> usize {
        self.patch_size * self.patch_size
    }
    pub fn patch_targets(&self, i: usize) -> &[u8] {
        let p = self.pixels_per_patch();
        &self.targets[i * p..(i + 1) * p]
    }
    pub fn patch_valid(&self, i: usize) -> &[bool] {
        let p = self.pixels_per_patch();
        &self.valid_mask[i * p..(i + 1) * p]
    }
    /// Whether patch `i` has at least one valid labeled pixel.
    pub fn is_supervised(&self, i: usize) -> bool {
        self.patch_targets(i)
            .iter()
            .zip(self.patch_valid(i))
            .any(|(&t, &v)| v && t != 0)
    }

    /// Keeps the patches at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PatchSet {
        let p = self.pixels_per_patch();
        let c = self.inputs.c();
        let samples: Vec<Vec<f32>> = indices.iter().map(|&i| self.inputs.sample(i).to_vec()).collect();
        PatchSet {
            inputs: Tensor4::stack(&samples, self.patch_size, self.patch_size, c).expect("uniform patch shape"),
            targets: indices.iter().flat_map(|&i| self.targets[i * p..(i + 1) * p].iter().copied()).collect(),
            valid_mask: indices.iter().flat_map(|&i| self.valid_mask[i * p..(i + 1) * p].iter().copied()).collect(),
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> PatchSet {
        PatchSet {
            inputs: Tensor4::zeros([0, self.patch_size, self.patch_size, self.inputs.c()]),
            targets: Vec::new(),
            valid_mask: Vec::new(),
            origins: Vec::new(),
            patch_size: self.patch_size,
            source_width: self.source_width,
            source_height: self.source_height,
            geotransform: self.geotransform,
        }
    }
}

/// Mirror index into `0..n` for any non-negative coordinate.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

pub fn extract_patches(raster: &RasterStack, labels: Option<&LabelRaster>, patch: usize) -> Result<PatchSet> {
    let (w, h, b) = (raster.width(), raster.height(), raster.n_bands());
    if w == 0 || h == 0 {
        return Err(Error::EmptyInput("raster has no pixels".into()));
    }
    if patch == 0 {
        return Err(Error::Validation("patch size must be positive".into()));
    }
    if let Some(l) = labels {
        if !l.matches_dims(raster) {
            return Err(Error::Dimension(format!(
                "labels {}x{} vs raster {w}x{h}",
                l.width(),
                l.height()
            )));
        }
    }
    let n_pix = w * h;
    let nodata: Vec<bool> = (0..n_pix).map(|i| raster.pixel_is_nodata(i)).collect();
    let fill: Vec<f32> = (0..b)
        .map(|band| {
            let vals = raster.band(band);
            let (s, n) = vals
                .iter()
                .zip(&nodata)
                .filter(|(_, &nd)| !nd)
                .fold((0f64, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
            if n == 0 { 0.0 } else { (s / n as f64) as f32 }
        })
        .collect();

    let (px, py) = (w.div_ceil(patch), h.div_ceil(patch));
    let per = patch * patch;
    let mut data = Vec::with_capacity(px * py * per * b);
    let mut targets = Vec::with_capacity(px * py * per);
    let mut valid = Vec::with_capacity(px * py * per);
    let mut origins = Vec::with_capacity(px * py);
    for ty in 0..py {
        for tx in 0..px {
            let (x0, y0) = (tx * patch, ty * patch);
            origins.push((x0, y0));
            for yy in 0..patch {
                for xx in 0..patch {
                    let (gx, gy) = (x0 + xx, y0 + yy);
                    let inside = gx < w && gy < h;
                    let src = reflect(gy, h) * w + reflect(gx, w);
                    for band in 0..b {
                        data.push(if nodata[src] { fill[band] } else { raster.band(band)[src] });
                    }
                    let ok = inside && !nodata[src];
                    valid.push(ok);
                    targets.push(match labels {
                        Some(l) if inside => l.labels()[src],
                        _ => 0,
                    });
                }
            }
        }
    }
    Ok(PatchSet {
        inputs: Tensor4::from_vec([origins.len(), patch, patch, b], data)?,
        targets,
        valid_mask: valid,
        origins,
        patch_size: patch,
        source_width: w,
        source_height: h,
        geotransform: raster.geotransform(),
    })
}

/// Places per-patch label grids back at their origins, dropping padding.
pub fn stitch(
    origins: &[(usize, usize)],
    patch_labels: &[u8],
    patch: usize,
    width: usize,
    height: usize,
    geotransform: GeoTransform,
) -> Result<LabelRaster> {
    if patch_labels.len() != origins.len() * patch * patch {
        return Err(Error::Dimension(format!(
            "{} labels for {} patches of {patch}x{patch}",
            patch_labels.len(),
            origins.len()
        )));
    }
    let mut out = LabelRaster::zeros(width, height, geotransform);
    let grid = out.labels_mut();
    for (i, &(x0, y0)) in origins.iter().enumerate() {
        let block = &patch_labels[i * patch * patch..(i + 1) * patch * patch];
        for yy in 0..patch {
            let y = y0 + yy;
            if y >= height {
                break;
            }
            for xx in 0..patch {
                let x = x0 + xx;
                if x >= width {
                    break;
                }
                grid[y * width + x] = block[yy * patch + xx];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(w: usize, h: usize) -> RasterStack {
        let values = (0..w * h * 2).map(|i| (i % 251) as f32).collect();
        RasterStack::new(w, h, 2, values, GeoTransform::unit(), None).unwrap()
    }

    #[test]
    fn tiling_counts() {
        assert_eq!(extract_patches(&raster(64, 64), None, 16).unwrap().len(), 16);
        let p = extract_patches(&raster(70, 70), None, 16).unwrap();
        assert_eq!(p.len(), 25);
        let invalid = p.valid_mask.iter().filter(|&&v| !v).count();
        assert_eq!(invalid, 80 * 80 - 70 * 70);
        // only pixels in the 10-pixel right/bottom margins are masked
        for (i, &(x0, y0)) in p.origins.iter().enumerate() {
            for (j, &v) in p.patch_valid(i).iter().enumerate() {
                let (x, y) = (x0 + j % 16, y0 + j / 16);
                assert_eq!(v, x < 70 && y < 70);
            }
        }
    }

    #[test]
    fn reflection_padding_mirrors() {
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(9, 5), 1);
        assert_eq!(reflect(3, 1), 0);
        let r = raster(3, 1);
        let p = extract_patches(&r, None, 4).unwrap();
        // row 0 columns 0..4 -> sources 0,1,2,1
        let band0: Vec<f32> = p.inputs.sample(0).chunks(2).take(4).map(|c| c[0]).collect();
        assert_eq!(band0, vec![0.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn nodata_is_invalid_and_filled() {
        let values = vec![1.0, -9.0, 3.0, 5.0];
        let r = RasterStack::new(4, 1, 1, values, GeoTransform::unit(), Some(-9.0)).unwrap();
        let p = extract_patches(&r, None, 4).unwrap();
        assert!(!p.valid_mask[1]);
        assert_eq!(p.inputs.data()[1], 3.0);
    }

    #[test]
    fn stitch_inverts_extract() {
        let r = raster(37, 21);
        let labels: Vec<u8> = (0..37 * 21).map(|i| (i % 7) as u8).collect();
        let l = LabelRaster::new(37, 21, labels, GeoTransform::unit()).unwrap();
        let p = extract_patches(&r, Some(&l), 16).unwrap();
        let back = stitch(&p.origins, &p.targets, 16, 37, 21, GeoTransform::unit()).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn empty_raster_rejected() {
        let r = raster(0, 0);
        assert!(matches!(extract_patches(&r, None, 16), Err(Error::EmptyInput(_))));
    }
}
