//! Full-scene pixel-wise classification shared by the classical learners.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{LabelRaster, RasterStack};

/// A model that labels one pixel's band vector.
pub trait PixelClassifier: Sync {
    /// Expected feature vector length.
    fn n_features(&self) -> usize;

    fn predict_pixel(&self, x: &[f32]) -> Result<u8>;
}

/// Class with the highest vote; ties go to the smallest class id.
pub fn vote_winner<T: PartialOrd + Copy>(votes: &[(u8, T)]) -> Option<u8> {
    let mut best: Option<(u8, T)> = None;
    for &(id, v) in votes {
        best = match best {
            None => Some((id, v)),
            Some((bid, bv)) if v > bv || (v == bv && id < bid) => Some((id, v)),
            keep => keep,
        };
    }
    best.map(|(id, _)| id)
}

pub(crate) fn check_input(x: &[f32], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::Dimension(format!("feature vector has {} values, model expects {d}", x.len())));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("feature vector contains NaN".into()));
    }
    Ok(())
}

/// Classifies every non-nodata pixel independently; nodata pixels get 0.
pub fn predict_raster<M: PixelClassifier + ?Sized>(model: &M, raster: &RasterStack) -> Result<LabelRaster> {
    if raster.n_bands() != model.n_features() {
        return Err(Error::Dimension(format!(
            "raster has {} bands, model expects {}",
            raster.n_bands(),
            model.n_features()
        )));
    }
    let w = raster.width();
    let rows: Vec<Vec<u8>> = (0..raster.height())
        .into_par_iter()
        .map(|y| {
            let mut px = vec![0f32; raster.n_bands()];
            (0..w)
                .map(|x| {
                    let idx = y * w + x;
                    if raster.pixel_is_nodata(idx) {
                        return Ok(0);
                    }
                    raster.pixel_into(idx, &mut px);
                    model.predict_pixel(&px)
                })
                .collect::<Result<Vec<u8>>>()
        })
        .collect::<Result<_>>()?;
    LabelRaster::new(w, raster.height(), rows.concat(), raster.geotransform())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_to_smallest_id() {
        assert_eq!(vote_winner(&[(2, 50), (1, 50)]), Some(1));
        assert_eq!(vote_winner(&[(1, 10), (2, 50), (3, 50)]), Some(2));
        assert_eq!(vote_winner::<u32>(&[]), None);
    }
}
