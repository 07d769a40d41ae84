use std::path::Path;

use rand::seq::SliceRandom;

use super::loss::masked_cross_entropy;
use super::model::{unet_init, Mode, UNetConfig, UNetModel};
use super::patches::{extract_patches, stitch, PatchSet};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::raster::{LabelRaster, RasterStack};
use crate::rng;

const SHUFFLE_TAG: u64 = 0x5348_5546;
const DROPOUT_TAG: u64 = 0x4452_4f50;
const PREDICT_CHUNK: usize = 64;

/// Per-band mean and standard deviation over valid patch pixels.
fn input_stats(patches: &PatchSet) -> (Vec<f32>, Vec<f32>) {
    let c = patches.inputs.c();
    let mut sum = vec![0f64; c];
    let mut sq = vec![0f64; c];
    let mut n = 0usize;
    for (px, &v) in patches.inputs.data().chunks_exact(c).zip(&patches.valid_mask) {
        if !v {
            continue;
        }
        n += 1;
        for (b, &x) in px.iter().enumerate() {
            sum[b] += x as f64;
            sq[b] += x as f64 * x as f64;
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let sd = (s / n - m * m).max(0.0).sqrt();
            if sd > 1e-12 { sd as f32 } else { 1.0 }
        })
        .collect();
    (mean.iter().map(|&m| m as f32).collect(), std)
}

fn normalize(model: &UNetModel, inputs: &[f32]) -> Vec<f32> {
    let c = model.input_mean.len();
    let mut out = inputs.to_vec();
    for px in out.chunks_exact_mut(c) {
        for ((v, m), s) in px.iter_mut().zip(&model.input_mean).zip(&model.input_std) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Mini-batch SGD with momentum over the supervised patches.
///
/// Output channels are bound to the sorted distinct class ids found in the
/// valid targets; their count must equal `config.n_classes`. Inputs are
/// standardized per band with statistics stored in the model. Patch order is
/// reshuffled every epoch from the seed, and the mean batch loss of each
/// epoch is recorded in `loss_history`.
pub fn train_unet(patches: &PatchSet, config: &UNetConfig) -> Result<UNetModel> {
    config.validate()?;
    if patches.patch_size != config.patch_size || patches.inputs.c() != config.in_channels {
        return Err(Error::Dimension(format!(
            "patches are {}x{}x{}, config expects {}x{}x{}",
            patches.patch_size,
            patches.patch_size,
            patches.inputs.c(),
            config.patch_size,
            config.patch_size,
            config.in_channels
        )));
    }
    let mut class_ids: Vec<u8> = patches
        .targets
        .iter()
        .zip(&patches.valid_mask)
        .filter(|(&t, &v)| v && t != 0)
        .map(|(&t, _)| t)
        .collect();
    class_ids.sort_unstable();
    class_ids.dedup();
    if class_ids.is_empty() {
        return Err(Error::NoSupervision);
    }
    if class_ids.len() != config.n_classes {
        return Err(Error::Validation(format!(
            "patches contain {} classes {:?}, config declares n_classes = {}",
            class_ids.len(),
            class_ids,
            config.n_classes
        )));
    }
    let mut index = [0u8; 256];
    for (i, &id) in class_ids.iter().enumerate() {
        index[id as usize] = i as u8 + 1;
    }

    let mut model = unet_init(config)?;
    let (mean, std) = input_stats(patches);
    model.class_ids = class_ids;
    model.input_mean = mean;
    model.input_std = std;

    let supervised: Vec<usize> = (0..patches.len()).filter(|&i| patches.is_supervised(i)).collect();
    let p = config.patch_size;
    let per = p * p;
    let inputs = normalize(&model, patches.inputs.data());
    let sample_len = patches.inputs.sample_len();
    let lr = config.learning_rate as f32;
    let mu = config.momentum as f32;
    let mut velocity = vec![0f32; model.n_params()];
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order = supervised.clone();
        order.shuffle(&mut rng::seeded(rng::derive(config.seed, &[SHUFFLE_TAG, epoch as u64])));
        let mut total = 0f64;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut data = Vec::with_capacity(chunk.len() * sample_len);
            let mut targets = Vec::with_capacity(chunk.len() * per);
            let mut valid = Vec::with_capacity(chunk.len() * per);
            for &i in chunk {
                data.extend_from_slice(&inputs[i * sample_len..(i + 1) * sample_len]);
                targets.extend(patches.patch_targets(i).iter().map(|&t| index[t as usize]));
                valid.extend_from_slice(patches.patch_valid(i));
            }
            let batch = Tensor4::from_vec([chunk.len(), p, p, config.in_channels], data)?;
            let seed = rng::derive(config.seed, &[DROPOUT_TAG, epoch as u64, bi as u64]);
            let (logits, cache) = model.forward_cached(&batch, Mode::Train { seed })?;
            let (loss, grad) = masked_cross_entropy(&logits, &targets, &valid)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let grads = model.backward(&cache, &grad)?;
            for ((w, v), &g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grads.values) {
                *v = mu * *v - lr * g;
                *w += *v;
            }
            total += loss;
            batches += 1;
        }
        let mean_loss = total / batches as f64;
        if !mean_loss.is_finite() || !model.params().iter().all(|w| w.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        log::debug!("unet epoch {epoch}: loss {mean_loss:.5}");
        history.push(mean_loss);
    }
    model.loss_history = history;
    Ok(model)
}

/// Per-pixel class ids for every patch, 0 where the pixel is invalid.
pub fn predict_patches(model: &UNetModel, patches: &PatchSet) -> Result<Vec<u8>> {
    let cfg = model.config();
    if patches.inputs.c() != cfg.in_channels || patches.patch_size != cfg.patch_size {
        return Err(Error::Dimension(format!(
            "patches have {} bands at size {}, model expects {} at {}",
            patches.inputs.c(),
            patches.patch_size,
            cfg.in_channels,
            cfg.patch_size
        )));
    }
    let p = cfg.patch_size;
    let k = cfg.n_classes;
    let sample_len = patches.inputs.sample_len();
    let inputs = normalize(model, patches.inputs.data());
    let mut out = Vec::with_capacity(patches.targets.len().max(patches.len() * p * p));
    for start in (0..patches.len()).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(patches.len());
        let batch = Tensor4::from_vec(
            [end - start, p, p, cfg.in_channels],
            inputs[start * sample_len..end * sample_len].to_vec(),
        )?;
        let logits = model.forward(&batch, Mode::Inference)?;
        if !logits.all_finite() {
            return Err(Error::InvalidInput("non-finite logits".into()));
        }
        for px in logits.data().chunks_exact(k) {
            let mut best = 0;
            for (i, &v) in px.iter().enumerate() {
                if v > px[best] {
                    best = i;
                }
            }
            out.push(model.class_ids[best]);
        }
    }
    for (o, &v) in out.iter_mut().zip(&patches.valid_mask) {
        if !v {
            *o = 0;
        }
    }
    Ok(out)
}

/// Tiles the raster, classifies each patch, and stitches the result back to
/// the raster's extent. Nodata pixels come out as 0.
pub fn predict_scene(model: &UNetModel, raster: &RasterStack) -> Result<LabelRaster> {
    let cfg = model.config();
    if raster.n_bands() != cfg.in_channels {
        return Err(Error::Dimension(format!(
            "raster has {} bands, model expects {}",
            raster.n_bands(),
            cfg.in_channels
        )));
    }
    let patches = extract_patches(raster, None, cfg.patch_size)?;
    let labels = predict_patches(model, &patches)?;
    stitch(
        &patches.origins,
        &labels,
        cfg.patch_size,
        raster.width(),
        raster.height(),
        raster.geotransform(),
    )
}

/// Writes `epoch,mean_loss` rows, epochs counted from 1.
pub fn write_loss_history(history: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["epoch", "mean_loss"]).map_err(err)?;
    for (i, l) in history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{l}")]).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    crate::raster::write_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn tiny(n_classes: usize, epochs: usize) -> UNetConfig {
        UNetConfig {
            patch_size: 4,
            in_channels: 2,
            n_classes,
            depth: 2,
            base_channels: 4,
            dropout_rate: 0.0,
            epochs,
            batch_size: 4,
            ..Default::default()
        }
    }

    fn scene() -> (RasterStack, LabelRaster) {
        let (w, h) = (8, 8);
        let mut vals = vec![0f32; w * h * 2];
        let mut labels = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let c = if x < 4 { 1 } else { 2 };
                labels[y * w + x] = c;
                vals[y * w + x] = c as f32 + 0.1 * ((x * 7 + y * 3) % 5) as f32;
                vals[w * h + y * w + x] = (y as f32).sin();
            }
        }
        (
            RasterStack::new(w, h, 2, vals, GeoTransform::unit(), None).unwrap(),
            LabelRaster::new(w, h, labels, GeoTransform::unit()).unwrap(),
        )
    }

    #[test]
    fn learns_and_is_deterministic() {
        let (r, l) = scene();
        let p = extract_patches(&r, Some(&l), 4).unwrap();
        let cfg = UNetConfig { learning_rate: 0.05, ..tiny(2, 150) };
        let a = train_unet(&p, &cfg).unwrap();
        let b = train_unet(&p, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.loss_history.len(), 150);
        let n = a.loss_history.len() / 10;
        let first: f64 = a.loss_history[..n].iter().sum();
        let last: f64 = a.loss_history[a.loss_history.len() - n..].iter().sum();
        assert!(last < first);
        assert_eq!(predict_scene(&a, &r).unwrap(), l);
    }

    #[test]
    fn class_count_must_match() {
        let (r, l) = scene();
        let p = extract_patches(&r, Some(&l), 4).unwrap();
        assert!(matches!(train_unet(&p, &tiny(3, 1)), Err(Error::Validation(_))));
        let unlabeled = extract_patches(&r, None, 4).unwrap();
        assert!(matches!(train_unet(&unlabeled, &tiny(2, 1)), Err(Error::NoSupervision)));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (r, l) = scene();
        let p = extract_patches(&r, Some(&l), 4).unwrap();
        let cfg = UNetConfig { learning_rate: 1e30, ..tiny(2, 20) };
        assert!(matches!(train_unet(&p, &cfg), Err(Error::TrainingDiverged { .. })));
    }

    #[test]
    fn band_mismatch_rejected() {
        let (r, l) = scene();
        let p = extract_patches(&r, Some(&l), 4).unwrap();
        let m = train_unet(&p, &tiny(2, 1)).unwrap();
        let three = RasterStack::new(4, 4, 3, vec![0.0; 48], GeoTransform::unit(), None).unwrap();
        assert!(matches!(predict_scene(&m, &three), Err(Error::Dimension(_))));
    }
}
