//! Encoder-decoder network with skip connections at every resolution.
//!
//! Encoder level `l` (channels `base * 2^l`): conv3x3 -> ReLU -> conv3x3 ->
//! ReLU -> dropout, followed by a 2x2 max-pool except at the deepest level.
//! Decoder level `l`, from `depth - 2` down to 0: nearest 2x upsample ->
//! conv3x3 -> ReLU, concatenated with the level-`l` encoder output, then
//! conv3x3 -> ReLU -> conv3x3 -> ReLU. A 1x1 convolution maps the top
//! decoder output to class logits.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvShape};
use super::tensor::{Scalar, Tensor4};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub patch_size: usize,
    pub in_channels: usize,
    pub n_classes: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            patch_size: 16,
            in_channels: 8,
            n_classes: 2,
            depth: 5,
            base_channels: 8,
            dropout_rate: 0.2,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 1000,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.depth == 0 || self.depth > 16 {
            return bad(format!("depth {} outside 1..=16", self.depth));
        }
        let stride = 1usize << (self.depth - 1);
        if self.patch_size == 0 || self.patch_size % stride != 0 {
            return bad(format!(
                "patch_size {} is not divisible by 2^(depth-1) = {stride}",
                self.patch_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.in_channels == 0 || self.n_classes == 0 || self.base_channels == 0 {
            return bad("in_channels, n_classes and base_channels must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be positive and momentum in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial side length at encoder level `level`.
    pub fn side(&self, level: usize) -> usize {
        self.patch_size >> level
    }
}

/// One convolution and the location of its parameters in the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub name: String,
    pub side: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub w_offset: usize,
    pub b_offset: usize,
}

impl ConvSpec {
    pub fn shape(&self) -> ConvShape {
        ConvShape {
            h: self.side,
            w: self.side,
            c_in: self.c_in,
            c_out: self.c_out,
            k: self.k,
        }
    }
    pub fn fan_in(&self) -> usize {
        self.k * self.k * self.c_in
    }
}

/// Layer-by-layer layout derived from a [`UNetConfig`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Two convolutions per encoder level.
    pub encoder: Vec<[ConvSpec; 2]>,
    /// Indexed by level `0..depth-1`: up-convolution then two convolutions.
    pub decoder: Vec<[ConvSpec; 3]>,
    pub head: ConvSpec,
    pub n_params: usize,
}

impl Architecture {
    pub fn new(cfg: &UNetConfig) -> Self {
        let mut offset = 0;
        let mut conv = |name: String, side: usize, c_in: usize, c_out: usize, k: usize| {
            let w_offset = offset;
            let b_offset = w_offset + k * k * c_in * c_out;
            offset = b_offset + c_out;
            ConvSpec {
                name,
                side,
                c_in,
                c_out,
                k,
                w_offset,
                b_offset,
            }
        };
        let mut encoder = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let c_in = if l == 0 { cfg.in_channels } else { cfg.channels(l - 1) };
            let (c, s) = (cfg.channels(l), cfg.side(l));
            encoder.push([
                conv(format!("enc{l}.conv1"), s, c_in, c, 3),
                conv(format!("enc{l}.conv2"), s, c, c, 3),
            ]);
        }
        let mut decoder: Vec<[ConvSpec; 3]> = Vec::with_capacity(cfg.depth.saturating_sub(1));
        for l in (0..cfg.depth - 1).rev() {
            let (c, s) = (cfg.channels(l), cfg.side(l));
            decoder.push([
                conv(format!("dec{l}.up"), s, cfg.channels(l + 1), c, 3),
                conv(format!("dec{l}.conv1"), s, 2 * c, c, 3),
                conv(format!("dec{l}.conv2"), s, c, c, 3),
            ]);
        }
        decoder.reverse();
        let head = conv("head".into(), cfg.patch_size, cfg.channels(0), cfg.n_classes, 1);
        Architecture {
            encoder,
            decoder,
            head,
            n_params: offset,
        }
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        self.encoder
            .iter()
            .flatten()
            .chain(self.decoder.iter().flatten())
            .chain(std::iter::once(&self.head))
    }
}

/// Dropout behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Dropout on; masks derive from `seed`, the sample index and the level.
    Train { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetModel<T = f32> {
    config: UNetConfig,
    arch: Architecture,
    params: Vec<T>,
    /// Output channel `i` predicts `class_ids[i]`.
    pub class_ids: Vec<u8>,
    /// Per-band input standardization applied before the network.
    pub input_mean: Vec<f32>,
    pub input_std: Vec<f32>,
    pub loss_history: Vec<f64>,
}

struct EncCache<T> {
    input: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    mask: Option<Vec<T>>,
    out: Vec<T>,
    pool_arg: Vec<u32>,
}

struct DecCache<T> {
    up_in: Vec<T>,
    v: Vec<T>,
    cat: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
}

struct SampleCache<T> {
    enc: Vec<EncCache<T>>,
    dec: Vec<DecCache<T>>,
    head_in: Vec<T>,
}

/// Activations retained by [`UNetModel::forward_cached`] for backpropagation.
pub struct ForwardCache<T> {
    n_params: usize,
    samples: Vec<SampleCache<T>>,
}

impl<T> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }
}

/// Parameter gradients in the model's flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub values: Vec<T>,
}

/// Builds a network with fan-in scaled uniform weights
/// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))` and zero biases.
pub fn unet_init(config: &UNetConfig) -> Result<UNetModel<f32>> {
    config.validate()?;
    let arch = Architecture::new(config);
    let mut params = vec![0f32; arch.n_params];
    for (i, spec) in arch.convs().enumerate() {
        let bound = (6.0 / spec.fan_in() as f64).sqrt();
        let mut r = rng::stream(config.seed, i as u64);
        for p in &mut params[spec.w_offset..spec.b_offset] {
            *p = r.random_range(-bound..bound) as f32;
        }
    }
    Ok(UNetModel {
        config: config.clone(),
        arch,
        params,
        class_ids: (1..=config.n_classes as u8).collect(),
        input_mean: vec![0.0; config.in_channels],
        input_std: vec![1.0; config.in_channels],
        loss_history: Vec::new(),
    })
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

impl<T: Scalar> UNetModel<T> {
    pub fn config(&self) -> &UNetConfig {
        &self.config
    }
    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }
    pub fn params(&self) -> &[T] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Checks the stored architecture against the config and buffer size.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if Architecture::new(&self.config) != self.arch || self.params.len() != self.arch.n_params {
            return Err(Error::ModelFile("architecture does not match configuration".into()));
        }
        if self.class_ids.len() != self.config.n_classes
            || self.input_mean.len() != self.config.in_channels
            || self.input_std.len() != self.config.in_channels
        {
            return Err(Error::ModelFile("class or normalization tables have the wrong length".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> UNetModel<U> {
        UNetModel {
            config: self.config.clone(),
            arch: self.arch.clone(),
            params: self.params.iter().map(|&v| U::from(v).expect("float cast")).collect(),
            class_ids: self.class_ids.clone(),
            input_mean: self.input_mean.clone(),
            input_std: self.input_std.clone(),
            loss_history: self.loss_history.clone(),
        }
    }

    fn w(&self, spec: &ConvSpec) -> (&[T], &[T]) {
        (
            &self.params[spec.w_offset..spec.b_offset],
            &self.params[spec.b_offset..spec.b_offset + spec.c_out],
        )
    }

    fn conv(&self, spec: &ConvSpec, input: &[T]) -> Vec<T> {
        let (w, b) = self.w(spec);
        ops::conv_forward(spec.shape(), input, w, b)
    }

    fn conv_relu(&self, spec: &ConvSpec, input: &[T]) -> Vec<T> {
        let mut out = self.conv(spec, input);
        ops::relu_inplace(&mut out);
        out
    }

    fn check_batch(&self, batch: &Tensor4<T>) -> Result<()> {
        let p = self.config.patch_size;
        let want = [batch.n(), p, p, self.config.in_channels];
        if batch.shape() != want {
            return Err(Error::Dimension(format!(
                "batch shape {:?}, expected (n, {p}, {p}, {})",
                batch.shape(),
                self.config.in_channels
            )));
        }
        Ok(())
    }

    fn forward_sample(&self, x: &[T], mode: Mode, sample: usize) -> (Vec<T>, SampleCache<T>) {
        let cfg = &self.config;
        let depth = cfg.depth;
        let mut enc: Vec<EncCache<T>> = Vec::with_capacity(depth);
        let mut input = x.to_vec();
        for l in 0..depth {
            let [c1, c2] = &self.arch.encoder[l];
            let a = self.conv_relu(c1, &input);
            let b = self.conv_relu(c2, &a);
            let mut out = b.clone();
            let mask = match mode {
                Mode::Train { seed } if cfg.dropout_rate > 0.0 => {
                    let m = ops::dropout_mask(out.len(), cfg.dropout_rate, rng::derive(seed, &[sample as u64, l as u64]));
                    ops::apply_mask(&mut out, &m);
                    Some(m)
                }
                _ => None,
            };
            let (next, pool_arg) = if l + 1 < depth {
                let s = cfg.side(l);
                ops::maxpool_forward(&out, s, s, cfg.channels(l))
            } else {
                (Vec::new(), Vec::new())
            };
            enc.push(EncCache {
                input: std::mem::take(&mut input),
                a,
                b,
                mask,
                out,
                pool_arg,
            });
            input = next;
        }

        let mut g = enc[depth - 1].out.clone();
        let mut dec: Vec<Option<DecCache<T>>> = (0..depth - 1).map(|_| None).collect();
        for l in (0..depth - 1).rev() {
            let [up, c1, c2] = &self.arch.decoder[l];
            let s = cfg.side(l + 1);
            let up_in = ops::upsample_forward(&g, s, s, cfg.channels(l + 1));
            let v = self.conv_relu(up, &up_in);
            let c = cfg.channels(l);
            let cat = ops::concat_forward(&v, c, &enc[l].out, c);
            let a = self.conv_relu(c1, &cat);
            let b = self.conv_relu(c2, &a);
            g = b.clone();
            dec[l] = Some(DecCache { up_in, v, cat, a, b });
        }
        let logits = self.conv(&self.arch.head, &g);
        (
            logits,
            SampleCache {
                enc,
                dec: dec.into_iter().map(|d| d.expect("every level filled")).collect(),
                head_in: g,
            },
        )
    }

    fn backward_sample(&self, cache: &SampleCache<T>, grad_logits: &[T]) -> Vec<T> {
        let cfg = &self.config;
        let depth = cfg.depth;
        let mut grads = vec![T::zero(); self.params.len()];

        let conv_back = |grads: &mut Vec<T>, spec: &ConvSpec, input: &[T], grad_out: &[T], need_input: bool| -> Vec<T> {
            let (w, _) = self.w(spec);
            let (gw, rest) = grads[spec.w_offset..].split_at_mut(spec.b_offset - spec.w_offset);
            let gb = &mut rest[..spec.c_out];
            if need_input {
                let mut gin = vec![T::zero(); input.len()];
                ops::conv_backward(spec.shape(), input, w, grad_out, Some(&mut gin), gw, gb);
                gin
            } else {
                ops::conv_backward(spec.shape(), input, w, grad_out, None, gw, gb);
                Vec::new()
            }
        };

        // gradient w.r.t. the top decoder output (or the deepest encoder
        // output when depth == 1)
        let mut g = conv_back(&mut grads, &self.arch.head, &cache.head_in, grad_logits, true);
        let mut skip_grads: Vec<Vec<T>> = vec![Vec::new(); depth];
        for l in 0..depth - 1 {
            let d = &cache.dec[l];
            let [up, c1, c2] = &self.arch.decoder[l];
            ops::relu_backward(&d.b, &mut g);
            let mut ga = conv_back(&mut grads, c2, &d.a, &g, true);
            ops::relu_backward(&d.a, &mut ga);
            let gcat = conv_back(&mut grads, c1, &d.cat, &ga, true);
            let c = cfg.channels(l);
            let (mut gv, gskip) = ops::concat_backward(&gcat, c, c);
            skip_grads[l] = gskip;
            ops::relu_backward(&d.v, &mut gv);
            let gup = conv_back(&mut grads, up, &d.up_in, &gv, true);
            let s = cfg.side(l + 1);
            g = ops::upsample_backward(&gup, s, s, cfg.channels(l + 1));
        }

        // g now holds the gradient of the deepest encoder output
        let mut g_out = g;
        for l in (0..depth).rev() {
            let e = &cache.enc[l];
            if l + 1 < depth {
                add_into(&mut g_out, &skip_grads[l]);
            }
            if let Some(m) = &e.mask {
                ops::apply_mask(&mut g_out, m);
            }
            let [c1, c2] = &self.arch.encoder[l];
            ops::relu_backward(&e.b, &mut g_out);
            let mut ga = conv_back(&mut grads, c2, &e.a, &g_out, true);
            ops::relu_backward(&e.a, &mut ga);
            let gin = conv_back(&mut grads, c1, &e.input, &ga, l > 0);
            if l > 0 {
                let prev = &cache.enc[l - 1];
                let mut gprev = vec![T::zero(); prev.out.len()];
                ops::maxpool_backward(&gin, &prev.pool_arg, &mut gprev);
                g_out = gprev;
            }
        }
        grads
    }

    /// Logits `(n, patch, patch, n_classes)` without retaining activations.
    pub fn forward(&self, batch: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        Ok(self.forward_cached(batch, mode)?.0)
    }

    /// Logits plus the activations needed by [`UNetModel::backward`].
    /// Samples run in parallel; results do not depend on scheduling.
    pub fn forward_cached(&self, batch: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, ForwardCache<T>)> {
        self.check_batch(batch)?;
        let outs: Vec<(Vec<T>, SampleCache<T>)> = (0..batch.n())
            .into_par_iter()
            .map(|i| self.forward_sample(batch.sample(i), mode, i))
            .collect();
        let p = self.config.patch_size;
        let mut logits = Tensor4::zeros([batch.n(), p, p, self.config.n_classes]);
        let mut samples = Vec::with_capacity(outs.len());
        for (i, (l, c)) in outs.into_iter().enumerate() {
            logits.sample_mut(i).copy_from_slice(&l);
            samples.push(c);
        }
        Ok((
            logits,
            ForwardCache {
                n_params: self.params.len(),
                samples,
            },
        ))
    }

    /// Reverse-mode parameter gradients summed over the batch in sample
    /// order.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor4<T>) -> Result<Gradients<T>> {
        if cache.n_params != self.params.len() {
            return Err(Error::Protocol("cache was produced by a different architecture".into()));
        }
        if cache.samples.is_empty() {
            return Err(Error::Protocol("no cached forward pass".into()));
        }
        let p = self.config.patch_size;
        let want = [cache.samples.len(), p, p, self.config.n_classes];
        if grad_logits.shape() != want {
            return Err(Error::Protocol(format!(
                "gradient shape {:?} does not match the cached forward pass {:?}",
                grad_logits.shape(),
                want
            )));
        }
        let per_sample: Vec<Vec<T>> = (0..cache.samples.len())
            .into_par_iter()
            .map(|i| self.backward_sample(&cache.samples[i], grad_logits.sample(i)))
            .collect();
        let mut values = vec![T::zero(); self.params.len()];
        for g in &per_sample {
            add_into(&mut values, g);
        }
        Ok(Gradients { values })
    }
}

/// Softmax over the channel axis at every pixel.
pub fn softmax<T: Scalar>(logits: &Tensor4<T>) -> Tensor4<T> {
    let mut out = logits.clone();
    for px in out.data_mut().chunks_exact_mut(logits.c()) {
        let m = px.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in px.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in px.iter_mut() {
            *v = *v / s;
        }
    }
    out
}
