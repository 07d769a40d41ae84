//! Analytic gradients against central finite differences in double
//! precision.

mod common;

use common::{check, dot, rel_err, uniform};
use rand::Rng;
use smallgeo::rng;
use smallgeo::unet::ops::{self, ConvShape};
use smallgeo::unet::{masked_cross_entropy, unet_init, Mode, Tensor4, UNetConfig, UNetModel};

const TOL: f64 = 1e-3;

#[test]
fn conv_input_weight_and_bias_gradients() {
    let mut r = rng::seeded(1);
    for k in [1, 3] {
        for _sample in 0..2 {
            let s = ConvShape { h: 5, w: 4, c_in: 3, c_out: 2, k };
            let x = uniform(&mut r, s.h * s.w * s.c_in);
            let w = uniform(&mut r, s.n_weights());
            let b = uniform(&mut r, s.c_out);
            let up = uniform(&mut r, s.h * s.w * s.c_out);
            let (mut gx, mut gw, mut gb) = (vec![0.0; x.len()], vec![0.0; w.len()], vec![0.0; b.len()]);
            ops::conv_backward(s, &x, &w, &up, Some(&mut gx), &mut gw, &mut gb);
            let e_x = check(&x, &gx, 1e-5, |v| dot(&up, &ops::conv_forward(s, v, &w, &b)));
            let e_w = check(&w, &gw, 1e-5, |v| dot(&up, &ops::conv_forward(s, &x, v, &b)));
            let e_b = check(&b, &gb, 1e-5, |v| dot(&up, &ops::conv_forward(s, &x, &w, v)));
            assert!(e_x <= TOL && e_w <= TOL && e_b <= TOL, "k={k}: {e_x} {e_w} {e_b}");

            let mut gw2 = vec![0.0; w.len()];
            let mut gb2 = vec![0.0; b.len()];
            ops::conv_backward(s, &x, &w, &up, None, &mut gw2, &mut gb2);
            assert_eq!((gw2, gb2), (gw, gb));
        }
    }
}

#[test]
fn maxpool_gradient() {
    let mut r = rng::seeded(2);
    for _sample in 0..2 {
        let (h, w, c) = (6, 4, 3);
        // distinct values so a small step never moves the argmax
        let mut x: Vec<f64> = (0..h * w * c).map(|i| i as f64 * 0.01).collect();
        for i in (1..x.len()).rev() {
            x.swap(i, r.random_range(0..=i));
        }
        let up = uniform(&mut r, h * w * c / 4);
        let (_, arg) = ops::maxpool_forward(&x, h, w, c);
        let mut g = vec![0.0; x.len()];
        ops::maxpool_backward(&up, &arg, &mut g);
        let e = check(&x, &g, 1e-5, |v| dot(&up, &ops::maxpool_forward(v, h, w, c).0));
        assert!(e <= TOL, "{e}");
    }
}

#[test]
fn upsample_gradient() {
    let mut r = rng::seeded(3);
    for _sample in 0..2 {
        let (h, w, c) = (3, 2, 4);
        let x = uniform(&mut r, h * w * c);
        let up = uniform(&mut r, 4 * h * w * c);
        let g = ops::upsample_backward(&up, h, w, c);
        let e = check(&x, &g, 1e-5, |v| dot(&up, &ops::upsample_forward(v, h, w, c)));
        assert!(e <= TOL, "{e}");
    }
}

#[test]
fn concat_gradient_splits() {
    let mut r = rng::seeded(4);
    for _sample in 0..2 {
        let (npix, ca, cb) = (7, 2, 3);
        let a = uniform(&mut r, npix * ca);
        let b = uniform(&mut r, npix * cb);
        let up = uniform(&mut r, npix * (ca + cb));
        let (ga, gb) = ops::concat_backward(&up, ca, cb);
        let e_a = check(&a, &ga, 1e-5, |v| dot(&up, &ops::concat_forward(v, ca, &b, cb)));
        let e_b = check(&b, &gb, 1e-5, |v| dot(&up, &ops::concat_forward(&a, ca, v, cb)));
        assert!(e_a <= TOL && e_b <= TOL, "{e_a} {e_b}");
    }
}

#[test]
fn relu_and_dropout_gradients() {
    let mut r = rng::seeded(5);
    for _sample in 0..2 {
        let x: Vec<f64> = (0..40)
            .map(|_| {
                let v: f64 = r.random_range(0.01..1.0);
                if r.random::<bool>() { v } else { -v }
            })
            .collect();
        let up = uniform(&mut r, x.len());
        let relu = |v: &[f64]| {
            let mut o = v.to_vec();
            ops::relu_inplace(&mut o);
            o
        };
        let mut g = up.clone();
        ops::relu_backward(&relu(&x), &mut g);
        assert!(check(&x, &g, 1e-5, |v| dot(&up, &relu(v))) <= TOL);

        for rate in [0.0, 0.3] {
            let mask: Vec<f64> = ops::dropout_mask(x.len(), rate, 9);
            let drop = |v: &[f64]| {
                let mut o = v.to_vec();
                ops::apply_mask(&mut o, &mask);
                o
            };
            let mut g = up.clone();
            ops::apply_mask(&mut g, &mask);
            assert!(check(&x, &g, 1e-5, |v| dot(&up, &drop(v))) <= TOL, "rate {rate}");
        }
    }
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut r = rng::seeded(6);
    let shape = [2, 16, 16, 3];
    let n = shape.iter().product::<usize>();
    let logits: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let npix = n / 3;
    let targets: Vec<u8> = (0..npix).map(|_| r.random_range(0..=3)).collect();
    let valid: Vec<bool> = (0..npix).map(|_| r.random::<f64>() < 0.9).collect();
    let t = Tensor4::from_vec(shape, logits.clone()).unwrap();
    let (_, grad) = masked_cross_entropy(&t, &targets, &valid).unwrap();
    let loss = |v: &[f64]| {
        let t = Tensor4::from_vec(shape, v.to_vec()).unwrap();
        masked_cross_entropy(&t, &targets, &valid).unwrap().0
    };
    let e = check(&logits, grad.data(), 1e-4, loss);
    assert!(e <= 1e-5, "{e}");
}

struct NetCase {
    model: UNetModel<f64>,
    batch: Tensor4<f64>,
    targets: Vec<u8>,
    valid: Vec<bool>,
}

fn net_case(cfg: &UNetConfig, seed: u64) -> NetCase {
    let mut model = unet_init(cfg).unwrap().cast::<f64>();
    let mut r = rng::seeded(seed);
    // small random biases so no layer sits exactly at a ReLU kink
    for spec in model.architecture().convs().cloned().collect::<Vec<_>>() {
        for b in &mut model.params_mut()[spec.b_offset..spec.b_offset + spec.c_out] {
            *b = r.random_range(-0.1..0.1);
        }
    }
    let p = cfg.patch_size;
    let batch = Tensor4::from_vec([2, p, p, cfg.in_channels], uniform(&mut r, 2 * p * p * cfg.in_channels)).unwrap();
    let targets = (0..2 * p * p).map(|_| r.random_range(0..=cfg.n_classes as u8)).collect();
    let valid = (0..2 * p * p).map(|_| r.random::<f64>() < 0.9).collect();
    NetCase { model, batch, targets, valid }
}

impl NetCase {
    fn loss(&self, params: &[f64], mode: Mode) -> f64 {
        let mut m = self.model.clone();
        m.params_mut().copy_from_slice(params);
        let logits = m.forward(&self.batch, mode).unwrap();
        masked_cross_entropy(&logits, &self.targets, &self.valid).unwrap().0
    }

    fn analytic(&self, mode: Mode) -> Vec<f64> {
        let (logits, cache) = self.model.forward_cached(&self.batch, mode).unwrap();
        let (_, g) = masked_cross_entropy(&logits, &self.targets, &self.valid).unwrap();
        self.model.backward(&cache, &g).unwrap().values
    }

    /// Worst relative error per convolution, over `stride`-spaced params.
    fn per_layer_errors(&self, mode: Mode, stride: usize) -> Vec<(String, f64)> {
        let grad = self.analytic(mode);
        let params = self.model.params().to_vec();
        let h = 1e-5;
        let mut p = params.clone();
        self.model
            .architecture()
            .convs()
            .map(|spec| {
                let end = spec.b_offset + spec.c_out;
                let mut worst = 0f64;
                for i in (spec.w_offset..end).step_by(stride).chain(spec.b_offset..end) {
                    p[i] = params[i] + h;
                    let up = self.loss(&p, mode);
                    p[i] = params[i] - h;
                    let down = self.loss(&p, mode);
                    p[i] = params[i];
                    worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * h)));
                }
                (spec.name.clone(), worst)
            })
            .collect()
    }
}

fn tiny() -> UNetConfig {
    UNetConfig {
        patch_size: 4,
        in_channels: 3,
        n_classes: 3,
        depth: 3,
        base_channels: 2,
        dropout_rate: 0.3,
        ..Default::default()
    }
}

#[test]
fn network_gradient_every_parameter_dropout_off() {
    let case = net_case(&tiny(), 7);
    for (name, e) in case.per_layer_errors(Mode::Inference, 1) {
        assert!(e <= TOL, "{name}: {e}");
    }
}

#[test]
fn network_gradient_every_parameter_dropout_on() {
    let case = net_case(&tiny(), 8);
    for (name, e) in case.per_layer_errors(Mode::Train { seed: 99 }, 1) {
        assert!(e <= TOL, "{name}: {e}");
    }
}

#[test]
fn full_depth_network_gradient() {
    let cfg = UNetConfig {
        patch_size: 16,
        in_channels: 8,
        n_classes: 4,
        depth: 5,
        base_channels: 2,
        dropout_rate: 0.2,
        ..Default::default()
    };
    let case = net_case(&cfg, 9);
    let errs = case.per_layer_errors(Mode::Train { seed: 5 }, 7);
    assert_eq!(errs.len(), 2 * 5 + 3 * 4 + 1);
    for (name, e) in errs {
        assert!(e <= TOL, "{name}: {e}");
    }
}

#[test]
fn duplicated_sample_doubles_its_contribution() {
    let cfg = tiny();
    let model = unet_init(&cfg).unwrap().cast::<f64>();
    let mut r = rng::seeded(10);
    let len = 4 * 4 * 3;
    let (a, b) = (uniform(&mut r, len), uniform(&mut r, len));
    let up: Vec<f64> = uniform(&mut r, 4 * 4 * 3);
    let grads = |samples: &[&Vec<f64>]| {
        let owned: Vec<Vec<f64>> = samples.iter().map(|s| s.to_vec()).collect();
        let batch = Tensor4::stack(&owned, 4, 4, 3).unwrap();
        let (_, cache) = model.forward_cached(&batch, Mode::Inference).unwrap();
        let g = Tensor4::from_vec([samples.len(), 4, 4, 3], up.repeat(samples.len())).unwrap();
        model.backward(&cache, &g).unwrap().values
    };
    let ga = grads(&[&a]);
    let gab = grads(&[&a, &b]);
    let gaab = grads(&[&a, &a, &b]);
    for i in 0..ga.len() {
        let want = gab[i] + ga[i];
        assert!((gaab[i] - want).abs() <= 1e-12 * (1.0 + want.abs()), "param {i}");
    }
}

#[test]
fn inverted_dropout_is_unbiased() {
    let mut r = rng::seeded(11);
    let x: Vec<f64> = (0..64).map(|_| r.random_range(0.5..1.5)).collect();
    let mut sum = vec![0.0; x.len()];
    for s in 0..10_000u64 {
        let mask: Vec<f64> = ops::dropout_mask(x.len(), 0.2, s);
        let mut y = x.clone();
        ops::apply_mask(&mut y, &mask);
        for (a, b) in sum.iter_mut().zip(&y) {
            *a += b;
        }
    }
    for (m, v) in sum.iter().zip(&x) {
        let mean = m / 10_000.0;
        assert!((mean - v).abs() <= 0.02 * v, "{mean} vs {v}");
    }
}
