//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::{brute_force_labels, check, concave_polygon, dot, random_labels, random_raster, uniform};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use smallgeo::labels::{rasterize_polygons, SampleSet};
use smallgeo::metrics::Report;
use smallgeo::pipeline::{self, load_config, Pathway, PipelineConfig, Preset};
use smallgeo::raster::GeoTransform;
use smallgeo::rng;
use smallgeo::svm::{solve_dual, train_linear_svm, SvmConfig};
use smallgeo::unet::ops::{self, ConvShape};
use smallgeo::unet::{extract_patches, masked_cross_entropy, stitch, unet_init, Mode, Tensor4, UNetConfig};

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn scene_dir(root: &Path, name: &str, preset: Preset) -> PipelineConfig {
    let dir = root.join(name);
    let mut cfg = PipelineConfig::default();
    cfg.synth.preset = preset;
    cfg.run.out = dir.clone();
    pipeline::synth(&cfg).expect("synthetic scene");
    load_config(&dir.join("pipeline.toml")).expect("generated config")
}

fn report_of(dir: &Path) -> Report {
    Report::from_json(&fs::read_to_string(dir.join("report.json")).expect("report")).expect("report parses")
}

fn a1_separable(root: &Path) -> Outcome {
    let scene = scene_dir(root, "separable", Preset::Separable);
    let mut lines = Vec::new();
    let mut ok = true;
    for p in [Pathway::Rf, Pathway::Svm] {
        let mut cfg = scene.clone();
        cfg.run.pathway = p;
        cfg.run.out = root.join(format!("a1_{p}"));
        let t = Instant::now();
        pipeline::run(&cfg).map_err(|e| e.to_string())?;
        let secs = t.elapsed().as_secs_f64();
        let f1 = report_of(&cfg.run.out).results[0].metrics.macro_avg.f1;
        ok &= f1 >= 0.95 && secs <= 60.0;
        lines.push(format!("{p} macro-F1 {f1:.3} in {secs:.1}s"));
    }
    verdict(ok, lines.join(", "))
}

fn a2_texture(root: &Path) -> Outcome {
    let mut cfg = scene_dir(root, "texture", Preset::Texture);
    cfg.unet.epochs = 300;
    cfg.run.out = root.join("a2");
    let (u, f) = (&cfg.unet, &cfg.rf);
    assert!(u.depth == 5 && u.patch_size == 16 && u.base_channels == 8 && f.n_trees == 100);
    let t = Instant::now();
    pipeline::compare(&cfg).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let r = report_of(&cfg.run.out);
    let tex = |model: &str| {
        r.results.iter().find(|m| m.model == model).and_then(|m| m.metrics.f1(7)).unwrap_or(0.0)
    };
    let (rf, svm, un) = (tex("rf"), tex("svm"), tex("unet"));
    verdict(
        un >= 0.75 && un - rf >= 0.20 && secs <= 900.0,
        format!("texture F1 rf {rf:.3} svm {svm:.3} unet {un:.3} (300 epochs), compare took {secs:.0}s"),
    )
}

fn a3_gradients() -> Outcome {
    let mut r = rng::seeded(2024);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut note = |name, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for _sample in 0..2 {
        let s = ConvShape { h: 6, w: 5, c_in: 3, c_out: 4, k: 3 };
        let (x, w, b) = (uniform(&mut r, 90), uniform(&mut r, s.n_weights()), uniform(&mut r, 4));
        let up = uniform(&mut r, 120);
        let (mut gx, mut gw, mut gb) = (vec![0.0; 90], vec![0.0; w.len()], vec![0.0; 4]);
        ops::conv_backward(s, &x, &w, &up, Some(&mut gx), &mut gw, &mut gb);
        note("conv", check(&x, &gx, 1e-5, |v| dot(&up, &ops::conv_forward(s, v, &w, &b))));
        note("conv", check(&w, &gw, 1e-5, |v| dot(&up, &ops::conv_forward(s, &x, v, &b))));
        note("conv", check(&b, &gb, 1e-5, |v| dot(&up, &ops::conv_forward(s, &x, &w, v))));

        let mut px: Vec<f64> = (0..96).map(|i| i as f64 * 0.01).collect();
        for i in (1..px.len()).rev() {
            px.swap(i, r.random_range(0..=i));
        }
        let up = uniform(&mut r, 24);
        let (_, arg) = ops::maxpool_forward(&px, 4, 8, 3);
        let mut g = vec![0.0; 96];
        ops::maxpool_backward(&up, &arg, &mut g);
        note("pool", check(&px, &g, 1e-5, |v| dot(&up, &ops::maxpool_forward(v, 4, 8, 3).0)));

        let ux = uniform(&mut r, 24);
        let up = uniform(&mut r, 96);
        let g = ops::upsample_backward(&up, 2, 4, 3);
        note("upsample", check(&ux, &g, 1e-5, |v| dot(&up, &ops::upsample_forward(v, 2, 4, 3))));

        let (ca, cb) = (uniform(&mut r, 20), uniform(&mut r, 30));
        let up = uniform(&mut r, 50);
        let (ga, gb) = ops::concat_backward(&up, 2, 3);
        note("concat", check(&ca, &ga, 1e-5, |v| dot(&up, &ops::concat_forward(v, 2, &cb, 3))));
        note("concat", check(&cb, &gb, 1e-5, |v| dot(&up, &ops::concat_forward(&ca, 2, v, 3))));
    }

    let shape = [2, 16, 16, 3];
    let logits = uniform(&mut r, 1536).iter().map(|v| 3.0 * v).collect::<Vec<_>>();
    let targets: Vec<u8> = (0..512).map(|_| r.random_range(0..=3)).collect();
    let valid: Vec<bool> = (0..512).map(|_| r.random::<f64>() < 0.9).collect();
    let (_, grad) = masked_cross_entropy(&Tensor4::from_vec(shape, logits.clone()).unwrap(), &targets, &valid).unwrap();
    let ce = check(&logits, grad.data(), 1e-4, |v| {
        masked_cross_entropy(&Tensor4::from_vec(shape, v.to_vec()).unwrap(), &targets, &valid).unwrap().0
    });

    // whole network, dropout off: every parameter of every convolution
    let cfg = UNetConfig { patch_size: 4, in_channels: 3, n_classes: 3, depth: 3, base_channels: 2, ..Default::default() };
    let mut model = unet_init(&cfg).unwrap().cast::<f64>();
    for v in model.params_mut().iter_mut() {
        *v += r.random_range(-0.05..0.05);
    }
    let batch = Tensor4::from_vec([2, 4, 4, 3], uniform(&mut r, 96)).unwrap();
    let nt: Vec<u8> = (0..32).map(|_| r.random_range(1..=3)).collect();
    let nv = vec![true; 32];
    let (lg, cache) = model.forward_cached(&batch, Mode::Inference).unwrap();
    let (_, gl) = masked_cross_entropy(&lg, &nt, &nv).unwrap();
    let analytic = model.backward(&cache, &gl).unwrap().values;
    let params = model.params().to_vec();
    let net = check(&params, &analytic, 1e-5, |p| {
        let mut m = model.clone();
        m.params_mut().copy_from_slice(p);
        masked_cross_entropy(&m.forward(&batch, Mode::Inference).unwrap(), &nt, &nv).unwrap().0
    });
    note("network (dropout off)", net);

    let ok = worst.iter().all(|w| w.1 <= 1e-3) && ce <= 1e-5;
    let mut parts: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    parts.push(format!("softmax-CE {ce:.1e}"));
    verdict(ok, format!("max relative error: {}", parts.join(", ")))
}

fn a4_svm() -> Outcome {
    let mut r = rng::seeded(4);
    let noise = Normal::new(0.0, 0.9).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..4u8 {
        for _ in 0..50 {
            rows.push((0..3).map(|j| (c as f64 * (j + 1) as f64 * 0.7 + noise.sample(&mut r)) as f32).collect());
            labels.push(c + 1);
        }
    }
    let samples = SampleSet::from_rows(&rows, &labels).unwrap();
    let cfg = SvmConfig::default();
    let model = train_linear_svm(&samples, &cfg).map_err(|e| e.to_string())?;

    // independent recomputation of every pair's projected gradients
    let (n, d) = (samples.len(), 3);
    let mut z = vec![vec![0.0; d]; n];
    for j in 0..d {
        let col: Vec<f64> = (0..n).map(|i| samples.row(i)[j] as f64).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for i in 0..n {
            z[i][j] = (col[i] - mean) / sd;
        }
    }
    let mut kkt = 0f64;
    for m in model.pairwise() {
        let mut alpha = vec![0.0; n];
        for &(i, a) in &m.support {
            alpha[i] = a;
        }
        for i in 0..n {
            let y = if labels[i] == m.positive { 1.0 } else if labels[i] == m.negative { -1.0 } else { continue };
            let g = y * (dot(&z[i], &m.w) + m.b) - 1.0;
            let pg = if alpha[i] <= 0.0 { g.min(0.0) } else if alpha[i] >= cfg.c { g.max(0.0) } else { g };
            kkt = kkt.max(pg.abs());
        }
    }

    let x: Vec<f64> = z.iter().take(100).flatten().copied().collect();
    let y: Vec<f64> = (0..100).map(|i| if labels[i] == 1 { 1.0 } else { -1.0 }).collect();
    let mut x200 = x.clone();
    x200.extend(z.iter().skip(100).take(100).flatten());
    let mut y200 = y.clone();
    y200.extend((100..200).map(|i| if labels[i] == 3 { 1.0 } else { -1.0 }));
    let sol = solve_dual(&x200, &y200, d, cfg.c, cfg.eps, cfg.max_iter, 11, true);
    let drops = sol.trace.windows(2).filter(|w| w[1] < w[0] - 1e-12 * w[0].abs().max(1.0)).count();

    verdict(
        kkt <= cfg.eps && model.warnings().is_empty() && drops == 0 && sol.converged,
        format!(
            "{} pairs, max KKT violation {kkt:.4} <= {}; dual trace of {} updates on 200 samples, {drops} decreases",
            model.pairwise().len(),
            cfg.eps,
            sol.trace.len()
        ),
    )
}

fn a5_rasterize() -> Outcome {
    let mut r = rng::seeded(5);
    let polys: Vec<_> = (0..50)
        .map(|i| {
            let (cx, cy, rad) = (r.random_range(-10.0..138.0), r.random_range(-10.0..138.0), r.random_range(6.0..40.0));
            concave_polygon(&mut r, (i % 9) as u8 + 1, cx, cy, rad)
        })
        .collect();
    let gt = GeoTransform::new(0.0, 1.0, 128.0, 1.0);
    let got = rasterize_polygons(&polys, 128, 128, gt).map_err(|e| e.to_string())?;
    let want = brute_force_labels(&polys, 128, 128, gt);
    let diff = got.labels().iter().zip(&want).filter(|(a, b)| a != b).count();
    let labeled = want.iter().filter(|&&v| v != 0).count();
    verdict(diff == 0, format!("50 concave polygons on 128x128: {diff} mismatching pixels ({labeled} labeled)"))
}

fn a6_patches() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, s) in [16usize, 64, 70, 1].into_iter().enumerate() {
        let raster = random_raster(s, s, 8, i as u64);
        let labels = random_labels(s, s, 6, 100 + i as u64);
        let p = extract_patches(&raster, Some(&labels), 16).map_err(|e| e.to_string())?;
        let back = stitch(&p.origins, &p.targets, 16, s, s, raster.geotransform()).map_err(|e| e.to_string())?;
        let same = back == labels;
        ok &= same;
        parts.push(format!("{s}x{s} ({} patches) {}", p.len(), if same { "identical" } else { "differs" }));
    }
    verdict(ok, parts.join(", "))
}

fn a7_determinism(root: &Path) -> Outcome {
    let mut cfg = scene_dir(root, "determinism", Preset::Texture);
    cfg.unet.epochs = 30;
    cfg.run.out = root.join("a7_first");
    pipeline::compare(&cfg).map_err(|e| e.to_string())?;
    let manifest = cfg.run.out.join("manifest.json");
    let mut files = vec!["report.json".to_string(), "report.txt".to_string()];
    files.extend(Pathway::ALL.iter().map(|p| format!("model_{p}.json")));
    let mut outs = Vec::new();
    for run in ["a7_second", "a7_third"] {
        let mut c = load_config(&manifest).map_err(|e| e.to_string())?;
        c.run.out = root.join(run);
        pipeline::compare(&c).map_err(|e| e.to_string())?;
        outs.push(c.run.out);
    }
    let mut differing = Vec::new();
    for f in &files {
        let a = fs::read(outs[0].join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(outs[1].join(f)).map_err(|e| e.to_string())?;
        let orig = fs::read(cfg.run.out.join(f)).map_err(|e| e.to_string())?;
        if a != b || a != orig {
            differing.push(f.clone());
        }
    }
    verdict(
        differing.is_empty(),
        format!(
            "two compare runs from one manifest (unet 30 epochs): {} of {} files byte-identical{}",
            files.len() - differing.len(),
            files.len(),
            if differing.is_empty() { String::new() } else { format!(", differing: {differing:?}") }
        ),
    )
}

fn status_kb(field: &str) -> Option<u64> {
    let s = fs::read_to_string("/proc/self/status").ok()?;
    let line = s.lines().find(|l| l.starts_with(field))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn open_sockets() -> usize {
    fs::read_dir("/proc/self/fd")
        .map(|d| {
            d.filter_map(|e| fs::read_link(e.ok()?.path()).ok())
                .filter(|t| t.to_string_lossy().starts_with("socket:"))
                .count()
        })
        .unwrap_or(0)
}

fn a8_resources() -> Outcome {
    let peak = status_kb("VmHWM:").ok_or("VmHWM unavailable")?;
    let sockets = open_sockets();
    let mb = peak as f64 / 1024.0;
    verdict(
        mb <= 1024.0 && sockets == 0,
        format!("peak resident {mb:.0} MB over the whole suite, {sockets} open sockets"),
    )
}

fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let root = tempfile::tempdir().expect("scratch directory");
    let root = root.path();
    let criteria: Vec<(&str, &str, Box<dyn Fn() -> Outcome>)> = vec![
        ("A3", "gradient correctness", Box::new(a3_gradients)),
        ("A4", "SVM optimality", Box::new(a4_svm)),
        ("A5", "rasterization oracle", Box::new(a5_rasterize)),
        ("A6", "patch/stitch identity", Box::new(a6_patches)),
        ("A1", "separable-scene accuracy", Box::new(|| a1_separable(root))),
        ("A2", "texture-class gap", Box::new(|| a2_texture(root))),
        ("A7", "determinism", Box::new(|| a7_determinism(root))),
        ("A8", "resource envelope", Box::new(a8_resources)),
    ];
    let mut failed = 0;
    for (id, name, f) in &criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().cloned().unwrap_or_default())));
        let line = match outcome {
            Ok(d) => format!("{id} PASS {name}: {d} [{:.1}s]", t.elapsed().as_secs_f64()),
            Err(d) => {
                failed += 1;
                format!("{id} FAIL {name}: {d} [{:.1}s]", t.elapsed().as_secs_f64())
            }
        };
        println!("{line}");
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
