//! End-to-end runs and single-stage commands.
//!
//! Every command writes its outputs into the configured output directory
//! together with a manifest that records the resolved configuration, all
//! seeds, SHA-256 hashes of inputs and outputs, and per-stage timings. If a
//! command fails, the files it already wrote are removed and an
//! `INCOMPLETE` marker holding the error is left in their place.
//!
//! | command    | reads                                   | writes |
//! |------------|-----------------------------------------|--------|
//! | `synth`    | `[synth]`                               | `scene.hdr/.bsq`, `truth.hdr/.bsq`, `polygons.geojson`, `classes.csv`, `pipeline.toml` |
//! | `sample`   | `[input]`                               | `train_polygons.geojson`, `test_polygons.geojson`, `train_labels.hdr/.bsq`, `test_truth.hdr/.bsq`, `samples.csv`, `class_stats.csv` |
//! | `train`    | `samples.csv` or raster + `train_labels.hdr` | `model_<pathway>.json`, `loss_history.csv` (unet) |
//! | `predict`  | `model_<pathway>.json`, raster, schema  | `classmap.hdr/.bsq/.png` |
//! | `evaluate` | `classmap.hdr`, `test_truth.hdr`, schema | `report.json`, `report.txt` |
//! | `run`      | `[input]`                               | `classmap.*`, `report.*`, `model_<pathway>.json`, `class_stats.csv` |
//! | `compare`  | `[input]`                               | the `run` outputs for all three pathways, one shared report |

pub mod config;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{PipelineConfig, Pathway, Preset};
pub use manifest::{load_config, FileHash, Manifest, MANIFEST_NAME};

use crate::error::{Error, Result};
use crate::forest::train_forest;
use crate::labels::{
    class_band_stats, rasterize_with_owners, read_polygons, sample_pixels_with_owners, split_polygon_indices,
    write_polygons, ClassBandStats, LabeledPolygon, SampleSet,
};
use crate::metrics::{confusion_with_classes, report, ModelResult, Report};
use crate::model_io::{load_model, save_model, Model};
use crate::raster::{
    read_bandstack, read_label_raster, stack_paths, write_bandstack, write_bytes, write_class_map,
    write_label_raster, ClassSchema, LabelRaster, RasterStack,
};
use crate::svm::train_linear_svm;
use crate::synth::generate_scene;
use crate::unet::{extract_patches, train_unet, write_loss_history};

pub const INCOMPLETE: &str = "INCOMPLETE";

struct Run {
    out: PathBuf,
    manifest: Manifest,
    written: Vec<String>,
    manifest_name: String,
}

impl Run {
    fn new(command: &str, cfg: &PipelineConfig) -> Self {
        let manifest_name = match command {
            "run" | "compare" => MANIFEST_NAME.to_string(),
            other => format!("manifest_{other}.json"),
        };
        Run {
            out: cfg.out_dir().to_path_buf(),
            manifest: Manifest::new(command, cfg),
            written: Vec::new(),
            manifest_name,
        }
    }

    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        let t = Instant::now();
        let r = f(self).map_err(|e| e.in_stage(name));
        self.manifest
            .timings_ms
            .push((name.to_string(), t.elapsed().as_secs_f64() * 1e3));
        r
    }

    /// Output path for `name`, recorded as an artifact.
    fn output(&mut self, name: &str) -> PathBuf {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        self.out.join(name)
    }

    /// Registers a band stack (header and payload) as output.
    fn stack_output(&mut self, stem: &str) -> PathBuf {
        self.output(&format!("{stem}.bsq"));
        self.output(&format!("{stem}.hdr"))
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        if !self.manifest.inputs.iter().any(|h| h.path == path) {
            self.manifest.inputs.push(FileHash::of(path)?);
        }
        Ok(())
    }

    fn raster_input(&mut self, path: &Path) -> Result<RasterStack> {
        let (hdr, bsq) = stack_paths(path);
        self.input(&hdr)?;
        self.input(&bsq)?;
        read_bandstack(path)
    }

    fn label_input(&mut self, path: &Path) -> Result<LabelRaster> {
        let (hdr, bsq) = stack_paths(path);
        self.input(&hdr)?;
        self.input(&bsq)?;
        read_label_raster(path)
    }

    fn finish(mut self) -> Result<Manifest> {
        let mut artifacts = Vec::with_capacity(self.written.len());
        for name in &self.written {
            let mut h = FileHash::of(&self.out.join(name)).map_err(|e| e.in_stage("manifest"))?;
            h.path = PathBuf::from(name);
            artifacts.push(h);
        }
        self.manifest.artifacts = artifacts;
        let path = self.out.join(&self.manifest_name);
        write_bytes(&path, self.manifest.to_json().as_bytes()).map_err(|e| e.in_stage("manifest"))?;
        let marker = self.out.join(INCOMPLETE);
        if marker.exists() {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e).in_stage("manifest"))?;
        }
        Ok(self.manifest)
    }

    fn fail(&self, err: &Error) {
        for name in &self.written {
            let _ = fs::remove_file(self.out.join(name));
        }
        if self.out.is_dir() {
            let _ = fs::write(self.out.join(INCOMPLETE), format!("{} failed: {err}\n", self.manifest.command));
        }
    }
}

fn execute(command: &str, cfg: &PipelineConfig, body: impl FnOnce(&mut Run) -> Result<()>) -> Result<Manifest> {
    let mut run = Run::new(command, cfg);
    match body(&mut run) {
        Ok(()) => run.finish(),
        Err(e) => {
            run.fail(&e);
            Err(e)
        }
    }
}

fn require(label: &str, path: Option<&Path>) -> Result<PathBuf> {
    let p = path.ok_or_else(|| Error::Validation(format!("{label} is not set")))?;
    if !p.exists() {
        return Err(Error::Validation(format!("{label} {} does not exist", p.display())));
    }
    Ok(p.to_path_buf())
}

fn require_stack(label: &str, path: Option<&Path>) -> Result<PathBuf> {
    let p = require(label, path)?;
    let (_, bsq) = stack_paths(&p);
    require(&format!("{label} payload"), Some(&bsq))?;
    Ok(p)
}

struct Inputs {
    raster: PathBuf,
    polygons: PathBuf,
    schema: PathBuf,
}

fn validate_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    cfg.validate()?;
    Ok(Inputs {
        raster: require_stack("input.raster", cfg.input.raster.as_deref())?,
        polygons: require("input.polygons", cfg.input.polygons.as_deref())?,
        schema: require("input.schema", cfg.input.schema.as_deref())?,
    })
}

/// Shared state after splitting, rasterizing and sampling.
struct Prepared {
    raster: RasterStack,
    schema: ClassSchema,
    train_polygons: Vec<LabeledPolygon>,
    test_polygons: Vec<LabeledPolygon>,
    train_labels: LabelRaster,
    /// Test-polygon labels with nodata pixels cleared.
    test_truth: LabelRaster,
    samples: SampleSet,
    stats: ClassBandStats,
}

fn prepare(run: &mut Run, cfg: &PipelineConfig, inputs: &Inputs) -> Result<Prepared> {
    let (raster, polygons, schema) = run.stage("load", |r| {
        let raster = r.raster_input(&inputs.raster)?;
        r.input(&inputs.polygons)?;
        r.input(&inputs.schema)?;
        let polygons = read_polygons(&inputs.polygons)?;
        let schema = ClassSchema::read_csv(&inputs.schema)?;
        let mut missing: Vec<u8> = polygons
            .iter()
            .map(|p| p.class_id)
            .filter(|&id| !schema.contains(id))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if !missing.is_empty() {
            return Err(Error::SchemaMismatch(missing));
        }
        Ok((raster, polygons, schema))
    })?;
    let (train_idx, test_idx) = run.stage("split", |_| {
        split_polygon_indices(&polygons, cfg.split.test_fraction, cfg.split.seed)
    })?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| polygons[i].clone()).collect::<Vec<_>>();
    let (train_polygons, test_polygons) = (pick(&train_idx), pick(&test_idx));
    let (w, h, gt) = (raster.width(), raster.height(), raster.geotransform());
    let (train, test_truth) = run.stage("rasterize", |_| {
        let mut train = rasterize_with_owners(&train_polygons, w, h, gt)?;
        // owner ids refer to positions in the full polygon list
        for o in train.owners.iter_mut().filter(|o| **o != 0) {
            *o = train_idx[*o as usize - 1] as u32 + 1;
        }
        let mut test = rasterize_with_owners(&test_polygons, w, h, gt)?.labels;
        for (i, l) in test.labels_mut().iter_mut().enumerate() {
            if raster.pixel_is_nodata(i) {
                *l = 0;
            }
        }
        Ok((train, test))
    })?;
    let (samples, stats) = run.stage("sample", |_| {
        let s = sample_pixels_with_owners(
            &raster,
            &train.labels,
            Some(&train.owners),
            cfg.samples.n_per_class,
            cfg.samples.seed,
        )?;
        let stats = class_band_stats(&s)?;
        Ok((s, stats))
    })?;
    Ok(Prepared {
        raster,
        schema,
        train_polygons,
        test_polygons,
        train_labels: train.labels,
        test_truth,
        samples,
        stats,
    })
}

fn fit_pixel_model(pathway: Pathway, cfg: &PipelineConfig, samples: &SampleSet) -> Result<Model> {
    match pathway {
        Pathway::Rf => Ok(Model::Forest(train_forest(samples, &cfg.rf.to_config())?)),
        Pathway::Svm => {
            let m = train_linear_svm(samples, &cfg.svm.to_config())?;
            for w in m.warnings() {
                log::warn!("{w}");
            }
            Ok(Model::Svm(m))
        }
        Pathway::Unet => unreachable!("patch model"),
    }
}

fn fit_unet(cfg: &PipelineConfig, raster: &RasterStack, train_labels: &LabelRaster) -> Result<Model> {
    let all = extract_patches(raster, Some(train_labels), cfg.unet.patch_size)?;
    let keep: Vec<usize> = (0..all.len()).filter(|&i| all.is_supervised(i)).collect();
    let patches = all.select(&keep);
    let mut ids: Vec<u8> = patches
        .targets
        .iter()
        .zip(&patches.valid_mask)
        .filter(|(&t, &v)| v && t != 0)
        .map(|(&t, _)| t)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let ucfg = cfg.unet.to_config(raster.n_bands(), ids.len().max(1));
    log::info!("unet: {} supervised patches, {} classes, {} epochs", patches.len(), ids.len(), ucfg.epochs);
    Ok(Model::UNet(train_unet(&patches, &ucfg)?))
}

fn fit(pathway: Pathway, cfg: &PipelineConfig, prep: &Prepared) -> Result<Model> {
    match pathway {
        Pathway::Unet => fit_unet(cfg, &prep.raster, &prep.train_labels),
        p => fit_pixel_model(p, cfg, &prep.samples),
    }
}

fn write_model(run: &mut Run, model: &Model) -> Result<()> {
    let path = run.output(&format!("model_{}.json", model.kind()));
    save_model(model, &path)?;
    if let Model::UNet(m) = model {
        let path = run.output("loss_history.csv");
        write_loss_history(&m.loss_history, &path)?;
    }
    Ok(())
}

fn write_classmap(run: &mut Run, stem: &str, pred: &LabelRaster, schema: &ClassSchema) -> Result<()> {
    let hdr = run.stack_output(stem);
    run.output(&format!("{stem}.png"));
    write_class_map(pred, schema, &hdr)
}

/// Trains one pathway and evaluates it on the test polygons.
fn train_and_score(run: &mut Run, cfg: &PipelineConfig, prep: &Prepared, pathway: Pathway, stem: &str) -> Result<ModelResult> {
    let train_stage = match pathway {
        Pathway::Rf => "train_rf",
        Pathway::Svm => "train_svm",
        Pathway::Unet => "train_unet",
    };
    let model = run.stage(train_stage, |r| {
        let m = fit(pathway, cfg, prep)?;
        write_model(r, &m)?;
        Ok(m)
    })?;
    let predict_stage = match pathway {
        Pathway::Rf => "predict_rf",
        Pathway::Svm => "predict_svm",
        Pathway::Unet => "predict_unet",
    };
    let pred = run.stage(predict_stage, |r| {
        let pred = model.predict(&prep.raster)?;
        write_classmap(r, stem, &pred, &prep.schema)?;
        Ok(pred)
    })?;
    run.stage("evaluate", |_| {
        let cm = confusion_with_classes(&pred, &prep.test_truth, &prep.schema.ids())?;
        Ok(ModelResult::new(pathway.name(), cm))
    })
}

fn write_stats(run: &mut Run, prep: &Prepared) -> Result<()> {
    let path = run.output("class_stats.csv");
    prep.stats.write_csv(&prep.schema, &path)
}

fn write_report(run: &mut Run, results: Vec<ModelResult>, schema: &ClassSchema) -> Result<Report> {
    let json = run.output("report.json");
    run.output("report.txt");
    report(results, schema, &json)
}

/// Split, sample, train the configured pathway, classify the full raster
/// and score it on the held-out polygons.
pub fn run(cfg: &PipelineConfig) -> Result<Manifest> {
    let inputs = validate_inputs(cfg).map_err(|e| e.in_stage("validate"))?;
    execute("run", cfg, |run| {
        let prep = prepare(run, cfg, &inputs)?;
        run.stage("class_stats", |r| write_stats(r, &prep))?;
        let result = train_and_score(run, cfg, &prep, cfg.run.pathway, "classmap")?;
        run.stage("report", |r| write_report(r, vec![result], &prep.schema))?;
        Ok(())
    })
}

/// Runs all three pathways on one shared split and sample and writes a
/// single report with columns in the order rf, svm, unet.
pub fn compare(cfg: &PipelineConfig) -> Result<Manifest> {
    let inputs = validate_inputs(cfg).map_err(|e| e.in_stage("validate"))?;
    execute("compare", cfg, |run| {
        let prep = prepare(run, cfg, &inputs)?;
        run.stage("class_stats", |r| write_stats(r, &prep))?;
        let mut results = Vec::with_capacity(3);
        for p in Pathway::ALL {
            results.push(train_and_score(run, cfg, &prep, p, &format!("classmap_{p}"))?);
        }
        run.stage("report", |r| write_report(r, results, &prep.schema))?;
        Ok(())
    })
}

/// Writes a synthetic scene and a ready-to-run `pipeline.toml` beside it.
pub fn synth(cfg: &PipelineConfig) -> Result<Manifest> {
    let spec = cfg.synth.spec();
    spec.validate().map_err(|e| e.in_stage("validate"))?;
    execute("synth", cfg, |run| {
        let scene = run.stage("generate", |_| generate_scene(&spec, cfg.synth.seed))?;
        run.stage("write", |r| {
            write_bandstack(&scene.raster, &r.stack_output("scene"))?;
            write_label_raster(&scene.truth, &r.stack_output("truth"))?;
            write_polygons(&scene.polygons, &r.output("polygons.geojson"))?;
            scene.schema.write_csv(&r.output("classes.csv"))?;
            let mut next = cfg.clone();
            next.input.raster = Some("scene.hdr".into());
            next.input.polygons = Some("polygons.geojson".into());
            next.input.schema = Some("classes.csv".into());
            next.run.out = PathBuf::from(".");
            next.stages = Default::default();
            write_bytes(&r.output("pipeline.toml"), next.to_toml().as_bytes())
        })
    })
}

/// Split and sample only; writes the label rasters and samples that
/// `train` and `evaluate` pick up.
pub fn sample(cfg: &PipelineConfig) -> Result<Manifest> {
    let inputs = validate_inputs(cfg).map_err(|e| e.in_stage("validate"))?;
    execute("sample", cfg, |run| {
        let prep = prepare(run, cfg, &inputs)?;
        run.stage("write", |r| {
            write_polygons(&prep.train_polygons, &r.output("train_polygons.geojson"))?;
            write_polygons(&prep.test_polygons, &r.output("test_polygons.geojson"))?;
            write_label_raster(&prep.train_labels, &r.stack_output("train_labels"))?;
            write_label_raster(&prep.test_truth, &r.stack_output("test_truth"))?;
            prep.samples.write_csv(&r.output("samples.csv"))?;
            write_stats(r, &prep)
        })
    })
}

fn stage_path(explicit: &Option<PathBuf>, cfg: &PipelineConfig, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| cfg.out_dir().join(default))
}

/// Trains the configured pathway from the files `sample` wrote.
pub fn train(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate().map_err(|e| e.in_stage("validate"))?;
    let pathway = cfg.run.pathway;
    let (src, raster) = match pathway {
        Pathway::Unet => {
            let labels = stage_path(&cfg.stages.train_labels, cfg, "train_labels.hdr");
            let raster = require_stack("input.raster", cfg.input.raster.as_deref());
            (require_stack("stages.train_labels", Some(&labels)), raster.map(Some))
        }
        _ => {
            let samples = stage_path(&cfg.stages.samples, cfg, "samples.csv");
            (require("stages.samples", Some(&samples)), Ok(None))
        }
    };
    let (src, raster) = src.and_then(|s| Ok((s, raster?))).map_err(|e| e.in_stage("validate"))?;
    execute("train", cfg, |run| {
        let model = run.stage("train", |r| match raster {
            Some(raster_path) => {
                let raster = r.raster_input(&raster_path)?;
                let labels = r.label_input(&src)?;
                fit_unet(cfg, &raster, &labels)
            }
            None => {
                r.input(&src)?;
                fit_pixel_model(pathway, cfg, &SampleSet::read_csv(&src)?)
            }
        })?;
        run.stage("write", |r| write_model(r, &model))
    })
}

/// Classifies the input raster with a saved model.
pub fn predict(cfg: &PipelineConfig) -> Result<Manifest> {
    let model_path = stage_path(&cfg.stages.model, cfg, &format!("model_{}.json", cfg.run.pathway));
    let checked = (|| {
        Ok((
            require("stages.model", Some(&model_path))?,
            require_stack("input.raster", cfg.input.raster.as_deref())?,
            require("input.schema", cfg.input.schema.as_deref())?,
        ))
    })()
    .map_err(|e: Error| e.in_stage("validate"))?;
    let (model_path, raster_path, schema_path) = checked;
    execute("predict", cfg, |run| {
        let (model, raster, schema) = run.stage("load", |r| {
            r.input(&model_path)?;
            r.input(&schema_path)?;
            Ok((load_model(&model_path)?, r.raster_input(&raster_path)?, ClassSchema::read_csv(&schema_path)?))
        })?;
        let pred = run.stage("predict", |_| model.predict(&raster))?;
        run.stage("write", |r| write_classmap(r, "classmap", &pred, &schema))
    })
}

/// Scores a class map against a truth raster over the schema's classes.
pub fn evaluate(cfg: &PipelineConfig) -> Result<Manifest> {
    let pred_path = stage_path(&cfg.stages.prediction, cfg, "classmap.hdr");
    let truth_path = stage_path(&cfg.stages.truth, cfg, "test_truth.hdr");
    let checked = (|| {
        Ok((
            require_stack("stages.prediction", Some(&pred_path))?,
            require_stack("stages.truth", Some(&truth_path))?,
            require("input.schema", cfg.input.schema.as_deref())?,
        ))
    })()
    .map_err(|e: Error| e.in_stage("validate"))?;
    let (pred_path, truth_path, schema_path) = checked;
    execute("evaluate", cfg, |run| {
        let (pred, truth, schema) = run.stage("load", |r| {
            r.input(&schema_path)?;
            Ok((r.label_input(&pred_path)?, r.label_input(&truth_path)?, ClassSchema::read_csv(&schema_path)?))
        })?;
        let result = run.stage("evaluate", |_| {
            Ok(ModelResult::new(cfg.run.pathway.name(), confusion_with_classes(&pred, &truth, &schema.ids())?))
        })?;
        run.stage("report", |r| write_report(r, vec![result], &schema))?;
        Ok(())
    })
}

/// Dispatches a command by name.
pub fn run_command(command: &str, cfg: &PipelineConfig) -> Result<Manifest> {
    match command {
        "synth" => synth(cfg),
        "sample" => sample(cfg),
        "train" => train(cfg),
        "predict" => predict(cfg),
        "evaluate" => evaluate(cfg),
        "run" => run(cfg),
        "compare" => compare(cfg),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }
}
