//! Run configuration, read from TOML.
//!
//! ```toml
//! [input]
//! raster = "scene.hdr"
//! polygons = "polygons.geojson"
//! schema = "classes.csv"
//!
//! [run]
//! pathway = "rf"      # rf | svm | unet
//! out = "out"
//!
//! [split]
//! test_fraction = 0.25
//! seed = 42
//!
//! [samples]
//! n_per_class = 500
//! seed = 42
//!
//! [rf]
//! n_trees = 100
//! mtry = 10
//!
//! [svm]
//! c = 1.0
//! eps = 0.01
//!
//! [unet]
//! patch_size = 16
//! depth = 5
//! epochs = 1000
//! ```
//!
//! Every key is optional. Relative paths are resolved against the directory
//! holding the config file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::svm::SvmConfig;
use crate::synth::SceneSpec;
use crate::unet::UNetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Rf,
    Svm,
    Unet,
}

impl Pathway {
    /// Report column order.
    pub const ALL: [Pathway; 3] = [Pathway::Rf, Pathway::Svm, Pathway::Unet];

    pub fn name(self) -> &'static str {
        match self {
            Pathway::Rf => "rf",
            Pathway::Svm => "svm",
            Pathway::Unet => "unet",
        }
    }
}

impl fmt::Display for Pathway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pathway {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(Pathway::Rf),
            "svm" => Ok(Pathway::Svm),
            "unet" => Ok(Pathway::Unet),
            other => Err(Error::Config(format!("unknown pathway {other:?}, expected rf, svm or unet"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    /// Band-stack header (`.hdr`); the payload sits next to it.
    pub raster: Option<PathBuf>,
    /// GeoJSON FeatureCollection of labeled polygons.
    pub polygons: Option<PathBuf>,
    /// `class_id,name,r,g,b` CSV.
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub pathway: Pathway,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            pathway: Pathway::Rf,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            test_fraction: 0.25,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplesSection {
    pub n_per_class: usize,
    pub seed: u64,
}

impl Default for SamplesSection {
    fn default() -> Self {
        SamplesSection {
            n_per_class: 500,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfSection {
    pub n_trees: usize,
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for RfSection {
    fn default() -> Self {
        let d = ForestConfig::default();
        RfSection {
            n_trees: d.n_trees,
            mtry: d.mtry,
            min_leaf: d.min_leaf,
            max_depth: d.max_depth,
            seed: d.seed,
        }
    }
}

impl RfSection {
    pub fn to_config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            mtry: self.mtry,
            min_leaf: self.min_leaf,
            max_depth: self.max_depth,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub c: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SvmSection {
    fn default() -> Self {
        let d = SvmConfig::default();
        SvmSection {
            c: d.c,
            eps: d.eps,
            max_iter: d.max_iter,
            seed: d.seed,
        }
    }
}

impl SvmSection {
    pub fn to_config(&self) -> SvmConfig {
        SvmConfig {
            c: self.c,
            eps: self.eps,
            max_iter: self.max_iter,
            seed: self.seed,
        }
    }
}

/// U-Net settings; band and class counts come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetSection {
    pub patch_size: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for UnetSection {
    fn default() -> Self {
        let d = UNetConfig::default();
        UnetSection {
            patch_size: d.patch_size,
            depth: d.depth,
            base_channels: d.base_channels,
            dropout_rate: d.dropout_rate,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            epochs: d.epochs,
            batch_size: d.batch_size,
            seed: d.seed,
        }
    }
}

impl UnetSection {
    pub fn to_config(&self, in_channels: usize, n_classes: usize) -> UNetConfig {
        UNetConfig {
            patch_size: self.patch_size,
            in_channels,
            n_classes,
            depth: self.depth,
            base_channels: self.base_channels,
            dropout_rate: self.dropout_rate,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Six spectrally separable classes.
    Separable,
    /// The separable classes plus one checkerboard texture class.
    Texture,
}

/// Scene generation for the `synth` command. `scene` replaces the preset
/// entirely; the scalar keys override individual preset fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub preset: Preset,
    pub seed: u64,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub regions_per_class: Option<usize>,
    pub label_fraction: Option<f64>,
    pub checker_period: Option<usize>,
    pub scene: Option<SceneSpec>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            preset: Preset::Texture,
            seed: 42,
            width: None,
            height: None,
            regions_per_class: None,
            label_fraction: None,
            checker_period: None,
            scene: None,
        }
    }
}

impl SynthSection {
    pub fn spec(&self) -> SceneSpec {
        if let Some(s) = &self.scene {
            return s.clone();
        }
        let mut s = match self.preset {
            Preset::Separable => SceneSpec::separable(),
            Preset::Texture => SceneSpec::with_texture(),
        };
        if let Some(v) = self.width {
            s.width = v;
        }
        if let Some(v) = self.height {
            s.height = v;
        }
        if let Some(v) = self.regions_per_class {
            s.regions_per_class = v;
        }
        if let Some(v) = self.label_fraction {
            s.label_fraction = v;
        }
        if let Some(p) = self.checker_period {
            for t in &mut s.texture_classes {
                t.checker_period = p;
            }
        }
        s
    }
}

/// Explicit paths for single-stage commands. Unset entries default to the
/// file names the preceding stage writes into the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagesSection {
    pub samples: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub prediction: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputSection,
    pub run: RunSection,
    pub split: SplitSection,
    pub samples: SamplesSection,
    pub rf: RfSection,
    pub svm: SvmSection,
    pub unet: UnetSection,
    pub synth: SynthSection,
    pub stages: StagesSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.input.raster,
            &mut self.input.polygons,
            &mut self.input.schema,
            &mut self.stages.samples,
            &mut self.stages.train_labels,
            &mut self.stages.model,
            &mut self.stages.prediction,
            &mut self.stages.truth,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.run.out);
    }

    /// Sets every seed in the configuration to `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.samples.seed = seed;
        self.rf.seed = seed;
        self.svm.seed = seed;
        self.unet.seed = seed;
        self.synth.seed = seed;
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        [
            ("split", self.split.seed),
            ("samples", self.samples.seed),
            ("rf", self.rf.seed),
            ("svm", self.svm.seed),
            ("unet", self.unet.seed),
            ("synth", self.synth.seed),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn out_dir(&self) -> &Path {
        &self.run.out
    }

    /// Checks numeric settings that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.split.test_fraction) || self.split.test_fraction <= 0.0 {
            return Err(Error::Validation(format!(
                "split.test_fraction {} outside (0, 1)",
                self.split.test_fraction
            )));
        }
        if self.samples.n_per_class == 0 {
            return Err(Error::Validation("samples.n_per_class must be positive".into()));
        }
        if self.rf.n_trees == 0 || self.rf.mtry == 0 || self.rf.min_leaf == 0 {
            return Err(Error::Validation("rf.n_trees, rf.mtry and rf.min_leaf must be positive".into()));
        }
        if !(self.svm.c > 0.0 && self.svm.eps > 0.0) || self.svm.max_iter == 0 {
            return Err(Error::Validation("svm.c, svm.eps and svm.max_iter must be positive".into()));
        }
        self.unet.to_config(1, 1).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_has_reference_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!((c.rf.n_trees, c.rf.mtry), (100, 10));
        assert_eq!((c.svm.c, c.svm.eps), (1.0, 0.01));
        assert_eq!((c.unet.patch_size, c.unet.depth, c.unet.epochs), (16, 5, 1000));
        assert_eq!(c.run.pathway, Pathway::Rf);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = PipelineConfig::from_toml("[run]\npathway = \"unet\"\n[unet]\nepochs = 3\n").unwrap();
        assert_eq!(c.run.pathway, Pathway::Unet);
        assert_eq!(c.unet.epochs, 3);
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(matches!(PipelineConfig::from_toml("[rf]\ntrees = 3\n"), Err(Error::Config(_))));
    }

    #[test]
    fn resolve_and_seed() {
        let mut c = PipelineConfig::from_toml("[input]\nraster = \"a/r.hdr\"\n").unwrap();
        c.resolve(Path::new("/data"));
        assert_eq!(c.input.raster.as_deref(), Some(Path::new("/data/a/r.hdr")));
        assert_eq!(c.run.out, Path::new("/data/out"));
        c.set_seed(9);
        assert!(c.seeds().values().all(|&s| s == 9));
    }
}
