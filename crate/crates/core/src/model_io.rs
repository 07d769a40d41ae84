//! Versioned model files.
//!
//! Every trained model is stored as one JSON document
//! `{"format": "smallgeo-model", "version": 1, "kind": ..., "model": ...}`.
//! Floats are written in shortest round-trip form, so a reloaded model
//! predicts bit-identically.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::classify::predict_raster;
use crate::error::{Error, Result};
use crate::forest::ForestModel;
use crate::raster::{write_bytes, LabelRaster, RasterStack};
use crate::svm::SvmModel;
use crate::unet::{predict_scene, UNetModel};

pub const FORMAT: &str = "smallgeo-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(ForestModel),
    Svm(SvmModel),
    UNet(UNetModel),
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    format: &'a str,
    version: u32,
    kind: &'a str,
    model: &'a T,
}

impl Model {
    /// `"rf"`, `"svm"` or `"unet"`.
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Forest(_) => "rf",
            Model::Svm(_) => "svm",
            Model::UNet(_) => "unet",
        }
    }

    pub fn class_ids(&self) -> Vec<u8> {
        match self {
            Model::Forest(m) => m.classes().to_vec(),
            Model::Svm(m) => m.classes().to_vec(),
            Model::UNet(m) => m.class_ids.clone(),
        }
    }

    /// Classifies every pixel of `raster`; nodata pixels come out as 0.
    pub fn predict(&self, raster: &RasterStack) -> Result<LabelRaster> {
        match self {
            Model::Forest(m) => predict_raster(m, raster),
            Model::Svm(m) => predict_raster(m, raster),
            Model::UNet(m) => predict_scene(m, raster),
        }
    }

    pub fn to_json(&self) -> String {
        fn wrap<T: Serialize>(kind: &str, model: &T) -> String {
            serde_json::to_string(&Envelope {
                format: FORMAT,
                version: VERSION,
                kind,
                model,
            })
            .expect("model serializes")
        }
        match self {
            Model::Forest(m) => wrap(self.kind(), m),
            Model::Svm(m) => wrap(self.kind(), m),
            Model::UNet(m) => wrap(self.kind(), m),
        }
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let bad = |m: String| Error::ModelFile(m);
        let mut v: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if v.get("format").and_then(Value::as_str) != Some(FORMAT) {
            return Err(bad(format!("not a {FORMAT} file")));
        }
        match v.get("version").and_then(Value::as_u64) {
            Some(n) if n == VERSION as u64 => {}
            other => return Err(bad(format!("unsupported version {other:?}, expected {VERSION}"))),
        }
        let kind = v.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();
        let body = v.get_mut("model").map(Value::take).ok_or_else(|| bad("missing model".into()))?;
        let err = |e: serde_json::Error| bad(format!("{kind} model: {e}"));
        let model = match kind.as_str() {
            "rf" => Model::Forest(serde_json::from_value(body).map_err(err)?),
            "svm" => Model::Svm(serde_json::from_value(body).map_err(err)?),
            "unet" => Model::UNet(serde_json::from_value(body).map_err(err)?),
            other => return Err(bad(format!("unknown model kind {other:?}"))),
        };
        match &model {
            Model::Forest(m) => m.validate(),
            Model::Svm(m) => m.validate(),
            Model::UNet(m) => m.validate(),
        }
        .map_err(|e| bad(e.to_string()))?;
        Ok(model)
    }
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    write_bytes(path, model.to_json().as_bytes())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Model::from_json(&text)
}
