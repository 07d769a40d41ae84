//! Multiband rasters, class-id rasters and their on-disk forms.
//!
//! The interchange format is a flat band-sequential payload (`<stem>.bsq`)
//! described by a plain-text header (`<stem>.hdr`) holding one
//! `key = value` pair per line:
//!
//! ```text
//! ncols = 256
//! nrows = 256
//! nbands = 8
//! dtype = float32
//! interleave = bsq
//! byteorder = little
//! geotransform = 0, 3, 0, 768, 0, -3
//! nodata = -9999
//! band_names = coastal_blue, blue, green_i, green, yellow, red, red_edge, nir
//! ```
//!
//! `dtype` is `float32` for reflectance stacks and `uint8` for class maps.
//! Payload values are little-endian; band `b` occupies bytes
//! `[b * W * H * size, (b + 1) * W * H * size)` in row-major order.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine pixel-to-world map for north-up rasters:
/// `(origin_x, pixel_width, 0, origin_y, 0, -pixel_height)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform(pub [f64; 6]);

impl GeoTransform {
    pub fn new(origin_x: f64, pixel_width: f64, origin_y: f64, pixel_height: f64) -> Self {
        GeoTransform([origin_x, pixel_width, 0.0, origin_y, 0.0, -pixel_height])
    }

    /// Unit pixels with the origin at the top-left corner, y growing downwards
    /// in pixel space and upwards in world space.
    pub fn unit() -> Self {
        GeoTransform::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn origin_x(&self) -> f64 {
        self.0[0]
    }
    pub fn origin_y(&self) -> f64 {
        self.0[3]
    }
    pub fn pixel_width(&self) -> f64 {
        self.0[1]
    }
    pub fn pixel_height(&self) -> f64 {
        -self.0[5]
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.0;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("geotransform has non-finite terms".into()));
        }
        if g[2] != 0.0 || g[4] != 0.0 {
            return Err(Error::Validation(
                "rotated or skewed geotransforms are not supported".into(),
            ));
        }
        if !(g[1] > 0.0 && -g[5] > 0.0) {
            return Err(Error::Validation(
                "pixel width and height must be positive".into(),
            ));
        }
        Ok(())
    }

    /// World coordinates of a point given in (fractional) pixel space.
    pub fn pixel_to_world(&self, px: f64, py: f64) -> (f64, f64) {
        (self.0[0] + px * self.0[1], self.0[3] + py * self.0[5])
    }

    /// World coordinates of the center of pixel `(col, row)`.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        self.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Transform of a window whose top-left pixel is `(x0, y0)` here.
    pub fn shifted(&self, x0: usize, y0: usize) -> Self {
        let mut g = self.0;
        g[0] += x0 as f64 * self.0[1];
        g[3] += y0 as f64 * self.0[5];
        GeoTransform(g)
    }
}

impl Default for GeoTransform {
    fn default() -> Self {
        GeoTransform::unit()
    }
}

/// A `width x height x n_bands` reflectance image, band-sequential.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RasterStack {
    width: usize,
    height: usize,
    n_bands: usize,
    values: Vec<f32>,
    geotransform: GeoTransform,
    nodata: Option<f32>,
    band_names: Option<Vec<String>>,
}

impl RasterStack {
    pub fn new(
        width: usize,
        height: usize,
        n_bands: usize,
        values: Vec<f32>,
        geotransform: GeoTransform,
        nodata: Option<f32>,
    ) -> Result<Self> {
        let r = RasterStack {
            width,
            height,
            n_bands,
            values,
            geotransform,
            nodata,
            band_names: None,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self> {
        self.band_names = Some(names);
        self.validate()?;
        Ok(self)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let expected = self.width * self.height * self.n_bands;
        if self.values.len() != expected {
            return Err(Error::Validation(format!(
                "raster holds {} values, {}x{}x{} requires {}",
                self.values.len(),
                self.width,
                self.height,
                self.n_bands,
                expected
            )));
        }
        if self.n_bands == 0 {
            return Err(Error::Validation("raster has no bands".into()));
        }
        self.geotransform.validate()?;
        let nan_nodata = self.nodata.is_some_and(f32::is_nan);
        if !nan_nodata && self.values.iter().any(|v| v.is_nan()) {
            return Err(Error::Validation(
                "raster contains NaN values and NaN is not the nodata sentinel".into(),
            ));
        }
        if let Some(names) = &self.band_names {
            if names.len() != self.n_bands {
                return Err(Error::Validation(format!(
                    "{} band names for {} bands",
                    names.len(),
                    self.n_bands
                )));
            }
            if names.iter().any(|n| n.contains(',') || n.contains('\n')) {
                return Err(Error::Validation(
                    "band names may not contain commas or newlines".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn n_bands(&self) -> usize {
        self.n_bands
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }
    pub fn geotransform(&self) -> GeoTransform {
        self.geotransform
    }
    pub fn nodata(&self) -> Option<f32> {
        self.nodata
    }
    pub fn band_names(&self) -> Option<&[String]> {
        self.band_names.as_deref()
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.n_pixels();
        &self.values[b * n..(b + 1) * n]
    }

    pub fn value(&self, band: usize, x: usize, y: usize) -> f32 {
        self.values[band * self.n_pixels() + y * self.width + x]
    }

    /// Copies the band vector of pixel `idx = y * width + x` into `out`.
    pub fn pixel_into(&self, idx: usize, out: &mut [f32]) {
        let n = self.n_pixels();
        for (b, o) in out.iter_mut().enumerate().take(self.n_bands) {
            *o = self.values[b * n + idx];
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.n_bands];
        self.pixel_into(y * self.width + x, &mut v);
        v
    }

    pub fn is_nodata_value(&self, v: f32) -> bool {
        match self.nodata {
            Some(nd) if nd.is_nan() => v.is_nan(),
            Some(nd) => v == nd,
            None => false,
        }
    }

    /// A pixel is nodata when any of its bands carries the sentinel.
    pub fn pixel_is_nodata(&self, idx: usize) -> bool {
        if self.nodata.is_none() {
            return false;
        }
        let n = self.n_pixels();
        (0..self.n_bands).any(|b| self.is_nodata_value(self.values[b * n + idx]))
    }

    /// Extracts the window `(x0, y0, w, h)`. Nodata values are carried over unchanged.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<RasterStack> {
        check_window(x0, y0, w, h, self.width, self.height)?;
        let n = self.n_pixels();
        let mut values = Vec::with_capacity(w * h * self.n_bands);
        for b in 0..self.n_bands {
            let band = &self.values[b * n..(b + 1) * n];
            for y in y0..y0 + h {
                values.extend_from_slice(&band[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        Ok(RasterStack {
            width: w,
            height: h,
            n_bands: self.n_bands,
            values,
            geotransform: self.geotransform.shifted(x0, y0),
            nodata: self.nodata,
            band_names: self.band_names.clone(),
        })
    }
}

/// Bitwise equality: NaN sentinels compare equal to themselves.
impl PartialEq for RasterStack {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.n_bands == other.n_bands
            && self.geotransform == other.geotransform
            && self.nodata.map(f32::to_bits) == other.nodata.map(f32::to_bits)
            && self.band_names == other.band_names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_window(x0: usize, y0: usize, w: usize, h: usize, width: usize, height: usize) -> Result<()> {
    if w == 0 || h == 0 || x0 + w > width || y0 + h > height {
        return Err(Error::OutOfBounds {
            x0,
            y0,
            w,
            h,
            width,
            height,
        });
    }
    Ok(())
}

/// Per-pixel class ids; 0 means unlabeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRaster {
    width: usize,
    height: usize,
    labels: Vec<u8>,
    geotransform: GeoTransform,
}

impl LabelRaster {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, geotransform: GeoTransform) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Validation(format!(
                "label raster holds {} ids, {}x{} requires {}",
                labels.len(),
                width,
                height,
                width * height
            )));
        }
        geotransform.validate()?;
        Ok(LabelRaster {
            width,
            height,
            labels,
            geotransform,
        })
    }

    pub fn zeros(width: usize, height: usize, geotransform: GeoTransform) -> Self {
        LabelRaster {
            width,
            height,
            labels: vec![0; width * height],
            geotransform,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }
    pub fn geotransform(&self) -> GeoTransform {
        self.geotransform
    }
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Sorted distinct nonzero ids.
    pub fn class_ids(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..=255u8).filter(|&i| seen[i as usize]).collect()
    }

    pub fn matches_dims(&self, raster: &RasterStack) -> bool {
        self.width == raster.width() && self.height == raster.height()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<LabelRaster> {
        check_window(x0, y0, w, h, self.width, self.height)?;
        let mut labels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            labels.extend_from_slice(&self.labels[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(LabelRaster {
            width: w,
            height: h,
            labels,
            geotransform: self.geotransform.shifted(x0, y0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u8,
    pub name: String,
    pub color: [u8; 3],
}

/// The categorical land-cover schema: unique nonzero ids, unique names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSchema {
    entries: Vec<ClassEntry>,
}

impl ClassSchema {
    pub fn new(mut entries: Vec<ClassEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        for (i, e) in entries.iter().enumerate() {
            if e.id == 0 {
                return Err(Error::Validation("class id 0 is reserved for unlabeled".into()));
            }
            if i > 0 && entries[i - 1].id == e.id {
                return Err(Error::Validation(format!("duplicate class id {}", e.id)));
            }
            if entries[..i].iter().any(|p| p.name == e.name) {
                return Err(Error::Validation(format!("duplicate class name {:?}", e.name)));
            }
        }
        Ok(ClassSchema { entries })
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn ids(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn get(&self, id: u8) -> Option<&ClassEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn contains(&self, id: u8) -> bool {
        self.get(id).is_some()
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.get(id).map(|e| e.name.as_str())
    }

    /// Nonzero ids in `labels` that the schema does not define.
    pub fn missing_ids(&self, labels: &LabelRaster) -> Vec<u8> {
        labels
            .class_ids()
            .into_iter()
            .filter(|&id| !self.contains(id))
            .collect()
    }

    /// Reads `class_id,name,r,g,b` rows (with a header line).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for row in rdr.deserialize::<(u8, String, u8, u8, u8)>() {
            let (id, name, r, g, b) =
                row.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
            entries.push(ClassEntry {
                id,
                name,
                color: [r, g, b],
            });
        }
        ClassSchema::new(entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, |w| {
            w.write_record(["class_id", "name", "r", "g", "b"])?;
            for e in &self.entries {
                w.serialize((e.id, &e.name, e.color[0], e.color[1], e.color[2]))?;
            }
            Ok(())
        })
    }
}

/// Header and payload paths for a band-stack. Accepts the stem, the
/// `.hdr` path or the `.bsq` path.
pub fn stack_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") | Some("bsq") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut hdr = stem.clone().into_os_string();
    hdr.push(".hdr");
    let mut bsq = stem.into_os_string();
    bsq.push(".bsq");
    (PathBuf::from(hdr), PathBuf::from(bsq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    Float32,
    Uint8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Uint8 => 1,
        }
    }
    fn name(self) -> &'static str {
        match self {
            Dtype::Float32 => "float32",
            Dtype::Uint8 => "uint8",
        }
    }
}

struct Header {
    ncols: usize,
    nrows: usize,
    nbands: usize,
    dtype: Dtype,
    geotransform: GeoTransform,
    nodata: Option<f32>,
    band_names: Option<Vec<String>>,
}

fn render_header(h: &Header) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ncols = {}", h.ncols);
    let _ = writeln!(s, "nrows = {}", h.nrows);
    let _ = writeln!(s, "nbands = {}", h.nbands);
    let _ = writeln!(s, "dtype = {}", h.dtype.name());
    let _ = writeln!(s, "interleave = bsq");
    let _ = writeln!(s, "byteorder = little");
    let gt: Vec<String> = h.geotransform.0.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(s, "geotransform = {}", gt.join(", "));
    if let Some(nd) = h.nodata {
        let _ = writeln!(s, "nodata = {nd}");
    }
    if let Some(names) = &h.band_names {
        let _ = writeln!(s, "band_names = {}", names.join(", "));
    }
    s
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let bad = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let mut ncols = None;
    let mut nrows = None;
    let mut nbands = None;
    let mut dtype = None;
    let mut geotransform = None;
    let mut nodata = None;
    let mut band_names = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line without '=': {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| bad(format!("{key} is not a non-negative integer: {v:?}")))
        };
        match key {
            "ncols" => ncols = Some(int(value)?),
            "nrows" => nrows = Some(int(value)?),
            "nbands" => nbands = Some(int(value)?),
            "dtype" => {
                dtype = Some(match value {
                    "float32" => Dtype::Float32,
                    "uint8" => Dtype::Uint8,
                    other => {
                        return Err(Error::UnsupportedFormat(format!(
                            "{}: dtype {other:?}",
                            path.display()
                        )))
                    }
                })
            }
            "interleave" if value != "bsq" => {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: interleave {value:?}",
                    path.display()
                )))
            }
            "byteorder" if value != "little" => {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: byteorder {value:?}",
                    path.display()
                )))
            }
            "geotransform" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad(format!("unparseable geotransform {value:?}")))?;
                let arr: [f64; 6] = parts
                    .try_into()
                    .map_err(|_| bad("geotransform needs 6 numbers".into()))?;
                geotransform = Some(GeoTransform(arr));
            }
            "nodata" => {
                nodata = Some(
                    value
                        .parse::<f32>()
                        .map_err(|_| bad(format!("unparseable nodata {value:?}")))?,
                )
            }
            "band_names" => {
                band_names = Some(value.split(',').map(|s| s.trim().to_string()).collect())
            }
            _ => {}
        }
    }
    let missing = |k: &str| bad(format!("missing required key {k}"));
    Ok(Header {
        ncols: ncols.ok_or_else(|| missing("ncols"))?,
        nrows: nrows.ok_or_else(|| missing("nrows"))?,
        nbands: nbands.ok_or_else(|| missing("nbands"))?,
        dtype: dtype.ok_or_else(|| missing("dtype"))?,
        geotransform: geotransform.ok_or_else(|| missing("geotransform"))?,
        nodata,
        band_names,
    })
}

fn read_payload(path: &Path) -> Result<(Header, Vec<u8>)> {
    let (hdr_path, bsq_path) = stack_paths(path);
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let header = parse_header(&hdr_path, &text)?;
    let bytes = fs::read(&bsq_path).map_err(|e| Error::io(&bsq_path, e))?;
    let expected = (header.ncols * header.nrows * header.nbands * header.dtype.size()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::CorruptFile {
            path: bsq_path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok((header, bytes))
}

/// Reads a band-stack. `uint8` payloads are widened to `f32`.
pub fn read_bandstack(path: &Path) -> Result<RasterStack> {
    let (h, bytes) = read_payload(path)?;
    let values: Vec<f32> = match h.dtype {
        Dtype::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::Uint8 => bytes.iter().map(|&b| b as f32).collect(),
    };
    let mut r = RasterStack::new(h.ncols, h.nrows, h.nbands, values, h.geotransform, h.nodata)?;
    if let Some(names) = h.band_names {
        r = r.with_band_names(names)?;
    }
    Ok(r)
}

fn write_files(path: &Path, header: &Header, payload: &[u8]) -> Result<()> {
    let (hdr_path, bsq_path) = stack_paths(path);
    if let Some(dir) = hdr_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&bsq_path, payload).map_err(|e| Error::io(&bsq_path, e))?;
    fs::write(&hdr_path, render_header(header)).map_err(|e| Error::io(&hdr_path, e))
}

/// Writes `<stem>.hdr` and `<stem>.bsq`. The raster is validated before any
/// byte is written.
pub fn write_bandstack(raster: &RasterStack, path: &Path) -> Result<()> {
    raster.validate()?;
    let mut payload = Vec::with_capacity(raster.values.len() * 4);
    for v in &raster.values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let header = Header {
        ncols: raster.width,
        nrows: raster.height,
        nbands: raster.n_bands,
        dtype: Dtype::Float32,
        geotransform: raster.geotransform,
        nodata: raster.nodata,
        band_names: raster.band_names.clone(),
    };
    write_files(path, &header, &payload)
}

/// Reads a single-band `uint8` band-stack as class ids.
pub fn read_label_raster(path: &Path) -> Result<LabelRaster> {
    let (h, bytes) = read_payload(path)?;
    if h.dtype != Dtype::Uint8 || h.nbands != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: class maps are single-band uint8, found {} band(s) of {}",
            path.display(),
            h.nbands,
            h.dtype.name()
        )));
    }
    LabelRaster::new(h.ncols, h.nrows, bytes, h.geotransform)
}

/// Writes the ids as a single-band `uint8` band-stack only.
pub fn write_label_raster(labels: &LabelRaster, path: &Path) -> Result<()> {
    let header = Header {
        ncols: labels.width,
        nrows: labels.height,
        nbands: 1,
        dtype: Dtype::Uint8,
        geotransform: labels.geotransform,
        nodata: None,
        band_names: Some(vec!["class_id".into()]),
    };
    write_files(path, &header, &labels.labels)
}

/// The PNG path written next to a class map band-stack.
pub fn class_map_png_path(path: &Path) -> PathBuf {
    let (hdr, _) = stack_paths(path);
    hdr.with_extension("png")
}

/// Writes the id band-stack plus an RGB PNG in which each pixel takes its
/// class color and unlabeled pixels are black.
pub fn write_class_map(labels: &LabelRaster, schema: &ClassSchema, path: &Path) -> Result<()> {
    let missing = schema.missing_ids(labels);
    if !missing.is_empty() {
        return Err(Error::SchemaMismatch(missing));
    }
    let mut lut = [[0u8; 3]; 256];
    for e in schema.entries() {
        lut[e.id as usize] = e.color;
    }
    let rgb: Vec<u8> = labels.labels.iter().flat_map(|&l| lut[l as usize]).collect();

    write_label_raster(labels, path)?;
    let png_path = class_map_png_path(path);
    let mut png_bytes = Vec::new();
    let mut enc = png::Encoder::new(&mut png_bytes, labels.width as u32, labels.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::UnsupportedFormat(format!("{}: {e}", png_path.display()));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&rgb).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    write_bytes(&png_path, &png_bytes)
}

/// Decodes an 8-bit RGB PNG into `(width, height, rgb bytes)`.
pub fn read_png_rgb(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let dec_err = |e: png::DecodingError| Error::UnsupportedFormat(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(dec_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(dec_err)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected 8-bit RGB",
            path.display()
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

/// Flushes `bytes` to `path`, creating parent directories.
/// Builds a CSV in memory and writes it with [`write_bytes`].
pub(crate) fn write_csv(
    path: &Path,
    f: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
) -> Result<()> {
    let err = |m: String| Error::io(path, std::io::Error::other(m));
    let mut w = csv::Writer::from_writer(Vec::new());
    f(&mut w).map_err(|e| err(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| err(e.to_string()))?;
    write_bytes(path, &bytes)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
