use std::path::PathBuf;

/// Errors produced across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file {path}: expected {expected} payload bytes, found {actual}")]
    CorruptFile {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed header {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("label ids missing from class schema: {0:?}")]
    SchemaMismatch(Vec<u8>),

    #[error("window ({x0},{y0}) {w}x{h} exceeds raster bounds {width}x{height}")]
    OutOfBounds {
        x0: usize,
        y0: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("class {0} has no nodata-free labeled pixels")]
    EmptyClass(u8),

    #[error("class {0} has a single polygon and cannot be split")]
    UnsplittableClass(u8),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no supervised pixels in batch")]
    NoSupervision,

    #[error("forward cache protocol error: {0}")]
    Protocol(String),

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("scene layout error: {0}")]
    Layout(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("geojson: {0}")]
    GeoJson(String),

    #[error("config: {0}")]
    Config(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The pipeline stage, when this error was raised inside one.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
