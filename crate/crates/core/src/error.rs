use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("direction ({azimuth_deg}, {elevation_deg}) is not visible to this camera")]
    NotVisible { azimuth_deg: f64, elevation_deg: f64 },

    #[error("pixel ({u}, {v}) lies outside the {width}x{height} pixel plane")]
    PixelOutOfPlane {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },

    #[error("camera fields of view overlap: camera {first} and camera {second}")]
    OverlappingCameras { first: usize, second: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("azimuth {azimuth_deg} outside the direction-finding range [0, {range_deg}]")]
    AzimuthOutOfRange { azimuth_deg: f64, range_deg: f64 },

    #[error("cannot fuse an empty list of angular distributions")]
    EmptyFusion,

    #[error("bad magic bytes in {0}")]
    BadMagic(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("config hash mismatch: file {file:016x}, expected {expected:016x}")]
    ConfigHashMismatch { file: u64, expected: u64 },

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("non-finite value in {stage} at step {step}")]
    NonFinite { stage: &'static str, step: usize },

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::OverlappingCameras { .. } | Error::ConfigHashMismatch { .. } => 2,
            Error::NonFinite { .. } | Error::GradCheck(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
