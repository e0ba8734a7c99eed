use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: u64, message: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("split file line {line}: {message}")]
    SplitFile { line: u64, message: String },

    #[error("unusable split: {0}")]
    UnusableSplit(String),

    #[error("unknown image id `{0}`")]
    UnknownImage(String),

    #[error("image is {width}x{height} px, need at least {min} px per side")]
    ImageTooSmall { width: u32, height: u32, min: u32 },

    #[error("bounding box {bbox:?} does not fit inside a {width}x{height} image")]
    BBoxOutside {
        bbox: (u32, u32, u32, u32),
        width: u32,
        height: u32,
    },

    #[error("decoding {}: {source}", path.display())]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{0} correspondences, a projective fit needs at least 4")]
    InsufficientCorrespondences(usize),

    #[error("degenerate point configuration (collinear or coincident points)")]
    DegenerateConfiguration,

    #[error("feature cache: {0}")]
    Cache(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Whether the error stems from invalid input or configuration rather
    /// than from a failure while processing valid input.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::Manifest { .. }
            | Error::SplitFile { .. }
            | Error::UnusableSplit(_)
            | Error::UnknownImage(_)
            | Error::BBoxOutside { .. }
            | Error::Config(_) => true,
            _ => false,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
