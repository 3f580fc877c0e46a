use std::io;
use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("face {face} references vertex {index}, but the mesh has {len} vertices")]
    FaceIndexOutOfRange { face: usize, index: u32, len: usize },

    #[error("mesh failed validation: {0}")]
    InvalidMesh(String),

    #[error("kernel domain error: {0}")]
    KernelDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("query point lies in the boundary band (|xi| = {distance:.3e} < {band:.3e})")]
    BoundaryBand { distance: f64, band: f64 },

    #[error("parse error in {source_name} at line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("field file: {0}")]
    FieldFormat(String),

    #[error("field was built from a different mesh (hash mismatch)")]
    MeshHashMismatch,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("I/O error on {path}: {source}")]
    PathIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(
        source_name: impl Into<String>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn path_io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::PathIo {
            path: path.into(),
            source,
        }
    }

    /// True for errors that originate in geometric validation rather than IO or parsing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::EmptyMesh
                | Error::FaceIndexOutOfRange { .. }
                | Error::InvalidMesh(_)
                | Error::MeshHashMismatch
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
