//! Synthetic polarized video: Malus-law scene rendering, dataset
//! generation, and septuplet sampling with polarization-aware augmentation.
//!
//! Scenes follow the two capture scenarios of the target domain: a ring of
//! six polarizer sectors whose transmission axes rotate with the object
//! (AoLP changes frame to frame), and translating polarizer stripes whose
//! AoLP stays fixed while content moves. The unpolarized background and a
//! small unpolarized floor keep DoLP strictly below 1 and intensities
//! strictly positive.

mod dataset;
mod render;
mod sampling;

pub use dataset::{make_dataset, DatasetMode, GenConfig, Manifest, ManifestClip, Split};
pub use render::{render_frame, FrameBuf, SceneKind, SceneSpec};
pub use sampling::{Augment, Dataset, Septuplet, SeptupletRef};

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Polar(#[from] pvfi_polar::PolarError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
    #[error("clip {clip}: {msg}")]
    Clip { clip: String, msg: String },
}

pub(crate) fn cfg_err(msg: impl Into<String>) -> DataError {
    DataError::Config(msg.into())
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}
