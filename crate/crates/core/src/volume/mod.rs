//! Volumetric data model, NIfTI-1 I/O and geometry-aware preprocessing.

use std::path::PathBuf;

use thiserror::Error;

mod grid;
mod labels;
pub mod nifti;
mod ops;

pub use grid::{Geometry, Orientation, ValueKind, VoxelGrid};
pub use labels::{LabelMask, Structure, NUM_CLASSES};
pub use nifti::{load_label_mask, load_nifti, save_nifti};
pub use ops::{
    canonicalize_orientation, normalize_hu, normalize_hu_value, reorient, resample, resample_to_geometry,
    Interpolation, OutsidePolicy, Resampled, HU_WINDOW_HIGH, HU_WINDOW_LOW,
};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dimensionality: {0}")]
    UnsupportedDimensionality(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("oblique volume unsupported: direction matrix is not a signed axis permutation")]
    Oblique,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid orientation: {0}")]
    InvalidOrientation(String),
    #[error("invalid label value {value} at voxel {index}")]
    InvalidLabel { index: usize, value: f64 },
    #[error("target spacing {0:?} must be strictly positive")]
    InvalidSpacing([f64; 3]),
    #[error("value kind mismatch: {0}")]
    KindMismatch(String),
}
