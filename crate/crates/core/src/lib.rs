//! Region-guided adversarial segmentation of hippocampal subregions.
//!
//! The crate is organized around a small reverse-mode autodiff engine
//! ([`tensor`]) on which the U-Net generator and realism-map discriminator
//! ([`models`]) are built, the hybrid training objectives ([`losses`]), the
//! adversarial training loop ([`trainer`]), connected-component
//! post-processing ([`postprocess`]), surface-distance evaluation metrics
//! ([`metrics`]) and Grad-CAM visualization ([`explain`]). The [`data`]
//! module covers dataset ingestion (PPM/PGM + manifest), preprocessing,
//! augmentation and a deterministic synthetic dataset generator used by the
//! verification suites.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod postprocess;
pub mod rng;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
