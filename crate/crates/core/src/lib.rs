//! A small multimodal transformer used to study two inference-time
//! reductions: layerwise visual token compression in the vision encoder and
//! cross-modality attention inhibition in the language decoder.
//!
//! Everything runs in `f64` on dense row-major matrices with a fixed
//! summation order, so a run is a pure function of its config and seed.

pub mod attention;
pub mod cli;
pub mod cmai;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod vmtc;

pub use error::{Error, Result};
pub use linalg::{Matrix, MaskMatrix, Rng, NEG_INF};
