//! Polarization-guided depth enhancement.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: tensors, layers with hand-written backward passes, gradient checking
//! - [`polar`]: polarizer forward model, DoFP decoding and guidance tensors
//! - [`ppfb`]: the prompt fusion block and its stage chain
//! - [`model`]: the depth enhancement network, loss, weight loading and training
//! - [`simulate`]: synthetic scenes, sensor degradations and datasets
//! - [`eval`]: depth and normal metrics, point-cloud export
//! - [`experiment`]: seeded benchmarks comparing ablation modes
//! - [`io`]: the `PFT1` tensor and `PWA1` weight archive formats

pub mod depth;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod model;
pub mod numerics;
pub mod polar;
pub mod ppfb;
pub mod simulate;

pub use depth::DepthMap;
pub use error::{Error, Result};
