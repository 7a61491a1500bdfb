//! Lateral chromatic aberration (LCA) recovery and correction.
//!
//! The red and blue planes of an image are registered onto the green plane by
//! a radial polynomial warp whose coefficients are found by bounded
//! quasi-Newton minimisation of the masked inter-plane absolute difference.
//! Recovered coefficients are stored in a lens database keyed by focal
//! length, aperture and focus distance, and applied to unseen images. A
//! luminance DFT spectrogram reports how the correction changed spatial
//! frequency content.
//!
//! Data-parallel inner loops (warping, differencing, DFT rows, error-surface
//! sweeps) use rayon when the `parallel` feature is enabled (default) and fall
//! back to plain iterators otherwise. Both paths produce bit-identical results.

pub mod error;
pub mod imgio;
pub mod lensdb;
pub mod optim;
mod par;
pub mod planes;
pub mod quantify;
pub mod recover;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
pub use imgio::{ImageMetadata, Orientation, Plane, RgbImage};
pub use lensdb::{CorrectionRecord, LensDb, LensParams, Lookup, QueryWeights};
pub use planes::{BayerMosaic, DifferenceMap};
pub use quantify::{MagnitudeMap, Spectrogram};
pub use recover::{RecoveryResult, RecoverySettings};
pub use warp::{Coefficients, Interpolation, Intrinsics, Mask};
