//! Link- and MAC-level simulation kernels for massive machine-type uplink
//! access: SCMA with message-passing detection, compressed-sensing
//! multi-user detection, coded random access with interference
//! cancellation, grant-free CTU access and constant-envelope CPM analysis.
//!
//! Signal-processing kernels are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the harness uses.

pub mod channel;
pub mod common;
pub mod cpm;
pub mod cra;
pub mod csmud;
pub mod error;
pub mod grantfree;
pub mod harness;
pub mod linalg;
pub mod scalar;
pub mod scma;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Complex64 = num_complex::Complex<f64>;
pub type Complex32 = num_complex::Complex<f32>;

pub type ChannelRealization64 = channel::ChannelRealization<f64>;
pub type Codebook64 = scma::Codebook<f64>;
pub type MpaConfig64 = scma::MpaConfig<f64>;
pub type LayerDecision64 = scma::LayerDecision<f64>;
pub type SpreadingMatrix64 = csmud::SpreadingMatrix<f64>;
pub type DetectionResult64 = csmud::DetectionResult<f64>;
pub type WaveformBuffer64 = cpm::WaveformBuffer<f64>;
pub type CMatrix64 = linalg::CMatrix<f64>;

