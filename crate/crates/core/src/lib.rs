//! Desk-scale cognitive runtime: specialised modules on an ordered multipath
//! fabric, weighted by a softmax gate, with an executive and an autonomous
//! area that meet only in short-term memory.
//!
//! Math kernels are generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! runtime uses `f64` through the aliases below.

pub mod autonomous;
pub mod clock;
pub mod dps;
pub mod executive;
pub mod fabric;
pub mod io;
pub mod kernel;
pub mod memory;
pub mod modality;
pub mod scalar;
pub mod telemetry;

pub use scalar::Scalar;

pub type ContextSignature = modality::Signature<f64>;
pub type WeightVector = dps::Weights<f64>;
pub type ContextSignatureF32 = modality::Signature<f32>;
pub type WeightVectorF32 = dps::Weights<f32>;
