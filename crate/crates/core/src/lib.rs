//! Link-level library for polar-coded MIMO transmission.
//!
//! The crate covers the full chain: polar subcode construction with
//! cross-antenna dynamic frozen symbols, Gray-mapped transmission over
//! per-slot Rayleigh fading, QR and MMSE interference-cancellation
//! front-ends, and a joint successive-cancellation list decoder that
//! shares one path metric across all antennas.
//!
//! All numeric code is generic over the scalar type through [`Real`];
//! the aliases below fix the usual `f64` instantiations.

pub mod channel;
pub mod construction;
pub mod crc;
pub mod detect;
pub mod joint;
pub mod linalg;
pub mod polar;
pub mod real;

pub use real::Real;

/// Complex matrix over `f32`.
pub type CMat32 = linalg::CMat<f32>;
/// Complex matrix over `f64`.
pub type CMat64 = linalg::CMat<f64>;
/// QR factorization over `f64`.
pub type QrFactors64 = linalg::QrFactors<f64>;
/// MMSE filter bank over `f64`.
pub type MmseFilter64 = detect::MmseFilter<f64>;
/// Channel realization over `f64`.
pub type ChannelRealization64 = channel::ChannelRealization<f64>;
/// Transmitted frame over `f64`.
pub type TransmitFrame64 = channel::TransmitFrame<f64>;
/// Joint decoder output over `f64`.
pub type DecodeOutput64 = joint::DecodeOutput<f64>;
