//! Clock recovery, demodulation and link metrics for time-tagged single-photon
//! streams.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common double-precision instantiations.

pub mod demod;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod recovery;
pub mod scalar;
pub mod simulator;
pub mod tagstream;

pub use error::{Error, Result, Stage};
pub use scalar::Scalar;
pub use tagstream::{Channel, TagStream, TimeTag, Window};

/// Double-precision beta inter-arrival model.
pub type BetaModel = simulator::BetaArrivalModel<f64>;
/// Double-precision one-dimensional Nelder-Mead.
pub type NelderMead = optim::NelderMead1d<f64>;
