pub mod error;
pub mod gradcore;
pub mod nn;
pub mod scalar;
pub mod signal;
pub mod tx;
pub mod channel;
pub mod rx;
pub mod link;
pub mod training;
pub mod gradsuite;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision link, the training default.
pub type Link32 = link::Link<f32>;
/// Double-precision link, used for calibration and gradient checks.
pub type Link64 = link::Link<f64>;
pub type Params32 = gradcore::ParamVector<f32>;
pub type Params64 = gradcore::ParamVector<f64>;
pub type Table64 = tx::ConstellationTable<f64>;
