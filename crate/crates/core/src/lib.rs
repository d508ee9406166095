//! Joint deblurring and multi-frame interpolation from blurry low-frame-rate
//! video: blur synthesis, flow-guided warping and blending, attentive
//! correlation, the two-stage network forward pass, losses and metrics.

pub mod backbone;
pub mod boost;
pub mod cli;
pub mod degrade;
pub mod error;
pub mod fac;
pub mod flow;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod sequence;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
