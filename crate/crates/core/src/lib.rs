//! Bi-band ECoG decoding network with its training harness and the
//! frequency-band and channel importance analyses.
//!
//! The crate is organised bottom-up: [`tensor`] provides the autodiff core,
//! [`model`] assembles the network, [`data`] and [`dsp`] prepare trials,
//! [`harness`] trains and cross-validates, and [`analysis`] runs the
//! importance sweeps.

pub mod analysis;
pub mod data;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Encoder, ForwardPlan, Model, ModelConfig};
pub use tensor::{no_grad, Element, Tensor};
