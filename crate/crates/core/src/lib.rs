//! Modulating-function algebraic observers for linear time-varying plants and
//! their sampled-data extension with an inter-sample output predictor.
//!
//! The design path is: build the companion form ([`ocf`]), pick a unitary
//! modulating kernel and evaluate its gains ([`kernel`]), run the moving-horizon
//! observer ([`observer`], [`sampled`]) and check the sampling criterion and
//! error envelopes. [`sim`] ties these together into reproducible scenarios.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod kernel;
pub mod modop;
pub mod observer;
pub mod ocf;
pub mod plants;
pub mod sampled;
pub mod sim;
pub mod taylor;
pub mod timefun;

pub use error::{Error, Result};
