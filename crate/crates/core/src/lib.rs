//! Discovery of ODE vector fields from trajectory data with linear multistep
//! residual losses, together with the inverse modified equations that such
//! training actually recovers.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod imde;
pub mod jets;
mod kernels;
pub mod lmm;
pub mod model;
pub mod study;
pub mod train;

pub use error::{Error, Result};
