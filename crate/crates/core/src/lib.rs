//! Filter-bank features from wrist-sensor windows, a cell-based architecture
//! search scored without training, and leave-one-subject-out evaluation.

pub mod dataset;
mod error;
pub mod featbank;
pub mod harness;
pub mod models;
pub mod nas;
pub mod seeds;

pub use error::{Error, Result};
