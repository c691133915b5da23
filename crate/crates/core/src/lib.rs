//! Document-level translation with length-varied training segments,
//! length-aware attention scaling and sliding-window decoding.

pub mod attention;
pub mod checkpoint;
pub mod corpus;
pub mod decoding;
pub mod dls;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
