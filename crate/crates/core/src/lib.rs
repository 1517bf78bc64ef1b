#![no_std]
extern crate alloc;

pub mod cocluster;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod influence;
pub mod layout;
pub mod matrix;
pub mod metrics;
pub mod quality;
pub mod rng;
pub mod session;

pub use error::{Error, Result};
