//! Layer-wise quantum circuit architecture search.

pub mod circuit;
pub mod controller;
pub mod data;
pub mod error;
pub mod nn;
pub mod optim;
pub mod search;
pub mod statevector;
pub mod trainer;

pub use error::{Error, Result};
