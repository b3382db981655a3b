//! Federated Dropout simulation core.
//!
//! A full-size residual feedforward classifier is trained server-side while
//! each client trains a structurally shrunk sub-model. Hidden units of the
//! feedforward blocks are the droppable dimension; a [`feddrop::DropoutMapping`]
//! records which units a client keeps so its update can be scattered back
//! into the full model.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, threading and the
//! command line live in the companion `feddrop` crate.
#![cfg_attr(not(test), no_std)]
#![deny(missing_debug_implementations)]

extern crate alloc;

pub mod analysis;
pub mod data;
pub mod error;
pub mod exec;
pub mod feddrop;
pub mod fedsim;
pub mod matrix;
pub mod nn;
pub mod optim;
pub mod presets;
pub mod rng;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use nn::{Arch, FFBlock, Gradients, ModelParams};
