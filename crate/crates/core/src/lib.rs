//! Spectral-truncation laboratory for monotone-follower singular control.

pub mod apps;
pub mod control_solver;
pub mod costs;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod numerics;
pub mod presets;
pub mod spectral_model;
pub mod stopping;
pub mod verify;

pub use error::{Error, Result};
