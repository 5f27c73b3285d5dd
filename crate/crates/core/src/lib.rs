pub mod confidence;
pub mod data;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod querygen;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
