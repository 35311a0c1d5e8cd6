//! Simulation and analysis of device-independent self-testing for pure
//! bipartite entangled states.
//!
//! Two-qubit states are certified through the tilted-CHSH family
//! `α A0 + A0(B0 + B1) + A1(B0 − B1)`; qutrit and ququart states are split
//! into 2x2 blocks, each certified the same way, and stitched back together
//! from block weights. A tomography oracle provides the reference answer.

pub mod error;
pub mod bell;
pub mod qcore;
pub mod tiltedchsh;
pub mod highdim;
pub mod noise;
pub mod tomo;
pub mod runner;

pub use error::{Error, Result};
