//! Multiclass mean-field game of misinformation spread on a
//! degree-heterogeneous network.
//!
//! Nodes move through four compartments (susceptible, exposed, latent,
//! infected) and choose, while susceptible, the probability of accepting
//! received information. The crate computes the mean-field equilibrium of
//! that choice by forward-backward sweep, evaluates the always-accept
//! baseline, and checks the mean-field limit against a finite-population
//! stochastic simulation.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod finite;
pub mod hjb;
pub mod model;
pub mod oracle;
pub mod output;
pub mod qoi;
pub mod reproduce;
pub mod solver;

pub use error::{Error, Result};
