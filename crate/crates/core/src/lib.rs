//! Range-Doppler radar detection and multi-target tracking workbench.
//!
//! The crate covers LFMCW echo simulation, pulse compression and coherent
//! integration, classical (CA-CFAR, Monte Carlo threshold, DBSCAN) and
//! neural detection, a confidence-adaptive Kalman tracker with
//! feature-augmented association, and Pd/Pfa/OSPA scoring.

pub mod assignment;
pub mod classic_detect;
pub mod config;
pub mod detection;
pub mod error;
pub mod experiment;
pub mod features;
pub mod formats;
pub mod metrics;
pub mod neural;
pub mod rd_pipeline;
pub mod rng;
pub mod signal_sim;
pub mod tracker;

pub use detection::Detection;
pub use error::{Error, FormatError, Result};
