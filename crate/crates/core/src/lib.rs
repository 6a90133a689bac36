//! Unsupervised multi-object tracking with a dynamical variational autoencoder.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`] is a small dense reverse-mode differentiation tape.
//! * [`srnn`] holds the SRNN dynamical VAE (shared forward LSTM, generative
//!   heads, causal inference head) and its ELBO.
//! * [`synth`] generates piece-wise synthetic box trajectories.
//! * [`pretrain`] fits the SRNN on synthetic trajectories with Adam.
//! * [`tracker`] is the variational EM tracker; [`vkf`] swaps the learned
//!   dynamics for a constant-velocity Kalman model.
//! * [`metrics`] implements IoU, the Hungarian solver and CLEAR-MOT/IDF1.
//! * [`dataio`] reads and writes MOTChallenge files, scene directories and
//!   the synthetic benchmark suite.
//! * [`benchmark`] runs both trackers over a scene set and [`report`]
//!   renders the tables and plots; [`cli`] wires everything into a binary.

pub mod autodiff;
pub mod bbox;
pub mod benchmark;
pub mod checkpoint;
pub mod cli;
pub mod config_file;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod pretrain;
pub mod report;
pub mod rng;
pub mod srnn;
pub mod synth;
pub mod tracker;
pub mod vkf;

pub use bbox::BBox;
pub use error::{Error, Result};

/// Semantic version of the library and CLI.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
