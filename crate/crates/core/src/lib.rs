//! Network-driven vector autoregressions.
//!
//! An NVAR(p, q) lets shocks travel through a weighted directed network `A`:
//! `y_t = sum_l Phi_l y_{t-l} + u_t` with `Phi_l = sum_g alpha_lg A^g`. The
//! crate covers simulation, impulse-response analysis, time aggregation of a
//! latent high-frequency process, likelihood-based estimation of the timing
//! weights given a network, penalised estimation of an unknown network, a
//! principal-components factor benchmark and rolling forecast evaluation.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod factor;
pub mod forecast;
pub mod lagpoly;
pub mod linalg;
pub mod model;
pub mod netest;
pub mod network;
pub mod output;
pub mod panel;
pub mod smc;
pub mod timeagg;

pub use error::{NetvarError, Result};
pub use model::{HighFreqSpec, NvarModel, SamplingRatio};
pub use network::Network;
pub use panel::Panel;
