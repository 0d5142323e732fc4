//! Long-run user value optimization for feed ranking.
//!
//! The crate simulates producers whose posting reacts to the engagement they
//! receive, finds the long-run optimal ranking for tiny worlds by exhaustive
//! search, estimates per-producer responsiveness from a boost A/B test with a
//! three-model uplift learner, and deploys the learned scores back into
//! ranking with an average-score holdout.

pub mod ecosys;
pub mod error;
pub mod gbdt;
pub mod harness;
pub mod ids;
pub mod io;
pub mod pipeline;
pub mod policy;
pub mod sim;
pub mod stats;
pub mod uplift;

pub use error::{Error, Result};
