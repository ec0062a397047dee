//! Weakly-supervised anomaly detection with deep Q-learning.
//!
//! A small labeled anomaly set plus a large unlabeled pool drive a DQN
//! agent through an anomaly-biased simulation environment. The agent is
//! rewarded externally for recognizing the labeled anomalies and
//! intrinsically (via an isolation forest over its own embedding) for
//! visiting rare observations; after training, the Q-value of the
//! "anomalous" action scores test instances.

pub mod agent;
pub mod data;
pub mod environment;
pub mod error;
pub mod eval;
pub mod iforest;
pub mod nn;
pub mod reward;

pub use error::{Error, Result};
