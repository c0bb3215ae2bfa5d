//! Simulation toolkit for heterogeneous multi-task episodic reinforcement
//! learning on layered tabular MDPs.
//!
//! The crate provides
//!
//! * exact dynamic programming for single layered MDPs ([`mdp`]),
//! * the multi-task problem object with dissimilarity and subpar-pair
//!   analysis ([`instance`]),
//! * random and lower-bound instance generators ([`generate`]),
//! * the individual/aggregate empirical model ([`estimators`]) and the
//!   exploration bonuses ([`bonus`]),
//! * the Multi-task-Euler learner and its individual Strong-Euler baseline
//!   ([`learner`]),
//! * brute-force and Monte-Carlo references ([`oracle`]),
//! * the experiment harness behind the `mtrl` binary ([`harness`]).

pub mod bonus;
pub mod error;
pub mod estimators;
pub mod generate;
pub mod harness;
pub mod instance;
pub mod learner;
pub mod mdp;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
