//! Deterministic, desk-scale simulator for personalized federated learning.
//!
//! Clients blend their latest local gradient update with the server's
//! global one via a Gompertz-normalized angle weight, then update their
//! personalized model with a matrix-free second-order step through a
//! rank-one regularized curvature approximation. FedAvg/FedProx and their
//! fine-tuned variants share the same round loop for comparison, driven by
//! heterogeneous (Dirichlet or label-sharded) partitions of synthetic or
//! CSV datasets under partial client participation.
//!
//! Everything is reproducible bit-for-bit from a single seed, regardless of
//! thread count.

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod fedcore;
pub mod metrics;
pub mod models;
pub mod numkit;
pub mod pfedsop;
pub mod runner;
pub mod verify;

pub use error::{Error, Result};
pub use fedcore::{EvalPoint, HyperParams, Method};
pub use numkit::{ParamVector, RngStream};
