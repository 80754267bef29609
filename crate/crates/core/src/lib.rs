//! Instrumented training and complexity audits for small ReLU networks.
//!
//! The crate trains dense ReLU networks with SGD while recording the
//! normalized first-layer bias updates, and relates that trajectory to the
//! local Lipschitz constants of the learned function, both on linear regions
//! that contain training data and on empty ones.

pub mod linalg;
pub mod lipschitz;
pub mod network;
pub mod region;
pub mod regionviz;
pub mod simplex;
pub mod tasks;
pub mod train;

pub use linalg::Matrix;
pub use network::{Activation, ActivationPattern, Layer, Loss, Network, NnError};
pub use tasks::Dataset;
