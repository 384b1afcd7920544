//! gradlab: a desk-scale laboratory for gradient inversion attacks on
//! federated learning gradient exchanges and for gradient-mixing defenses.
//!
//! The crate covers the full loop: clients compute mini-batch gradients
//! that a simulated aggregator averages; an eavesdropper captures a
//! client's bundle and tries to reconstruct the inputs, either in closed
//! form on the dense layer or with L-BFGS-driven optimization attacks;
//! leakage is scored with an absolute-variation-distance metric; and an
//! experiment harness sweeps loss functions, label-sampling strategies,
//! batch sizes and noise levels to measure recovery rates and the
//! accuracy cost of each defense.

pub mod attacks;
pub mod datasets;
pub mod direct_inversion;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod numerics;

pub use error::{Error, Result};
