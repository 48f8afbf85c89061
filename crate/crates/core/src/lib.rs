//! Dataset-inference fingerprinting lab.
//!
//! A desk-scale reproduction of the dataset-inference (DI) ownership
//! verification scheme and its false-positive / false-negative analysis:
//!
//! * [`distribution`] synthesizes the signal-plus-noise data model,
//! * [`linear`] holds the closed-form linear suspect model and the DI decision rule,
//! * [`analytic`] collects the closed-form probabilities and bounds,
//! * [`montecarlo`] checks the closed forms against seeded simulation,
//! * [`nn`] is a small MLP stack (backprop, SGD, PGD adversarial training),
//! * [`blindwalk`] builds black-box margin embeddings,
//! * [`verifier`] trains the distinguisher and runs the hypothesis test,
//! * [`pacbayes`] evaluates the perturbation / generalization bounds,
//! * [`experiments`] wires everything into reproducible experiment suites.

pub mod analytic;
pub mod blindwalk;
pub mod distribution;
pub mod error;
pub mod experiments;
pub mod kv;
pub mod linear;
pub mod montecarlo;
pub mod nn;
pub mod pacbayes;
pub mod rng;
pub mod stats;
pub mod verifier;

pub use error::{Error, Result};
