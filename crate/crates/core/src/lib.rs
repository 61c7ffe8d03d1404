//! Probabilistic safety regions from scalable classifiers.
//!
//! A scalable classifier has a decision value `f(x, rho)` that increases with
//! the scalar `rho`. Calibrating `rho` on held-out unsafe samples with an
//! order statistic gives a region `{x : f(x, rho_eps) < 0}` whose joint
//! probability of containing an unsafe point is at most `eps`, with
//! confidence at least `1 - delta`.

pub mod classifiers;
pub mod data;
pub mod error;
pub mod family;
pub mod harness;
pub mod kernels;
pub mod order_scaling;
pub mod par;

pub use classifiers::{Hyperparameters, ScalableClassifier, ScalableModel, TrainOptions, Variant};
pub use data::{Dataset, Label};
pub use error::{Error, Result};
pub use kernels::KernelSpec;
pub use order_scaling::{CalibrationCertificate, Region, ScalingPlan};
pub use par::Execution;
