//! Bias-potential distribution learning.
//!
//! A distribution on the box `[-1,1]^d` is represented as `Q = e^{-V} P / Z`
//! where `P` is uniform and `V` is a random-feature potential
//! `V(x) = (1/m) Σ a_j σ(w_j·x + b_j)` with fixed features drawn uniformly
//! from the ℓ¹ unit sphere. The crate provides
//!
//! * [`model`]: feature sampling, potentials, the induced kernel, two-layer nets;
//! * [`measures`]: midpoint tensor-grid quadrature, partition functions, KL, MMD;
//! * [`objectives`]: the backward (`L⁻`) and forward (`L⁺`) KL objectives and
//!   their coefficient-space gradients;
//! * [`training`]: gradient descent, SGD, Adam, norm-projected training, the
//!   two-layer particle flow and early-stopping selection;
//! * [`sampling`]: projected Langevin Monte Carlo and an exact grid sampler;
//! * [`dynamics`]: the MMD measure flow and its potential-space counterpart;
//! * [`experiments`]: sample-complexity, memorization and approximation studies.

// `!(x > 0.0)` rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod measures;
pub mod model;
pub mod numeric;
pub mod objectives;
pub mod plot;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
pub use measures::{Grid, GridDensity, SampleSet, SignedGridMeasure};
pub use model::{Activation, ActivationTable, FeatureSet, Potential, TwoLayerNet};
pub use objectives::Target;
pub use training::{TrainConfig, Trajectory};
