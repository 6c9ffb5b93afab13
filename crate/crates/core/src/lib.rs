//! Free energy and generalization loss of Bayesian inference when the
//! optimal distribution is not unique.
//!
//! The experiment fits a sigmoid regression `y = sigmoid(a x + b) + σ ε` to
//! data from a trapezoid `f(x)` on `[-2, 2]`. The trapezoid is even while the
//! sigmoid is monotone, so two mirrored parameters `(±a₀, b₀)` fit equally
//! well and the free energy picks up a `−μ√n` term.
//!
//! - [`model`]: truth, model, datasets and seeds.
//! - [`population`]: `L`, `K`, the optima and the covariance `V`.
//! - [`asymptotics`]: `μ`, branch probabilities and the predicted curves.
//! - [`bayes`]: grid quadrature of `Z_n`, its branch decomposition, `G_n`.
//! - [`harness`]: replicated experiments, fits and the CLT diagnostic.

pub mod asymptotics;
pub mod bayes;
pub mod error;
pub mod harness;
pub mod model;
pub mod population;
pub mod quadrature;

pub use asymptotics::{AsymptoticCoefficients, McSettings};
pub use bayes::{FreeEnergyEstimate, GridSettings, QuadratureGrid};
pub use error::{Error, Result};
pub use harness::{ExperimentContext, ExperimentPlan, ExperimentReport};
pub use model::{Dataset, ModelSpec, Parameter};
pub use population::{CovarianceMatrix, OptimumSet, SearchConfig};
