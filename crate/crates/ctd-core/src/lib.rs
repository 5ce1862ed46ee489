//! Pricing library for the cheapest-to-deliver (CTD) collateral option.
//!
//! Collateral spreads against a designated base rate are modelled as
//! correlated Hull-White processes. At every point of a uniform time grid a
//! common-factor decomposition (conditional independence) makes the law of
//! the floored maximum `max(0, q_1(t), ..., q_N(t))` tractable: the CDF of
//! the shifted maximum is obtained by FFT convolution of the common-factor
//! density against the product CDF of the idiosyncratic factors, and moments
//! follow by quadrature. First- and second-order discount-factor estimators
//! are assembled from those per-time moments. A Monte Carlo engine with
//! exact transition sampling provides reference values.
//!
//! Module map:
//! - [`term_structure`]: Hull-White spread parameters, analytic moments,
//!   pairwise correlations, rate-to-spread conversion.
//! - [`common_factor`]: per-time decomposition, convolution CDF, moments and
//!   maximum probabilities, two-group extension.
//! - [`estimators`]: moment series over a time grid, `CF1`, the diffusion
//!   and mean-reversion integral-variance estimators, report assembly.
//! - [`mc`]: exact-in-law Monte Carlo reference and small quadrature oracles.

pub mod common_factor;
pub mod error;
pub mod estimators;
mod math;
pub mod mc;
pub mod term_structure;

pub use common_factor::{
    Component, ConvSettings, FactorDecomposition, GridFunction, MaxMomentSeries,
};
pub use error::{CtdError, Result};
pub use estimators::{
    EstimateReport, EstimatorSelection, EstimatorSettings, InnerVariable, VarianceMode, Warning,
};
pub use mc::{McEstimate, McSettings};
pub use term_structure::{
    ConvertedSpreads, CorrelationSpec, RateParams, SpreadParams, ThetaCurve, TimeGrid,
};
