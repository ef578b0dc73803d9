//! Confidence intervals for black-box parametric samplers by test
//! inversion: each endpoint is found by a stochastic search over the
//! parameter for the value at which the observed estimate sits at the
//! right quantile of the simulated sampling distribution.

pub mod bench;
pub mod cli;
pub mod coalescent;
pub mod models;
pub mod numerics;
pub mod quantreg;
pub mod scalar;
pub mod search;

pub use models::{Domain, ModelConfig, ModelError, SampleOracle};
pub use numerics::RngStream;
pub use search::{
    production_start, run_search, two_sided_interval, EndpointResult, Method, MethodOptions,
    SearchError, SearchProblem, Side, TailSpec,
};

pub type QuantileFit64 = quantreg::QuantileFit<f64>;
pub type QuantileFit32 = quantreg::QuantileFit<f32>;
pub type LinearityTest64 = quantreg::LinearityTest<f64>;
pub type LinearityTest32 = quantreg::LinearityTest<f32>;
pub type EndpointBand64 = quantreg::EndpointBand<f64>;
pub type EndpointBand32 = quantreg::EndpointBand<f32>;
