//! Internal numerical building blocks: normal-distribution helpers, bounded
//! scalar minimization, Gaussian quadrature nodes, FFT convolution and small
//! symmetric-matrix utilities.

pub(crate) mod brent;
pub(crate) mod fft;
pub(crate) mod gauss;
pub(crate) mod normal;
pub(crate) mod sym;
