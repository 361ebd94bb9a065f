//! Spectral structure of the infinite-width neural tangent kernel of a
//! bias-free 2-layer ReLU network, and of the Fisher information matrix of
//! its output layer at finite width.
//!
//! * [`sampling`]: seeded weights, the feature map `φ(xW)`, Gaussian Monte Carlo.
//! * [`kernel`]: the NTK series, its remainder and truncations, a Monte Carlo oracle.
//! * [`eigenbasis`]: the explicit eigenfunctions and operator checks on them.
//! * [`linalg`]: symmetric eigendecomposition.
//! * [`fisher`]: exact and empirical Fisher matrices and their spectrum.
//! * [`approx`]: the truncated eigen-expansion model and its gradient flow.

pub mod approx;
pub mod eigenbasis;
pub mod error;
pub mod fisher;
pub mod kernel;
pub mod linalg;
pub mod sampling;

pub use error::{Error, Result};
pub use kernel::{KernelSpec, KernelValue, SeriesParams};
pub use sampling::{HiddenWeights, McEstimate, MonteCarlo, NetworkConfig};
