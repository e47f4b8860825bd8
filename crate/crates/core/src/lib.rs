//! Stochastic design of filamentary electromagnet coils.
//!
//! Coils are closed curves described by truncated Fourier series. Manufacturing
//! errors are modelled as independent periodic Gaussian processes added to every
//! physical coil, and the design is optimized against a fixed target field on a
//! magnetic axis under a risk measure (deterministic, expected value, or CVaR)
//! evaluated by sample average approximation.
//!
//! Module map:
//!
//! * [`geometry`]: Fourier curves, quadrature grids, symmetry expansion.
//! * [`perturbation`]: periodized squared-exponential kernel and joint
//!   value/derivative sampling.
//! * [`field`]: Biot–Savart field and field gradient with reverse-mode derivatives.
//! * [`objective`]: on-axis field mismatch plus coil regularizers.
//! * [`stochastic`]: risk scalarization over frozen samples.
//! * [`optimize`]: L-BFGS with strong-Wolfe line search, multi-start and CVaR
//!   continuation.
//! * [`trace`]: field-line tracing, magnetic axis and rotational transform.
//! * [`kde`]: Gaussian kernel density estimates for distribution output.

pub mod error;
pub mod field;
pub mod geometry;
pub mod instance;
pub mod kde;
pub mod math;
pub mod objective;
pub mod optimize;
pub mod perturbation;
pub mod seed;
pub mod stochastic;
pub mod trace;

pub use error::{Error, Result};
