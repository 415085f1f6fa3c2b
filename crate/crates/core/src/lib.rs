//! Numerical laboratory for random sections of unconditional convex bodies.
//!
//! The crate is organised around five layers:
//!
//! * [`bodies`]: Minkowski functionals and subgradients of coordinate-symmetric
//!   bodies (cube, `l_p` balls, weighted `l_p`, and the two-cylinder body in
//!   John's position), with a positive diagonal scaling.
//! * [`sampler`]: counter-based, splittable Gaussian streams and Haar-random
//!   orthonormal frames.
//! * [`estimators`]: batch-parallel Monte Carlo estimates of Gaussian
//!   functionals of a norm (moments, variance against Dirichlet energy,
//!   Talagrand's sum, balancing residuals, deviation curves).
//! * [`positions`]: the stochastic fixed-point solver for the `l`-position and
//!   the John-position check for the cylinder body.
//! * [`sections`]: section norms, certified sphericity ratios, the disk/ellipse
//!   distance bound and its brute-force oracle, and Gaussian extreme singular
//!   values.
//!
//! Every randomised routine is a pure function of a [`SeedSpec`]. Work is split
//! into a fixed number of seed-split batches, so results do not depend on the
//! size of the rayon pool that executes them.

pub mod bodies;
pub mod error;
pub mod estimators;
pub mod positions;
pub mod sampler;
pub mod sections;
pub mod stats;

pub use bodies::{make_cylinder_john_body, BodySpec, CylinderConfig, Family, NormEvaluation};
pub use error::{Error, Result};
pub use estimators::McEstimate;
pub use positions::{solve_ell_position, EllPositionResult, SolveOptions};
pub use sampler::{gaussian_vector, haar_subspace, split_seed, SeedSpec, SubspaceBasis};
pub use sections::SphericityReport;
