//! Numerical laboratory for mean estimation under infinite Bernoulli product
//! measures.
//!
//! The crate is organised around a handful of modules:
//!
//! * [`profiles`]: probability sequences `p ∈ [0,1]^ℕ`, reflections and the
//!   rearrangement functionals `S` and `T`.
//! * [`sampler`]: seeded sampling from the product measure and Monte Carlo
//!   brackets for the expected uniform deviation `Δ_n`.
//! * [`estimators`]: the empirical mean, the pattern-test hybrid, the
//!   truncated estimator and majority-vote sign decoding.
//! * [`bounds`]: KL divergences, Fano and union bounds, the two-regime rate
//!   expression and the step-profile minimax construction.
//! * [`oracle`]: exact `Δ_n` for finite-support profiles.
//! * [`experiments`]: declarative experiment presets and CSV/JSON output.

pub mod bounds;
pub mod estimators;
pub mod experiments;
pub mod oracle;
pub mod profiles;
mod rearrange;
pub mod sampler;

pub use bounds::{MinimaxConstants, MinimaxInstance, TightBoundReport};
pub use estimators::{Estimate, Sign, Tail};
pub use oracle::ExactDeviation;
pub use profiles::{ExtReal, FunctionalReport, Profile, ProfileError, SignSequence};
pub use sampler::{DeviationEstimate, SampleBlock, TailMode};
