//! Black-box hypothesis tests for learning algorithms.
//!
//! The crate implements the exact randomized Binomial test for algorithm
//! risk, its comparison analog, Monte Carlo and exact-enumeration estimators
//! of risk and stability on finite distributions, the closed-form power
//! limits that no black-box test can beat, and constructive versions of the
//! adversarial instances behind those limits.
//!
//! Algorithms are only ever touched through [`Algorithm::fit`]; protocols in
//! [`harness`] see datasets, seeds and fitted models, never the algorithm.
//!
//! ```
//! use algotest::btest::{binom_test_exact_power, binom_test_protocol, BinomTestConfig};
//! use algotest::harness::run_test_seeded;
//! use algotest::{parse_algorithm, FiniteDistribution, LossFn};
//!
//! # fn main() -> algotest::Result<()> {
//! let power = binom_test_exact_power(5, 0.5, 0.05, 0.1)?;
//! assert!(power > 0.05);
//! let test = binom_test_protocol(BinomTestConfig { n: 4, tau: 0.5, alpha: 0.05, loss: LossFn::ZeroOne })?;
//! let dist = FiniteDistribution::bernoulli_labels(0.2)?;
//! let data = dist.sample_dataset(50, &mut algotest::rng::stream(1, 0));
//! let transcript = run_test_seeded(&test, &parse_algorithm("majority")?, &data, 1)?;
//! assert_eq!(transcript.rounds.len(), 10);
//! # Ok(())
//! # }
//! ```

// Negated float comparisons are deliberate: they reject NaN inputs.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod algorithms;
pub mod bounds;
pub mod btest;
pub mod dist;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod model;
pub mod reduction;
pub mod rng;
pub mod runner;
pub mod stats;

pub use algorithms::{builtin_algorithms, parse_algorithm, AlgorithmSpec};
pub use dist::FiniteDistribution;
pub use error::{Error, Result};
pub use estimate::Estimate;
pub use harness::{Step, TestProtocol, Transcript};
pub use model::{
    fit, Algorithm, AlgorithmHandle, ComparisonFn, DataPoint, Dataset, FittedModel, Loss, LossFn,
    Seed,
};
