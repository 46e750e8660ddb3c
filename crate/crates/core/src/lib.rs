//! Syntactic evaluation of generated text against a precision grammar.
//!
//! The crate orchestrates parsing through a [`gateway`], models derivation
//! trees ([`derivation`]), and computes the analyses built on top of them:
//! surface-statistic correlations with parseability ([`surface`]), rule-usage
//! statistics ([`rules`]), an L1-regularized logistic regression over bags of
//! rules ([`discrim`]), and seeded samplers for manual annotation
//! ([`sampling`]).

pub mod corpus;
pub mod derivation;
pub mod discrim;
pub mod exec;
pub mod gateway;
pub mod manifest;
pub mod rules;
pub mod sampling;
pub mod surface;
pub mod synth;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every randomized step draws from this generator.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
