//! Factored interactive POMDP planning over algebraic decision diagrams.
//!
//! The crate bundles:
//! - [`add`]: a canonical, hash-consed ADD engine (the carrier for all CPTs,
//!   rewards, beliefs, and alpha-vectors),
//! - [`model`]: the `.ipx` textual model format (parser + serializer),
//! - [`pomdp`]: level-0 factored POMDP machinery and a Perseus solver,
//! - [`ipomdp`]: level-1 interactive machinery (Reach expansion, opponent
//!   policy/model-update factors, joint transition, interactive backups),
//! - [`domain`]: the bundled cyber-deception domain and its builders,
//! - [`sim`]: the attacker-vs-defender simulation harness and metrics,
//! - [`flat`]: brute-force flat-enumeration reference implementations used
//!   to validate the symbolic code paths.

pub mod add;
pub mod domain;
pub mod flat;
pub mod ipomdp;
pub mod model;
pub mod pomdp;
pub mod sim;
