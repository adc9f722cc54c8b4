//! Lifted value iteration for relational MDPs.
//!
//! This crate solves first-order (relational) Markov decision processes by
//! symbolic dynamic programming over case expressions: value functions are
//! represented as aggregation-prefixed case statements whose conditions are
//! quantifier-free first-order formulas, and Bellman backups are performed on
//! that representation directly. The resulting value functions and
//! decision-list policies are independent of domain size.
//!
//! Modules:
//! - [`logic`]: sorted terms, NNF formulas, satisfiability with equality
//!   reasoning, ground evaluation.
//! - [`expr`]: case expressions, exact-rational evaluation, the binary
//!   combination operators, simplification and decision-list normalization.
//! - [`model`]: problem specification (sorts, predicates, probabilistic
//!   STRIPS actions, exogenous events, reward), the text format, and the
//!   compilation of actions into stochastic variants with truth-value
//!   definitions.
//! - [`sdp`]: the symbolic dynamic programming engine (regression, backup,
//!   object maximization, convergence detection, policy extraction).
//! - [`exo`]: the additive/exogenous-event backup pipeline over
//!   sum-aggregated rewards.
//! - [`ground`]: a brute-force ground solver over finite instances used to
//!   cross-check the lifted results.
//!
//! Determinism: all collections iterate in a fixed order (sorted structures
//! throughout), so identical inputs yield byte-identical outputs.

pub mod exo;
pub mod expr;
pub mod ground;
pub mod logic;
pub mod model;
pub mod sdp;
