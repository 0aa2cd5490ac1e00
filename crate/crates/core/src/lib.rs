//! Contextual bandits over large, linearly structured action spaces.
//!
//! Exploration is driven by approximate barycentric spanners computed with
//! a linear optimization oracle, so per-round cost does not depend on the
//! number of actions. The crate provides:
//!
//! - [`linalg`]: determinant/inverse state with rank-one column updates and
//!   weighted design norms.
//! - [`oracles`]: action sets with an exact argmax oracle, and online
//!   regression oracles.
//! - [`spanner`] and [`reweighted`]: spanner search on plain and
//!   inverse-gap reweighted embeddings.
//! - [`policies`]: SpannerGreedy, SpannerIGW and finite-action baselines.
//! - [`simulator`]: synthetic realizable environments and regret tracking.
//!
//! The `parallel` feature (on by default) runs inner loops and seed sweeps
//! on rayon; without it everything runs sequentially with identical output.

pub mod error;
pub mod linalg;
pub mod oracles;
pub mod par;
pub mod policies;
pub mod reweighted;
pub mod simulator;
pub mod spanner;

pub use error::{Error, Result};
pub use oracles::{ActionId, ActionSet, Context, FiniteActionSet, Regressor};
pub use par::Execution;
pub use policies::{Policy, PolicySpec};
