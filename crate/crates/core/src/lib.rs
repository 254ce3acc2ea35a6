//! Personalized promotion toolkit.
//!
//! Two stages: learn per-user incentive-response curves (the isotonic
//! promotion network in [`model::dipn`] or a plain feed-forward baseline),
//! then spend a limited budget across users by solving the induced
//! assignment LP through its Lagrangian dual ([`allocator`]).
//!
//! Supporting modules generate synthetic populations with known response
//! curves ([`synthdata`]), correct logged treatment bias with inverse
//! propensity weights ([`biascorrect`]) and score models and plans
//! ([`eval`]). [`experiment`] wires the stages together for scripted runs.

pub mod allocator;
pub mod biascorrect;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod sum;
pub mod synthdata;

pub use error::{Error, Result};
pub use model::grid::{IncentiveGrid, IsotonicEmbedding};

/// Version tag written at the head of every serialized artifact.
pub const FORMAT_VERSION: u32 = 1;
