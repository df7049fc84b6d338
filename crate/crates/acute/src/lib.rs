//! Pairwise ("which assistant would you rather use") human evaluation:
//! building comparison tasks, serving them to annotators, gating annotators
//! on control pairs, and summarizing preferences with exact binomial tests.

pub mod analysis;
pub mod service;
pub mod stats;
pub mod store;
pub mod tasks;

pub use analysis::{analyze, gate_annotators, win_matrix, Analysis};
pub use service::{router, ServiceConfig};
pub use stats::{binomial_p, InvalidCounts, WinMatrix, ALPHA};
pub use store::{EvalStore, SessionPolicy, StoreError};
pub use tasks::{
    build_tasks, repetitive_control, Annotation, BuildError, Choice, ControlSpec, EvalTask, PublicTask, PublicTurn,
    DEFAULT_QUESTION,
};
