//! Simulation engine for task-oriented dialogues between a User agent and an
//! Assistant agent over a lookup-table API.
//!
//! The crate is organised bottom-up:
//!
//! * [`dialogue`] holds the domain types and the canonical string grammar.
//! * [`mock_api`] is the lookup-table API implementation.
//! * [`agents`] defines the act-on-observation contract and the built-in agents.
//! * [`orchestrator`] runs dialogues and rollout batches.
//! * [`metrics`] computes TSR, JGA, BLEU-4, token exact match and friends.
//! * [`bootstrap`] and [`active_learning`] drive the self-training loops.
//! * [`data_io`] reads and writes episode files and adapts SGD-style corpora.
//! * [`fixture`] builds small synthetic worlds for experiments and tests.

pub mod active_learning;
pub mod agents;
pub mod bootstrap;
pub mod data_io;
pub mod dialogue;
pub mod fixture;
pub mod metrics;
pub mod mock_api;
pub mod orchestrator;
pub mod seed;

pub use dialogue::{
    calls_equal, parse_call, parse_response, parse_schema, serialize_call, serialize_response,
    serialize_schema, ApiCall, ApiResponse, ApiSchema, Episode, Fold, Origin, ParseError, Speaker,
    Turn, DONE,
};
pub use mock_api::ApiTable;
