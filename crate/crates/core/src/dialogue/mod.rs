//! Domain types and the canonical string grammar.

mod episode;
pub mod grammar;

pub use episode::{Episode, EpisodeError, Fold, Origin, Round, Speaker, Turn, DONE};
pub use grammar::{
    calls_equal, is_token, parse_call, parse_response, parse_schema, serialize_call,
    serialize_response, serialize_schema, ApiCall, ApiResponse, ApiSchema, InvalidName,
    ParseError, API_FAIL, CALL_PREFIX, RESPONSE_PREFIX, SCHEMA_PREFIX,
};
