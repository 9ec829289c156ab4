//! Runtime for a map-augmented geolocalization agent.
//!
//! The crate is organized around one episode primitive: a policy model
//! converses with a structured map environment through a fixed tool suite
//! until it commits to a coordinate prediction. On top of that sit parallel
//! sampling with a verifier, group-relative reward signals for an external
//! trainer, and an evaluation harness reporting accuracy at six distance
//! granularities.
//!
//! Modules:
//! - [`geo`] — geodesic distance, the piecewise reward ladder, accuracy
//!   metrics, and answer parsing.
//! - [`protocol`] — declarative tool specs, call validation, and
//!   function-calling schema emission.
//! - [`images`] — per-episode image store and crop/zoom support.
//! - [`map`] — the map environment: a deterministic simulated backend and a
//!   live provider client behind one interface.
//! - [`llm`] — chat wire protocol, policy endpoints, and scripted test
//!   policies.
//! - [`agent`] — the hypothesis/tool-call/observation episode loop.
//! - [`tts`] — parallel test-time scaling: N samples plus a verifier,
//!   best@N, and pass@K.
//! - [`rl`] — reward scoring, group-relative advantages, and rollout export.
//! - [`eval`] — dataset ingestion, difficulty tiering, and report rendering.

pub mod agent;
pub mod clock;
pub mod eval;
pub mod geo;
pub mod images;
pub mod llm;
pub mod map;
pub mod prompts;
pub mod protocol;
pub mod rl;
pub mod tts;

pub use agent::{Budget, GeoQuery, Termination, Trajectory, TrajectoryStep};
pub use geo::{GeoPoint, GranularityLevels, Prediction, RewardLadder};
pub use llm::{ChatMessage, ContentPart, PolicyEndpoint, Role, SamplingParams};
pub use map::Poi;
pub use protocol::{ToolCall, ToolRegistry, ToolResult};
