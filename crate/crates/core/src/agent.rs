//! The episode loop: propose hypotheses, call map tools, accumulate the
//! evidence chain, and converge to a coordinate prediction under an
//! interaction budget.
//!
//! One episode is strictly sequential. Many episodes may run concurrently;
//! each owns its conversation and image store.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::geo::{geodesic_distance, parse_prediction, GeoPoint, Prediction};
use crate::images::{ImageData, ImageError, ImageStore, QUERY_IMAGE_HANDLE};
use crate::llm::{ChatMessage, ContentPart, GatewayError, ImageRef, PolicyClient, Role};
use crate::map::MapBackend;
use crate::prompts::{AGENT_PROMPT, FORCED_ANSWER_PROMPT};
use crate::protocol::{
    emit_tool_schemas, validate_call, ToolCall, ToolOutput, ToolRegistry, ToolResult,
};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("query image: {0}")]
    Image(#[from] ImageError),
}

/// One geolocalization task: an image, the instruction shown to the policy,
/// and an optional dataset-level region tag.
#[derive(Debug, Clone)]
pub struct GeoQuery {
    pub id: String,
    pub image: ImageRef,
    pub instruction: String,
    pub region_hint: Option<String>,
}

impl GeoQuery {
    pub fn new(id: impl Into<String>, image: Arc<ImageData>) -> Self {
        Self {
            id: id.into(),
            image: ImageRef::new(QUERY_IMAGE_HANDLE, image),
            instruction: AGENT_PROMPT.to_string(),
            region_hint: None,
        }
    }

    pub fn from_image_path(id: impl Into<String>, path: &Path) -> Result<Self, QueryError> {
        Ok(Self::new(id, Arc::new(ImageData::from_path(path)?)))
    }

    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.instruction = instruction.into();
        self
    }

    pub fn with_region_hint(mut self, hint: impl Into<String>) -> Self {
        self.region_hint = Some(hint.into());
        self
    }
}

/// Interaction limits for one episode. The tool-response cap is measured in
/// characters; token counting is model-specific, so the default is four
/// characters per capped token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_turns: usize,
    pub max_tool_response_chars: usize,
    pub max_wall_ms: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_turns: 8,
            max_tool_response_chars: 4096,
            max_wall_ms: 600_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The policy committed to a parseable prediction.
    Answered,
    /// The budget ran out and the forced final turn still produced no final
    /// text (e.g. the policy kept attempting tool calls).
    BudgetExhausted,
    /// The policy endpoint failed; the partial trajectory is preserved.
    PolicyError,
    /// Final text arrived but carried no parseable prediction.
    Unparseable,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Answered => "answered",
            Termination::BudgetExhausted => "budget_exhausted",
            Termination::PolicyError => "policy_error",
            Termination::Unparseable => "unparseable",
        }
    }
}

/// One link of the evidence chain: an optional hypothesis, an optional tool
/// action, and its observation. Batched tool calls in one assistant turn
/// each get their own step; only the first carries the turn's hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: usize,
    pub turn: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<ToolCall>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation: Option<ToolResult>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub turns: usize,
    pub tool_calls: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_ms: u64,
}

/// The full record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema_version: u32,
    pub query_id: String,
    pub instruction: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region_hint: Option<String>,
    pub query_image: ImageRef,
    pub steps: Vec<TrajectoryStep>,
    pub final_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction>,
    pub termination: Termination,
    /// Set when the loop injected the tools-disabled answer-now turn.
    pub forced_turn: bool,
    pub accounting: Accounting,
    /// Attached by the harness after the episode for scoring; never shown to
    /// the policy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GeoPoint>,
}

impl Trajectory {
    pub fn answered(&self) -> bool {
        self.termination == Termination::Answered
    }

    /// Geodesic error against a ground truth; unanswered episodes score
    /// `+inf` so they stay in every denominator.
    pub fn error_vs(&self, truth: GeoPoint) -> f64 {
        match &self.prediction {
            Some(p) => geodesic_distance(p.point, truth),
            None => f64::INFINITY,
        }
    }
}

/// Truncates to `cap` characters, appending a marker when anything was cut.
/// The result never exceeds `cap` characters, marker included.
pub fn truncate_text(text: &str, cap: usize) -> (String, bool) {
    const MARKER: &str = "…[truncated]";
    if text.chars().count() <= cap {
        return (text.to_string(), false);
    }
    let marker_len = MARKER.chars().count();
    let keep = cap.saturating_sub(marker_len);
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(MARKER);
    if keep == 0 {
        out = MARKER.chars().take(cap).collect();
    }
    (out, true)
}

fn truncate_result(result: ToolResult, cap: usize) -> ToolResult {
    match result.output {
        ToolOutput::Text { text } => {
            let (text, cut) = truncate_text(&text, cap);
            ToolResult {
                call_id: result.call_id,
                output: ToolOutput::Text { text },
                truncated: result.truncated || cut,
            }
        }
        ToolOutput::Error { message } => {
            let (message, cut) = truncate_text(&message, cap);
            ToolResult {
                call_id: result.call_id,
                output: ToolOutput::Error { message },
                truncated: result.truncated || cut,
            }
        }
        other => ToolResult {
            call_id: result.call_id,
            output: other,
            truncated: result.truncated,
        },
    }
}

/// Drops the oldest tool observations from the conversation (never the
/// query message) so one retry can fit the context window.
fn compact_conversation(conversation: &mut [ChatMessage]) -> usize {
    let mut dropped = 0;
    let total = conversation.len();
    for message in conversation.iter_mut().take(total.saturating_sub(2)) {
        if message.role == Role::Tool {
            for part in &mut message.content {
                if let ContentPart::Text { text } = part {
                    if text != "[dropped]" {
                        *text = "[dropped]".to_string();
                        dropped += 1;
                    }
                }
            }
        }
    }
    dropped
}

/// Runs one episode to completion. The loop sends the conversation to the
/// policy each turn; tool calls are validated, executed in message order,
/// and appended as observations. On the last permitted turn the policy is
/// re-prompted with tools disabled and told to answer.
pub fn run_episode(
    query: &GeoQuery,
    policy: &dyn PolicyClient,
    env: &dyn MapBackend,
    registry: &ToolRegistry,
    budget: &Budget,
    clock: &dyn Clock,
) -> Trajectory {
    let started = clock.now_ms();
    let tools = emit_tool_schemas(registry);
    let query_data = query
        .image
        .data
        .clone()
        .expect("query image is materialized");
    let mut images = ImageStore::with_query_image(query_data);
    let mut conversation = vec![ChatMessage::user_with_image(
        query.image.clone(),
        query.instruction.clone(),
    )];

    let mut trajectory = Trajectory {
        schema_version: TRAJECTORY_SCHEMA_VERSION,
        query_id: query.id.clone(),
        instruction: query.instruction.clone(),
        region_hint: query.region_hint.clone(),
        query_image: query.image.clone(),
        steps: Vec::new(),
        final_text: String::new(),
        prediction: None,
        termination: Termination::PolicyError,
        forced_turn: false,
        accounting: Accounting::default(),
        ground_truth: None,
    };

    let mut step_index = 0;
    for turn in 0..budget.max_turns {
        let out_of_time = clock.now_ms().saturating_sub(started) >= budget.max_wall_ms;
        let forced = turn == budget.max_turns - 1 || out_of_time;
        if forced {
            trajectory.forced_turn = true;
            conversation.push(ChatMessage::user(FORCED_ANSWER_PROMPT));
        }
        let active_tools: &[serde_json::Value] = if forced { &[] } else { &tools };

        let mut compacted = false;
        let response = loop {
            match policy.chat(&conversation, active_tools) {
                Ok(response) => break Some(response),
                Err(GatewayError::ContextLengthExceeded) if !compacted => {
                    compacted = true;
                    if compact_conversation(&mut conversation) == 0 {
                        break None;
                    }
                    log::warn!(
                        "episode {}: compacted conversation after context overflow",
                        query.id
                    );
                }
                Err(err) => {
                    log::warn!("episode {}: policy error: {err}", query.id);
                    break None;
                }
            }
        };
        let Some(response) = response else {
            trajectory.termination = Termination::PolicyError;
            trajectory.accounting.wall_ms = clock.now_ms() - started;
            return trajectory;
        };

        trajectory.accounting.turns += 1;
        if let Some(usage) = response.usage {
            trajectory.accounting.prompt_tokens += usage.prompt_tokens;
            trajectory.accounting.completion_tokens += usage.completion_tokens;
        }
        let assistant = response.message;
        let assistant_text = assistant.text();
        conversation.push(assistant.clone());

        if !assistant.tool_calls.is_empty() && !forced {
            for (i, raw_call) in assistant.tool_calls.iter().enumerate() {
                let mut call = raw_call.clone();
                if call.call_id.is_empty() {
                    call.call_id = format!("call_t{turn}_{i}");
                }
                let result = match validate_call(registry, call.clone()) {
                    Ok(validated) => env.execute(&validated, &mut images),
                    Err(err) => ToolResult::error(&call.call_id, err.to_string()),
                };
                let result = truncate_result(result, budget.max_tool_response_chars);
                let hypothesis =
                    (i == 0 && !assistant_text.is_empty()).then(|| assistant_text.clone());
                trajectory.steps.push(TrajectoryStep {
                    index: step_index,
                    turn,
                    hypothesis_text: hypothesis,
                    action: Some(call.clone()),
                    observation: Some(result.clone()),
                });
                step_index += 1;
                trajectory.accounting.tool_calls += 1;

                match &result.output {
                    ToolOutput::Text { text } => {
                        conversation.push(ChatMessage::tool(&result.call_id, text.clone()));
                    }
                    ToolOutput::Error { message } => {
                        conversation.push(ChatMessage::tool(
                            &result.call_id,
                            format!("ERROR: {message}"),
                        ));
                    }
                    ToolOutput::Image { handle } => {
                        // The tool role is text-only on the wire; the image
                        // itself follows as a user-role part.
                        conversation.push(ChatMessage::tool(
                            &result.call_id,
                            format!("Map image attached below as {handle}."),
                        ));
                        if let Ok(data) = images.get(handle) {
                            conversation.push(ChatMessage::user_with_image(
                                ImageRef::new(handle.clone(), data),
                                format!("[{handle}]"),
                            ));
                        }
                    }
                }
            }
            continue;
        }

        if !assistant.tool_calls.is_empty() && forced {
            // Tools were disabled and the policy still tried to call them:
            // the budget is spent with no answer.
            for (i, raw_call) in assistant.tool_calls.iter().enumerate() {
                let mut call = raw_call.clone();
                if call.call_id.is_empty() {
                    call.call_id = format!("call_t{turn}_{i}");
                }
                trajectory.steps.push(TrajectoryStep {
                    index: step_index,
                    turn,
                    hypothesis_text: (i == 0 && !assistant_text.is_empty())
                        .then(|| assistant_text.clone()),
                    action: Some(call),
                    observation: None,
                });
                step_index += 1;
            }
            trajectory.termination = Termination::BudgetExhausted;
            trajectory.accounting.wall_ms = clock.now_ms() - started;
            return trajectory;
        }

        trajectory.final_text = assistant_text;
        match parse_prediction(&trajectory.final_text) {
            Ok(prediction) => {
                trajectory.prediction = Some(prediction);
                trajectory.termination = Termination::Answered;
            }
            Err(_) => {
                trajectory.termination = Termination::Unparseable;
            }
        }
        trajectory.accounting.wall_ms = clock.now_ms() - started;
        return trajectory;
    }

    // max_turns == 0: degenerate budget, nothing was asked.
    trajectory.termination = Termination::BudgetExhausted;
    trajectory.forced_turn = false;
    trajectory.accounting.wall_ms = clock.now_ms() - started;
    trajectory
}

/// Deterministic human-readable transcript of an episode. This is the text
/// fed to the verifier and compared byte-for-byte in replay tests.
pub fn serialize_trajectory(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    out.push_str(&format!("=== Trajectory {} ===\n", trajectory.query_id));
    out.push_str(&format!("[image: {}]\n", trajectory.query_image.handle));
    out.push_str("Instruction:\n");
    out.push_str(&trajectory.instruction);
    out.push('\n');
    for step in &trajectory.steps {
        out.push_str(&format!("--- Step {} ---\n", step.index));
        if let Some(hypothesis) = &step.hypothesis_text {
            out.push_str(&format!("Hypothesis: {hypothesis}\n"));
        }
        if let Some(action) = &step.action {
            out.push_str(&format!(
                "Action: {} {}\n",
                action.tool_name,
                canonical_json(&serde_json::Value::Object(action.arguments.clone()))
            ));
        }
        match &step.observation {
            Some(result) => match &result.output {
                ToolOutput::Text { text } => {
                    out.push_str(&format!("Observation[{}]:\n{}\n", result.call_id, text));
                }
                ToolOutput::Image { handle } => {
                    out.push_str(&format!(
                        "Observation[{}]: [image: {}]\n",
                        result.call_id, handle
                    ));
                }
                ToolOutput::Error { message } => {
                    out.push_str(&format!(
                        "Observation[{}]: ERROR: {}\n",
                        result.call_id, message
                    ));
                }
            },
            None => out.push_str("Observation: (cut by budget)\n"),
        }
    }
    out.push_str("--- Final ---\n");
    if !trajectory.final_text.is_empty() {
        out.push_str(&trajectory.final_text);
        out.push('\n');
    }
    match &trajectory.prediction {
        Some(p) => out.push_str(&format!(
            "Prediction: {}\n",
            serde_json::to_string(p).expect("prediction serializes")
        )),
        None => out.push_str("Prediction: none\n"),
    }
    out.push_str(&format!(
        "Termination: {}\n",
        trajectory.termination.as_str()
    ));
    out
}

/// JSON with recursively sorted object keys; stable regardless of map
/// insertion order.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn sort(value: &serde_json::Value) -> serde_json::Value {
        match value {
            serde_json::Value::Object(map) => {
                let sorted: std::collections::BTreeMap<_, _> =
                    map.iter().map(|(k, v)| (k.clone(), sort(v))).collect();
                serde_json::to_value(sorted).unwrap()
            }
            serde_json::Value::Array(items) => {
                serde_json::Value::Array(items.iter().map(sort).collect())
            }
            other => other.clone(),
        }
    }
    serde_json::to_string(&sort(value)).expect("canonical json")
}

/// Rebuilds the message sequence of an episode from its trajectory, for
/// rollout export. Image parts are carried as references.
pub fn reconstruct_conversation(trajectory: &Trajectory) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::user_with_image(
        trajectory.query_image.clone(),
        trajectory.instruction.clone(),
    )];
    let mut steps = trajectory.steps.iter().peekable();
    while let Some(first) = steps.next() {
        let mut calls: Vec<ToolCall> = first.action.iter().cloned().collect();
        let mut observations: Vec<&TrajectoryStep> = vec![first];
        while let Some(next) = steps.peek() {
            if next.turn == first.turn {
                let next = steps.next().unwrap();
                calls.extend(next.action.iter().cloned());
                observations.push(next);
            } else {
                break;
            }
        }
        messages.push(ChatMessage::assistant_with_tool_calls(
            first.hypothesis_text.clone(),
            calls,
        ));
        for step in observations {
            if let Some(result) = &step.observation {
                let text = match &result.output {
                    ToolOutput::Text { text } => text.clone(),
                    ToolOutput::Error { message } => format!("ERROR: {message}"),
                    ToolOutput::Image { handle } => format!("[image: {handle}]"),
                };
                messages.push(ChatMessage::tool(&result.call_id, text));
            }
        }
    }
    if !trajectory.final_text.is_empty() {
        messages.push(ChatMessage::assistant(trajectory.final_text.clone()));
    }
    messages
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Proposed,
    Supported,
    Refuted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<GeoPoint>,
    pub supporting_steps: Vec<usize>,
    pub status: CandidateStatus,
}

/// The explicit form of the candidate pool the loop maintains implicitly:
/// distinct places and coordinates surfaced during the episode, in order of
/// first appearance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub entries: Vec<CandidateEntry>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Harvests candidate locations from POI observations and coordinate
/// mentions in hypothesis text. An entry is supported when the final answer
/// names it or lands within 1 km of it, refuted when the episode answered
/// somewhere more than 25 km away, and proposed otherwise.
pub fn extract_candidate_pool(trajectory: &Trajectory) -> CandidatePool {
    const SUPPORT_RADIUS_M: f64 = 1_000.0;
    const REFUTE_RADIUS_M: f64 = 25_000.0;

    let coord_pattern =
        regex::Regex::new(r"(-?\d{1,2}\.\d+)\s*,\s*(-?\d{1,3}\.\d+)").expect("static regex");
    let list_pattern =
        regex::Regex::new(r"(?m)^\d+\.\s+(.+?) \(id: [^)]+\) — .*? @ (-?[\d.]+),(-?[\d.]+)")
            .expect("static regex");

    let mut pool = CandidatePool::default();
    let push = |pool: &mut CandidatePool,
                label: String,
                location: Option<GeoPoint>,
                step: usize| {
        let key = label.to_lowercase();
        if let Some(existing) = pool
            .entries
            .iter_mut()
            .find(|e| e.label.to_lowercase() == key)
        {
            if !existing.supporting_steps.contains(&step) {
                existing.supporting_steps.push(step);
            }
            if existing.location.is_none() {
                existing.location = location;
            }
        } else {
            pool.entries.push(CandidateEntry {
                label,
                location,
                supporting_steps: vec![step],
                status: CandidateStatus::Proposed,
            });
        }
    };

    for step in &trajectory.steps {
        if let Some(hypothesis) = &step.hypothesis_text {
            for captures in coord_pattern.captures_iter(hypothesis) {
                if let (Ok(lat), Ok(lon)) = (captures[1].parse(), captures[2].parse()) {
                    if let Ok(point) = GeoPoint::new(lat, lon) {
                        push(
                            &mut pool,
                            format!("{},{}", &captures[1], &captures[2]),
                            Some(point),
                            step.index,
                        );
                    }
                }
            }
        }
        if let Some(ToolResult {
            output: ToolOutput::Text { text },
            ..
        }) = &step.observation
        {
            for captures in list_pattern.captures_iter(text) {
                if let (Ok(lat), Ok(lon)) = (captures[2].parse(), captures[3].parse()) {
                    if let Ok(point) = GeoPoint::new(lat, lon) {
                        push(&mut pool, captures[1].to_string(), Some(point), step.index);
                    }
                }
            }
            // Detail blocks carry a name line and a location line.
            if text.starts_with("POI ") {
                let name = text
                    .lines()
                    .find_map(|l| l.strip_prefix("name: "))
                    .map(str::to_string);
                let location = text
                    .lines()
                    .find_map(|l| l.strip_prefix("location: "))
                    .and_then(|l| GeoPoint::parse_lat_lon(l)?.ok());
                if let Some(name) = name {
                    push(&mut pool, name, location, step.index);
                }
            }
        }
    }

    let final_lower = trajectory.final_text.to_lowercase();
    for entry in &mut pool.entries {
        let named_in_final =
            !trajectory.final_text.is_empty() && final_lower.contains(&entry.label.to_lowercase());
        let distance_to_answer = match (&trajectory.prediction, entry.location) {
            (Some(prediction), Some(location)) => {
                Some(geodesic_distance(prediction.point, location))
            }
            _ => None,
        };
        entry.status = if named_in_final || distance_to_answer.is_some_and(|d| d < SUPPORT_RADIUS_M)
        {
            CandidateStatus::Supported
        } else if trajectory.answered() && distance_to_answer.is_some_and(|d| d > REFUTE_RADIUS_M) {
            CandidateStatus::Refuted
        } else {
            CandidateStatus::Proposed
        };
    }
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::MockClock;
    use crate::llm::ScriptedPolicy;
    use crate::map::{SimConfig, SimulatedMap};
    use crate::protocol::default_registry;
    use serde_json::json;
    use std::collections::BTreeMap;

    fn sample_map() -> SimulatedMap {
        let poi = |id: &str, name: &str, lat: f64, lon: f64| crate::map::Poi {
            id: id.into(),
            name: name.into(),
            address: "1 Fixture Road".into(),
            category: "cafe".into(),
            lat,
            lon,
            extra: BTreeMap::new(),
        };
        SimulatedMap::new(
            vec![
                poi("p01", "Harbor Cafe", 31.2286, 121.4554),
                poi("p02", "Hilltop Bakery", 31.9, 120.2),
            ],
            SimConfig::default(),
        )
    }

    fn query() -> GeoQuery {
        GeoQuery::new(
            "sample-1",
            Arc::new(crate::images::banded_test_image(32, 32)),
        )
    }

    fn answer_text(lat: f64, lon: f64, city: &str) -> String {
        format!(
            "Based on the map evidence this is {city}. {{\"lat\": {lat}, \"lon\": {lon}, \"city\": \"{city}\", \"country\": \"China\"}}"
        )
    }

    fn run(script: Vec<ChatMessage>, budget: &Budget) -> Trajectory {
        let policy = ScriptedPolicy::new(script);
        run_episode(
            &query(),
            &policy,
            &sample_map(),
            &default_registry(),
            budget,
            &MockClock::new(),
        )
    }

    #[test]
    fn immediate_answer_has_zero_tool_steps() {
        let trajectory = run(
            vec![ChatMessage::assistant(answer_text(
                31.2286, 121.4554, "Shanghai",
            ))],
            &Budget::default(),
        );
        assert_eq!(trajectory.termination, Termination::Answered);
        assert!(trajectory.steps.is_empty());
        assert_eq!(trajectory.prediction.as_ref().unwrap().city, "Shanghai");
        assert!(!trajectory.forced_turn);
    }

    #[test]
    fn three_turn_episode_searches_then_answers() {
        let script = vec![
            ChatMessage::assistant_with_tool_calls(
                Some("Looks like a harbor-side cafe.".into()),
                vec![ToolCall::new(
                    "c1",
                    "poi_keyword_search",
                    json!({"keyword": "Harbor Cafe"}),
                )],
            ),
            ChatMessage::assistant_with_tool_calls(
                None,
                vec![ToolCall::new(
                    "c2",
                    "poi_detail_query",
                    json!({"poi_id": "p01"}),
                )],
            ),
            ChatMessage::assistant(answer_text(31.2286, 121.4554, "Shanghai")),
        ];
        let trajectory = run(script, &Budget::default());
        assert_eq!(trajectory.termination, Termination::Answered);
        assert_eq!(trajectory.steps.len(), 2);
        assert_eq!(trajectory.accounting.turns, 3);
        assert_eq!(
            trajectory.steps[0].hypothesis_text.as_deref(),
            Some("Looks like a harbor-side cafe.")
        );
        let prediction = trajectory.prediction.as_ref().unwrap();
        assert_eq!(prediction.point.lat(), 31.2286);
        // Every observation's call id matches its action.
        for step in &trajectory.steps {
            assert_eq!(
                step.action.as_ref().unwrap().call_id,
                step.observation.as_ref().unwrap().call_id
            );
        }
    }

    #[test]
    fn never_answering_script_hits_the_forced_turn() {
        let call = |i: usize| {
            ChatMessage::assistant_with_tool_calls(
                None,
                vec![ToolCall::new(
                    format!("c{i}"),
                    "poi_keyword_search",
                    json!({"keyword": "cafe"}),
                )],
            )
        };
        // 7 free tool turns; the 8th is forced and answers.
        let mut script: Vec<ChatMessage> = (0..7).map(call).collect();
        script.push(ChatMessage::assistant(answer_text(31.9, 120.2, "Nantong")));
        let trajectory = run(script, &Budget::default());
        assert_eq!(trajectory.termination, Termination::Answered);
        assert_eq!(trajectory.accounting.turns, 8);
        assert!(trajectory.forced_turn);

        // Same but the forced turn yields prose with no JSON.
        let mut script: Vec<ChatMessage> = (0..7).map(call).collect();
        script.push(ChatMessage::assistant("It could be anywhere."));
        let trajectory = run(script, &Budget::default());
        assert_eq!(trajectory.termination, Termination::Unparseable);
        assert!(trajectory.prediction.is_none());
        assert!(trajectory.forced_turn);

        // And a policy that still tries to call tools on the forced turn.
        let script: Vec<ChatMessage> = (0..8).map(call).collect();
        let trajectory = run(script, &Budget::default());
        assert_eq!(trajectory.termination, Termination::BudgetExhausted);
        assert!(trajectory.forced_turn);
        let last = trajectory.steps.last().unwrap();
        assert!(last.action.is_some());
        assert!(last.observation.is_none());
    }

    #[test]
    fn policy_failure_preserves_partial_trajectory() {
        let script = vec![ChatMessage::assistant_with_tool_calls(
            Some("searching".into()),
            vec![ToolCall::new(
                "c1",
                "poi_keyword_search",
                json!({"keyword": "cafe"}),
            )],
        )];
        // Script exhausts on turn 2 -> policy error.
        let trajectory = run(script, &Budget::default());
        assert_eq!(trajectory.termination, Termination::PolicyError);
        assert_eq!(trajectory.steps.len(), 1);
    }

    #[test]
    fn invalid_calls_become_error_observations_and_the_episode_recovers() {
        let script = vec![
            ChatMessage::assistant_with_tool_calls(
                None,
                vec![ToolCall::new("c1", "poi_keyword_search", json!({}))],
            ),
            ChatMessage::assistant(answer_text(31.2286, 121.4554, "Shanghai")),
        ];
        let trajectory = run(script, &Budget::default());
        assert_eq!(trajectory.termination, Termination::Answered);
        assert!(trajectory.steps[0].observation.as_ref().unwrap().is_error());
    }

    #[test]
    fn batched_calls_become_separate_steps_in_order() {
        let script = vec![
            ChatMessage::assistant_with_tool_calls(
                Some("Checking both.".into()),
                vec![
                    ToolCall::new("c1", "poi_keyword_search", json!({"keyword": "Harbor"})),
                    ToolCall::new("c2", "poi_detail_query", json!({"poi_id": "p02"})),
                ],
            ),
            ChatMessage::assistant(answer_text(31.9, 120.2, "Nantong")),
        ];
        let trajectory = run(script, &Budget::default());
        assert_eq!(trajectory.steps.len(), 2);
        assert_eq!(trajectory.steps[0].index, 0);
        assert_eq!(trajectory.steps[1].index, 1);
        assert_eq!(trajectory.steps[0].turn, trajectory.steps[1].turn);
        assert!(trajectory.steps[0].hypothesis_text.is_some());
        assert!(trajectory.steps[1].hypothesis_text.is_none());
    }

    #[test]
    fn oversized_observations_are_truncated_with_marker() {
        let budget = Budget {
            max_tool_response_chars: 64,
            ..Default::default()
        };
        let script = vec![
            ChatMessage::assistant_with_tool_calls(
                None,
                vec![ToolCall::new(
                    "c1",
                    "poi_keyword_search",
                    json!({"keyword": "cafe"}),
                )],
            ),
            ChatMessage::assistant(answer_text(31.2286, 121.4554, "Shanghai")),
        ];
        let trajectory = run(script, &budget);
        let observation = trajectory.steps[0].observation.as_ref().unwrap();
        assert!(observation.truncated);
        if let ToolOutput::Text { text } = &observation.output {
            assert!(text.chars().count() <= 64);
            assert!(text.ends_with("…[truncated]"));
        } else {
            panic!("expected text observation");
        }
    }

    #[test]
    fn wall_clock_exhaustion_forces_the_final_turn_early() {
        // Each clock read advances 40 ms, so the second turn's check sees
        // the 50 ms budget already spent.
        let clock = MockClock::with_tick(40);
        let budget = Budget {
            max_wall_ms: 50,
            ..Default::default()
        };
        let policy = ScriptedPolicy::new(vec![
            ChatMessage::assistant_with_tool_calls(
                None,
                vec![ToolCall::new(
                    "c1",
                    "poi_keyword_search",
                    json!({"keyword": "cafe"}),
                )],
            ),
            ChatMessage::assistant(answer_text(31.2286, 121.4554, "Shanghai")),
        ]);
        let trajectory = run_episode(
            &query(),
            &policy,
            &sample_map(),
            &default_registry(),
            &budget,
            &clock,
        );
        assert!(trajectory.forced_turn);
        assert_eq!(trajectory.termination, Termination::Answered);
        assert_eq!(trajectory.accounting.turns, 2);
    }

    #[test]
    fn truncate_text_respects_cap_and_unicode() {
        let (out, cut) = truncate_text("abcdef", 10);
        assert!(!cut);
        assert_eq!(out, "abcdef");
        let long = "héllo wörld ".repeat(100);
        let (out, cut) = truncate_text(&long, 40);
        assert!(cut);
        assert!(out.chars().count() <= 40);
        assert!(out.ends_with("…[truncated]"));
    }

    #[test]
    fn transcript_is_deterministic_and_covers_steps() {
        let script = vec![
            ChatMessage::assistant_with_tool_calls(
                Some("Harbor?".into()),
                vec![ToolCall::new(
                    "c1",
                    "poi_keyword_search",
                    json!({"keyword": "Harbor"}),
                )],
            ),
            ChatMessage::assistant(answer_text(31.2286, 121.4554, "Shanghai")),
        ];
        let a = run(script.clone(), &Budget::default());
        let b = run(script, &Budget::default());
        let transcript_a = serialize_trajectory(&a);
        let transcript_b = serialize_trajectory(&b);
        assert_eq!(transcript_a, transcript_b);
        assert!(transcript_a.contains("--- Step 0 ---"));
        assert!(transcript_a.contains("Hypothesis: Harbor?"));
        assert!(transcript_a.contains("Action: poi_keyword_search"));
        assert!(transcript_a.contains("Termination: answered"));
    }

    #[test]
    fn zero_step_transcript_has_only_the_final_section() {
        let trajectory = run(
            vec![ChatMessage::assistant(answer_text(
                31.2286, 121.4554, "Shanghai",
            ))],
            &Budget::default(),
        );
        let transcript = serialize_trajectory(&trajectory);
        assert!(!transcript.contains("--- Step"));
        assert!(transcript.contains("--- Final ---"));
    }

    #[test]
    fn candidate_pool_collects_and_labels_entries() {
        // One POI mentioned then confirmed.
        let script = vec![
            ChatMessage::assistant_with_tool_calls(
                None,
                vec![ToolCall::new(
                    "c1",
                    "poi_keyword_search",
                    json!({"keyword": "Harbor Cafe"}),
                )],
            ),
            ChatMessage::assistant(answer_text(31.2286, 121.4554, "Shanghai")),
        ];
        let trajectory = run(script, &Budget::default());
        let pool = extract_candidate_pool(&trajectory);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.entries[0].label, "Harbor Cafe");
        assert_eq!(pool.entries[0].status, CandidateStatus::Supported);

        // Two candidates: the far one is refuted by the final answer.
        let script = vec![
            ChatMessage::assistant_with_tool_calls(
                Some("Could be 31.9,120.2 or the harbor.".into()),
                vec![ToolCall::new(
                    "c1",
                    "poi_keyword_search",
                    json!({"keyword": "Harbor Cafe"}),
                )],
            ),
            ChatMessage::assistant(answer_text(31.2286, 121.4554, "Shanghai")),
        ];
        let trajectory = run(script, &Budget::default());
        let pool = extract_candidate_pool(&trajectory);
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.entries[0].status, CandidateStatus::Refuted);
        assert_eq!(pool.entries[1].status, CandidateStatus::Supported);
    }

    #[test]
    fn empty_trajectory_yields_empty_pool() {
        let trajectory = run(vec![ChatMessage::assistant("no idea")], &Budget::default());
        assert!(extract_candidate_pool(&trajectory).is_empty());
    }

    #[test]
    fn conversation_reconstruction_matches_step_structure() {
        let script = vec![
            ChatMessage::assistant_with_tool_calls(
                Some("hm".into()),
                vec![
                    ToolCall::new("c1", "poi_keyword_search", json!({"keyword": "Harbor"})),
                    ToolCall::new("c2", "poi_detail_query", json!({"poi_id": "p01"})),
                ],
            ),
            ChatMessage::assistant(answer_text(31.2286, 121.4554, "Shanghai")),
        ];
        let trajectory = run(script, &Budget::default());
        let messages = reconstruct_conversation(&trajectory);
        // user, assistant(batched calls), tool, tool, assistant(final)
        assert_eq!(messages.len(), 5);
        assert_eq!(messages[1].tool_calls.len(), 2);
        assert_eq!(messages[2].role, Role::Tool);
        assert_eq!(messages[4].text(), trajectory.final_text);
    }
}
