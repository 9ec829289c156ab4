//! Parallel test-time scaling: sample N independent episodes, let a verifier
//! aggregate them into one final prediction, and compute the best@N oracle
//! and pass@K estimates.

use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_episode, serialize_trajectory, Budget, GeoQuery, Trajectory};
use crate::clock::Clock;
use crate::geo::{parse_prediction, GeoPoint, Prediction};
use crate::llm::{ChatMessage, PolicyClient};
use crate::map::MapBackend;
use crate::prompts::VERIFIER_PROMPT;
use crate::protocol::ToolRegistry;

pub const PARALLEL_RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum TtsError {
    #[error("no answered trajectory: the oracle is undefined")]
    NoAnsweredTrajectory,
    #[error("invalid K={k} for N={n} samples")]
    InvalidK { k: usize, n: usize },
    #[error("no samples")]
    EmptySamples,
}

/// One query's parallel samples plus the verifier outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParallelRun {
    pub schema_version: u32,
    pub query_id: String,
    pub n: usize,
    pub trajectories: Vec<Trajectory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verifier_prediction: Option<Prediction>,
    pub verifier_transcript: String,
    pub verifier_fallback: bool,
    pub verifier_model: String,
}

/// Bounded-concurrency permit counter.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.available.notify_one();
    }
}

/// Runs one episode per policy handle with shared configuration and
/// independent state. Results are stored by sample slot, so completion order
/// never affects output. Individual failures stay in-place as
/// `policy_error` trajectories.
pub fn sample_parallel(
    query: &GeoQuery,
    policies: &[Arc<dyn PolicyClient>],
    env: &dyn MapBackend,
    registry: &ToolRegistry,
    budget: &Budget,
    clock: &dyn Clock,
    fanout: usize,
) -> Vec<Trajectory> {
    let semaphore = Semaphore::new(fanout);
    let slots: Mutex<Vec<Option<Trajectory>>> = Mutex::new(vec![None; policies.len()]);
    std::thread::scope(|scope| {
        for (slot, policy) in policies.iter().enumerate() {
            let semaphore = &semaphore;
            let slots = &slots;
            let policy = Arc::clone(policy);
            scope.spawn(move || {
                semaphore.acquire();
                let trajectory = run_episode(query, policy.as_ref(), env, registry, budget, clock);
                semaphore.release();
                slots.lock().unwrap()[slot] = Some(trajectory);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|t| t.expect("every slot completes"))
        .collect()
}

/// Builds the verifier conversation: the instruction as the system message,
/// then the original query image, the original task, and each trajectory's
/// transcript labeled Candidate 1..N. Map images are referenced inside the
/// transcripts but not re-attached.
pub fn build_verifier_prompt(
    query: &GeoQuery,
    trajectories: &[Trajectory],
    instruction: &str,
) -> Vec<ChatMessage> {
    let mut body = String::from("Original task:\n");
    body.push_str(&query.instruction);
    body.push('\n');
    for (i, trajectory) in trajectories.iter().enumerate() {
        body.push_str(&format!("\n===== Candidate {} =====\n", i + 1));
        body.push_str(&serialize_trajectory(trajectory));
    }
    vec![
        ChatMessage::system(instruction),
        ChatMessage::user_with_image(query.image.clone(), body),
    ]
}

#[derive(Debug, Clone)]
pub struct VerifiedAnswer {
    pub prediction: Prediction,
    /// Set when the verifier's output was unparseable and the answer fell
    /// back to the first answered candidate.
    pub fallback: bool,
    pub verifier_text: String,
}

/// Asks the verifier to aggregate the candidates. The verifier may emit
/// coordinates that match no candidate; they are returned verbatim. A
/// verifier whose output cannot be parsed falls back to the first answered
/// candidate's prediction.
pub fn verify(
    query: &GeoQuery,
    trajectories: &[Trajectory],
    verifier: &dyn PolicyClient,
) -> Result<VerifiedAnswer, TtsError> {
    let first_answered = trajectories
        .iter()
        .find(|t| t.answered())
        .ok_or(TtsError::NoAnsweredTrajectory)?;
    let messages = build_verifier_prompt(query, trajectories, VERIFIER_PROMPT);
    let outcome = verifier.chat(&messages, &[]);
    match outcome {
        Ok(response) => {
            let text = response.message.text();
            match parse_prediction(&text) {
                Ok(prediction) => Ok(VerifiedAnswer {
                    prediction,
                    fallback: false,
                    verifier_text: text,
                }),
                Err(_) => {
                    log::warn!(
                        "verifier for {} returned no parseable answer; falling back",
                        query.id
                    );
                    Ok(VerifiedAnswer {
                        prediction: first_answered.prediction.clone().expect("answered"),
                        fallback: true,
                        verifier_text: text,
                    })
                }
            }
        }
        Err(err) => {
            log::warn!("verifier for {} failed: {err}; falling back", query.id);
            Ok(VerifiedAnswer {
                prediction: first_answered.prediction.clone().expect("answered"),
                fallback: true,
                verifier_text: String::new(),
            })
        }
    }
}

/// Minimum geodesic error over answered slots and the slot that achieves it;
/// unanswered slots count as `+inf` and ties break toward the lowest slot.
pub fn best_at_n(
    trajectories: &[Trajectory],
    ground_truth: GeoPoint,
) -> Result<(f64, usize), TtsError> {
    if !trajectories.iter().any(|t| t.answered()) {
        return Err(TtsError::NoAnsweredTrajectory);
    }
    let (slot, error) = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| (i, t.error_vs(ground_truth)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
        .expect("non-empty by the answered check");
    Ok((error, slot))
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= 64 {
        let mut numerator: u128 = 1;
        let mut denominator: u128 = 1;
        for i in 0..k {
            numerator *= (n - i) as u128;
            denominator *= (i + 1) as u128;
        }
        (numerator / denominator) as f64
    } else {
        let mut out = 1.0f64;
        for i in 0..k {
            out *= (n - i) as f64 / (i + 1) as f64;
        }
        out
    }
}

/// Unbiased pass@K over per-sample error vectors: with `c` of `n` slots
/// below the threshold, a sample contributes `1 − C(n−c, k)/C(n, k)`; the
/// result is the mean across samples. For `k = n` this reduces to the
/// indicator that the best slot is below the threshold.
pub fn pass_at_k(
    per_sample_errors: &[Vec<f64>],
    k: usize,
    threshold: f64,
) -> Result<f64, TtsError> {
    if per_sample_errors.is_empty() {
        return Err(TtsError::EmptySamples);
    }
    let mut total = 0.0;
    for errors in per_sample_errors {
        let n = errors.len();
        if k < 1 || k > n {
            return Err(TtsError::InvalidK { k, n });
        }
        let correct = errors.iter().filter(|&&e| e < threshold).count();
        total += 1.0 - binomial(n - correct, k) / binomial(n, k);
    }
    Ok(total / per_sample_errors.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Accounting, Termination, TRAJECTORY_SCHEMA_VERSION};
    use crate::clock::MockClock;
    use crate::images::banded_test_image;
    use crate::llm::{ImageRef, ScriptedPolicy};
    use crate::map::{SimConfig, SimulatedMap};
    use crate::protocol::default_registry;

    fn query() -> GeoQuery {
        GeoQuery::new("q1", Arc::new(banded_test_image(16, 16)))
    }

    fn synthetic_trajectory(id: &str, prediction: Option<Prediction>) -> Trajectory {
        Trajectory {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            query_id: id.into(),
            instruction: "find it".into(),
            region_hint: None,
            query_image: ImageRef::new("query", Arc::new(banded_test_image(4, 4))),
            steps: Vec::new(),
            final_text: prediction
                .as_ref()
                .map(|p| serde_json::to_string(p).unwrap())
                .unwrap_or_default(),
            termination: if prediction.is_some() {
                Termination::Answered
            } else {
                Termination::Unparseable
            },
            prediction,
            forced_turn: false,
            accounting: Accounting::default(),
            ground_truth: None,
        }
    }

    fn pred(lat: f64, lon: f64) -> Prediction {
        Prediction::new(GeoPoint::new(lat, lon).unwrap(), "", "")
    }

    fn empty_map() -> SimulatedMap {
        SimulatedMap::new(Vec::new(), SimConfig::default())
    }

    fn answer_message(lat: f64, lon: f64) -> ChatMessage {
        ChatMessage::assistant(format!(
            "{{\"lat\": {lat}, \"lon\": {lon}, \"city\": \"\", \"country\": \"\"}}"
        ))
    }

    #[test]
    fn n1_matches_a_single_episode() {
        let script = vec![answer_message(10.0, 20.0)];
        let policies: Vec<Arc<dyn PolicyClient>> =
            vec![Arc::new(ScriptedPolicy::new(script.clone()))];
        let clock = MockClock::new();
        let parallel = sample_parallel(
            &query(),
            &policies,
            &empty_map(),
            &default_registry(),
            &Budget::default(),
            &clock,
            4,
        );
        let single = run_episode(
            &query(),
            &ScriptedPolicy::new(script),
            &empty_map(),
            &default_registry(),
            &Budget::default(),
            &MockClock::new(),
        );
        assert_eq!(parallel.len(), 1);
        assert_eq!(parallel[0], single);
    }

    #[test]
    fn slots_follow_script_assignment_regardless_of_completion_order() {
        let policies: Vec<Arc<dyn PolicyClient>> = (0..4)
            .map(|i| {
                Arc::new(ScriptedPolicy::new(vec![answer_message(i as f64, 0.0)]))
                    as Arc<dyn PolicyClient>
            })
            .collect();
        let clock = MockClock::new();
        let trajectories = sample_parallel(
            &query(),
            &policies,
            &empty_map(),
            &default_registry(),
            &Budget::default(),
            &clock,
            2,
        );
        for (slot, trajectory) in trajectories.iter().enumerate() {
            assert_eq!(
                trajectory.prediction.as_ref().unwrap().point.lat(),
                slot as f64
            );
        }
    }

    #[test]
    fn one_failed_slot_does_not_sink_the_run() {
        let policies: Vec<Arc<dyn PolicyClient>> = vec![
            Arc::new(ScriptedPolicy::new(vec![answer_message(1.0, 2.0)])),
            // Empty script: fails immediately with a policy error.
            Arc::new(ScriptedPolicy::new(Vec::new())),
        ];
        let clock = MockClock::new();
        let trajectories = sample_parallel(
            &query(),
            &policies,
            &empty_map(),
            &default_registry(),
            &Budget::default(),
            &clock,
            2,
        );
        assert!(trajectories[0].answered());
        assert_eq!(trajectories[1].termination, Termination::PolicyError);
    }

    #[test]
    fn verifier_prompt_has_one_candidate_section_per_trajectory() {
        let trajectories = vec![
            synthetic_trajectory("q1", Some(pred(1.0, 2.0))),
            synthetic_trajectory("q1", Some(pred(3.0, 4.0))),
        ];
        let messages = build_verifier_prompt(&query(), &trajectories, VERIFIER_PROMPT);
        assert_eq!(messages.len(), 2);
        let body = messages[1].text();
        assert_eq!(body.matches("===== Candidate").count(), 2);
        assert!(body.contains("===== Candidate 1 ====="));
        assert!(body.contains("===== Candidate 2 ====="));
        let image_parts = messages[1]
            .content
            .iter()
            .filter(|p| matches!(p, crate::llm::ContentPart::Image { .. }))
            .count();
        assert_eq!(image_parts, 1);

        let single = build_verifier_prompt(&query(), &trajectories[..1], VERIFIER_PROMPT);
        assert_eq!(single[1].text().matches("===== Candidate").count(), 1);
    }

    #[test]
    fn verifier_echo_selects_a_candidate() {
        let trajectories = vec![
            synthetic_trajectory("q1", Some(pred(1.0, 2.0))),
            synthetic_trajectory("q1", Some(pred(3.0, 4.0))),
        ];
        let echo = ScriptedPolicy::new(vec![ChatMessage::assistant(
            serde_json::to_string(trajectories[1].prediction.as_ref().unwrap()).unwrap(),
        )]);
        let answer = verify(&query(), &trajectories, &echo).unwrap();
        assert!(!answer.fallback);
        assert_eq!(answer.prediction.point.lat(), 3.0);
    }

    #[test]
    fn verifier_may_emit_fresh_coordinates() {
        let trajectories = vec![synthetic_trajectory("q1", Some(pred(1.0, 2.0)))];
        let fresh = ScriptedPolicy::new(vec![answer_message(48.85, 2.35)]);
        let answer = verify(&query(), &trajectories, &fresh).unwrap();
        assert!(!answer.fallback);
        assert_eq!(answer.prediction.point.lat(), 48.85);
    }

    #[test]
    fn prose_only_verifier_falls_back_to_first_answered() {
        let trajectories = vec![
            synthetic_trajectory("q1", None),
            synthetic_trajectory("q1", Some(pred(7.0, 8.0))),
        ];
        let prose = ScriptedPolicy::new(vec![ChatMessage::assistant("candidate 2 looks right")]);
        let answer = verify(&query(), &trajectories, &prose).unwrap();
        assert!(answer.fallback);
        assert_eq!(answer.prediction.point.lat(), 7.0);

        let none_answered = vec![synthetic_trajectory("q1", None)];
        let still_prose = ScriptedPolicy::new(vec![ChatMessage::assistant("hm")]);
        assert_eq!(
            verify(&query(), &none_answered, &still_prose).unwrap_err(),
            TtsError::NoAnsweredTrajectory
        );
    }

    #[test]
    fn best_at_n_takes_the_minimum_with_slot_ties_low() {
        let truth = GeoPoint::new(0.0, 0.0).unwrap();
        // Offsets north by ~1.2 km and ~300 m.
        let t = vec![
            synthetic_trajectory("q", Some(pred(0.0108, 0.0))),
            synthetic_trajectory("q", Some(pred(0.0027, 0.0))),
        ];
        let (error, slot) = best_at_n(&t, truth).unwrap();
        assert_eq!(slot, 1);
        assert!((error - 300.0).abs() < 2.0, "error {error}");

        let t = vec![
            synthetic_trajectory("q", Some(pred(0.0045, 0.0))),
            synthetic_trajectory("q", Some(pred(0.0045, 0.0))),
            synthetic_trajectory("q", Some(pred(0.0018, 0.0))),
            synthetic_trajectory("q", None),
        ];
        let (error, slot) = best_at_n(&t, truth).unwrap();
        assert_eq!(slot, 2);
        assert!((error - 200.0).abs() < 2.0, "error {error}");

        let unanswered = vec![synthetic_trajectory("q", None)];
        assert_eq!(
            best_at_n(&unanswered, truth).unwrap_err(),
            TtsError::NoAnsweredTrajectory
        );
    }

    #[test]
    fn pass_at_k_matches_hand_counts() {
        // All four correct: pass@1 = 1.
        assert_eq!(
            pass_at_k(&[vec![0.0, 0.0, 0.0, 0.0]], 1, 500.0).unwrap(),
            1.0
        );
        // None correct: always 0.
        for k in 1..=4 {
            assert_eq!(
                pass_at_k(&[vec![1e9, 1e9, 1e9, 1e9]], k, 500.0).unwrap(),
                0.0
            );
        }
        // N=4, c=2, K=2: 1 - C(2,2)/C(4,2) = 5/6.
        let sample = vec![vec![0.0, 0.0, 1e9, 1e9]];
        let got = pass_at_k(&sample, 2, 500.0).unwrap();
        assert!((got - 5.0 / 6.0).abs() < 1e-12);
        // K out of range.
        assert_eq!(
            pass_at_k(&sample, 5, 500.0).unwrap_err(),
            TtsError::InvalidK { k: 5, n: 4 }
        );
        assert_eq!(pass_at_k(&[], 1, 500.0).unwrap_err(), TtsError::EmptySamples);
    }

    #[test]
    fn pass_at_k_is_monotone_in_k_and_pass_at_1_is_mean_accuracy() {
        let samples = vec![
            vec![100.0, 900.0, 1e9, 200.0],
            vec![1e9, 1e9, 300.0, 1e9],
            vec![1e9, 1e9, 1e9, 1e9],
        ];
        let mut previous = 0.0;
        for k in 1..=4 {
            let value = pass_at_k(&samples, k, 500.0).unwrap();
            assert!(value + 1e-12 >= previous, "pass@{k} decreased");
            previous = value;
        }
        let p1 = pass_at_k(&samples, 1, 500.0).unwrap();
        let mean_acc = (2.0 / 4.0 + 1.0 / 4.0 + 0.0) / 3.0;
        assert!((p1 - mean_acc).abs() < 1e-12);
    }
}
