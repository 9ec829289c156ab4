//! Verifiable rewards and group-relative advantages over trajectory groups,
//! plus export of scored rollouts for an external trainer. The gradient
//! update itself (importance ratios, clipping, KL penalty) happens outside
//! this crate; optimizer settings ride along as export metadata only.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agent::{canonical_json, reconstruct_conversation, Trajectory};
use crate::geo::{reward_for_distance, GeoPoint, RewardLadder};

pub const ROLLOUT_SCHEMA_VERSION: u32 = 1;

/// Advantage normalization epsilon.
pub const ADVANTAGE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("group of {0} is too small for advantages; need at least 2")]
    GroupTooSmall(usize),
    #[error("reward error: {0}")]
    Reward(#[from] crate::geo::GeoError),
    #[error("failed to write rollouts to {path}: {source}")]
    Export {
        path: String,
        source: std::io::Error,
    },
}

/// Optimizer settings carried as metadata in exports: learning rate 1e-6,
/// KL coefficient 0.001, 2 epochs, batch 64, mini-batch 16, and the episode
/// caps used during sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub kl_coefficient: f64,
    pub epochs: u32,
    pub batch_size: u32,
    pub mini_batch_size: u32,
    pub max_response_tokens: u32,
    pub max_tool_response_tokens: u32,
    pub max_turns: u32,
    pub group_size: u32,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-6,
            kl_coefficient: 0.001,
            epochs: 2,
            batch_size: 64,
            mini_batch_size: 16,
            max_response_tokens: 4096,
            max_tool_response_tokens: 1024,
            max_turns: 8,
            group_size: 16,
        }
    }
}

/// A scored group of trajectories for one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub query_id: String,
    pub ground_truth: GeoPoint,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    /// Scores and normalizes a trajectory group in one step.
    pub fn build(
        query_id: impl Into<String>,
        ground_truth: GeoPoint,
        trajectories: Vec<Trajectory>,
        ladder: &RewardLadder,
    ) -> Result<Self, RlError> {
        let rewards = score_group(&trajectories, ground_truth, ladder)?;
        let advantages = group_advantages(&rewards)?;
        Ok(Self {
            query_id: query_id.into(),
            ground_truth,
            trajectories,
            rewards,
            advantages,
        })
    }
}

/// One reward per trajectory: the ladder applied to its geodesic error.
/// Unparseable episodes earn the terminal reward.
pub fn score_group(
    trajectories: &[Trajectory],
    ground_truth: GeoPoint,
    ladder: &RewardLadder,
) -> Result<Vec<f64>, RlError> {
    trajectories
        .iter()
        .map(|t| Ok(reward_for_distance(ladder, t.error_vs(ground_truth))?))
        .collect()
}

/// Group-relative advantages: `(r_i − mean) / (std + ε)` with the population
/// standard deviation. Groups with identical rewards map to exact zeros.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, RlError> {
    if rewards.len() < 2 {
        return Err(RlError::GroupTooSmall(rewards.len()));
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    Ok(rewards
        .iter()
        .map(|r| (r - mean) / (std + ADVANTAGE_EPSILON))
        .collect())
}

/// Writes one JSON-lines file: a header line with schema and trainer
/// metadata, then one record per trajectory ordered by (query id, slot).
/// Keys are sorted, so identical inputs produce identical bytes.
pub fn export_rollouts(
    groups: &[RolloutGroup],
    trainer_config: &TrainerConfig,
    path: &Path,
) -> Result<(), RlError> {
    let to_export_err = |source: std::io::Error| RlError::Export {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(to_export_err)?;
    let mut writer = std::io::BufWriter::new(file);

    let header = json!({
        "kind": "rollout_export_header",
        "schema_version": ROLLOUT_SCHEMA_VERSION,
        "advantage_estimator": {
            "kind": "group_mean_std",
            "epsilon": ADVANTAGE_EPSILON,
            "std": "population",
            // Centered-but-unnormalized rewards are a plausible variant;
            // downstream trainers can recover them as advantage * (std + eps).
            "normalized": true,
        },
        "trainer_config": trainer_config,
        "groups": groups.len(),
    });
    writeln!(writer, "{}", canonical_json(&header)).map_err(to_export_err)?;

    let mut ordered: Vec<&RolloutGroup> = groups.iter().collect();
    ordered.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    for (group_index, group) in ordered.iter().enumerate() {
        for (slot, trajectory) in group.trajectories.iter().enumerate() {
            let record = json!({
                "kind": "rollout",
                "query_id": group.query_id,
                "group_index": group_index,
                "slot": slot,
                "reward": group.rewards[slot],
                "advantage": group.advantages[slot],
                "termination": trajectory.termination.as_str(),
                "prediction": trajectory.prediction,
                "ground_truth": group.ground_truth,
                "conversation": reconstruct_conversation(trajectory),
                "accounting": trajectory.accounting,
            });
            writeln!(writer, "{}", canonical_json(&record)).map_err(to_export_err)?;
        }
    }
    writer.flush().map_err(to_export_err)
}
