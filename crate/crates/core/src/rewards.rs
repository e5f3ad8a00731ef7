//! Per-sample reward assembly, group normalization, the optimality
//! probability transform, and pluggable judge-score providers.
//!
//! Judge ("MLLM") scores are produced behind the [`RewardProvider`] trait;
//! the shipped providers are a JSON-lines score file, a deterministic
//! synthetic oracle for the toy editing task, and a constant stub. Provider
//! scores arrive on a 0-10 rubric and are normalized to `[0, 1]` at the
//! provider boundary so the combination weights act on commensurate scales.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{EditMask, Grid2D};
use crate::metrics::{masked_psnr_norm, masked_ssim, MetricConfig, MetricError};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("metric error: {0}")]
    Metric(#[from] MetricError),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no score recorded for sample id {0:?}")]
    Lookup(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Weights combining the judge reward with the pixel-similarity reward.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardWeights {
    /// Weight of the judge (MLLM-style) reward.
    pub lambda_mllm: f64,
    /// Weight of the pixel-similarity reward.
    pub lambda_sim: f64,
    /// SSIM share inside the similarity reward; PSNR gets `1 - w_ssim`.
    pub w_ssim: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda_mllm: 0.8,
            lambda_sim: 0.2,
            w_ssim: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.lambda_mllm < 0.0 || self.lambda_sim < 0.0 {
            return Err(RewardError::InvalidArgument(
                "reward weights must be non-negative".into(),
            ));
        }
        if self.lambda_mllm + self.lambda_sim <= 0.0 {
            return Err(RewardError::InvalidArgument(
                "at least one reward weight must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.w_ssim) {
            return Err(RewardError::InvalidArgument(format!(
                "w_ssim must lie in [0, 1], got {}",
                self.w_ssim
            )));
        }
        Ok(())
    }
}

/// How the clipping scale `Z_c` of the optimality transform is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZcMode {
    /// Group standard deviation plus a small floor (default).
    #[default]
    Std,
    /// Largest centered magnitude plus a small floor.
    MaxAbs,
    /// A fixed constant.
    Fixed(f64),
}

const Z_C_FLOOR: f64 = 1e-8;

/// Rewards of one sample group through every stage of the pipeline.
#[derive(Debug, Clone)]
pub struct GroupRewards {
    pub raw: Vec<f64>,
    pub centered: Vec<f64>,
    pub optimality: Vec<f64>,
    pub z_c: f64,
}

/// Components of the pixel-similarity reward, kept for logging.
#[derive(Debug, Clone, Copy)]
pub struct SimRewardParts {
    pub ssim: f64,
    pub psnr_norm: f64,
    pub value: f64,
}

/// Pixel-similarity reward over the non-edit region: the `w_ssim`-weighted
/// mean of masked SSIM and normalized masked PSNR between sample and input.
pub fn sim_reward_parts(
    input: &Grid2D,
    sample: &Grid2D,
    edit_mask: &EditMask,
    cfg: &MetricConfig,
    w_ssim: f64,
) -> Result<SimRewardParts, RewardError> {
    let non_edit = edit_mask.complement();
    let ssim = masked_ssim(input, sample, &non_edit, cfg)?.value;
    let psnr = masked_psnr_norm(input, sample, &non_edit, cfg)?.value;
    Ok(SimRewardParts {
        ssim,
        psnr_norm: psnr,
        value: w_ssim * ssim + (1.0 - w_ssim) * psnr,
    })
}

pub fn sim_reward(
    input: &Grid2D,
    sample: &Grid2D,
    edit_mask: &EditMask,
    cfg: &MetricConfig,
    w_ssim: f64,
) -> Result<f64, RewardError> {
    Ok(sim_reward_parts(input, sample, edit_mask, cfg, w_ssim)?.value)
}

/// Linear combination of the judge and similarity rewards; the optimality
/// transform is applied separately after group normalization.
pub fn combine(r_mllm: f64, r_sim: f64, w: &RewardWeights) -> f64 {
    w.lambda_mllm * r_mllm + w.lambda_sim * r_sim
}

/// Subtract the group mean.
pub fn normalize_group(raw: &[f64]) -> Result<Vec<f64>, RewardError> {
    if raw.len() < 2 {
        return Err(RewardError::InvalidArgument(format!(
            "group normalization needs at least 2 samples, got {}",
            raw.len()
        )));
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.iter().map(|r| r - mean).collect())
}

/// Map mean-zero rewards to optimality probabilities
/// `0.5 + 0.5 * clip(c / Z_c, -1, 1)`.
pub fn optimality_probability(centered: &[f64], mode: ZcMode) -> (Vec<f64>, f64) {
    let z_c = match mode {
        ZcMode::Std => {
            let var = centered.iter().map(|c| c * c).sum::<f64>() / centered.len().max(1) as f64;
            var.sqrt() + Z_C_FLOOR
        }
        ZcMode::MaxAbs => centered.iter().fold(0.0f64, |m, c| m.max(c.abs())) + Z_C_FLOOR,
        ZcMode::Fixed(z) => z,
    };
    let opt = centered
        .iter()
        .map(|c| 0.5 + 0.5 * (c / z_c).clamp(-1.0, 1.0))
        .collect();
    (opt, z_c)
}

/// Run raw rewards through centering and the optimality transform.
pub fn group_rewards(raw: &[f64], mode: ZcMode) -> Result<GroupRewards, RewardError> {
    let centered = normalize_group(raw)?;
    let (optimality, z_c) = optimality_probability(&centered, mode);
    Ok(GroupRewards {
        raw: raw.to_vec(),
        centered,
        optimality,
        z_c,
    })
}

/// One reward request: a group of candidate samples for a single
/// (input, instruction) pair of the toy editing task.
pub struct RewardQuery<'a> {
    pub input: &'a Grid2D,
    pub samples: &'a [Grid2D],
    pub sample_ids: &'a [String],
    pub edit_mask: &'a EditMask,
    /// Instructed intensity for the edit region.
    pub target_intensity: f64,
    /// Gap in edit-region mean intensity that drives the oracle score to 0.
    pub target_scale: f64,
}

/// Source of judge scores in `[0, 1]`, one per sample.
///
/// Implementations must be deterministic for a fixed configuration and safe
/// to query concurrently.
pub trait RewardProvider: Send + Sync {
    fn score(&self, query: &RewardQuery) -> Result<Vec<f64>, RewardError>;
    /// Stable identifier used in reward-cache keys.
    fn id(&self) -> &str;
}

#[derive(Debug, Deserialize)]
struct ScoreRecord {
    id: String,
    score: f64,
}

/// Parse a JSON-lines score file of `{"id": ..., "score": ...}` records.
///
/// Returns records in file order; scores are on the 0-10 rubric.
pub fn read_score_file(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>, RewardError> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(line).map_err(|e| RewardError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !rec.score.is_finite() {
            return Err(RewardError::Parse {
                line: i + 1,
                message: format!("score {} is not finite", rec.score),
            });
        }
        out.push((rec.id, rec.score));
    }
    Ok(out)
}

/// Judge scores served from a JSON-lines file keyed by sample id.
///
/// Duplicate ids keep the last entry and emit a warning on stderr.
#[derive(Debug)]
pub struct FileBackedProvider {
    scores: HashMap<String, f64>,
}

impl FileBackedProvider {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, RewardError> {
        let records = read_score_file(path.as_ref())?;
        let mut scores = HashMap::with_capacity(records.len());
        for (id, score) in records {
            if scores.insert(id.clone(), score).is_some() {
                eprintln!(
                    "warning: duplicate score for id {id:?} in {}; keeping the last entry",
                    path.as_ref().display()
                );
            }
        }
        Ok(FileBackedProvider { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl RewardProvider for FileBackedProvider {
    fn score(&self, query: &RewardQuery) -> Result<Vec<f64>, RewardError> {
        query
            .sample_ids
            .iter()
            .map(|id| {
                self.scores
                    .get(id)
                    .map(|s| s / 10.0)
                    .ok_or_else(|| RewardError::Lookup(id.clone()))
            })
            .collect()
    }

    fn id(&self) -> &str {
        "file"
    }
}

/// Deterministic stand-in for a remote judge on the toy editing task: scores
/// how close the sample's edit-region mean intensity is to the instructed
/// target.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticOracle;

impl SyntheticOracle {
    pub fn score_sample(
        sample: &Grid2D,
        edit_mask: &EditMask,
        target_intensity: f64,
        target_scale: f64,
    ) -> Result<f64, RewardError> {
        let active = edit_mask.active_count();
        if active == 0 {
            return Err(RewardError::InvalidArgument(
                "oracle scoring requires a non-empty edit region".into(),
            ));
        }
        if !target_scale.is_finite() || target_scale <= 0.0 {
            return Err(RewardError::InvalidArgument(format!(
                "target_scale must be positive, got {target_scale}"
            )));
        }
        let mut sum = 0.0;
        for (&v, &m) in sample.values().iter().zip(edit_mask.bits()) {
            if m == 1 {
                sum += v;
            }
        }
        let mean = sum / active as f64;
        Ok((1.0 - (mean - target_intensity).abs() / target_scale).clamp(0.0, 1.0))
    }
}

impl RewardProvider for SyntheticOracle {
    fn score(&self, query: &RewardQuery) -> Result<Vec<f64>, RewardError> {
        query
            .samples
            .iter()
            .map(|s| {
                SyntheticOracle::score_sample(
                    s,
                    query.edit_mask,
                    query.target_intensity,
                    query.target_scale,
                )
            })
            .collect()
    }

    fn id(&self) -> &str {
        "oracle"
    }
}

/// Provider returning the same score for every sample.
#[derive(Debug, Clone, Copy)]
pub struct ConstantProvider(pub f64);

impl RewardProvider for ConstantProvider {
    fn score(&self, query: &RewardQuery) -> Result<Vec<f64>, RewardError> {
        Ok(vec![self.0; query.samples.len()])
    }

    fn id(&self) -> &str {
        "constant"
    }
}

/// Memoizes provider scores within an iteration, keyed by
/// (sample content hash, provider id).
#[derive(Debug, Default)]
pub struct RewardCache {
    map: HashMap<(u64, String), f64>,
}

impl RewardCache {
    pub fn new() -> Self {
        RewardCache::default()
    }

    pub fn get(&self, sample: &Grid2D, provider_id: &str) -> Option<f64> {
        self.map
            .get(&(sample.content_hash(), provider_id.to_string()))
            .copied()
    }

    pub fn insert(&mut self, sample: &Grid2D, provider_id: &str, score: f64) {
        self.map
            .insert((sample.content_hash(), provider_id.to_string()), score);
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
