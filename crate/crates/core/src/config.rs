//! Run configuration: one JSON document with sections
//! `{train, nft, rewards, metrics, task}`, every field optional with the
//! shipped defaults. Unknown keys are rejected with every offending key
//! listed, and CLI `--set a.b=value` overrides patch the document before it
//! is parsed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::grid::GaussianWindow;
use crate::metrics::MetricConfig;
use crate::rewards::{
    ConstantProvider, FileBackedProvider, RewardError, RewardProvider, SyntheticOracle, ZcMode,
};
use crate::trainer::{ToyTaskPool, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config is not valid JSON: {0}")]
    Json(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid value for {key}: {message}")]
    InvalidValue { key: String, message: String },
    #[error("invalid override {0:?}: expected dotted.key=value")]
    InvalidOverride(String),
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("{0}")]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub iterations: Option<usize>,
    pub group_size: Option<usize>,
    pub prompts_per_iteration: Option<usize>,
    pub batch_size: Option<usize>,
    pub ema_eta: Option<f64>,
    pub t_epsilon: Option<f64>,
    pub sampler_steps: Option<usize>,
    pub pretrain_steps: Option<usize>,
    pub pretrain_learning_rate: Option<f64>,
    pub pretrain_edit_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub deterministic: Option<bool>,
    pub hidden_dims: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NftSection {
    pub beta: Option<f64>,
    pub tau_plus: Option<f64>,
    pub lambda_ner: Option<f64>,
    pub lambda_er: Option<f64>,
    pub kl_weight: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RewardsSection {
    pub lambda_mllm: Option<f64>,
    pub lambda_sim: Option<f64>,
    pub w_ssim: Option<f64>,
    /// One of "oracle", "constant", or "file".
    pub provider: Option<String>,
    /// JSON-lines score file for the "file" provider.
    pub score_path: Option<String>,
    /// Score returned by the "constant" provider, on the 0-1 scale.
    pub constant_value: Option<f64>,
    pub target_scale: Option<f64>,
    pub z_c_mode: Option<ZcMode>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub tau_db: Option<f64>,
    pub max_intensity: Option<f64>,
    pub window_size: Option<usize>,
    pub window_sigma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    /// Toy grid side length.
    pub n: Option<usize>,
    /// Number of distinct tasks in the pool.
    pub count: Option<usize>,
    pub square_size_min: Option<usize>,
    pub square_size_max: Option<usize>,
    pub dilation_radius: Option<usize>,
    pub object_intensity_min: Option<f64>,
    pub object_intensity_max: Option<f64>,
    pub target_intensity_min: Option<f64>,
    pub target_intensity_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainSection,
    pub nft: NftSection,
    pub rewards: RewardsSection,
    pub metrics: MetricsSection,
    pub task: TaskSection,
}

/// Known keys per section, used to report every unknown key at once.
const SCHEMA: &[(&str, &[&str])] = &[
    (
        "train",
        &[
            "learning_rate",
            "iterations",
            "group_size",
            "prompts_per_iteration",
            "batch_size",
            "ema_eta",
            "t_epsilon",
            "sampler_steps",
            "pretrain_steps",
            "pretrain_learning_rate",
            "pretrain_edit_fraction",
            "seed",
            "deterministic",
            "hidden_dims",
        ],
    ),
    (
        "nft",
        &["beta", "tau_plus", "lambda_ner", "lambda_er", "kl_weight"],
    ),
    (
        "rewards",
        &[
            "lambda_mllm",
            "lambda_sim",
            "w_ssim",
            "provider",
            "score_path",
            "constant_value",
            "target_scale",
            "z_c_mode",
        ],
    ),
    (
        "metrics",
        &["tau_db", "max_intensity", "window_size", "window_sigma"],
    ),
    (
        "task",
        &[
            "n",
            "count",
            "square_size_min",
            "square_size_max",
            "dilation_radius",
            "object_intensity_min",
            "object_intensity_max",
            "target_intensity_min",
            "target_intensity_max",
        ],
    ),
];

fn collect_unknown_keys(doc: &Value) -> Vec<String> {
    let mut unknown = Vec::new();
    let Some(root) = doc.as_object() else {
        return vec!["<root is not an object>".to_string()];
    };
    for (section, value) in root {
        match SCHEMA.iter().find(|(name, _)| name == section) {
            None => unknown.push(section.clone()),
            Some((_, keys)) => {
                let Some(obj) = value.as_object() else {
                    unknown.push(format!("{section} (not an object)"));
                    continue;
                };
                for key in obj.keys() {
                    if !keys.contains(&key.as_str()) {
                        unknown.push(format!("{section}.{key}"));
                    }
                }
            }
        }
    }
    unknown.sort();
    unknown
}

/// Apply one `dotted.key=value` override to the JSON document. Values parse
/// as JSON when possible and fall back to strings.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw_value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::InvalidOverride(assignment.to_string()))?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::InvalidOverride(assignment.to_string()));
    }
    let value: Value = serde_json::from_str(raw_value)
        .unwrap_or_else(|_| Value::String(raw_value.to_string()));
    let mut cursor = doc;
    for seg in &segments[..segments.len() - 1] {
        if !cursor.is_object() {
            return Err(ConfigError::InvalidOverride(assignment.to_string()));
        }
        cursor = cursor
            .as_object_mut()
            .unwrap()
            .entry(seg.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let last = segments[segments.len() - 1];
    cursor
        .as_object_mut()
        .ok_or_else(|| ConfigError::InvalidOverride(assignment.to_string()))?
        .insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parse a config document, rejecting unknown keys (all listed at once).
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        RunConfig::from_value(doc)
    }

    pub fn from_value(doc: Value) -> Result<Self, ConfigError> {
        let unknown = collect_unknown_keys(&doc);
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        serde_json::from_value(doc).map_err(|e| ConfigError::Json(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        RunConfig::from_json(&fs::read_to_string(path.as_ref())?)
    }

    /// Load, apply `--set` overrides, then parse.
    pub fn from_path_with_overrides(
        path: impl AsRef<Path>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path.as_ref())?;
        let mut doc: Value =
            serde_json::from_str(&text).map_err(|e| ConfigError::Json(e.to_string()))?;
        for assignment in overrides {
            apply_override(&mut doc, assignment)?;
        }
        RunConfig::from_value(doc)
    }

    /// Resolve the train config, starting from the shipped defaults.
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        let t = &self.train;
        if let Some(v) = t.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = t.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = t.group_size {
            cfg.group_size = v;
        }
        if let Some(v) = t.prompts_per_iteration {
            cfg.prompts_per_iteration = v;
        }
        if let Some(v) = t.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = t.ema_eta {
            cfg.ema_eta = v;
        }
        if let Some(v) = t.t_epsilon {
            cfg.t_epsilon = v;
        }
        if let Some(v) = t.sampler_steps {
            cfg.sampler_steps = v;
        }
        if let Some(v) = t.pretrain_steps {
            cfg.pretrain_steps = v;
        }
        if let Some(v) = t.pretrain_learning_rate {
            cfg.pretrain_learning_rate = v;
        }
        if let Some(v) = t.pretrain_edit_fraction {
            cfg.pretrain_edit_fraction = v;
        }
        if let Some(v) = t.seed {
            cfg.seed = v;
        }
        if let Some(v) = t.deterministic {
            cfg.deterministic = v;
        }
        if let Some(v) = &t.hidden_dims {
            cfg.hidden_dims = v.clone();
        }
        let n = &self.nft;
        if let Some(v) = n.beta {
            cfg.nft.beta = v;
        }
        if let Some(v) = n.tau_plus {
            cfg.nft.tau_plus = v;
        }
        if let Some(v) = n.lambda_ner {
            cfg.nft.lambda_ner = v;
        }
        if let Some(v) = n.lambda_er {
            cfg.nft.lambda_er = v;
        }
        if let Some(v) = n.kl_weight {
            cfg.nft.kl_weight = v;
        }
        let r = &self.rewards;
        if let Some(v) = r.lambda_mllm {
            cfg.reward_weights.lambda_mllm = v;
        }
        if let Some(v) = r.lambda_sim {
            cfg.reward_weights.lambda_sim = v;
        }
        if let Some(v) = r.w_ssim {
            cfg.reward_weights.w_ssim = v;
        }
        if let Some(v) = r.target_scale {
            cfg.target_scale = v;
        }
        if let Some(v) = r.z_c_mode {
            cfg.z_c_mode = v;
        }
        cfg
    }

    /// Resolve the metric config.
    pub fn metric_config(&self) -> Result<MetricConfig, ConfigError> {
        let mut cfg = MetricConfig::default();
        if let Some(v) = self.metrics.max_intensity {
            cfg = MetricConfig::for_max_intensity(v);
        }
        if let Some(v) = self.metrics.tau_db {
            cfg.tau_db = v;
        }
        let size = self.metrics.window_size.unwrap_or(cfg.window.size());
        let sigma = self.metrics.window_sigma.unwrap_or(cfg.window.sigma());
        cfg.window = GaussianWindow::new(size, sigma).map_err(|e| ConfigError::InvalidValue {
            key: "metrics.window_size/window_sigma".into(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| ConfigError::InvalidValue {
            key: "metrics".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Resolve the reward provider named by `rewards.provider`.
    pub fn provider(&self) -> Result<Box<dyn RewardProvider>, ConfigError> {
        let name = self.rewards.provider.as_deref().unwrap_or("oracle");
        match name {
            "oracle" => Ok(Box::new(SyntheticOracle)),
            "constant" => Ok(Box::new(ConstantProvider(
                self.rewards.constant_value.unwrap_or(0.5),
            ))),
            "file" => {
                let path = self.rewards.score_path.as_deref().ok_or_else(|| {
                    ConfigError::InvalidValue {
                        key: "rewards.score_path".into(),
                        message: "required when rewards.provider is \"file\"".into(),
                    }
                })?;
                Ok(Box::new(FileBackedProvider::from_path(path)?))
            }
            other => Err(ConfigError::InvalidValue {
                key: "rewards.provider".into(),
                message: format!("unknown provider {other:?}, expected oracle, constant, or file"),
            }),
        }
    }

    /// Build the toy-task pool for training.
    pub fn task_pool(&self, seed: u64) -> Result<ToyTaskPool, ConfigError> {
        let n = self.task.n.unwrap_or(8);
        let count = self.task.count.unwrap_or(4);
        let size_min = self.task.square_size_min.unwrap_or(2);
        let size_max = self.task.square_size_max.unwrap_or(3);
        let dilation = self.task.dilation_radius.unwrap_or(1);
        let object = (
            self.task.object_intensity_min.unwrap_or(0.1),
            self.task.object_intensity_max.unwrap_or(0.3),
        );
        let target = (
            self.task.target_intensity_min.unwrap_or(0.7),
            self.task.target_intensity_max.unwrap_or(0.9),
        );
        Ok(ToyTaskPool::generate_with_intensities(
            seed, n, count, size_min, size_max, dilation, object, target,
        )?)
    }
}
