//! Group-relative training loop: sample a group of candidate edits from a
//! frozen old policy, score them, turn scores into optimality probabilities,
//! optimize the region-regularized objective over a shuffled buffer, then
//! EMA-blend the old policy and clear the buffer — plus the synthetic
//! local-editing task that makes the loop verifiable at desk scale.
//!
//! Execution is serial and every random draw comes from named substreams of
//! the config seed, so runs replay bitwise from (config, seed).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowmodel::{fm_loss, interpolate, sample_ode, MlpVelocityField, ModelError};
use crate::grid::{EditMask, Grid2D, GridError};
use crate::metrics::MetricConfig;
use crate::nftloss::{total_objective, LossError, NftConfig, SampleContext};
use crate::rewards::{
    combine, group_rewards, sim_reward_parts, GroupRewards, RewardCache, RewardError,
    RewardProvider, RewardQuery, RewardWeights, ZcMode,
};
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("reward error: {0}")]
    Reward(#[from] RewardError),
    #[error("loss error: {0}")]
    Loss(#[from] LossError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("grid error: {0}")]
    Grid(#[from] GridError),
    #[error("non-finite value at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },
}

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Samples per prompt (the group size K).
    pub group_size: usize,
    pub prompts_per_iteration: usize,
    pub batch_size: usize,
    /// Old-policy EMA retention; 0 replaces the old policy each iteration.
    pub ema_eta: f64,
    /// Sampled diffusion times stay inside `[t_epsilon, 1 - t_epsilon]`.
    pub t_epsilon: f64,
    pub sampler_steps: usize,
    /// Flow-matching steps that build the pretrained reference policy the
    /// loop starts from.
    pub pretrain_steps: usize,
    pub pretrain_learning_rate: f64,
    /// How far toward the instructed intensity the pretraining targets move
    /// the edit region. Below 1 the reference is an under-editing model;
    /// the loop learns to finish the edits.
    pub pretrain_edit_fraction: f64,
    pub seed: u64,
    /// Serial, fixed-order execution for bitwise replays. This
    /// implementation always executes serially; the flag is recorded so
    /// configs and logs state the intent explicitly.
    pub deterministic: bool,
    /// Hidden layer widths of the velocity field.
    pub hidden_dims: Vec<usize>,
    /// Gap in edit-region mean intensity at which the oracle score hits 0.
    pub target_scale: f64,
    pub nft: NftConfig,
    pub reward_weights: RewardWeights,
    pub z_c_mode: ZcMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            iterations: 100,
            group_size: 12,
            prompts_per_iteration: 1,
            batch_size: 4,
            ema_eta: 0.0,
            t_epsilon: 0.01,
            sampler_steps: 10,
            pretrain_steps: 3000,
            pretrain_learning_rate: 0.02,
            pretrain_edit_fraction: 0.6,
            seed: 0,
            deterministic: true,
            hidden_dims: vec![32],
            target_scale: 1.0,
            nft: NftConfig::default(),
            reward_weights: RewardWeights::default(),
            z_c_mode: ZcMode::Std,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.group_size < 2 {
            return Err(TrainError::Config(format!(
                "group_size must be at least 2 for group normalization, got {}",
                self.group_size
            )));
        }
        if self.prompts_per_iteration == 0 {
            return Err(TrainError::Config("prompts_per_iteration must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_eta) {
            return Err(TrainError::Config(format!(
                "ema_eta must lie in [0, 1], got {}",
                self.ema_eta
            )));
        }
        if !self.t_epsilon.is_finite() || self.t_epsilon <= 0.0 || self.t_epsilon >= 0.5 {
            return Err(TrainError::Config(format!(
                "t_epsilon must lie in (0, 0.5), got {}",
                self.t_epsilon
            )));
        }
        if self.sampler_steps == 0 {
            return Err(TrainError::Config("sampler_steps must be positive".into()));
        }
        if !self.target_scale.is_finite() || self.target_scale <= 0.0 {
            return Err(TrainError::Config(format!(
                "target_scale must be positive, got {}",
                self.target_scale
            )));
        }
        if self.pretrain_steps > 0
            && (!self.pretrain_learning_rate.is_finite() || self.pretrain_learning_rate <= 0.0)
        {
            return Err(TrainError::Config(format!(
                "pretrain_learning_rate must be positive, got {}",
                self.pretrain_learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.pretrain_edit_fraction) {
            return Err(TrainError::Config(format!(
                "pretrain_edit_fraction must lie in [0, 1], got {}",
                self.pretrain_edit_fraction
            )));
        }
        self.nft
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        self.reward_weights
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Number of instruction features appended to the flattened input latent.
pub const INSTRUCTION_CODE_LEN: usize = 4;

fn instruction_code(target_intensity: f64) -> Vec<f64> {
    vec![
        target_intensity,
        1.0 - target_intensity,
        target_intensity - 0.5,
        1.0,
    ]
}

/// Placement and intensities of the square object of a toy task.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SquareSpec {
    pub row: usize,
    pub col: usize,
    pub size: usize,
    /// Intensity the square has in the input image.
    pub object_intensity: f64,
    /// Intensity the instruction asks for.
    pub target_intensity: f64,
    /// Mask dilation radius around the square.
    pub dilation_radius: usize,
}

/// A synthetic local-editing problem: a textured background with a square
/// object, an edit mask over the (dilated) square, and an instructed target
/// intensity for the edit region.
#[derive(Debug, Clone)]
pub struct ToyEditTask {
    pub n: usize,
    pub input: Grid2D,
    pub edit_mask: EditMask,
    pub target_intensity: f64,
    pub instruction_code: Vec<f64>,
}

impl ToyEditTask {
    pub fn latent_dim(&self) -> usize {
        self.n * self.n
    }

    pub fn cond_dim(&self) -> usize {
        self.latent_dim() + INSTRUCTION_CODE_LEN
    }

    /// Condition vector: flattened input latent followed by the instruction
    /// code.
    pub fn condition(&self) -> Vec<f64> {
        let mut cond = Vec::with_capacity(self.cond_dim());
        cond.extend_from_slice(self.input.values());
        cond.extend_from_slice(&self.instruction_code);
        cond
    }

    pub fn input_latent(&self) -> &[f64] {
        self.input.values()
    }
}

/// Build a reproducible toy task: seeded background texture, square object,
/// mask over the dilated square.
pub fn generate_toy_task(seed: u64, n: usize, spec: &SquareSpec) -> Result<ToyEditTask, TrainError> {
    if n == 0 {
        return Err(TrainError::Config("grid size must be positive".into()));
    }
    if spec.size == 0 || spec.row + spec.size > n || spec.col + spec.size > n {
        return Err(TrainError::Config(format!(
            "square {}x{} at ({}, {}) does not fit a {n}x{n} grid",
            spec.size, spec.size, spec.row, spec.col
        )));
    }
    for (name, v) in [
        ("object_intensity", spec.object_intensity),
        ("target_intensity", spec.target_intensity),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(TrainError::Config(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let mut rng = stream(seed, "task-texture", &[]);
    let mut values = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        values.push(0.5 + 0.12 * (2.0 * rng.next_f64() - 1.0));
    }
    let mut input = Grid2D::new(n, n, values)?;
    let mut square = EditMask::zeros(n, n);
    for r in spec.row..spec.row + spec.size {
        for c in spec.col..spec.col + spec.size {
            input.set(r, c, spec.object_intensity);
            square.set_bit(r, c, 1);
        }
    }
    let edit_mask = square.dilate(spec.dilation_radius);
    if edit_mask.active_count() == edit_mask.len() {
        return Err(TrainError::Config(
            "dilated edit mask covers the whole grid; shrink the square or the radius".into(),
        ));
    }
    Ok(ToyEditTask {
        n,
        input,
        edit_mask,
        target_intensity: spec.target_intensity,
        instruction_code: instruction_code(spec.target_intensity),
    })
}

/// A fixed set of toy tasks served round-robin across iterations.
#[derive(Debug, Clone)]
pub struct ToyTaskPool {
    tasks: Vec<ToyEditTask>,
}

impl ToyTaskPool {
    pub fn new(tasks: Vec<ToyEditTask>) -> Result<Self, TrainError> {
        if tasks.is_empty() {
            return Err(TrainError::Config("task pool must not be empty".into()));
        }
        let n = tasks[0].n;
        if tasks.iter().any(|t| t.n != n) {
            return Err(TrainError::Config("all pool tasks must share the grid size".into()));
        }
        Ok(ToyTaskPool { tasks })
    }

    /// Generate `count` tasks with randomized square placement; object and
    /// target intensities are drawn from the given inclusive ranges (a
    /// degenerate range pins the value).
    #[allow(clippy::too_many_arguments)]
    pub fn generate_with_intensities(
        seed: u64,
        n: usize,
        count: usize,
        size_min: usize,
        size_max: usize,
        dilation_radius: usize,
        object_range: (f64, f64),
        target_range: (f64, f64),
    ) -> Result<Self, TrainError> {
        if count == 0 {
            return Err(TrainError::Config("task count must be positive".into()));
        }
        if size_min == 0 || size_min > size_max {
            return Err(TrainError::Config(format!(
                "invalid square size range [{size_min}, {size_max}]"
            )));
        }
        for (name, (lo, hi)) in [("object", object_range), ("target", target_range)] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(TrainError::Config(format!(
                    "invalid {name} intensity range [{lo}, {hi}]"
                )));
            }
        }
        let mut tasks = Vec::with_capacity(count);
        for k in 0..count {
            let mut rng = stream(seed, "task-spec", &[k as u64]);
            let size = size_min + rng.next_below(size_max - size_min + 1);
            let margin = dilation_radius.min(n.saturating_sub(size));
            let lo = margin;
            let hi = n.saturating_sub(size + margin);
            let row = lo + rng.next_below(hi.saturating_sub(lo) + 1);
            let col = lo + rng.next_below(hi.saturating_sub(lo) + 1);
            let spec = SquareSpec {
                row,
                col,
                size,
                object_intensity: rng.uniform(object_range.0, object_range.1),
                target_intensity: rng.uniform(target_range.0, target_range.1),
                dilation_radius,
            };
            tasks.push(generate_toy_task(seed ^ (k as u64).wrapping_mul(0x9e37), n, &spec)?);
        }
        ToyTaskPool::new(tasks)
    }

    /// Generate `count` tasks with the default intensity ranges.
    pub fn generate(
        seed: u64,
        n: usize,
        count: usize,
        size_min: usize,
        size_max: usize,
        dilation_radius: usize,
    ) -> Result<Self, TrainError> {
        ToyTaskPool::generate_with_intensities(
            seed,
            n,
            count,
            size_min,
            size_max,
            dilation_radius,
            (0.1, 0.3),
            (0.7, 0.9),
        )
    }

    pub fn tasks(&self) -> &[ToyEditTask] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Round-robin task indices for one iteration.
    pub fn indices_for(&self, iteration: usize, count: usize) -> Vec<usize> {
        (0..count)
            .map(|j| (iteration * count + j) % self.tasks.len())
            .collect()
    }
}

/// The latent a partially-trained editor would produce for this task: the
/// input with the edit region moved `fraction` of the way toward the
/// instructed intensity.
pub fn partial_edit_latent(task: &ToyEditTask, fraction: f64) -> Vec<f64> {
    task.input_latent()
        .iter()
        .zip(task.edit_mask.bits())
        .map(|(v, bit)| {
            if *bit == 1 {
                v + fraction * (task.target_intensity - v)
            } else {
                *v
            }
        })
        .collect()
}

/// Build the pretrained reference policy: stochastic flow matching toward
/// partially edited versions of each task (background preserved, edit
/// region moved `edit_fraction` of the way to the instructed intensity).
///
/// Gradients are normalized by the latent dimension so the step size is
/// resolution-independent, and diffusion times are drawn from the range the
/// sampler actually evaluates (its smallest evaluation time is
/// `1 / sampler_steps`).
#[allow(clippy::too_many_arguments)]
pub fn pretrain_reference(
    model: &mut MlpVelocityField,
    pool: &ToyTaskPool,
    steps: usize,
    learning_rate: f64,
    edit_fraction: f64,
    t_epsilon: f64,
    sampler_steps: usize,
    seed: u64,
) -> Result<(), TrainError> {
    let dim_scale = 1.0 / model.latent_dim() as f64;
    let t_lo = t_epsilon.max(0.5 / sampler_steps.max(1) as f64);
    let targets: Vec<Vec<f64>> = pool
        .tasks()
        .iter()
        .map(|task| partial_edit_latent(task, edit_fraction))
        .collect();
    for step in 0..steps {
        let index = step % pool.len();
        let task = &pool.tasks()[index];
        let mut rng = stream(seed, "pretrain", &[step as u64]);
        let mut x1 = vec![0.0; task.latent_dim()];
        rng.fill_normal(&mut x1);
        let t = rng.uniform(t_lo, 1.0 - t_epsilon);
        let (_, grad) = fm_loss(model, &targets[index], &x1, t, &task.condition())?;
        let scale = learning_rate * dim_scale;
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= scale * g;
        }
    }
    Ok(())
}

/// K sampled latents for one task.
#[derive(Debug, Clone)]
pub struct SampleGroup {
    pub task_index: usize,
    pub latents: Vec<Vec<f64>>,
}

/// Draw K ODE samples per task from the frozen old policy with seeded noise.
pub fn collect_samples(
    old_policy: &MlpVelocityField,
    pool: &ToyTaskPool,
    task_indices: &[usize],
    group_size: usize,
    sampler_steps: usize,
    seed: u64,
    iteration: usize,
) -> Vec<SampleGroup> {
    let mut groups = Vec::with_capacity(task_indices.len());
    for (slot, &task_index) in task_indices.iter().enumerate() {
        let task = &pool.tasks()[task_index];
        let cond = task.condition();
        let mut latents = Vec::with_capacity(group_size);
        for k in 0..group_size {
            let mut noise_rng = stream(seed, "noise", &[iteration as u64, slot as u64, k as u64]);
            let mut x1 = vec![0.0; task.latent_dim()];
            noise_rng.fill_normal(&mut x1);
            latents.push(sample_ode(old_policy, &x1, &cond, sampler_steps));
        }
        groups.push(SampleGroup { task_index, latents });
    }
    groups
}

/// Group rewards plus the per-sample components kept for logging.
#[derive(Debug, Clone)]
pub struct GroupRewardOutcome {
    pub rewards: GroupRewards,
    pub r_sim: Vec<f64>,
    pub r_mllm: Vec<f64>,
    pub psnr_norm: Vec<f64>,
}

/// Score a sample group: similarity reward over the non-edit region, judge
/// reward from the provider, linear combination, centering, and the
/// optimality transform.
///
/// Sampled latents are clamped into `[0, 1]` when interpreted as images for
/// scoring, mirroring the decode step of a real pipeline.
#[allow(clippy::too_many_arguments)]
pub fn collect_rewards(
    group: &SampleGroup,
    task: &ToyEditTask,
    provider: &dyn RewardProvider,
    weights: &RewardWeights,
    metric_cfg: &MetricConfig,
    target_scale: f64,
    z_c_mode: ZcMode,
    cache: &mut RewardCache,
) -> Result<GroupRewardOutcome, TrainError> {
    let k = group.latents.len();
    let mut sample_grids = Vec::with_capacity(k);
    for latent in &group.latents {
        sample_grids.push(Grid2D::from_values_clamped(task.n, task.n, latent)?);
    }
    let mut r_sim = Vec::with_capacity(k);
    let mut psnr_norm = Vec::with_capacity(k);
    for grid in &sample_grids {
        let parts = sim_reward_parts(&task.input, grid, &task.edit_mask, metric_cfg, weights.w_ssim)?;
        r_sim.push(parts.value);
        psnr_norm.push(parts.psnr_norm);
    }
    let r_mllm = if sample_grids
        .iter()
        .all(|g| cache.get(g, provider.id()).is_some())
    {
        sample_grids
            .iter()
            .map(|g| cache.get(g, provider.id()).unwrap())
            .collect()
    } else {
        let sample_ids: Vec<String> = (0..k)
            .map(|i| format!("t{}-s{}", group.task_index, i))
            .collect();
        let query = RewardQuery {
            input: &task.input,
            samples: &sample_grids,
            sample_ids: &sample_ids,
            edit_mask: &task.edit_mask,
            target_intensity: task.target_intensity,
            target_scale,
        };
        let scores = provider.score(&query)?;
        for (grid, score) in sample_grids.iter().zip(&scores) {
            cache.insert(grid, provider.id(), *score);
        }
        scores
    };
    let raw: Vec<f64> = r_mllm
        .iter()
        .zip(&r_sim)
        .map(|(m, s)| combine(*m, *s, weights))
        .collect();
    let rewards = group_rewards(&raw, z_c_mode)?;
    Ok(GroupRewardOutcome {
        rewards,
        r_sim,
        r_mllm,
        psnr_norm,
    })
}

/// One buffered optimization sample.
#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub cond: Vec<f64>,
    pub x0: Vec<f64>,
    pub optimality: f64,
    pub edit_latent_mask: EditMask,
    pub input_latent: Vec<f64>,
}

/// Per-iteration data buffer; cleared at the end of every iteration.
#[derive(Debug, Default)]
pub struct Buffer {
    entries: Vec<BufferEntry>,
}

impl Buffer {
    pub fn new() -> Self {
        Buffer::default()
    }

    pub fn push(&mut self, entry: BufferEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Diagnostics of one optimization pass over the buffer.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepDiagnostics {
    pub mean_total: f64,
    pub mean_loss_pos: f64,
    pub mean_loss_neg: f64,
    pub mean_reg_ner: f64,
    pub mean_reg_er: f64,
    pub hinge_ner_rate: f64,
    pub hinge_er_rate: f64,
    /// Mean L2 norm of the batch-mean gradients.
    pub mean_grad_norm: f64,
    pub batches: usize,
}

/// One optimization pass: shuffle the buffer, then per mini-batch sample a
/// diffusion time and forward noise for each entry, evaluate the total
/// objective against the frozen old policy, and take one gradient-descent
/// step on the batch-mean gradient.
pub fn optimize_step(
    buffer: &Buffer,
    model: &mut MlpVelocityField,
    old_policy: &MlpVelocityField,
    ref_policy: Option<&MlpVelocityField>,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<StepDiagnostics, TrainError> {
    if buffer.is_empty() {
        return Err(TrainError::Config("optimize_step needs a non-empty buffer".into()));
    }
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    stream(cfg.seed, "shuffle", &[iteration as u64]).shuffle(&mut order);
    let mut t_rng = stream(cfg.seed, "t", &[iteration as u64]);
    let mut noise_rng = stream(cfg.seed, "fwd-noise", &[iteration as u64]);

    let mut diag = StepDiagnostics::default();
    let mut processed = 0usize;
    for batch in order.chunks(cfg.batch_size) {
        let mut grad_acc = vec![0.0; model.num_params()];
        for &ix in batch {
            let entry = &buffer.entries()[ix];
            let t = t_rng.uniform(cfg.t_epsilon, 1.0 - cfg.t_epsilon);
            let mut eps = vec![0.0; entry.x0.len()];
            noise_rng.fill_normal(&mut eps);
            let x_t = interpolate(&entry.x0, &eps, t)?;
            let v_old = old_policy.evaluate(&x_t, t, &entry.cond);
            let v_ref = if cfg.nft.kl_weight > 0.0 {
                ref_policy.map(|m| m.evaluate(&x_t, t, &entry.cond))
            } else {
                None
            };
            let ctx = SampleContext {
                x_t,
                t,
                cond: entry.cond.clone(),
                x0: entry.x0.clone(),
                input_latent: entry.input_latent.clone(),
                edit_latent_mask: entry.edit_latent_mask.clone(),
                v_old,
                v_ref,
            };
            let (terms, grad) = total_objective(model, &ctx, entry.optimality, &cfg.nft)?;
            if !terms.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite {
                    iteration,
                    detail: format!(
                        "entry {ix}: total={}, r={}, t={}, d_ner={}, d_er={}, tau_minus={}",
                        terms.total, entry.optimality, ctx.t, terms.d_ner, terms.d_er, terms.tau_minus
                    ),
                });
            }
            for (a, g) in grad_acc.iter_mut().zip(&grad) {
                *a += g;
            }
            diag.mean_total += terms.total;
            diag.mean_loss_pos += terms.loss_pos;
            diag.mean_loss_neg += terms.loss_neg;
            diag.mean_reg_ner += terms.reg_ner;
            diag.mean_reg_er += terms.reg_er;
            diag.hinge_ner_rate += f64::from(terms.ner_active);
            diag.hinge_er_rate += f64::from(terms.er_active);
            processed += 1;
        }
        let scale = cfg.learning_rate / batch.len() as f64;
        for (p, g) in model.params_mut().iter_mut().zip(&grad_acc) {
            *p -= scale * g;
        }
        let inv_batch = 1.0 / batch.len() as f64;
        diag.mean_grad_norm += grad_acc
            .iter()
            .map(|g| (g * inv_batch) * (g * inv_batch))
            .sum::<f64>()
            .sqrt();
        diag.batches += 1;
    }
    diag.mean_grad_norm /= diag.batches as f64;
    let inv = 1.0 / processed as f64;
    diag.mean_total *= inv;
    diag.mean_loss_pos *= inv;
    diag.mean_loss_neg *= inv;
    diag.mean_reg_ner *= inv;
    diag.mean_reg_er *= inv;
    diag.hinge_ner_rate *= inv;
    diag.hinge_er_rate *= inv;
    Ok(diag)
}

/// EMA blend of the old-policy parameters toward the current policy:
/// `theta_old <- eta * theta_old + (1 - eta) * theta`.
pub fn ema_update(theta_old: &mut [f64], theta: &[f64], eta: f64) {
    assert_eq!(theta_old.len(), theta.len(), "parameter counts must agree");
    assert!((0.0..=1.0).contains(&eta), "eta must lie in [0, 1]");
    for (o, t) in theta_old.iter_mut().zip(theta) {
        *o = eta * *o + (1.0 - eta) * t;
    }
}

/// One line of the JSON-lines metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_raw_reward: f64,
    pub mean_r_sim: f64,
    pub mean_r_mllm: f64,
    pub mean_optimality: f64,
    pub hinge_ner_rate: f64,
    pub hinge_er_rate: f64,
    pub mean_loss_pos: f64,
    pub mean_loss_neg: f64,
    /// Mean normalized PSNR of the iteration's samples over the non-edit
    /// region.
    pub non_edit_psnr_norm: f64,
    /// Mean RMS latent distance between samples and input over the edit
    /// region.
    pub edit_region_distance: f64,
    /// Mean clipping scale of the optimality transform across groups.
    pub mean_z_c: f64,
    /// Mean in-group standard deviation of the judge reward.
    pub mllm_spread: f64,
    /// Mean in-group standard deviation of the similarity reward.
    pub sim_spread: f64,
    /// Mean L2 norm of the optimization gradients.
    pub grad_norm: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub policy: MlpVelocityField,
    pub records: Vec<IterationRecord>,
}

/// Error plus the state needed to checkpoint the last completed iteration.
pub struct TrainAbort {
    pub error: TrainError,
    pub last_good_policy: MlpVelocityField,
    pub completed_iterations: usize,
    pub records: Vec<IterationRecord>,
}

impl std::fmt::Debug for TrainAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "TrainAbort after {} iterations: {}",
            self.completed_iterations, self.error
        )
    }
}

/// Run the full loop for `config.iterations` iterations.
///
/// With `iterations = 0` the initial policy is returned unchanged. On any
/// error the abort carries the policy as of the last completed iteration.
pub fn train(
    config: &TrainConfig,
    pool: &ToyTaskPool,
    provider: &dyn RewardProvider,
    metric_cfg: &MetricConfig,
) -> Result<TrainOutcome, Box<TrainAbort>> {
    let fail = |error: TrainError, policy: &MlpVelocityField, iters, records: &[IterationRecord]| {
        Box::new(TrainAbort {
            error,
            last_good_policy: policy.clone(),
            completed_iterations: iters,
            records: records.to_vec(),
        })
    };

    let latent_dim = pool.tasks()[0].latent_dim();
    let cond_dim = pool.tasks()[0].cond_dim();
    let mut policy = MlpVelocityField::new(latent_dim, cond_dim, &config.hidden_dims, config.seed);
    let mut records = Vec::with_capacity(config.iterations);

    if let Err(e) = config.validate() {
        return Err(fail(e, &policy, 0, &records));
    }

    if let Err(e) = pretrain_reference(
        &mut policy,
        pool,
        config.pretrain_steps,
        config.pretrain_learning_rate,
        config.pretrain_edit_fraction,
        config.t_epsilon,
        config.sampler_steps,
        config.seed,
    ) {
        return Err(fail(e, &policy, 0, &records));
    }
    let mut old_policy = policy.clone();
    let ref_policy = (config.nft.kl_weight > 0.0).then(|| policy.clone());
    let mut buffer = Buffer::new();
    let mut cache = RewardCache::new();

    for iteration in 0..config.iterations {
        let snapshot = policy.clone();
        cache.clear();
        debug_assert!(buffer.is_empty(), "buffer must start every iteration empty");

        let task_indices = pool.indices_for(iteration, config.prompts_per_iteration);
        let groups = collect_samples(
            &old_policy,
            pool,
            &task_indices,
            config.group_size,
            config.sampler_steps,
            config.seed,
            iteration,
        );

        let mut sum_raw = 0.0;
        let mut sum_sim = 0.0;
        let mut sum_mllm = 0.0;
        let mut sum_opt = 0.0;
        let mut sum_psnr = 0.0;
        let mut sum_edit_dist = 0.0;
        let mut sum_z_c = 0.0;
        let mut sum_mllm_spread = 0.0;
        let mut sum_sim_spread = 0.0;
        let mut n_samples = 0usize;
        for group in &groups {
            let task = &pool.tasks()[group.task_index];
            let outcome = match collect_rewards(
                group,
                task,
                provider,
                &config.reward_weights,
                metric_cfg,
                config.target_scale,
                config.z_c_mode,
                &mut cache,
            ) {
                Ok(o) => o,
                Err(e) => return Err(fail(e, &snapshot, iteration, &records)),
            };
            sum_z_c += outcome.rewards.z_c;
            let spread = |xs: &[f64]| {
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
            };
            sum_mllm_spread += spread(&outcome.r_mllm);
            sum_sim_spread += spread(&outcome.r_sim);
            for (k, latent) in group.latents.iter().enumerate() {
                sum_raw += outcome.rewards.raw[k];
                sum_sim += outcome.r_sim[k];
                sum_mllm += outcome.r_mllm[k];
                sum_opt += outcome.rewards.optimality[k];
                sum_psnr += outcome.psnr_norm[k];
                match crate::nftloss::region_distance(latent, task.input_latent(), &task.edit_mask)
                {
                    Ok(d) => sum_edit_dist += d,
                    Err(e) => return Err(fail(e.into(), &snapshot, iteration, &records)),
                }
                n_samples += 1;
                buffer.push(BufferEntry {
                    cond: task.condition(),
                    x0: latent.clone(),
                    optimality: outcome.rewards.optimality[k],
                    edit_latent_mask: task.edit_mask.clone(),
                    input_latent: task.input_latent().to_vec(),
                });
            }
        }

        let diag = match optimize_step(
            &buffer,
            &mut policy,
            &old_policy,
            ref_policy.as_ref(),
            config,
            iteration,
        ) {
            Ok(d) => d,
            Err(e) => return Err(fail(e, &snapshot, iteration, &records)),
        };

        let mut old_params = old_policy.params().to_vec();
        ema_update(&mut old_params, policy.params(), config.ema_eta);
        old_policy.set_params(&old_params);
        buffer.clear();

        let inv = 1.0 / n_samples as f64;
        records.push(IterationRecord {
            iteration,
            mean_raw_reward: sum_raw * inv,
            mean_r_sim: sum_sim * inv,
            mean_r_mllm: sum_mllm * inv,
            mean_optimality: sum_opt * inv,
            hinge_ner_rate: diag.hinge_ner_rate,
            hinge_er_rate: diag.hinge_er_rate,
            mean_loss_pos: diag.mean_loss_pos,
            mean_loss_neg: diag.mean_loss_neg,
            non_edit_psnr_norm: sum_psnr * inv,
            edit_region_distance: sum_edit_dist * inv,
            mean_z_c: sum_z_c / groups.len() as f64,
            mllm_spread: sum_mllm_spread / groups.len() as f64,
            sim_spread: sum_sim_spread / groups.len() as f64,
            grad_norm: diag.mean_grad_norm,
        });
    }

    Ok(TrainOutcome { policy, records })
}
