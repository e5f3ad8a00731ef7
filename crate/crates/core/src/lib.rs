//! Desk-scale engine for content-consistent image editing: masked
//! pixel-consistency rewards over non-edit regions, implicit
//! positive/negative policy losses with region-decoupled hinge regularizers,
//! a group-relative sample/reward/optimize training loop on a toy
//! rectified-flow model, and a benchmark evaluation harness around masked
//! PSNR/SSIM.
//!
//! The `cocoedit` binary exposes the `eval`, `filter`, `corr`, `dilate`, and
//! `train` commands on top of these modules.

pub mod cli;
pub mod config;
pub mod flowmodel;
pub mod grid;
pub mod metrics;
pub mod nftloss;
pub mod rewards;
pub mod rng;
pub mod trainer;

pub use grid::{EditMask, GaussianWindow, Grid2D};
pub use metrics::{MaskedScore, MetricConfig};
pub use rewards::{GroupRewards, RewardProvider, RewardWeights, ZcMode};
pub use trainer::{ToyEditTask, ToyTaskPool, TrainConfig};
