//! Negative-aware, region-regularized training objective: implicit
//! positive/negative velocities, x-prediction diffusion losses, latent
//! region projections, the two hinge regularizers with a fixed positive
//! tolerance and an adaptive negative threshold, and the reward-weighted
//! total objective with analytic parameter gradients.

use thiserror::Error;

use crate::flowmodel::{v_to_x, MlpVelocityField};
use crate::grid::EditMask;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("evaluated region is empty")]
    EmptyRegion,
}

/// Hyperparameters of the total objective.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct NftConfig {
    /// Implicit-policy interpolation strength.
    pub beta: f64,
    /// Tolerance of the non-edit-region hinge.
    pub tau_plus: f64,
    /// Weight of the non-edit-region regularizer on positive samples.
    pub lambda_ner: f64,
    /// Weight of the edit-region regularizer on negative samples.
    pub lambda_er: f64,
    /// Weight of the optional quadratic pull toward the reference policy;
    /// 0 disables the term.
    pub kl_weight: f64,
}

impl Default for NftConfig {
    fn default() -> Self {
        NftConfig {
            beta: 1.0,
            tau_plus: 0.001,
            lambda_ner: 0.5,
            lambda_er: 0.2,
            kl_weight: 1e-4,
        }
    }
}

impl NftConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(LossError::InvalidArgument(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        for (name, v) in [
            ("tau_plus", self.tau_plus),
            ("lambda_ner", self.lambda_ner),
            ("lambda_er", self.lambda_er),
            ("kl_weight", self.kl_weight),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::InvalidArgument(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Implicit positive and negative velocities.
///
/// `v_plus = (1 - beta) v_old + beta v_theta` computed in delta form as
/// `v_old + beta (v_theta - v_old)`, and `v_minus` as its reflection
/// `2 v_old - v_plus`, so `v_plus + v_minus = 2 v_old` and the fixed point
/// `v_theta = v_old` are exact in floating point.
pub fn implicit_velocities(v_old: &[f64], v_theta: &[f64], beta: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(v_old.len(), v_theta.len(), "velocity lengths must agree");
    let v_plus: Vec<f64> = if beta == 1.0 {
        v_theta.to_vec()
    } else {
        v_old
            .iter()
            .zip(v_theta)
            .map(|(o, t)| o + beta * (t - o))
            .collect()
    };
    let v_minus = v_old
        .iter()
        .zip(&v_plus)
        .map(|(o, p)| 2.0 * o - p)
        .collect();
    (v_plus, v_minus)
}

/// Keep only edit-region cells: `z * mask`.
pub fn project_er(z: &[f64], edit: &EditMask) -> Vec<f64> {
    assert_eq!(z.len(), edit.len(), "latent and mask lengths must agree");
    z.iter()
        .zip(edit.bits())
        .map(|(v, b)| v * *b as f64)
        .collect()
}

/// Keep only non-edit cells: `z * (1 - mask)`.
pub fn project_ner(z: &[f64], edit: &EditMask) -> Vec<f64> {
    assert_eq!(z.len(), edit.len(), "latent and mask lengths must agree");
    z.iter()
        .zip(edit.bits())
        .map(|(v, b)| v * (1 - *b) as f64)
        .collect()
}

/// RMS distance over the active cells of `region`.
///
/// The root-mean-square normalization keeps the distance scale-free, so the
/// hinge thresholds transfer across latent resolutions.
pub fn region_distance(a: &[f64], b: &[f64], region: &EditMask) -> Result<f64, LossError> {
    if a.len() != b.len() || a.len() != region.len() {
        return Err(LossError::InvalidArgument(format!(
            "length mismatch: {} vs {} vs mask {}",
            a.len(),
            b.len(),
            region.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((x, y), bit) in a.iter().zip(b).zip(region.bits()) {
        if *bit == 1 {
            let d = x - y;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(LossError::EmptyRegion);
    }
    Ok((sum / count as f64).sqrt())
}

/// Diffusion loss of the positive x-prediction: mean squared error to `x0`.
pub fn loss_pos(x_plus_pred: &[f64], x0: &[f64]) -> f64 {
    mean_squared_error(x_plus_pred, x0)
}

/// Diffusion loss of the negative x-prediction: mean squared error to `x0`.
pub fn loss_neg(x_minus_pred: &[f64], x0: &[f64]) -> f64 {
    mean_squared_error(x_minus_pred, x0)
}

fn mean_squared_error(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "latent lengths must agree");
    assert!(!pred.is_empty(), "latents must be non-empty");
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Positive regularizer: hinge on the non-edit-region distance between the
/// positive x-prediction and the input latent, with tolerance `tau_plus`.
pub fn reg_ner_plus(
    x_plus_pred: &[f64],
    input_latent: &[f64],
    edit: &EditMask,
    tau_plus: f64,
) -> Result<f64, LossError> {
    let d = region_distance(x_plus_pred, input_latent, &edit.complement())?;
    Ok((d - tau_plus).max(0.0))
}

/// Adaptive negative threshold: how far this sample's `x0` already is from
/// the input over the edit region.
pub fn tau_minus(x0: &[f64], input_latent: &[f64], edit: &EditMask) -> Result<f64, LossError> {
    region_distance(x0, input_latent, edit)
}

/// Negative regularizer: hinge penalizing negative x-predictions whose edit
/// region stays closer to the input than `tau_minus_value`.
pub fn reg_er_minus(
    x_minus_pred: &[f64],
    input_latent: &[f64],
    edit: &EditMask,
    tau_minus_value: f64,
) -> Result<f64, LossError> {
    let d = region_distance(x_minus_pred, input_latent, edit)?;
    Ok((tau_minus_value - d).max(0.0))
}

/// Everything the total objective needs about one buffered sample.
///
/// `v_old` is the old-policy velocity at `(x_t, t, cond)`, precomputed and
/// constant with respect to the trained parameters; `v_ref` likewise for the
/// frozen reference policy when the quadratic pull is enabled.
#[derive(Debug, Clone)]
pub struct SampleContext {
    pub x_t: Vec<f64>,
    pub t: f64,
    pub cond: Vec<f64>,
    pub x0: Vec<f64>,
    pub input_latent: Vec<f64>,
    pub edit_latent_mask: EditMask,
    pub v_old: Vec<f64>,
    pub v_ref: Option<Vec<f64>>,
}

/// Per-term breakdown of one objective evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ObjectiveTerms {
    pub total: f64,
    pub loss_pos: f64,
    pub loss_neg: f64,
    pub reg_ner: f64,
    pub reg_er: f64,
    pub kl: f64,
    pub d_ner: f64,
    pub d_er: f64,
    pub tau_minus: f64,
    pub ner_active: bool,
    pub er_active: bool,
}

/// Reward-weighted total objective
/// `r (L+ + lambda_ner L_ner+) + (1 - r) (L- + lambda_er L_er-)`
/// plus the optional reference pull, with its analytic gradient with respect
/// to the current-policy parameters.
///
/// The gradient chains through the implicit velocities and the
/// velocity-to-x transform into the model's backward pass. At an exact hinge
/// boundary the subgradient 0 is used.
pub fn total_objective(
    model: &MlpVelocityField,
    ctx: &SampleContext,
    r: f64,
    cfg: &NftConfig,
) -> Result<(ObjectiveTerms, Vec<f64>), LossError> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&r) {
        return Err(LossError::InvalidArgument(format!(
            "optimality r must lie in [0, 1], got {r}"
        )));
    }
    let dim = ctx.x_t.len();
    if ctx.x0.len() != dim
        || ctx.input_latent.len() != dim
        || ctx.v_old.len() != dim
        || ctx.edit_latent_mask.len() != dim
    {
        return Err(LossError::InvalidArgument(
            "sample context latent lengths disagree".into(),
        ));
    }
    let non_edit = ctx.edit_latent_mask.complement();
    let n_er = ctx.edit_latent_mask.active_count();
    let n_ner = non_edit.active_count();
    if n_er == 0 || n_ner == 0 {
        return Err(LossError::EmptyRegion);
    }

    let (v_theta, trace) = model.forward_trace(&ctx.x_t, ctx.t, &ctx.cond);
    let (v_plus, v_minus) = implicit_velocities(&ctx.v_old, &v_theta, cfg.beta);
    let x_plus = v_to_x(&ctx.x_t, ctx.t, &v_plus);
    let x_minus = v_to_x(&ctx.x_t, ctx.t, &v_minus);

    let l_pos = loss_pos(&x_plus, &ctx.x0);
    let l_neg = loss_neg(&x_minus, &ctx.x0);
    let d_ner = region_distance(&x_plus, &ctx.input_latent, &non_edit)?;
    let d_er = region_distance(&x_minus, &ctx.input_latent, &ctx.edit_latent_mask)?;
    let tau_m = tau_minus(&ctx.x0, &ctx.input_latent, &ctx.edit_latent_mask)?;
    let reg_ner = (d_ner - cfg.tau_plus).max(0.0);
    let reg_er = (tau_m - d_er).max(0.0);
    let ner_active = d_ner > cfg.tau_plus;
    let er_active = d_er < tau_m;

    let use_kl = cfg.kl_weight > 0.0 && ctx.v_ref.is_some();
    let kl = if use_kl {
        mean_squared_error(&v_theta, ctx.v_ref.as_ref().unwrap())
    } else {
        0.0
    };

    let total = r * (l_pos + cfg.lambda_ner * reg_ner)
        + (1.0 - r) * (l_neg + cfg.lambda_er * reg_er)
        + cfg.kl_weight * kl;

    // Gradient with respect to v_theta. The x-predictions respond to the
    // current policy as d x_plus / d v_theta = -t * beta and
    // d x_minus / d v_theta = +t * beta per cell.
    let t_beta = ctx.t * cfg.beta;
    let dims = dim as f64;
    let mut d_vtheta = vec![0.0; dim];
    for i in 0..dim {
        let mut g = 0.0;
        g += r * (2.0 * (x_plus[i] - ctx.x0[i]) / dims) * (-t_beta);
        g += (1.0 - r) * (2.0 * (x_minus[i] - ctx.x0[i]) / dims) * t_beta;
        if ner_active && d_ner > 0.0 && non_edit.bits()[i] == 1 {
            let dd = (x_plus[i] - ctx.input_latent[i]) / (n_ner as f64 * d_ner);
            g += r * cfg.lambda_ner * dd * (-t_beta);
        }
        if er_active && d_er > 0.0 && ctx.edit_latent_mask.bits()[i] == 1 {
            let dd = (x_minus[i] - ctx.input_latent[i]) / (n_er as f64 * d_er);
            g += (1.0 - r) * cfg.lambda_er * (-dd) * t_beta;
        }
        if use_kl {
            g += cfg.kl_weight * 2.0 * (v_theta[i] - ctx.v_ref.as_ref().unwrap()[i]) / dims;
        }
        d_vtheta[i] = g;
    }
    let mut grad = vec![0.0; model.num_params()];
    model.backward(&trace, &d_vtheta, &mut grad);

    Ok((
        ObjectiveTerms {
            total,
            loss_pos: l_pos,
            loss_neg: l_neg,
            reg_ner,
            reg_er,
            kl,
            d_ner,
            d_er,
            tau_minus: tau_m,
            ner_active,
            er_active,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Rng};

    fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    fn checker_mask(h: usize, w: usize) -> EditMask {
        let bits = (0..h * w).map(|i| (i % 2) as u8).collect();
        EditMask::new(h, w, bits).unwrap()
    }

    fn square_mask(n: usize, lo: usize, hi: usize) -> EditMask {
        let mut m = EditMask::zeros(n, n);
        for r in lo..hi {
            for c in lo..hi {
                m.set_bit(r, c, 1);
            }
        }
        m
    }

    #[test]
    fn implicit_velocities_fixed_point() {
        let mut rng = Rng::from_seed(137);
        let v = random_vec(&mut rng, 12);
        for beta in [0.3, 1.0, 2.5] {
            let (p, m) = implicit_velocities(&v, &v, beta);
            assert_eq!(p, v, "beta {beta}");
            assert_eq!(m, v, "beta {beta}");
        }
    }

    #[test]
    fn implicit_velocities_sum_identity() {
        let mut rng = Rng::from_seed(139);
        for _ in 0..100 {
            let v_old = random_vec(&mut rng, 8);
            let v_theta = random_vec(&mut rng, 8);
            let beta = rng.uniform(0.25, 4.0);
            let (p, m) = implicit_velocities(&v_old, &v_theta, beta);
            for i in 0..8 {
                // The negative velocity is the exact reflection of the
                // positive one, so the pair reconstructs 2 v_old bitwise in
                // that form; the summed form can differ by one rounding of
                // the subtraction.
                assert_eq!(m[i], 2.0 * v_old[i] - p[i], "bitwise reflection");
                let sum = p[i] + m[i];
                let target = 2.0 * v_old[i];
                let scale = p[i].abs().max(m[i].abs()).max(target.abs()).max(1.0);
                assert!(
                    (sum - target).abs() <= f64::EPSILON * scale,
                    "sum {sum} vs {target}"
                );
            }
        }
    }

    #[test]
    fn implicit_velocities_beta_one_substitutes() {
        let mut rng = Rng::from_seed(149);
        let v_old = random_vec(&mut rng, 6);
        let v_theta = random_vec(&mut rng, 6);
        let (p, m) = implicit_velocities(&v_old, &v_theta, 1.0);
        assert_eq!(p, v_theta);
        for i in 0..6 {
            assert_eq!(m[i], 2.0 * v_old[i] - v_theta[i]);
        }
    }

    #[test]
    fn projections_partition_and_are_idempotent() {
        let mut rng = Rng::from_seed(151);
        let z = random_vec(&mut rng, 24);
        let mask = checker_mask(4, 6);
        let er = project_er(&z, &mask);
        let ner = project_ner(&z, &mask);
        for i in 0..24 {
            assert_eq!(er[i] + ner[i], z[i], "partition");
        }
        assert_eq!(project_er(&er, &mask), er, "idempotent");
        let zero_mask = EditMask::zeros(4, 6);
        assert!(project_er(&z, &zero_mask).iter().all(|&v| v == 0.0));
        assert_eq!(project_ner(&z, &zero_mask), z);
    }

    #[test]
    fn region_distance_constant_difference() {
        let mask = checker_mask(2, 4);
        let a = vec![0.5; 8];
        let b = vec![0.2; 8];
        let d = region_distance(&a, &b, &mask).unwrap();
        assert!((d - 0.3).abs() < 1e-12, "RMS of a constant is its magnitude");
        assert_eq!(region_distance(&a, &a, &mask).unwrap(), 0.0);
    }

    #[test]
    fn region_distance_matches_brute_force() {
        let mut rng = Rng::from_seed(157);
        let a = random_vec(&mut rng, 16);
        let b = random_vec(&mut rng, 16);
        let bits: Vec<u8> = (0..16).map(|_| u8::from(rng.next_f64() < 0.5)).collect();
        let mask = match EditMask::new(4, 4, bits) {
            Ok(m) if m.active_count() > 0 => m,
            _ => square_mask(4, 1, 3),
        };
        let mut sum = 0.0;
        let mut n = 0;
        for i in 0..16 {
            if mask.bits()[i] == 1 {
                sum += (a[i] - b[i]) * (a[i] - b[i]);
                n += 1;
            }
        }
        let expected = (sum / n as f64).sqrt();
        let got = region_distance(&a, &b, &mask).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn region_distance_empty_region_errors() {
        let mask = EditMask::zeros(2, 2);
        assert!(matches!(
            region_distance(&[0.0; 4], &[0.0; 4], &mask),
            Err(LossError::EmptyRegion)
        ));
    }

    #[test]
    fn diffusion_losses_mean_reduction() {
        let x0 = vec![0.1, 0.2, 0.3, 0.4];
        assert_eq!(loss_pos(&x0, &x0), 0.0);
        let shifted: Vec<f64> = x0.iter().map(|v| v + 1.0).collect();
        assert!((loss_pos(&shifted, &x0) - 1.0).abs() < 1e-12);
        assert!((loss_neg(&shifted, &x0) - 1.0).abs() < 1e-12);
        // Brute-force recomputation on a random instance.
        let mut rng = Rng::from_seed(163);
        let p = random_vec(&mut rng, 9);
        let q = random_vec(&mut rng, 9);
        let expected = p
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 9.0;
        assert!((loss_pos(&p, &q) - expected).abs() < 1e-14);
    }

    #[test]
    fn hinge_ner_boundary_and_slope() {
        let mask = square_mask(4, 1, 3);
        let input = vec![0.0; 16];
        // Prediction equal to the input on the non-edit region: inside
        // tolerance.
        let mut pred = vec![0.0; 16];
        for i in 0..16 {
            if mask.bits()[i] == 1 {
                pred[i] = 9.9;
            }
        }
        assert_eq!(reg_ner_plus(&pred, &input, &mask, 0.001).unwrap(), 0.0);
        // Constant offset c on the non-edit region gives distance |c|.
        let mut pred2 = pred.clone();
        for i in 0..16 {
            if mask.bits()[i] == 0 {
                pred2[i] = 0.101;
            }
        }
        let v = reg_ner_plus(&pred2, &input, &mask, 0.001).unwrap();
        assert!((v - 0.1).abs() < 1e-12, "linear beyond the hinge: {v}");
        // Distance exactly tau gives zero.
        let mut pred3 = pred.clone();
        for i in 0..16 {
            if mask.bits()[i] == 0 {
                pred3[i] = 0.001;
            }
        }
        assert_eq!(reg_ner_plus(&pred3, &input, &mask, 0.001).unwrap(), 0.0);
        // All-edit mask leaves no non-edit region to measure.
        let all = EditMask::ones(4, 4);
        assert!(matches!(
            reg_ner_plus(&pred, &input, &all, 0.001),
            Err(LossError::EmptyRegion)
        ));
    }

    #[test]
    fn tau_minus_cases() {
        let mask = square_mask(4, 1, 3);
        let input = vec![0.25; 16];
        assert_eq!(tau_minus(&input, &input, &mask).unwrap(), 0.0);
        let mut x0 = input.clone();
        for i in 0..16 {
            if mask.bits()[i] == 1 {
                x0[i] = 0.65;
            }
        }
        let tm = tau_minus(&x0, &input, &mask).unwrap();
        assert!((tm - 0.4).abs() < 1e-12);
        // Matches brute force on a random instance.
        let mut rng = Rng::from_seed(167);
        let a = random_vec(&mut rng, 16);
        let b = random_vec(&mut rng, 16);
        assert_eq!(
            tau_minus(&a, &b, &mask).unwrap(),
            region_distance(&a, &b, &mask).unwrap()
        );
    }

    #[test]
    fn hinge_er_boundary_and_penalty() {
        let mask = square_mask(4, 0, 2);
        let input = vec![0.0; 16];
        let mut far = vec![0.0; 16];
        for i in 0..16 {
            if mask.bits()[i] == 1 {
                far[i] = 5.0;
            }
        }
        // Far beyond the threshold: no penalty.
        assert_eq!(reg_er_minus(&far, &input, &mask, 0.3).unwrap(), 0.0);
        // No edit at all: maximal penalty tau_minus.
        assert_eq!(reg_er_minus(&input, &input, &mask, 0.3).unwrap(), 0.3);
        // Distance exactly tau: zero.
        let mut at = vec![0.0; 16];
        for i in 0..16 {
            if mask.bits()[i] == 1 {
                at[i] = 0.3;
            }
        }
        assert_eq!(reg_er_minus(&at, &input, &mask, 0.3).unwrap(), 0.0);
    }

    fn make_context(rng: &mut Rng, n: usize, edit: EditMask) -> SampleContext {
        let dim = n * n;
        SampleContext {
            x_t: random_vec(rng, dim),
            t: rng.uniform(0.1, 0.9),
            cond: random_vec(rng, 4),
            x0: random_vec(rng, dim),
            input_latent: random_vec(rng, dim),
            edit_latent_mask: edit,
            v_old: random_vec(rng, dim),
            v_ref: Some(random_vec(rng, dim)),
        }
    }

    #[test]
    fn objective_projects_at_extreme_rewards() {
        let mut rng = Rng::from_seed(173);
        let model = MlpVelocityField::new(16, 4, &[6], 41);
        let ctx = make_context(&mut rng, 4, square_mask(4, 1, 3));
        let cfg = NftConfig {
            kl_weight: 0.0,
            ..NftConfig::default()
        };
        let (t1, _) = total_objective(&model, &ctx, 1.0, &cfg).unwrap();
        assert!(
            (t1.total - (t1.loss_pos + cfg.lambda_ner * t1.reg_ner)).abs() < 1e-12,
            "r = 1 keeps only the positive terms"
        );
        let (t0, _) = total_objective(&model, &ctx, 0.0, &cfg).unwrap();
        assert!((t0.total - (t0.loss_neg + cfg.lambda_er * t0.reg_er)).abs() < 1e-12);
    }

    #[test]
    fn objective_is_affine_in_reward() {
        let mut rng = Rng::from_seed(179);
        let model = MlpVelocityField::new(16, 4, &[6], 43);
        let ctx = make_context(&mut rng, 4, square_mask(4, 0, 2));
        let cfg = NftConfig::default();
        let (t0, g0) = total_objective(&model, &ctx, 0.0, &cfg).unwrap();
        let (t1, g1) = total_objective(&model, &ctx, 1.0, &cfg).unwrap();
        let (th, gh) = total_objective(&model, &ctx, 0.5, &cfg).unwrap();
        assert!((th.total - 0.5 * (t0.total + t1.total)).abs() < 1e-12);
        for i in 0..gh.len() {
            assert!((gh[i] - 0.5 * (g0[i] + g1[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn objective_fixed_point_neutrality() {
        // When the current policy equals the old policy the two implicit
        // x-predictions coincide and the diffusion losses match exactly.
        let mut rng = Rng::from_seed(181);
        let model = MlpVelocityField::new(16, 4, &[6], 47);
        let mut ctx = make_context(&mut rng, 4, square_mask(4, 1, 3));
        ctx.v_old = model.evaluate(&ctx.x_t, ctx.t, &ctx.cond);
        let (terms, _) = total_objective(&model, &ctx, 0.5, &NftConfig::default()).unwrap();
        assert_eq!(terms.loss_pos, terms.loss_neg);
    }

    #[test]
    fn objective_nonnegative_terms() {
        let mut rng = Rng::from_seed(191);
        let model = MlpVelocityField::new(16, 4, &[6], 53);
        for _ in 0..20 {
            let ctx = make_context(&mut rng, 4, square_mask(4, 1, 3));
            let r = rng.next_f64();
            let (t, _) = total_objective(&model, &ctx, r, &NftConfig::default()).unwrap();
            assert!(t.total >= 0.0);
            assert!(t.loss_pos >= 0.0 && t.loss_neg >= 0.0);
            assert!(t.reg_ner >= 0.0 && t.reg_er >= 0.0 && t.kl >= 0.0);
        }
    }

    #[test]
    fn objective_rejects_degenerate_masks_and_rewards() {
        let mut rng = Rng::from_seed(193);
        let model = MlpVelocityField::new(16, 4, &[6], 59);
        let ctx_all = make_context(&mut rng, 4, EditMask::ones(4, 4));
        assert!(matches!(
            total_objective(&model, &ctx_all, 0.5, &NftConfig::default()),
            Err(LossError::EmptyRegion)
        ));
        let ctx_none = make_context(&mut rng, 4, EditMask::zeros(4, 4));
        assert!(matches!(
            total_objective(&model, &ctx_none, 0.5, &NftConfig::default()),
            Err(LossError::EmptyRegion)
        ));
        let ctx = make_context(&mut rng, 4, square_mask(4, 1, 3));
        assert!(total_objective(&model, &ctx, 1.5, &NftConfig::default()).is_err());
    }

    /// Central-difference oracle over all model parameters.
    fn fd_gradient(
        model: &MlpVelocityField,
        ctx: &SampleContext,
        r: f64,
        cfg: &NftConfig,
        step: f64,
    ) -> Vec<f64> {
        let mut probe = model.clone();
        let mut grad = vec![0.0; model.num_params()];
        for p in 0..grad.len() {
            let orig = probe.params()[p];
            probe.params_mut()[p] = orig + step;
            let plus = total_objective(&probe, ctx, r, cfg).unwrap().0.total;
            probe.params_mut()[p] = orig - step;
            let minus = total_objective(&probe, ctx, r, cfg).unwrap().0.total;
            probe.params_mut()[p] = orig;
            grad[p] = (plus - minus) / (2.0 * step);
        }
        grad
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = Rng::from_seed(197);
        let model = MlpVelocityField::new(16, 4, &[5], 61);
        for (tau_plus, r) in [(0.001, 0.0), (0.001, 0.5), (1e3, 1.0), (1e3, 0.5)] {
            let ctx = make_context(&mut rng, 4, square_mask(4, 1, 3));
            let cfg = NftConfig {
                tau_plus,
                ..NftConfig::default()
            };
            let (terms, analytic) = total_objective(&model, &ctx, r, &cfg).unwrap();
            // Stay away from the hinge kinks so the finite differences see a
            // smooth function.
            assert!((terms.d_ner - cfg.tau_plus).abs() > 1e-3);
            assert!((terms.d_er - terms.tau_minus).abs() > 1e-3);
            let numeric = fd_gradient(&model, &ctx, r, &cfg, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
                assert!(rel <= 1e-4, "analytic {a} vs fd {n} (rel {rel})");
            }
        }
    }

    #[test]
    fn hinge_gradients_vanish_in_inactive_zones() {
        let mut rng = Rng::from_seed(199);
        let model = MlpVelocityField::new(16, 4, &[5], 67);
        let mut ctx = make_context(&mut rng, 4, square_mask(4, 1, 3));
        // Huge tolerance: the ner hinge is inactive, so lambda_ner does not
        // influence the objective or the gradient.
        let base = NftConfig {
            tau_plus: 1e6,
            kl_weight: 0.0,
            ..NftConfig::default()
        };
        let more = NftConfig {
            lambda_ner: 17.0,
            ..base
        };
        // Make the er hinge inactive too: x0 equal to the input on the edit
        // region drives tau_minus to zero.
        ctx.x0 = ctx.input_latent.clone();
        let (t_a, g_a) = total_objective(&model, &ctx, 0.7, &base).unwrap();
        let (t_b, g_b) = total_objective(&model, &ctx, 0.7, &more).unwrap();
        assert!(!t_a.ner_active && !t_a.er_active);
        assert_eq!(t_a.reg_ner, 0.0);
        assert_eq!(t_a.reg_er, 0.0);
        assert_eq!(t_a.total, t_b.total);
        assert_eq!(g_a, g_b);
    }

    #[test]
    fn kl_term_pulls_toward_reference() {
        let mut rng = Rng::from_seed(211);
        let model = MlpVelocityField::new(16, 4, &[5], 71);
        let mut ctx = make_context(&mut rng, 4, square_mask(4, 1, 3));
        ctx.v_ref = Some(model.evaluate(&ctx.x_t, ctx.t, &ctx.cond));
        let cfg = NftConfig {
            kl_weight: 0.5,
            ..NftConfig::default()
        };
        let (terms, _) = total_objective(&model, &ctx, 0.5, &cfg).unwrap();
        assert_eq!(terms.kl, 0.0, "reference equals current prediction");
        ctx.v_ref = Some(vec![0.0; 16]);
        let (terms2, _) = total_objective(&model, &ctx, 0.5, &cfg).unwrap();
        let expected = mean_squared_error(&model.evaluate(&ctx.x_t, ctx.t, &ctx.cond), &[0.0; 16]);
        assert!((terms2.kl - expected).abs() < 1e-12);
        // Disabled by weight zero even with a reference present.
        let off = NftConfig {
            kl_weight: 0.0,
            ..cfg
        };
        let (terms3, _) = total_objective(&model, &ctx, 0.5, &off).unwrap();
        assert_eq!(terms3.kl, 0.0);
    }

    #[test]
    fn objective_gradient_descent_direction() {
        // One small step along the negative gradient decreases the objective.
        let mut rng = stream(2024, "descent", &[]);
        let mut model = MlpVelocityField::new(16, 4, &[5], 73);
        let ctx = make_context(&mut rng, 4, square_mask(4, 1, 3));
        let cfg = NftConfig::default();
        let (before, grad) = total_objective(&model, &ctx, 0.8, &cfg).unwrap();
        let lr = 1e-3;
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        let (after, _) = total_objective(&model, &ctx, 0.8, &cfg).unwrap();
        assert!(after.total < before.total, "{} -> {}", before.total, after.total);
    }
}
