//! Masked pixel-consistency metrics.
//!
//! All three metrics take the region to EVALUATE as a mask with 1-bits over
//! the evaluated pixels; callers scoring non-edit consistency pass the
//! complement of the edit mask. Masked-out pixels never enter any
//! computation, so the scores are bitwise insensitive to them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{convolve_same, EditMask, GaussianWindow, Grid2D};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("evaluated region is empty")]
    EmptyRegion,
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
}

/// Parameters shared by the masked metrics.
#[derive(Debug, Clone)]
pub struct MetricConfig {
    /// PSNR normalization ceiling in dB.
    pub tau_db: f64,
    /// Maximum intensity of the pixel range.
    pub max_intensity: f64,
    /// Local-statistics window for SSIM.
    pub window: GaussianWindow,
    /// SSIM stability constant, (0.01 * max_intensity)^2 by convention.
    pub c1: f64,
    /// SSIM stability constant, (0.03 * max_intensity)^2 by convention.
    pub c2: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig::for_max_intensity(1.0)
    }
}

impl MetricConfig {
    pub fn for_max_intensity(max_intensity: f64) -> Self {
        MetricConfig {
            tau_db: 40.0,
            max_intensity,
            window: GaussianWindow::default_metric(),
            c1: (0.01 * max_intensity) * (0.01 * max_intensity),
            c2: (0.03 * max_intensity) * (0.03 * max_intensity),
        }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if !self.tau_db.is_finite() || self.tau_db <= 0.0 {
            return Err(MetricError::InvalidArgument(format!(
                "tau_db must be positive, got {}",
                self.tau_db
            )));
        }
        if !self.max_intensity.is_finite() || self.max_intensity <= 0.0 {
            return Err(MetricError::InvalidArgument(format!(
                "max_intensity must be positive, got {}",
                self.max_intensity
            )));
        }
        if !(self.c1.is_finite() && self.c1 > 0.0 && self.c2.is_finite() && self.c2 > 0.0) {
            return Err(MetricError::InvalidArgument(
                "c1 and c2 must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A metric value together with the number of evaluated pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedScore {
    pub value: f64,
    pub active_pixels: usize,
}

fn check_pair(a: &Grid2D, b: &Grid2D, region: &EditMask) -> Result<usize, MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::ShapeMismatch(
            a.height(),
            a.width(),
            b.height(),
            b.width(),
        ));
    }
    if a.height() != region.height() || a.width() != region.width() {
        return Err(MetricError::ShapeMismatch(
            a.height(),
            a.width(),
            region.height(),
            region.width(),
        ));
    }
    let active = region.active_count();
    if active == 0 {
        return Err(MetricError::EmptyRegion);
    }
    Ok(active)
}

/// Mean squared error over the evaluated region.
pub fn masked_mse(
    a: &Grid2D,
    b: &Grid2D,
    region: &EditMask,
    cfg: &MetricConfig,
) -> Result<MaskedScore, MetricError> {
    cfg.validate()?;
    let active = check_pair(a, b, region)?;
    let mut sum = 0.0;
    for ((&x, &y), &m) in a.values().iter().zip(b.values()).zip(region.bits()) {
        if m == 1 {
            let d = x - y;
            sum += d * d;
        }
    }
    Ok(MaskedScore {
        value: sum / active as f64,
        active_pixels: active,
    })
}

/// Raw PSNR in dB over the evaluated region; +inf when the regions match.
pub fn masked_psnr_db(
    a: &Grid2D,
    b: &Grid2D,
    region: &EditMask,
    cfg: &MetricConfig,
) -> Result<MaskedScore, MetricError> {
    let mse = masked_mse(a, b, region, cfg)?;
    let value = if mse.value == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (cfg.max_intensity * cfg.max_intensity / mse.value).log10()
    };
    Ok(MaskedScore {
        value,
        active_pixels: mse.active_pixels,
    })
}

/// PSNR normalized into `[0, 1]` by the `tau_db` ceiling; an exact match
/// (infinite dB) maps to 1.0.
pub fn masked_psnr_norm(
    a: &Grid2D,
    b: &Grid2D,
    region: &EditMask,
    cfg: &MetricConfig,
) -> Result<MaskedScore, MetricError> {
    let db = masked_psnr_db(a, b, region, cfg)?;
    let value = if db.value.is_infinite() {
        1.0
    } else {
        (db.value / cfg.tau_db).clamp(0.0, 1.0)
    };
    Ok(MaskedScore {
        value,
        active_pixels: db.active_pixels,
    })
}

/// SSIM restricted to the evaluated region via normalized convolution.
///
/// Local means and (co)variances come from Gaussian-filtered masked products
/// divided by the filtered mask, so statistics near the region boundary are
/// renormalized rather than attenuated, and pixels outside the region never
/// contribute. The score is the mean of the local SSIM map over the region.
pub fn masked_ssim(
    a: &Grid2D,
    b: &Grid2D,
    region: &EditMask,
    cfg: &MetricConfig,
) -> Result<MaskedScore, MetricError> {
    cfg.validate()?;
    let active = check_pair(a, b, region)?;
    let n = a.len();
    let m = region.to_grid();

    let mut am = Grid2D::zeros(a.height(), a.width());
    let mut bm = Grid2D::zeros(a.height(), a.width());
    let mut aam = Grid2D::zeros(a.height(), a.width());
    let mut bbm = Grid2D::zeros(a.height(), a.width());
    let mut abm = Grid2D::zeros(a.height(), a.width());
    for i in 0..n {
        let (x, y, w) = (a.values()[i], b.values()[i], m.values()[i]);
        am.values_mut()[i] = x * w;
        bm.values_mut()[i] = y * w;
        aam.values_mut()[i] = x * x * w;
        bbm.values_mut()[i] = y * y * w;
        abm.values_mut()[i] = x * y * w;
    }

    let area = convolve_same(&m, &cfg.window);
    let f_a = convolve_same(&am, &cfg.window);
    let f_b = convolve_same(&bm, &cfg.window);
    let f_aa = convolve_same(&aam, &cfg.window);
    let f_bb = convolve_same(&bbm, &cfg.window);
    let f_ab = convolve_same(&abm, &cfg.window);

    let mut sum = 0.0;
    for i in 0..n {
        if region.bits()[i] != 1 {
            continue;
        }
        // The window's center weight is positive, so the area is positive at
        // every active pixel.
        let inv = 1.0 / area.values()[i];
        let mu_a = f_a.values()[i] * inv;
        let mu_b = f_b.values()[i] * inv;
        // Rounding can push the variance estimates a hair below zero.
        let var_a = (f_aa.values()[i] * inv - mu_a * mu_a).max(0.0);
        let var_b = (f_bb.values()[i] * inv - mu_b * mu_b).max(0.0);
        let cov = f_ab.values()[i] * inv - mu_a * mu_b;
        let s = ((2.0 * mu_a * mu_b + cfg.c1) * (2.0 * cov + cfg.c2))
            / ((mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2));
        sum += s;
    }
    Ok(MaskedScore {
        value: sum / active as f64,
        active_pixels: active,
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::InvalidArgument(format!(
            "sequence lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(MetricError::InvalidArgument(
            "correlation needs at least 2 points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::UndefinedCorrelation(
            "a sequence is constant".into(),
        ));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}
