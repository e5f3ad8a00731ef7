//! Dense 2D grids, binary edit masks, Gaussian windows, same-padded
//! convolution, square dilation, and integer-factor mask downsampling.
//!
//! Masks are always stored in the canonical orientation `1 = edit region`;
//! non-edit regions are obtained via [`EditMask::complement`], never stored.

pub mod pgm;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense row-major H×W grid of `f64` values.
///
/// Image-role grids keep values in `[0, 1]`; latents are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::InvalidArgument(
                "grid dimensions must be positive".into(),
            ));
        }
        if values.len() != height * width {
            return Err(GridError::InvalidArgument(format!(
                "expected {} values for a {height}x{width} grid, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Grid2D {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Grid2D {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Grid2D {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Build from arbitrary values, clamping into the image range `[0, 1]`.
    pub fn from_values_clamped(height: usize, width: usize, values: &[f64]) -> Result<Self, GridError> {
        let clamped = values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Grid2D::new(height, width, clamped)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn is_image_range(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// FNV-1a hash of the raw value bits; used as a reward-cache key.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |word: u64| {
            for shift in (0..64).step_by(8) {
                h ^= (word >> shift) & 0xff;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        mix(self.height as u64);
        mix(self.width as u64);
        for v in &self.values {
            mix(v.to_bits());
        }
        h
    }
}

/// Binary H×W mask; bit 1 marks the edit region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl EditMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::InvalidArgument(
                "mask dimensions must be positive".into(),
            ));
        }
        if bits.len() != height * width {
            return Err(GridError::InvalidArgument(format!(
                "expected {} bits for a {height}x{width} mask, got {}",
                height * width,
                bits.len()
            )));
        }
        if let Some(bad) = bits.iter().find(|b| **b > 1) {
            return Err(GridError::InvalidMask(format!(
                "mask entries must be 0 or 1, found {bad}"
            )));
        }
        Ok(EditMask {
            height,
            width,
            bits,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        EditMask {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        EditMask {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn bit(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set_bit(&mut self, row: usize, col: usize, bit: u8) {
        assert!(bit <= 1, "mask bits are 0 or 1");
        self.bits[row * self.width + col] = bit;
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|b| **b == 1).count()
    }

    pub fn same_shape(&self, other: &EditMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Bitwise `1 - b`.
    pub fn complement(&self) -> EditMask {
        EditMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| 1 - b).collect(),
        }
    }

    /// Square dilation: output bit is 1 iff any input 1-bit lies within
    /// Chebyshev distance `radius`. Separable into a row pass and a column
    /// pass.
    pub fn dilate(&self, radius: usize) -> EditMask {
        if radius == 0 {
            return self.clone();
        }
        let (h, w) = (self.height, self.width);
        let mut rows = vec![0u8; h * w];
        for r in 0..h {
            for c in 0..w {
                let lo = c.saturating_sub(radius);
                let hi = (c + radius).min(w - 1);
                rows[r * w + c] = u8::from(self.bits[r * w + lo..=r * w + hi].contains(&1));
            }
        }
        let mut out = vec![0u8; h * w];
        for c in 0..w {
            for r in 0..h {
                let lo = r.saturating_sub(radius);
                let hi = (r + radius).min(h - 1);
                out[r * w + c] = u8::from((lo..=hi).any(|rr| rows[rr * w + c] == 1));
            }
        }
        EditMask {
            height: h,
            width: w,
            bits: out,
        }
    }

    /// Any-pooling downsample: each `factor`×`factor` cell becomes 1 iff any
    /// covered pixel is 1, so edit coverage is never lost.
    pub fn downsample(&self, factor: usize) -> Result<EditMask, GridError> {
        if factor == 0 {
            return Err(GridError::InvalidArgument(
                "downsample factor must be positive".into(),
            ));
        }
        if !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return Err(GridError::InvalidArgument(format!(
                "mask shape {}x{} is not divisible by factor {factor}",
                self.height, self.width
            )));
        }
        let (oh, ow) = (self.height / factor, self.width / factor);
        let mut bits = vec![0u8; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                let mut any = 0u8;
                'cell: for dr in 0..factor {
                    for dc in 0..factor {
                        if self.bit(r * factor + dr, c * factor + dc) == 1 {
                            any = 1;
                            break 'cell;
                        }
                    }
                }
                bits[r * ow + c] = any;
            }
        }
        Ok(EditMask {
            height: oh,
            width: ow,
            bits,
        })
    }

    /// Mask as a 0.0/1.0 grid, for use in weighted convolutions.
    pub fn to_grid(&self) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            values: self.bits.iter().map(|b| *b as f64).collect(),
        }
    }
}

/// Normalized 2D Gaussian window (separable, weights sum to 1).
#[derive(Debug, Clone)]
pub struct GaussianWindow {
    size: usize,
    sigma: f64,
    weights: Vec<f64>,
    weights_1d: Vec<f64>,
}

impl GaussianWindow {
    pub fn new(size: usize, sigma: f64) -> Result<Self, GridError> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(GridError::InvalidArgument(format!(
                "window size must be odd and positive, got {size}"
            )));
        }
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(GridError::InvalidArgument(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        let half = (size / 2) as isize;
        let mut weights_1d: Vec<f64> = (-half..=half)
            .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = weights_1d.iter().sum();
        for w in weights_1d.iter_mut() {
            *w /= sum;
        }
        let mut weights = Vec::with_capacity(size * size);
        for &wr in &weights_1d {
            for &wc in &weights_1d {
                weights.push(wr * wc);
            }
        }
        Ok(GaussianWindow {
            size,
            sigma,
            weights,
            weights_1d,
        })
    }

    /// The 11×11, σ=1.5 window used by the masked-similarity metrics.
    pub fn default_metric() -> Self {
        GaussianWindow::new(11, 1.5).expect("default window parameters are valid")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_1d(&self) -> &[f64] {
        &self.weights_1d
    }
}

/// Same-shape convolution with zero padding.
///
/// The window is separable, so this runs a row pass then a column pass;
/// with zero padding the result is identical to the full 2D sum. Callers in
/// the metrics pipeline divide by the convolved mask area, which cancels the
/// boundary attenuation the padding introduces.
pub fn convolve_same(grid: &Grid2D, window: &GaussianWindow) -> Grid2D {
    let (h, w) = (grid.height, grid.width);
    let k = window.weights_1d.len();
    let half = (k / 2) as isize;
    let mut rows = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, &wt) in window.weights_1d.iter().enumerate() {
                let cc = c as isize + i as isize - half;
                if cc >= 0 && (cc as usize) < w {
                    acc += wt * grid.values[r * w + cc as usize];
                }
            }
            rows[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, &wt) in window.weights_1d.iter().enumerate() {
                let rr = r as isize + i as isize - half;
                if rr >= 0 && (rr as usize) < h {
                    acc += wt * rows[rr as usize * w + c];
                }
            }
            out[r * w + c] = acc;
        }
    }
    Grid2D {
        height: h,
        width: w,
        values: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_grid(rng: &mut Rng, h: usize, w: usize) -> Grid2D {
        let values = (0..h * w).map(|_| rng.next_f64()).collect();
        Grid2D::new(h, w, values).unwrap()
    }

    /// Full 2D double-loop convolution with zero padding (oracle).
    fn convolve_brute(grid: &Grid2D, window: &GaussianWindow) -> Grid2D {
        let (h, w) = (grid.height(), grid.width());
        let k = window.size();
        let half = (k / 2) as isize;
        let mut out = Grid2D::zeros(h, w);
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        let rr = r as isize + i as isize - half;
                        let cc = c as isize + j as isize - half;
                        if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                            acc += window.weights()[i * k + j] * grid.get(rr as usize, cc as usize);
                        }
                    }
                }
                out.set(r, c, acc);
            }
        }
        out
    }

    #[test]
    fn window_single_element_is_one() {
        let w = GaussianWindow::new(1, 1.5).unwrap();
        assert_eq!(w.weights(), &[1.0]);
    }

    #[test]
    fn window_weights_sum_to_one() {
        let w = GaussianWindow::new(11, 1.5).unwrap();
        let sum: f64 = w.weights().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
    }

    #[test]
    fn window_center_is_maximum() {
        let w = GaussianWindow::new(3, 1.0).unwrap();
        let center = w.weights()[4];
        assert!(w.weights().iter().all(|&x| x <= center));
    }

    #[test]
    fn window_symmetric_under_rotation_and_reflection() {
        let w = GaussianWindow::new(5, 1.5).unwrap();
        let k = 5;
        for i in 0..k {
            for j in 0..k {
                let a = w.weights()[i * k + j];
                assert_eq!(a, w.weights()[j * k + (k - 1 - i)], "90 degree rotation");
                assert_eq!(a, w.weights()[i * k + (k - 1 - j)], "reflection");
            }
        }
    }

    #[test]
    fn window_rejects_bad_arguments() {
        assert!(GaussianWindow::new(4, 1.5).is_err());
        assert!(GaussianWindow::new(0, 1.5).is_err());
        assert!(GaussianWindow::new(3, 0.0).is_err());
        assert!(GaussianWindow::new(3, -1.0).is_err());
    }

    #[test]
    fn convolve_identity_kernel() {
        let mut rng = Rng::from_seed(11);
        let g = random_grid(&mut rng, 6, 7);
        let w = GaussianWindow::new(1, 1.0).unwrap();
        let out = convolve_same(&g, &w);
        assert_eq!(out.values(), g.values());
    }

    #[test]
    fn convolve_constant_interior() {
        let g = Grid2D::constant(9, 9, 0.37);
        let w = GaussianWindow::new(3, 1.0).unwrap();
        let out = convolve_same(&g, &w);
        // Interior pixels see the full window, whose weights sum to 1.
        for r in 1..8 {
            for c in 1..8 {
                assert!((out.get(r, c) - 0.37).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn convolve_matches_brute_force() {
        let mut rng = Rng::from_seed(21);
        for _ in 0..5 {
            let g = random_grid(&mut rng, 5, 5);
            let w = GaussianWindow::new(3, 0.8).unwrap();
            let fast = convolve_same(&g, &w);
            let slow = convolve_brute(&g, &w);
            for (a, b) in fast.values().iter().zip(slow.values()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
        // 16x16 with the metric window, per the stated tolerance.
        let g = random_grid(&mut rng, 16, 16);
        let w = GaussianWindow::default_metric();
        let fast = convolve_same(&g, &w);
        let slow = convolve_brute(&g, &w);
        for (a, b) in fast.values().iter().zip(slow.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let mut m = EditMask::zeros(5, 5);
        m.set_bit(1, 3, 1);
        assert_eq!(m.dilate(0), m);
    }

    #[test]
    fn dilate_single_bit_becomes_block() {
        let mut m = EditMask::zeros(5, 5);
        m.set_bit(2, 2, 1);
        let d = m.dilate(1);
        for r in 0..5 {
            for c in 0..5 {
                let expected = u8::from((1..=3).contains(&r) && (1..=3).contains(&c));
                assert_eq!(d.bit(r, c), expected, "at ({r},{c})");
            }
        }
        assert_eq!(d.active_count(), 9);
    }

    #[test]
    fn dilate_all_ones_fixed_point() {
        let m = EditMask::ones(4, 6);
        assert_eq!(m.dilate(3), m);
    }

    #[test]
    fn dilate_is_monotone_and_composes() {
        let mut rng = Rng::from_seed(5);
        for _ in 0..10 {
            let bits: Vec<u8> = (0..48).map(|_| u8::from(rng.next_f64() < 0.15)).collect();
            let m = EditMask::new(6, 8, bits).unwrap();
            let d1 = m.dilate(1);
            for i in 0..m.len() {
                assert!(d1.bits()[i] >= m.bits()[i], "dilation keeps every 1-bit");
            }
            assert_eq!(d1.dilate(2), m.dilate(3), "dilate(a) then dilate(b) = dilate(a+b)");
        }
    }

    #[test]
    fn downsample_any_pooling() {
        let mut m = EditMask::zeros(4, 4);
        m.set_bit(1, 2, 1);
        let d = m.downsample(2).unwrap();
        assert_eq!(d.height(), 2);
        assert_eq!(d.active_count(), 1);
        assert_eq!(d.bit(0, 1), 1);
    }

    #[test]
    fn downsample_factor_one_is_identity() {
        let mut m = EditMask::zeros(3, 3);
        m.set_bit(0, 0, 1);
        assert_eq!(m.downsample(1).unwrap(), m);
    }

    #[test]
    fn downsample_zero_iff_zero() {
        let z = EditMask::zeros(4, 6);
        assert_eq!(z.downsample(2).unwrap().active_count(), 0);
        let mut rng = Rng::from_seed(17);
        for _ in 0..10 {
            let bits: Vec<u8> = (0..24).map(|_| u8::from(rng.next_f64() < 0.3)).collect();
            let m = EditMask::new(4, 6, bits).unwrap();
            let d = m.downsample(2).unwrap();
            assert!(d.active_count() <= m.active_count());
            assert_eq!(d.active_count() == 0, m.active_count() == 0);
        }
    }

    #[test]
    fn downsample_rejects_non_divisible() {
        let m = EditMask::zeros(5, 4);
        assert!(m.downsample(2).is_err());
    }

    #[test]
    fn complement_involution_and_partition() {
        let mut rng = Rng::from_seed(23);
        let bits: Vec<u8> = (0..30).map(|_| u8::from(rng.next_f64() < 0.5)).collect();
        let m = EditMask::new(5, 6, bits).unwrap();
        let c = m.complement();
        assert_eq!(c.complement(), m);
        for i in 0..m.len() {
            assert_eq!(m.bits()[i] + c.bits()[i], 1);
        }
        assert_eq!(EditMask::ones(2, 2).complement(), EditMask::zeros(2, 2));
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(EditMask::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn grid_shape_is_validated() {
        assert!(Grid2D::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Grid2D::new(0, 2, vec![]).is_err());
    }
}
