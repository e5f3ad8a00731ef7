//! C ABI over the masked-consistency metrics and reward math.
//!
//! Grids and masks are opaque handles created and destroyed through this
//! API; every fallible call returns a [`CocoStatus`] and stores a
//! human-readable message retrievable via [`cocoedit_last_error_message`]
//! (thread local). Pointers returned by this library must be freed with the
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cocoedit::grid::pgm::{read_pgm_grid, read_pgm_mask, write_pgm_grid, write_pgm_mask};
use cocoedit::grid::{EditMask, GaussianWindow, Grid2D, GridError};
use cocoedit::metrics::{
    masked_mse, masked_psnr_db, masked_psnr_norm, masked_ssim, pearson, MetricConfig, MetricError,
};
use cocoedit::rewards::{self, RewardError, ZcMode};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CocoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    InvalidMask = 4,
    EmptyRegion = 5,
    UndefinedCorrelation = 6,
    LookupError = 7,
    IoError = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of_grid_error(e: &GridError) -> CocoStatus {
    match e {
        GridError::InvalidArgument(_) => CocoStatus::InvalidArgument,
        GridError::ShapeMismatch(..) => CocoStatus::InvalidArgument,
        GridError::Parse { .. } => CocoStatus::ParseError,
        GridError::InvalidMask(_) => CocoStatus::InvalidMask,
        GridError::Io(_) => CocoStatus::IoError,
    }
}

fn status_of_metric_error(e: &MetricError) -> CocoStatus {
    match e {
        MetricError::InvalidArgument(_) => CocoStatus::InvalidArgument,
        MetricError::ShapeMismatch(..) => CocoStatus::InvalidArgument,
        MetricError::EmptyRegion => CocoStatus::EmptyRegion,
        MetricError::UndefinedCorrelation(_) => CocoStatus::UndefinedCorrelation,
    }
}

fn status_of_reward_error(e: &RewardError) -> CocoStatus {
    match e {
        RewardError::InvalidArgument(_) => CocoStatus::InvalidArgument,
        RewardError::Metric(m) => status_of_metric_error(m),
        RewardError::Parse { .. } => CocoStatus::ParseError,
        RewardError::Lookup(_) => CocoStatus::LookupError,
        RewardError::Io(_) => CocoStatus::IoError,
    }
}

fn guard(f: impl FnOnce() -> CocoStatus) -> CocoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CocoStatus::Panic
        }
    }
}

unsafe fn path_from(ptr: *const c_char) -> Result<PathBuf, CocoStatus> {
    if ptr.is_null() {
        set_error("path pointer is null");
        return Err(CocoStatus::NullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(CocoStatus::InvalidArgument)
        }
    }
}

/// Opaque intensity grid handle.
pub struct CocoGrid(Grid2D);

/// Opaque binary edit-mask handle.
pub struct CocoMask(EditMask);

/// Message describing the most recent error on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cocoedit_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// Create a grid from a row-major buffer of height*width values.
///
/// # Safety
/// `values` must point to `height * width` readable doubles and `out` must
/// be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_grid_new(
    height: usize,
    width: usize,
    values: *const f64,
    out: *mut *mut CocoGrid,
) -> CocoStatus {
    guard(|| {
        if values.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CocoStatus::NullPointer;
        }
        let slice = std::slice::from_raw_parts(values, height.saturating_mul(width));
        match Grid2D::new(height, width, slice.to_vec()) {
            Ok(grid) => {
                *out = Box::into_raw(Box::new(CocoGrid(grid)));
                CocoStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of_grid_error(&e)
            }
        }
    })
}

/// Read an 8-bit PGM (P2/P5, maxval 255) as an intensity grid in [0, 1].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_grid_read_pgm(
    path: *const c_char,
    out: *mut *mut CocoGrid,
) -> CocoStatus {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return CocoStatus::NullPointer;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match read_pgm_grid(&path) {
            Ok(grid) => {
                *out = Box::into_raw(Box::new(CocoGrid(grid)));
                CocoStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of_grid_error(&e)
            }
        }
    })
}

/// Write a grid as binary P5 with maxval 255.
///
/// # Safety
/// `grid` must be a live handle from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_grid_write_pgm(
    grid: *const CocoGrid,
    path: *const c_char,
) -> CocoStatus {
    guard(|| {
        if grid.is_null() {
            set_error("grid pointer is null");
            return CocoStatus::NullPointer;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match write_pgm_grid(&(*grid).0, &path) {
            Ok(()) => CocoStatus::Ok,
            Err(e) => {
                set_error(&e.to_string());
                status_of_grid_error(&e)
            }
        }
    })
}

/// # Safety
/// `grid` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_grid_height(grid: *const CocoGrid) -> usize {
    if grid.is_null() {
        return 0;
    }
    (*grid).0.height()
}

/// # Safety
/// `grid` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_grid_width(grid: *const CocoGrid) -> usize {
    if grid.is_null() {
        return 0;
    }
    (*grid).0.width()
}

/// Copy the grid values into `out`, which must hold height*width doubles.
///
/// # Safety
/// `grid` must be live and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_grid_values(
    grid: *const CocoGrid,
    out: *mut f64,
    len: usize,
) -> CocoStatus {
    guard(|| {
        if grid.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CocoStatus::NullPointer;
        }
        let values = (*grid).0.values();
        if len != values.len() {
            set_error("destination length does not match grid size");
            return CocoStatus::InvalidArgument;
        }
        std::ptr::copy_nonoverlapping(values.as_ptr(), out, len);
        CocoStatus::Ok
    })
}

/// # Safety
/// `grid` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_grid_free(grid: *mut CocoGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Create a mask from a row-major buffer of 0/1 bytes (1 = edit region).
///
/// # Safety
/// `bits` must point to `height * width` readable bytes; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_mask_new(
    height: usize,
    width: usize,
    bits: *const u8,
    out: *mut *mut CocoMask,
) -> CocoStatus {
    guard(|| {
        if bits.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CocoStatus::NullPointer;
        }
        let slice = std::slice::from_raw_parts(bits, height.saturating_mul(width));
        match EditMask::new(height, width, slice.to_vec()) {
            Ok(mask) => {
                *out = Box::into_raw(Box::new(CocoMask(mask)));
                CocoStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of_grid_error(&e)
            }
        }
    })
}

/// Read a PGM mask whose pixels are strictly 0 or 255.
///
/// # Safety
/// `path` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_mask_read_pgm(
    path: *const c_char,
    out: *mut *mut CocoMask,
) -> CocoStatus {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return CocoStatus::NullPointer;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match read_pgm_mask(&path) {
            Ok(mask) => {
                *out = Box::into_raw(Box::new(CocoMask(mask)));
                CocoStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of_grid_error(&e)
            }
        }
    })
}

/// Write a mask as binary P5 with pixels in {0, 255}.
///
/// # Safety
/// `mask` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_mask_write_pgm(
    mask: *const CocoMask,
    path: *const c_char,
) -> CocoStatus {
    guard(|| {
        if mask.is_null() {
            set_error("mask pointer is null");
            return CocoStatus::NullPointer;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match write_pgm_mask(&(*mask).0, &path) {
            Ok(()) => CocoStatus::Ok,
            Err(e) => {
                set_error(&e.to_string());
                status_of_grid_error(&e)
            }
        }
    })
}

/// Square dilation by a Chebyshev radius; returns a new mask handle.
///
/// # Safety
/// `mask` must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_mask_dilate(
    mask: *const CocoMask,
    radius: usize,
    out: *mut *mut CocoMask,
) -> CocoStatus {
    guard(|| {
        if mask.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CocoStatus::NullPointer;
        }
        *out = Box::into_raw(Box::new(CocoMask((*mask).0.dilate(radius))));
        CocoStatus::Ok
    })
}

/// Any-pooling downsample by an integer factor; returns a new mask handle.
///
/// # Safety
/// `mask` must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_mask_downsample(
    mask: *const CocoMask,
    factor: usize,
    out: *mut *mut CocoMask,
) -> CocoStatus {
    guard(|| {
        if mask.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CocoStatus::NullPointer;
        }
        match (*mask).0.downsample(factor) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(CocoMask(m)));
                CocoStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of_grid_error(&e)
            }
        }
    })
}

/// Bitwise complement; returns a new mask handle.
///
/// # Safety
/// `mask` must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_mask_complement(
    mask: *const CocoMask,
    out: *mut *mut CocoMask,
) -> CocoStatus {
    guard(|| {
        if mask.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CocoStatus::NullPointer;
        }
        *out = Box::into_raw(Box::new(CocoMask((*mask).0.complement())));
        CocoStatus::Ok
    })
}

/// # Safety
/// `mask` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_mask_active_count(mask: *const CocoMask) -> usize {
    if mask.is_null() {
        return 0;
    }
    (*mask).0.active_count()
}

/// # Safety
/// `mask` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_mask_free(mask: *mut CocoMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

// ---------------------------------------------------------------------------
// Metrics and rewards
// ---------------------------------------------------------------------------

/// Metric parameters; obtain defaults from [`cocoedit_metric_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CocoMetricParams {
    /// PSNR normalization ceiling in dB.
    pub tau_db: f64,
    pub max_intensity: f64,
    /// Odd SSIM window size.
    pub window_size: usize,
    pub window_sigma: f64,
}

#[no_mangle]
pub extern "C" fn cocoedit_metric_params_default() -> CocoMetricParams {
    CocoMetricParams {
        tau_db: 40.0,
        max_intensity: 1.0,
        window_size: 11,
        window_sigma: 1.5,
    }
}

fn metric_config_from(params: &CocoMetricParams) -> Result<MetricConfig, CocoStatus> {
    let window = GaussianWindow::new(params.window_size, params.window_sigma).map_err(|e| {
        set_error(&e.to_string());
        CocoStatus::InvalidArgument
    })?;
    let mut cfg = MetricConfig::for_max_intensity(params.max_intensity);
    cfg.tau_db = params.tau_db;
    cfg.window = window;
    cfg.validate().map_err(|e| {
        set_error(&e.to_string());
        CocoStatus::InvalidArgument
    })?;
    Ok(cfg)
}

/// Which masked metric to compute.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CocoMetricKind {
    Mse = 0,
    PsnrDb = 1,
    PsnrNorm = 2,
    Ssim = 3,
}

/// Compute a masked metric between `a` and `b` over the 1-bits of `region`.
///
/// `region` marks the pixels to evaluate; callers scoring non-edit
/// consistency should pass the complement of the edit mask.
///
/// # Safety
/// All handles must be live; `params`, `out_value`, `out_active_pixels`
/// must be valid (the last may be NULL if the count is not needed).
#[no_mangle]
pub unsafe extern "C" fn cocoedit_masked_metric(
    kind: CocoMetricKind,
    a: *const CocoGrid,
    b: *const CocoGrid,
    region: *const CocoMask,
    params: *const CocoMetricParams,
    out_value: *mut f64,
    out_active_pixels: *mut usize,
) -> CocoStatus {
    guard(|| {
        if a.is_null() || b.is_null() || region.is_null() || params.is_null() || out_value.is_null()
        {
            set_error("null pointer argument");
            return CocoStatus::NullPointer;
        }
        let cfg = match metric_config_from(&*params) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let result = match kind {
            CocoMetricKind::Mse => masked_mse(&(*a).0, &(*b).0, &(*region).0, &cfg),
            CocoMetricKind::PsnrDb => masked_psnr_db(&(*a).0, &(*b).0, &(*region).0, &cfg),
            CocoMetricKind::PsnrNorm => masked_psnr_norm(&(*a).0, &(*b).0, &(*region).0, &cfg),
            CocoMetricKind::Ssim => masked_ssim(&(*a).0, &(*b).0, &(*region).0, &cfg),
        };
        match result {
            Ok(score) => {
                *out_value = score.value;
                if !out_active_pixels.is_null() {
                    *out_active_pixels = score.active_pixels;
                }
                CocoStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of_metric_error(&e)
            }
        }
    })
}

/// Pixel-similarity reward of `sample` against `input` over the complement
/// of `edit_mask`: `w_ssim * SSIM + (1 - w_ssim) * normalized PSNR`.
///
/// # Safety
/// All handles must be live; `params` and `out_value` valid.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_sim_reward(
    input: *const CocoGrid,
    sample: *const CocoGrid,
    edit_mask: *const CocoMask,
    params: *const CocoMetricParams,
    w_ssim: f64,
    out_value: *mut f64,
) -> CocoStatus {
    guard(|| {
        if input.is_null()
            || sample.is_null()
            || edit_mask.is_null()
            || params.is_null()
            || out_value.is_null()
        {
            set_error("null pointer argument");
            return CocoStatus::NullPointer;
        }
        let cfg = match metric_config_from(&*params) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match rewards::sim_reward(&(*input).0, &(*sample).0, &(*edit_mask).0, &cfg, w_ssim) {
            Ok(v) => {
                *out_value = v;
                CocoStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of_reward_error(&e)
            }
        }
    })
}

/// Sample Pearson correlation of two equally long sequences.
///
/// # Safety
/// `xs` and `ys` must point to `len` readable doubles; `out_value` valid.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_pearson(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    out_value: *mut f64,
) -> CocoStatus {
    guard(|| {
        if xs.is_null() || ys.is_null() || out_value.is_null() {
            set_error("null pointer argument");
            return CocoStatus::NullPointer;
        }
        let xs = std::slice::from_raw_parts(xs, len);
        let ys = std::slice::from_raw_parts(ys, len);
        match pearson(xs, ys) {
            Ok(r) => {
                *out_value = r;
                CocoStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of_metric_error(&e)
            }
        }
    })
}

/// Clipping-scale selection for [`cocoedit_optimality`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CocoZcMode {
    /// Group standard deviation plus a small floor.
    Std = 0,
    /// Largest centered magnitude plus a small floor.
    MaxAbs = 1,
    /// The fixed value passed alongside.
    Fixed = 2,
}

/// Center raw group rewards and map them to optimality probabilities in
/// [0, 1]; also reports the clipping scale that was used.
///
/// # Safety
/// `raw` must point to `len` readable doubles and `out_optimality` to `len`
/// writable doubles; `out_z_c` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cocoedit_optimality(
    raw: *const f64,
    len: usize,
    mode: CocoZcMode,
    fixed_z_c: f64,
    out_optimality: *mut f64,
    out_z_c: *mut f64,
) -> CocoStatus {
    guard(|| {
        if raw.is_null() || out_optimality.is_null() {
            set_error("null pointer argument");
            return CocoStatus::NullPointer;
        }
        let raw = std::slice::from_raw_parts(raw, len);
        let mode = match mode {
            CocoZcMode::Std => ZcMode::Std,
            CocoZcMode::MaxAbs => ZcMode::MaxAbs,
            CocoZcMode::Fixed => ZcMode::Fixed(fixed_z_c),
        };
        match rewards::group_rewards(raw, mode) {
            Ok(group) => {
                std::ptr::copy_nonoverlapping(group.optimality.as_ptr(), out_optimality, len);
                if !out_z_c.is_null() {
                    *out_z_c = group.z_c;
                }
                CocoStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of_reward_error(&e)
            }
        }
    })
}
