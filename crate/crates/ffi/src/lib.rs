//! C ABI for the scheduler, the Fréchet distance and saved generators.
//!
//! Every fallible function returns a [`PgStatus`]; on failure the message is
//! available from [`pg_last_error`] on the same thread. Handles are opaque and
//! must be released with their `_free` function. Panics never cross the
//! boundary: they are reported as [`PgStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pairgan::fid::{frechet_distance, GaussianStats};
use pairgan::models::{generate, GeneratorConfig};
use pairgan::nalgebra::{DMatrix, DVector};
use pairgan::nn::{load_checkpoint, ParamSet, Tensor4};
use pairgan::scheduler::{self, Direction, LossHistory, Recorded, SchedulerConfig, Target};
use pairgan::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Numerical = 5,
    Checkpoint = 6,
    Empty = 7,
    Internal = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgTarget {
    None = 0,
    Generator = 1,
    Discriminator = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgDirection {
    Higher = 0,
    Lower = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgSchedulerConfig {
    pub nu: usize,
    pub epsilon: f64,
    pub kappa: f64,
    pub k_max: u32,
    pub enabled: bool,
    pub direction: PgDirection,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgDecision {
    pub target: PgTarget,
    pub extra_batches: u32,
    pub rps_g: f64,
    pub rps_d: f64,
    pub delta: f64,
}

/// Opaque per-network loss history.
pub struct PgLossHistory(LossHistory);

/// Opaque generator loaded from a checkpoint.
pub struct PgGenerator {
    params: ParamSet<f32>,
    config: GeneratorConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PgStatus {
    match e {
        Error::Shape(_) => PgStatus::Shape,
        Error::Config(_) | Error::Unpaired(_) | Error::Data(_) => PgStatus::InvalidArgument,
        Error::Unrecorded(_) => PgStatus::Internal,
        Error::Empty(_) => PgStatus::Empty,
        Error::NonFinite(_) | Error::Numerical(_) => PgStatus::Numerical,
        Error::Checkpoint(_) => PgStatus::Checkpoint,
        Error::Io { .. } | Error::IoBare(_) | Error::Decode { .. } | Error::Image(_) => PgStatus::Io,
        Error::Json(_) | Error::Csv(_) => PgStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), (PgStatus, String)>) -> PgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PgStatus::Internal
        }
    }
}

fn lib(e: Error) -> (PgStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PgStatus, String) {
    (PgStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> (PgStatus, String) {
    (PgStatus::InvalidArgument, msg.into())
}

/// Message of the last failed call on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn pg_history_new() -> *mut PgLossHistory {
    Box::into_raw(Box::new(PgLossHistory(LossHistory::new())))
}

/// # Safety
/// `history` must be NULL or a pointer from [`pg_history_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pg_history_free(history: *mut PgLossHistory) {
    if !history.is_null() {
        drop(unsafe { Box::from_raw(history) });
    }
}

/// Append one epoch loss. `floored` (optional) receives 1 when the value was
/// raised to the positive floor.
///
/// # Safety
/// `history` must be a live handle; `floored` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn pg_history_record(history: *mut PgLossHistory, loss: f64, floored: *mut bool) -> PgStatus {
    guard(|| {
        let h = unsafe { history.as_mut() }.ok_or_else(|| null("history"))?;
        let r = h.0.record_epoch(loss).map_err(lib)?;
        if let Some(f) = unsafe { floored.as_mut() } {
            *f = r == Recorded::Floored;
        }
        Ok(())
    })
}

/// Number of recorded epochs (0 for NULL).
///
/// # Safety
/// `history` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_history_len(history: *const PgLossHistory) -> usize {
    unsafe { history.as_ref() }.map_or(0, |h| h.0.len())
}

/// Relative performance score over the last `nu` epochs.
///
/// # Safety
/// `history` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_history_rps(history: *const PgLossHistory, nu: usize, out: *mut f64) -> PgStatus {
    guard(|| {
        let h = unsafe { history.as_ref() }.ok_or_else(|| null("history"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = scheduler::rps(&h.0, nu).map_err(lib)?;
        Ok(())
    })
}

fn to_config(c: &PgSchedulerConfig) -> SchedulerConfig {
    SchedulerConfig {
        nu: c.nu,
        epsilon: c.epsilon,
        kappa: c.kappa,
        k_max: c.k_max,
        enabled: c.enabled,
        direction: match c.direction {
            PgDirection::Higher => Direction::Higher,
            PgDirection::Lower => Direction::Lower,
        },
    }
}

/// Fill `out` with the default scheduler settings.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pg_scheduler_config_default(out: *mut PgSchedulerConfig) -> PgStatus {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let d = SchedulerConfig::default();
        *out = PgSchedulerConfig {
            nu: d.nu,
            epsilon: d.epsilon,
            kappa: d.kappa,
            k_max: d.k_max,
            enabled: d.enabled,
            direction: match d.direction {
                Direction::Higher => PgDirection::Higher,
                Direction::Lower => PgDirection::Lower,
            },
        };
        Ok(())
    })
}

/// Reallocation decision for a pair of scores.
///
/// # Safety
/// `config` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_decide(
    rps_g: f64,
    rps_d: f64,
    config: *const PgSchedulerConfig,
    out: *mut PgDecision,
) -> PgStatus {
    guard(|| {
        let cfg = to_config(unsafe { config.as_ref() }.ok_or_else(|| null("config"))?);
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        cfg.validate().map_err(lib)?;
        let d = scheduler::decide(rps_g, rps_d, &cfg);
        *out = PgDecision {
            target: match d.target {
                Target::None => PgTarget::None,
                Target::Generator => PgTarget::Generator,
                Target::Discriminator => PgTarget::Discriminator,
            },
            extra_batches: d.extra_batches,
            rps_g: d.rps_g,
            rps_d: d.rps_d,
            delta: d.delta,
        };
        Ok(())
    })
}

unsafe fn stats(mu: *const f64, sigma: *const f64, dim: usize, which: &str) -> Result<GaussianStats, (PgStatus, String)> {
    if mu.is_null() || sigma.is_null() {
        return Err(null(which));
    }
    let mu = unsafe { std::slice::from_raw_parts(mu, dim) };
    let sigma = unsafe { std::slice::from_raw_parts(sigma, dim * dim) };
    GaussianStats::new(DVector::from_column_slice(mu), DMatrix::from_row_slice(dim, dim, sigma), 0).map_err(lib)
}

/// Fréchet distance between two Gaussians given as mean vectors of length
/// `dim` and row-major `dim × dim` covariance matrices.
///
/// # Safety
/// Each pointer must reference at least the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pg_frechet_distance(
    mu_a: *const f64,
    sigma_a: *const f64,
    mu_b: *const f64,
    sigma_b: *const f64,
    dim: usize,
    out: *mut f64,
) -> PgStatus {
    guard(|| {
        if dim == 0 {
            return Err(invalid("dim must be at least 1"));
        }
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let a = unsafe { stats(mu_a, sigma_a, dim, "first distribution") }?;
        let b = unsafe { stats(mu_b, sigma_b, dim, "second distribution") }?;
        *out = frechet_distance(&a, &b).map_err(lib)?;
        Ok(())
    })
}

/// Load a generator checkpoint for square images of side `image_size`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_generator_load(
    path: *const c_char,
    image_size: usize,
    out: *mut *mut PgGenerator,
) -> PgStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let params = load_checkpoint(Path::new(path)).map_err(lib)?;
        let config = GeneratorConfig::infer(&params, image_size).map_err(lib)?;
        *out = Box::into_raw(Box::new(PgGenerator { params, config }));
        Ok(())
    })
}

/// # Safety
/// `generator` must be NULL or a handle from [`pg_generator_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pg_generator_free(generator: *mut PgGenerator) {
    if !generator.is_null() {
        drop(unsafe { Box::from_raw(generator) });
    }
}

/// Floats per image (`channels × size × size`) the generator consumes; 0 for NULL.
///
/// # Safety
/// `generator` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_generator_sample_len(generator: *const PgGenerator) -> usize {
    unsafe { generator.as_ref() }.map_or(0, |g| g.config.in_channels * g.config.input_size * g.config.input_size)
}

/// Restore `count` images. `input` and `output` are planar (N, C, H, W) in
/// `[−1, 1]`, each `count × pg_generator_sample_len` floats long.
///
/// # Safety
/// `generator` must be a live handle; the buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pg_generator_run(
    generator: *const PgGenerator,
    input: *const f32,
    count: usize,
    output: *mut f32,
    output_len: usize,
) -> PgStatus {
    guard(|| {
        let g = unsafe { generator.as_ref() }.ok_or_else(|| null("generator"))?;
        if input.is_null() {
            return Err(null("input"));
        }
        if output.is_null() {
            return Err(null("output"));
        }
        let c = &g.config;
        let per_in = c.in_channels * c.input_size * c.input_size;
        let per_out = c.out_channels * c.input_size * c.input_size;
        if count == 0 {
            return Err(invalid("count must be at least 1"));
        }
        if output_len != count * per_out {
            return Err((
                PgStatus::Shape,
                format!("output buffer holds {output_len} floats, {} needed", count * per_out),
            ));
        }
        let data = unsafe { std::slice::from_raw_parts(input, count * per_in) }.to_vec();
        let x = Tensor4::from_vec([count, c.in_channels, c.input_size, c.input_size], data).map_err(lib)?;
        let y = generate(&g.params, c, &x).map_err(lib)?;
        unsafe { std::slice::from_raw_parts_mut(output, output_len) }.copy_from_slice(y.data());
        Ok(())
    })
}
