//! C ABI over `dds-core`.
//!
//! Generator pairs and finished runs are opaque heap handles released with
//! their `_free` functions. Every fallible call returns a [`DdsStatus`]; on
//! failure [`dds_last_error_message`] describes the most recent error on the
//! calling thread. Images are `[3, n, n]` channel-major `double` buffers in
//! `[-1, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dds_core::dds::{run_dds, CrossoverNorm, DdsConfig, InitMode, LossWeights, RunRecord, Scene};
use dds_core::generators::{make_neural_pair_sized, sample_latent, GeneratorPair};
use dds_core::metrics::{fid, psnr, ssim, FeatureSample};
use dds_core::segmentation::{segment_analytic, segment_threshold, Part};
use dds_core::tensor::Tensor;
use dds_core::DdsError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DdsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    BufferTooSmall = 4,
    NonFinite = 5,
    Unsupported = 6,
    Numerical = 7,
    Io = 8,
    Panic = 9,
}

/// Which image of a finished run to copy out.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DdsImage {
    Source = 0,
    Target = 1,
    Crossover = 2,
    /// The dual-domain result `G_t(ẑ)`.
    Result = 3,
    ResultSource = 4,
}

/// How the run derives its masks from the two reference images.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DdsMaskMode {
    /// Analytic blob support; `part` selects the blob, `-1` the union.
    Analytic = 0,
    /// Pixels whose `threshold_channel` exceeds `threshold_tau`.
    Threshold = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdsRunParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lr: f64,
    pub max_iterations: usize,
    /// Seed of the paired reference latent.
    pub z_seed: u64,
    /// Seed of the random latent initialization.
    pub init_seed: u64,
    /// Start from the reference latent instead of a random draw.
    pub init_from_reference: bool,
    /// Use the Euclidean norm instead of the mean squared error for the
    /// crossover term.
    pub crossover_l2: bool,
    pub mask_mode: DdsMaskMode,
    pub part: i32,
    pub threshold_channel: usize,
    pub threshold_tau: f64,
}

/// A source/target generator pair.
pub struct DdsPair {
    pair: GeneratorPair,
}

/// A finished synthesis run.
pub struct DdsRun {
    scene: Scene,
    record: RunRecord,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn status_of(err: &DdsError) -> DdsStatus {
    match err {
        DdsError::ShapeMismatch { .. } | DdsError::DataLength { .. } | DdsError::LatentDim { .. } => {
            DdsStatus::ShapeMismatch
        }
        DdsError::NonFinite { .. } | DdsError::NonFiniteLoss { .. } => DdsStatus::NonFinite,
        DdsError::UnsupportedGenerator(_) => DdsStatus::Unsupported,
        DdsError::NotSymmetric(_) | DdsError::NotPsd(_) | DdsError::TooFewSamples(_) => DdsStatus::Numerical,
        DdsError::Io(_) | DdsError::Png { .. } | DdsError::Json(_) => DdsStatus::Io,
        _ => DdsStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic for [`dds_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), (DdsStatus, String)>) -> DdsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdsStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DdsStatus::Panic
        }
    }
}

fn core<T>(r: dds_core::Result<T>) -> Result<T, (DdsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (DdsStatus, String) {
    (DdsStatus::NullPointer, format!("{name} is null"))
}

/// Reads `len` doubles from `ptr`.
///
/// # Safety
/// `ptr` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], (DdsStatus, String)> {
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Copies `data` into a caller buffer of `capacity` doubles.
///
/// # Safety
/// `out` must be null or point to `capacity` writable doubles.
unsafe fn copy_out(data: &[f64], out: *mut f64, capacity: usize) -> Result<(), (DdsStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    if capacity < data.len() {
        return Err((
            DdsStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, need {}", data.len()),
        ));
    }
    ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dds_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fills `out` with the default parameters.
///
/// # Safety
/// `out` must be null or point to writable `DdsRunParams` storage.
#[no_mangle]
pub unsafe extern "C" fn dds_run_params_default(out: *mut DdsRunParams) -> DdsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = DdsConfig::default();
        out.write(DdsRunParams {
            alpha: d.weights.source,
            beta: d.weights.target,
            gamma: d.weights.crossover,
            lr: d.lr,
            max_iterations: d.max_iterations,
            z_seed: 0,
            init_seed: 1,
            init_from_reference: false,
            crossover_l2: false,
            mask_mode: DdsMaskMode::Analytic,
            part: 0,
            threshold_channel: 0,
            threshold_tau: 0.0,
        });
        Ok(())
    })
}

fn store_pair(pair: dds_core::Result<GeneratorPair>, out: *mut *mut DdsPair) -> DdsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let pair = core(pair)?;
        // SAFETY: checked non-null; the caller provides writable storage.
        unsafe { out.write(Box::into_raw(Box::new(DdsPair { pair }))) };
        Ok(())
    })
}

/// Analytic blob pair rendering `size`×`size` images.
///
/// # Safety
/// `out` must be null or point to writable pointer storage.
#[no_mangle]
pub unsafe extern "C" fn dds_pair_new_analytic(size: usize, out: *mut *mut DdsPair) -> DdsStatus {
    store_pair(GeneratorPair::analytic(size), out)
}

/// Seeded neural pair whose target weights are perturbed by `scale`.
///
/// # Safety
/// `out` must be null or point to writable pointer storage.
#[no_mangle]
pub unsafe extern "C" fn dds_pair_new_neural(seed: u64, scale: f64, size: usize, out: *mut *mut DdsPair) -> DdsStatus {
    store_pair(make_neural_pair_sized(seed, scale, size), out)
}

/// # Safety
/// `pair` must be null or a handle from a `dds_pair_new_*` call not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dds_pair_free(pair: *mut DdsPair) {
    if !pair.is_null() {
        drop(Box::from_raw(pair));
    }
}

/// Latent dimension and image side of a pair.
///
/// # Safety
/// `pair` must be a live handle; the out pointers must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn dds_pair_info(pair: *const DdsPair, latent_dim: *mut usize, image_size: *mut usize) -> DdsStatus {
    guard(|| {
        let p = pair.as_ref().ok_or_else(|| null("pair"))?;
        if latent_dim.is_null() || image_size.is_null() {
            return Err(null("out"));
        }
        latent_dim.write(p.pair.latent_dim());
        image_size.write(p.pair.image_size());
        Ok(())
    })
}

fn run_with(pair: &GeneratorPair, p: &DdsRunParams) -> dds_core::Result<DdsRun> {
    let z = sample_latent(p.z_seed, pair.latent_dim())?;
    let (y_s, y_t) = match p.mask_mode {
        DdsMaskMode::Analytic => {
            let part = if p.part < 0 { Part::Union } else { Part::Blob(p.part as usize) };
            (segment_analytic(&pair.source, &z, part)?, segment_analytic(&pair.target, &z, part)?)
        }
        DdsMaskMode::Threshold => {
            let (x_s, x_t) = pair.images(&z)?;
            (
                segment_threshold(&x_s, p.threshold_channel, p.threshold_tau)?,
                segment_threshold(&x_t, p.threshold_channel, p.threshold_tau)?,
            )
        }
    };
    let scene = Scene::paired(pair, &z, y_s, y_t)?;
    let config = DdsConfig {
        weights: LossWeights {
            source: p.alpha,
            target: p.beta,
            crossover: p.gamma,
        },
        lr: p.lr,
        max_iterations: p.max_iterations,
        init: if p.init_from_reference { InitMode::FromZStar } else { InitMode::Random },
        crossover_norm: if p.crossover_l2 { CrossoverNorm::L2 } else { CrossoverNorm::Mse },
        seed: p.init_seed,
        ..DdsConfig::default()
    };
    let record = run_dds(&config, pair, &scene)?;
    Ok(DdsRun { scene, record })
}

/// Runs a paired synthesis on `pair` with the default backbone.
///
/// # Safety
/// `pair` must be a live handle, `params` readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dds_run(pair: *const DdsPair, params: *const DdsRunParams, out: *mut *mut DdsRun) -> DdsStatus {
    guard(|| {
        let pair = pair.as_ref().ok_or_else(|| null("pair"))?;
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let run = core(run_with(&pair.pair, params))?;
        out.write(Box::into_raw(Box::new(run)));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle from [`dds_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dds_run_free(run: *mut DdsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of completed iterations (rows of the loss trace).
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dds_run_iterations(run: *const DdsRun, out: *mut usize) -> DdsStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(r.record.iterations());
        Ok(())
    })
}

/// Copies the loss trace as rows of `(L_s, L_t, L_c, total)`; needs
/// `4 * iterations` doubles.
///
/// # Safety
/// `run` must be a live handle and `out` point to `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn dds_run_losses(run: *const DdsRun, out: *mut f64, capacity: usize) -> DdsStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let flat: Vec<f64> = r
            .record
            .losses
            .iter()
            .flat_map(|l| [l.source, l.target, l.crossover, l.total])
            .collect();
        copy_out(&flat, out, capacity)
    })
}

/// Copies one image of the run; needs `3 * n * n` doubles.
///
/// # Safety
/// `run` must be a live handle and `out` point to `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn dds_run_image(run: *const DdsRun, which: DdsImage, out: *mut f64, capacity: usize) -> DdsStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let crossover;
        let image: &Tensor = match which {
            DdsImage::Source => &r.scene.x_s,
            DdsImage::Target => &r.scene.x_t,
            DdsImage::Crossover => {
                crossover = core(r.scene.crossover())?;
                &crossover
            }
            DdsImage::Result => &r.record.final_image,
            DdsImage::ResultSource => &r.record.final_source_image,
        };
        copy_out(image.data(), out, capacity)
    })
}

/// Final latent code; needs `latent_dim` doubles.
///
/// # Safety
/// `run` must be a live handle and `out` point to `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn dds_run_latent(run: *const DdsRun, out: *mut f64, capacity: usize) -> DdsStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        copy_out(&r.record.final_latent.values, out, capacity)
    })
}

/// Global SSIM of two `[0, 1]` buffers of `len` values.
///
/// # Safety
/// `x`, `y` must point to `len` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn dds_ssim(x: *const f64, y: *const f64, len: usize, out: *mut f64) -> DdsStatus {
    guard(|| {
        let (a, b) = (slice(x, len, "x")?, slice(y, len, "y")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let (a, b) = (core(Tensor::new(&[len], a.to_vec()))?, core(Tensor::new(&[len], b.to_vec()))?);
        out.write(core(ssim(&a, &b))?);
        Ok(())
    })
}

/// PSNR in dB of two `[0, 1]` buffers; `+inf` when identical.
///
/// # Safety
/// `x`, `y` must point to `len` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn dds_psnr(x: *const f64, y: *const f64, len: usize, out: *mut f64) -> DdsStatus {
    guard(|| {
        let (a, b) = (slice(x, len, "x")?, slice(y, len, "y")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let (a, b) = (core(Tensor::new(&[len], a.to_vec()))?, core(Tensor::new(&[len], b.to_vec()))?);
        out.write(core(psnr(&a, &b))?);
        Ok(())
    })
}

fn sample(data: &[f64], rows: usize, dim: usize) -> dds_core::Result<FeatureSample> {
    if dim == 0 {
        return Err(DdsError::InvalidArgument("feature dimension must be positive".into()));
    }
    FeatureSample::new(data.chunks(dim).take(rows).map(<[f64]>::to_vec).collect())
}

/// Fréchet distance between two row-major sample matrices of `dim` columns
/// with `rows_a` and `rows_b` rows.
///
/// # Safety
/// `a` must point to `rows_a * dim` doubles, `b` to `rows_b * dim`, and
/// `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn dds_fid(
    a: *const f64,
    rows_a: usize,
    b: *const f64,
    rows_b: usize,
    dim: usize,
    out: *mut f64,
) -> DdsStatus {
    guard(|| {
        let sa = slice(a, rows_a * dim, "a")?;
        let sb = slice(b, rows_b * dim, "b")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let value = core(sample(sa, rows_a, dim).and_then(|x| fid(&x, &sample(sb, rows_b, dim)?)))?;
        out.write(value);
        Ok(())
    })
}

/// Copies the message of the last error into a caller buffer, truncating
/// and always NUL-terminating. Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dds_copy_last_error(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg: &CStr = &e.borrow();
        let bytes = msg.to_bytes();
        if !buf.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            buf.add(n).write(0);
        }
        bytes.len()
    })
}
