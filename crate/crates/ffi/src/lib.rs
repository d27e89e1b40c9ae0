//! C ABI over a trained reduced model (autoencoder + latent vector field).
//!
//! Every fallible call returns a [`GeoromStatus`]; on failure the message is
//! kept per thread and can be copied out with [`georom_last_error`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use georom::ae::model::{FIELD_DIM, FIELD_SHAPE, LATENT_DIM, LATENT_SHAPE};
use georom::ae::{AeParams, Checkpoint};
use georom::evalharness::{wilcoxon_one_sided, RomModel, TrainedRom};
use georom::ndnum::Tensor;
use georom::node::VectorFieldParams;
use georom::Error;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeoromStatus {
    Ok = 0,
    InvalidArgument = 1,
    Numerical = 2,
    Io = 3,
    Format = 4,
    NullPointer = 5,
    Panic = 6,
}

impl From<&Error> for GeoromStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => GeoromStatus::InvalidArgument,
            Error::Numerical { .. } => GeoromStatus::Numerical,
            Error::Io { .. } => GeoromStatus::Io,
            Error::Format { .. } | Error::Json(_) | Error::Csv(_) => GeoromStatus::Format,
        }
    }
}

/// Opaque trained model.
pub struct GeoromModel {
    rom: TrainedRom,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), GeoromStatus>) -> GeoromStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GeoromStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            GeoromStatus::Panic
        }
    }
}

fn fail(e: Error) -> GeoromStatus {
    let s = GeoromStatus::from(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> GeoromStatus {
    set_error(format!("{what} is null"));
    GeoromStatus::NullPointer
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, GeoromStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(Error::invalid(format!("{what} is not valid UTF-8"))))
}

unsafe fn model_ref<'a>(m: *const GeoromModel) -> Result<&'a GeoromModel, GeoromStatus> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn slice_in<'a>(p: *const f64, n: usize, want: usize, what: &str) -> Result<&'a [f64], GeoromStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    if n != want {
        return Err(fail(Error::invalid(format!("{what} has length {n}, expected {want}"))));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_out<'a>(p: *mut f64, n: usize, want: usize, what: &str) -> Result<&'a mut [f64], GeoromStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    if n != want {
        return Err(fail(Error::invalid(format!("{what} has length {n}, expected {want}"))));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

fn tensor(shape: &[usize], data: &[f64]) -> Result<Tensor, GeoromStatus> {
    Tensor::new(shape.to_vec(), data.to_vec()).map_err(fail)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn georom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn georom_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Field values per snapshot.
#[no_mangle]
pub extern "C" fn georom_field_dim() -> usize {
    FIELD_DIM
}

/// Latent coordinates per state.
#[no_mangle]
pub extern "C" fn georom_latent_dim() -> usize {
    LATENT_DIM
}

/// Loads an autoencoder checkpoint and a vector-field checkpoint.
///
/// # Safety
/// Paths must be null or NUL-terminated; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn georom_model_load(
    ae_checkpoint: *const c_char,
    node_checkpoint: *const c_char,
    out: *mut *mut GeoromModel,
) -> GeoromStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ae_path = path_arg(ae_checkpoint, "ae_checkpoint")?;
        let node_path = path_arg(node_checkpoint, "node_checkpoint")?;
        let ae = Checkpoint::load(ae_path).and_then(|c| AeParams::from_named(&c.arrays)).map_err(fail)?;
        let vf = Checkpoint::load(node_path)
            .and_then(|c| VectorFieldParams::from_named(&c.arrays))
            .map_err(fail)?;
        *out = Box::into_raw(Box::new(GeoromModel {
            rom: TrainedRom { ae, vf },
        }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`georom_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn georom_model_free(model: *mut GeoromModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Encodes one normalized field of `georom_field_dim()` values.
///
/// # Safety
/// Buffers must hold the stated number of `double`s.
#[no_mangle]
pub unsafe extern "C" fn georom_model_encode(
    model: *const GeoromModel,
    field: *const f64,
    field_len: usize,
    latent_out: *mut f64,
    latent_len: usize,
) -> GeoromStatus {
    guard(|| {
        let m = model_ref(model)?;
        let u = tensor(&FIELD_SHAPE, slice_in(field, field_len, FIELD_DIM, "field")?)?;
        let out = slice_out(latent_out, latent_len, LATENT_DIM, "latent_out")?;
        out.copy_from_slice(m.rom.encode(&u).map_err(fail)?.data());
        Ok(())
    })
}

/// Decodes one latent state into a normalized field.
///
/// # Safety
/// Buffers must hold the stated number of `double`s.
#[no_mangle]
pub unsafe extern "C" fn georom_model_decode(
    model: *const GeoromModel,
    latent: *const f64,
    latent_len: usize,
    field_out: *mut f64,
    field_len: usize,
) -> GeoromStatus {
    guard(|| {
        let m = model_ref(model)?;
        let z = tensor(&LATENT_SHAPE, slice_in(latent, latent_len, LATENT_DIM, "latent")?)?;
        let out = slice_out(field_out, field_len, FIELD_DIM, "field_out")?;
        out.copy_from_slice(m.rom.decode(&z).map_err(fail)?.data());
        Ok(())
    })
}

/// Integrates the latent dynamics for parameter `mu[3]` over `n_times`
/// strictly increasing times; writes `n_times × latent_dim` values,
/// starting with `z0`.
///
/// # Safety
/// `mu` holds 3 values, `z0` holds `latent_dim`, `times` holds `n_times`
/// and `out` holds `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn georom_model_rollout(
    model: *const GeoromModel,
    mu: *const f64,
    z0: *const f64,
    z0_len: usize,
    times: *const f64,
    n_times: usize,
    out: *mut f64,
    out_len: usize,
) -> GeoromStatus {
    guard(|| {
        let m = model_ref(model)?;
        let mu = slice_in(mu, 3, 3, "mu")?;
        let z0 = tensor(&LATENT_SHAPE, slice_in(z0, z0_len, LATENT_DIM, "z0")?)?;
        let times = slice_in(times, n_times, n_times, "times")?;
        let out = slice_out(out, out_len, n_times * LATENT_DIM, "out")?;
        let zs = m.rom.rollout(&[mu[0], mu[1], mu[2]], &z0, times).map_err(fail)?;
        for (chunk, z) in out.chunks_exact_mut(LATENT_DIM).zip(&zs) {
            chunk.copy_from_slice(z.data());
        }
        Ok(())
    })
}

/// Spectral norm of the decoder Jacobian at `latent`, by power iteration.
///
/// # Safety
/// `latent` holds `latent_len` values; `gain_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn georom_model_decoder_gain(
    model: *const GeoromModel,
    latent: *const f64,
    latent_len: usize,
    iters: usize,
    gain_out: *mut f64,
) -> GeoromStatus {
    guard(|| {
        let m = model_ref(model)?;
        let z = tensor(&LATENT_SHAPE, slice_in(latent, latent_len, LATENT_DIM, "latent")?)?;
        if gain_out.is_null() {
            return Err(null("gain_out"));
        }
        *gain_out = m.rom.decoder_gain(&z, iters).map_err(fail)?;
        Ok(())
    })
}

/// One-sided signed-rank p-value for "differences tend to be positive".
/// `*defined_out` is 0 when every difference is zero.
///
/// # Safety
/// `diffs` holds `n` values; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn georom_signed_rank_test(
    diffs: *const f64,
    n: usize,
    p_out: *mut f64,
    defined_out: *mut i32,
) -> GeoromStatus {
    guard(|| {
        let d = slice_in(diffs, n, n, "diffs")?;
        if p_out.is_null() || defined_out.is_null() {
            return Err(null("output"));
        }
        match wilcoxon_one_sided(d).map_err(fail)? {
            Some(p) => {
                *p_out = p;
                *defined_out = 1;
            }
            None => {
                *p_out = f64::NAN;
                *defined_out = 0;
            }
        }
        Ok(())
    })
}
