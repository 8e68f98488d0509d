//! C ABI for the fedcef simulator.
//!
//! Every function returns an [`FcStatus`]; on failure the message is kept
//! per thread and read with [`fc_last_error_message`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Panics never unwind into C; they surface as
//! `FC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use fedcef::harness::run_experiment;
use fedcef::{
    derive_stream, parse_config, CompressorSpec, Error, MetricsSeries, ParamVector, Regularizer,
    RunConfig, SparsePayload,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Config = 5,
    Io = 6,
    Decode = 7,
    BufferTooSmall = 8,
    Runtime = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcCompressorKind {
    Identity = 0,
    TopK = 1,
    RandK = 2,
}

/// One metrics row. `lyapunov` is NaN when `has_lyapunov` is false.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcMetricsRow {
    pub round: u64,
    pub objective: f64,
    pub prox_grad_sq: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub nnz: u64,
    pub lyapunov: f64,
    pub has_lyapunov: bool,
    pub condition_ok: bool,
}

/// Parsed run configuration.
pub struct FcConfig(RunConfig);

/// Result of a run: the metrics series and the final global model.
pub struct FcSeries {
    series: MetricsSeries,
    final_model: Vec<f64>,
}

/// Compressed payload.
pub struct FcPayload(SparsePayload);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

fn status_of(e: &Error) -> FcStatus {
    match e {
        Error::DimensionMismatch { .. } => FcStatus::DimensionMismatch,
        Error::NonFinite { .. } => FcStatus::NonFinite,
        Error::InvalidArgument(_) | Error::RetainExceedsDim { .. } | Error::EmptyShard { .. } => {
            FcStatus::InvalidArgument
        }
        Error::Config(_) => FcStatus::Config,
        Error::Io(_) | Error::Csv(_) => FcStatus::Io,
        Error::Decode(_) => FcStatus::Decode,
        Error::Local { .. } | Error::Round { .. } => FcStatus::Runtime,
    }
}

struct Fail(FcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FcStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            FcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            FcStatus::Panic
        }
    }
}

unsafe fn input<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(data, len))
}

unsafe fn output<'a>(data: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(data, len))
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(FcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a TOML config.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fc_config_parse(toml: *const c_char, out: *mut *mut FcConfig) -> FcStatus {
    guard(|| {
        let cfg = parse_config(text(toml, "toml")?)?;
        write_out(out, FcConfig(cfg))
    })
}

/// Override the seed of a parsed config.
///
/// # Safety
/// `config` must come from [`fc_config_parse`].
#[no_mangle]
pub unsafe extern "C" fn fc_config_set_seed(config: *mut FcConfig, seed: u64) -> FcStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        cfg.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`fc_config_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn fc_config_free(config: *mut FcConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run the configured experiment.
///
/// # Safety
/// `config` must come from [`fc_config_parse`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fc_run(config: *const FcConfig, out: *mut *mut FcSeries) -> FcStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let exp = run_experiment(&cfg.0)?;
        let final_model = exp
            .output
            .iterates
            .last()
            .map(|z| z.as_slice().to_vec())
            .unwrap_or_default();
        write_out(
            out,
            FcSeries {
                series: exp.output.series,
                final_model,
            },
        )
    })
}

/// Number of rows (`T + 1`), or 0 for a null handle.
///
/// # Safety
/// `series` must come from [`fc_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn fc_series_len(series: *const FcSeries) -> usize {
    series.as_ref().map_or(0, |s| s.series.rows.len())
}

/// # Safety
/// `series` must come from [`fc_run`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fc_series_row(
    series: *const FcSeries,
    index: usize,
    out: *mut FcMetricsRow,
) -> FcStatus {
    guard(|| {
        let s = series.as_ref().ok_or_else(|| null("series"))?;
        let out = out.as_mut().ok_or_else(|| null("row output"))?;
        let r = s.series.rows.get(index).ok_or_else(|| {
            Fail(
                FcStatus::InvalidArgument,
                format!("row {index} out of range for {} rows", s.series.rows.len()),
            )
        })?;
        *out = FcMetricsRow {
            round: r.round as u64,
            objective: r.objective,
            prox_grad_sq: r.prox_grad_sq,
            uplink_bytes: r.uplink_bytes,
            downlink_bytes: r.downlink_bytes,
            nnz: r.nnz as u64,
            lyapunov: r.lyapunov.unwrap_or(f64::NAN),
            has_lyapunov: r.lyapunov.is_some(),
            condition_ok: r.condition_ok,
        };
        Ok(())
    })
}

/// Copy the final global model into `out[0..len]`; `len` must equal the
/// model dimension.
///
/// # Safety
/// `series` must come from [`fc_run`]; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fc_series_final_model(
    series: *const FcSeries,
    out: *mut f64,
    len: usize,
) -> FcStatus {
    guard(|| {
        let s = series.as_ref().ok_or_else(|| null("series"))?;
        if len != s.final_model.len() {
            return Err(Error::DimensionMismatch {
                op: "fc_series_final_model",
                left: len,
                right: s.final_model.len(),
            }
            .into());
        }
        output(out, len, "out")?.copy_from_slice(&s.final_model);
        Ok(())
    })
}

/// # Safety
/// `series` must come from [`fc_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn fc_series_free(series: *mut FcSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Soft-thresholding `prox_{tau * lambda |.|_1}` of `x[0..len]` into `out`.
/// `lambda = 0` selects the zero regularizer.
///
/// # Safety
/// `x` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fc_prox_l1(
    lambda: f64,
    tau: f64,
    x: *const f64,
    out: *mut f64,
    len: usize,
) -> FcStatus {
    guard(|| {
        let reg = if lambda == 0.0 {
            Regularizer::Zero
        } else {
            Regularizer::l1(lambda)?
        };
        let x = ParamVector::new(input(x, len, "x")?.to_vec())?;
        let p = reg.prox(tau, &x)?;
        output(out, len, "out")?.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Compress `x[0..len]` with `kind` (an [`FcCompressorKind`] value), keeping
/// `k` entries (ignored for identity). RandK draws its mask from the stream
/// derived from `(seed, label)`; `label` may be null for the other kinds.
///
/// # Safety
/// `x` must hold `len` doubles, `label` must be NUL-terminated or null and
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fc_compress(
    kind: u32,
    k: usize,
    seed: u64,
    label: *const c_char,
    x: *const f64,
    len: usize,
    out: *mut *mut FcPayload,
) -> FcStatus {
    guard(|| {
        let kind = match kind {
            0 => FcCompressorKind::Identity,
            1 => FcCompressorKind::TopK,
            2 => FcCompressorKind::RandK,
            other => {
                return Err(Fail(
                    FcStatus::InvalidArgument,
                    format!("unknown compressor kind {other}"),
                ))
            }
        };
        let spec = match kind {
            FcCompressorKind::Identity => CompressorSpec::identity(),
            FcCompressorKind::TopK => CompressorSpec::top_k(k),
            FcCompressorKind::RandK => CompressorSpec::rand_k(k),
        };
        let x = ParamVector::new(input(x, len, "x")?.to_vec())?;
        let mut stream = match kind {
            FcCompressorKind::RandK => Some(derive_stream(seed, text(label, "label")?)?),
            _ => None,
        };
        let (payload, _) = spec.compress(&x, stream.as_mut())?;
        write_out(out, FcPayload(payload))
    })
}

/// Accounted size: 8 bytes per sparse entry or 4 per dense coordinate.
///
/// # Safety
/// `payload` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn fc_payload_bytes(payload: *const FcPayload) -> u64 {
    payload.as_ref().map_or(0, |p| p.0.payload_bytes())
}

/// Dimension of the vector a payload encodes; 0 for null.
///
/// # Safety
/// `payload` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_payload_dim(payload: *const FcPayload) -> usize {
    payload.as_ref().map_or(0, |p| p.0.dim())
}

/// Expand into a dense vector of length `len` (must equal the dimension).
///
/// # Safety
/// `payload` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fc_payload_densify(
    payload: *const FcPayload,
    out: *mut f64,
    len: usize,
) -> FcStatus {
    guard(|| {
        let p = payload.as_ref().ok_or_else(|| null("payload"))?;
        if p.0.dim() != len {
            return Err(Error::DimensionMismatch {
                op: "fc_payload_densify",
                left: len,
                right: p.0.dim(),
            }
            .into());
        }
        output(out, len, "out")?.copy_from_slice(p.0.densify().as_slice());
        Ok(())
    })
}

/// Serialize to the wire format. `*written` receives the encoded length;
/// with a null `buf` or a short `cap` nothing is copied and
/// `FC_STATUS_BUFFER_TOO_SMALL` is returned unless `buf` is null.
///
/// # Safety
/// `buf` must hold `cap` bytes or be null; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fc_payload_encode(
    payload: *const FcPayload,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> FcStatus {
    guard(|| {
        let p = payload.as_ref().ok_or_else(|| null("payload"))?;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        let bytes = p.0.encode();
        *written = bytes.len();
        if buf.is_null() {
            return Ok(());
        }
        if cap < bytes.len() {
            return Err(Fail(
                FcStatus::BufferTooSmall,
                format!("need {} bytes, buffer holds {cap}", bytes.len()),
            ));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        Ok(())
    })
}

/// Parse the wire format.
///
/// # Safety
/// `bytes` must hold `len` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fc_payload_decode(
    bytes: *const u8,
    len: usize,
    out: *mut *mut FcPayload,
) -> FcStatus {
    guard(|| {
        let data = if len == 0 {
            &[][..]
        } else if bytes.is_null() {
            return Err(null("bytes"));
        } else {
            slice::from_raw_parts(bytes, len)
        };
        write_out(out, FcPayload(SparsePayload::decode(data)?))
    })
}

/// # Safety
/// `payload` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_payload_free(payload: *mut FcPayload) {
    if !payload.is_null() {
        drop(Box::from_raw(payload));
    }
}
