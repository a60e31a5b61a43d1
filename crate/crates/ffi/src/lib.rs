//! C ABI over the `mimo-dpd` library.
//!
//! Conventions:
//!
//! * Every function returns an [`MdStatus`]; results come back through out
//!   pointers that are written only on success.
//! * Objects are opaque handles created by `md_*_new`/`md_*_from_*` and
//!   released with the matching `md_*_free`, which accepts `NULL`.
//! * Complex samples are arrays of [`MdComplex`]; matrices are row-major.
//! * After a failure, [`md_last_error_message`] describes it. The message is
//!   per thread and stays valid until the next failing call on that thread.
//! * Panics never cross the boundary; they surface as `MD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use mimo_dpd::learning::{evaluate, Experiment, Scheme};
use mimo_dpd::mempoly::{self, MemoryPolynomial};
use mimo_dpd::pa::{saleh_amam, saleh_ampm, SalehParams};
use mimo_dpd::precoding::{zf_pinv, ChannelMatrix};
use mimo_dpd::scenario::ScenarioConfig;
use mimo_dpd::{Complex64, Error};
use nalgebra::DMatrix;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Divergence = 4,
    Io = 5,
    IllConditioned = 6,
    Domain = 7,
    Parse = 8,
    Panic = 9,
}

/// A complex sample, layout-compatible with `double _Complex`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MdComplex {
    pub re: f64,
    pub im: f64,
}

/// Headline figures of one evaluated scheme.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MdMetrics {
    pub oob_ratio_db: f64,
    /// Worst-user NMSE.
    pub nmse_db: f64,
    pub mean_antenna_nmse_db: f64,
    pub flops: u64,
    pub iterations: u64,
    /// 1 or 0 for schemes with a feedback loop, -1 otherwise.
    pub converged: i32,
    pub zf_residual: f64,
    pub precoder_change: f64,
}

/// Opaque memory polynomial.
pub struct MdMemoryPolynomial {
    inner: MemoryPolynomial,
}

/// Opaque scenario: a validated configuration plus the experiment it builds.
pub struct MdScenario {
    experiment: Experiment,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("NUL bytes removed"));
}

fn status_of(e: &Error) -> MdStatus {
    if e.is_divergence() {
        return MdStatus::Divergence;
    }
    match e {
        Error::Config(_) => MdStatus::Config,
        Error::Argument(_) | Error::Generation(_) => MdStatus::InvalidArgument,
        Error::Domain(_) => MdStatus::Domain,
        Error::IllConditioned { .. } => MdStatus::IllConditioned,
        Error::Parse(_) => MdStatus::Parse,
        Error::Io(_) => MdStatus::Io,
        _ => MdStatus::Domain,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MdStatus, String)>) -> MdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            MdStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (MdStatus, String)>;
}

impl<T> IntoFfi<T> for mimo_dpd::Result<T> {
    fn ffi(self) -> Result<T, (MdStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (MdStatus, String) {
    (MdStatus::NullPointer, format!("{what} is NULL"))
}

fn bad(msg: impl Into<String>) -> (MdStatus, String) {
    (MdStatus::InvalidArgument, msg.into())
}

/// # Safety
/// `p` must be NULL or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (MdStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be NULL or valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (MdStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn to_c64(v: &[MdComplex]) -> Vec<Complex64> {
    v.iter().map(|c| Complex64::new(c.re, c.im)).collect()
}

fn write_c64(dst: &mut [MdComplex], src: &[Complex64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = MdComplex { re: s.re, im: s.im };
    }
}

/// Description of the last failure on this thread; empty if none. Never NULL.
#[no_mangle]
pub extern "C" fn md_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn md_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Saleh AM/AM response at input amplitude `r`.
///
/// # Safety
/// `out` must be NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn md_saleh_amam(r: f64, alpha_a: f64, beta_a: f64, out: *mut f64) -> MdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = SalehParams { alpha_a, beta_a, ..SalehParams::default() };
        *out = saleh_amam(r, &p).ffi()?;
        Ok(())
    })
}

/// Saleh AM/PM response in radians at input amplitude `r`.
///
/// # Safety
/// `out` must be NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn md_saleh_ampm(r: f64, alpha_phi: f64, beta_phi: f64, out: *mut f64) -> MdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = SalehParams { alpha_phi, beta_phi, ..SalehParams::default() };
        *out = saleh_ampm(r, &p).ffi()?;
        Ok(())
    })
}

/// Per-sample FLOPs of a DPD bank: `(4K + 2) Q N_t`.
///
/// # Safety
/// `out` must be NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn md_flops(order: usize, memory_depth: usize, num_antennas: usize, out: *mut u64) -> MdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = mempoly::flops(order, memory_depth, num_antennas).ffi()?.flops;
        Ok(())
    })
}

/// FLOPs saved by order `k_prop` against `k_conv`.
///
/// # Safety
/// `out` must be NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn md_flop_savings(
    k_conv: usize,
    k_prop: usize,
    memory_depth: usize,
    num_antennas: usize,
    out: *mut u64,
) -> MdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = mempoly::flop_savings(k_conv, k_prop, memory_depth, num_antennas).ffi()?;
        Ok(())
    })
}

/// Builds a polynomial of order `order` and memory depth `memory_depth` from
/// `order * (memory_depth + 1)` coefficients in k-major order.
///
/// # Safety
/// `coeffs` must be valid for `len` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn md_mp_new(
    order: usize,
    memory_depth: usize,
    coeffs: *const MdComplex,
    len: usize,
    out: *mut *mut MdMemoryPolynomial,
) -> MdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = to_c64(slice(coeffs, len, "coeffs")?);
        let inner = MemoryPolynomial::new(order, memory_depth, c).ffi()?;
        *out = Box::into_raw(Box::new(MdMemoryPolynomial { inner }));
        Ok(())
    })
}

/// Releases a polynomial. `NULL` is ignored.
///
/// # Safety
/// `h` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn md_mp_free(h: *mut MdMemoryPolynomial) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of coefficients, or 0 for `NULL`.
///
/// # Safety
/// `h` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_mp_num_coeffs(h: *const MdMemoryPolynomial) -> usize {
    h.as_ref().map_or(0, |p| p.inner.coeffs().len())
}

/// Copies the coefficients into `out`, which holds `len` entries.
///
/// # Safety
/// `h` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn md_mp_coeffs(h: *const MdMemoryPolynomial, out: *mut MdComplex, len: usize) -> MdStatus {
    guard(|| {
        let p = h.as_ref().ok_or_else(|| null("handle"))?;
        let c = p.inner.coeffs();
        if len != c.len() {
            return Err(bad(format!("buffer holds {len} entries, polynomial has {}", c.len())));
        }
        write_c64(slice_mut(out, len, "out")?, c);
        Ok(())
    })
}

/// Applies the polynomial to `n` samples of `x`, writing `n` samples to `y`.
///
/// # Safety
/// `h` must be a live handle; `x` and `y` valid for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn md_mp_apply(
    h: *const MdMemoryPolynomial,
    x: *const MdComplex,
    y: *mut MdComplex,
    n: usize,
) -> MdStatus {
    guard(|| {
        let p = h.as_ref().ok_or_else(|| null("handle"))?;
        let input = to_c64(slice(x, n, "x")?);
        let out = mempoly::mp_apply(&input, &p.inner);
        write_c64(slice_mut(y, n, "y")?, &out);
        Ok(())
    })
}

/// Least-squares identification of `y ≈ MP(x)` over `n` samples. The
/// condition estimate of the regression is written to `condition` when it is
/// not NULL.
///
/// # Safety
/// `x` and `y` must be valid for `n` reads, `out` for one write, and
/// `condition` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn md_ls_fit(
    x: *const MdComplex,
    y: *const MdComplex,
    n: usize,
    order: usize,
    memory_depth: usize,
    out: *mut *mut MdMemoryPolynomial,
    condition: *mut f64,
) -> MdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let xs = to_c64(slice(x, n, "x")?);
        let ys = to_c64(slice(y, n, "y")?);
        let r = mempoly::regressor_matrix(&xs, order, memory_depth).ffi()?;
        let fit = mempoly::ls_fit(&r, &ys).ffi()?;
        let inner = MemoryPolynomial::new(order, memory_depth, fit.coeffs.clone()).ffi()?;
        if !condition.is_null() {
            *condition = fit.condition;
        }
        *out = Box::into_raw(Box::new(MdMemoryPolynomial { inner }));
        Ok(())
    })
}

/// Zero-forcing precoder of a row-major `num_users x num_antennas` channel.
/// Writes the row-major `num_antennas x num_users` precoder to `p`, and the
/// Frobenius residual `||H P - I||` to `residual` when it is not NULL.
///
/// # Safety
/// `h` must hold `num_users * num_antennas` entries, `p` room for as many,
/// and `residual` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn md_zf_pinv(
    h: *const MdComplex,
    num_users: usize,
    num_antennas: usize,
    p: *mut MdComplex,
    residual: *mut f64,
) -> MdStatus {
    guard(|| {
        let len = num_users
            .checked_mul(num_antennas)
            .filter(|&l| l > 0)
            .ok_or_else(|| bad("channel dimensions must be positive"))?;
        let hm = DMatrix::from_row_slice(num_users, num_antennas, &to_c64(slice(h, len, "h")?));
        let ch = ChannelMatrix::new(hm).ffi()?;
        let pm = zf_pinv(&ch).ffi()?;
        let rows: Vec<Complex64> = pm.matrix().transpose().iter().copied().collect();
        write_c64(slice_mut(p, len, "p")?, &rows);
        if !residual.is_null() {
            *residual = pm.zf_residual(&ch);
        }
        Ok(())
    })
}

/// Parses and validates a scenario from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn md_scenario_from_toml(toml: *const c_char, out: *mut *mut MdScenario) -> MdStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| (MdStatus::Parse, format!("scenario text is not UTF-8: {e}")))?;
        let cfg = ScenarioConfig::from_toml_str(text).ffi()?;
        let experiment = cfg.build_experiment().ffi()?;
        *out = Box::into_raw(Box::new(MdScenario { experiment }));
        Ok(())
    })
}

/// Releases a scenario. `NULL` is ignored.
///
/// # Safety
/// `h` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn md_scenario_free(h: *mut MdScenario) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Trains and evaluates one scheme. `kind` is `"no_dpd"`, `"conventional"`
/// or `"proposed"`; `order` is ignored for `"no_dpd"`.
///
/// # Safety
/// `h` must be a live handle, `kind` a NUL-terminated string and `out`
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn md_scenario_evaluate(
    h: *const MdScenario,
    kind: *const c_char,
    order: usize,
    out: *mut MdMetrics,
) -> MdStatus {
    guard(|| {
        let sc = h.as_ref().ok_or_else(|| null("handle"))?;
        if kind.is_null() {
            return Err(null("kind"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let name = CStr::from_ptr(kind).to_str().map_err(|_| bad("scheme kind is not UTF-8"))?;
        let scheme = Scheme::parse(name, (name != "no_dpd").then_some(order)).ffi()?;
        let m = evaluate(&sc.experiment, scheme).ffi()?;
        *out = MdMetrics {
            oob_ratio_db: m.oob_ratio_db,
            nmse_db: m.nmse_db(),
            mean_antenna_nmse_db: m.mean_antenna_nmse_db(),
            flops: m.flop_count(),
            iterations: m.iterations as u64,
            converged: m.converged.map_or(-1, i32::from),
            zf_residual: m.zf_residual,
            precoder_change: m.precoder_change,
        };
        Ok(())
    })
}
