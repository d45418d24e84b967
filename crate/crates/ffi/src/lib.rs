//! C ABI over the `metats` library.
//!
//! Objects are opaque handles created by `*_new` and released by `*_free`.
//! Every fallible call returns a [`MetatsStatus`]; on failure a message is
//! available from [`metats_last_error`] on the same thread until the next
//! failing call. Arrays are caller-allocated and matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use metats::bandit::{compute_loss, HistoryEntry, TsAgent};
use metats::gaussmath::Gaussian;
use metats::harness::run::write_config;
use metats::harness::{run_all, write_records, ExperimentConfig};
use metats::meta::{MetaPosterior, TrackData};
use metats::metrics::{pac_bayes_single, BoundInputs};
use metats::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetatsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    Io = 5,
    Parse = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MetatsStatus {
    match err {
        Error::DimensionMismatch { .. } => MetatsStatus::DimensionMismatch,
        Error::NotPositiveDefinite | Error::NotSymmetric(_) => MetatsStatus::NotPositiveDefinite,
        Error::Io { .. } | Error::Csv(_) => MetatsStatus::Io,
        Error::Parse { .. } | Error::Validation { .. } => MetatsStatus::Parse,
        _ => MetatsStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MetatsStatus, String)>) -> MetatsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MetatsStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside metats".into());
            MetatsStatus::Panic
        }
    }
}

fn lib<T>(r: metats::Result<T>) -> Result<T, (MetatsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MetatsStatus, String) {
    (MetatsStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(message: impl Into<String>) -> (MetatsStatus, String) {
    (MetatsStatus::InvalidArgument, message.into())
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], (MetatsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn write_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), (MetatsStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < src.len() {
        return Err((
            MetatsStatus::DimensionMismatch,
            format!("output buffer holds {len} values, need {}", src.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn metats_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Meta-posterior over the instance-prior mean.
pub struct MetatsMetaPosterior {
    inner: MetaPosterior,
}

/// Thompson-sampling agent for one track, with its own random stream.
pub struct MetatsAgent {
    inner: TsAgent,
    rng: ChaCha8Rng,
}

/// Loaded experiment configuration.
pub struct MetatsConfig {
    inner: ExperimentConfig,
}

/// Create `N(0, σ_q² I_d)` with instance-prior variance `sigma0_sq` and
/// loss-noise variance `noise_var`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn metats_meta_new(
    sigma_q_sq: f64,
    d: usize,
    sigma0_sq: f64,
    noise_var: f64,
    out: *mut *mut MetatsMetaPosterior,
) -> MetatsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = lib(MetaPosterior::new(sigma_q_sq, d, sigma0_sq, noise_var))?;
        *out = Box::into_raw(Box::new(MetatsMetaPosterior { inner }));
        Ok(())
    })
}

/// Apply one track's joint update. `contexts` holds `n × d` values row-major.
///
/// # Safety
/// `handle` must come from [`metats_meta_new`]; `contexts` and `losses` must
/// point to `n·d` and `n` readable values.
#[no_mangle]
pub unsafe extern "C" fn metats_meta_update(
    handle: *mut MetatsMetaPosterior,
    contexts: *const f64,
    losses: *const f64,
    n: usize,
) -> MetatsStatus {
    guard(|| {
        let h = handle.as_mut().ok_or_else(|| null("handle"))?;
        let d = h.inner.dim();
        let x = slice(contexts, n * d, "contexts")?;
        let l = slice(losses, n, "losses")?;
        let rows: Vec<Vec<f64>> = x.chunks(d.max(1)).map(<[f64]>::to_vec).collect();
        let mut data = TrackData::new(d);
        for (r, &v) in rows.iter().zip(l) {
            lib(data.push(r, v))?;
        }
        h.inner = lib(h.inner.meta_update(&data))?;
        Ok(())
    })
}

/// Copy `μ_s` (d values) into `out`.
///
/// # Safety
/// `handle` must be live and `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn metats_meta_mean(handle: *const MetatsMetaPosterior, out: *mut f64, len: usize) -> MetatsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        write_out(h.inner.mean().as_slice(), out, len)
    })
}

/// Copy `Λ_s` (d·d values, row-major) into `out`.
///
/// # Safety
/// `handle` must be live and `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn metats_meta_precision(
    handle: *const MetatsMetaPosterior,
    out: *mut f64,
    len: usize,
) -> MetatsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let p = h.inner.precision().transpose();
        write_out(p.as_slice(), out, len)
    })
}

/// Draw an instance-prior mean `μ ~ N(μ_s, Λ_s⁻¹)` from a stream seeded with
/// `seed`.
///
/// # Safety
/// `handle` must be live and `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn metats_meta_sample_prior_mean(
    handle: *const MetatsMetaPosterior,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> MetatsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = lib(h.inner.sample_instance_prior(&mut rng))?;
        write_out(prior.mean().as_slice(), out, len)
    })
}

/// # Safety
/// `handle` must come from [`metats_meta_new`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn metats_meta_free(handle: *mut MetatsMetaPosterior) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Create an agent with prior `N(prior_mean, prior_var·I_d)`.
///
/// # Safety
/// `prior_mean` must point to `d` readable values and `out` to storage for
/// one handle.
#[no_mangle]
pub unsafe extern "C" fn metats_agent_new(
    prior_mean: *const f64,
    d: usize,
    prior_var: f64,
    num_waveforms: usize,
    num_observations: usize,
    noise_var: f64,
    seed: u64,
    out: *mut *mut MetatsAgent,
) -> MetatsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mean = slice(prior_mean, d, "prior_mean")?;
        let prior = lib(Gaussian::isotropic(DVector::from_column_slice(mean), prior_var))?;
        let inner = lib(TsAgent::new(&prior, noise_var, num_waveforms, num_observations))?;
        *out = Box::into_raw(Box::new(MetatsAgent {
            inner,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }));
        Ok(())
    })
}

/// Thompson-sampling choice under `observation`.
///
/// # Safety
/// `handle` must be live and `out_waveform` writable.
#[no_mangle]
pub unsafe extern "C" fn metats_agent_select(
    handle: *mut MetatsAgent,
    observation: usize,
    out_waveform: *mut usize,
) -> MetatsStatus {
    guard(|| {
        let h = handle.as_mut().ok_or_else(|| null("handle"))?;
        if out_waveform.is_null() {
            return Err(null("out_waveform"));
        }
        let decision = lib(h.inner.select_waveform(observation, &mut h.rng))?;
        *out_waveform = decision.waveform;
        Ok(())
    })
}

/// Record the loss of `waveform` under `observation`. The regressor is the
/// pair's context before this loss is added, i.e. the one the last selection
/// saw.
///
/// # Safety
/// `handle` must be live.
#[no_mangle]
pub unsafe extern "C" fn metats_agent_record(
    handle: *mut MetatsAgent,
    observation: usize,
    waveform: usize,
    loss: f64,
) -> MetatsStatus {
    guard(|| {
        let h = handle.as_mut().ok_or_else(|| null("handle"))?;
        let context = lib(h.inner.build_context(observation, waveform))?;
        let cpi = h.inner.history().len();
        lib(h.inner.record(HistoryEntry {
            cpi,
            observation,
            waveform,
            loss,
            context,
        }))
    })
}

/// Copy the agent's posterior mean (d values) into `out`.
///
/// # Safety
/// `handle` must be live and `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn metats_agent_posterior_mean(handle: *const MetatsAgent, out: *mut f64, len: usize) -> MetatsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let mean = lib(h.inner.posterior().mean())?;
        write_out(mean.as_slice(), out, len)
    })
}

/// # Safety
/// `handle` must come from [`metats_agent_new`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn metats_agent_free(handle: *mut MetatsAgent) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// `clamp(sinr_post / sinr_target, 0, 1)` on linear power ratios.
#[no_mangle]
pub extern "C" fn metats_compute_loss(sinr_post: f64, sinr_target: f64) -> f64 {
    compute_loss(sinr_post, sinr_target)
}

/// Single-task PAC-Bayes bound.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn metats_pac_bayes_single(
    kl: f64,
    m: usize,
    delta: f64,
    empirical_error: f64,
    out: *mut f64,
) -> MetatsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lib(pac_bayes_single(&BoundInputs {
            kl_posterior_prior: kl,
            m,
            delta,
            empirical_error,
        }))?;
        Ok(())
    })
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (MetatsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Load a configuration file. A NULL `path` yields the defaults.
///
/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn metats_config_load(path: *const c_char, out: *mut *mut MetatsConfig) -> MetatsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = if path.is_null() {
            ExperimentConfig::default()
        } else {
            lib(ExperimentConfig::load(&path_arg(path, "path")?))?
        };
        *out = Box::into_raw(Box::new(MetatsConfig { inner }));
        Ok(())
    })
}

/// Run every replicate of `config` and write the CSVs into `out_dir`, or
/// the configured output directory when `out_dir` is NULL.
///
/// # Safety
/// `config` must be live; `out_dir` must be NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn metats_run(config: *const MetatsConfig, out_dir: *const c_char) -> MetatsStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let mut cfg = cfg.inner.clone();
        if !out_dir.is_null() {
            cfg.output_dir = path_arg(out_dir, "out_dir")?;
        }
        let results = lib(run_all(&cfg))?;
        lib(write_records(&cfg.output_dir, &results))?;
        lib(write_config(&cfg.output_dir, &cfg))
    })
}

/// # Safety
/// `config` must come from [`metats_config_load`] and not be used
/// afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn metats_config_free(config: *mut MetatsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Override the number of tracks, CPIs and seeds of a loaded configuration.
///
/// # Safety
/// `config` must be live and `seeds` must point to `n_seeds` values.
#[no_mangle]
pub unsafe extern "C" fn metats_config_set_scale(
    config: *mut MetatsConfig,
    m: usize,
    n: usize,
    seeds: *const u64,
    n_seeds: usize,
) -> MetatsStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        if seeds.is_null() && n_seeds > 0 {
            return Err(null("seeds"));
        }
        let mut next = cfg.inner.clone();
        next.m = m;
        next.n = n;
        next.seeds = if n_seeds == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(seeds, n_seeds).to_vec()
        };
        lib(next.validate())?;
        cfg.inner = next;
        Ok(())
    })
}
