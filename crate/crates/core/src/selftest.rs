//! Runtime oracle checks behind the `selftest` subcommand.
//!
//! Each check compares a library routine against an independent, slower
//! computation on freshly drawn inputs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gaussmath::{blr_update, kl_gaussian, sample_gaussian, Gaussian, LinearPosterior};
use crate::meta::{MetaPosterior, TrackData};
use crate::metrics::{pac_bayes_single, BoundInputs};
use crate::waveforms::{cyclic_autocorrelation, default_catalog, make_envelope, matched_filter, DEFAULT_SAMPLES};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, error: f64, tol: f64) -> Check {
    Check {
        name,
        passed: error <= tol,
        detail: format!("error {error:.3e} (tolerance {tol:.1e})"),
    }
}

fn random_spd<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn blr_vs_normal_equations(rng: &mut ChaCha8Rng) -> Result<Check> {
    let d = 3;
    let noise_var = 0.1;
    let prior = Gaussian::isotropic(DVector::from_fn(d, |_, _| rng.random()), 2.0)?;
    let mut post = LinearPosterior::from_prior(&prior, noise_var)?;
    let n = 40;
    let x = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>());
    let y = DVector::from_fn(n, |_, _| rng.random::<f64>());
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        post = blr_update(&post, &row, y[i])?;
    }
    let prior_prec = DMatrix::identity(d, d) / 2.0;
    let a = &prior_prec + x.transpose() * &x / noise_var;
    let b = &prior_prec * prior.mean() + x.transpose() * &y / noise_var;
    let batch = a.clone().lu().solve(&b).unwrap_or_else(|| DVector::zeros(d));
    let err = (post.mean()? - batch).amax().max((post.precision() - a).amax());
    Ok(check("sequential BLR equals batch normal equations", err, 1e-10))
}

fn meta_update_one_dimensional() -> Result<Check> {
    let data = TrackData::from_rows(&[vec![1.0]], &[1.5])?;
    let post = MetaPosterior::new(1.0, 1, 1.0, 1.0)?.meta_update(&data)?;
    let err = (post.precision()[(0, 0)] - 1.5)
        .abs()
        .max((post.mean()[0] - 0.5).abs());
    Ok(check("1-d meta update equals hand-derived marginal", err, 1e-12))
}

fn kl_vs_monte_carlo(rng: &mut ChaCha8Rng) -> Result<Check> {
    let d = 3;
    let q = Gaussian::new(DVector::from_fn(d, |_, _| rng.random::<f64>()), random_spd(d, rng))?;
    let p = Gaussian::new(DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0), random_spd(d, rng))?;
    let closed = kl_gaussian(&q, &p)?;
    let n = 200_000;
    let mut total = 0.0;
    for _ in 0..n {
        let x = sample_gaussian(&q, rng)?;
        total += q.log_pdf(&x)? - p.log_pdf(&x)?;
    }
    let mc = total / n as f64;
    Ok(check(
        "closed-form Gaussian KL matches Monte Carlo",
        (closed - mc).abs() / closed.max(1e-3),
        0.03,
    ))
}

fn matched_filter_vs_naive() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for spec in default_catalog(DEFAULT_SAMPLES) {
        let e = make_envelope(&spec, DEFAULT_SAMPLES)?;
        let s = e.samples();
        let fast = matched_filter(&e, s)?;
        let n = s.len();
        for lag in [0usize, 1, 7, n / 3, n - 1] {
            let naive: Complex64 = (0..n - lag).map(|i| s[i + lag] * s[i].conj()).sum();
            worst = worst.max((fast[n - 1 + lag] - naive).norm());
        }
    }
    Ok(check("FFT matched filter equals direct correlation", worst, 1e-9))
}

fn waveform_properties() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for spec in default_catalog(DEFAULT_SAMPLES) {
        let e = make_envelope(&spec, DEFAULT_SAMPLES)?;
        worst = worst.max((e.energy() - 1.0).abs());
    }
    let zc = make_envelope(&default_catalog(DEFAULT_SAMPLES)[3], DEFAULT_SAMPLES)?;
    for lag in 1..zc.len() as isize {
        worst = worst.max(cyclic_autocorrelation(&zc, lag).norm());
    }
    Ok(check("unit energy and ideal Zadoff-Chu autocorrelation", worst, 1e-9))
}

fn single_bound_value() -> Result<Check> {
    let v = pac_bayes_single(&BoundInputs {
        kl_posterior_prior: 0.0,
        m: 100,
        delta: 0.05,
        empirical_error: 0.0,
    })?;
    Ok(check(
        "single-task bound at m=100, delta=0.05",
        (v - (2000f64.ln() / 198.0).sqrt()).abs(),
        1e-12,
    ))
}

/// Run every check with a fixed seed.
pub fn run_selftest(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        blr_vs_normal_equations(&mut rng)?,
        meta_update_one_dimensional()?,
        kl_vs_monte_carlo(&mut rng)?,
        matched_filter_vs_naive()?,
        waveform_properties()?,
        single_bound_value()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest(0).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
