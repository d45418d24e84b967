//! Regret, outage and suboptimality statistics, the KL-to-truth trace and
//! PAC-Bayes bound evaluators.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmath::{kl_gaussian, Gaussian};
use crate::meta::MetaPosterior;

/// Primary outage threshold on post-processing SINR.
pub const OUTAGE_THRESHOLD_DB: f64 = 10.0;

/// Variance of the smoothed point mass at `μ*` used by [`kl_trace`].
pub const KL_REFERENCE_VAR: f64 = 1e-2;

/// A choice is suboptimal when its regret exceeds this.
pub const SUBOPTIMAL_TOL: f64 = 1e-12;

/// One CPI of one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpiRecord {
    pub policy: String,
    pub seed: u64,
    pub track: usize,
    pub cpi: usize,
    pub state: usize,
    pub obs: usize,
    pub waveform: usize,
    pub sinr_db: f64,
    pub loss: f64,
    pub oracle_loss: f64,
    pub regret_inc: f64,
    pub suboptimal: bool,
    pub outage_10db: bool,
}

/// Per-track summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub policy: String,
    pub seed: u64,
    pub track: usize,
    /// Cumulative over all tracks up to and including this one.
    pub cum_regret: f64,
    pub mean_loss: f64,
    pub outage_freq: f64,
    pub subopt_freq: f64,
    /// NaN for policies without a meta-posterior.
    pub kl_to_truth: f64,
}

/// Inputs of a PAC-Bayes bound for one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub kl_posterior_prior: f64,
    pub m: usize,
    pub delta: f64,
    pub empirical_error: f64,
}

/// `max_i expected[i] − expected[chosen]`
pub fn regret_increment(expected: &[f64], chosen: usize) -> Result<f64> {
    let value = *expected.get(chosen).ok_or(Error::IndexOutOfRange {
        index: chosen,
        len: expected.len(),
    })?;
    let best = expected.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(best - value)
}

/// Fraction of CPIs with SINR below `threshold_db`.
pub fn outage_frequency(records: &[CpiRecord], threshold_db: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = records.iter().filter(|r| r.sinr_db < threshold_db).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Fraction of CPIs whose choice was not an oracle maximizer.
pub fn suboptimal_frequency(records: &[CpiRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = records.iter().filter(|r| r.suboptimal).count();
    Ok(hits as f64 / records.len() as f64)
}

/// `KL(N(μ_s, Λ_s⁻¹) ‖ N(μ*, τ²I))` for every meta-posterior in order.
pub fn kl_trace(meta_history: &[MetaPosterior], mu_star: &DVector<f64>) -> Result<Vec<f64>> {
    if meta_history.is_empty() {
        return Err(Error::EmptyInput);
    }
    let truth = Gaussian::isotropic(mu_star.clone(), KL_REFERENCE_VAR)?;
    meta_history
        .iter()
        .map(|q| kl_gaussian(&q.to_gaussian()?, &truth))
        .collect()
}

fn check_bound(b: &BoundInputs) -> Result<()> {
    if b.m < 2 {
        return Err(Error::InvalidInput(format!("bound needs m >= 2, got {}", b.m)));
    }
    if !(b.delta > 0.0 && b.delta <= 1.0) {
        return Err(Error::InvalidInput(format!("delta {} outside (0, 1]", b.delta)));
    }
    if !(b.kl_posterior_prior >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "negative KL {}",
            b.kl_posterior_prior
        )));
    }
    Ok(())
}

/// `err + sqrt((KL + ln(m/δ)) / (2(m−1)))`
pub fn pac_bayes_single(b: &BoundInputs) -> Result<f64> {
    check_bound(b)?;
    let m = b.m as f64;
    Ok(b.empirical_error + ((b.kl_posterior_prior + (m / b.delta).ln()) / (2.0 * (m - 1.0))).sqrt())
}

/// Mean empirical error, plus the mean per-task complexity
/// `sqrt((KL_env + KL_i + ln(2 n m_i/δ)) / (2(m_i−1)))`, plus the
/// environment term `sqrt((KL_env + ln(2n/δ)) / (2(n−1)))`.
pub fn pac_bayes_meta(per_task: &[BoundInputs], env_kl: f64, n_tasks: usize, delta: f64) -> Result<f64> {
    if n_tasks < 2 {
        return Err(Error::InvalidInput(format!("meta bound needs n >= 2, got {n_tasks}")));
    }
    if per_task.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(env_kl >= 0.0) {
        return Err(Error::InvalidInput(format!("negative environment KL {env_kl}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidInput(format!("delta {delta} outside (0, 1]")));
    }
    let n = n_tasks as f64;
    let count = per_task.len() as f64;
    let mut err = 0.0;
    let mut task_term = 0.0;
    for b in per_task {
        check_bound(b)?;
        let m = b.m as f64;
        err += b.empirical_error;
        task_term +=
            ((env_kl + b.kl_posterior_prior + (2.0 * n * m / delta).ln()) / (2.0 * (m - 1.0))).sqrt();
    }
    let env_term = ((env_kl + (2.0 * n / delta).ln()) / (2.0 * (n - 1.0))).sqrt();
    Ok(err / count + task_term / count + env_term)
}

/// Right-continuous empirical CDF: sorted distinct values with the fraction
/// of samples `<=` each.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    Ok(out)
}

/// Collapse per-CPI records of one replicate into per-track rows.
///
/// `kl` holds one value per track, or is empty for NaN.
pub fn summarize_tracks(records: &[CpiRecord], kl: &[f64]) -> Result<Vec<TrackSummary>> {
    let mut out: Vec<TrackSummary> = Vec::new();
    let mut start = 0;
    let mut cum = 0.0;
    while start < records.len() {
        let first = &records[start];
        let end = start
            + records[start..]
                .iter()
                .take_while(|r| r.track == first.track && r.policy == first.policy && r.seed == first.seed)
                .count();
        let rows = &records[start..end];
        cum += rows.iter().map(|r| r.regret_inc).sum::<f64>();
        let idx = out.len();
        out.push(TrackSummary {
            policy: first.policy.clone(),
            seed: first.seed,
            track: first.track,
            cum_regret: cum,
            mean_loss: rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64,
            outage_freq: rows.iter().filter(|r| r.outage_10db).count() as f64 / rows.len() as f64,
            subopt_freq: suboptimal_frequency(rows)?,
            kl_to_truth: kl.get(idx).copied().unwrap_or(f64::NAN),
        });
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn rec(sinr_db: f64, suboptimal: bool) -> CpiRecord {
        CpiRecord {
            policy: "p".into(),
            seed: 0,
            track: 1,
            cpi: 1,
            state: 0,
            obs: 0,
            waveform: 0,
            sinr_db,
            loss: 0.5,
            oracle_loss: 0.5,
            regret_inc: 0.0,
            suboptimal,
            outage_10db: sinr_db < OUTAGE_THRESHOLD_DB,
        }
    }

    #[test]
    fn regret_examples() {
        assert_eq!(regret_increment(&[0.3, 0.7], 1).unwrap(), 0.0);
        assert!((regret_increment(&[0.3, 0.7], 0).unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(
            regret_increment(&[0.3, 0.7], 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn outage_examples() {
        let capped: Vec<_> = (0..5).map(|_| rec(60.0, false)).collect();
        assert_eq!(outage_frequency(&capped, 10.0).unwrap(), 0.0);
        let mixed: Vec<_> = [5.0, 15.0, 9.0, 20.0].iter().map(|&s| rec(s, false)).collect();
        assert_eq!(outage_frequency(&mixed, 10.0).unwrap(), 0.5);
        assert!(matches!(outage_frequency(&[], 10.0), Err(Error::EmptyInput)));
    }

    #[test]
    fn suboptimal_examples() {
        assert_eq!(suboptimal_frequency(&[rec(0.0, true)]).unwrap(), 1.0);
        assert_eq!(suboptimal_frequency(&[rec(0.0, false), rec(0.0, false)]).unwrap(), 0.0);
        assert!(suboptimal_frequency(&[]).is_err());
    }

    #[test]
    fn kl_trace_zero_at_truth() {
        let mu = DVector::from_vec(vec![1.0, 0.0, -0.5]);
        let q = MetaPosterior::from_parts(
            mu.clone(),
            DMatrix::identity(3, 3) / KL_REFERENCE_VAR,
            0.01,
            0.05,
        )
        .unwrap();
        let t = kl_trace(&[q], &mu).unwrap();
        assert!(t[0].abs() < 1e-10);
        assert!(kl_trace(&[], &mu).is_err());
    }

    #[test]
    fn single_bound_examples() {
        let b = BoundInputs {
            kl_posterior_prior: 0.0,
            m: 100,
            delta: 0.05,
            empirical_error: 0.0,
        };
        assert!((pac_bayes_single(&b).unwrap() - 0.19593).abs() < 1e-4);
        let big = BoundInputs { m: 1_000_000_000, ..b };
        assert!(pac_bayes_single(&big).unwrap() < 1e-3);
        let more = BoundInputs { kl_posterior_prior: 1.0, ..b };
        assert!(pac_bayes_single(&more).unwrap() > pac_bayes_single(&b).unwrap());
        assert!(pac_bayes_single(&BoundInputs { m: 1, ..b }).is_err());
        assert!(pac_bayes_single(&BoundInputs { delta: 0.0, ..b }).is_err());
    }

    #[test]
    fn meta_bound_spot_value() {
        let tasks = [
            BoundInputs { kl_posterior_prior: 0.5, m: 200, delta: 0.1, empirical_error: 0.2 },
            BoundInputs { kl_posterior_prior: 1.5, m: 50, delta: 0.1, empirical_error: 0.4 },
        ];
        let got = pac_bayes_meta(&tasks, 0.7, 10, 0.1).unwrap();
        // ln(2·10·200/0.1) = ln 40000, ln(2·10·50/0.1) = ln 10000, ln(2·10/0.1) = ln 200
        let t1 = ((0.7 + 0.5 + 40000f64.ln()) / 398.0).sqrt();
        let t2 = ((0.7 + 1.5 + 10000f64.ln()) / 98.0).sqrt();
        let env = ((0.7 + 200f64.ln()) / 18.0).sqrt();
        let want = 0.3 + (t1 + t2) / 2.0 + env;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn meta_bound_duplicated_task_matches_single_task_terms() {
        let b = BoundInputs { kl_posterior_prior: 0.3, m: 80, delta: 0.05, empirical_error: 0.25 };
        let one = pac_bayes_meta(&[b], 0.2, 10, 0.05).unwrap();
        let ten = pac_bayes_meta(&[b; 10], 0.2, 10, 0.05).unwrap();
        assert!((one - ten).abs() < 1e-12);
    }

    #[test]
    fn meta_bound_collapses_asymptotically() {
        let b = BoundInputs { kl_posterior_prior: 0.0, m: 1_000_000_000, delta: 0.05, empirical_error: 0.3 };
        let v = pac_bayes_meta(&[b; 3], 0.0, 1_000_000_000, 0.05).unwrap();
        assert!((v - 0.3).abs() < 1e-3);
        assert!(pac_bayes_meta(&[b], 0.0, 1, 0.05).is_err());
    }

    #[test]
    fn ecdf_examples() {
        let e = ecdf(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e, vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
        assert_eq!(ecdf(&[4.0; 5]).unwrap(), vec![(4.0, 1.0)]);
        assert!(ecdf(&[]).is_err());
    }

    #[test]
    fn summaries_accumulate_regret() {
        let mut rows = Vec::new();
        for track in 1..=3 {
            for cpi in 1..=4 {
                let mut r = rec(12.0, cpi == 1);
                r.track = track;
                r.cpi = cpi;
                r.regret_inc = 0.1 * cpi as f64;
                rows.push(r);
            }
        }
        let s = summarize_tracks(&rows, &[]).unwrap();
        assert_eq!(s.len(), 3);
        assert!((s[2].cum_regret - 3.0).abs() < 1e-12);
        assert_eq!(s[0].subopt_freq, 0.25);
        assert!(s[0].kl_to_truth.is_nan());
    }

    proptest! {
        #[test]
        fn bounds_dominate_empirical_error(
            kl in 0.0f64..50.0,
            m in 2usize..10_000,
            delta in 1e-6f64..1.0,
            err in 0.0f64..1.0,
            env in 0.0f64..20.0,
            n in 2usize..500,
        ) {
            let b = BoundInputs { kl_posterior_prior: kl, m, delta, empirical_error: err };
            prop_assert!(pac_bayes_single(&b).unwrap() >= err);
            prop_assert!(pac_bayes_meta(&[b], env, n, delta).unwrap() >= err);
        }

        #[test]
        fn ecdf_matches_rank_count(values in proptest::collection::vec(-5i32..5, 1..40)) {
            let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            let e = ecdf(&xs).unwrap();
            for (v, frac) in &e {
                let count = xs.iter().filter(|x| *x <= v).count();
                prop_assert_eq!(*frac, count as f64 / xs.len() as f64);
            }
            prop_assert_eq!(e.last().unwrap().1, 1.0);
        }
    }
}
