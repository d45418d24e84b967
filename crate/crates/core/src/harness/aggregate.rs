//! Cross-seed mean and standard error per policy and track.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TrackSummary;

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: String,
    pub track: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n_seeds: usize,
}

/// All rows of one metric, written to `agg_<metric>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTable {
    pub metric: &'static str,
    pub rows: Vec<AggregateRow>,
}

/// Metrics aggregated, in file order.
pub const METRICS: [&str; 7] = [
    "cum_regret",
    "mean_loss",
    "outage_freq",
    "subopt_freq",
    "kl_to_truth",
    "cum_outage_freq",
    "cum_subopt_freq",
];

pub fn read_tracks(path: &Path) -> Result<Vec<TrackSummary>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Sample mean and `sd/√n` (0 for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn metric_values(rows: &[&TrackSummary]) -> BTreeMap<&'static str, Vec<f64>> {
    // rows: one replicate, sorted by track
    let mut out: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    let (mut outage, mut subopt) = (0.0, 0.0);
    for (i, r) in rows.iter().enumerate() {
        outage += r.outage_freq;
        subopt += r.subopt_freq;
        let k = (i + 1) as f64;
        for (name, v) in [
            ("cum_regret", r.cum_regret),
            ("mean_loss", r.mean_loss),
            ("outage_freq", r.outage_freq),
            ("subopt_freq", r.subopt_freq),
            ("kl_to_truth", r.kl_to_truth),
            ("cum_outage_freq", outage / k),
            ("cum_subopt_freq", subopt / k),
        ] {
            out.entry(name).or_default().push(v);
        }
    }
    out
}

/// Per-(policy, track) mean and standard error of every metric.
///
/// Cumulative frequencies average the per-track values of tracks `1..=s`
/// within each seed. NaN values are skipped; a group with no finite values
/// emits no row. Policies keep their order of first appearance.
pub fn aggregate(summaries: &[TrackSummary]) -> Result<Vec<AggregateTable>> {
    if summaries.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut policies: Vec<&str> = Vec::new();
    for s in summaries {
        if !policies.contains(&s.policy.as_str()) {
            policies.push(&s.policy);
        }
    }
    // (policy, seed) -> rows by track
    let mut replicates: BTreeMap<(usize, u64), Vec<&TrackSummary>> = BTreeMap::new();
    for s in summaries {
        let p = policies.iter().position(|p| *p == s.policy).unwrap_or(0);
        replicates.entry((p, s.seed)).or_default().push(s);
    }
    // (metric, policy, track) -> values across seeds
    let mut groups: BTreeMap<(&'static str, usize, usize), Vec<f64>> = BTreeMap::new();
    for ((p, _), rows) in replicates.iter_mut() {
        rows.sort_by_key(|r| r.track);
        for (metric, values) in metric_values(rows) {
            for (r, v) in rows.iter().zip(values) {
                groups.entry((metric, *p, r.track)).or_default().push(v);
            }
        }
    }
    let tables = METRICS
        .iter()
        .map(|&metric| {
            let rows = groups
                .range((metric, 0, 0)..=(metric, usize::MAX, usize::MAX))
                .filter_map(|(&(_, p, track), values)| {
                    let finite: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
                    if finite.is_empty() {
                        return None;
                    }
                    let (mean, stderr) = mean_stderr(&finite);
                    Some(AggregateRow {
                        policy: policies[p].to_string(),
                        track,
                        mean,
                        stderr,
                        n_seeds: finite.len(),
                    })
                })
                .collect();
            AggregateTable { metric, rows }
        })
        .collect();
    Ok(tables)
}

/// Write one `agg_<metric>.csv` per table.
pub fn write_aggregate(out: &Path, tables: &[AggregateTable]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for t in tables {
        let path = out.join(format!("agg_{}.csv", t.metric));
        let mut w = csv::Writer::from_path(&path)?;
        if t.rows.is_empty() {
            w.write_record(["policy", "track", "mean", "stderr", "n_seeds"])?;
        }
        for r in &t.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(policy: &str, seed: u64, track: usize, cum_regret: f64) -> TrackSummary {
        TrackSummary {
            policy: policy.into(),
            seed,
            track,
            cum_regret,
            mean_loss: 0.5,
            outage_freq: 0.1 * track as f64,
            subopt_freq: 0.0,
            kl_to_truth: f64::NAN,
        }
    }

    fn table<'a>(t: &'a [AggregateTable], metric: &str) -> &'a [AggregateRow] {
        &t.iter().find(|t| t.metric == metric).unwrap().rows
    }

    #[test]
    fn single_seed_has_zero_stderr() {
        let t = aggregate(&[row("a", 0, 1, 0.7)]).unwrap();
        let r = &table(&t, "cum_regret")[0];
        assert_eq!((r.mean, r.stderr, r.n_seeds), (0.7, 0.0, 1));
    }

    #[test]
    fn two_seeds_mean_and_stderr() {
        let t = aggregate(&[row("a", 0, 1, 0.2), row("a", 1, 1, 0.4)]).unwrap();
        let r = &table(&t, "cum_regret")[0];
        assert!((r.mean - 0.3).abs() < 1e-15);
        assert!((r.stderr - 0.1).abs() < 1e-15);
    }

    #[test]
    fn cumulative_frequency_and_nan_skipping() {
        let t = aggregate(&[row("a", 0, 2, 1.0), row("a", 0, 1, 0.5)]).unwrap();
        let cum = table(&t, "cum_outage_freq");
        assert!((cum[0].mean - 0.1).abs() < 1e-15);
        assert!((cum[1].mean - 0.15).abs() < 1e-15);
        assert!(table(&t, "kl_to_truth").is_empty());
        assert!(aggregate(&[]).is_err());
    }
}
