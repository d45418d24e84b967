//! Replicate execution and CSV persistence.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::meta::{run_meta_experiment, Environment, Policy};
use crate::metrics::{kl_trace, summarize_tracks, CpiRecord, TrackSummary};

pub const CPI_FILE: &str = "cpi.csv";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// Output of one (policy, seed) replicate.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub policy: Policy,
    pub seed: u64,
    pub cpis: Vec<CpiRecord>,
    pub tracks: Vec<TrackSummary>,
    /// Kept out of the CSVs so they stay byte-identical across runs.
    pub wall_ms: f64,
}

/// Run one replicate in memory.
pub fn run_replicate(cfg: &ExperimentConfig, policy: Policy, seed: u64) -> Result<ReplicateResult> {
    cfg.validate()?;
    let start = Instant::now();
    let env = Environment::build(&cfg.environment_params(), seed)?;
    let outcome = run_meta_experiment(&env, cfg.m, cfg.n, policy, seed)?;
    let kl = if outcome.meta_history.is_empty() {
        Vec::new()
    } else {
        kl_trace(&outcome.meta_history, &env.task.mu_star)?
    };
    let cpis: Vec<CpiRecord> = outcome.tracks.into_iter().flat_map(|t| t.cpis).collect();
    let tracks = summarize_tracks(&cpis, &kl)?;
    log::debug!("replicate {policy} seed {seed} done");
    Ok(ReplicateResult {
        policy,
        seed,
        cpis,
        tracks,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Run one replicate and write its CSVs into `out`.
pub fn run(cfg: &ExperimentConfig, policy: Policy, seed: u64, out: &Path) -> Result<ReplicateResult> {
    let result = run_replicate(cfg, policy, seed)?;
    write_records(out, std::slice::from_ref(&result))?;
    Ok(result)
}

/// Run every (policy, seed) pair of `cfg`, ordered by policy list then seed.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<ReplicateResult>> {
    cfg.validate()?;
    let jobs: Vec<(Policy, u64)> = cfg
        .policies
        .iter()
        .flat_map(|&p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.effective_workers())
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(p, s)| run_replicate(cfg, p, s))
            .collect()
    })
}

/// Write `cpi.csv` and `tracks.csv` for the given replicates, in order.
pub fn write_records(out: &Path, results: &[ReplicateResult]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut cpi = csv::Writer::from_path(out.join(CPI_FILE))?;
    let mut tracks = csv::Writer::from_path(out.join(TRACKS_FILE))?;
    for r in results {
        for row in &r.cpis {
            cpi.serialize(row)?;
        }
        for row in &r.tracks {
            tracks.serialize(row)?;
        }
    }
    cpi.flush().map_err(|e| Error::io(out.join(CPI_FILE), e))?;
    tracks.flush().map_err(|e| Error::io(out.join(TRACKS_FILE), e))?;
    Ok(())
}

/// Save the resolved configuration next to the results.
pub fn write_config(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(CONFIG_FILE);
    fs::write(&path, cfg.to_config_string()).map_err(|e| Error::io(&path, e))
}

/// Read back a per-CPI CSV.
pub fn read_cpis(path: &Path) -> Result<Vec<CpiRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
