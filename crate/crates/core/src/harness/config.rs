//! Experiment configuration: flat `key = value` files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Lists are comma separated. `seeds` also accepts a half-open range `a..b`.
//! Keys that are not set keep their defaults; unknown or repeated keys are
//! rejected.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fstc::{SceneParams, TaskDistribution};
use crate::meta::{EnvironmentParams, Mode, Policy};
use crate::waveforms::{default_catalog, DEFAULT_SAMPLES};

/// Largest catalog size.
pub const MAX_WAVEFORMS: usize = 5;

/// Environment variable overriding [`ExperimentConfig::workers`].
pub const WORKERS_ENV: &str = "METATS_WORKERS";

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Tracks per replicate.
    pub m: usize,
    /// CPIs per track.
    pub n: usize,
    /// Waveforms used, taken from the front of the catalog.
    pub k: usize,
    /// Context dimension; fixed at 3.
    pub d: usize,
    pub sigma_q_sq: f64,
    pub sigma0_sq: f64,
    /// Loss-model noise variance σ².
    pub noise_var: f64,
    /// Receiver noise power σ_n².
    pub noise_power: f64,
    pub target_power: f64,
    pub clutter_power: f64,
    pub sinr_target_db: f64,
    pub obs_flip_prob: f64,
    pub num_states: usize,
    pub memory: usize,
    pub state_gains: Vec<f64>,
    pub grid_delay: usize,
    pub grid_doppler: usize,
    pub n_samples: usize,
    pub ir_taps: usize,
    pub ir_kernel_scale: f64,
    pub doppler: f64,
    pub mu_star: Vec<f64>,
    pub oracle_draws: usize,
    pub seeds: Vec<u64>,
    pub policies: Vec<Policy>,
    pub mode: Mode,
    pub output_dir: PathBuf,
    /// 0 means one worker per available core.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            m: 50,
            n: 200,
            k: 5,
            d: 3,
            sigma_q_sq: 0.15,
            sigma0_sq: 0.02,
            noise_var: 0.05,
            noise_power: 0.005,
            target_power: 1.0,
            clutter_power: 0.1,
            sinr_target_db: 12.0,
            obs_flip_prob: 0.1,
            num_states: 4,
            memory: 2,
            state_gains: vec![0.25, 1.0, 4.0, 16.0],
            grid_delay: 64,
            grid_doppler: 16,
            n_samples: DEFAULT_SAMPLES,
            ir_taps: 8,
            ir_kernel_scale: 2.0,
            doppler: 0.0,
            mu_star: vec![0.15, -0.3, 0.55],
            oracle_draws: 64,
            seeds: (0..20).collect(),
            policies: Policy::ALL.to_vec(),
            mode: Mode::Physical,
            output_dir: PathBuf::from("results"),
            workers: 0,
        }
    }
}

struct Value<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

impl Value<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, what: &str) -> Result<T> {
        self.text
            .parse()
            .map_err(|_| self.err(format!("expected {what}, found `{}`", self.text)))
    }

    fn list<T: std::str::FromStr>(&self, what: &str) -> Result<Vec<T>> {
        if self.text.is_empty() {
            return Ok(Vec::new());
        }
        self.text
            .split(',')
            .map(|item| {
                item.trim()
                    .parse()
                    .map_err(|_| self.err(format!("expected a list of {what}, found `{}`", item.trim())))
            })
            .collect()
    }
}

/// Parse `a..b` or a comma-separated list.
pub fn parse_seeds(text: &str) -> Option<Vec<u64>> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().ok()?;
        let b: u64 = b.trim().parse().ok()?;
        return Some((a..b).collect());
    }
    if text.is_empty() {
        return Some(Vec::new());
    }
    text.split(',').map(|s| s.trim().parse().ok()).collect()
}

/// Parse a comma-separated list of policy names.
pub fn parse_policies(text: &str) -> Result<Vec<Policy>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("");
            if body.trim().is_empty() {
                continue;
            }
            let key_col = body.len() - body.trim_start().len() + 1;
            let Some(eq) = body.find('=') else {
                return Err(Error::Parse {
                    line,
                    column: key_col,
                    message: "expected `key = value`".into(),
                });
            };
            let key = body[..eq].trim();
            let rest = &body[eq + 1..];
            let value = Value {
                text: rest.trim(),
                line,
                column: eq + 2 + (rest.len() - rest.trim_start().len()),
            };
            let key_err = |message: String| Error::Parse {
                line,
                column: key_col,
                message,
            };
            if key.is_empty() {
                return Err(key_err("missing key before `=`".into()));
            }
            if !seen.insert(key.to_string()) {
                return Err(key_err(format!("key `{key}` set more than once")));
            }
            match key {
                "m" => cfg.m = value.parse("an integer")?,
                "n" => cfg.n = value.parse("an integer")?,
                "k" => cfg.k = value.parse("an integer")?,
                "d" => cfg.d = value.parse("an integer")?,
                "sigma_q_sq" => cfg.sigma_q_sq = value.parse("a number")?,
                "sigma0_sq" => cfg.sigma0_sq = value.parse("a number")?,
                "noise_var" => cfg.noise_var = value.parse("a number")?,
                "noise_power" => cfg.noise_power = value.parse("a number")?,
                "target_power" => cfg.target_power = value.parse("a number")?,
                "clutter_power" => cfg.clutter_power = value.parse("a number")?,
                "sinr_target_db" => cfg.sinr_target_db = value.parse("a number")?,
                "obs_flip_prob" => cfg.obs_flip_prob = value.parse("a number")?,
                "num_states" => cfg.num_states = value.parse("an integer")?,
                "memory" => cfg.memory = value.parse("an integer")?,
                "state_gains" => cfg.state_gains = value.list("numbers")?,
                "grid_delay" => cfg.grid_delay = value.parse("an integer")?,
                "grid_doppler" => cfg.grid_doppler = value.parse("an integer")?,
                "n_samples" => cfg.n_samples = value.parse("an integer")?,
                "ir_taps" => cfg.ir_taps = value.parse("an integer")?,
                "ir_kernel_scale" => cfg.ir_kernel_scale = value.parse("a number")?,
                "doppler" => cfg.doppler = value.parse("a number")?,
                "mu_star" => cfg.mu_star = value.list("numbers")?,
                "oracle_draws" => cfg.oracle_draws = value.parse("an integer")?,
                "seeds" => {
                    cfg.seeds = parse_seeds(value.text)
                        .ok_or_else(|| value.err("expected `a..b` or a list of integers"))?
                }
                "policies" => {
                    cfg.policies = parse_policies(value.text).map_err(|e| value.err(e.to_string()))?
                }
                "mode" => cfg.mode = value.text.parse().map_err(|e: Error| value.err(e.to_string()))?,
                "output_dir" => cfg.output_dir = PathBuf::from(value.text),
                "workers" => cfg.workers = value.parse("an integer")?,
                other => return Err(key_err(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        fn v(field: &str, message: impl Into<String>) -> Error {
            Error::validation(field, message)
        }
        if self.m == 0 {
            return Err(v("m", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(v("n", "must be at least 1"));
        }
        if self.k == 0 || self.k > MAX_WAVEFORMS {
            return Err(v("k", format!("must be in 1..={MAX_WAVEFORMS}")));
        }
        if self.d != 3 {
            return Err(v("d", "the context has exactly 3 features"));
        }
        for (name, value) in [
            ("sigma_q_sq", self.sigma_q_sq),
            ("sigma0_sq", self.sigma0_sq),
            ("noise_var", self.noise_var),
            ("noise_power", self.noise_power),
            ("target_power", self.target_power),
            ("clutter_power", self.clutter_power),
            ("ir_kernel_scale", self.ir_kernel_scale),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(v(name, "must be positive and finite"));
            }
        }
        if !self.sinr_target_db.is_finite() {
            return Err(v("sinr_target_db", "must be finite"));
        }
        if !self.doppler.is_finite() {
            return Err(v("doppler", "must be finite"));
        }
        if !(0.0..1.0).contains(&self.obs_flip_prob) {
            return Err(v("obs_flip_prob", "must be in [0, 1)"));
        }
        if self.num_states == 0 {
            return Err(v("num_states", "must be at least 1"));
        }
        if self.state_gains.len() != self.num_states {
            return Err(v(
                "state_gains",
                format!("needs {} entries, one per state", self.num_states),
            ));
        }
        if self.state_gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(v("state_gains", "entries must be nonnegative and finite"));
        }
        if self.memory == 0 {
            return Err(v("memory", "must be at least 1"));
        }
        if self.grid_delay == 0 {
            return Err(v("grid_delay", "must be at least 1"));
        }
        if self.grid_doppler == 0 {
            return Err(v("grid_doppler", "must be at least 1"));
        }
        if self.n_samples < 1024 {
            return Err(v("n_samples", "the catalog needs at least 1024 samples"));
        }
        if self.ir_taps == 0 {
            return Err(v("ir_taps", "must be at least 1"));
        }
        if self.mu_star.len() != self.d || self.mu_star.iter().any(|x| !x.is_finite()) {
            return Err(v("mu_star", format!("needs {} finite entries", self.d)));
        }
        if self.oracle_draws == 0 {
            return Err(v("oracle_draws", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(v("seeds", "must list at least one seed"));
        }
        if self.policies.is_empty() {
            return Err(v("policies", "must list at least one policy"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serialize every key; [`ExperimentConfig::parse`] reads it back equal.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("m", self.m.to_string());
        put("n", self.n.to_string());
        put("k", self.k.to_string());
        put("d", self.d.to_string());
        put("sigma_q_sq", self.sigma_q_sq.to_string());
        put("sigma0_sq", self.sigma0_sq.to_string());
        put("noise_var", self.noise_var.to_string());
        put("noise_power", self.noise_power.to_string());
        put("target_power", self.target_power.to_string());
        put("clutter_power", self.clutter_power.to_string());
        put("sinr_target_db", self.sinr_target_db.to_string());
        put("obs_flip_prob", self.obs_flip_prob.to_string());
        put("num_states", self.num_states.to_string());
        put("memory", self.memory.to_string());
        put("state_gains", join(&self.state_gains));
        put("grid_delay", self.grid_delay.to_string());
        put("grid_doppler", self.grid_doppler.to_string());
        put("n_samples", self.n_samples.to_string());
        put("ir_taps", self.ir_taps.to_string());
        put("ir_kernel_scale", self.ir_kernel_scale.to_string());
        put("doppler", self.doppler.to_string());
        put("mu_star", join(&self.mu_star));
        put("oracle_draws", self.oracle_draws.to_string());
        put("seeds", join(&self.seeds));
        put("policies", join(&self.policies));
        put("mode", self.mode.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("workers", self.workers.to_string());
        s
    }

    /// Worker count after the environment override; never 0.
    pub fn effective_workers(&self) -> usize {
        let requested = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(self.workers);
        if requested == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            requested
        }
    }

    pub fn environment_params(&self) -> EnvironmentParams {
        EnvironmentParams {
            task: TaskDistribution {
                mu_star: DVector::from_column_slice(&self.mu_star),
                sigma0_sq: self.sigma0_sq,
                ir_kernel_scale: self.ir_kernel_scale,
                ir_taps: self.ir_taps,
            },
            scene: SceneParams {
                target_power: self.target_power,
                clutter_power: self.clutter_power,
                noise_power: self.noise_power,
                state_gain: self.state_gains.clone(),
                doppler: self.doppler,
                grid_delay: self.grid_delay,
                grid_doppler: self.grid_doppler,
                n_samples: self.n_samples,
            },
            waveforms: default_catalog(self.n_samples).into_iter().take(self.k).collect(),
            sigma_q_sq: self.sigma_q_sq,
            noise_var: self.noise_var,
            sinr_target_db: self.sinr_target_db,
            memory: self.memory,
            obs_flip_prob: self.obs_flip_prob,
            oracle_draws: self.oracle_draws,
            mode: self.mode,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!((c.m, c.n, c.k), (50, 200, 5));
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn zero_tracks_names_m() {
        match ExperimentConfig::parse("m = 0\n") {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "m"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_position() {
        match ExperimentConfig::parse("# c\nm = 3\n  bogus = 1\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_reports_value_column() {
        match ExperimentConfig::parse("n =  abc") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (1, 6)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn repeated_and_malformed_lines_rejected() {
        assert!(matches!(ExperimentConfig::parse("m = 1\nm = 2"), Err(Error::Parse { .. })));
        assert!(matches!(ExperimentConfig::parse("m 1"), Err(Error::Parse { .. })));
    }

    #[test]
    fn seeds_and_lists() {
        let c = ExperimentConfig::parse(
            "seeds = 3..6\npolicies = meta-ts, random\nmode = synthetic # inline\nstate_gains = 1, 2\nnum_states = 2",
        )
        .unwrap();
        assert_eq!(c.seeds, vec![3, 4, 5]);
        assert_eq!(c.policies, vec![Policy::MetaTs, Policy::Random]);
        assert_eq!(c.mode, Mode::Synthetic);
        assert_eq!(c.state_gains, vec![1.0, 2.0]);
        assert_eq!(parse_seeds("1, 9").unwrap(), vec![1, 9]);
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.sigma0_sq = 0.1 + 0.2;
        c.mu_star = vec![1.0 / 3.0, -2.5e-7, 7.0];
        c.seeds = vec![5, 1, 99];
        c.mode = Mode::Synthetic;
        c.policies = vec![Policy::TsOracle];
        let again = ExperimentConfig::parse(&c.to_config_string()).unwrap();
        assert_eq!(again, c);
    }
}
