use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metats::harness::config::{parse_policies, parse_seeds};
use metats::harness::run::write_config;
use metats::harness::{aggregate, read_tracks, run_all, write_aggregate, write_records, ExperimentConfig, TRACKS_FILE};
use metats::meta::{prepare_track, Environment, Mode};
use metats::selftest::run_selftest;
use metats::waveforms::{make_envelope, spec_from_label};
use metats::{Error, Result};

#[derive(Parser)]
#[command(name = "metats", version, about = "Meta-Thompson sampling waveform-selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, seed) replicate and write cpi.csv and tracks.csv.
    Run {
        /// Configuration file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds as `a..b` or a comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated policy names.
        #[arg(long)]
        policies: Option<String>,
        /// `physical` or `synthetic`.
        #[arg(long)]
        mode: Option<String>,
        /// Also write each physical-mode track's channel to instances.csv.
        #[arg(long)]
        dump_instances: bool,
    },
    /// Aggregate a tracks.csv across seeds into agg_<metric>.csv files.
    Aggregate {
        /// Directory holding tracks.csv, or the file itself.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one catalog waveform as index,re,im rows.
    DumpWaveform {
        /// Catalog label, e.g. lfm, expfm-2.8, zc-1024, frank-144.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = metats::waveforms::DEFAULT_SAMPLES)]
        samples: usize,
    },
    /// Check core routines against independent oracles.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(config: Option<PathBuf>) -> Result<ExperimentConfig> {
    match config {
        Some(p) => ExperimentConfig::load(&p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn dump_instances(cfg: &ExperimentConfig, out: &std::path::Path) -> Result<()> {
    let path = out.join("instances.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["seed", "track", "kind", "tap", "re", "im", "theta", "noise_var"])?;
    for &seed in &cfg.seeds {
        let env = Environment::build(&cfg.environment_params(), seed)?;
        for track in 1..=cfg.m {
            let p = prepare_track(&env, seed, track, cfg.n)?;
            let Some(inst) = p.instance() else { continue };
            let theta = inst
                .theta
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            for (kind, taps) in [("target", &inst.target_ir), ("clutter", &inst.clutter_ir)] {
                for (i, v) in taps.iter().enumerate() {
                    w.write_record([
                        seed.to_string(),
                        track.to_string(),
                        kind.to_string(),
                        i.to_string(),
                        v.re.to_string(),
                        v.im.to_string(),
                        theta.clone(),
                        inst.noise_var.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::Io { path, source: e })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            policies,
            mode,
            dump_instances: dump,
        } => {
            let mut cfg = load(config)?;
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)
                    .ok_or_else(|| Error::validation("seeds", format!("cannot parse `{s}`")))?;
            }
            if let Some(p) = policies {
                cfg.policies = parse_policies(&p)?;
            }
            if let Some(m) = mode {
                cfg.mode = m.parse::<Mode>()?;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.validate()?;
            let results = run_all(&cfg)?;
            write_records(&cfg.output_dir, &results)?;
            write_config(&cfg.output_dir, &cfg)?;
            if dump {
                dump_instances(&cfg, &cfg.output_dir)?;
            }
            for r in &results {
                log::info!("{} seed {}: {:.1} ms", r.policy, r.seed, r.wall_ms);
            }
            println!(
                "wrote {} replicates to {}",
                results.len(),
                cfg.output_dir.display()
            );
        }
        Command::Aggregate { input, out } => {
            let path = if input.is_dir() { input.join(TRACKS_FILE) } else { input };
            let tables = aggregate(&read_tracks(&path)?)?;
            write_aggregate(&out, &tables)?;
            println!("wrote {} tables to {}", tables.len(), out.display());
        }
        Command::DumpWaveform { kind, out, samples } => {
            let e = make_envelope(&spec_from_label(&kind, samples)?, samples)?;
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["index", "re", "im"])?;
            for (i, v) in e.samples().iter().enumerate() {
                w.write_record([i.to_string(), v.re.to_string(), v.im.to_string()])?;
            }
            w.flush().map_err(|source| Error::Io { path: out.clone(), source })?;
        }
        Command::Selftest { seed } => {
            let checks = run_selftest(seed)?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Error::InvalidInput(format!("{failed} self-test check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
