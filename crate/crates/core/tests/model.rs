use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use metats::bandit::{synthetic_loss, ContextVector};
use metats::gaussmath::Gaussian;
use metats::harness::{run_replicate, ExperimentConfig};
use metats::meta::{prepare_track, run_meta_experiment, run_track, Environment, MetaPosterior, Mode, Policy, TrackData};
use metats::rng::{stream, Purpose};

fn synthetic(m: usize, n: usize, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        mode: Mode::Synthetic,
        m,
        n,
        seeds,
        ..ExperimentConfig::default()
    }
}

#[test]
fn random_policy_is_suboptimal_about_k_minus_one_over_k() {
    let cfg = synthetic(20, 200, (0..5).collect());
    let (mut subopt, mut total) = (0usize, 0usize);
    for &seed in &cfg.seeds {
        let r = run_replicate(&cfg, Policy::Random, seed).unwrap();
        subopt += r.cpis.iter().filter(|c| c.suboptimal).count();
        total += r.cpis.len();
    }
    let freq = subopt as f64 / total as f64;
    let expected = (cfg.k - 1) as f64 / cfg.k as f64;
    assert!((freq - expected).abs() < 0.02, "{freq} vs {expected}");
}

#[test]
fn degenerate_meta_prior_reduces_to_fixed_prior_ts() {
    let cfg = synthetic(1, 200, vec![7]);
    let mut env = Environment::build(&cfg.environment_params(), 7).unwrap();
    env.sigma_q_sq = 1e-30;
    let meta = run_meta_experiment(&env, 1, 200, Policy::MetaTs, 7).unwrap();

    let prepared = prepare_track(&env, 7, 1, 200).unwrap();
    let prior = Gaussian::isotropic(DVector::zeros(3), env.task.sigma0_sq).unwrap();
    let mut rng = stream(7, Purpose::Agent, Some(Policy::MetaTs.index()), 1);
    let fixed = run_track(&env, &prepared, Policy::MetaTs, &prior, 7, &mut rng).unwrap();

    let a: Vec<_> = meta.tracks[0].cpis.iter().map(|c| (c.waveform, c.loss)).collect();
    let b: Vec<_> = fixed.cpis.iter().map(|c| (c.waveform, c.loss)).collect();
    assert_eq!(a, b);
}

#[test]
fn meta_posterior_mean_converges_to_task_mean() {
    // Exploration is forced by uniform random contexts so every direction
    // of the task mean is identified.
    let mu_star = DVector::from_vec(vec![0.15, -0.3, 0.55]);
    let (sigma0_sq, noise_var) = (0.02, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut meta = MetaPosterior::new(0.15, 3, sigma0_sq, noise_var).unwrap();
    for _ in 0..50 {
        let theta = &mu_star + DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal)) * sigma0_sq.sqrt();
        let mut data = TrackData::new(3);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let y = x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>()
                + noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            data.push(&x, y).unwrap();
        }
        meta = meta.meta_update(&data).unwrap();
    }
    let err = (meta.mean() - &mu_star).amax();
    assert!(err < 0.15, "‖μ_50 − μ*‖∞ = {err}");
}

#[test]
fn synthetic_loss_mean_matches_clamped_normal_integral() {
    let theta = [0.3, -0.2, 0.6];
    let phi = ContextVector([0.5, 0.1, 0.7]);
    let noise_var: f64 = 0.2;
    let m: f64 = phi.0.iter().zip(theta).map(|(a, b)| a * b).sum();
    // E[clamp(X, 0, 1)] = ∫₀¹ P(X > t) dt, by the midpoint rule.
    let dist = Normal::new(m, noise_var.sqrt()).unwrap();
    let steps = 20_000;
    let exact: f64 = (0..steps)
        .map(|i| 1.0 - dist.cdf((i as f64 + 0.5) / steps as f64))
        .sum::<f64>()
        / steps as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 200_000;
    let mean: f64 = (0..draws)
        .map(|_| synthetic_loss(&theta, &phi, noise_var, &mut rng).unwrap())
        .sum::<f64>()
        / draws as f64;
    // Loss is bounded in [0, 1] so its standard deviation is at most 1/2.
    assert!((mean - exact).abs() < 4.0 * 0.5 / (draws as f64).sqrt(), "{mean} vs {exact}");
}

#[test]
fn cumulative_regret_never_decreases() {
    let cfg = synthetic(10, 50, vec![0, 1, 2]);
    for policy in Policy::ALL {
        for &seed in &cfg.seeds {
            let r = run_replicate(&cfg, policy, seed).unwrap();
            assert!(r.cpis.iter().all(|c| c.regret_inc >= 0.0));
            for w in r.tracks.windows(2) {
                assert!(w[1].cum_regret >= w[0].cum_regret);
            }
        }
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[test]
fn kl_to_truth_trends_down_across_tracks() {
    let cfg = synthetic(50, 200, (0..20).collect());
    let tracks: Vec<f64> = (1..=cfg.m).map(|t| t as f64).collect();
    let mut rho = 0.0;
    for &seed in &cfg.seeds {
        let r = run_replicate(&cfg, Policy::MetaTs, seed).unwrap();
        let kl: Vec<f64> = r.tracks.iter().map(|t| t.kl_to_truth).collect();
        rho += spearman(&tracks, &kl) / cfg.seeds.len() as f64;
    }
    assert!(rho < -0.8, "mean Spearman {rho}");
}

#[test]
fn oracle_prior_regret_grows_roughly_linearly() {
    let cfg = synthetic(50, 200, (0..5).collect());
    let mut per_track = vec![0.0; cfg.m];
    for &seed in &cfg.seeds {
        let r = run_replicate(&cfg, Policy::TsOracle, seed).unwrap();
        let mut prev = 0.0;
        for t in &r.tracks {
            per_track[t.track - 1] += t.cum_regret - prev;
            prev = t.cum_regret;
        }
    }
    let half = cfg.m / 2;
    let early: f64 = per_track[..half].iter().sum();
    let late: f64 = per_track[half..].iter().sum();
    let ratio = early.max(late) / early.min(late);
    assert!(ratio <= 2.0, "first/second half regret ratio {ratio}");
}

#[test]
fn physical_oracle_table_matches_long_monte_carlo() {
    let cfg = ExperimentConfig {
        mode: Mode::Physical,
        ..ExperimentConfig::default()
    };
    let env = Environment::build(&cfg.environment_params(), 2).unwrap();
    let prepared = prepare_track(&env, 2, 1, 50).unwrap();
    let inst = prepared.instance().unwrap();
    let responses: Vec<_> = env
        .catalog
        .iter()
        .map(|w| metats::fstc::ChannelResponse::new(inst, w).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..prepared.len() {
        let state = prepared.states[k];
        let table = prepared.expected_losses(&env, k);
        for (w, r) in responses.iter().enumerate() {
            let long = r.expected_loss(state, env.sinr_target, 10_000, &mut rng);
            assert!((table[w] - long).abs() < 0.02, "state {state} waveform {w}: {} vs {long}", table[w]);
        }
        if k > 8 {
            break;
        }
    }
}
