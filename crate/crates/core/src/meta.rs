//! Track-to-track meta-learning of the instance prior and the experiment
//! loop that runs one policy over a sequence of tracks.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::bandit::{
    argmax_first, compute_loss, synthetic_loss, ContextVector, HistoryEntry, TsAgent, CONTEXT_DIM,
};
use crate::error::{Error, Result};
use crate::fstc::{
    draw_instance, from_db, to_db, ChannelResponse, FstcInstance, SceneParams, StateProcess,
    TaskDistribution,
};
use crate::gaussmath::{
    spd_solve, spd_solve_matrix, standard_normal_vector, symmetrize, Gaussian, LinearPosterior,
};
use crate::metrics::{regret_increment, CpiRecord, OUTAGE_THRESHOLD_DB, SUBOPTIMAL_TOL};
use crate::rng::{stream, Purpose, SimRng};
use crate::waveforms::{make_envelope, ComplexEnvelope, WaveformSpec};

/// Dirichlet concentration of the per-seed transition tables.
pub const TRANSITION_CONCENTRATION: f64 = 2.0;

/// Gaussian belief `N(μ_s, Λ_s⁻¹)` over the mean of the instance prior.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPosterior {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    sigma0_sq: f64,
    noise_var: f64,
}

impl MetaPosterior {
    /// `μ_0 = 0`, `Λ_0 = I/σ_q²`.
    pub fn new(sigma_q_sq: f64, d: usize, sigma0_sq: f64, noise_var: f64) -> Result<Self> {
        if !(sigma_q_sq > 0.0) || !sigma_q_sq.is_finite() {
            return Err(Error::InvalidVariance {
                name: "sigma_q_sq",
                value: sigma_q_sq,
            });
        }
        Self::from_parts(
            DVector::zeros(d),
            DMatrix::identity(d, d) / sigma_q_sq,
            sigma0_sq,
            noise_var,
        )
    }

    pub fn from_parts(
        mean: DVector<f64>,
        precision: DMatrix<f64>,
        sigma0_sq: f64,
        noise_var: f64,
    ) -> Result<Self> {
        if !(sigma0_sq > 0.0) {
            return Err(Error::InvalidVariance {
                name: "sigma0_sq",
                value: sigma0_sq,
            });
        }
        if !(noise_var > 0.0) {
            return Err(Error::InvalidVariance {
                name: "noise_var",
                value: noise_var,
            });
        }
        if precision.nrows() != mean.len() || precision.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: precision.nrows(),
            });
        }
        crate::gaussmath::cholesky(&precision)?;
        Ok(Self {
            mean,
            precision,
            sigma0_sq,
            noise_var,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0_sq
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn to_gaussian(&self) -> Result<Gaussian> {
        LinearPosterior::new(
            self.precision.clone(),
            &self.precision * &self.mean,
            self.noise_var,
        )?
        .to_gaussian()
    }

    /// Draw `μ ~ N(μ_s, Λ_s⁻¹)` and return `N(μ, σ₀²I)`.
    pub fn sample_instance_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Gaussian> {
        let lp = LinearPosterior::new(
            self.precision.clone(),
            &self.precision * &self.mean,
            self.noise_var,
        )?;
        Gaussian::isotropic(lp.sample(rng)?, self.sigma0_sq)
    }

    /// Condition on one completed track with θ integrated out:
    ///
    /// `Λ_s = Λ + Xᵀ M⁻¹ X`, `μ_s = Λ_s⁻¹(Λμ + Xᵀ M⁻¹ L)`,
    /// `M = σ²I + σ₀² X Xᵀ`.
    pub fn meta_update(&self, data: &TrackData) -> Result<Self> {
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.dim(),
            });
        }
        if data.is_empty() {
            return Ok(self.clone());
        }
        let x = data.design();
        let l = data.losses();
        let n = x.nrows();
        let middle = symmetrize(
            &(DMatrix::identity(n, n) * self.noise_var + &x * x.transpose() * self.sigma0_sq),
        );
        let mx = spd_solve_matrix(&middle, &x)?;
        let ml = spd_solve(&middle, &l)?;
        let precision = symmetrize(&(&self.precision + x.transpose() * mx));
        let rhs = &self.precision * &self.mean + x.transpose() * ml;
        let mean = spd_solve(&precision, &rhs)?;
        Ok(Self {
            mean,
            precision,
            sigma0_sq: self.sigma0_sq,
            noise_var: self.noise_var,
        })
    }
}

/// Contexts and losses observed during one track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackData {
    dim: usize,
    contexts: Vec<f64>,
    losses: Vec<f64>,
}

impl TrackData {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            contexts: Vec::new(),
            losses: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], losses: &[f64]) -> Result<Self> {
        if rows.len() != losses.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: losses.len(),
            });
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Self::new(dim);
        for (r, &l) in rows.iter().zip(losses) {
            data.push(r, l)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, context: &[f64], loss: f64) -> Result<()> {
        if context.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: context.len(),
            });
        }
        self.contexts.extend_from_slice(context);
        self.losses.push(loss);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// `X_s`, one row per CPI.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.contexts)
    }

    /// `L_s`
    pub fn losses(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.losses)
    }

    /// Split into two tracks at row `at`.
    pub fn split(&self, at: usize) -> (Self, Self) {
        let at = at.min(self.len());
        let cut = at * self.dim;
        (
            Self {
                dim: self.dim,
                contexts: self.contexts[..cut].to_vec(),
                losses: self.losses[..at].to_vec(),
            },
            Self {
                dim: self.dim,
                contexts: self.contexts[cut..].to_vec(),
                losses: self.losses[at..].to_vec(),
            },
        )
    }
}

/// Waveform-selection policy. The discriminant keys the policy's random
/// streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Random = 0,
    TsUninformative = 1,
    TsOracle = 2,
    MetaTs = 3,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::Random,
        Policy::TsUninformative,
        Policy::TsOracle,
        Policy::MetaTs,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::TsUninformative => "ts-uninformative",
            Policy::TsOracle => "ts-oracle",
            Policy::MetaTs => "meta-ts",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::InvalidInput(format!("unknown policy '{s}'")))
    }
}

/// Environment used to generate losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Matched-filter SINR through a drawn channel.
    Physical,
    /// Exact linear model over a fixed per-seed feature table.
    Synthetic,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Physical => "physical",
            Mode::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "physical" => Ok(Mode::Physical),
            "synthetic" => Ok(Mode::Synthetic),
            other => Err(Error::InvalidInput(format!("unknown mode '{other}'"))),
        }
    }
}

/// Everything needed to build an [`Environment`] for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentParams {
    pub task: TaskDistribution,
    pub scene: SceneParams,
    pub waveforms: Vec<WaveformSpec>,
    pub sigma_q_sq: f64,
    pub noise_var: f64,
    pub sinr_target_db: f64,
    pub memory: usize,
    pub obs_flip_prob: f64,
    pub oracle_draws: usize,
    pub mode: Mode,
}

/// Per-seed environment shared by every policy and track.
#[derive(Debug, Clone)]
pub struct Environment {
    pub task: TaskDistribution,
    pub scene: SceneParams,
    pub states: StateProcess,
    pub catalog: Vec<ComplexEnvelope>,
    /// Synthetic-mode features, indexed `[observation][waveform]`.
    pub features: Vec<Vec<ContextVector>>,
    pub sigma_q_sq: f64,
    pub noise_var: f64,
    /// Linear power ratio.
    pub sinr_target: f64,
    pub oracle_draws: usize,
    pub mode: Mode,
}

impl Environment {
    pub fn build(params: &EnvironmentParams, seed: u64) -> Result<Self> {
        params.task.validate()?;
        if params.task.dim() != CONTEXT_DIM {
            return Err(Error::DimensionMismatch {
                expected: CONTEXT_DIM,
                found: params.task.dim(),
            });
        }
        for (name, value) in [
            ("sigma_q_sq", params.sigma_q_sq),
            ("noise_var", params.noise_var),
        ] {
            if !(value > 0.0) {
                return Err(Error::InvalidVariance { name, value });
            }
        }
        if params.waveforms.is_empty() {
            return Err(Error::EmptyInput);
        }
        let num_states = params.scene.state_gain.len();
        let mut rng = stream(seed, Purpose::Scene, None, 0);
        let states = StateProcess::random_dirichlet(
            num_states,
            params.memory,
            TRANSITION_CONCENTRATION,
            params.obs_flip_prob,
            &mut rng,
        )?;
        let k = params.waveforms.len();
        let features = (0..num_states)
            .map(|_| (0..k).map(|_| random_feature(&mut rng)).collect())
            .collect();
        let catalog = params
            .waveforms
            .iter()
            .map(|s| make_envelope(s, params.scene.n_samples))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            task: params.task.clone(),
            scene: params.scene.clone(),
            states,
            catalog,
            features,
            sigma_q_sq: params.sigma_q_sq,
            noise_var: params.noise_var,
            sinr_target: from_db(params.sinr_target_db),
            oracle_draws: params.oracle_draws.max(1),
            mode: params.mode,
        })
    }

    pub fn num_waveforms(&self) -> usize {
        self.catalog.len()
    }

    pub fn num_observations(&self) -> usize {
        self.states.num_states()
    }

    pub fn dim(&self) -> usize {
        self.task.dim()
    }

    /// Prior a non-meta policy starts every track from.
    pub fn fixed_prior(&self, policy: Policy) -> Result<Gaussian> {
        match policy {
            Policy::TsOracle => Gaussian::isotropic(self.task.mu_star.clone(), self.task.sigma0_sq),
            _ => Gaussian::isotropic(
                DVector::zeros(self.dim()),
                self.sigma_q_sq + self.task.sigma0_sq,
            ),
        }
    }

    pub fn initial_meta(&self) -> Result<MetaPosterior> {
        MetaPosterior::new(
            self.sigma_q_sq,
            self.dim(),
            self.task.sigma0_sq,
            self.noise_var,
        )
    }
}

/// A feature triple consistent with losses on `[0, 1]`.
fn random_feature<R: Rng + ?Sized>(rng: &mut R) -> ContextVector {
    let mean: f64 = rng.random();
    let var = rng.random::<f64>() * mean * (1.0 - mean);
    let max = mean + rng.random::<f64>() * (1.0 - mean);
    ContextVector([mean, var, max])
}

#[derive(Debug, Clone)]
struct PhysicalTrack {
    instance: FstcInstance,
    responses: Vec<ChannelResponse>,
    /// Oracle mean loss, `[state][waveform]`.
    oracle: Vec<Vec<f64>>,
}

/// Policy-independent part of one track: task parameter, state sequence
/// and (physical mode) channel.
#[derive(Debug, Clone)]
pub struct PreparedTrack {
    pub track: usize,
    pub theta: DVector<f64>,
    pub states: Vec<usize>,
    pub observations: Vec<usize>,
    physical: Option<PhysicalTrack>,
}

impl PreparedTrack {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn instance(&self) -> Option<&FstcInstance> {
        self.physical.as_ref().map(|p| &p.instance)
    }

    /// Oracle expected loss of every waveform at CPI `k`.
    pub fn expected_losses(&self, env: &Environment, k: usize) -> Vec<f64> {
        match &self.physical {
            Some(p) => p.oracle[self.states[k]].clone(),
            None => env.features[self.observations[k]]
                .iter()
                .map(|phi| phi.dot(self.theta.as_slice()).clamp(0.0, 1.0))
                .collect(),
        }
    }
}

/// Draw track `track` (1-based) of `seed` from the environment streams.
pub fn prepare_track(env: &Environment, seed: u64, track: usize, n: usize) -> Result<PreparedTrack> {
    let mut inst_rng = stream(seed, Purpose::Instance, None, track);
    let mut state_rng = stream(seed, Purpose::States, None, track);
    let (states, observations) = env.states.simulate(n, &mut state_rng);
    match env.mode {
        Mode::Synthetic => {
            let z = standard_normal_vector(env.dim(), &mut inst_rng);
            let theta = &env.task.mu_star + z * env.task.sigma0_sq.sqrt();
            Ok(PreparedTrack {
                track,
                theta,
                states,
                observations,
                physical: None,
            })
        }
        Mode::Physical => {
            let instance = draw_instance(&env.task, &env.scene, n, &mut inst_rng)?;
            let responses = env
                .catalog
                .iter()
                .map(|w| ChannelResponse::new(&instance, w))
                .collect::<Result<Vec<_>>>()?;
            let mut oracle_rng = stream(seed, Purpose::Oracle, None, track);
            let oracle = (0..env.num_observations())
                .map(|s| {
                    responses
                        .iter()
                        .map(|r| r.expected_loss(s, env.sinr_target, env.oracle_draws, &mut oracle_rng))
                        .collect()
                })
                .collect();
            Ok(PreparedTrack {
                track,
                theta: instance.theta.clone(),
                states,
                observations,
                physical: Some(PhysicalTrack {
                    instance,
                    responses,
                    oracle,
                }),
            })
        }
    }
}

/// Per-CPI log and regression data of one track.
#[derive(Debug, Clone)]
pub struct TrackOutcome {
    pub cpis: Vec<CpiRecord>,
    pub data: TrackData,
    pub prior: Gaussian,
}

/// Run the per-CPI loop of one track under `prior`.
///
/// `Random` ignores the posterior when choosing but still keeps it up to
/// date so every policy produces the same bookkeeping.
pub fn run_track(
    env: &Environment,
    prepared: &PreparedTrack,
    policy: Policy,
    prior: &Gaussian,
    seed: u64,
    agent_rng: &mut SimRng,
) -> Result<TrackOutcome> {
    let k_wave = env.num_waveforms();
    let mut agent = TsAgent::new(prior, env.noise_var, k_wave, env.num_observations())?;
    let mut noise_rng = stream(seed, Purpose::Noise, None, prepared.track);
    let mut data = TrackData::new(env.dim());
    let mut cpis = Vec::with_capacity(prepared.len());

    for k in 0..prepared.len() {
        let state = prepared.states[k];
        let obs = prepared.observations[k];
        let contexts = match &prepared.physical {
            Some(_) => agent.contexts(obs)?,
            None => env.features[obs].clone(),
        };
        let waveform = match policy {
            Policy::Random => agent_rng.random_range(0..k_wave),
            _ => agent.select_with_contexts(&contexts, agent_rng)?,
        };
        let context = contexts[waveform];
        let (loss, sinr_db) = match &prepared.physical {
            Some(p) => {
                let sinr = p.responses[waveform].sample_sinr_fast(state, &mut noise_rng);
                (compute_loss(sinr, env.sinr_target), to_db(sinr))
            }
            None => (
                synthetic_loss(prepared.theta.as_slice(), &context, env.noise_var, &mut noise_rng)?,
                f64::NAN,
            ),
        };
        let expected = prepared.expected_losses(env, k);
        let oracle_loss = expected[argmax_first(expected.iter().copied())];
        let regret_inc = regret_increment(&expected, waveform)?;

        agent.record(HistoryEntry {
            cpi: k,
            observation: obs,
            waveform,
            loss,
            context,
        })?;
        data.push(context.as_slice(), loss)?;
        cpis.push(CpiRecord {
            policy: policy.name().to_string(),
            seed,
            track: prepared.track,
            cpi: k + 1,
            state,
            obs,
            waveform,
            sinr_db,
            loss,
            oracle_loss,
            regret_inc,
            suboptimal: regret_inc > SUBOPTIMAL_TOL,
            outage_10db: sinr_db < OUTAGE_THRESHOLD_DB,
        });
    }
    Ok(TrackOutcome {
        cpis,
        data,
        prior: prior.clone(),
    })
}

/// All tracks of one (policy, seed) replicate.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub policy: Policy,
    pub seed: u64,
    pub tracks: Vec<TrackOutcome>,
    /// Meta-posterior in force at the start of each track (meta-ts only).
    pub meta_history: Vec<MetaPosterior>,
}

/// Run `m` tracks of `n` CPIs under `policy`; meta-ts updates its
/// meta-posterior once per completed track.
pub fn run_meta_experiment(
    env: &Environment,
    m: usize,
    n: usize,
    policy: Policy,
    seed: u64,
) -> Result<ExperimentOutcome> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("m and n must be at least 1".into()));
    }
    let mut meta = env.initial_meta()?;
    let mut meta_history = Vec::new();
    let mut tracks = Vec::with_capacity(m);
    for s in 1..=m {
        let prepared = prepare_track(env, seed, s, n)?;
        let prior = match policy {
            Policy::MetaTs => {
                meta_history.push(meta.clone());
                let mut rng = stream(seed, Purpose::Meta, Some(policy.index()), s);
                meta.sample_instance_prior(&mut rng)?
            }
            other => env.fixed_prior(other)?,
        };
        let mut agent_rng = stream(seed, Purpose::Agent, Some(policy.index()), s);
        let outcome = run_track(env, &prepared, policy, &prior, seed, &mut agent_rng)?;
        if policy == Policy::MetaTs {
            meta = meta.meta_update(&outcome.data)?;
        }
        tracks.push(outcome);
    }
    Ok(ExperimentOutcome {
        policy,
        seed,
        tracks,
        meta_history,
    })
}
