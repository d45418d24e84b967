//! Finite-state target channel (FSTC) simulation.
//!
//! A track's channel is a hidden state process with memory `L` observed
//! through a symmetric flip kernel, plus target and clutter impulse
//! responses drawn from complex Gaussian processes. The received signal is
//! `w*h·e^{j2πf_d t} + √g(s)·w*c·e^{j2πf_d t} + n`, matched filtered; the
//! post-processing SINR is the target peak power over the clutter-plus-noise
//! power averaged over a window of lags around that peak.
//!
//! The clutter patch is co-located with the target, so SINR does not depend
//! on the target's delay cell; the trajectory only positions the echo in
//! the raw receive buffer.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::bandit::compute_loss;
use crate::error::{Error, Result};
use crate::gaussmath::standard_normal_vector;
use crate::waveforms::{correlate, ComplexEnvelope};

/// SINR ceiling (60 dB, linear).
pub const SINR_CAP: f64 = 1e6;

/// Half-width, in lags, of the interference-averaging window.
pub const WINDOW_HALF_WIDTH: usize = 16;

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Hidden state process with finite memory and its observation kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct StateProcess {
    num_states: usize,
    memory: usize,
    /// One row per history of the last `memory − 1` states (oldest state
    /// most significant), each a distribution over the next state.
    transition: Vec<Vec<f64>>,
    obs_flip_prob: f64,
}

impl StateProcess {
    pub fn new(
        num_states: usize,
        memory: usize,
        transition: Vec<Vec<f64>>,
        obs_flip_prob: f64,
    ) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::InvalidInput("state alphabet must be nonempty".into()));
        }
        if memory == 0 {
            return Err(Error::InvalidInput("memory must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&obs_flip_prob) {
            return Err(Error::InvalidInput(format!(
                "observation flip probability {obs_flip_prob} not in [0, 1)"
            )));
        }
        let rows = num_states.pow(memory as u32 - 1);
        if transition.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: transition.len(),
            });
        }
        for row in &transition {
            if row.len() != num_states {
                return Err(Error::DimensionMismatch {
                    expected: num_states,
                    found: row.len(),
                });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(
                    "transition rows must be nonnegative and sum to 1".into(),
                ));
            }
        }
        Ok(Self {
            num_states,
            memory,
            transition,
            obs_flip_prob,
        })
    }

    /// Every row uniform.
    pub fn uniform(num_states: usize, memory: usize, obs_flip_prob: f64) -> Result<Self> {
        let rows = num_states.max(1).pow(memory.max(1) as u32 - 1);
        let row = vec![1.0 / num_states.max(1) as f64; num_states];
        Self::new(num_states, memory, vec![row; rows], obs_flip_prob)
    }

    /// Rows drawn from a symmetric Dirichlet(`concentration`).
    pub fn random_dirichlet<R: Rng + ?Sized>(
        num_states: usize,
        memory: usize,
        concentration: f64,
        obs_flip_prob: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let gamma = Gamma::new(concentration, 1.0)
            .map_err(|e| Error::InvalidInput(format!("Dirichlet concentration: {e}")))?;
        let rows = num_states.max(1).pow(memory.max(1) as u32 - 1);
        let transition = (0..rows)
            .map(|_| {
                let g: Vec<f64> = (0..num_states).map(|_| gamma.sample(rng)).collect();
                let total: f64 = g.iter().sum();
                g.into_iter().map(|v| v / total).collect()
            })
            .collect();
        Self::new(num_states, memory, transition, obs_flip_prob)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn obs_flip_prob(&self) -> f64 {
        self.obs_flip_prob
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// Row index for `history`; only the last `memory − 1` entries count and
    /// missing leading entries are taken as state 0.
    pub fn row_index(&self, history: &[usize]) -> usize {
        let ctx = self.memory - 1;
        let tail = &history[history.len().saturating_sub(ctx)..];
        let pad = ctx - tail.len();
        std::iter::repeat_n(0, pad)
            .chain(tail.iter().copied())
            .fold(0, |acc, s| acc * self.num_states + s)
    }

    /// Draw the next state given the recent history.
    pub fn step_state<R: Rng + ?Sized>(&self, history: &[usize], rng: &mut R) -> usize {
        let row = &self.transition[self.row_index(history)];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (s, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return s;
            }
        }
        // rounding left u above the final cumulative sum
        row.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    /// Observation of state `s`: `s` with probability `1 − ε`, otherwise
    /// uniform over the remaining states.
    pub fn observe<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        if self.num_states == 1 || u >= self.obs_flip_prob {
            return s;
        }
        let other = rng.random_range(0..self.num_states - 1);
        if other >= s {
            other + 1
        } else {
            other
        }
    }

    /// Simulate `n` steps, returning `(states, observations)`.
    pub fn simulate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
        let mut states = Vec::with_capacity(n);
        let mut obs = Vec::with_capacity(n);
        for _ in 0..n {
            let s = self.step_state(&states, rng);
            states.push(s);
            obs.push(self.observe(s, rng));
        }
        (states, obs)
    }
}

/// Distribution that each track's task parameter and impulse responses are
/// drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDistribution {
    pub mu_star: DVector<f64>,
    pub sigma0_sq: f64,
    pub ir_kernel_scale: f64,
    pub ir_taps: usize,
}

impl TaskDistribution {
    pub fn dim(&self) -> usize {
        self.mu_star.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_sq > 0.0) {
            return Err(Error::InvalidVariance {
                name: "sigma0_sq",
                value: self.sigma0_sq,
            });
        }
        if !(self.ir_kernel_scale > 0.0) || self.ir_taps == 0 {
            return Err(Error::InvalidInput(
                "impulse-response kernel scale and taps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Physical scale of the scene shared by every track.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub target_power: f64,
    pub clutter_power: f64,
    pub noise_power: f64,
    /// Clutter power multiplier per hidden state.
    pub state_gain: Vec<f64>,
    /// Common Doppler shift, in cycles across one pulse.
    pub doppler: f64,
    pub grid_delay: usize,
    pub grid_doppler: usize,
    pub n_samples: usize,
}

/// One cell of the delay-Doppler grid (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetState {
    pub delay_cell: usize,
    pub doppler_cell: usize,
}

/// One track's channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FstcInstance {
    pub theta: DVector<f64>,
    pub target_ir: Vec<Complex64>,
    pub clutter_ir: Vec<Complex64>,
    pub noise_var: f64,
    pub state_gain: Vec<f64>,
    pub doppler: f64,
    pub trajectory: Vec<TargetState>,
    pub grid_delay: usize,
    pub n_samples: usize,
}

/// Factor `F` with `F Fᵀ = K`, `K_ij = exp(−(i−j)²/(2ℓ²)) / taps`.
///
/// Uses an eigendecomposition so the rank-deficient long-scale limit stays
/// well defined.
pub fn gp_factor(taps: usize, scale: f64) -> DMatrix<f64> {
    let k = DMatrix::from_fn(taps, taps, |i, j| {
        let d = i as f64 - j as f64;
        (-d * d / (2.0 * scale * scale)).exp() / taps as f64
    });
    let eig = SymmetricEigen::new(k);
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

/// Zero-mean circular complex GP draw with covariance `F Fᵀ`.
pub fn sample_gp<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> Vec<Complex64> {
    let n = factor.ncols();
    let re = factor * standard_normal_vector(n, rng);
    let im = factor * standard_normal_vector(n, rng);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    re.iter()
        .zip(im.iter())
        .map(|(a, b)| Complex64::new(a * s, b * s))
        .collect()
}

/// Draw one track's channel.
///
/// `θ ~ N(μ*, σ₀²I)`; its first three components set the target, clutter and
/// noise gains through a softplus link.
pub fn draw_instance<R: Rng + ?Sized>(
    task: &TaskDistribution,
    scene: &SceneParams,
    n_cpis: usize,
    rng: &mut R,
) -> Result<FstcInstance> {
    task.validate()?;
    let d = task.dim();
    let theta = &task.mu_star + standard_normal_vector(d, rng) * task.sigma0_sq.sqrt();
    let factor = gp_factor(task.ir_taps, task.ir_kernel_scale);
    let h = sample_gp(&factor, rng);
    let c = sample_gp(&factor, rng);
    let link = |i: usize| theta.get(i).copied().map_or(1.0, softplus);
    let target_gain = (scene.target_power * link(0)).sqrt();
    let clutter_gain = (scene.clutter_power * link(1)).sqrt();
    let noise_var = scene.noise_power * link(2);

    let grid_n = scene.grid_delay.max(1);
    let grid_m = scene.grid_doppler.max(1);
    let mut cell = TargetState {
        delay_cell: rng.random_range(1..=grid_n),
        doppler_cell: rng.random_range(1..=grid_m),
    };
    let mut trajectory = Vec::with_capacity(n_cpis);
    for _ in 0..n_cpis {
        trajectory.push(cell);
        let step = |v: usize, hi: usize, r: &mut R| {
            let dv: i64 = r.random_range(-1..=1);
            (v as i64 + dv).clamp(1, hi as i64) as usize
        };
        cell = TargetState {
            delay_cell: step(cell.delay_cell, grid_n, rng),
            doppler_cell: step(cell.doppler_cell, grid_m, rng),
        };
    }

    Ok(FstcInstance {
        theta,
        target_ir: h.into_iter().map(|v| v * target_gain).collect(),
        clutter_ir: c.into_iter().map(|v| v * clutter_gain).collect(),
        noise_var,
        state_gain: scene.state_gain.clone(),
        doppler: scene.doppler,
        trajectory,
        grid_delay: grid_n,
        n_samples: scene.n_samples,
    })
}

/// Eigenvalues of the matched-filter noise covariance over the averaging
/// window, for unit input noise power.
#[derive(Debug, Clone)]
pub struct NoiseWindow {
    eigenvalues: Vec<f64>,
}

impl NoiseWindow {
    pub fn new(w: &ComplexEnvelope) -> Self {
        let s = w.samples();
        let width = 2 * WINDOW_HALF_WIDTH + 1;
        // R(τ) = Σ conj(w[m]) w[m+τ]
        let r = |tau: isize| -> Complex64 {
            let t = tau.unsigned_abs();
            if t >= s.len() {
                return Complex64::new(0.0, 0.0);
            }
            let v: Complex64 = s[..s.len() - t]
                .iter()
                .zip(&s[t..])
                .map(|(a, b)| a.conj() * b)
                .sum();
            if tau < 0 {
                v.conj()
            } else {
                v
            }
        };
        let cov = DMatrix::from_fn(width, width, |a, b| r(a as isize - b as isize));
        let eig = SymmetricEigen::new(cov);
        Self {
            eigenvalues: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
        }
    }

    /// Draw the window-averaged noise power for input noise variance `var`.
    pub fn sample_power<R: Rng + ?Sized>(&self, var: f64, rng: &mut R) -> f64 {
        let total: f64 = self
            .eigenvalues
            .iter()
            .map(|l| l * rng.sample::<f64, _>(Exp1))
            .sum();
        var * total / self.eigenvalues.len() as f64
    }
}

/// Result of one reception.
#[derive(Debug, Clone)]
pub struct Reception {
    /// Post-matched-filter SINR, linear power ratio, capped at 60 dB.
    pub sinr_post: f64,
    /// Raw received samples before matched filtering.
    pub rx: Vec<Complex64>,
    /// Index of the target peak in the matched-filter output of `rx`.
    pub peak_index: usize,
}

impl Reception {
    pub fn sinr_db(&self) -> f64 {
        to_db(self.sinr_post)
    }
}

/// Deterministic part of the channel for one (instance, waveform) pair.
///
/// Holds the target and clutter echoes and the statistics of their matched
/// filter outputs so repeated receptions only have to add noise.
#[derive(Debug, Clone)]
pub struct ChannelResponse {
    envelope: ComplexEnvelope,
    target_echo: Vec<Complex64>,
    clutter_echo: Vec<Complex64>,
    peak_offset: usize,
    target_peak_power: f64,
    clutter_window_power: f64,
    noise_var: f64,
    state_gain: Vec<f64>,
    noise_window: NoiseWindow,
    front_guard: usize,
    rx_len: usize,
}

fn convolve(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn echo(w: &ComplexEnvelope, ir: &[Complex64], doppler: f64, n_samples: usize) -> Vec<Complex64> {
    let mut e = convolve(w.samples(), ir);
    if doppler != 0.0 {
        let step = 2.0 * std::f64::consts::PI * doppler / n_samples as f64;
        for (t, v) in e.iter_mut().enumerate() {
            *v *= Complex64::from_polar(1.0, step * t as f64);
        }
    }
    e
}

impl ChannelResponse {
    pub fn new(inst: &FstcInstance, w: &ComplexEnvelope) -> Result<Self> {
        Self::with_noise_window(inst, w, NoiseWindow::new(w))
    }

    /// Like [`ChannelResponse::new`] with a precomputed noise window for `w`.
    pub fn with_noise_window(
        inst: &FstcInstance,
        w: &ComplexEnvelope,
        noise_window: NoiseWindow,
    ) -> Result<Self> {
        if inst.target_ir.is_empty() || inst.clutter_ir.is_empty() {
            return Err(Error::EmptyInput);
        }
        let target_echo = echo(w, &inst.target_ir, inst.doppler, inst.n_samples);
        let clutter_echo = echo(w, &inst.clutter_ir, inst.doppler, inst.n_samples);
        let y_t = correlate(w.samples(), &target_echo)?;
        let y_c = correlate(w.samples(), &clutter_echo)?;
        let (peak_offset, target_peak_power) = y_t
            .iter()
            .map(|v| v.norm_sqr())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| {
                if p > best.1 {
                    (i, p)
                } else {
                    best
                }
            });
        let clutter_window_power = window_power(&y_c, peak_offset);

        if w.len() > inst.n_samples {
            return Err(Error::InvalidInput(format!(
                "envelope of {} samples exceeds the configured {}",
                w.len(),
                inst.n_samples
            )));
        }
        // fixed across waveforms so every reception consumes the same draws
        let front_guard = inst.n_samples + WINDOW_HALF_WIDTH;
        let taps = inst.target_ir.len().max(inst.clutter_ir.len());
        let rx_len =
            front_guard + inst.grid_delay + 2 * inst.n_samples + taps + WINDOW_HALF_WIDTH;
        Ok(Self {
            envelope: w.clone(),
            target_echo,
            clutter_echo,
            peak_offset,
            target_peak_power,
            clutter_window_power,
            noise_var: inst.noise_var,
            state_gain: inst.state_gain.clone(),
            noise_window,
            front_guard,
            rx_len,
        })
    }

    pub fn target_peak_power(&self) -> f64 {
        self.target_peak_power
    }

    /// Window-averaged clutter power at the target peak, before state gain.
    pub fn clutter_window_power(&self) -> f64 {
        self.clutter_window_power
    }

    fn gain(&self, state: usize) -> f64 {
        self.state_gain.get(state).copied().unwrap_or(1.0)
    }

    fn sinr_from(&self, state: usize, noise_power: f64) -> f64 {
        let interference = self.gain(state) * self.clutter_window_power + noise_power;
        if interference <= 0.0 {
            return SINR_CAP;
        }
        (self.target_peak_power / interference).min(SINR_CAP)
    }

    /// Number of receive samples; independent of the waveform.
    pub fn rx_len(&self) -> usize {
        self.rx_len
    }

    fn echo_start(&self, cell: TargetState) -> usize {
        self.front_guard + cell.delay_cell.saturating_sub(1)
    }

    fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Complex64> {
        let s = (self.noise_var / 2.0).sqrt();
        (0..self.rx_len)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re * s, im * s)
            })
            .collect()
    }

    /// Average `|MF(noise)|²` over the window around MF output index `peak`.
    fn noise_window_power(&self, noise: &[Complex64], peak: usize) -> f64 {
        let w = self.envelope.samples();
        let lw = w.len();
        let lo = peak - WINDOW_HALF_WIDTH;
        let hi = peak + WINDOW_HALF_WIDTH;
        let total: f64 = (lo..=hi)
            .map(|i| {
                let start = i + 1 - lw;
                noise[start..=i]
                    .iter()
                    .zip(w)
                    .map(|(n, s)| n * s.conj())
                    .sum::<Complex64>()
                    .norm_sqr()
            })
            .sum();
        total / (hi - lo + 1) as f64
    }

    /// SINR of one reception; consumes exactly the same random draws as
    /// [`ChannelResponse::receive`] and returns the identical value.
    pub fn sinr<R: Rng + ?Sized>(&self, state: usize, cell: TargetState, rng: &mut R) -> f64 {
        let noise = self.draw_noise(rng);
        let peak = self.echo_start(cell) + self.peak_offset;
        self.sinr_from(state, self.noise_window_power(&noise, peak))
    }

    /// Full reception including the raw receive buffer.
    pub fn receive<R: Rng + ?Sized>(
        &self,
        state: usize,
        cell: TargetState,
        rng: &mut R,
    ) -> Reception {
        let noise = self.draw_noise(rng);
        let start = self.echo_start(cell);
        let peak = start + self.peak_offset;
        let sinr_post = self.sinr_from(state, self.noise_window_power(&noise, peak));
        let g = self.gain(state).sqrt();
        let mut rx = noise;
        for (i, v) in self.target_echo.iter().enumerate() {
            rx[start + i] += v;
        }
        for (i, v) in self.clutter_echo.iter().enumerate() {
            rx[start + i] += v * g;
        }
        Reception {
            sinr_post,
            rx,
            peak_index: peak,
        }
    }

    /// SINR draw with the noise power sampled from its exact distribution
    /// (a weighted sum of exponentials) instead of a full noise vector.
    pub fn sample_sinr_fast<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> f64 {
        let noise = self.noise_window.sample_power(self.noise_var, rng);
        self.sinr_from(state, noise)
    }

    /// Monte Carlo mean loss under `state` over `draws` noise realizations.
    pub fn expected_loss<R: Rng + ?Sized>(
        &self,
        state: usize,
        sinr_target: f64,
        draws: usize,
        rng: &mut R,
    ) -> f64 {
        let draws = draws.max(1);
        let total: f64 = (0..draws)
            .map(|_| compute_loss(self.sample_sinr_fast(state, rng), sinr_target))
            .sum();
        total / draws as f64
    }
}

fn window_power(y: &[Complex64], center: usize) -> f64 {
    let width = 2 * WINDOW_HALF_WIDTH + 1;
    let lo = center as isize - WINDOW_HALF_WIDTH as isize;
    let total: f64 = (0..width as isize)
        .map(|k| lo + k)
        .filter(|&i| i >= 0 && (i as usize) < y.len())
        .map(|i| y[i as usize].norm_sqr())
        .sum();
    total / width as f64
}

/// Receive waveform `w` through `inst` while the scene is in `state` and the
/// target sits in `cell`.
pub fn receive<R: Rng + ?Sized>(
    inst: &FstcInstance,
    state: usize,
    cell: TargetState,
    w: &ComplexEnvelope,
    rng: &mut R,
) -> Result<Reception> {
    Ok(ChannelResponse::new(inst, w)?.receive(state, cell, rng))
}
