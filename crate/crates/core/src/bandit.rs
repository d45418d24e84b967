//! Per-track Thompson-sampling learner.
//!
//! Losses are quality scores in `[0, 1]` (1 = target SINR met) and the agent
//! picks the waveform maximizing `⟨φ, θ⟩` for a posterior draw of `θ`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussmath::{blr_update, Gaussian, LinearPosterior};

/// Dimension of the loss-statistics context.
pub const CONTEXT_DIM: usize = 3;

/// Context used for a (waveform, observation) pair with no history:
/// mean and max of a uniform belief on `[0, 1]`, variance `1/12`.
pub const COLD_START: [f64; CONTEXT_DIM] = [0.5, 1.0 / 12.0, 0.5];

/// `min{max{sinr_post / sinr_target, 0}, 1}` on linear power ratios.
pub fn compute_loss(sinr_post: f64, sinr_target: f64) -> f64 {
    let ratio = sinr_post / sinr_target;
    if ratio.is_nan() {
        return 0.0;
    }
    ratio.clamp(0.0, 1.0)
}

/// Feature vector for one (waveform, observation) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextVector(pub [f64; CONTEXT_DIM]);

impl ContextVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, theta: &[f64]) -> f64 {
        self.0.iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        ContextVector(self.0.map(|v| v * c))
    }
}

/// Running loss statistics for one (waveform, observation) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairStats {
    pub count: usize,
    pub mean: f64,
    pub m2: f64,
    pub max: f64,
}

impl PairStats {
    /// Welford update.
    pub fn push(&mut self, loss: f64) {
        self.count += 1;
        let delta = loss - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (loss - self.mean);
        self.max = if self.count == 1 { loss } else { self.max.max(loss) };
    }

    /// `(mean, population variance, max)`; cold-start fill with no data and
    /// the fill variance with a single sample.
    pub fn context(&self) -> ContextVector {
        match self.count {
            0 => ContextVector(COLD_START),
            1 => ContextVector([self.mean, COLD_START[1], self.max]),
            n => ContextVector([self.mean, self.m2 / n as f64, self.max]),
        }
    }
}

/// One CPI of a track's history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub cpi: usize,
    pub observation: usize,
    pub waveform: usize,
    pub loss: f64,
    /// Context that drove the decision; also the regressor of the update.
    pub context: ContextVector,
}

/// Outcome of a waveform selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub waveform: usize,
    pub context: ContextVector,
}

/// Thompson-sampling agent for one track.
#[derive(Debug, Clone)]
pub struct TsAgent {
    posterior: LinearPosterior,
    num_waveforms: usize,
    num_observations: usize,
    stats: Vec<PairStats>,
    history: Vec<HistoryEntry>,
}

impl TsAgent {
    pub fn new(
        prior: &Gaussian,
        noise_var: f64,
        num_waveforms: usize,
        num_observations: usize,
    ) -> Result<Self> {
        if prior.dim() != CONTEXT_DIM {
            return Err(Error::DimensionMismatch {
                expected: CONTEXT_DIM,
                found: prior.dim(),
            });
        }
        if num_waveforms == 0 || num_observations == 0 {
            return Err(Error::InvalidInput(
                "agent needs at least one waveform and one observation".into(),
            ));
        }
        Ok(Self {
            posterior: LinearPosterior::from_prior(prior, noise_var)?,
            num_waveforms,
            num_observations,
            stats: vec![PairStats::default(); num_waveforms * num_observations],
            history: Vec::new(),
        })
    }

    pub fn posterior(&self) -> &LinearPosterior {
        &self.posterior
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn num_waveforms(&self) -> usize {
        self.num_waveforms
    }

    fn slot(&self, observation: usize, waveform: usize) -> Result<usize> {
        if waveform >= self.num_waveforms {
            return Err(Error::IndexOutOfRange {
                index: waveform,
                len: self.num_waveforms,
            });
        }
        if observation >= self.num_observations {
            return Err(Error::IndexOutOfRange {
                index: observation,
                len: self.num_observations,
            });
        }
        Ok(waveform * self.num_observations + observation)
    }

    pub fn stats(&self, observation: usize, waveform: usize) -> Result<&PairStats> {
        Ok(&self.stats[self.slot(observation, waveform)?])
    }

    /// Loss-statistics context for `(waveform, observation)`.
    pub fn build_context(&self, observation: usize, waveform: usize) -> Result<ContextVector> {
        Ok(self.stats(observation, waveform)?.context())
    }

    /// Contexts of every waveform under `observation`.
    pub fn contexts(&self, observation: usize) -> Result<Vec<ContextVector>> {
        (0..self.num_waveforms)
            .map(|w| self.build_context(observation, w))
            .collect()
    }

    /// Sample `θ` and return the first index maximizing `⟨φ_i, θ⟩`.
    pub fn select_with_contexts<R: Rng + ?Sized>(
        &self,
        contexts: &[ContextVector],
        rng: &mut R,
    ) -> Result<usize> {
        if contexts.len() != self.num_waveforms {
            return Err(Error::DimensionMismatch {
                expected: self.num_waveforms,
                found: contexts.len(),
            });
        }
        let theta = self.posterior.sample(rng)?;
        Ok(argmax_first(contexts.iter().map(|c| c.dot(theta.as_slice()))))
    }

    /// Thompson-sampling decision using the agent's own loss statistics.
    pub fn select_waveform<R: Rng + ?Sized>(
        &self,
        observation: usize,
        rng: &mut R,
    ) -> Result<Decision> {
        let contexts = self.contexts(observation)?;
        let waveform = self.select_with_contexts(&contexts, rng)?;
        Ok(Decision {
            waveform,
            context: contexts[waveform],
        })
    }

    /// Fold one CPI into the statistics and the posterior.
    pub fn record(&mut self, entry: HistoryEntry) -> Result<()> {
        if !(0.0..=1.0).contains(&entry.loss) {
            return Err(Error::InvalidInput(format!("loss {} outside [0, 1]", entry.loss)));
        }
        let slot = self.slot(entry.observation, entry.waveform)?;
        self.posterior = blr_update(&self.posterior, entry.context.as_slice(), entry.loss)?;
        self.stats[slot].push(entry.loss);
        self.history.push(entry);
        Ok(())
    }
}

/// Index of the first maximum; NaN never wins.
pub fn argmax_first(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// `clamp(⟨θ, φ⟩ + N(0, noise_var), 0, 1)`. Always consumes one normal draw.
pub fn synthetic_loss<R: Rng + ?Sized>(
    theta: &[f64],
    phi: &ContextVector,
    noise_var: f64,
    rng: &mut R,
) -> Result<f64> {
    if theta.len() != CONTEXT_DIM {
        return Err(Error::DimensionMismatch {
            expected: CONTEXT_DIM,
            found: theta.len(),
        });
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok((phi.dot(theta) + noise_var.max(0.0).sqrt() * z).clamp(0.0, 1.0))
}
