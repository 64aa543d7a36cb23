//! Classical control-channel latency.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default metro latency model: median 10 ms with a tail reaching a few tens
/// of milliseconds.
pub const DEFAULT_LOGNORMAL_MEDIAN_S: f64 = 0.010;
pub const DEFAULT_LOGNORMAL_SIGMA: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyModel {
    /// Fixed one-way delay. Zero is accepted as a degenerate test mode.
    Constant { seconds: f64 },
    /// `ln(delay / 1 s) ~ N(mu, sigma²)`.
    Lognormal { mu: f64, sigma: f64 },
    /// Inverse-CDF sampling over sorted samples with linear interpolation.
    Empirical { samples_s: Vec<f64> },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Lognormal { mu: DEFAULT_LOGNORMAL_MEDIAN_S.ln(), sigma: DEFAULT_LOGNORMAL_SIGMA }
    }
}

impl LatencyModel {
    pub fn constant(seconds: f64) -> Self {
        LatencyModel::Constant { seconds }
    }

    /// Builds an empirical model; samples are sorted here.
    pub fn empirical(mut samples_s: Vec<f64>) -> Result<Self> {
        samples_s.sort_by(f64::total_cmp);
        let m = LatencyModel::Empirical { samples_s };
        m.validate()?;
        Ok(m)
    }

    /// Reads one latency in milliseconds per line; `#` starts a comment.
    pub fn load_samples_ms(path: &Path) -> Result<Vec<f64>> {
        let text = std::fs::read_to_string(path)?;
        parse_samples_ms(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LatencyModel::Constant { seconds } => {
                if !(*seconds >= 0.0 && seconds.is_finite()) {
                    return Err(Error::Config(format!("constant latency must be >= 0, got {seconds}")));
                }
            }
            LatencyModel::Lognormal { mu, sigma } => {
                if !mu.is_finite() || !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(format!("invalid lognormal parameters mu={mu} sigma={sigma}")));
                }
            }
            LatencyModel::Empirical { samples_s } => {
                if samples_s.is_empty() {
                    return Err(Error::Config("empirical latency sample set is empty".into()));
                }
                if let Some(bad) = samples_s.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
                    return Err(Error::Config(format!("empirical latency samples must be > 0, got {bad}")));
                }
                if samples_s.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::Config("empirical latency samples must be sorted".into()));
                }
            }
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LatencyModel::Constant { seconds } => *seconds,
            LatencyModel::Lognormal { mu, sigma } => {
                LogNormal::new(*mu, *sigma).expect("validated lognormal").sample(rng)
            }
            LatencyModel::Empirical { samples_s } => inverse_cdf(samples_s, rng.random::<f64>()),
        }
    }
}

fn inverse_cdf(sorted: &[f64], u: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = u * (sorted.len() - 1) as f64;
    let i = (pos.floor() as usize).min(sorted.len() - 2);
    let frac = pos - i as f64;
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

pub fn parse_samples_ms(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ms: f64 = line
            .parse()
            .map_err(|_| Error::Config(format!("latency samples line {}: cannot parse {line:?}", n + 1)))?;
        out.push(ms / 1000.0);
    }
    if out.is_empty() {
        return Err(Error::Config("empirical latency sample set is empty".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionPolicy {
    /// Independent draw for every message.
    Iid,
    /// One draw per entanglement id, shared by every message about that id in
    /// both directions.
    #[default]
    MaxShared,
}

/// Assigns delays to control messages for one run.
#[derive(Debug, Clone)]
pub struct LatencySampler {
    model: LatencyModel,
    policy: DirectionPolicy,
    seed: u64,
    iid_rng: ChaCha8Rng,
}

impl LatencySampler {
    pub fn new(model: LatencyModel, policy: DirectionPolicy, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(LatencySampler { model, policy, seed, iid_rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn policy(&self) -> DirectionPolicy {
        self.policy
    }

    pub fn model(&self) -> &LatencyModel {
        &self.model
    }

    /// Delay in seconds for a message about entanglement id `id`.
    pub fn delay_for(&mut self, id: u64) -> f64 {
        match self.policy {
            DirectionPolicy::Iid => self.model.draw(&mut self.iid_rng),
            DirectionPolicy::MaxShared => {
                // A dedicated stream per id makes the draw a pure function of (seed, id).
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(id);
                self.model.draw(&mut rng)
            }
        }
    }
}

pub fn draw_latency<R: Rng + ?Sized>(model: &LatencyModel, rng: &mut R) -> Result<f64> {
    model.validate()?;
    Ok(model.draw(rng))
}
