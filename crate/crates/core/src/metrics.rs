//! Run statistics and the experiment drivers built on top of the engine.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decoherence::{
    closed_form_fidelity, max_tolerable_latency, timeout_from_threshold, DephasingConvention, LatencyBudget,
    MemoryTechnology,
};
use crate::engine::{run, RunConfig};
use crate::error::{Error, Result};
use crate::latency::LatencyModel;
use crate::protocol::NodeCounters;

/// Fidelity commonly quoted as the minimum for QKD.
pub const QKD_FIDELITY_THRESHOLD: f64 = 0.81;

/// How every emitted pair ended up. The fields partition the emitted pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    /// Consumed at both nodes.
    pub verified: u64,
    /// Photon missing on at least one arm.
    pub lost: u64,
    /// Dropped or evicted because a buffer was full.
    pub overflow: u64,
    /// Both photons stored but discarded before verification completed.
    pub timed_out: u64,
    /// Consumed at exactly one node. Always zero unless the protocol is broken.
    pub one_sided: u64,
    /// Unresolved when the run stopped.
    pub in_flight: u64,
}

impl OutcomeCounts {
    pub fn total(&self) -> u64 {
        self.verified + self.lost + self.overflow + self.timed_out + self.one_sided + self.in_flight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MessageCounts {
    pub announce: u64,
    pub discard_notify: u64,
    pub gap_discard: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityStats {
    pub count: u64,
    pub sum: f64,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub bin_width: f64,
    /// Counts per bin `[k·w, (k+1)·w)`; the last bin is closed at 1.
    pub histogram: Vec<u64>,
}

impl FidelityStats {
    pub fn new(bin_width: f64) -> Self {
        let bins = (1.0 / bin_width).ceil() as usize;
        FidelityStats { count: 0, sum: 0.0, mean: None, min: None, max: None, bin_width, histogram: vec![0; bins] }
    }

    pub fn record(&mut self, f: f64) {
        self.count += 1;
        self.sum += f;
        self.mean = Some(self.sum / self.count as f64);
        self.min = Some(self.min.map_or(f, |m| m.min(f)));
        self.max = Some(self.max.map_or(f, |m| m.max(f)));
        let bin = ((f / self.bin_width).floor().max(0.0) as usize).min(self.histogram.len() - 1);
        self.histogram[bin] += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub name: String,
    pub counters: NodeCounters,
    /// Time-weighted over the emission window.
    pub mean_occupancy: f64,
    pub max_occupancy: u32,
    /// Digest of the set of consumed ids, for cross-node comparison.
    pub consumed_ids_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub duration_s: f64,
    pub timeout_s: f64,
    pub emitted: u64,
    pub outcomes: OutcomeCounts,
    /// Verified pairs per simulated second of emission.
    pub verified_rate_hz: f64,
    /// Both nodes consumed exactly the same ids.
    pub agreement: bool,
    pub fidelity: FidelityStats,
    pub messages_sent: MessageCounts,
    pub messages_delivered: MessageCounts,
    pub nodes: Vec<NodeReport>,
    pub config: RunConfig,
}

impl RunReport {
    pub fn conservation_holds(&self) -> bool {
        self.outcomes.total() == self.emitted
    }

    pub fn discards_total(&self) -> u64 {
        self.nodes
            .iter()
            .map(|n| {
                let c = &n.counters;
                c.discarded_timeout + c.discarded_gap + c.discarded_notified + c.discarded_overflow
            })
            .sum()
    }

    pub fn summary_row(&self) -> RunSummaryRow {
        let node = |i: usize| self.nodes.get(i);
        RunSummaryRow {
            seed: self.seed,
            duration_s: self.duration_s,
            timeout_s: self.timeout_s,
            emitted: self.emitted,
            verified: self.outcomes.verified,
            lost: self.outcomes.lost,
            overflow: self.outcomes.overflow,
            timed_out: self.outcomes.timed_out,
            one_sided: self.outcomes.one_sided,
            in_flight: self.outcomes.in_flight,
            verified_rate_hz: self.verified_rate_hz,
            fidelity_mean: self.fidelity.mean,
            fidelity_min: self.fidelity.min,
            mean_occupancy_a: node(0).map_or(0.0, |n| n.mean_occupancy),
            max_occupancy_a: node(0).map_or(0, |n| n.max_occupancy),
            mean_occupancy_b: node(1).map_or(0.0, |n| n.mean_occupancy),
            max_occupancy_b: node(1).map_or(0, |n| n.max_occupancy),
            announce: self.messages_sent.announce,
            discard_notify: self.messages_sent.discard_notify,
            gap_discard: self.messages_sent.gap_discard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryRow {
    pub seed: u64,
    pub duration_s: f64,
    pub timeout_s: f64,
    pub emitted: u64,
    pub verified: u64,
    pub lost: u64,
    pub overflow: u64,
    pub timed_out: u64,
    pub one_sided: u64,
    pub in_flight: u64,
    pub verified_rate_hz: f64,
    pub fidelity_mean: Option<f64>,
    pub fidelity_min: Option<f64>,
    pub mean_occupancy_a: f64,
    pub max_occupancy_a: u32,
    pub mean_occupancy_b: f64,
    pub max_occupancy_b: u32,
    pub announce: u64,
    pub discard_notify: u64,
    pub gap_discard: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurveRow {
    pub technology: String,
    pub t_s: f64,
    pub fidelity: f64,
}

/// Fidelity of a pair idling for `t` in both memories, per grid point.
pub fn fidelity_curve(
    tech: &MemoryTechnology,
    convention: DephasingConvention,
    t_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if t_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Argument("time grid must be sorted".into()));
    }
    t_grid
        .iter()
        .map(|&t| {
            if !(t >= 0.0) {
                return Err(Error::Argument(format!("time grid values must be >= 0, got {t}")));
            }
            Ok((t, closed_form_fidelity(t, t, tech, convention)?))
        })
        .collect()
}

/// Fidelity curves for several technologies as CSV rows.
pub fn fidelity_curve_rows(
    techs: &[MemoryTechnology],
    convention: DephasingConvention,
    t_grid: &[f64],
) -> Result<Vec<FidelityCurveRow>> {
    let mut rows = Vec::with_capacity(techs.len() * t_grid.len());
    for tech in techs {
        for (t_s, fidelity) in fidelity_curve(tech, convention, t_grid)? {
            rows.push(FidelityCurveRow { technology: tech.name.clone(), t_s, fidelity });
        }
    }
    Ok(rows)
}

/// `n` evenly spaced points on `[0, t_max]`.
pub fn linear_grid(t_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect(),
    }
}

/// The same latency model shape moved to a new median.
pub fn with_median_latency(model: &LatencyModel, median_s: f64) -> Result<LatencyModel> {
    match model {
        LatencyModel::Constant { .. } => Ok(LatencyModel::constant(median_s)),
        LatencyModel::Lognormal { sigma, .. } => {
            if !(median_s > 0.0) {
                return Err(Error::Argument(format!("lognormal median must be > 0, got {median_s}")));
            }
            Ok(LatencyModel::Lognormal { mu: median_s.ln(), sigma: *sigma })
        }
        LatencyModel::Empirical { samples_s } => {
            let mid = samples_s.len() / 2;
            let median =
                if samples_s.len() % 2 == 1 { samples_s[mid] } else { 0.5 * (samples_s[mid - 1] + samples_s[mid]) };
            let k = median_s / median;
            LatencyModel::empirical(samples_s.iter().map(|s| s * k).collect())
        }
    }
}

/// How the runs of a sweep are seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSeeding {
    /// Every run reuses the master seed, so runs differ only in the swept
    /// parameter and trends are free of sampling noise.
    #[default]
    Common,
    /// Run `i` uses an independent seed derived from `(master, i)`.
    PerRun,
}

impl SweepSeeding {
    pub fn seed(self, master: u64, index: u64) -> u64 {
        match self {
            SweepSeeding::Common => master,
            SweepSeeding::PerRun => sweep_seed(master, index),
        }
    }
}

/// Seed of the `index`-th run of a sweep keyed by `master`.
pub fn sweep_seed(master: u64, index: u64) -> u64 {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index.wrapping_add(1 << 32));
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSweepRow {
    pub latency_s: f64,
    pub node_pair: String,
    pub node: String,
    pub mean_occupancy: f64,
    pub max_occupancy: u32,
}

/// Occupancy per node versus classical latency, for each node-pair template.
///
/// Runs execute in parallel; run `i` counts in pair-major order.
pub fn buffer_sweep(
    templates: &[RunConfig],
    latencies_s: &[f64],
    seeding: SweepSeeding,
) -> Result<Vec<BufferSweepRow>> {
    if latencies_s.len() < 2 {
        return Err(Error::Argument("buffer sweep needs at least two latency points".into()));
    }
    let jobs: Vec<(usize, &RunConfig, f64)> = templates
        .iter()
        .flat_map(|t| latencies_s.iter().map(move |&l| (t, l)))
        .enumerate()
        .map(|(i, (t, l))| (i, t, l))
        .collect();
    let reports: Vec<Result<(f64, RunReport)>> = jobs
        .par_iter()
        .map(|&(i, template, latency)| {
            let mut cfg = template.clone();
            cfg.latency = with_median_latency(&template.latency, latency)?;
            cfg.seed = seeding.seed(template.seed, i as u64);
            Ok((latency, run(&cfg)?))
        })
        .collect();
    let mut rows = Vec::new();
    for r in reports {
        let (latency_s, report) = r?;
        let pair = format!("{}-{}", report.config.arms[0].node, report.config.arms[1].node);
        for n in &report.nodes {
            rows.push(BufferSweepRow {
                latency_s,
                node_pair: pair.clone(),
                node: n.name.clone(),
                mean_occupancy: n.mean_occupancy,
                max_occupancy: n.max_occupancy,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweepRow {
    pub f_th: f64,
    pub timeout_s: f64,
    /// Empty when any latency is tolerable.
    pub max_tolerable_latency_s: Option<f64>,
    pub verified: u64,
    pub verified_rate_hz: f64,
}

/// Verified-pair rate as the fidelity threshold (and with it the timeout)
/// varies. Any timeout override in the template is ignored.
pub fn rate_vs_timeout(template: &RunConfig, thresholds: &[f64], seeding: SweepSeeding) -> Result<Vec<RateSweepRow>> {
    for &f in thresholds {
        if !(f > 0.5 && f <= 1.0) {
            return Err(Error::Domain(format!("fidelity threshold must lie in (0.5, 1], got {f}")));
        }
    }
    thresholds
        .par_iter()
        .enumerate()
        .map(|(i, &f_th)| {
            let mut cfg = template.clone();
            cfg.f_th = f_th;
            cfg.timeout_override_s = None;
            cfg.seed = seeding.seed(template.seed, i as u64);
            let timeout_s = timeout_from_threshold(f_th, &cfg.technology)?;
            let budget = max_tolerable_latency(f_th, &cfg.technology, cfg.arrival_skew_s(), cfg.convention)?;
            let report = run(&cfg)?;
            Ok(RateSweepRow {
                f_th,
                timeout_s,
                max_tolerable_latency_s: match budget {
                    LatencyBudget::Bounded(s) => Some(s),
                    LatencyBudget::AlwaysSatisfiable => None,
                },
                verified: report.outcomes.verified,
                verified_rate_hz: report.verified_rate_hz,
            })
        })
        .collect()
}

/// `<experiment>-<timestamp>-<seed>.csv`
pub fn output_file_name(experiment: &str, timestamp: &str, seed: u64) -> String {
    format!("{experiment}-{timestamp}-{seed}.csv")
}

pub fn write_csv<T: Serialize, W: Write>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned, R: Read>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_csv_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv(File::create(path)?, rows)
}

pub fn read_csv_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_csv(File::open(path)?)
}

/// Summary written next to each experiment CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub experiment: String,
    pub generated_at: String,
    pub seed: u64,
    pub csv_file: String,
    /// Extra experiment-specific values, e.g. the QKD reference line.
    pub metadata: serde_json::Value,
    /// Everything needed to reproduce the outputs.
    pub config: serde_json::Value,
}

impl SweepSummary {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<SweepSummary> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
