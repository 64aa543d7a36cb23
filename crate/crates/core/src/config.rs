//! TOML run and sweep configuration, including the shipped presets.
//!
//! Unknown keys are rejected everywhere so a misspelt parameter cannot
//! silently fall back to its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoherence::{lookup_technology, DephasingConvention, MemoryTechnology};
use crate::engine::{ArmSpec, RunConfig, StopCondition, FULL_SCALE_SOURCE_RATE_HZ};
use crate::error::{Error, Result};
use crate::latency::{DirectionPolicy, LatencyModel, DEFAULT_LOGNORMAL_MEDIAN_S, DEFAULT_LOGNORMAL_SIGMA};
use crate::metrics::SweepSeeding;
use crate::protocol::OverflowPolicy;
use crate::topology::{FiberLink, NodeKind, NodeSpec, Topology, SIGNAL_SPEED_KM_PER_S};

pub const PRESETS: [&str; 2] = ["desk-scale", "paper-full"];

/// Sections or keys left out of a file take their desk-scale values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub source: SourceSection,
    pub run: RunSection,
    pub memory: MemorySection,
    pub latency: LatencySection,
    pub protocol: ProtocolSection,
    pub topology: TopologySection,
    pub scaling: ScalingSection,
    pub sweep: SweepSection,
    /// Directory that relative paths are resolved against. Not serialized.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub rate_hz: f64,
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection { rate_hz: 10_000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Emission window; ignored when `pairs` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<u64>,
    #[serde(default = "yes")]
    pub drain: bool,
    #[serde(default = "default_bin_width")]
    pub histogram_bin_width: f64,
}

fn yes() -> bool {
    true
}

fn default_bin_width() -> f64 {
    0.01
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { duration_s: Some(1.0), pairs: None, drain: true, histogram_bin_width: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySection {
    /// Catalog key, or any label when `t1_s` and `t2_s` are both given.
    pub technology: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t1_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t2_s: Option<f64>,
    #[serde(default)]
    pub convention: DephasingConvention,
    #[serde(default = "default_f_th")]
    pub f_th: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u32>,
    #[serde(default)]
    pub overflow: OverflowPolicy,
}

fn default_f_th() -> f64 {
    0.81
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection {
            technology: "ca40-ion".into(),
            t1_s: None,
            t2_s: None,
            convention: DephasingConvention::default(),
            f_th: 0.81,
            timeout_s: None,
            capacity: None,
            overflow: OverflowPolicy::default(),
        }
    }
}

impl MemorySection {
    pub fn resolve_technology(&self) -> Result<MemoryTechnology> {
        match (self.t1_s, self.t2_s) {
            (Some(t1), Some(t2)) => MemoryTechnology::new(self.technology.clone(), t1, t2),
            (None, None) => lookup_technology(&self.technology)
                .ok_or_else(|| Error::Config(format!("unknown memory technology {:?}", self.technology))),
            _ => Err(Error::Config("memory.t1_s and memory.t2_s must be given together".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyKind {
    Constant,
    Lognormal,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySection {
    pub model: LatencyKind,
    /// Constant delay.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    /// Lognormal median.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Inline empirical samples in milliseconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_ms: Option<Vec<f64>>,
    /// File with one millisecond sample per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_file: Option<PathBuf>,
    #[serde(default)]
    pub policy: DirectionPolicy,
}

impl Default for LatencySection {
    fn default() -> Self {
        LatencySection {
            model: LatencyKind::Lognormal,
            seconds: None,
            median_s: Some(DEFAULT_LOGNORMAL_MEDIAN_S),
            sigma: Some(DEFAULT_LOGNORMAL_SIGMA),
            samples_ms: None,
            samples_file: None,
            policy: DirectionPolicy::default(),
        }
    }
}

impl LatencySection {
    pub fn constant(seconds: f64) -> Self {
        LatencySection {
            model: LatencyKind::Constant,
            seconds: Some(seconds),
            median_s: None,
            sigma: None,
            ..Default::default()
        }
    }

    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<LatencyModel> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| Error::Config(format!("latency.{key} is required for the {:?} model", self.model)))
        };
        let model = match self.model {
            LatencyKind::Constant => LatencyModel::constant(need(self.seconds, "seconds")?),
            LatencyKind::Lognormal => {
                let median = need(self.median_s, "median_s")?;
                if !(median > 0.0) {
                    return Err(Error::Config(format!("latency.median_s must be > 0, got {median}")));
                }
                LatencyModel::Lognormal { mu: median.ln(), sigma: need(self.sigma, "sigma")? }
            }
            LatencyKind::Empirical => {
                let samples_ms = match (&self.samples_ms, &self.samples_file) {
                    (Some(s), None) => s.iter().map(|ms| ms / 1000.0).collect(),
                    (None, Some(f)) => {
                        let path = match base_dir {
                            Some(d) if f.is_relative() => d.join(f),
                            _ => f.clone(),
                        };
                        LatencyModel::load_samples_ms(&path)?
                    }
                    _ => {
                        return Err(Error::Config(
                            "empirical latency needs exactly one of latency.samples_ms or latency.samples_file".into(),
                        ))
                    }
                };
                LatencyModel::empirical(samples_ms)?
            }
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub header_loss_detection: bool,
    /// Defaults to the arrival skew of the pair.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_guard_s: Option<f64>,
    pub gap_batching: bool,
    pub partner_deadline_check: bool,
    pub prune_factor: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            header_loss_detection: true,
            gap_guard_s: None,
            gap_batching: false,
            partner_deadline_check: true,
            prune_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: String,
    pub kind: NodeKind,
    /// Defaults to the standard loss for the node kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub insertion_loss_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    #[serde(default = "default_speed")]
    pub signal_speed_km_per_s: f64,
    /// Entangling-node pair used by single runs.
    pub pair: [String; 2],
    pub nodes: Vec<NodeEntry>,
    pub links: Vec<FiberLink>,
}

fn default_speed() -> f64 {
    SIGNAL_SPEED_KM_PER_S
}

impl Default for TopologySection {
    /// Source feeding two routing branches. C and E sit one routing node
    /// away from the source, B and D two.
    fn default() -> Self {
        let node = |id: &str, kind| NodeEntry { id: id.into(), kind, insertion_loss_db: None };
        let link = |a: &str, b: &str, km| FiberLink::new(a, b, km);
        TopologySection {
            signal_speed_km_per_s: SIGNAL_SPEED_KM_PER_S,
            pair: ["C".into(), "E".into()],
            nodes: vec![
                node("S", NodeKind::Source),
                node("R1", NodeKind::Intermediate),
                node("R2", NodeKind::Intermediate),
                node("R3", NodeKind::Intermediate),
                node("R4", NodeKind::Intermediate),
                node("B", NodeKind::Entangling),
                node("C", NodeKind::Entangling),
                node("D", NodeKind::Entangling),
                node("E", NodeKind::Entangling),
            ],
            links: vec![
                link("S", "R1", 20.0),
                link("S", "R2", 22.0),
                link("R1", "C", 25.0),
                link("R2", "E", 25.0),
                link("R1", "R3", 10.0),
                link("R2", "R4", 10.0),
                link("R3", "B", 10.0),
                link("R4", "D", 12.0),
            ],
        }
    }
}

impl TopologySection {
    pub fn build(&self) -> Result<Topology> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut spec = NodeSpec::new(n.id.clone(), n.kind);
                if let Some(l) = n.insertion_loss_db {
                    spec.insertion_loss_db = l;
                }
                spec
            })
            .collect();
        Topology::new(nodes, self.links.clone(), self.signal_speed_km_per_s)
    }
}

/// Explicit knobs that move a run away from the physical loss budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    /// Multiplies every path loss in dB.
    pub loss_db_factor: f64,
    /// Replaces the per-arm survival probabilities outright.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arm_survival: Option<[f64; 2]>,
}

impl Default for ScalingSection {
    fn default() -> Self {
        ScalingSection { loss_db_factor: 1.0, arm_survival: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Latency medians for the buffer sweep.
    pub latencies_s: Vec<f64>,
    /// Node pairs for the buffer sweep; defaults to the run pair.
    pub pairs: Vec<[String; 2]>,
    /// Fidelity thresholds for the rate sweep.
    pub thresholds: Vec<f64>,
    /// Catalog keys for the fidelity curve; empty means the whole catalog.
    pub technologies: Vec<String>,
    pub t_max_s: f64,
    pub t_points: usize,
    pub seeding: SweepSeeding,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            latencies_s: vec![0.002, 0.005, 0.010, 0.020, 0.040],
            pairs: vec![["C".into(), "E".into()], ["B".into(), "D".into()]],
            thresholds: vec![0.6, 0.7, 0.81, 0.9, 0.95, 0.99],
            technologies: Vec::new(),
            t_max_s: 1.0,
            t_points: 101,
            seeding: SweepSeeding::Common,
        }
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::preset("desk-scale").expect("built-in preset")
    }
}

impl SimConfig {
    /// Built-in configurations: `desk-scale` runs in seconds of wall time,
    /// `paper-full` keeps the 1.3 MHz source and the physical loss budget.
    pub fn preset(name: &str) -> Result<SimConfig> {
        let base = SimConfig {
            seed: 42,
            source: SourceSection::default(),
            run: RunSection::default(),
            memory: MemorySection::default(),
            latency: LatencySection::default(),
            protocol: ProtocolSection::default(),
            topology: TopologySection::default(),
            scaling: ScalingSection::default(),
            sweep: SweepSection::default(),
            base_dir: None,
        };
        match name {
            "desk-scale" => Ok(SimConfig {
                // Brings the one-hop arms to about 10 dB.
                scaling: ScalingSection { loss_db_factor: 0.4, arm_survival: None },
                ..base
            }),
            "paper-full" => Ok(SimConfig { source: SourceSection { rate_hz: FULL_SCALE_SOURCE_RATE_HZ }, ..base }),
            other => Err(Error::Config(format!("unknown preset {other:?}; available: {}", PRESETS.join(", ")))),
        }
    }

    /// Parses a file laid over the desk-scale preset key by key. A latency
    /// section that names its model replaces the default one entirely.
    pub fn from_toml_str(text: &str) -> Result<SimConfig> {
        let err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let user: toml::Table = text.parse().map_err(|e| err(&e))?;
        let mut merged = toml::Table::try_from(SimConfig::default()).map_err(|e| err(&e))?;
        if user.get("latency").and_then(|l| l.get("model")).is_some() {
            merged.remove("latency");
        }
        merge_tables(&mut merged, user);
        merged.try_into().map_err(|e| err(&e))
    }

    pub fn load(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = SimConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fully resolves the single-run configuration.
    pub fn run_config(&self) -> Result<RunConfig> {
        let [a, b] = &self.topology.pair;
        self.run_config_for_pair(a, b)
    }

    pub fn run_config_for_pair(&self, node_a: &str, node_b: &str) -> Result<RunConfig> {
        let topology = self.topology.build()?;
        let technology = self.memory.resolve_technology()?;
        let s = &self.scaling;
        if !(s.loss_db_factor >= 0.0 && s.loss_db_factor.is_finite()) {
            return Err(Error::Config(format!("scaling.loss_db_factor must be >= 0, got {}", s.loss_db_factor)));
        }
        let mut arms = Vec::with_capacity(2);
        for (i, node) in [node_a, node_b].into_iter().enumerate() {
            let path = topology.path_to(node)?;
            let mut arm = ArmSpec::from_topology(&topology, node)?;
            arm.survival = match s.arm_survival {
                Some(p) => p[i],
                None => 10f64.powf(-s.loss_db_factor * path.total_loss_db / 10.0),
            };
            arms.push(arm);
        }
        let stop = match (self.run.pairs, self.run.duration_s) {
            (Some(n), _) => StopCondition::Pairs(n),
            (None, Some(d)) => StopCondition::DurationS(d),
            (None, None) => return Err(Error::Config("run.duration_s or run.pairs is required".into())),
        };
        let arms: [ArmSpec; 2] = arms.try_into().expect("two arms");
        let cfg = RunConfig {
            arms,
            technology,
            convention: self.memory.convention,
            f_th: self.memory.f_th,
            timeout_override_s: self.memory.timeout_s,
            source_rate_hz: self.source.rate_hz,
            latency: self.latency.resolve(self.base_dir.as_deref())?,
            direction_policy: self.latency.policy,
            capacity: self.memory.capacity,
            overflow: self.memory.overflow,
            stop,
            seed: self.seed,
            header_loss_detection: self.protocol.header_loss_detection,
            gap_guard_s: self.protocol.gap_guard_s,
            gap_batching: self.protocol.gap_batching,
            partner_deadline_check: self.protocol.partner_deadline_check,
            prune_factor: self.protocol.prune_factor,
            drain: self.run.drain,
            histogram_bin_width: self.run.histogram_bin_width,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// One template per buffer-sweep pair.
    pub fn sweep_templates(&self) -> Result<Vec<RunConfig>> {
        if self.sweep.pairs.is_empty() {
            return Ok(vec![self.run_config()?]);
        }
        self.sweep.pairs.iter().map(|[a, b]| self.run_config_for_pair(a, b)).collect()
    }

    pub fn curve_technologies(&self) -> Result<Vec<MemoryTechnology>> {
        if self.sweep.technologies.is_empty() {
            return Ok(crate::decoherence::catalog());
        }
        self.sweep
            .technologies
            .iter()
            .map(|k| lookup_technology(k).ok_or_else(|| Error::Config(format!("unknown memory technology {k:?}"))))
            .collect()
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        self.run_config()?;
        self.sweep_templates()?;
        self.curve_technologies()?;
        if self.sweep.t_max_s < 0.0 || !self.sweep.t_max_s.is_finite() {
            return Err(Error::Config(format!("sweep.t_max_s must be >= 0, got {}", self.sweep.t_max_s)));
        }
        for &f in &self.sweep.thresholds {
            if !(f > 0.5 && f <= 1.0) {
                return Err(Error::Config(format!("sweep thresholds must lie in (0.5, 1], got {f}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            SimConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(SimConfig::preset("nope").is_err());
    }

    #[test]
    fn desk_scale_arm_survival() {
        let cfg = SimConfig::preset("desk-scale").unwrap().run_config().unwrap();
        // 45 km of fibre plus 16 dB of nodes, scaled by 0.4.
        assert!((cfg.arms[0].survival - 10f64.powf(-1.0)).abs() < 1e-12);
        assert!((cfg.arrival_skew_s() - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn paper_full_keeps_loss_budget() {
        let p = SimConfig::preset("paper-full").unwrap();
        let cfg = p.run_config().unwrap();
        assert_eq!(cfg.source_rate_hz, 1.3e6);
        assert!((cfg.arms[0].survival - 10f64.powf(-2.5)).abs() < 1e-15);
        let bd = p.run_config_for_pair("B", "D").unwrap();
        assert!(bd.arms[0].survival < cfg.arms[0].survival);
    }

    #[test]
    fn toml_round_trip() {
        let mut p = SimConfig::preset("desk-scale").unwrap();
        p.latency = LatencySection::constant(0.004);
        p.memory.capacity = Some(64);
        let text = p.to_toml_string().unwrap();
        let back = SimConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = SimConfig::from_toml_str("seed = 1\n[memory]\ntechnology = \"ca40-ion\"\nt2 = 0.5\n").unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("t2")));
        assert!(SimConfig::from_toml_str("sed = 1\n").is_err());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = SimConfig::from_toml_str("seed = 5\n[latency]\nmodel = \"constant\"\nseconds = 0.01\n").unwrap();
        assert_eq!(cfg.scaling, SimConfig::preset("desk-scale").unwrap().scaling);
        let run = cfg.run_config().unwrap();
        assert_eq!(run.seed, 5);
        assert_eq!(run.latency, LatencyModel::constant(0.01));
    }

    #[test]
    fn custom_technology() {
        let mut m = MemorySection { technology: "lab".into(), t1_s: Some(2.0), ..Default::default() };
        assert!(m.resolve_technology().is_err());
        m.t2_s = Some(1.0);
        assert_eq!(m.resolve_technology().unwrap().t2_s, 1.0);
    }

    #[test]
    fn empirical_needs_samples() {
        let mut l = LatencySection { model: LatencyKind::Empirical, ..Default::default() };
        assert!(l.resolve(None).is_err());
        l.samples_ms = Some(vec![10.0, 12.0]);
        assert_eq!(l.resolve(None).unwrap(), LatencyModel::Empirical { samples_s: vec![0.010, 0.012] });
    }
}
