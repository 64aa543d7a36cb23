//! Discrete-event simulation of entangled-pair distribution from a midpoint
//! source to two quantum-memory nodes that verify pairs by exchanging
//! entanglement ids over a classical IP network.
//!
//! * [`topology`]: loss budget and propagation delay of each arm.
//! * [`decoherence`]: idle-memory dynamics, singlet fidelity and timeouts.
//! * [`latency`]: classical channel delay models.
//! * [`protocol`]: the per-node verification state machine.
//! * [`engine`]: the event loop tying it all together.
//! * [`metrics`]: run reports and experiment sweeps.
//! * [`config`]: TOML configuration and presets.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod decoherence;
pub mod engine;
pub mod error;
pub mod latency;
pub mod metrics;
pub mod protocol;
pub mod time;
pub mod topology;

pub use config::SimConfig;
pub use decoherence::{
    closed_form_fidelity, lindblad_propagate, lookup_technology, max_tolerable_latency, timeout_from_threshold,
    trajectory_fidelity_oracle, DephasingConvention, ExposureIntervals, MemoryTechnology,
};
pub use engine::{run, run_with_traces, RunConfig, StopCondition, TraceSinks};
pub use error::{Error, ErrorCategory, Result};
pub use latency::{DirectionPolicy, LatencyModel};
pub use metrics::RunReport;
pub use time::SimTime;
