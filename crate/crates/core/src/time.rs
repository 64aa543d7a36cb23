//! Simulation clock in integer picoseconds.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

const PS_PER_S: f64 = 1e12;

/// A point (or span) on the simulation clock, in picoseconds.
///
/// 64 bits of picoseconds cover about 213 days, far beyond any run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    /// Rounds to the nearest picosecond. Negative and NaN inputs clamp to zero.
    pub fn from_secs(s: f64) -> SimTime {
        if s.is_nan() || s <= 0.0 {
            return SimTime::ZERO;
        }
        SimTime((s * PS_PER_S).round() as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / PS_PER_S
    }

    pub fn ps(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn abs_diff(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.abs_diff(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

/// Exact decimal seconds with twelve fractional digits.
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:012}", self.0 / 1_000_000_000_000, self.0 % 1_000_000_000_000)
    }
}
