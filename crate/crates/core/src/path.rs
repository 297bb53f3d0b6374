//! Recording grids and per-replicate path records.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FrequencyState, Individual};

/// Sorted, non-negative observation times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    times: Vec<f64>,
}

impl SamplingGrid {
    pub fn new(mut times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidParams("grid times must be finite and ≥ 0".into()));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(Self { times })
    }

    /// `0, step, 2·step, …` up to and including `horizon`.
    pub fn uniform(horizon: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && horizon >= 0.0) {
            return Err(Error::InvalidParams("grid step must be > 0 and horizon ≥ 0".into()));
        }
        let n = (horizon / step + 1e-9).floor() as usize;
        Self::new((0..=n).map(|i| i as f64 * step).collect())
    }

    #[must_use]
    pub fn empty() -> Self {
        Self::default()
    }

    #[must_use]
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    #[must_use]
    pub fn last(&self) -> Option<f64> {
        self.times.last().copied()
    }
}

/// When a forward run ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    /// Run to this time.
    At(f64),
    /// Run until one allele is fixed and the grid is exhausted; give up at `max_time`.
    UntilMonomorphic { max_time: f64 },
}

impl Stop {
    #[must_use]
    pub fn time_limit(&self) -> f64 {
        match *self {
            Stop::At(t) => t,
            Stop::UntilMonomorphic { max_time } => max_time,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixation {
    Heart,
    Spade,
    /// Still polymorphic when the run ended.
    Censored,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencySample {
    pub t: f64,
    pub state: FrequencyState,
}

/// Full per-individual state at a grid time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub env: bool,
    pub individuals: Vec<Individual>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub population: usize,
    pub samples: Vec<FrequencySample>,
    pub fixation: Fixation,
    /// Fixation time, if an allele fixed during the run.
    pub fixation_time: Option<f64>,
    pub end_time: f64,
    pub events: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub snapshots: Vec<Snapshot>,
}

impl PathRecord {
    /// The sample recorded at grid time `t`.
    #[must_use]
    pub fn at(&self, t: f64) -> Option<&FrequencyState> {
        self.samples.iter().find(|s| s.t == t).map(|s| &s.state)
    }
}

pub const PATH_CSV_HEADER: &str = "replicate,t,z1,z2,z3,env";

/// Appends one CSV row per sample: `replicate,t,z1,z2,z3,env`.
pub fn write_path_rows(out: &mut String, replicate: u64, record: &PathRecord) {
    for s in &record.samples {
        let _ = writeln!(
            out,
            "{replicate},{},{},{},{},{}",
            s.t,
            s.state.z1,
            s.state.z2,
            s.state.z3,
            u8::from(s.state.env)
        );
    }
}
