//! Event classes and replayable event logs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    Deactivation,
    Activation,
    EnvFlip,
    SmallReproduction,
    LargeReproduction,
    SingleMutation,
    CoordinatedMutation,
}

impl EventClass {
    pub const ALL: [EventClass; 7] = [
        EventClass::Deactivation,
        EventClass::Activation,
        EventClass::EnvFlip,
        EventClass::SmallReproduction,
        EventClass::LargeReproduction,
        EventClass::SingleMutation,
        EventClass::CoordinatedMutation,
    ];

    #[must_use]
    pub fn index(self) -> usize {
        self as usize
    }

    #[must_use]
    pub fn is_reproduction(self) -> bool {
        matches!(self, EventClass::SmallReproduction | EventClass::LargeReproduction)
    }
}

/// What happened at one step; `atom` indexes the Λ or M atom list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTag {
    pub class: EventClass,
    pub atom: Option<usize>,
}

/// One logged event. For reproduction the parent level comes first.
/// Levels are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub t: f64,
    pub class: EventClass,
    pub levels: Vec<u32>,
    pub atom: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub population: usize,
    pub horizon: f64,
    pub events: Vec<LoggedEvent>,
}

impl EventLog {
    #[must_use]
    pub fn new(population: usize) -> Self {
        Self {
            population,
            horizon: 0.0,
            events: Vec::new(),
        }
    }

    /// Reproduction events only, in time order.
    pub fn reproductions(&self) -> impl DoubleEndedIterator<Item = &LoggedEvent> {
        self.events.iter().filter(|e| e.class.is_reproduction())
    }

    /// Times must be non-decreasing and inside `[0, horizon]`, levels inside `1..=N`.
    pub fn check_consistent(&self) -> Result<()> {
        let mut last = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.t >= last && e.t <= self.horizon) {
                return Err(Error::InvalidState(format!(
                    "event {i} at t = {} is out of order or beyond the run horizon {}",
                    e.t, self.horizon
                )));
            }
            last = e.t;
            if let Some(bad) = e
                .levels
                .iter()
                .find(|&&l| l == 0 || l as usize > self.population)
            {
                return Err(Error::InvalidState(format!(
                    "event {i} names level {bad} in a population of {}",
                    self.population
                )));
            }
            if e.class.is_reproduction() && e.levels.len() < 2 {
                return Err(Error::InvalidState(format!(
                    "reproduction event {i} has fewer than two levels"
                )));
            }
        }
        Ok(())
    }

    /// JSON lines, one event per line.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_json_lines(population: usize, horizon: f64, text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: LoggedEvent = serde_json::from_str(line).map_err(|err| {
                Error::InvalidState(format!("event log line {}: {err}", i + 1))
            })?;
            events.push(e);
        }
        let log = Self {
            population,
            horizon,
            events,
        };
        log.check_consistent()?;
        Ok(log)
    }
}

/// Event counts and the time integral of each class's total rate.
/// Ratios `count / integral` should be close to 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateAudit {
    pub counts: [u64; 7],
    pub integrated: [f64; 7],
}

impl RateAudit {
    pub fn merge(&mut self, other: &RateAudit) {
        for i in 0..7 {
            self.counts[i] += other.counts[i];
            self.integrated[i] += other.integrated[i];
        }
    }

    #[must_use]
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in EventClass::ALL {
            let i = c.index();
            let _ = write!(s, "{c:?}: {} / {:.3}; ", self.counts[i], self.integrated[i]);
        }
        s
    }
}
