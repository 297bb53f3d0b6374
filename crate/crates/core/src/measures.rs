//! Reproduction and mutation measures as a Kingman mass plus finite atom lists.
//!
//! `Λ = a₀δ₀ + Σ_j w_j δ_{y_j}` drives reproduction, `M = b₀δ₀ + Σ_j w_j δ_{y_j}`
//! drives mutation. A reproduction atom fires at rate `w/y²`, a mutation atom at
//! rate `w/y`; at each firing every active individual takes part with
//! probability `y`.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Reproduction,
    Mutation,
}

/// One atom `w δ_y`. Serialized as the pair `[y, w]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

impl From<(f64, f64)> for Atom {
    fn from((location, weight): (f64, f64)) -> Self {
        Self { location, weight }
    }
}

impl From<Atom> for (f64, f64) {
    fn from(a: Atom) -> Self {
        (a.location, a.weight)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub kingman_mass: f64,
    #[serde(default)]
    pub atoms: Vec<Atom>,
    pub kind: MeasureKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    KingmanMassNegative(f64),
    KingmanMassNotFinite(f64),
    LocationOutOfRange { index: usize, location: f64 },
    WeightNotPositive { index: usize, weight: f64 },
    DuplicateLocation { index: usize, location: f64 },
    NotIncreasing { index: usize },
    InfiniteRate,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::KingmanMassNegative(v) => write!(f, "kingman_mass {v} is negative"),
            Violation::KingmanMassNotFinite(v) => write!(f, "kingman_mass {v} is not finite"),
            Violation::LocationOutOfRange { index, location } => {
                write!(f, "atom {index}: location {location} outside (0,1]")
            }
            Violation::WeightNotPositive { index, weight } => {
                write!(f, "atom {index}: weight {weight} is not strictly positive")
            }
            Violation::DuplicateLocation { index, location } => {
                write!(f, "atom {index}: duplicate location {location}")
            }
            Violation::NotIncreasing { index } => {
                write!(f, "atom {index}: locations must be strictly increasing")
            }
            Violation::InfiniteRate => write!(f, "total event rate is not finite"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    #[must_use]
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Poisson rates of the atom drivers.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRates {
    pub per_atom: Vec<f64>,
    pub aggregate: f64,
}

impl MeasureSpec {
    #[must_use]
    pub fn new(kind: MeasureKind, kingman_mass: f64, atoms: &[(f64, f64)]) -> Self {
        Self {
            kingman_mass,
            atoms: atoms.iter().copied().map(Atom::from).collect(),
            kind,
        }
    }

    #[must_use]
    pub fn zero(kind: MeasureKind) -> Self {
        Self::new(kind, 0.0, &[])
    }

    #[must_use]
    pub fn kingman(kind: MeasureKind, mass: f64) -> Self {
        Self::new(kind, mass, &[])
    }

    #[must_use]
    pub fn is_zero(&self) -> bool {
        self.kingman_mass == 0.0 && self.atoms.is_empty()
    }

    /// Lists every violated invariant; an empty report means the measure is valid.
    #[must_use]
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        if !self.kingman_mass.is_finite() {
            v.push(Violation::KingmanMassNotFinite(self.kingman_mass));
        } else if self.kingman_mass < 0.0 {
            v.push(Violation::KingmanMassNegative(self.kingman_mass));
        }
        for (index, a) in self.atoms.iter().enumerate() {
            if !(a.location > 0.0 && a.location <= 1.0) {
                v.push(Violation::LocationOutOfRange {
                    index,
                    location: a.location,
                });
            }
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                v.push(Violation::WeightNotPositive {
                    index,
                    weight: a.weight,
                });
            }
            if index > 0 {
                let prev = self.atoms[index - 1].location;
                if a.location == prev {
                    v.push(Violation::DuplicateLocation {
                        index,
                        location: a.location,
                    });
                } else if a.location < prev {
                    v.push(Violation::NotIncreasing { index });
                }
            }
        }
        if v.is_empty() && !self.raw_rates().iter().all(|r| r.is_finite()) {
            v.push(Violation::InfiniteRate);
        }
        ValidationReport { violations: v }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidMeasure(report))
        }
    }

    fn raw_rates(&self) -> Vec<f64> {
        self.atoms
            .iter()
            .map(|a| match self.kind {
                MeasureKind::Reproduction => a.weight / (a.location * a.location),
                MeasureKind::Mutation => a.weight / a.location,
            })
            .collect()
    }

    /// Per-atom firing rates: `w/y²` for reproduction, `w/y` for mutation.
    pub fn total_event_rates(&self) -> Result<EventRates> {
        self.ensure_valid()?;
        let per_atom = self.raw_rates();
        let aggregate = per_atom.iter().sum();
        Ok(EventRates {
            per_atom,
            aggregate,
        })
    }

    /// The mutation measure seen by the population conditioned on ♥ fixing:
    /// same Kingman mass, atoms `(y, w/y)`.
    pub fn induced_mutation_measure(&self) -> Result<MeasureSpec> {
        if self.kind != MeasureKind::Reproduction {
            return Err(Error::InvalidParams(
                "induced mutation measure needs a reproduction measure".into(),
            ));
        }
        self.ensure_valid()?;
        Ok(MeasureSpec {
            kingman_mass: self.kingman_mass,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    location: a.location,
                    weight: a.weight / a.location,
                })
                .collect(),
            kind: MeasureKind::Mutation,
        })
    }

    /// Multiplies the Kingman mass and every atom weight by `c`.
    #[must_use]
    pub fn scaled(&self, c: f64) -> MeasureSpec {
        MeasureSpec {
            kingman_mass: self.kingman_mass * c,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    location: a.location,
                    weight: a.weight * c,
                })
                .collect(),
            kind: self.kind,
        }
    }
}

/// A Beta(a, b) density for `Λ₀` (total mass `mass`) discretized onto the
/// midpoints of `edges` by the midpoint rule.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub spec: MeasureSpec,
    /// Aggregate event rate of the discretized measure, for convergence checks in K.
    pub aggregate_rate: f64,
}

pub fn beta_discretized(
    kind: MeasureKind,
    kingman_mass: f64,
    mass: f64,
    a: f64,
    b: f64,
    edges: &[f64],
) -> Result<Discretization> {
    if edges.len() < 2 {
        return Err(Error::InvalidParams("need at least two grid edges".into()));
    }
    if edges[0] < 0.0 || *edges.last().unwrap() > 1.0 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams(
            "grid edges must be strictly increasing inside [0,1]".into(),
        ));
    }
    let beta = Beta::new(a, b).map_err(|e| Error::InvalidParams(format!("beta density: {e}")))?;
    let atoms: Vec<Atom> = edges
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            Atom {
                location: mid,
                weight: mass * beta.pdf(mid) * (w[1] - w[0]),
            }
        })
        .filter(|a| a.weight > 0.0)
        .collect();
    let spec = MeasureSpec {
        kingman_mass,
        atoms,
        kind,
    };
    let aggregate_rate = spec.total_event_rates()?.aggregate;
    Ok(Discretization {
        spec,
        aggregate_rate,
    })
}
