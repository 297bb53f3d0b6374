//! Shared model vocabulary: individuals, populations, frequencies, parameters.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{MeasureKind, MeasureSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allele {
    Heart,
    Spade,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Active,
    Dormant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Individual {
    pub allele: Allele,
    pub activity: Activity,
}

impl Individual {
    #[must_use]
    pub const fn new(allele: Allele, activity: Activity) -> Self {
        Self { allele, activity }
    }

    #[must_use]
    pub fn is_active(&self) -> bool {
        self.activity == Activity::Active
    }

    /// Index in the fixed order (♥a, ♥d, ♠a, ♠d), used for tabulations.
    #[must_use]
    pub fn class_index(&self) -> usize {
        match (self.allele, self.activity) {
            (Allele::Heart, Activity::Active) => 0,
            (Allele::Heart, Activity::Dormant) => 1,
            (Allele::Spade, Activity::Active) => 2,
            (Allele::Spade, Activity::Dormant) => 3,
        }
    }
}

/// Which way the environment ξ is wired to α and σ.
///
/// `ActivityMatched` makes ξ behave like the activity of a single individual:
/// 1→0 at rate α, 0→1 at rate σ. `Swapped` uses 0→1 at α and 1→0 at σ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvConvention {
    #[default]
    ActivityMatched,
    Swapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    pub lambda: MeasureSpec,
    pub mutation: MeasureSpec,
    pub alpha: f64,
    pub sigma: f64,
    #[serde(default)]
    pub env_convention: EnvConvention,
}

impl SimParams {
    #[must_use]
    pub fn new(lambda: MeasureSpec, mutation: MeasureSpec, alpha: f64, sigma: f64) -> Self {
        Self {
            lambda,
            mutation,
            alpha,
            sigma,
            env_convention: EnvConvention::default(),
        }
    }

    /// Kingman reproduction only, no mutation.
    #[must_use]
    pub fn kingman(a0: f64, alpha: f64, sigma: f64) -> Self {
        Self::new(
            MeasureSpec::kingman(MeasureKind::Reproduction, a0),
            MeasureSpec::zero(MeasureKind::Mutation),
            alpha,
            sigma,
        )
    }

    #[must_use]
    pub fn with_convention(mut self, c: EnvConvention) -> Self {
        self.env_convention = c;
        self
    }

    #[must_use]
    pub fn with_mutation(mut self, m: MeasureSpec) -> Self {
        self.mutation = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.kind != MeasureKind::Reproduction {
            return Err(Error::InvalidParams("lambda must be a reproduction measure".into()));
        }
        if self.mutation.kind != MeasureKind::Mutation {
            return Err(Error::InvalidParams("mutation must be a mutation measure".into()));
        }
        self.lambda.ensure_valid()?;
        self.mutation.ensure_valid()?;
        for (name, v) in [("alpha", self.alpha), ("sigma", self.sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} = {v} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }

    /// Rate of ξ: 1 → 0.
    #[must_use]
    pub fn env_off_rate(&self) -> f64 {
        match self.env_convention {
            EnvConvention::ActivityMatched => self.alpha,
            EnvConvention::Swapped => self.sigma,
        }
    }

    /// Rate of ξ: 0 → 1.
    #[must_use]
    pub fn env_on_rate(&self) -> f64 {
        match self.env_convention {
            EnvConvention::ActivityMatched => self.sigma,
            EnvConvention::Swapped => self.alpha,
        }
    }

    #[must_use]
    pub fn env_flip_rate(&self, env: bool) -> f64 {
        if env {
            self.env_off_rate()
        } else {
            self.env_on_rate()
        }
    }

    /// Stationary probability that ξ = 1.
    #[must_use]
    pub fn env_stationary(&self) -> f64 {
        let (on, off) = (self.env_on_rate(), self.env_off_rate());
        if on + off > 0.0 {
            on / (on + off)
        } else {
            0.5
        }
    }
}

/// `(z₁, z₂, z₃, s)`: active ♥, dormant ♥, all active, environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyState {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    pub env: bool,
}

impl FrequencyState {
    #[must_use]
    pub const fn new(z1: f64, z2: f64, z3: f64, env: bool) -> Self {
        Self { z1, z2, z3, env }
    }

    #[must_use]
    pub fn s(&self) -> f64 {
        if self.env {
            1.0
        } else {
            0.0
        }
    }

    #[must_use]
    pub fn with_env(self, env: bool) -> Self {
        Self { env, ..self }
    }

    /// Membership in D (with a small tolerance for rounding).
    #[must_use]
    pub fn in_domain(&self) -> bool {
        const EPS: f64 = 1e-12;
        self.z1 >= -EPS
            && self.z2 >= -EPS
            && self.z1 <= self.z3 + EPS
            && self.z2 <= 1.0 - self.z3 + EPS
            && self.z3 >= -EPS
            && self.z3 <= 1.0 + EPS
    }

    /// Integer counts `(Nz₁, Nz₂, Nz₃)` if the state lies on the lattice D_N.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let to_int = |z: f64, name: &str| -> Result<usize> {
            let x = z * n as f64;
            let r = x.round();
            if (x - r).abs() > 1e-9 || r < 0.0 {
                return Err(Error::InvalidState(format!("N·{name} = {x} is not a non-negative integer")));
            }
            Ok(r as usize)
        };
        let (k1, k2, k3) = (to_int(self.z1, "z1")?, to_int(self.z2, "z2")?, to_int(self.z3, "z3")?);
        if k1 > k3 || k2 + k3 > n {
            return Err(Error::InvalidState(format!(
                "counts ({k1}, {k2}, {k3}) are outside D_N for N = {n}"
            )));
        }
        Ok((k1, k2, k3))
    }
}

/// A multiset of the four (allele, activity) classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Composition {
    pub heart_active: usize,
    pub heart_dormant: usize,
    pub spade_active: usize,
    pub spade_dormant: usize,
}

impl Composition {
    #[must_use]
    pub fn size(&self) -> usize {
        self.heart_active + self.heart_dormant + self.spade_active + self.spade_dormant
    }

    /// The lattice point `z` for population size `n`.
    pub fn from_frequencies(z: &FrequencyState, n: usize) -> Result<Self> {
        let (k1, k2, k3) = z.counts(n)?;
        Ok(Self {
            heart_active: k1,
            heart_dormant: k2,
            spade_active: k3 - k1,
            spade_dormant: n - k3 - k2,
        })
    }

    #[must_use]
    pub fn frequencies(&self, env: bool) -> FrequencyState {
        let n = self.size() as f64;
        FrequencyState {
            z1: self.heart_active as f64 / n,
            z2: self.heart_dormant as f64 / n,
            z3: (self.heart_active + self.spade_active) as f64 / n,
            env,
        }
    }

    /// The individuals in class order (♥a, ♥d, ♠a, ♠d).
    #[must_use]
    pub fn individuals(&self) -> Vec<Individual> {
        let mut v = Vec::with_capacity(self.size());
        for (count, ind) in [
            (self.heart_active, Individual::new(Allele::Heart, Activity::Active)),
            (self.heart_dormant, Individual::new(Allele::Heart, Activity::Dormant)),
            (self.spade_active, Individual::new(Allele::Spade, Activity::Active)),
            (self.spade_dormant, Individual::new(Allele::Spade, Activity::Dormant)),
        ] {
            v.extend(std::iter::repeat_n(ind, count));
        }
        v
    }

    /// A uniformly random arrangement of the multiset (exchangeable start).
    pub fn exchangeable<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Individual> {
        let mut v = self.individuals();
        v.shuffle(rng);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub individuals: Vec<Individual>,
    pub env: bool,
    pub time: f64,
}

impl PopulationState {
    pub fn new(individuals: Vec<Individual>, env: bool) -> Result<Self> {
        if individuals.is_empty() {
            return Err(Error::InvalidState("population size must be at least 1".into()));
        }
        Ok(Self {
            individuals,
            env,
            time: 0.0,
        })
    }

    #[must_use]
    pub fn size(&self) -> usize {
        self.individuals.len()
    }

    #[must_use]
    pub fn composition(&self) -> Composition {
        let mut c = [0usize; 4];
        for ind in &self.individuals {
            c[ind.class_index()] += 1;
        }
        Composition {
            heart_active: c[0],
            heart_dormant: c[1],
            spade_active: c[2],
            spade_dormant: c[3],
        }
    }

    #[must_use]
    pub fn frequencies(&self) -> FrequencyState {
        frequencies(self)
    }

    #[must_use]
    pub fn is_monomorphic(&self) -> bool {
        let first = self.individuals[0].allele;
        self.individuals.iter().all(|i| i.allele == first)
    }
}

/// Empirical frequencies of a population.
#[must_use]
pub fn frequencies(state: &PopulationState) -> FrequencyState {
    state.composition().frequencies(state.env)
}
