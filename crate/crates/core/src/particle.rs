//! Individual-level Gillespie engine shared by the Moran and lookdown models.
//!
//! The two models have the same event drivers and differ only in who is the
//! parent at a reproduction event: a uniform participant (Moran) or the lowest
//! participating level (lookdown).

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::events::{EventClass, EventLog, EventTag, LoggedEvent, RateAudit};
use crate::model::{Activity, Allele, FrequencyState, Individual, PopulationState, SimParams};
use crate::path::{Fixation, FrequencySample, PathRecord, SamplingGrid, Snapshot, Stop};
use crate::rng::holding_time;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ParentRule {
    Uniform,
    Lowest,
}

const NONE: u32 = u32::MAX;

/// Set of indices with O(1) insert, remove and uniform sampling.
#[derive(Clone, Debug)]
struct IndexSet {
    members: Vec<u32>,
    pos: Vec<u32>,
}

impl IndexSet {
    fn new(n: usize) -> Self {
        Self {
            members: Vec::with_capacity(n),
            pos: vec![NONE; n],
        }
    }

    fn len(&self) -> usize {
        self.members.len()
    }

    fn insert(&mut self, i: u32) {
        debug_assert_eq!(self.pos[i as usize], NONE);
        self.pos[i as usize] = self.members.len() as u32;
        self.members.push(i);
    }

    fn remove(&mut self, i: u32) {
        let p = self.pos[i as usize];
        debug_assert_ne!(p, NONE);
        let last = self.members.pop().expect("non-empty");
        if last != i {
            self.members[p as usize] = last;
            self.pos[last as usize] = p;
        }
        self.pos[i as usize] = NONE;
    }

    fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.members[rng.random_range(0..self.members.len())]
    }

    /// `k` distinct members in uniformly random order (partial Fisher–Yates).
    fn sample_distinct<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R, out: &mut Vec<u32>) {
        out.clear();
        let n = self.members.len();
        for j in 0..k {
            let r = rng.random_range(j..n);
            self.members.swap(j, r);
            self.pos[self.members[j] as usize] = j as u32;
            self.pos[self.members[r] as usize] = r as u32;
            out.push(self.members[j]);
        }
    }
}

pub(crate) enum Advance {
    Event(EventTag),
    Reached,
}

pub(crate) struct ParticleSystem<'p> {
    params: &'p SimParams,
    rule: ParentRule,
    pub(crate) individuals: Vec<Individual>,
    pub(crate) env: bool,
    pub(crate) time: f64,
    active: IndexSet,
    dormant: IndexSet,
    hearts: usize,
    lambda_rates: Vec<f64>,
    lambda_total: f64,
    mutation_rates: Vec<f64>,
    mutation_total: f64,
    scratch: Vec<u32>,
    pub(crate) audit: RateAudit,
    pub(crate) events: u64,
    pub(crate) fixation_time: Option<f64>,
}

impl<'p> ParticleSystem<'p> {
    pub(crate) fn new(state: PopulationState, params: &'p SimParams, rule: ParentRule) -> Result<Self> {
        params.validate()?;
        let n = state.individuals.len();
        if n == 0 {
            return Err(Error::InvalidState("population size must be at least 1".into()));
        }
        if n >= NONE as usize {
            return Err(Error::InvalidState("population too large".into()));
        }
        let mut active = IndexSet::new(n);
        let mut dormant = IndexSet::new(n);
        let mut hearts = 0;
        for (i, ind) in state.individuals.iter().enumerate() {
            match ind.activity {
                Activity::Active => active.insert(i as u32),
                Activity::Dormant => dormant.insert(i as u32),
            }
            if ind.allele == Allele::Heart {
                hearts += 1;
            }
        }
        let lambda = params.lambda.total_event_rates()?;
        let mutation = params.mutation.total_event_rates()?;
        let mut sys = Self {
            params,
            rule,
            individuals: state.individuals,
            env: state.env,
            time: state.time,
            active,
            dormant,
            hearts,
            lambda_rates: lambda.per_atom,
            lambda_total: lambda.aggregate,
            mutation_rates: mutation.per_atom,
            mutation_total: mutation.aggregate,
            scratch: Vec::new(),
            audit: RateAudit::default(),
            events: 0,
            fixation_time: None,
        };
        if sys.is_monomorphic() {
            sys.fixation_time = Some(sys.time);
        }
        Ok(sys)
    }

    pub(crate) fn size(&self) -> usize {
        self.individuals.len()
    }

    pub(crate) fn is_monomorphic(&self) -> bool {
        self.hearts == 0 || self.hearts == self.individuals.len()
    }

    pub(crate) fn fixation(&self) -> Fixation {
        if self.hearts == self.individuals.len() {
            Fixation::Heart
        } else if self.hearts == 0 {
            Fixation::Spade
        } else {
            Fixation::Censored
        }
    }

    pub(crate) fn state(&self) -> PopulationState {
        PopulationState {
            individuals: self.individuals.clone(),
            env: self.env,
            time: self.time,
        }
    }

    pub(crate) fn frequencies(&self) -> FrequencyState {
        self.frequencies_from(0)
    }

    /// Frequencies of individuals `skip..N` relative to `N - skip`.
    pub(crate) fn frequencies_from(&self, skip: usize) -> FrequencyState {
        let mut c = [0usize; 4];
        for ind in &self.individuals[skip..] {
            c[ind.class_index()] += 1;
        }
        let n = (self.individuals.len() - skip) as f64;
        FrequencyState {
            z1: c[0] as f64 / n,
            z2: c[1] as f64 / n,
            z3: (c[0] + c[2]) as f64 / n,
            env: self.env,
        }
    }

    fn class_rates(&self) -> [f64; 7] {
        let p = self.params;
        let na = self.active.len() as f64;
        let nd = self.dormant.len() as f64;
        let mut r = [0.0; 7];
        r[EventClass::Deactivation.index()] = p.alpha * na;
        r[EventClass::Activation.index()] = p.sigma * nd;
        r[EventClass::EnvFlip.index()] = p.env_flip_rate(self.env);
        r[EventClass::SmallReproduction.index()] = p.lambda.kingman_mass * na * (na - 1.0) * 0.5;
        r[EventClass::LargeReproduction.index()] = self.lambda_total;
        if self.env {
            r[EventClass::SingleMutation.index()] = p.mutation.kingman_mass * na;
            r[EventClass::CoordinatedMutation.index()] = self.mutation_total;
        }
        r
    }

    /// Runs one event if it happens before `limit`; otherwise moves the clock to `limit`.
    pub(crate) fn advance<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        limit: f64,
        log: Option<&mut EventLog>,
    ) -> Advance {
        let rates = self.class_rates();
        let total: f64 = rates.iter().sum();
        let dt = holding_time(rng, total);
        if !dt.is_finite() || self.time + dt > limit {
            let span = limit - self.time;
            if span > 0.0 && span.is_finite() {
                for (acc, r) in self.audit.integrated.iter_mut().zip(rates) {
                    *acc += r * span;
                }
                self.time = limit;
            }
            return Advance::Reached;
        }
        for (acc, r) in self.audit.integrated.iter_mut().zip(rates) {
            *acc += r * dt;
        }
        self.time += dt;
        let mut u = rng.random::<f64>() * total;
        let mut class = EventClass::CoordinatedMutation;
        for c in EventClass::ALL {
            let r = rates[c.index()];
            if r > 0.0 && u < r {
                class = c;
                break;
            }
            u -= r;
        }
        // Rounding can leave `u` past the last positive bucket.
        if rates[class.index()] <= 0.0 {
            class = *EventClass::ALL
                .iter()
                .rev()
                .find(|c| rates[c.index()] > 0.0)
                .expect("positive total rate");
        }
        let tag = self.apply(class, rng, log);
        self.audit.counts[class.index()] += 1;
        self.events += 1;
        Advance::Event(tag)
    }

    fn pick_atom<R: Rng + ?Sized>(rates: &[f64], total: f64, rng: &mut R) -> usize {
        let mut u = rng.random::<f64>() * total;
        for (j, r) in rates.iter().enumerate() {
            if u < *r {
                return j;
            }
            u -= r;
        }
        rates.len() - 1
    }

    fn participants<R: Rng + ?Sized>(&mut self, y: f64, rng: &mut R) -> usize {
        let na = self.active.len();
        let k = if y >= 1.0 {
            na
        } else {
            Binomial::new(na as u64, y).expect("valid binomial").sample(rng) as usize
        };
        self.active.sample_distinct(k, rng, &mut self.scratch);
        k
    }

    fn set_allele(&mut self, i: u32, allele: Allele) {
        let ind = &mut self.individuals[i as usize];
        if ind.allele != allele {
            if allele == Allele::Heart {
                self.hearts += 1;
            } else {
                self.hearts -= 1;
            }
            ind.allele = allele;
        }
    }

    /// Copies the parent's allele onto the other participants in `scratch`.
    fn reproduce(&mut self) -> u32 {
        let parent_pos = match self.rule {
            ParentRule::Uniform => 0,
            ParentRule::Lowest => {
                let (pos, _) = self
                    .scratch
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, &l)| l)
                    .expect("participants");
                pos
            }
        };
        self.scratch.swap(0, parent_pos);
        let parent = self.scratch[0];
        let allele = self.individuals[parent as usize].allele;
        for k in 1..self.scratch.len() {
            let child = self.scratch[k];
            self.set_allele(child, allele);
        }
        parent
    }

    fn logged_levels(&self, sort_tail: bool) -> Vec<u32> {
        let mut v: Vec<u32> = self.scratch.iter().map(|l| l + 1).collect();
        if sort_tail && v.len() > 1 {
            v[1..].sort_unstable();
        }
        v
    }

    fn apply<R: Rng + ?Sized>(
        &mut self,
        class: EventClass,
        rng: &mut R,
        log: Option<&mut EventLog>,
    ) -> EventTag {
        let mut atom = None;
        let mut effective = true;
        match class {
            EventClass::Deactivation => {
                let i = self.active.random(rng);
                self.active.remove(i);
                self.dormant.insert(i);
                self.individuals[i as usize].activity = Activity::Dormant;
                self.scratch.clear();
                self.scratch.push(i);
            }
            EventClass::Activation => {
                let i = self.dormant.random(rng);
                self.dormant.remove(i);
                self.active.insert(i);
                self.individuals[i as usize].activity = Activity::Active;
                self.scratch.clear();
                self.scratch.push(i);
            }
            EventClass::EnvFlip => {
                self.env = !self.env;
                self.scratch.clear();
            }
            EventClass::SmallReproduction => {
                self.active.sample_distinct(2, rng, &mut self.scratch);
                self.reproduce();
            }
            EventClass::LargeReproduction => {
                let j = Self::pick_atom(&self.lambda_rates, self.lambda_total, rng);
                atom = Some(j);
                let y = self.params.lambda.atoms[j].location;
                if self.participants(y, rng) >= 2 {
                    self.reproduce();
                } else {
                    effective = false;
                }
            }
            EventClass::SingleMutation => {
                let i = self.active.random(rng);
                self.set_allele(i, Allele::Heart);
                self.scratch.clear();
                self.scratch.push(i);
            }
            EventClass::CoordinatedMutation => {
                let j = Self::pick_atom(&self.mutation_rates, self.mutation_total, rng);
                atom = Some(j);
                let y = self.params.mutation.atoms[j].location;
                if self.participants(y, rng) > 0 {
                    for k in 0..self.scratch.len() {
                        let i = self.scratch[k];
                        self.set_allele(i, Allele::Heart);
                    }
                } else {
                    effective = false;
                }
            }
        }
        if self.is_monomorphic() {
            if self.fixation_time.is_none() {
                self.fixation_time = Some(self.time);
            }
        } else {
            self.fixation_time = None;
        }
        if let Some(log) = log {
            if effective {
                let sort_tail = self.rule == ParentRule::Lowest || !class.is_reproduction();
                let mut levels = self.logged_levels(sort_tail);
                if !class.is_reproduction() {
                    levels.sort_unstable();
                }
                log.events.push(LoggedEvent {
                    t: self.time,
                    class,
                    levels,
                    atom: atom.map(|a| a as u32),
                });
            }
        }
        EventTag { class, atom }
    }
}

/// Options for a particle run.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct RunOptions {
    pub snapshots: bool,
    /// Report frequencies of individuals `skip..N` only.
    pub skip: usize,
}

/// Drives a particle system along the grid and until the stop rule fires.
pub(crate) fn run<R: Rng + ?Sized>(
    sys: &mut ParticleSystem<'_>,
    stop: Stop,
    grid: &SamplingGrid,
    rng: &mut R,
    mut log: Option<&mut EventLog>,
    opts: RunOptions,
) -> Result<PathRecord> {
    let limit = stop.time_limit();
    if !(limit >= sys.time) {
        return Err(Error::InvalidParams(format!("stop time {limit} precedes the start")));
    }
    if let Stop::UntilMonomorphic { .. } = stop {
        if !sys.params.mutation.is_zero() {
            return Err(Error::Unsupported(
                "running until monomorphic needs a zero mutation measure".into(),
            ));
        }
    }
    let mut samples = Vec::with_capacity(grid.times().len());
    let mut snapshots = Vec::new();
    for &g in grid.times() {
        if g > limit {
            break;
        }
        while g > sys.time {
            if let Advance::Reached = sys.advance(rng, g, log.as_deref_mut()) {
                break;
            }
        }
        let mut state = sys.frequencies_from(opts.skip);
        if opts.skip > 0 {
            state.env = sys.individuals[0].is_active();
        }
        samples.push(FrequencySample { t: g, state });
        if opts.snapshots {
            snapshots.push(Snapshot {
                t: g,
                env: sys.env,
                individuals: sys.individuals.clone(),
            });
        }
    }
    match stop {
        Stop::At(t) => {
            while t > sys.time {
                if let Advance::Reached = sys.advance(rng, t, log.as_deref_mut()) {
                    break;
                }
            }
        }
        Stop::UntilMonomorphic { max_time } => {
            while !sys.is_monomorphic() && sys.time < max_time {
                if let Advance::Reached = sys.advance(rng, max_time, log.as_deref_mut()) {
                    break;
                }
            }
        }
    }
    if let Some(log) = log {
        log.horizon = sys.time;
    }
    let fixation = sys.fixation();
    Ok(PathRecord {
        population: sys.size() - opts.skip,
        samples,
        fixation,
        fixation_time: if fixation == Fixation::Censored { None } else { sys.fixation_time },
        end_time: sys.time,
        events: sys.events,
        snapshots,
    })
}
