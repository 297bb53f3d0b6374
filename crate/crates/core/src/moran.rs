//! The unordered seed-bank Moran model.
//!
//! Two exact engines share the same law for the frequency process:
//! [`simulate`] moves individuals around, [`simulate_counts`] runs the lumped
//! chain on `(Nz₁, Nz₂, Nz₃, s)` directly, which is much cheaper at large N.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::events::{EventClass, EventLog, EventTag, RateAudit};
use crate::model::{Composition, FrequencyState, PopulationState, SimParams};
use crate::particle::{self, Advance, ParentRule, ParticleSystem, RunOptions};
use crate::path::{Fixation, FrequencySample, PathRecord, SamplingGrid, Stop};
use crate::rng::holding_time;

pub use crate::model::frequencies;

/// A running Moran population with O(1) event bookkeeping.
pub struct MoranProcess<'p> {
    sys: ParticleSystem<'p>,
}

impl<'p> MoranProcess<'p> {
    pub fn new(state: PopulationState, params: &'p SimParams) -> Result<Self> {
        Ok(Self {
            sys: ParticleSystem::new(state, params, ParentRule::Uniform)?,
        })
    }

    /// Performs the next event. Returns `None` if every clock has rate zero.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<EventTag> {
        match self.sys.advance(rng, f64::INFINITY, None) {
            Advance::Event(tag) => Some(tag),
            Advance::Reached => None,
        }
    }

    #[must_use]
    pub fn state(&self) -> PopulationState {
        self.sys.state()
    }

    #[must_use]
    pub fn frequencies(&self) -> FrequencyState {
        self.sys.frequencies()
    }

    #[must_use]
    pub fn time(&self) -> f64 {
        self.sys.time
    }

    #[must_use]
    pub fn audit(&self) -> &RateAudit {
        &self.sys.audit
    }
}

/// One event of the Moran model from `state`.
///
/// Builds the index structures from scratch; use [`MoranProcess`] for long runs.
pub fn step<R: Rng + ?Sized>(
    state: &PopulationState,
    params: &SimParams,
    rng: &mut R,
) -> Result<(PopulationState, EventTag)> {
    let mut p = MoranProcess::new(state.clone(), params)?;
    let tag = p
        .step(rng)
        .ok_or_else(|| Error::InvalidState("no event can occur from this state".into()))?;
    Ok((p.state(), tag))
}

/// Runs the individual-level model and records frequencies on `grid`.
pub fn simulate<R: Rng + ?Sized>(
    init: PopulationState,
    params: &SimParams,
    stop: Stop,
    grid: &SamplingGrid,
    rng: &mut R,
) -> Result<PathRecord> {
    simulate_with(init, params, stop, grid, rng, None, false).map(|(rec, _)| rec)
}

/// Like [`simulate`], optionally logging events and keeping per-individual snapshots.
pub fn simulate_with<R: Rng + ?Sized>(
    init: PopulationState,
    params: &SimParams,
    stop: Stop,
    grid: &SamplingGrid,
    rng: &mut R,
    log: Option<&mut EventLog>,
    snapshots: bool,
) -> Result<(PathRecord, RateAudit)> {
    let mut sys = ParticleSystem::new(init, params, ParentRule::Uniform)?;
    let rec = particle::run(
        &mut sys,
        stop,
        grid,
        rng,
        log,
        RunOptions {
            snapshots,
            skip: 0,
        },
    )?;
    Ok((rec, sys.audit.clone()))
}

/// State of the lumped frequency chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CountState {
    pub n: usize,
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
    pub env: bool,
}

impl CountState {
    #[must_use]
    pub fn from_composition(c: &Composition, env: bool) -> Self {
        Self {
            n: c.size(),
            k1: c.heart_active,
            k2: c.heart_dormant,
            k3: c.heart_active + c.spade_active,
            env,
        }
    }

    #[must_use]
    pub fn frequencies(&self) -> FrequencyState {
        let n = self.n as f64;
        FrequencyState {
            z1: self.k1 as f64 / n,
            z2: self.k2 as f64 / n,
            z3: self.k3 as f64 / n,
            env: self.env,
        }
    }

    fn monomorphic(&self) -> Option<Fixation> {
        if self.k1 + self.k2 == self.n {
            Some(Fixation::Heart)
        } else if self.k1 + self.k2 == 0 {
            Some(Fixation::Spade)
        } else {
            None
        }
    }
}

/// Transition classes of the lumped chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CountMove {
    PairUp,
    PairDown,
    HeartSleeps,
    HeartWakes,
    SpadeSleeps,
    SpadeWakes,
    EnvFlip,
    Large,
    SingleMutation,
    Coordinated,
}

/// Runs the Moran frequency process as a Markov chain on counts.
///
/// A pair event changes `Nz₁` only when it joins an active ♥ with an active ♠
/// (rate `a₀ k₁(k₃−k₁)`, ±1 with equal probability). A Λ atom event thins the
/// active ♥ and ♠ into `H` and `S` participants; the parent is ♥ with
/// probability `H/(H+S)`.
pub fn simulate_counts<R: Rng + ?Sized>(
    init: CountState,
    params: &SimParams,
    stop: Stop,
    grid: &SamplingGrid,
    rng: &mut R,
) -> Result<PathRecord> {
    params.validate()?;
    if init.n == 0 || init.k1 > init.k3 || init.k2 + init.k3 > init.n {
        return Err(Error::InvalidState(format!("{init:?} is not a valid count state")));
    }
    if matches!(stop, Stop::UntilMonomorphic { .. }) && !params.mutation.is_zero() {
        return Err(Error::Unsupported(
            "running until monomorphic needs a zero mutation measure".into(),
        ));
    }
    let limit = stop.time_limit();
    let lambda = params.lambda.total_event_rates()?;
    let mutation = params.mutation.total_event_rates()?;
    let a0 = params.lambda.kingman_mass;
    let b0 = params.mutation.kingman_mass;
    let (alpha, sigma) = (params.alpha, params.sigma);
    let mut s = init;
    let mut t = 0.0;
    let mut events = 0u64;
    let mut fixation_time = s.monomorphic().map(|_| 0.0);
    let mut samples = Vec::with_capacity(grid.times().len());
    let mut grid_iter = grid.times().iter().copied().filter(|g| *g <= limit).peekable();

    let mut moves = [(CountMove::PairUp, 0.0); 10];
    loop {
        let sa = (s.k3 - s.k1) as f64;
        let k1 = s.k1 as f64;
        let pair = 0.5 * a0 * k1 * sa;
        moves[0] = (CountMove::PairUp, pair);
        moves[1] = (CountMove::PairDown, pair);
        moves[2] = (CountMove::HeartSleeps, alpha * k1);
        moves[3] = (CountMove::HeartWakes, sigma * s.k2 as f64);
        moves[4] = (CountMove::SpadeSleeps, alpha * sa);
        moves[5] = (CountMove::SpadeWakes, sigma * (s.n - s.k3 - s.k2) as f64);
        moves[6] = (CountMove::EnvFlip, params.env_flip_rate(s.env));
        moves[7] = (CountMove::Large, lambda.aggregate);
        let (single, coord) = if s.env { (b0 * sa, mutation.aggregate) } else { (0.0, 0.0) };
        moves[8] = (CountMove::SingleMutation, single);
        moves[9] = (CountMove::Coordinated, coord);
        let total: f64 = moves.iter().map(|m| m.1).sum();
        let next = t + holding_time(rng, total);

        while let Some(&g) = grid_iter.peek() {
            if g < next {
                samples.push(FrequencySample {
                    t: g,
                    state: s.frequencies(),
                });
                grid_iter.next();
            } else {
                break;
            }
        }
        let done = match stop {
            Stop::At(_) => next > limit,
            Stop::UntilMonomorphic { .. } => {
                next > limit || (s.monomorphic().is_some() && grid_iter.peek().is_none())
            }
        };
        if done {
            if next > limit {
                t = limit;
            }
            break;
        }
        t = next;
        events += 1;

        let mut u = rng.random::<f64>() * total;
        let mut chosen = CountMove::Coordinated;
        for &(m, r) in &moves {
            if r > 0.0 && u < r {
                chosen = m;
                break;
            }
            u -= r;
        }
        if moves.iter().find(|m| m.0 == chosen).map_or(0.0, |m| m.1) <= 0.0 {
            chosen = moves.iter().rev().find(|m| m.1 > 0.0).expect("positive rate").0;
        }
        match chosen {
            CountMove::PairUp => s.k1 += 1,
            CountMove::PairDown => s.k1 -= 1,
            CountMove::HeartSleeps => {
                s.k1 -= 1;
                s.k2 += 1;
                s.k3 -= 1;
            }
            CountMove::HeartWakes => {
                s.k1 += 1;
                s.k2 -= 1;
                s.k3 += 1;
            }
            CountMove::SpadeSleeps => s.k3 -= 1,
            CountMove::SpadeWakes => s.k3 += 1,
            CountMove::EnvFlip => s.env = !s.env,
            CountMove::Large => {
                let mut u = rng.random::<f64>() * lambda.aggregate;
                let mut j = lambda.per_atom.len() - 1;
                for (i, r) in lambda.per_atom.iter().enumerate() {
                    if u < *r {
                        j = i;
                        break;
                    }
                    u -= r;
                }
                let y = params.lambda.atoms[j].location;
                let h = thin(s.k1, y, rng);
                let sp = thin(s.k3 - s.k1, y, rng);
                if h + sp >= 2 {
                    if rng.random_range(0..h + sp) < h {
                        s.k1 += sp;
                    } else {
                        s.k1 -= h;
                    }
                }
            }
            CountMove::SingleMutation => s.k1 += 1,
            CountMove::Coordinated => {
                let mut u = rng.random::<f64>() * mutation.aggregate;
                let mut j = mutation.per_atom.len() - 1;
                for (i, r) in mutation.per_atom.iter().enumerate() {
                    if u < *r {
                        j = i;
                        break;
                    }
                    u -= r;
                }
                let y = params.mutation.atoms[j].location;
                s.k1 += thin(s.k3 - s.k1, y, rng);
            }
        }
        match (s.monomorphic(), fixation_time) {
            (Some(_), None) => fixation_time = Some(t),
            (None, Some(_)) => fixation_time = None,
            _ => {}
        }
    }
    let fixation = s.monomorphic().unwrap_or(Fixation::Censored);
    Ok(PathRecord {
        population: s.n,
        samples,
        fixation,
        fixation_time: if fixation == Fixation::Censored { None } else { fixation_time },
        end_time: t,
        events,
        snapshots: Vec::new(),
    })
}

fn thin<R: Rng + ?Sized>(k: usize, y: f64, rng: &mut R) -> usize {
    if y >= 1.0 || k == 0 {
        if y >= 1.0 {
            k
        } else {
            0
        }
    } else {
        Binomial::new(k as u64, y).expect("valid binomial").sample(rng) as usize
    }
}

/// Event class counts of a run, for audits.
#[must_use]
pub fn class_count(audit: &RateAudit, class: EventClass) -> u64 {
    audit.counts[class.index()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{MeasureKind, MeasureSpec};
    use crate::model::{Activity, Allele, Individual};
    use crate::rng::{StreamFactory, StreamRole};
    use crate::stats::SampleSummary;

    const HA: Individual = Individual::new(Allele::Heart, Activity::Active);
    const SA: Individual = Individual::new(Allele::Spade, Activity::Active);
    const HD: Individual = Individual::new(Allele::Heart, Activity::Dormant);
    const SD: Individual = Individual::new(Allele::Spade, Activity::Dormant);

    fn rng(i: u64) -> crate::rng::SimRng {
        StreamFactory::new(99).stream(StreamRole::Forward, i)
    }

    #[test]
    fn single_pair_event() {
        let params = SimParams::kingman(2.0, 0.0, 0.0);
        let state = PopulationState::new(vec![HA, SA], false).unwrap();
        let mut hearts = 0;
        let mut times = SampleSummary::default();
        for i in 0..4000 {
            let (next, tag) = step(&state, &params, &mut rng(i)).unwrap();
            assert_eq!(tag.class, EventClass::SmallReproduction);
            assert_eq!(next.individuals[0].allele, next.individuals[1].allele);
            if next.individuals[0].allele == Allele::Heart {
                hearts += 1;
            }
            times.push(next.time);
        }
        // total rate 2: holding time mean 1/2
        assert!((times.mean() - 0.5).abs() < 4.0 * times.standard_error());
        assert!((f64::from(hearts) / 4000.0 - 0.5).abs() < 4.0 * (0.25f64 / 4000.0).sqrt());
    }

    #[test]
    fn mutations_need_active_individuals() {
        let params = SimParams::kingman(1.0, 0.0, 0.0)
            .with_mutation(MeasureSpec::new(MeasureKind::Mutation, 3.0, &[(0.5, 1.0)]));
        let state = PopulationState::new(vec![SD, SD, SD], true).unwrap();
        let mut p = MoranProcess::new(state, &params).unwrap();
        let mut r = rng(0);
        for _ in 0..50 {
            match p.step(&mut r) {
                Some(tag) => assert_eq!(tag.class, EventClass::CoordinatedMutation),
                None => break,
            }
        }
        assert_eq!(p.frequencies().z1 + p.frequencies().z2, 0.0);
    }

    #[test]
    fn full_participation_sweeps_population() {
        let params = SimParams::new(
            MeasureSpec::new(MeasureKind::Reproduction, 0.0, &[(1.0, 1.0)]),
            MeasureSpec::zero(MeasureKind::Mutation),
            0.0,
            0.0,
        );
        let state = PopulationState::new(vec![HA, SA, SA, HA, SA], false).unwrap();
        for i in 0..20 {
            let (next, tag) = step(&state, &params, &mut rng(i)).unwrap();
            assert_eq!(tag.class, EventClass::LargeReproduction);
            assert!(next.is_monomorphic());
        }
    }

    #[test]
    fn monomorphic_starts_return_immediately() {
        let params = SimParams::kingman(1.0, 1.0, 1.0);
        let init = PopulationState::new(vec![HA, HD, HA], false).unwrap();
        let grid = SamplingGrid::empty();
        let rec = simulate(init, &params, Stop::UntilMonomorphic { max_time: 1e6 }, &grid, &mut rng(0)).unwrap();
        assert_eq!(rec.fixation, Fixation::Heart);
        assert_eq!(rec.end_time, 0.0);
        assert_eq!(rec.events, 0);

        let init = PopulationState::new(vec![SA, SD, SA, SA], true).unwrap();
        let grid = SamplingGrid::uniform(2.0, 0.5).unwrap();
        let rec = simulate(init, &params, Stop::At(2.0), &grid, &mut rng(1)).unwrap();
        assert_eq!(rec.fixation, Fixation::Spade);
        assert!(rec.samples.iter().all(|s| s.state.z1 + s.state.z2 == 0.0));
    }

    #[test]
    fn until_monomorphic_rejects_mutation() {
        let params = SimParams::kingman(1.0, 1.0, 1.0)
            .with_mutation(MeasureSpec::kingman(MeasureKind::Mutation, 1.0));
        let init = PopulationState::new(vec![HA, SA], true).unwrap();
        let stop = Stop::UntilMonomorphic { max_time: 10.0 };
        assert!(simulate(init, &params, stop, &SamplingGrid::empty(), &mut rng(0)).is_err());
        let c = CountState { n: 2, k1: 1, k2: 0, k3: 2, env: true };
        assert!(simulate_counts(c, &params, stop, &SamplingGrid::empty(), &mut rng(0)).is_err());
    }

    #[test]
    fn heart_fixation_is_fair_from_symmetric_start() {
        let params = SimParams::kingman(1.0, 1.0, 1.0);
        let comp = Composition {
            heart_active: 8,
            heart_dormant: 7,
            spade_active: 7,
            spade_dormant: 8,
        };
        let reps = 10_000u64;
        let mut hearts = 0u64;
        for i in 0..reps {
            let mut r = rng(i);
            let init = PopulationState::new(comp.exchangeable(&mut r), i % 2 == 0).unwrap();
            let rec = simulate(init, &params, Stop::UntilMonomorphic { max_time: 1e6 }, &SamplingGrid::empty(), &mut r).unwrap();
            assert_ne!(rec.fixation, Fixation::Censored);
            hearts += u64::from(rec.fixation == Fixation::Heart);
        }
        let p = hearts as f64 / reps as f64;
        assert!((p - 0.5).abs() < 4.0 * (0.25 / reps as f64).sqrt(), "p = {p}");
    }

    #[test]
    fn event_rates_match_audit() {
        let params = SimParams::new(
            MeasureSpec::new(MeasureKind::Reproduction, 1.0, &[(0.4, 0.5)]),
            MeasureSpec::new(MeasureKind::Mutation, 0.5, &[(0.3, 0.3)]),
            1.0,
            2.0,
        );
        let comp = Composition {
            heart_active: 5,
            heart_dormant: 5,
            spade_active: 5,
            spade_dormant: 5,
        };
        let mut total = RateAudit::default();
        for i in 0..200 {
            let mut r = rng(i);
            let init = PopulationState::new(comp.exchangeable(&mut r), true).unwrap();
            let (_, audit) =
                simulate_with(init, &params, Stop::At(5.0), &SamplingGrid::empty(), &mut r, None, false).unwrap();
            total.merge(&audit);
        }
        for c in EventClass::ALL {
            let (n, e) = (total.counts[c.index()] as f64, total.integrated[c.index()]);
            assert!(e > 50.0, "{c:?} barely exercised");
            // Poisson counting error, with slack for the random compensator
            assert!((n - e).abs() < 5.0 * e.sqrt() + 0.02 * e, "{c:?}: {n} vs {e}");
        }
    }

    #[test]
    fn count_chain_matches_individual_engine() {
        let params = SimParams::new(
            MeasureSpec::new(MeasureKind::Reproduction, 1.0, &[(0.4, 0.5)]),
            MeasureSpec::new(MeasureKind::Mutation, 0.5, &[(0.3, 0.6)]),
            1.0,
            1.0,
        );
        let comp = Composition {
            heart_active: 3,
            heart_dormant: 2,
            spade_active: 2,
            spade_dormant: 3,
        };
        let grid = SamplingGrid::new(vec![1.0]).unwrap();
        let reps = 4000;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..reps {
            let mut r = rng(i);
            let init = PopulationState::new(comp.exchangeable(&mut r), true).unwrap();
            let rec = simulate(init, &params, Stop::At(1.0), &grid, &mut r).unwrap();
            a.push(rec.samples[0].state.z1 + 2.0 * rec.samples[0].state.z2);
            let mut r2 = StreamFactory::new(5).stream(StreamRole::Forward, i);
            let rec = simulate_counts(CountState::from_composition(&comp, true), &params, Stop::At(1.0), &grid, &mut r2).unwrap();
            b.push(rec.samples[0].state.z1 + 2.0 * rec.samples[0].state.z2);
        }
        let ks = crate::stats::ks_two_sample(&a, &b).unwrap();
        assert!(ks.p_value > 0.001, "{ks:?}");
    }
}
