//! The ordered lookdown version of the seed-bank Moran model.
//!
//! Same event drivers as [`crate::moran`]; the parent of a reproduction event
//! is always the lowest participating level. Levels are numbered from 1 in
//! every public interface.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::model::{Activity, Allele, Composition, FrequencyState, Individual, PopulationState, SimParams};
use crate::particle::{self, ParentRule, ParticleSystem, RunOptions};
use crate::path::{PathRecord, SamplingGrid, Stop};

/// Individuals indexed by level (index 0 is level 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookdownState {
    pub levels: Vec<Individual>,
    pub env: bool,
    pub time: f64,
}

impl LookdownState {
    pub fn new(levels: Vec<Individual>, env: bool) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidState("lookdown needs at least one level".into()));
        }
        Ok(Self {
            levels,
            env,
            time: 0.0,
        })
    }

    /// Exchangeable start: the multiset placed on the levels uniformly at random.
    pub fn exchangeable<R: Rng + ?Sized>(c: &Composition, env: bool, rng: &mut R) -> Result<Self> {
        Self::new(c.exchangeable(rng), env)
    }

    fn into_population(self) -> PopulationState {
        PopulationState {
            individuals: self.levels,
            env: self.env,
            time: self.time,
        }
    }
}

/// A lookdown run with its replayable event log.
#[derive(Clone, Debug)]
pub struct LookdownRun {
    pub record: PathRecord,
    pub log: EventLog,
}

/// Runs the lookdown model and records frequencies on `grid`.
pub fn simulate_lookdown<R: Rng + ?Sized>(
    init: LookdownState,
    params: &SimParams,
    stop: Stop,
    grid: &SamplingGrid,
    rng: &mut R,
) -> Result<PathRecord> {
    let mut sys = ParticleSystem::new(init.into_population(), params, ParentRule::Lowest)?;
    particle::run(&mut sys, stop, grid, rng, None, RunOptions::default())
}

/// Runs the lookdown model keeping the event log (and per-level snapshots if asked).
pub fn simulate_lookdown_logged<R: Rng + ?Sized>(
    init: LookdownState,
    params: &SimParams,
    stop: Stop,
    grid: &SamplingGrid,
    rng: &mut R,
    snapshots: bool,
) -> Result<LookdownRun> {
    let n = init.levels.len();
    let mut sys = ParticleSystem::new(init.into_population(), params, ParentRule::Lowest)?;
    let mut log = EventLog::new(n);
    let record = particle::run(
        &mut sys,
        stop,
        grid,
        rng,
        Some(&mut log),
        RunOptions {
            snapshots,
            skip: 0,
        },
    )?;
    Ok(LookdownRun { record, log })
}

/// A permutation of `0..N` stored as `theta[i] = level index of Moran individual i`.
pub type Permutation = Vec<usize>;

#[must_use]
pub fn is_bijection(theta: &[usize]) -> bool {
    let mut seen = vec![false; theta.len()];
    for &t in theta {
        if t >= theta.len() || seen[t] {
            return false;
        }
        seen[t] = true;
    }
    true
}

pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Permutation {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Position of `theta` in the lexicographic order of S_N (Lehmer code).
#[must_use]
pub fn permutation_rank(theta: &[usize]) -> usize {
    let n = theta.len();
    let mut rank = 0;
    for i in 0..n {
        let smaller = theta[i + 1..].iter().filter(|&&x| x < theta[i]).count();
        rank = rank * (n - i) + smaller;
    }
    rank
}

/// Θ(t) of the permutation coupling, sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationCoupling {
    pub theta0: Permutation,
    pub samples: Vec<(f64, Permutation)>,
    /// Number of reproduction events replayed.
    pub moves: usize,
}

/// Builds Θ from a lookdown event log.
///
/// At every reproduction event the Moran individuals currently mapped to the
/// involved levels receive those levels in a fresh uniformly random order;
/// everyone else keeps their level.
pub fn couple_permutation<R: Rng + ?Sized>(
    log: &EventLog,
    theta0: Permutation,
    grid: &SamplingGrid,
    rng: &mut R,
) -> Result<PermutationCoupling> {
    log.check_consistent()?;
    let n = log.population;
    if theta0.len() != n || !is_bijection(&theta0) {
        return Err(Error::InvalidState(format!(
            "theta0 must be a permutation of {n} elements"
        )));
    }
    if grid.last().is_some_and(|g| g > log.horizon) {
        return Err(Error::InvalidState(format!(
            "grid extends past the logged run horizon {}",
            log.horizon
        )));
    }
    let mut theta = theta0.clone();
    let mut inverse = vec![0usize; n];
    for (i, &l) in theta.iter().enumerate() {
        inverse[l] = i;
    }
    let mut samples = Vec::with_capacity(grid.times().len());
    let mut grid_iter = grid.times().iter().copied().peekable();
    let mut moves = 0;
    let mut levels: Vec<usize> = Vec::new();
    let mut holders: Vec<usize> = Vec::new();
    for e in log.reproductions() {
        while let Some(&g) = grid_iter.peek() {
            if g < e.t {
                samples.push((g, theta.clone()));
                grid_iter.next();
            } else {
                break;
            }
        }
        levels.clear();
        levels.extend(e.levels.iter().map(|&l| l as usize - 1));
        holders.clear();
        holders.extend(levels.iter().map(|&l| inverse[l]));
        levels.shuffle(rng);
        for (&i, &l) in holders.iter().zip(&levels) {
            theta[i] = l;
            inverse[l] = i;
        }
        moves += 1;
    }
    for g in grid_iter {
        samples.push((g, theta.clone()));
    }
    Ok(PermutationCoupling {
        theta0,
        samples,
        moves,
    })
}

/// `Y_i = X_{Θ(i)}`: the Moran population read off the lookdown levels.
#[must_use]
pub fn coupled_population(levels: &[Individual], theta: &[usize]) -> Vec<Individual> {
    theta.iter().map(|&l| levels[l]).collect()
}

/// Backward ancestry of one sampled level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncestralLine {
    pub level: u32,
    pub sample_time: f64,
    /// `(backward time, level)` after each jump, starting with `(0, level)`.
    pub trace: Vec<(f64, u32)>,
    /// First backward time at level 1; `None` if not reached before time 0.
    pub tau: Option<f64>,
}

impl AncestralLine {
    /// Level occupied after `u` units of backward time.
    #[must_use]
    pub fn level_at(&self, u: f64) -> u32 {
        self.trace
            .iter()
            .take_while(|(b, _)| *b <= u)
            .last()
            .map_or(self.level, |&(_, l)| l)
    }
}

/// Follows level `level` at time `sample_time` back to time 0.
pub fn trace_ancestry(log: &EventLog, level: u32, sample_time: f64) -> Result<AncestralLine> {
    log.check_consistent()?;
    if level == 0 || level as usize > log.population {
        return Err(Error::InvalidParams(format!(
            "level {level} is outside 1..={}",
            log.population
        )));
    }
    if !(sample_time >= 0.0 && sample_time <= log.horizon) {
        return Err(Error::InvalidParams(format!(
            "sample time {sample_time} is outside the run [0, {}]",
            log.horizon
        )));
    }
    let mut current = level;
    let mut trace = vec![(0.0, level)];
    let mut tau = (level == 1).then_some(0.0);
    for e in log.reproductions().rev() {
        if current == 1 {
            break;
        }
        if e.t > sample_time {
            continue;
        }
        if e.levels[1..].contains(&current) {
            current = e.levels[0];
            let back = sample_time - e.t;
            trace.push((back, current));
            if current == 1 {
                tau = Some(back);
            }
        }
    }
    Ok(AncestralLine {
        level,
        sample_time,
        trace,
        tau,
    })
}

/// How the population conditioned on ♥ fixing is simulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionedMode {
    /// Full N-level lookdown with level 1 forced to ♥; report levels 2..N.
    Direct,
    /// (N−1)-level lookdown with an autonomous environment and the induced mutation measure.
    Reduced,
}

/// Level 1 drawn uniformly among the ♥ individuals of `c`; the rest arranged exchangeably.
fn conditioned_start<R: Rng + ?Sized>(c: &Composition, rng: &mut R) -> Result<(Individual, Vec<Individual>)> {
    let hearts = c.heart_active + c.heart_dormant;
    if hearts == 0 {
        return Err(Error::InvalidState(
            "conditioning on ♥ fixation needs at least one ♥ individual".into(),
        ));
    }
    let first_active = rng.random_range(0..hearts) < c.heart_active;
    let mut rest = *c;
    let first = if first_active {
        rest.heart_active -= 1;
        Individual::new(Allele::Heart, Activity::Active)
    } else {
        rest.heart_dormant -= 1;
        Individual::new(Allele::Heart, Activity::Dormant)
    };
    Ok((first, rest.exchangeable(rng)))
}

/// The population conditioned on ♥ fixing, seen through levels 2..N.
///
/// Each sample holds the frequencies of the N−1 upper levels and, in `env`,
/// whether level 1 is active. Use [`full_frequency`] to recover the frequencies
/// of all N individuals.
pub fn conditioned_model<R: Rng + ?Sized>(
    params: &SimParams,
    init: &Composition,
    mode: ConditionedMode,
    stop: Stop,
    grid: &SamplingGrid,
    rng: &mut R,
) -> Result<PathRecord> {
    params.validate()?;
    if !params.mutation.is_zero() {
        return Err(Error::Unsupported(
            "the conditioned model is defined for reproduction-only dynamics (zero mutation)".into(),
        ));
    }
    if init.size() < 2 {
        return Err(Error::InvalidState("the conditioned model needs N ≥ 2".into()));
    }
    let (first, rest) = conditioned_start(init, rng)?;
    match mode {
        ConditionedMode::Direct => {
            let mut levels = Vec::with_capacity(init.size());
            levels.push(first);
            levels.extend(rest);
            let state = PopulationState::new(levels, first.is_active())?;
            let mut sys = ParticleSystem::new(state, params, ParentRule::Lowest)?;
            particle::run(&mut sys, stop, grid, rng, None, RunOptions { snapshots: false, skip: 1 })
        }
        ConditionedMode::Reduced => {
            let reduced = SimParams {
                mutation: params.lambda.induced_mutation_measure()?,
                ..params.clone()
            };
            let state = PopulationState::new(rest, first.is_active())?;
            let mut sys = ParticleSystem::new(state, &reduced, ParentRule::Lowest)?;
            particle::run(&mut sys, stop, grid, rng, None, RunOptions::default())
        }
    }
}

/// Frequencies of all N individuals from the upper-level frequencies and ξ.
#[must_use]
pub fn full_frequency(upper: &FrequencyState, n: usize) -> FrequencyState {
    let nf = n as f64;
    let xi = upper.s();
    // back to integer counts so the result sits exactly on the k/N lattice
    let count = |z: f64| (z * (nf - 1.0)).round();
    FrequencyState {
        z1: (count(upper.z1) + xi) / nf,
        z2: (count(upper.z2) + 1.0 - xi) / nf,
        z3: (count(upper.z3) + xi) / nf,
        env: upper.env,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{EventClass, LoggedEvent};
    use crate::measures::{MeasureKind, MeasureSpec};
    use crate::rng::{StreamFactory, StreamRole};
    use crate::stats::chi_square_uniformity;

    const HA: Individual = Individual::new(Allele::Heart, Activity::Active);
    const SA: Individual = Individual::new(Allele::Spade, Activity::Active);

    fn rng(i: u64) -> crate::rng::SimRng {
        StreamFactory::new(41).stream(StreamRole::Forward, i)
    }

    fn pair(t: f64, a: u32, b: u32) -> LoggedEvent {
        LoggedEvent {
            t,
            class: EventClass::SmallReproduction,
            levels: vec![a, b],
            atom: None,
        }
    }

    #[test]
    fn lower_level_is_parent() {
        let params = SimParams::kingman(1.0, 0.0, 0.0);
        for i in 0..200 {
            let levels = vec![SA, HA, SA, HA, SA];
            let init = LookdownState::new(levels.clone(), false).unwrap();
            let run = simulate_lookdown_logged(init, &params, Stop::At(0.3), &SamplingGrid::new(vec![0.3]).unwrap(), &mut rng(i), true).unwrap();
            // replay: every copy flows upwards
            let mut replay = levels.clone();
            for e in run.log.reproductions() {
                assert!(e.levels[1..].iter().all(|&l| l > e.levels[0]));
                let a = replay[e.levels[0] as usize - 1].allele;
                for &l in &e.levels[1..] {
                    replay[l as usize - 1].allele = a;
                }
            }
            let snap = &run.record.snapshots[0].individuals;
            assert_eq!(replay.iter().map(|x| x.allele).collect::<Vec<_>>(), snap.iter().map(|x| x.allele).collect::<Vec<_>>());
            assert_eq!(snap[0].allele, Allele::Spade);
        }
    }

    #[test]
    fn full_participation_copies_level_one() {
        let params = SimParams::new(
            MeasureSpec::new(MeasureKind::Reproduction, 0.0, &[(1.0, 1.0)]),
            MeasureSpec::zero(MeasureKind::Mutation),
            0.0,
            0.0,
        );
        let init = LookdownState::new(vec![HA, SA, SA, SA], false).unwrap();
        let run = simulate_lookdown_logged(init, &params, Stop::At(50.0), &SamplingGrid::new(vec![50.0]).unwrap(), &mut rng(0), false).unwrap();
        assert!(run.log.events.iter().all(|e| e.levels == vec![1, 2, 3, 4]));
        assert_eq!(run.record.samples[0].state.z1, 1.0);
    }

    #[test]
    fn coupling_without_events_keeps_theta0() {
        let log = EventLog {
            population: 3,
            horizon: 1.0,
            events: vec![],
        };
        let c = couple_permutation(&log, vec![2, 0, 1], &SamplingGrid::new(vec![0.5, 1.0]).unwrap(), &mut rng(0)).unwrap();
        assert!(c.samples.iter().all(|(_, p)| p == &vec![2, 0, 1]));
    }

    #[test]
    fn coupling_after_one_pair_event_is_uniform_on_s2() {
        let log = EventLog {
            population: 2,
            horizon: 1.0,
            events: vec![pair(0.5, 1, 2)],
        };
        let grid = SamplingGrid::new(vec![1.0]).unwrap();
        let mut counts = [0u64; 2];
        for i in 0..10_000 {
            let c = couple_permutation(&log, vec![0, 1], &grid, &mut rng(i)).unwrap();
            counts[permutation_rank(&c.samples[0].1)] += 1;
        }
        assert!(chi_square_uniformity(&counts).unwrap().p_value > 1e-3, "{counts:?}");
    }

    #[test]
    fn coupling_rejects_inconsistent_logs() {
        let grid = SamplingGrid::new(vec![1.0]).unwrap();
        let log = EventLog {
            population: 2,
            horizon: 1.0,
            events: vec![pair(0.5, 1, 3)],
        };
        assert!(couple_permutation(&log, vec![0, 1], &grid, &mut rng(0)).is_err());
        let log = EventLog {
            population: 2,
            horizon: 0.4,
            events: vec![pair(0.5, 1, 2)],
        };
        assert!(couple_permutation(&log, vec![0, 1], &grid, &mut rng(0)).is_err());
        let ok = EventLog {
            population: 2,
            horizon: 1.0,
            events: vec![],
        };
        assert!(couple_permutation(&ok, vec![0, 0], &grid, &mut rng(0)).is_err());
    }

    #[test]
    fn permutation_rank_is_a_bijection() {
        let mut seen = std::collections::BTreeSet::new();
        let mut r = rng(3);
        for _ in 0..2000 {
            let p = random_permutation(4, &mut r);
            let k = permutation_rank(&p);
            assert!(k < 24);
            seen.insert(k);
        }
        assert_eq!(seen.len(), 24);
        assert_eq!(permutation_rank(&[0, 1, 2, 3]), 0);
        assert_eq!(permutation_rank(&[3, 2, 1, 0]), 23);
    }

    #[test]
    fn ancestry_examples() {
        let log = EventLog {
            population: 4,
            horizon: 2.0,
            events: vec![pair(0.5, 1, 3), pair(1.5, 2, 4)],
        };
        let top = trace_ancestry(&log, 1, 2.0).unwrap();
        assert_eq!(top.tau, Some(0.0));
        assert_eq!(top.trace, vec![(0.0, 1)]);
        let three = trace_ancestry(&log, 3, 2.0).unwrap();
        assert_eq!(three.tau, Some(1.5));
        assert_eq!(three.level_at(1.0), 3);
        assert_eq!(three.level_at(1.6), 1);
        let four = trace_ancestry(&log, 4, 2.0).unwrap();
        assert_eq!(four.trace, vec![(0.0, 4), (0.5, 2)]);
        assert_eq!(four.tau, None);
        let untouched = trace_ancestry(&log, 2, 2.0).unwrap();
        assert_eq!(untouched.tau, None);
        assert!(trace_ancestry(&log, 5, 1.0).is_err());
        assert!(trace_ancestry(&log, 2, 3.0).is_err());
    }

    #[test]
    fn ancestry_levels_never_increase() {
        let params = SimParams::new(
            MeasureSpec::new(MeasureKind::Reproduction, 1.0, &[(0.5, 0.5)]),
            MeasureSpec::zero(MeasureKind::Mutation),
            1.0,
            1.0,
        );
        let c = Composition { heart_active: 3, heart_dormant: 2, spade_active: 2, spade_dormant: 3 };
        for i in 0..50 {
            let mut r = rng(i);
            let init = LookdownState::exchangeable(&c, true, &mut r).unwrap();
            let run = simulate_lookdown_logged(init, &params, Stop::At(3.0), &SamplingGrid::empty(), &mut r, false).unwrap();
            for lvl in 1..=10 {
                let line = trace_ancestry(&run.log, lvl, 3.0).unwrap();
                assert!(line.trace.windows(2).all(|w| w[1].1 < w[0].1 && w[1].0 >= w[0].0));
            }
        }
    }

    #[test]
    fn conditioned_model_rejects_mutation_and_no_hearts() {
        let c = Composition { heart_active: 1, heart_dormant: 0, spade_active: 1, spade_dormant: 1 };
        let grid = SamplingGrid::new(vec![1.0]).unwrap();
        let p = SimParams::kingman(1.0, 1.0, 1.0).with_mutation(MeasureSpec::kingman(MeasureKind::Mutation, 1.0));
        assert!(conditioned_model(&p, &c, ConditionedMode::Direct, Stop::At(1.0), &grid, &mut rng(0)).is_err());
        let none = Composition { heart_active: 0, heart_dormant: 0, spade_active: 2, spade_dormant: 1 };
        let p = SimParams::kingman(1.0, 1.0, 1.0);
        assert!(conditioned_model(&p, &none, ConditionedMode::Reduced, Stop::At(1.0), &grid, &mut rng(0)).is_err());
    }

    #[test]
    fn no_deactivation_keeps_environment_on() {
        let c = Composition { heart_active: 1, heart_dormant: 0, spade_active: 3, spade_dormant: 2 };
        let p = SimParams::kingman(1.0, 0.0, 1.0);
        let grid = SamplingGrid::uniform(2.0, 0.25).unwrap();
        for mode in [ConditionedMode::Direct, ConditionedMode::Reduced] {
            for i in 0..20 {
                let rec = conditioned_model(&p, &c, mode, Stop::At(2.0), &grid, &mut rng(i)).unwrap();
                assert!(rec.samples.iter().all(|s| s.state.env), "{mode:?}");
                assert_eq!(rec.population, 5);
            }
        }
    }

    #[test]
    fn direct_mode_decomposes_full_frequency() {
        let c = Composition { heart_active: 2, heart_dormant: 1, spade_active: 1, spade_dormant: 2 };
        let upper = FrequencyState::new(0.2, 0.2, 0.4, true);
        let full = full_frequency(&upper, 6);
        assert!((full.z1 - (1.0 / 6.0 + 5.0 / 6.0 * 0.2)).abs() < 1e-15);
        assert!((full.z2 - 5.0 / 6.0 * 0.2).abs() < 1e-15);
        let p = SimParams::kingman(1.0, 1.0, 1.0);
        let rec = conditioned_model(&p, &c, ConditionedMode::Direct, Stop::At(0.0), &SamplingGrid::new(vec![0.0]).unwrap(), &mut rng(9)).unwrap();
        let s = full_frequency(&rec.samples[0].state, 6);
        assert!((s.z1 - 2.0 / 6.0).abs() < 1e-12 && (s.z2 - 1.0 / 6.0).abs() < 1e-12 && (s.z3 - 0.5).abs() < 1e-12);
    }
}
