//! Sampling duality between the frequency process and the block-counting chain.
//!
//! Both sides are estimated by Monte Carlo. The backward chain is driven by the
//! time reversal of an environment path sampled forward from `ξ(0)`; the
//! identity holds conditionally on the environment path, so an autonomous
//! backward environment would compare two different quantities unless ξ
//! starts in equilibrium.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::coalescent::{simulate_block_counting, BlockCountState, EnvDriver, EnvPath, StopRule};
use crate::combinatorics::binom_exact;
use crate::engine::{ForwardEngine, ForwardTask};
use crate::error::{Error, Result};
use crate::generators::finite_transitions;
use crate::model::{FrequencyState, SimParams};
use crate::moran::CountState;
use crate::parallel::map_replicates;
use crate::path::{SamplingGrid, Stop};
use crate::rng::{StreamFactory, StreamRole};
use crate::stats::{SampleSummary, IDENTITY_SE};

fn binom_ratio(top_n: usize, top_k: usize, bot_n: usize, bot_k: usize) -> f64 {
    // C(top_n, top_k) / C(bot_n, bot_k), exactly when both fit in u128
    let (a, b) = (top_n as u64, bot_n as u64);
    match (binom_exact(a, top_k as u64), binom_exact(b, bot_k as u64)) {
        (Some(x), Some(y)) => {
            if y == 0 {
                0.0
            } else {
                x as f64 / y as f64
            }
        }
        _ => {
            if top_k > top_n || bot_k > bot_n {
                return 0.0;
            }
            (crate::combinatorics::ln_binom(a, top_k as u64) - crate::combinatorics::ln_binom(b, bot_k as u64)).exp()
        }
    }
}

/// `H^N(z, n, m)`: the probability that `n` active and `m` dormant individuals
/// drawn without replacement from a population at `z` are all ♥.
///
/// Impossible samples (more active draws than active individuals) give 0.
pub fn h_sampling(z: &FrequencyState, n: usize, m: usize, pop: usize) -> Result<f64> {
    let (k1, k2, k3) = z.counts(pop)?;
    Ok(h_counts(k1, k2, k3, pop, n, m))
}

fn h_counts(k1: usize, k2: usize, k3: usize, pop: usize, n: usize, m: usize) -> f64 {
    if k3 == pop {
        binom_ratio(k1, n, pop, n)
    } else if k3 == 0 {
        binom_ratio(k2, m, pop, m)
    } else {
        let num = binom_ratio(k1, n, k3, n);
        if num == 0.0 {
            return 0.0;
        }
        num * binom_ratio(k2, m, pop - k3, m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualityInstance {
    pub params: SimParams,
    #[serde(rename = "N")]
    pub population: usize,
    pub z: FrequencyState,
    pub n: usize,
    pub m: usize,
    pub t: f64,
    pub replicates: u64,
}

impl DualityInstance {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.z.counts(self.population)?;
        if self.n > self.population || self.m > self.population {
            return Err(Error::InvalidParams(format!(
                "sample ({}, {}) exceeds N = {}",
                self.n, self.m, self.population
            )));
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidParams(format!("t = {} must be finite and ≥ 0", self.t)));
        }
        if self.replicates < 2 {
            return Err(Error::InvalidParams("need at least 2 replicates per side".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityEstimate {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Pooled standard error of the gap.
    pub se: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    pub pass: bool,
}

/// `|gap| ≤ k·se`, with an exact zero gap passing even when `se = 0`.
#[must_use]
pub fn within_se(gap: f64, se: f64, k: f64) -> bool {
    gap == 0.0 || gap.abs() <= k * se
}

/// Forward side: mean of `H^N(Z(t), n, m)` over runs of `engine`.
pub fn duality_lhs(inst: &DualityInstance, engine: &dyn ForwardEngine, streams: &StreamFactory, workers: usize) -> Result<SampleSummary> {
    inst.validate()?;
    let grid = SamplingGrid::new(vec![inst.t])?;
    let task = ForwardTask {
        params: &inst.params,
        population: inst.population,
        init: inst.z,
        stop: Stop::At(inst.t),
        grid: &grid,
    };
    let values = map_replicates(inst.replicates, workers, |i| {
        let mut rng = streams.stream(StreamRole::Forward, i);
        let rec = engine.run(&task, &mut rng)?;
        let z = rec
            .at(inst.t)
            .ok_or_else(|| Error::InvalidState(format!("no sample recorded at t = {}", inst.t)))?;
        h_sampling(z, inst.n, inst.m, inst.population)
    })?;
    Ok(SampleSummary::from_slice(&values))
}

/// Backward side: mean of `H^N(z, N_t, M_t)` over block-counting runs.
pub fn duality_rhs(inst: &DualityInstance, streams: &StreamFactory, workers: usize) -> Result<SampleSummary> {
    inst.validate()?;
    let (k1, k2, k3) = inst.z.counts(inst.population)?;
    let values = map_replicates(inst.replicates, workers, |i| {
        let mut env_rng = streams.stream(StreamRole::Environment, i);
        let forward = EnvPath::sample(inst.z.env, &inst.params, inst.t, &mut env_rng);
        let driver = EnvDriver::Prescribed(forward.reversed());
        let mut rng = streams.stream(StreamRole::Backward, i);
        let init = BlockCountState::new(inst.n, inst.m, forward.final_state());
        let path = simulate_block_counting(init, &inst.params, inst.t, StopRule::Horizon, &driver, false, &mut rng)?;
        Ok(h_counts(k1, k2, k3, inst.population, path.end.n, path.end.m))
    })?;
    Ok(SampleSummary::from_slice(&values))
}

pub fn duality_gap(inst: &DualityInstance, engine: &dyn ForwardEngine, streams: &StreamFactory, workers: usize) -> Result<DualityEstimate> {
    let l = duality_lhs(inst, engine, streams, workers)?;
    let r = duality_rhs(inst, streams, workers)?;
    let gap = l.mean() - r.mean();
    let se = l.standard_error().hypot(r.standard_error());
    Ok(DualityEstimate {
        lhs: l.mean(),
        rhs: r.mean(),
        gap,
        se,
        lhs_se: l.standard_error(),
        rhs_se: r.standard_error(),
        pass: within_se(gap, se, IDENTITY_SE),
    })
}

pub const DUALITY_CSV_HEADER: &str = "N,t,n,m,z1,z2,z3,lhs,rhs,gap,se,pass";

pub fn write_duality_row(out: &mut String, inst: &DualityInstance, est: &DualityEstimate) {
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        inst.population,
        inst.t,
        inst.n,
        inst.m,
        inst.z.z1,
        inst.z.z2,
        inst.z.z3,
        est.lhs,
        est.rhs,
        est.gap,
        est.se,
        est.pass
    );
}

/// All states of the frequency chain for population size `n`.
#[must_use]
pub fn lattice_states(n: usize) -> Vec<CountState> {
    let mut v = Vec::new();
    for env in [false, true] {
        for k3 in 0..=n {
            for k1 in 0..=k3 {
                for k2 in 0..=(n - k3) {
                    v.push(CountState { n, k1, k2, k3, env });
                }
            }
        }
    }
    v
}

fn state_index(s: &CountState) -> usize {
    // (k3, k1, k2) in the order of `lattice_states`
    let n = s.n;
    let mut idx = 0;
    for k3 in 0..s.k3 {
        idx += (k3 + 1) * (n - k3 + 1);
    }
    idx += s.k1 * (n - s.k3 + 1) + s.k2;
    let per_env = (0..=n).map(|k3| (k3 + 1) * (n - k3 + 1)).sum::<usize>();
    idx + if s.env { per_env } else { 0 }
}

/// `E[f(Z(t)) | Z(0) = init]` for the finite chain, by uniformization.
pub fn exact_expectation(params: &SimParams, init: &CountState, t: f64, f: impl Fn(&CountState) -> f64) -> Result<f64> {
    params.validate()?;
    let states = lattice_states(init.n);
    let mut rows = Vec::with_capacity(states.len());
    let mut q = 0.0f64;
    for s in &states {
        let tr: Vec<(usize, f64)> = finite_transitions(s, params)?
            .into_iter()
            .map(|(target, r)| (state_index(&target), r))
            .collect();
        q = q.max(tr.iter().map(|x| x.1).sum());
        rows.push(tr);
    }
    let mut v: Vec<f64> = states.iter().map(&f).collect();
    let start = state_index(init);
    if t == 0.0 || q == 0.0 {
        return Ok(v[start]);
    }
    // e^{tQ} v = Σ_k Poisson(k; qt) Pᵏ v with P = I + Q/q
    let qt = q * t;
    let kmax = (qt + 12.0 * qt.sqrt() + 40.0).ceil() as usize;
    let mut acc = 0.0;
    let mut mass = 0.0;
    let mut next = vec![0.0; v.len()];
    for k in 0..=kmax {
        let w = (-qt + k as f64 * qt.ln() - ln_gamma(k as f64 + 1.0)).exp();
        acc += w * v[start];
        mass += w;
        for (i, tr) in rows.iter().enumerate() {
            let out: f64 = tr.iter().map(|x| x.1).sum();
            let mut x = (1.0 - out / q) * v[i];
            for &(j, r) in tr {
                x += r / q * v[j];
            }
            next[i] = x;
        }
        std::mem::swap(&mut v, &mut next);
    }
    if (1.0 - mass).abs() > 1e-9 {
        return Err(Error::InvalidState(format!("uniformization lost {} of the Poisson mass", 1.0 - mass)));
    }
    Ok(acc)
}

/// Exact forward side of the duality for small N.
pub fn exact_duality_lhs(inst: &DualityInstance) -> Result<f64> {
    inst.validate()?;
    let (k1, k2, k3) = inst.z.counts(inst.population)?;
    let init = CountState {
        n: inst.population,
        k1,
        k2,
        k3,
        env: inst.z.env,
    };
    exact_expectation(&inst.params, &init, inst.t, |s| h_counts(s.k1, s.k2, s.k3, s.n, inst.n, inst.m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{MoranCountsEngine, MoranEngine};
    use crate::measures::{MeasureKind, MeasureSpec};
    use proptest::prelude::*;

    fn instance(t: f64, n: usize, m: usize, replicates: u64) -> DualityInstance {
        DualityInstance {
            params: SimParams::new(
                MeasureSpec::new(MeasureKind::Reproduction, 1.0, &[(0.4, 0.5)]),
                MeasureSpec::zero(MeasureKind::Mutation),
                1.0,
                1.0,
            ),
            population: 20,
            z: FrequencyState::new(0.25, 0.25, 0.5, true),
            n,
            m,
            t,
            replicates,
        }
    }

    #[test]
    fn h_examples() {
        let z = FrequencyState::new(0.5, 0.25, 0.5, true);
        assert_eq!(h_sampling(&z, 1, 1, 4).unwrap(), 0.5);
        assert_eq!(h_sampling(&z, 0, 0, 4).unwrap(), 1.0);
        let all_hearts_active = FrequencyState::new(0.5, 0.0, 0.5, false);
        for n in 0..=2 {
            assert_eq!(h_sampling(&all_hearts_active, n, 0, 4).unwrap(), 1.0);
        }
        assert_eq!(h_sampling(&z, 3, 0, 4).unwrap(), 0.0);
        // z₃ = 1 ignores the dormant draw count, z₃ = 0 the active one
        let all_active = FrequencyState::new(0.75, 0.0, 1.0, false);
        assert_eq!(h_sampling(&all_active, 2, 3, 4).unwrap(), 3.0 / 6.0);
        let all_dormant = FrequencyState::new(0.0, 0.5, 0.0, false);
        assert_eq!(h_sampling(&all_dormant, 3, 1, 4).unwrap(), 0.5);
        assert!(h_sampling(&FrequencyState::new(0.3, 0.0, 0.5, false), 1, 0, 4).is_err());
    }

    proptest! {
        #[test]
        fn h_is_a_probability_and_monotone(pop in 1usize..40, a in 0usize..1000, b in 0usize..1000, c in 0usize..1000, n in 0usize..6, m in 0usize..6) {
            let k3 = c % (pop + 1);
            let k1 = a % (k3 + 1);
            let k2 = b % (pop - k3 + 1);
            let h = h_counts(k1, k2, k3, pop, n, m);
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert!(h_counts(k1, k2, k3, pop, n + 1, m) <= h + 1e-15);
            prop_assert!(h_counts(k1, k2, k3, pop, n, m + 1) <= h + 1e-15);
        }
    }

    #[test]
    fn trivial_instances_have_zero_gap() {
        let f = StreamFactory::new(1);
        let e = duality_gap(&instance(0.0, 2, 1, 50), &MoranEngine, &f, 1).unwrap();
        assert_eq!(e.gap, 0.0);
        assert!(e.pass);
        let e = duality_gap(&instance(1.0, 0, 0, 50), &MoranEngine, &f, 1).unwrap();
        assert_eq!((e.lhs, e.rhs, e.gap), (1.0, 1.0, 0.0));
        assert!(e.pass);
    }

    #[test]
    fn duality_holds_at_moderate_scale() {
        let f = StreamFactory::new(2);
        for (n, m) in [(2, 0), (1, 1)] {
            let e = duality_gap(&instance(1.0, n, m, 20_000), &MoranCountsEngine, &f, 0).unwrap();
            assert!(e.pass, "({n},{m}): {e:?}");
        }
    }

    #[test]
    fn worker_count_does_not_change_estimates() {
        let f = StreamFactory::new(3);
        let a = duality_gap(&instance(0.5, 1, 1, 500), &MoranEngine, &f, 1).unwrap();
        let b = duality_gap(&instance(0.5, 1, 1, 500), &MoranEngine, &f, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lattice_indexing_is_a_bijection() {
        for n in [1, 4, 7] {
            let states = lattice_states(n);
            for (i, s) in states.iter().enumerate() {
                assert_eq!(state_index(s), i);
            }
        }
    }

    #[test]
    fn uniformization_preserves_probability_and_matches_simulation() {
        let p = SimParams::new(
            MeasureSpec::new(MeasureKind::Reproduction, 1.0, &[(0.5, 0.5)]),
            MeasureSpec::new(MeasureKind::Mutation, 0.3, &[(0.5, 0.2)]),
            1.0,
            0.5,
        );
        let init = CountState { n: 4, k1: 1, k2: 1, k3: 2, env: true };
        let one = exact_expectation(&p, &init, 1.0, |_| 1.0).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
        let exact = exact_expectation(&p, &init, 1.0, |s| s.k1 as f64 / 4.0).unwrap();
        let grid = SamplingGrid::new(vec![1.0]).unwrap();
        let task = ForwardTask { params: &p, population: 4, init: init.frequencies(), stop: Stop::At(1.0), grid: &grid };
        let f = StreamFactory::new(4);
        let xs = map_replicates(20_000, 0, |i| {
            Ok(MoranEngine.run(&task, &mut f.stream(StreamRole::Forward, i))?.at(1.0).unwrap().z1)
        })
        .unwrap();
        let s = SampleSummary::from_slice(&xs);
        assert!((s.mean() - exact).abs() < 4.0 * s.standard_error(), "{} vs {exact}", s.mean());
    }

    #[test]
    fn csv_row_shape() {
        let inst = instance(0.0, 1, 0, 10);
        let est = DualityEstimate { lhs: 0.5, rhs: 0.5, gap: 0.0, se: 0.0, lhs_se: 0.0, rhs_se: 0.0, pass: true };
        let mut s = String::new();
        write_duality_row(&mut s, &inst, &est);
        assert_eq!(s.trim().split(',').count(), DUALITY_CSV_HEADER.split(',').count());
    }
}
