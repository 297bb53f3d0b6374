//! Forward engines behind one trait, selectable by name.

use crate::diffusion::{integrate_sdbkm, DiffusionState, IntegratorConfig};
use crate::error::{Error, Result};
use crate::lookdown::{simulate_lookdown, LookdownState};
use crate::model::{Composition, FrequencyState, PopulationState, SimParams};
use crate::moran::{simulate, simulate_counts, CountState};
use crate::path::{PathRecord, SamplingGrid, Stop};
use crate::registry::{Named, Registry};
use crate::rng::SimRng;

/// One forward run: start at `init` (on the lattice D_N for particle engines).
#[derive(Clone, Copy, Debug)]
pub struct ForwardTask<'a> {
    pub params: &'a SimParams,
    pub population: usize,
    pub init: FrequencyState,
    pub stop: Stop,
    pub grid: &'a SamplingGrid,
}

pub trait ForwardEngine: Named + Send + Sync {
    fn description(&self) -> &'static str;
    fn run(&self, task: &ForwardTask<'_>, rng: &mut SimRng) -> Result<PathRecord>;
}

pub type EngineRegistry = Registry<dyn ForwardEngine>;

/// Individual-based Moran model with an exchangeable start.
pub struct MoranEngine;

/// The Moran frequency process as a lumped chain on counts.
pub struct MoranCountsEngine;

/// Lookdown model with an exchangeable start.
pub struct LookdownEngine;

/// Euler scheme for the limiting jump diffusion.
pub struct SdeEngine {
    pub config: IntegratorConfig,
}

fn composition(task: &ForwardTask<'_>) -> Result<Composition> {
    Composition::from_frequencies(&task.init, task.population)
}

impl Named for MoranEngine {
    fn name(&self) -> &'static str {
        "moran"
    }
}

impl ForwardEngine for MoranEngine {
    fn description(&self) -> &'static str {
        "individual-based Moran model"
    }

    fn run(&self, task: &ForwardTask<'_>, rng: &mut SimRng) -> Result<PathRecord> {
        let c = composition(task)?;
        let init = PopulationState::new(c.exchangeable(rng), task.init.env)?;
        simulate(init, task.params, task.stop, task.grid, rng)
    }
}

impl Named for MoranCountsEngine {
    fn name(&self) -> &'static str {
        "moran-counts"
    }
}

impl ForwardEngine for MoranCountsEngine {
    fn description(&self) -> &'static str {
        "Moran frequency chain on (Nz1, Nz2, Nz3, env)"
    }

    fn run(&self, task: &ForwardTask<'_>, rng: &mut SimRng) -> Result<PathRecord> {
        let c = composition(task)?;
        simulate_counts(CountState::from_composition(&c, task.init.env), task.params, task.stop, task.grid, rng)
    }
}

impl Named for LookdownEngine {
    fn name(&self) -> &'static str {
        "lookdown"
    }
}

impl ForwardEngine for LookdownEngine {
    fn description(&self) -> &'static str {
        "lookdown particle system"
    }

    fn run(&self, task: &ForwardTask<'_>, rng: &mut SimRng) -> Result<PathRecord> {
        let c = composition(task)?;
        let init = LookdownState::exchangeable(&c, task.init.env, rng)?;
        simulate_lookdown(init, task.params, task.stop, task.grid, rng)
    }
}

impl Named for SdeEngine {
    fn name(&self) -> &'static str {
        "sde"
    }
}

impl ForwardEngine for SdeEngine {
    fn description(&self) -> &'static str {
        "Euler scheme for the limiting jump diffusion (population size ignored)"
    }

    fn run(&self, task: &ForwardTask<'_>, rng: &mut SimRng) -> Result<PathRecord> {
        let Stop::At(horizon) = task.stop else {
            return Err(Error::Unsupported("the diffusion engine only runs to a fixed time".into()));
        };
        let init = DiffusionState::from_frequencies(&task.init);
        integrate_sdbkm(init, task.params, &self.config, task.grid, horizon, rng).map(|p| p.record)
    }
}

/// All built-in engines; `integrator` configures the diffusion engine.
#[must_use]
pub fn engine_registry(integrator: IntegratorConfig) -> EngineRegistry {
    let mut r = EngineRegistry::new("engine");
    r.register(Box::new(MoranEngine))
        .register(Box::new(MoranCountsEngine))
        .register(Box::new(LookdownEngine))
        .register(Box::new(SdeEngine { config: integrator }));
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{MeasureKind, MeasureSpec};
    use crate::rng::{StreamFactory, StreamRole};
    use crate::stats::{ks_two_sample, SampleSummary};

    #[test]
    fn registry_lists_and_rejects() {
        let r = engine_registry(IntegratorConfig::default());
        assert_eq!(r.names(), vec!["lookdown", "moran", "moran-counts", "sde"]);
        assert_eq!(r.get("moran").unwrap().name(), "moran");
        match r.get("wright-fisher") {
            Err(Error::UnknownStrategy { available, .. }) => assert!(available.contains("lookdown")),
            other => panic!("{:?}", other.map(|e| e.name())),
        }
    }

    #[test]
    fn particle_engines_agree_in_law() {
        let params = SimParams::new(
            MeasureSpec::new(MeasureKind::Reproduction, 1.0, &[(0.5, 0.5)]),
            MeasureSpec::zero(MeasureKind::Mutation),
            1.0,
            1.0,
        );
        let grid = SamplingGrid::new(vec![1.0]).unwrap();
        let task = ForwardTask {
            params: &params,
            population: 10,
            init: FrequencyState::new(0.3, 0.2, 0.5, true),
            stop: Stop::At(1.0),
            grid: &grid,
        };
        let r = engine_registry(IntegratorConfig::default());
        let f = StreamFactory::new(3);
        let sample = |name: &str| -> Vec<f64> {
            let e = r.get(name).unwrap();
            (0..3000)
                .map(|i| e.run(&task, &mut f.stream(StreamRole::Forward, i)).unwrap().at(1.0).unwrap().z1)
                .collect()
        };
        let moran = sample("moran");
        for other in ["moran-counts", "lookdown"] {
            let p = ks_two_sample(&moran, &sample(other)).unwrap().p_value;
            assert!(p > 0.001, "{other}: p = {p}");
        }
        let sde: Vec<f64> = sample("sde");
        let s = SampleSummary::from_slice(&sde);
        assert!((0.0..=0.5).contains(&s.mean()));
    }

    #[test]
    fn sde_engine_needs_fixed_horizon() {
        let params = SimParams::kingman(1.0, 1.0, 1.0);
        let grid = SamplingGrid::empty();
        let task = ForwardTask {
            params: &params,
            population: 10,
            init: FrequencyState::new(0.3, 0.2, 0.5, true),
            stop: Stop::UntilMonomorphic { max_time: 10.0 },
            grid: &grid,
        };
        let e = SdeEngine { config: IntegratorConfig::default() };
        assert!(e.run(&task, &mut StreamFactory::new(1).stream(StreamRole::Diffusion, 0)).is_err());
    }
}
