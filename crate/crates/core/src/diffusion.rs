//! Euler scheme for the limiting seed-bank jump diffusion.
//!
//! The state is carried twice: the ♥ coordinates `(z₁, z₂)` and their ♠
//! complements `u₁ = z₃ − z₁`, `u₂ = 1 − z₃ − z₂`. Each coordinate gets its own
//! drift, and the smaller member of each pair is kept, with the other read off
//! the exact `z₃`. Both the all-♠ and the all-♥ boundaries are therefore hit
//! without rounding error. Jumps and environment switches are placed at exact
//! exponential times and the Euler mesh is refined to land on them.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FrequencyState, SimParams};
use crate::path::{Fixation, FrequencySample, PathRecord, SamplingGrid};
use crate::rng::holding_time;

pub const DIFFUSION_CSV_HEADER: &str = "path_id,t,z1,z2,z3,env";

/// `z₃(t) = (z₃(0) − σ/(σ+α))e^{−(α+σ)t} + σ/(σ+α)`; constant when α = σ = 0.
#[must_use]
pub fn z3_exact(z3_0: f64, alpha: f64, sigma: f64, t: f64) -> f64 {
    let r = alpha + sigma;
    if r <= 0.0 {
        return z3_0;
    }
    let eq = sigma / r;
    (z3_0 - eq) * (-r * t).exp() + eq
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionState {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    pub env: bool,
    pub time: f64,
}

impl DiffusionState {
    #[must_use]
    pub fn from_frequencies(z: &FrequencyState) -> Self {
        Self {
            z1: z.z1,
            z2: z.z2,
            z3: z.z3,
            env: z.env,
            time: 0.0,
        }
    }

    #[must_use]
    pub fn frequencies(&self) -> FrequencyState {
        FrequencyState::new(self.z1, self.z2, self.z3, self.env)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampMode {
    /// Project back onto D and account for the correction.
    #[default]
    Project,
    /// Abort the path at the first excursion out of D.
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub clamp_mode: ClampMode,
    /// Hold the environment fixed at this value instead of simulating it.
    pub env_override: Option<bool>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            clamp_mode: ClampMode::Project,
            env_override: None,
        }
    }
}

impl IntegratorConfig {
    #[must_use]
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParams(format!("dt = {} must be positive", self.dt)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPath {
    pub record: PathRecord,
    /// Total mass moved by projections onto D.
    pub clamp_total: f64,
    pub clamp_steps: u64,
    pub euler_steps: u64,
    /// Reproduction jumps per Λ atom.
    pub atom_jumps: Vec<u64>,
    /// Coordinated-mutation jumps per M atom.
    pub mutation_jumps: Vec<u64>,
    pub env_switches: u64,
}

/// The reproduction-only system; the mutation measure must be zero.
pub fn integrate_sdbk<R: Rng + ?Sized>(
    init: DiffusionState,
    params: &SimParams,
    config: &IntegratorConfig,
    grid: &SamplingGrid,
    horizon: f64,
    rng: &mut R,
) -> Result<DiffusionPath> {
    if !params.mutation.is_zero() {
        return Err(Error::InvalidParams(
            "integrate_sdbk needs a zero mutation measure; use integrate_sdbkm".into(),
        ));
    }
    integrate_sdbkm(init, params, config, grid, horizon, rng)
}

/// Pair `(x, x̄)` with `x + x̄ = total`: keep the smaller one, derive the other.
fn reconcile(x: f64, xbar: f64, total: f64, mode: ClampMode, clamp: &mut f64) -> Result<(f64, f64)> {
    let (mut x, mut xbar) = if x <= xbar { (x, total - x) } else { (total - xbar, xbar) };
    if x < 0.0 {
        if mode == ClampMode::Reject {
            return Err(Error::PathRejected(format!("coordinate fell to {x}")));
        }
        *clamp += -x;
        x = 0.0;
        xbar = total;
    } else if xbar < 0.0 {
        if mode == ClampMode::Reject {
            return Err(Error::PathRejected(format!("complement fell to {xbar}")));
        }
        *clamp += -xbar;
        xbar = 0.0;
        x = total;
    }
    Ok((x, xbar))
}

/// The full system with environment, mutation drift and coordinated mutations.
pub fn integrate_sdbkm<R: Rng + ?Sized>(
    init: DiffusionState,
    params: &SimParams,
    config: &IntegratorConfig,
    grid: &SamplingGrid,
    horizon: f64,
    rng: &mut R,
) -> Result<DiffusionPath> {
    params.validate()?;
    config.validate()?;
    let z0 = init.frequencies();
    if !z0.in_domain() || !(init.z1 >= 0.0 && init.z2 >= 0.0) {
        return Err(Error::InvalidState(format!("initial state {z0:?} is outside D")));
    }
    let t0 = init.time;
    if !(horizon >= t0) {
        return Err(Error::InvalidParams(format!("horizon {horizon} precedes the start time {t0}")));
    }
    let (alpha, sigma) = (params.alpha, params.sigma);
    let a = params.lambda.kingman_mass;
    let b = params.mutation.kingman_mass;
    let lam = params.lambda.total_event_rates()?;
    let mu = params.mutation.total_event_rates()?;
    let z3_of = |t: f64| z3_exact(init.z3, alpha, sigma, t - t0);

    let mut env = config.env_override.unwrap_or(init.env);
    let z3 = init.z3.clamp(0.0, 1.0);
    let (mut z1, mut u1) = (init.z1.min(z3), (z3 - init.z1).max(0.0));
    let (mut z2, mut u2) = (init.z2.min(1.0 - z3), (1.0 - z3 - init.z2).max(0.0));

    let mut out = DiffusionPath {
        record: PathRecord {
            population: 0,
            samples: Vec::new(),
            fixation: Fixation::Censored,
            fixation_time: None,
            end_time: horizon,
            events: 0,
            snapshots: Vec::new(),
        },
        clamp_total: 0.0,
        clamp_steps: 0,
        euler_steps: 0,
        atom_jumps: vec![0; params.lambda.atoms.len()],
        mutation_jumps: vec![0; params.mutation.atoms.len()],
        env_switches: 0,
    };
    let grid_times: Vec<f64> = grid.times().iter().copied().filter(|&g| g >= t0 && g <= horizon).collect();
    let mut gi = 0;
    let mut t = t0;
    let mut mesh_k: u64 = 1;
    let dt = config.dt;
    let mut next_jump = t + holding_time(rng, lam.aggregate);
    let mut next_switch = if config.env_override.is_some() {
        f64::INFINITY
    } else {
        t + holding_time(rng, params.env_flip_rate(env))
    };
    let mut next_mut = if env { t + holding_time(rng, mu.aggregate) } else { f64::INFINITY };
    let track_fixation = params.mutation.is_zero();

    let record = |out: &mut DiffusionPath, gi: &mut usize, t: f64, s: FrequencyState| {
        while *gi < grid_times.len() && grid_times[*gi] <= t {
            out.record.samples.push(FrequencySample {
                t: grid_times[*gi],
                state: s,
            });
            *gi += 1;
        }
    };
    record(&mut out, &mut gi, t, FrequencyState::new(z1, z2, z3_of(t), env));

    while t < horizon {
        let next_mesh = t0 + mesh_k as f64 * dt;
        let next_grid = grid_times.get(gi).copied().unwrap_or(f64::INFINITY);
        let target = next_mesh
            .min(next_jump)
            .min(next_switch)
            .min(next_mut)
            .min(next_grid)
            .min(horizon);
        let h = target - t;
        if h > 0.0 {
            let z3_new = z3_of(target);
            let xi = if env { 1.0 } else { 0.0 };
            let g = (a * z1 * u1).max(0.0).sqrt() * h.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let m = b * xi * u1;
            let z1n = z1 + (sigma * z2 - alpha * z1 + m) * h + g;
            let u1n = u1 + (sigma * u2 - alpha * u1 - m) * h - g;
            let z2n = z2 + (alpha * z1 - sigma * z2) * h;
            let u2n = u2 + (alpha * u1 - sigma * u2) * h;
            let before = out.clamp_total;
            (z1, u1) = reconcile(z1n, u1n, z3_new, config.clamp_mode, &mut out.clamp_total)?;
            (z2, u2) = reconcile(z2n, u2n, 1.0 - z3_new, config.clamp_mode, &mut out.clamp_total)?;
            if out.clamp_total > before {
                out.clamp_steps += 1;
            }
            out.euler_steps += 1;
        }
        t = target;
        if t >= next_mesh {
            mesh_k += 1;
        }
        let z3_now = z1 + u1;
        if t == next_jump {
            if t <= horizon {
                let j = pick(rng, &lam.per_atom, lam.aggregate);
                let y = params.lambda.atoms[j].location;
                if z3_now > 0.0 {
                    if rng.random::<f64>() * z3_now < z1 {
                        z1 += y * u1;
                        u1 *= 1.0 - y;
                    } else {
                        u1 += y * z1;
                        z1 *= 1.0 - y;
                    }
                }
                out.atom_jumps[j] += 1;
                out.record.events += 1;
            }
            next_jump = t + holding_time(rng, lam.aggregate);
        }
        if t == next_mut {
            let j = pick(rng, &mu.per_atom, mu.aggregate);
            let y = params.mutation.atoms[j].location;
            z1 += y * u1;
            u1 *= 1.0 - y;
            out.mutation_jumps[j] += 1;
            out.record.events += 1;
            next_mut = t + holding_time(rng, mu.aggregate);
        }
        if t == next_switch {
            env = !env;
            out.env_switches += 1;
            out.record.events += 1;
            next_switch = t + holding_time(rng, params.env_flip_rate(env));
            next_mut = if env { t + holding_time(rng, mu.aggregate) } else { f64::INFINITY };
        }
        if track_fixation && out.record.fixation_time.is_none() {
            if z1 == 0.0 && z2 == 0.0 {
                out.record.fixation = Fixation::Spade;
                out.record.fixation_time = Some(t);
            } else if u1 == 0.0 && u2 == 0.0 {
                out.record.fixation = Fixation::Heart;
                out.record.fixation_time = Some(t);
            }
        }
        record(&mut out, &mut gi, t, FrequencyState::new(z1, z2, z3_of(t), env));
    }
    Ok(out)
}

fn pick<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], total: f64) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{MeasureKind, MeasureSpec};
    use crate::rng::{StreamFactory, StreamRole};
    use crate::stats::SampleSummary;

    fn rng(i: u64) -> crate::rng::SimRng {
        StreamFactory::new(5).stream(StreamRole::Diffusion, i)
    }

    fn atom_params() -> SimParams {
        SimParams::new(
            MeasureSpec::new(MeasureKind::Reproduction, 1.0, &[(0.4, 0.5)]),
            MeasureSpec::zero(MeasureKind::Mutation),
            1.0,
            1.0,
        )
    }

    fn start(z1: f64, z2: f64, z3: f64) -> DiffusionState {
        DiffusionState { z1, z2, z3, env: true, time: 0.0 }
    }

    #[test]
    fn z3_closed_form_examples() {
        assert!((z3_exact(1.0, 1.0, 1.0, 2f64.ln()) - 0.625).abs() < 1e-15);
        assert_eq!(z3_exact(0.25, 3.0, 1.0, 7.0), 0.25);
        assert!((z3_exact(0.9, 2.0, 1.0, 60.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(z3_exact(0.7, 0.0, 0.0, 5.0), 0.7);
    }

    #[test]
    fn z3_tracks_closed_form_on_the_grid() {
        let grid = SamplingGrid::uniform(3.0, 0.1).unwrap();
        let p = atom_params();
        let path = integrate_sdbk(start(0.3, 0.2, 0.5), &p, &IntegratorConfig::with_dt(1e-2), &grid, 3.0, &mut rng(0)).unwrap();
        assert_eq!(path.record.samples.len(), grid.times().len());
        for s in &path.record.samples {
            assert!((s.state.z3 - z3_exact(0.5, 1.0, 1.0, s.t)).abs() < 1e-10);
            assert!(s.state.in_domain());
        }
    }

    #[test]
    fn boundaries_are_invariant() {
        let grid = SamplingGrid::uniform(2.0, 0.25).unwrap();
        let p = atom_params();
        let path = integrate_sdbk(start(0.0, 0.0, 0.8), &p, &IntegratorConfig::with_dt(1e-2), &grid, 2.0, &mut rng(1)).unwrap();
        for s in &path.record.samples {
            assert_eq!((s.state.z1, s.state.z2), (0.0, 0.0));
        }
        assert_eq!(path.record.fixation, Fixation::Spade);
        let path = integrate_sdbk(start(0.8, 0.2, 0.8), &p, &IntegratorConfig::with_dt(1e-2), &grid, 2.0, &mut rng(2)).unwrap();
        for s in &path.record.samples {
            assert!((s.state.z1 - s.state.z3).abs() < 1e-12, "{s:?}");
            assert!((s.state.z2 - (1.0 - s.state.z3)).abs() < 1e-12, "{s:?}");
        }
        assert_eq!(path.clamp_total, 0.0);
        let pm = p.clone().with_mutation(MeasureSpec::new(MeasureKind::Mutation, 1.0, &[(0.5, 1.0)]));
        let path = integrate_sdbkm(start(0.8, 0.2, 0.8), &pm, &IntegratorConfig::with_dt(1e-2), &grid, 2.0, &mut rng(3)).unwrap();
        for s in &path.record.samples {
            assert!((s.state.z1 - s.state.z3).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let p = atom_params();
        let g = SamplingGrid::empty();
        let c = IntegratorConfig::default();
        assert!(integrate_sdbk(start(0.6, 0.0, 0.5), &p, &c, &g, 1.0, &mut rng(0)).is_err());
        assert!(integrate_sdbk(start(0.1, 0.0, 0.5), &p, &IntegratorConfig::with_dt(0.0), &g, 1.0, &mut rng(0)).is_err());
        let pm = p.with_mutation(MeasureSpec::kingman(MeasureKind::Mutation, 1.0));
        assert!(integrate_sdbk(start(0.1, 0.0, 0.5), &pm, &c, &g, 1.0, &mut rng(0)).is_err());
    }

    #[test]
    fn reject_mode_reports_excursions() {
        // Large Kingman noise on a coarse mesh pushes z₁ out of D quickly.
        let p = SimParams::kingman(50.0, 0.0, 0.0);
        let c = IntegratorConfig { dt: 0.1, clamp_mode: ClampMode::Reject, env_override: None };
        let mut rejected = 0;
        for i in 0..50 {
            if let Err(Error::PathRejected(_)) = integrate_sdbk(start(0.1, 0.0, 0.5), &p, &c, &SamplingGrid::empty(), 5.0, &mut rng(i)) {
                rejected += 1;
            }
        }
        assert!(rejected > 0);
    }

    #[test]
    fn mean_of_hearts_is_a_martingale() {
        let p = atom_params();
        let grid = SamplingGrid::new(vec![0.5, 1.0, 2.0]).unwrap();
        let mut sums = vec![SampleSummary::default(); 3];
        for i in 0..10_000 {
            let path = integrate_sdbk(start(0.3, 0.2, 0.5), &p, &IntegratorConfig::with_dt(1e-2), &grid, 2.0, &mut rng(i)).unwrap();
            for (k, s) in path.record.samples.iter().enumerate() {
                sums[k].push(s.state.z1 + s.state.z2);
            }
        }
        for s in &sums {
            assert!((s.mean() - 0.5).abs() < 4.0 * s.standard_error(), "{} ± {}", s.mean(), s.standard_error());
        }
    }

    #[test]
    fn jump_rate_audit() {
        let p = SimParams::new(
            MeasureSpec::new(MeasureKind::Reproduction, 0.0, &[(0.25, 0.25), (0.5, 0.5)]),
            MeasureSpec::new(MeasureKind::Mutation, 0.0, &[(0.5, 1.0)]),
            1.0,
            1.0,
        );
        let horizon = 200.0;
        let c = IntegratorConfig::with_dt(0.05);
        let path = integrate_sdbkm(start(0.3, 0.2, 0.5), &p, &c, &SamplingGrid::empty(), horizon, &mut rng(9)).unwrap();
        for (j, (y, w)) in [(0.25, 0.25), (0.5, 0.5)].into_iter().enumerate() {
            let expected = w / (y * y) * horizon;
            let got = path.atom_jumps[j] as f64;
            assert!((got - expected).abs() < 4.0 * expected.sqrt(), "atom {j}: {got} vs {expected}");
        }
        // mutation clock runs only while ξ = 1, half the time in stationarity
        let expected = 2.0 * horizon * 0.5;
        let got = path.mutation_jumps[0] as f64;
        assert!((got - expected).abs() < 0.25 * expected, "{got} vs {expected}");
    }

    #[test]
    fn env_override_switches_off_mutation() {
        let p = atom_params().with_mutation(MeasureSpec::new(MeasureKind::Mutation, 5.0, &[(0.5, 1.0)]));
        let c = IntegratorConfig { env_override: Some(false), ..IntegratorConfig::with_dt(1e-2) };
        let grid = SamplingGrid::uniform(1.0, 0.5).unwrap();
        let a = integrate_sdbkm(start(0.1, 0.1, 0.5), &p, &c, &grid, 1.0, &mut rng(4)).unwrap();
        assert_eq!(a.env_switches, 0);
        assert!(a.mutation_jumps.iter().all(|&n| n == 0));
        assert!(a.record.samples.iter().all(|s| !s.state.env));
    }

    #[test]
    fn same_stream_same_path() {
        let p = atom_params();
        let grid = SamplingGrid::uniform(1.0, 0.1).unwrap();
        let c = IntegratorConfig::with_dt(1e-2);
        let a = integrate_sdbk(start(0.3, 0.2, 0.5), &p, &c, &grid, 1.0, &mut rng(7)).unwrap();
        let b = integrate_sdbk(start(0.3, 0.2, 0.5), &p, &c, &grid, 1.0, &mut rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clamping_vanishes_with_dt() {
        // Near z₁ = 0 the overshoot mass scales like dt^(2σz₂/a), not dt, so the
        // decay is only visible with a sizeable dormant ♥ reservoir.
        let p = SimParams::kingman(1.0, 1.0, 1.0);
        let mean_clamp = |dt: f64| {
            let mut s = SampleSummary::default();
            for i in 0..2000 {
                let path = integrate_sdbk(start(0.02, 0.4, 0.5), &p, &IntegratorConfig::with_dt(dt), &SamplingGrid::empty(), 1.0, &mut rng(i)).unwrap();
                s.push(path.clamp_total);
            }
            s.mean()
        };
        let c: Vec<f64> = [0.04, 0.01, 0.0025].into_iter().map(mean_clamp).collect();
        assert!(c[0] > 0.0);
        assert!(c[1] < 0.75 * c[0] && c[2] < 0.75 * c[1], "{c:?}");
    }
}
