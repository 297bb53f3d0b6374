//! Configurable experiments, selected by name, with CSV/JSON/text reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::coalescent::{simulate_block_counting, simulate_marked_coalescent, BlockCountState, EnvDriver, Flag, StopRule};
use crate::diffusion::{integrate_sdbkm, z3_exact, DiffusionState, IntegratorConfig, DIFFUSION_CSV_HEADER};
use crate::duality::{duality_gap, exact_duality_lhs, within_se, write_duality_row, DualityInstance, DUALITY_CSV_HEADER};
use crate::engine::{engine_registry, EngineRegistry, ForwardEngine, ForwardTask};
use crate::error::{Error, Result};
use crate::generators::{convergence_table, first_order, interior_grid, TestFunction, CONVERGENCE_CSV_HEADER};
use crate::lookdown::{conditioned_model, full_frequency, simulate_lookdown, ConditionedMode, LookdownState};
use crate::model::{Allele, Composition, FrequencyState, PopulationState, SimParams};
use crate::moran::simulate;
use crate::parallel::map_replicates;
use crate::path::{write_path_rows, Fixation, PathRecord, SamplingGrid, Stop, PATH_CSV_HEADER};
use crate::registry::{Named, Registry};
use crate::rng::{StreamFactory, StreamRole};
use crate::stats::{ks_two_sample, SampleSummary, DISTRIBUTION_ALPHA, IDENTITY_SE};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Recording times: an explicit list or a uniform step up to the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Times { times: Vec<f64> },
    Step { step: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub params: SimParams,
    #[serde(rename = "N")]
    pub population: usize,
    /// Overrides `N` and `initial` with an explicit multiset.
    pub composition: Option<Composition>,
    pub initial: FrequencyState,
    pub replicates: u64,
    pub horizon: f64,
    /// Defaults to the single time `horizon`.
    pub grid: Option<GridSpec>,
    pub master_seed: u64,
    pub workers: usize,
    pub output_dir: Option<String>,
    pub engine: Option<String>,
    pub integrator: IntegratorConfig,
    /// `(n, m)` active/dormant sample sizes for the duality check.
    pub samples: Vec<[usize; 2]>,
    /// Active/dormant lineages for the coalescent.
    pub lineages: [usize; 2],
    pub functions: Vec<String>,
    pub sizes: Vec<usize>,
    /// Give-up time for runs to monomorphism.
    pub max_time: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            params: SimParams::kingman(1.0, 1.0, 1.0),
            population: 20,
            composition: None,
            initial: FrequencyState::new(0.25, 0.25, 0.5, true),
            replicates: 1000,
            horizon: 1.0,
            grid: None,
            master_seed: 0,
            workers: 0,
            output_dir: None,
            engine: None,
            integrator: IntegratorConfig::default(),
            samples: vec![[1, 0], [0, 1], [2, 0], [1, 1]],
            lineages: [5, 3],
            functions: ["z1", "z1^2", "z1*z2", "s*z1"].map(String::from).to_vec(),
            sizes: vec![100, 200],
            max_time: 1e4,
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON config; syntax and schema errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.is_empty() {
            return Err(Error::InvalidParams("`experiment` is not set".into()));
        }
        self.params.validate()?;
        if self.replicates < 1 {
            return Err(Error::InvalidParams("`replicates` must be ≥ 1".into()));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParams("`horizon` must be finite and ≥ 0".into()));
        }
        if self.population == 0 {
            return Err(Error::InvalidParams("`N` must be ≥ 1".into()));
        }
        self.integrator.validate()?;
        let (n, z) = self.start()?;
        z.counts(n)?;
        Ok(())
    }

    /// Population size and initial frequencies, honouring `composition`.
    pub fn start(&self) -> Result<(usize, FrequencyState)> {
        match &self.composition {
            Some(c) if c.size() == 0 => Err(Error::InvalidParams("`composition` is empty".into())),
            Some(c) => Ok((c.size(), c.frequencies(self.initial.env))),
            None => Ok((self.population, self.initial)),
        }
    }

    pub fn grid(&self) -> Result<SamplingGrid> {
        match &self.grid {
            None => SamplingGrid::new(vec![self.horizon]),
            Some(GridSpec::Times { times }) => {
                if times.iter().any(|&t| t > self.horizon) {
                    return Err(Error::InvalidParams("grid times must not exceed `horizon`".into()));
                }
                SamplingGrid::new(times.clone())
            }
            Some(GridSpec::Step { step }) => SamplingGrid::uniform(self.horizon, *step),
        }
    }

    /// SHA-256 of the config with the output location and worker count removed.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        c.workers = 0;
        let bytes = serde_json::to_vec(&c)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub csv_header: &'static str,
    pub csv_rows: String,
    pub summary: Value,
    pub checks: Vec<Check>,
}

pub struct Context {
    pub streams: StreamFactory,
    pub workers: usize,
    pub engines: EngineRegistry,
}

impl Context {
    #[must_use]
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            streams: StreamFactory::new(cfg.master_seed),
            workers: cfg.workers,
            engines: engine_registry(cfg.integrator),
        }
    }
}

pub trait Experiment: Named + Send + Sync {
    fn description(&self) -> &'static str;
    fn run(&self, cfg: &ExperimentConfig, ctx: &Context) -> Result<ExperimentOutput>;
}

pub type ExperimentRegistry = Registry<dyn Experiment>;

#[must_use]
pub fn experiment_registry() -> ExperimentRegistry {
    let mut r = ExperimentRegistry::new("experiment");
    r.register(Box::new(MoranExperiment))
        .register(Box::new(LookdownExperiment))
        .register(Box::new(CoalescentExperiment))
        .register(Box::new(SdeExperiment))
        .register(Box::new(DualityExperiment))
        .register(Box::new(GeneratorExperiment))
        .register(Box::new(FixationExperiment));
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub experiment: String,
    pub output: ExperimentOutput,
    pub provenance: Provenance,
}

impl RunReport {
    #[must_use]
    pub fn all_passed(&self) -> bool {
        self.output.checks.iter().all(|c| c.passed)
    }

    #[must_use]
    pub fn csv(&self) -> String {
        format!("{}\n{}", self.output.csv_header, self.output.csv_rows)
    }

    #[must_use]
    pub fn summary_json(&self) -> String {
        let v = json!({
            "experiment": self.experiment,
            "provenance": self.provenance,
            "all_passed": self.all_passed(),
            "checks": self.output.checks,
            "results": self.output.summary,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("JSON values always serialize");
        s.push('\n');
        s
    }

    #[must_use]
    pub fn text(&self) -> String {
        let p = &self.provenance;
        let tag = format!("[config {} seed {} version {}]", &p.config_hash[..12], p.seed, p.version);
        let mut s = format!("experiment {} {tag}\n", self.experiment);
        for c in &self.output.checks {
            let _ = writeln!(s, "{} {}: {} {tag}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let _ = writeln!(s, "{} {tag}", if self.all_passed() { "ALL PASS" } else { "SOME CHECKS FAILED" });
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("paths.csv"), self.csv())?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        fs::write(dir.join("report.txt"), self.text())?;
        Ok(())
    }
}

/// Records a failed run so partial outputs are never mistaken for results.
pub fn write_failure(dir: &Path, cfg: &ExperimentConfig, err: &Error) -> Result<()> {
    fs::create_dir_all(dir)?;
    let v = json!({
        "experiment": cfg.experiment,
        "status": "error",
        "error": err.to_string(),
        "seed": cfg.master_seed,
        "version": VERSION,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&v)? + "\n")?;
    fs::write(dir.join("report.txt"), format!("ERROR (outputs partial or missing): {err}\n"))?;
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let registry = experiment_registry();
    let exp = registry.get(&cfg.experiment)?;
    let ctx = Context::new(cfg);
    let output = exp.run(cfg, &ctx)?;
    Ok(RunReport {
        experiment: cfg.experiment.clone(),
        output,
        provenance: Provenance {
            config_hash: cfg.hash()?,
            seed: cfg.master_seed,
            version: VERSION.to_string(),
        },
    })
}

fn run_paths(engine: &dyn ForwardEngine, cfg: &ExperimentConfig, ctx: &Context, grid: &SamplingGrid) -> Result<Vec<PathRecord>> {
    let (n, z) = cfg.start()?;
    let task = ForwardTask {
        params: &cfg.params,
        population: n,
        init: z,
        stop: Stop::At(cfg.horizon),
        grid,
    };
    map_replicates(cfg.replicates, ctx.workers, |i| engine.run(&task, &mut ctx.streams.stream(StreamRole::Forward, i)))
}

/// Per-time means with the closed-form `z₃` check and, without mutation, the martingale check.
fn path_checks(cfg: &ExperimentConfig, z0: &FrequencyState, records: &[PathRecord], grid: &SamplingGrid) -> (Value, Vec<Check>) {
    let mut rows = Vec::new();
    let mut z3_ok = true;
    let mut mart_ok = true;
    let mut worst_z3: f64 = 0.0;
    let mut worst_mart: f64 = 0.0;
    for &t in grid.times() {
        let mut z1 = SampleSummary::default();
        let mut hearts = SampleSummary::default();
        let mut z3 = SampleSummary::default();
        for r in records {
            if let Some(s) = r.at(t) {
                z1.push(s.z1);
                hearts.push(s.z1 + s.z2);
                z3.push(s.z3);
            }
        }
        let target = z3_exact(z0.z3, cfg.params.alpha, cfg.params.sigma, t);
        let d3 = z3.mean() - target;
        let z3_pass = within_se(d3, z3.standard_error(), IDENTITY_SE) || d3.abs() < 1e-12;
        z3_ok &= z3_pass;
        worst_z3 = worst_z3.max(d3.abs() / z3.standard_error().max(1e-300));
        let dh = hearts.mean() - (z0.z1 + z0.z2);
        mart_ok &= within_se(dh, hearts.standard_error(), IDENTITY_SE) || dh.abs() < 1e-12;
        worst_mart = worst_mart.max(dh.abs() / hearts.standard_error().max(1e-300));
        rows.push(json!({
            "t": t,
            "mean_z1": z1.mean(), "se_z1": z1.standard_error(),
            "mean_z1_plus_z2": hearts.mean(), "se_z1_plus_z2": hearts.standard_error(),
            "mean_z3": z3.mean(), "se_z3": z3.standard_error(), "z3_closed_form": target,
        }));
    }
    let mut checks = vec![Check::new(
        "mean z3 follows the closed form",
        z3_ok,
        format!("largest deviation {worst_z3:.2} SE"),
    )];
    if cfg.params.mutation.is_zero() {
        checks.push(Check::new(
            "E[Z1+Z2] is constant",
            mart_ok,
            format!("largest deviation {worst_mart:.2} SE"),
        ));
    }
    let fixed = |f: Fixation| records.iter().filter(|r| r.fixation == f).count();
    let summary = json!({
        "replicates": records.len(),
        "times": rows,
        "fixed_heart": fixed(Fixation::Heart),
        "fixed_spade": fixed(Fixation::Spade),
    });
    (summary, checks)
}

fn path_csv(records: &[PathRecord]) -> String {
    let mut s = String::new();
    for (i, r) in records.iter().enumerate() {
        write_path_rows(&mut s, i as u64, r);
    }
    s
}

pub struct MoranExperiment;

impl Named for MoranExperiment {
    fn name(&self) -> &'static str {
        "moran"
    }
}

impl Experiment for MoranExperiment {
    fn description(&self) -> &'static str {
        "forward Moran paths (engine `moran` or `moran-counts`)"
    }

    fn run(&self, cfg: &ExperimentConfig, ctx: &Context) -> Result<ExperimentOutput> {
        let name = cfg.engine.as_deref().unwrap_or("moran");
        if !matches!(name, "moran" | "moran-counts") {
            return Err(Error::InvalidParams(format!("engine `{name}` is not a Moran engine")));
        }
        let grid = cfg.grid()?;
        let records = run_paths(ctx.engines.get(name)?, cfg, ctx, &grid)?;
        let (summary, checks) = path_checks(cfg, &cfg.start()?.1, &records, &grid);
        Ok(ExperimentOutput {
            csv_header: PATH_CSV_HEADER,
            csv_rows: path_csv(&records),
            summary,
            checks,
        })
    }
}

pub struct LookdownExperiment;

impl Named for LookdownExperiment {
    fn name(&self) -> &'static str {
        "lookdown"
    }
}

impl Experiment for LookdownExperiment {
    fn description(&self) -> &'static str {
        "forward lookdown paths"
    }

    fn run(&self, cfg: &ExperimentConfig, ctx: &Context) -> Result<ExperimentOutput> {
        let grid = cfg.grid()?;
        let records = run_paths(ctx.engines.get("lookdown")?, cfg, ctx, &grid)?;
        let (summary, checks) = path_checks(cfg, &cfg.start()?.1, &records, &grid);
        Ok(ExperimentOutput {
            csv_header: PATH_CSV_HEADER,
            csv_rows: path_csv(&records),
            summary,
            checks,
        })
    }
}

pub struct SdeExperiment;

impl Named for SdeExperiment {
    fn name(&self) -> &'static str {
        "sde"
    }
}

impl Experiment for SdeExperiment {
    fn description(&self) -> &'static str {
        "Euler paths of the limiting jump diffusion"
    }

    fn run(&self, cfg: &ExperimentConfig, ctx: &Context) -> Result<ExperimentOutput> {
        let grid = cfg.grid()?;
        let z0 = cfg.initial;
        let init = DiffusionState::from_frequencies(&z0);
        let runs = map_replicates(cfg.replicates, ctx.workers, |i| {
            let mut rng = ctx.streams.stream(StreamRole::Diffusion, i);
            match integrate_sdbkm(init, &cfg.params, &cfg.integrator, &grid, cfg.horizon, &mut rng) {
                Ok(p) => Ok(Some(p)),
                Err(Error::PathRejected(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })?;
        let rejected = runs.iter().filter(|r| r.is_none()).count();
        let paths: Vec<_> = runs.into_iter().flatten().collect();
        let records: Vec<PathRecord> = paths.iter().map(|p| p.record.clone()).collect();
        let (mut summary, mut checks) = path_checks(cfg, &z0, &records, &grid);
        let mut worst: f64 = 0.0;
        for r in &records {
            for s in &r.samples {
                worst = worst.max((s.state.z3 - z3_exact(z0.z3, cfg.params.alpha, cfg.params.sigma, s.t)).abs());
            }
        }
        checks[0] = Check::new("z3 equals the closed form", worst <= 1e-10, format!("max |error| {worst:.3e}"));
        let clamp = SampleSummary::from_slice(&paths.iter().map(|p| p.clamp_total).collect::<Vec<_>>());
        summary["rejected"] = json!(rejected);
        summary["mean_clamp_total"] = json!(clamp.mean());
        Ok(ExperimentOutput {
            csv_header: DIFFUSION_CSV_HEADER,
            csv_rows: path_csv(&records),
            summary,
            checks,
        })
    }
}

pub struct CoalescentExperiment;

impl Named for CoalescentExperiment {
    fn name(&self) -> &'static str {
        "coalescent"
    }
}

impl Experiment for CoalescentExperiment {
    fn description(&self) -> &'static str {
        "marked-partition genealogies and their block-counting projection"
    }

    fn run(&self, cfg: &ExperimentConfig, ctx: &Context) -> Result<ExperimentOutput> {
        let [n, m] = cfg.lineages;
        if n + m == 0 {
            return Err(Error::InvalidParams("`lineages` must contain at least one lineage".into()));
        }
        let mut flags = vec![Flag::Active; n];
        flags.extend(std::iter::repeat_n(Flag::Dormant, m));
        let env = cfg.initial.env;
        let horizon = cfg.horizon;
        let marked = map_replicates(cfg.replicates, ctx.workers, |i| {
            simulate_marked_coalescent(&flags, env, &cfg.params, horizon, StopRule::Absorption, &mut ctx.streams.stream(StreamRole::Backward, i))
        })?;
        let counting = ctx.streams.with_salt(1);
        let projected = map_replicates(cfg.replicates, ctx.workers, |i| {
            simulate_block_counting(
                BlockCountState::new(n, m, env),
                &cfg.params,
                horizon,
                StopRule::Absorption,
                &EnvDriver::Autonomous,
                false,
                &mut counting.stream(StreamRole::Backward, i),
            )
        })?;
        let mut csv = String::new();
        for (i, g) in marked.iter().enumerate() {
            let t = g.absorption_time.map(|t| t.to_string()).unwrap_or_default();
            let nw = g.to_newick().unwrap_or_default();
            let _ = writeln!(csv, "{i},{t},{},{nw}", g.removed.len());
        }
        let times_a: Vec<f64> = marked.iter().map(|g| g.absorption_time.unwrap_or(horizon)).collect();
        let times_b: Vec<f64> = projected.iter().map(|p| p.absorption_time.unwrap_or(horizon)).collect();
        let ks = ks_two_sample(&times_a, &times_b)?;
        let a = SampleSummary::from_slice(&times_a);
        let b = SampleSummary::from_slice(&times_b);
        let censored = marked.iter().filter(|g| g.absorption_time.is_none()).count();
        Ok(ExperimentOutput {
            csv_header: "replicate,absorption_time,removed,newick",
            csv_rows: csv,
            summary: json!({
                "lineages": [n, m],
                "mean_absorption_marked": a.mean(), "se_marked": a.standard_error(),
                "mean_absorption_counting": b.mean(), "se_counting": b.standard_error(),
                "censored": censored,
                "ks": ks,
            }),
            checks: vec![Check::new(
                "marked coalescent projects onto the block-counting chain",
                ks.p_value > DISTRIBUTION_ALPHA,
                format!("KS D = {:.4}, p = {:.4}", ks.statistic, ks.p_value),
            )],
        })
    }
}

pub struct DualityExperiment;

impl Named for DualityExperiment {
    fn name(&self) -> &'static str {
        "duality"
    }
}

/// Population size up to which the forward side is also computed exactly.
pub const EXACT_ORACLE_MAX_N: usize = 5;

impl Experiment for DualityExperiment {
    fn description(&self) -> &'static str {
        "sampling duality between the frequency process and the block-counting chain"
    }

    fn run(&self, cfg: &ExperimentConfig, ctx: &Context) -> Result<ExperimentOutput> {
        let engine = ctx.engines.get(cfg.engine.as_deref().unwrap_or("moran"))?;
        let (pop, z) = cfg.start()?;
        let grid = cfg.grid()?;
        let mut csv = String::new();
        let mut checks = Vec::new();
        let mut results = Vec::new();
        let mut k = 0u64;
        for &t in grid.times() {
            for &[n, m] in &cfg.samples {
                let inst = DualityInstance {
                    params: cfg.params.clone(),
                    population: pop,
                    z,
                    n,
                    m,
                    t,
                    replicates: cfg.replicates,
                };
                let est = duality_gap(&inst, engine, &ctx.streams.with_salt(k), ctx.workers)?;
                k += 1;
                write_duality_row(&mut csv, &inst, &est);
                checks.push(Check::new(
                    format!("duality t={t} (n,m)=({n},{m})"),
                    est.pass,
                    format!("gap {:+.5} SE {:.5}", est.gap, est.se),
                ));
                let mut row = json!({"t": t, "n": n, "m": m, "estimate": est});
                if pop <= EXACT_ORACLE_MAX_N {
                    let exact = exact_duality_lhs(&inst)?;
                    let d = est.lhs - exact;
                    checks.push(Check::new(
                        format!("exact forward side t={t} (n,m)=({n},{m})"),
                        within_se(d, est.lhs_se, IDENTITY_SE) || d.abs() < 1e-12,
                        format!("MC {:.5} exact {exact:.5}", est.lhs),
                    ));
                    row["exact_lhs"] = json!(exact);
                }
                results.push(row);
            }
        }
        Ok(ExperimentOutput {
            csv_header: DUALITY_CSV_HEADER,
            csv_rows: csv,
            summary: json!({"N": pop, "engine": engine.name(), "instances": results}),
            checks,
        })
    }
}

pub struct GeneratorExperiment;

impl Named for GeneratorExperiment {
    fn name(&self) -> &'static str {
        "generator_conv"
    }
}

impl Experiment for GeneratorExperiment {
    fn description(&self) -> &'static str {
        "convergence of the finite-N generator to the limit generator"
    }

    fn run(&self, cfg: &ExperimentConfig, _ctx: &Context) -> Result<ExperimentOutput> {
        if let Some(&bad) = cfg.sizes.iter().find(|&&n| n == 0 || n % 50 != 0) {
            return Err(Error::InvalidParams(format!("generator sizes must be multiples of 50, got {bad}")));
        }
        let fs = cfg.functions.iter().map(|f| TestFunction::builtin(f)).collect::<Result<Vec<_>>>()?;
        let rows = convergence_table(&fs, &cfg.sizes, &cfg.params, &interior_grid())?;
        let mut csv = String::new();
        let mut checks = Vec::new();
        for f in &fs {
            let mine: Vec<_> = rows.iter().filter(|r| r.f_name == f.name).collect();
            for r in &mine {
                let _ = writeln!(csv, "{},{},{}", r.f_name, r.n, r.sup_error);
            }
            for pair in mine.windows(2) {
                if pair[1].n == 2 * pair[0].n {
                    let ratio = pair[0].sup_error / pair[1].sup_error;
                    checks.push(Check::new(
                        format!("{} first order N={}→{}", f.name, pair[0].n, pair[1].n),
                        first_order(pair[0].sup_error, pair[1].sup_error),
                        format!("errors {:.3e} / {:.3e}, ratio {ratio:.3}", pair[0].sup_error, pair[1].sup_error),
                    ));
                }
            }
        }
        Ok(ExperimentOutput {
            csv_header: CONVERGENCE_CSV_HEADER,
            csv_rows: csv,
            summary: json!({"rows": rows}),
            checks,
        })
    }
}

/// Lookdown runs to monomorphism: `(runs, disagreements)` between "♥ fixes" and "level 1 is ♥".
pub fn level_one_agreement(
    params: &SimParams,
    comp: &Composition,
    env: bool,
    runs: u64,
    max_time: f64,
    streams: &StreamFactory,
    workers: usize,
) -> Result<(u64, u64, u64)> {
    let empty = SamplingGrid::empty();
    let out = map_replicates(runs, workers, |i| {
        let mut rng = streams.stream(StreamRole::Forward, i);
        let init = LookdownState::exchangeable(comp, env, &mut rng)?;
        let first = init.levels[0].allele;
        let rec = simulate_lookdown(init, params, Stop::UntilMonomorphic { max_time }, &empty, &mut rng)?;
        Ok(match rec.fixation {
            Fixation::Censored => (1, 0),
            f => (0, u64::from((f == Fixation::Heart) != (first == Allele::Heart))),
        })
    })?;
    let censored = out.iter().map(|x| x.0).sum();
    let disagreements = out.iter().map(|x| x.1).sum();
    Ok((runs, disagreements, censored))
}

/// `Z₁(t)` of Moran paths that end with ♥ fixed, collected in replicate order until `wanted` are found.
#[allow(clippy::too_many_arguments)]
pub fn rejection_sampled_moran(
    params: &SimParams,
    comp: &Composition,
    env: bool,
    t: f64,
    wanted: usize,
    max_time: f64,
    streams: &StreamFactory,
    workers: usize,
) -> Result<(Vec<f64>, u64)> {
    let grid = SamplingGrid::new(vec![t])?;
    let mut accepted = Vec::with_capacity(wanted);
    let mut tried = 0u64;
    let batch = (wanted as u64).max(64);
    while accepted.len() < wanted {
        let offset = tried;
        let out = map_replicates(batch, workers, |i| {
            let mut rng = streams.stream(StreamRole::Forward, offset + i);
            let init = PopulationState::new(comp.exchangeable(&mut rng), env)?;
            let rec = simulate(init, params, Stop::UntilMonomorphic { max_time }, &grid, &mut rng)?;
            Ok((rec.fixation == Fixation::Heart).then(|| rec.at(t).map(|z| z.z1)).flatten())
        })?;
        tried += batch;
        for z in out.into_iter().flatten() {
            if accepted.len() < wanted {
                accepted.push(z);
            }
        }
        if tried > 1000 * wanted as u64 + 10_000 {
            return Err(Error::InsufficientData("♥ almost never fixes; rejection sampling gave up".into()));
        }
    }
    Ok((accepted, tried))
}

/// Full-population `Z₁(t)` from the conditioned model.
pub fn conditioned_samples(
    params: &SimParams,
    comp: &Composition,
    mode: ConditionedMode,
    t: f64,
    count: usize,
    streams: &StreamFactory,
    workers: usize,
) -> Result<Vec<f64>> {
    let grid = SamplingGrid::new(vec![t])?;
    let n = comp.size();
    map_replicates(count as u64, workers, |i| {
        let mut rng = streams.stream(StreamRole::Forward, i);
        let rec = conditioned_model(params, comp, mode, Stop::At(t), &grid, &mut rng)?;
        let upper = rec
            .at(t)
            .ok_or_else(|| Error::InvalidState("conditioned run did not record its sample".into()))?;
        Ok(full_frequency(upper, n).z1)
    })
}

pub struct FixationExperiment;

impl Named for FixationExperiment {
    fn name(&self) -> &'static str {
        "fixation_equiv"
    }
}

impl Experiment for FixationExperiment {
    fn description(&self) -> &'static str {
        "conditioning on ♥ fixation: level-1 rule and DIRECT / REDUCED / rejection-sampled laws"
    }

    fn run(&self, cfg: &ExperimentConfig, ctx: &Context) -> Result<ExperimentOutput> {
        let (pop, z) = cfg.start()?;
        let comp = match cfg.composition {
            Some(c) => c,
            None => Composition::from_frequencies(&z, pop)?,
        };
        let t = cfg.horizon;
        let count = cfg.replicates as usize;
        let (runs, disagreements, censored) =
            level_one_agreement(&cfg.params, &comp, z.env, cfg.replicates, cfg.max_time, &ctx.streams.with_salt(1), ctx.workers)?;
        let (moran, tried) =
            rejection_sampled_moran(&cfg.params, &comp, z.env, t, count, cfg.max_time, &ctx.streams.with_salt(2), ctx.workers)?;
        let direct = conditioned_samples(&cfg.params, &comp, ConditionedMode::Direct, t, count, &ctx.streams.with_salt(3), ctx.workers)?;
        let reduced = conditioned_samples(&cfg.params, &comp, ConditionedMode::Reduced, t, count, &ctx.streams.with_salt(4), ctx.workers)?;
        let mut checks = vec![Check::new(
            "♥ fixes iff level 1 starts ♥",
            disagreements == 0 && censored == 0,
            format!("{disagreements} disagreements, {censored} censored in {runs} runs"),
        )];
        let mut tests = serde_json::Map::new();
        for (name, a, b) in [
            ("moran_vs_direct", &moran, &direct),
            ("moran_vs_reduced", &moran, &reduced),
            ("direct_vs_reduced", &direct, &reduced),
        ] {
            let ks = ks_two_sample(a, b)?;
            checks.push(Check::new(
                format!("KS {name}"),
                ks.p_value > DISTRIBUTION_ALPHA,
                format!("D = {:.4}, p = {:.4}", ks.statistic, ks.p_value),
            ));
            tests.insert(name.into(), json!(ks));
        }
        let mut csv = String::new();
        for (source, xs) in [("moran", &moran), ("direct", &direct), ("reduced", &reduced)] {
            for (i, x) in xs.iter().enumerate() {
                let _ = writeln!(csv, "{source},{i},{x}");
            }
        }
        let mean = |xs: &[f64]| SampleSummary::from_slice(xs).mean();
        Ok(ExperimentOutput {
            csv_header: "source,replicate,z1",
            csv_rows: csv,
            summary: json!({
                "N": pop, "t": t,
                "level_one": {"runs": runs, "disagreements": disagreements, "censored": censored},
                "moran_paths_tried": tried,
                "mean_z1": {"moran": mean(&moran), "direct": mean(&direct), "reduced": mean(&reduced)},
                "ks": tests,
            }),
            checks,
        })
    }
}
