//! The seed-bank coalescent: marked partitions and the block-counting chain.
//!
//! Backwards in time, `i` of the `n` active blocks merge at rate
//! `C(n,i)·(a₀𝟙{i=2} + Σ_j w_j y_j^{i−2}(1−y_j)^{n−i})`, blocks switch flags at
//! `αn` (sleep) and `σm` (wake), and while the environment is on, `i` active
//! blocks are removed by mutation at rate
//! `C(n,i)·(b₀𝟙{i=1} + Σ_j w_j y_j^{i−1}(1−y_j)^{n−i})`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{binom, binom_weight};
use crate::error::{Error, Result};
use crate::model::SimParams;
use crate::rng::holding_time;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockCountState {
    pub n: usize,
    pub m: usize,
    pub env: bool,
}

impl BlockCountState {
    #[must_use]
    pub const fn new(n: usize, m: usize, env: bool) -> Self {
        Self { n, m, env }
    }

    #[must_use]
    pub fn blocks(&self) -> usize {
        self.n + self.m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMove {
    Merge { size: usize },
    Wake,
    Sleep,
    Removal { size: usize },
    EnvFlip,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockTransition {
    pub kind: BlockMove,
    pub target: BlockCountState,
    pub rate: f64,
}

/// Rate at which one particular set of `i` out of `n` active blocks merges.
#[must_use]
pub fn merge_rate_per_set(params: &SimParams, n: usize, i: usize) -> f64 {
    if i < 2 || i > n {
        return 0.0;
    }
    let mut r = if i == 2 { params.lambda.kingman_mass } else { 0.0 };
    for a in &params.lambda.atoms {
        r += a.weight * pow(a.location, i - 2) * pow(1.0 - a.location, n - i);
    }
    r
}

/// Rate at which one particular set of `i` out of `n` active blocks is removed (environment on).
#[must_use]
pub fn removal_rate_per_set(params: &SimParams, n: usize, i: usize) -> f64 {
    if i < 1 || i > n {
        return 0.0;
    }
    let mut r = if i == 1 { params.mutation.kingman_mass } else { 0.0 };
    for a in &params.mutation.atoms {
        r += a.weight * pow(a.location, i - 1) * pow(1.0 - a.location, n - i);
    }
    r
}

fn pow(x: f64, e: usize) -> f64 {
    if e == 0 {
        1.0
    } else {
        x.powi(e as i32)
    }
}

fn merge_rate_total(params: &SimParams, n: usize, i: usize) -> f64 {
    let (nn, ii) = (n as u64, i as u64);
    let mut r = if i == 2 { binom(nn, 2) * params.lambda.kingman_mass } else { 0.0 };
    for a in &params.lambda.atoms {
        r += a.weight * binom_weight(nn, ii, a.location, ii as i64 - 2, (nn - ii) as i64);
    }
    r
}

fn removal_rate_total(params: &SimParams, n: usize, i: usize) -> f64 {
    let (nn, ii) = (n as u64, i as u64);
    let mut r = if i == 1 { nn as f64 * params.mutation.kingman_mass } else { 0.0 };
    for a in &params.mutation.atoms {
        r += a.weight * binom_weight(nn, ii, a.location, ii as i64 - 1, (nn - ii) as i64);
    }
    r
}

/// Every transition out of `state` with positive rate.
#[must_use]
pub fn transition_rates(state: BlockCountState, params: &SimParams) -> Vec<BlockTransition> {
    let mut out = Vec::new();
    transitions_into(state, params, true, &mut out);
    out
}

fn transitions_into(state: BlockCountState, params: &SimParams, env_flips: bool, out: &mut Vec<BlockTransition>) {
    out.clear();
    let BlockCountState { n, m, env } = state;
    let mut push = |kind, target, rate: f64| {
        if rate > 0.0 {
            out.push(BlockTransition { kind, target, rate });
        }
    };
    for i in 2..=n {
        push(
            BlockMove::Merge { size: i },
            BlockCountState::new(n - i + 1, m, env),
            merge_rate_total(params, n, i),
        );
    }
    if m > 0 {
        push(BlockMove::Wake, BlockCountState::new(n + 1, m - 1, env), params.sigma * m as f64);
    }
    if n > 0 {
        push(BlockMove::Sleep, BlockCountState::new(n - 1, m + 1, env), params.alpha * n as f64);
    }
    if env {
        for i in 1..=n {
            push(
                BlockMove::Removal { size: i },
                BlockCountState::new(n - i, m, env),
                removal_rate_total(params, n, i),
            );
        }
    }
    if env_flips {
        push(
            BlockMove::EnvFlip,
            BlockCountState::new(n, m, !env),
            params.env_flip_rate(env),
        );
    }
}

/// A piecewise-constant environment path on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvPath {
    pub initial: bool,
    pub switches: Vec<f64>,
    pub horizon: f64,
}

impl EnvPath {
    /// Samples ξ on `[0, horizon]` from the autonomous two-state chain.
    pub fn sample<R: Rng + ?Sized>(initial: bool, params: &SimParams, horizon: f64, rng: &mut R) -> Self {
        let mut t = 0.0;
        let mut env = initial;
        let mut switches = Vec::new();
        loop {
            t += holding_time(rng, params.env_flip_rate(env));
            if t > horizon {
                break;
            }
            switches.push(t);
            env = !env;
        }
        Self {
            initial,
            switches,
            horizon,
        }
    }

    #[must_use]
    pub fn at(&self, t: f64) -> bool {
        let flips = self.switches.iter().take_while(|&&s| s <= t).count();
        self.initial ^ (flips % 2 == 1)
    }

    #[must_use]
    pub fn final_state(&self) -> bool {
        self.initial ^ (self.switches.len() % 2 == 1)
    }

    /// The same path read backwards: `u ↦ ξ(horizon − u)`.
    #[must_use]
    pub fn reversed(&self) -> Self {
        Self {
            initial: self.final_state(),
            switches: self.switches.iter().rev().map(|s| self.horizon - s).collect(),
            horizon: self.horizon,
        }
    }
}

/// Where the environment of a backward run comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvDriver {
    /// Its own two-state chain started from the state's `env`.
    Autonomous,
    /// A prescribed path; the state's `env` is overwritten by `path.initial`.
    Prescribed(EnvPath),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once at most one block is left.
    #[default]
    Absorption,
    /// Always run to the horizon.
    Horizon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCountPath {
    pub end: BlockCountState,
    pub end_time: f64,
    pub absorption_time: Option<f64>,
    /// `(t, state)` after each jump when recording was requested, starting at time 0.
    pub jumps: Vec<(f64, BlockCountState)>,
}

impl BlockCountPath {
    /// State at time `t` (needs a recorded path).
    #[must_use]
    pub fn state_at(&self, t: f64) -> Option<BlockCountState> {
        self.jumps.iter().take_while(|(s, _)| *s <= t).last().map(|&(_, x)| x)
    }
}

/// Gillespie simulation of `(N_t, M_t, ξ_t)`.
pub fn simulate_block_counting<R: Rng + ?Sized>(
    init: BlockCountState,
    params: &SimParams,
    horizon: f64,
    stop: StopRule,
    env: &EnvDriver,
    record: bool,
    rng: &mut R,
) -> Result<BlockCountPath> {
    params.validate()?;
    if !(horizon >= 0.0) {
        return Err(Error::InvalidParams(format!("horizon {horizon} must be ≥ 0")));
    }
    let mut s = init;
    let (prescribed, mut next_switch) = match env {
        EnvDriver::Autonomous => (None, f64::INFINITY),
        EnvDriver::Prescribed(p) => {
            s.env = p.initial;
            (Some(p), p.switches.first().copied().unwrap_or(f64::INFINITY))
        }
    };
    let mut switch_idx = 0;
    let mut t = 0.0;
    let mut absorption_time = (s.blocks() <= 1).then_some(0.0);
    let mut jumps = Vec::new();
    if record {
        jumps.push((0.0, s));
    }
    let mut moves = Vec::new();
    loop {
        if stop == StopRule::Absorption && absorption_time.is_some() {
            break;
        }
        transitions_into(s, params, prescribed.is_none(), &mut moves);
        let total: f64 = moves.iter().map(|m| m.rate).sum();
        let next = t + holding_time(rng, total);
        if next_switch <= horizon && next_switch < next {
            t = next_switch;
            s.env = !s.env;
            switch_idx += 1;
            next_switch = prescribed
                .and_then(|p| p.switches.get(switch_idx).copied())
                .unwrap_or(f64::INFINITY);
            if record {
                jumps.push((t, s));
            }
            continue;
        }
        if next > horizon {
            t = horizon;
            break;
        }
        t = next;
        let mut u = rng.random::<f64>() * total;
        let mut chosen = *moves.last().expect("positive rate");
        for mv in &moves {
            if u < mv.rate {
                chosen = *mv;
                break;
            }
            u -= mv.rate;
        }
        s = chosen.target;
        if record {
            jumps.push((t, s));
        }
        if absorption_time.is_none() && s.blocks() <= 1 {
            absorption_time = Some(t);
        }
    }
    Ok(BlockCountPath {
        end: s,
        end_time: t,
        absorption_time,
        jumps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Active,
    Dormant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: usize,
    /// Sample labels `0..k` in increasing order.
    pub members: Vec<usize>,
    pub flag: Flag,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedPartition {
    pub blocks: Vec<Block>,
}

impl MarkedPartition {
    /// Singletons `{0}, …, {k−1}` with the given flags.
    pub fn singletons(flags: &[Flag]) -> Result<Self> {
        if flags.is_empty() {
            return Err(Error::InvalidParams("sample size must be at least 1".into()));
        }
        Ok(Self {
            blocks: flags
                .iter()
                .enumerate()
                .map(|(i, &flag)| Block {
                    id: i,
                    members: vec![i],
                    flag,
                })
                .collect(),
        })
    }

    #[must_use]
    pub fn counts(&self, env: bool) -> BlockCountState {
        let n = self.blocks.iter().filter(|b| b.flag == Flag::Active).count();
        BlockCountState::new(n, self.blocks.len() - n, env)
    }

    /// Blocks disjoint, non-empty, and (with `removed`) covering `0..k`.
    #[must_use]
    pub fn is_consistent(&self, k: usize, removed: &[usize]) -> bool {
        let mut seen = vec![false; k];
        for &r in removed {
            if r >= k || seen[r] {
                return false;
            }
            seen[r] = true;
        }
        for b in &self.blocks {
            if b.members.is_empty() {
                return false;
            }
            for &x in &b.members {
                if x >= k || seen[x] {
                    return false;
                }
                seen[x] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum GenealogyEventKind {
    Merge { children: Vec<usize>, parent: usize },
    Flag { block: usize, to: Flag },
    /// Blocks killed by mutation at this time.
    Mutated { blocks: Vec<usize> },
    Env { to: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenealogyEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: GenealogyEventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Genealogy {
    pub k: usize,
    pub initial_env: bool,
    pub events: Vec<GenealogyEvent>,
    pub partition: MarkedPartition,
    pub env: bool,
    pub end_time: f64,
    pub absorption_time: Option<f64>,
    /// Sample labels whose lineage was removed by mutation.
    pub removed: Vec<usize>,
}

impl Genealogy {
    /// Block counts just after each event, starting from time 0.
    #[must_use]
    pub fn block_count_path(&self, init_flags: &[Flag]) -> Vec<(f64, BlockCountState)> {
        let mut flags: BTreeMap<usize, Flag> = init_flags.iter().copied().enumerate().collect();
        let mut env = self.initial_env;
        let count = |f: &BTreeMap<usize, Flag>, env| {
            let n = f.values().filter(|&&x| x == Flag::Active).count();
            BlockCountState::new(n, f.len() - n, env)
        };
        let mut out = vec![(0.0, count(&flags, env))];
        for e in &self.events {
            match &e.kind {
                GenealogyEventKind::Merge { children, parent } => {
                    for c in children {
                        flags.remove(c);
                    }
                    flags.insert(*parent, Flag::Active);
                }
                GenealogyEventKind::Flag { block, to } => {
                    flags.insert(*block, *to);
                }
                GenealogyEventKind::Mutated { blocks } => {
                    for b in blocks {
                        flags.remove(b);
                    }
                }
                GenealogyEventKind::Env { to } => env = *to,
            }
            out.push((e.t, count(&flags, env)));
        }
        out
    }

    /// Newick string of a fully coalesced genealogy without mutation removals.
    /// Leaves are labelled `1..=k`.
    pub fn to_newick(&self) -> Result<String> {
        if !self.removed.is_empty() {
            return Err(Error::Unsupported("genealogy has lineages removed by mutation".into()));
        }
        if self.partition.blocks.len() != 1 {
            return Err(Error::Unsupported("genealogy is not fully coalesced".into()));
        }
        let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut height: BTreeMap<usize, f64> = (0..self.k).map(|i| (i, 0.0)).collect();
        let mut smallest: BTreeMap<usize, usize> = (0..self.k).map(|i| (i, i)).collect();
        for e in &self.events {
            if let GenealogyEventKind::Merge { children: c, parent } = &e.kind {
                let mut c = c.clone();
                c.sort_by_key(|x| smallest[x]);
                smallest.insert(*parent, smallest[&c[0]]);
                children.insert(*parent, c);
                height.insert(*parent, e.t);
            }
        }
        fn write(node: usize, parent_h: Option<f64>, ch: &BTreeMap<usize, Vec<usize>>, h: &BTreeMap<usize, f64>, out: &mut String) {
            match ch.get(&node) {
                Some(kids) => {
                    out.push('(');
                    for (i, &kid) in kids.iter().enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        write(kid, Some(h[&node]), ch, h, out);
                    }
                    out.push(')');
                }
                None => {
                    let _ = write!(out, "{}", node + 1);
                }
            }
            if let Some(ph) = parent_h {
                let _ = write!(out, ":{}", ph - h[&node]);
            }
        }
        let mut out = String::new();
        write(self.partition.blocks[0].id, None, &children, &height, &mut out);
        out.push(';');
        Ok(out)
    }
}

/// Simulates the marked-partition coalescent of a sample of `init_flags.len()` lineages.
pub fn simulate_marked_coalescent<R: Rng + ?Sized>(
    init_flags: &[Flag],
    env0: bool,
    params: &SimParams,
    horizon: f64,
    stop: StopRule,
    rng: &mut R,
) -> Result<Genealogy> {
    params.validate()?;
    let k = init_flags.len();
    let mut part = MarkedPartition::singletons(init_flags)?;
    let mut env = env0;
    let mut next_id = k;
    let mut t = 0.0;
    let mut events = Vec::new();
    let mut removed = Vec::new();
    let mut absorption_time = (part.blocks.len() <= 1).then_some(0.0);
    let mut moves = Vec::new();
    loop {
        if stop == StopRule::Absorption && absorption_time.is_some() {
            break;
        }
        let s = part.counts(env);
        transitions_into(s, params, true, &mut moves);
        let total: f64 = moves.iter().map(|m| m.rate).sum();
        let next = t + holding_time(rng, total);
        if next > horizon {
            t = horizon;
            break;
        }
        t = next;
        let mut u = rng.random::<f64>() * total;
        let mut chosen = *moves.last().expect("positive rate");
        for mv in &moves {
            if u < mv.rate {
                chosen = *mv;
                break;
            }
            u -= mv.rate;
        }
        let active: Vec<usize> = (0..part.blocks.len())
            .filter(|&i| part.blocks[i].flag == Flag::Active)
            .collect();
        let dormant: Vec<usize> = (0..part.blocks.len())
            .filter(|&i| part.blocks[i].flag == Flag::Dormant)
            .collect();
        let kind = match chosen.kind {
            BlockMove::Merge { size } => {
                let mut pick: Vec<usize> = sample_indices(rng, active.len(), size)
                    .into_iter()
                    .map(|j| active[j])
                    .collect();
                pick.sort_unstable();
                let mut members = Vec::new();
                let mut ids = Vec::new();
                for &p in pick.iter().rev() {
                    let b = part.blocks.swap_remove(p);
                    members.extend(b.members);
                    ids.push(b.id);
                }
                members.sort_unstable();
                ids.sort_unstable();
                part.blocks.push(Block {
                    id: next_id,
                    members,
                    flag: Flag::Active,
                });
                next_id += 1;
                GenealogyEventKind::Merge {
                    children: ids,
                    parent: next_id - 1,
                }
            }
            BlockMove::Wake => {
                let b = dormant[rng.random_range(0..dormant.len())];
                part.blocks[b].flag = Flag::Active;
                GenealogyEventKind::Flag {
                    block: part.blocks[b].id,
                    to: Flag::Active,
                }
            }
            BlockMove::Sleep => {
                let b = active[rng.random_range(0..active.len())];
                part.blocks[b].flag = Flag::Dormant;
                GenealogyEventKind::Flag {
                    block: part.blocks[b].id,
                    to: Flag::Dormant,
                }
            }
            BlockMove::Removal { size } => {
                let mut pick: Vec<usize> = sample_indices(rng, active.len(), size)
                    .into_iter()
                    .map(|j| active[j])
                    .collect();
                pick.sort_unstable();
                let mut ids = Vec::new();
                for &p in pick.iter().rev() {
                    let b = part.blocks.swap_remove(p);
                    removed.extend(b.members);
                    ids.push(b.id);
                }
                ids.sort_unstable();
                GenealogyEventKind::Mutated { blocks: ids }
            }
            BlockMove::EnvFlip => {
                env = !env;
                GenealogyEventKind::Env { to: env }
            }
        };
        events.push(GenealogyEvent { t, kind });
        if absorption_time.is_none() && part.blocks.len() <= 1 {
            absorption_time = Some(t);
        }
    }
    removed.sort_unstable();
    Ok(Genealogy {
        k,
        initial_env: env0,
        events,
        partition: part,
        env,
        end_time: t,
        absorption_time,
        removed,
    })
}
