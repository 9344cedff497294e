//! Belief updates: Bayesian local beliefs and the resilient actual-belief
//! rules (synchronous and asynchronous, minimum and average fusion).
//!
//! Every agent keeps a local belief (LB), updated with Bayes' rule from its
//! own observations, and an actual belief (AB), which it shares. Per
//! hypothesis θ the AB takes one of two branches:
//!
//! * case one, when enough neighbors that can separate θ from every other
//!   hypothesis are available: fuse their shared ABs, discarding the `f`
//!   lowest (minimum rule) or averaging a trimmed middle set (average rule),
//!   and clamp by the fresh LB;
//! * case two otherwise: `min(previous AB, fresh LB)`.
//!
//! The synchronous variant needs those neighbors at a single instant; the
//! asynchronous one accumulates shared values across steps until the count
//! suffices, fuses, and then resets.
//!
//! Ties are always broken by ascending agent id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{normalize, AgentId, AgentSet, Belief, HypIdx, RawBelief, SourceSetIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionRule {
    Min,
    Avg,
}

impl FusionRule {
    /// Source-neighbor count needed to enter case one: `2f+1` (min) or `2f+2` (avg).
    pub fn case_threshold(self, f: usize) -> usize {
        match self {
            FusionRule::Min => 2 * f + 1,
            FusionRule::Avg => 2 * f + 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionRule::Min => "min",
            FusionRule::Avg => "avg",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sdht,
    Adht,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Sdht => "sdht",
            Algorithm::Adht => "adht",
        }
    }
}

/// One execution of the case-one branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseOneEvent {
    pub agent: AgentId,
    pub hypothesis: HypIdx,
    /// Time index of the belief produced by the update.
    pub time: usize,
    pub algorithm: Algorithm,
}

/// `b(θ) ∝ l(s|θ) · b_prev(θ)`.
pub fn lb_update(prev: &Belief, likelihoods: &[f64]) -> Result<Belief> {
    if prev.len() != likelihoods.len() {
        return Err(Error::DimensionMismatch {
            left: prev.len(),
            right: likelihoods.len(),
        });
    }
    let numerators: Vec<f64> = likelihoods
        .iter()
        .zip(prev.as_slice())
        .map(|(l, b)| l * b)
        .collect();
    let denominator: f64 = numerators.iter().sum();
    if !(denominator > 0.0) {
        return Err(Error::ZeroEvidence);
    }
    Ok(Belief::from_vec_unchecked(
        numerators.into_iter().map(|n| n / denominator).collect(),
    ))
}

/// Whether the synchronous case-one branch applies to θ for this neighbor set.
pub fn sdht_case_condition(
    theta: HypIdx,
    neighbors: AgentSet,
    sources: &SourceSetIndex,
    f: usize,
    rule: FusionRule,
) -> bool {
    sources.meets(theta, neighbors, rule.case_threshold(f))
}

fn ascending(a: &(AgentId, f64), b: &(AgentId, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

fn descending(a: &(AgentId, f64), b: &(AgentId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Drop the `f` lowest shared values and take the minimum of the rest and `own_lb`.
pub fn min_fuse(shared: &[(AgentId, f64)], own_lb: f64, f: usize) -> Result<f64> {
    if shared.len() <= f {
        return Err(Error::Contract(format!(
            "min rule needs more than f={f} shared beliefs, got {}",
            shared.len()
        )));
    }
    let mut sorted = shared.to_vec();
    sorted.sort_by(ascending);
    Ok(sorted[f].1.min(own_lb))
}

/// Lowest, middle and highest neighbor sets for the average rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Partition {
    pub low: AgentSet,
    pub mid: AgentSet,
    pub high: AgentSet,
}

/// Split the shared pool into `L` (the `f` lowest), `H` (the shortest
/// highest-first run holding `f+1` members of every `S(θ,θ')`) and `M`.
pub fn partition_lmh(
    theta: HypIdx,
    shared: &[(AgentId, f64)],
    sources: &SourceSetIndex,
    f: usize,
) -> Result<Partition> {
    let keys: AgentSet = shared.iter().map(|&(j, _)| j).collect();
    if keys.len() != shared.len() {
        return Err(Error::Contract("duplicate agent in shared beliefs".into()));
    }
    if !sources.meets(theta, keys, FusionRule::Avg.case_threshold(f)) {
        return Err(Error::Contract(format!(
            "average rule needs {} source agents for hypothesis {theta}",
            FusionRule::Avg.case_threshold(f)
        )));
    }
    let mut order = shared.to_vec();
    order.sort_by(ascending);
    let low: AgentSet = order.iter().take(f).map(|&(j, _)| j).collect();

    order.sort_by(descending);
    let constraints = sources.constraints(theta);
    let mut high = AgentSet::empty();
    for &(j, _) in order.iter().filter(|(j, _)| !low.contains(*j)) {
        if constraints.iter().all(|c| c.intersection(high).len() > f) {
            break;
        }
        high.insert(j);
    }
    let mid = keys.difference(low).difference(high);
    if mid.is_empty() || !constraints.iter().all(|c| c.intersection(high).len() > f) {
        return Err(Error::Contract(format!(
            "no valid L/M/H partition for hypothesis {theta}"
        )));
    }
    Ok(Partition { low, mid, high })
}

/// `min(mean of M, own_lb)`.
pub fn avg_fuse(mid: AgentSet, shared: &[(AgentId, f64)], own_lb: f64) -> Result<f64> {
    if mid.is_empty() {
        return Err(Error::Contract("average rule needs a non-empty middle set".into()));
    }
    let mut members: Vec<(AgentId, f64)> = shared
        .iter()
        .copied()
        .filter(|(j, _)| mid.contains(*j))
        .collect();
    if members.len() != mid.len() {
        return Err(Error::Contract("middle set references unknown agents".into()));
    }
    members.sort_by_key(|&(j, _)| j);
    let sum: f64 = members.iter().map(|&(_, v)| v).sum();
    Ok((sum / members.len() as f64).min(own_lb))
}

/// Case-one fusion for one hypothesis under either rule.
fn fuse(
    rule: FusionRule,
    theta: HypIdx,
    shared: &[(AgentId, f64)],
    own_lb: f64,
    sources: &SourceSetIndex,
    f: usize,
) -> Result<f64> {
    match rule {
        FusionRule::Min => min_fuse(shared, own_lb, f),
        FusionRule::Avg => {
            let p = partition_lmh(theta, shared, sources, f)?;
            avg_fuse(p.mid, shared, own_lb)
        }
    }
}

/// Accumulated shared beliefs for the asynchronous rule, one slot per hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct AdhtState {
    n_agents: usize,
    saved: Vec<f64>,
    pool: Vec<AgentSet>,
    reset_flag: Vec<bool>,
}

impl AdhtState {
    pub fn new(n_agents: usize, m: usize) -> Self {
        AdhtState {
            n_agents,
            saved: vec![0.0; n_agents * m],
            pool: vec![AgentSet::empty(); m],
            reset_flag: vec![false; m],
        }
    }

    /// Agents whose latest value is held for θ, including the owner.
    pub fn pool(&self, theta: HypIdx) -> AgentSet {
        self.pool[theta]
    }

    /// `N^θ_i`: the pool without the owner.
    pub fn collected_from(&self, theta: HypIdx, owner: AgentId) -> AgentSet {
        let mut s = self.pool[theta];
        s.remove(owner);
        s
    }

    pub fn saved(&self, theta: HypIdx, agent: AgentId) -> f64 {
        self.saved[theta * self.n_agents + agent]
    }

    pub fn reset_flag(&self, theta: HypIdx) -> bool {
        self.reset_flag[theta]
    }

    /// Clear the accumulator for θ.
    pub fn reset(&mut self, theta: HypIdx) {
        let row = theta * self.n_agents;
        self.saved[row..row + self.n_agents].fill(0.0);
        self.pool[theta] = AgentSet::empty();
        self.reset_flag[theta] = false;
    }

    fn shared(&self, theta: HypIdx, out: &mut Vec<(AgentId, f64)>) {
        out.clear();
        out.extend(self.pool[theta].iter().map(|j| (j, self.saved(theta, j))));
    }
}

/// State of one honest agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub local: Belief,
    pub actual: Belief,
    pub adht: AdhtState,
}

impl AgentState {
    pub fn new(id: AgentId, n_agents: usize, local: Belief, actual: Belief) -> Result<Self> {
        if local.len() != actual.len() {
            return Err(Error::DimensionMismatch {
                left: local.len(),
                right: actual.len(),
            });
        }
        let m = local.len();
        Ok(AgentState {
            id,
            local,
            actual,
            adht: AdhtState::new(n_agents, m),
        })
    }
}

/// Time-`t` broadcasts visible to one agent.
#[derive(Clone, Copy, Debug)]
pub struct SharedView<'a> {
    /// `N_{i,t+1}`, including the agent itself.
    pub neighbors: AgentSet,
    /// Broadcast beliefs of every agent, indexed by id.
    pub beliefs: &'a [Belief],
}

impl SharedView<'_> {
    fn gather(&self, theta: HypIdx, out: &mut Vec<(AgentId, f64)>) {
        out.clear();
        out.extend(self.neighbors.iter().map(|j| (j, self.beliefs[j].get(theta))));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    /// Time of the shared snapshot; the step produces beliefs for `time + 1`.
    pub time: usize,
    pub f: usize,
    pub rule: FusionRule,
    pub sources: &'a SourceSetIndex,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: AgentState,
    pub events: Vec<CaseOneEvent>,
}

fn check_view(state: &AgentState, view: &SharedView<'_>, likelihoods: &[f64]) -> Result<()> {
    let m = state.local.len();
    if likelihoods.len() != m {
        return Err(Error::DimensionMismatch {
            left: likelihoods.len(),
            right: m,
        });
    }
    if !view.neighbors.contains(state.id) {
        return Err(Error::Contract(format!(
            "neighbor set of agent {} must include itself",
            state.id
        )));
    }
    if let Some(j) = view.neighbors.iter().find(|&j| j >= view.beliefs.len()) {
        return Err(Error::UnknownAgent(j));
    }
    if let Some(b) = view.neighbors.iter().map(|j| &view.beliefs[j]).find(|b| b.len() != m) {
        return Err(Error::DimensionMismatch {
            left: b.len(),
            right: m,
        });
    }
    Ok(())
}

/// One synchronous update: LB by Bayes, AB by case one or two, then normalize.
pub fn sdht_step(
    state: &AgentState,
    view: &SharedView<'_>,
    likelihoods: &[f64],
    ctx: &StepContext<'_>,
) -> Result<StepOutcome> {
    check_view(state, view, likelihoods)?;
    let local = lb_update(&state.local, likelihoods)?;
    let m = local.len();
    let mut raw = Vec::with_capacity(m);
    let mut events = Vec::new();
    let mut shared = Vec::with_capacity(view.neighbors.len());
    for theta in 0..m {
        let lb = local.get(theta);
        if sdht_case_condition(theta, view.neighbors, ctx.sources, ctx.f, ctx.rule) {
            view.gather(theta, &mut shared);
            raw.push(fuse(ctx.rule, theta, &shared, lb, ctx.sources, ctx.f)?);
            events.push(CaseOneEvent {
                agent: state.id,
                hypothesis: theta,
                time: ctx.time + 1,
                algorithm: Algorithm::Sdht,
            });
        } else {
            raw.push(state.actual.get(theta).min(lb));
        }
    }
    let actual = normalize(&RawBelief::new(raw)?)?;
    Ok(StepOutcome {
        state: AgentState {
            id: state.id,
            local,
            actual,
            adht: state.adht.clone(),
        },
        events,
    })
}

/// Accumulate the current neighbors' values for θ and report whether the
/// asynchronous case-one branch applies.
///
/// Resets first when `t == 0` or the previous call returned true.
pub fn abu(
    adht: &mut AdhtState,
    theta: HypIdx,
    view: &SharedView<'_>,
    ctx: &StepContext<'_>,
) -> bool {
    if ctx.time == 0 || adht.reset_flag[theta] {
        adht.reset(theta);
    }
    let row = theta * adht.n_agents;
    for j in view.neighbors.iter() {
        adht.pool[theta].insert(j);
        adht.saved[row + j] = view.beliefs[j].get(theta);
    }
    if !ctx
        .sources
        .meets(theta, adht.pool[theta], ctx.rule.case_threshold(ctx.f))
    {
        return false;
    }
    adht.reset_flag[theta] = true;
    true
}

/// One asynchronous update. Case one fuses the accumulated values.
pub fn adht_step(
    state: &AgentState,
    view: &SharedView<'_>,
    likelihoods: &[f64],
    ctx: &StepContext<'_>,
) -> Result<StepOutcome> {
    check_view(state, view, likelihoods)?;
    let local = lb_update(&state.local, likelihoods)?;
    let m = local.len();
    let mut adht = state.adht.clone();
    let mut raw = Vec::with_capacity(m);
    let mut events = Vec::new();
    let mut shared = Vec::new();
    for theta in 0..m {
        let lb = local.get(theta);
        if abu(&mut adht, theta, view, ctx) {
            adht.shared(theta, &mut shared);
            raw.push(fuse(ctx.rule, theta, &shared, lb, ctx.sources, ctx.f)?);
            events.push(CaseOneEvent {
                agent: state.id,
                hypothesis: theta,
                time: ctx.time + 1,
                algorithm: Algorithm::Adht,
            });
        } else {
            raw.push(state.actual.get(theta).min(lb));
        }
    }
    let actual = normalize(&RawBelief::new(raw)?)?;
    Ok(StepOutcome {
        state: AgentState {
            id: state.id,
            local,
            actual,
            adht,
        },
        events,
    })
}

/// Dispatch on the algorithm.
pub fn step(
    algorithm: Algorithm,
    state: &AgentState,
    view: &SharedView<'_>,
    likelihoods: &[f64],
    ctx: &StepContext<'_>,
) -> Result<StepOutcome> {
    match algorithm {
        Algorithm::Sdht => sdht_step(state, view, likelihoods, ctx),
        Algorithm::Adht => adht_step(state, view, likelihoods, ctx),
    }
}
