//! Scenario description and the per-step simulation loop.
//!
//! Each step runs in two phases. First every agent's shared belief is
//! snapshotted: honest agents share their current AB, bad agents whatever
//! their policy dictates. Then every good agent observes, updates its LB and
//! updates its AB against the snapshot restricted to its neighbors. No update
//! reads a belief produced in the same step.
//!
//! Invariant checks run after every step and cannot be disabled.

mod audit;
mod compare;
mod validate;

pub use audit::{audit, ulp_distance, AuditMismatch, AuditReport};
pub use compare::{compare, median_convergence, ComparisonTable, RunSummary};
pub use validate::{validate, Finding, Severity};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{adversarial_broadcast, AdversaryPolicy};
use crate::belief::{self, Algorithm, AgentState, CaseOneEvent, FusionRule, SharedView, StepContext};
use crate::error::{Error, Result};
use crate::grid::{lcm, neighbors_at, Grid, GridPos, Identity, MotionGraph, RangeSpec, StatePath};
use crate::hypothesis::{compute_source_sets, AgentId, AgentSet, Belief, HypIdx, HypothesisSet, IdentityLabel, SourceSetIndex, TargetPositions, SUM_TOLERANCE};
use crate::observation::{likelihood_vector, sample_reading, ObservationVector, SensorModel};
use crate::rng::{Domain, StreamKey};

pub const DEFAULT_TAU: f64 = 0.99;

/// Upper bound on the joint path period scanned by source-set and validator checks.
pub const MAX_JOINT_PERIOD: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct AgentSpec {
    pub id: AgentId,
    pub path: StatePath,
    pub comm: RangeSpec,
    pub sensing: RangeSpec,
    pub identity: Identity,
    pub adversary: Option<AdversaryPolicy>,
    pub initial_local: Belief,
    pub initial_actual: Belief,
}

/// A complete, self-contained simulation setup.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub grid: Grid,
    pub motion: MotionGraph,
    pub agents: Vec<AgentSpec>,
    pub hypotheses: HypothesisSet,
    pub true_hypothesis: HypIdx,
    pub sigma: f64,
    pub f: usize,
    pub algorithm: Algorithm,
    pub rule: FusionRule,
    pub horizon: usize,
    pub seed: u64,
    pub tau: f64,
}

impl ScenarioSpec {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// LCM of every good and bad cycle length.
    pub fn joint_period(&self) -> Result<usize> {
        let mut p = 1usize;
        for a in &self.agents {
            for identity in [Identity::Good, Identity::Bad] {
                p = lcm(p, a.path.period(identity).max(1));
                if p > MAX_JOINT_PERIOD {
                    return Err(Error::NonPeriodicPath {
                        agent: a.id,
                        reason: format!("joint period exceeds {MAX_JOINT_PERIOD}"),
                    });
                }
            }
        }
        Ok(p)
    }

    /// Where each agent would be at `t` under either identity bit.
    pub fn target_positions(&self, t: usize) -> TargetPositions {
        TargetPositions {
            bad: self.agents.iter().map(|a| a.path.position_at(t, Identity::Bad)).collect(),
            good: self.agents.iter().map(|a| a.path.position_at(t, Identity::Good)).collect(),
        }
    }

    /// Actual positions: each agent follows the cycle of its real identity.
    pub fn positions_at(&self, t: usize) -> Vec<GridPos> {
        self.agents.iter().map(|a| a.path.position_at(t, a.identity)).collect()
    }

    pub fn comm_ranges(&self) -> Vec<RangeSpec> {
        self.agents.iter().map(|a| a.comm).collect()
    }

    pub fn sensor_model(&self, agent: AgentId) -> Result<SensorModel> {
        let a = self.agents.get(agent).ok_or(Error::UnknownAgent(agent))?;
        SensorModel::new(self.sigma, a.sensing, self.grid)
    }

    pub fn true_label(&self) -> Option<IdentityLabel> {
        self.hypotheses.label(self.true_hypothesis)
    }

    pub fn good_agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.agents.iter().filter(|a| a.identity == Identity::Good).map(|a| a.id)
    }

    /// Directory-friendly run name `{scenario}-seed{seed}-{algorithm}-{rule}`.
    pub fn run_name(&self) -> String {
        format!(
            "{}-seed{}-{}-{}",
            self.name,
            self.seed,
            self.algorithm.as_str(),
            self.rule.as_str()
        )
    }
}

/// What a run keeps in memory besides metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep every agent's LB and AB at every step. Required for auditing and belief CSVs.
    pub record_beliefs: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { record_beliefs: true }
    }
}

/// Everything observed and computed at one time index.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub positions: Vec<GridPos>,
    pub neighbors: Vec<AgentSet>,
    /// Per agent; bad agents keep their initial value. Empty when beliefs are not recorded.
    pub local: Vec<Belief>,
    /// Per agent; for bad agents this is what they broadcast at `t`. Empty when beliefs are not recorded.
    pub actual: Vec<Belief>,
    /// Readings of good agents at `t`, ascending by observer; empty at `t = 0`.
    pub observations: Vec<ObservationVector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub rule: FusionRule,
    pub sigma: f64,
    pub f: usize,
    pub horizon: usize,
    pub tau: f64,
    /// First `t` at which every good agent's AB on the true hypothesis is at least `tau`.
    pub convergence_time: Option<usize>,
    /// Case-one executions with time index `≤ t`, for every `t`.
    pub case_one_cumulative: Vec<usize>,
    pub mean_good_actual_true: Vec<f64>,
    pub mean_good_local_true: Vec<f64>,
    pub min_good_actual_true: Vec<f64>,
    pub final_local: Vec<Belief>,
    pub final_actual: Vec<Belief>,
}

impl RunMetrics {
    pub fn case_one_total(&self) -> usize {
        self.case_one_cumulative.last().copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationTrace {
    pub scenario: ScenarioSpec,
    pub steps: Vec<StepRecord>,
    pub events: Vec<CaseOneEvent>,
    pub metrics: RunMetrics,
}

impl SimulationTrace {
    pub fn beliefs_recorded(&self) -> bool {
        self.steps.first().is_some_and(|s| !s.actual.is_empty())
    }
}

/// Precomputed, step-invariant context for one run.
struct World<'a> {
    spec: &'a ScenarioSpec,
    sources: SourceSetIndex,
    sensors: Vec<SensorModel>,
    comm: Vec<RangeSpec>,
    m: usize,
}

impl<'a> World<'a> {
    fn new(spec: &'a ScenarioSpec) -> Result<Self> {
        Ok(World {
            spec,
            sources: compute_source_sets(spec)?,
            sensors: (0..spec.n_agents()).map(|i| spec.sensor_model(i)).collect::<Result<_>>()?,
            comm: spec.comm_ranges(),
            m: spec.hypotheses.count(),
        })
    }

    fn neighbors(&self, positions: &[GridPos]) -> Result<Vec<AgentSet>> {
        (0..positions.len()).map(|i| neighbors_at(i, positions, &self.comm)).collect()
    }

    fn broadcasts(&self, t: usize, states: &[Option<AgentState>]) -> Result<Vec<Belief>> {
        self.spec
            .agents
            .iter()
            .zip(states)
            .map(|(a, s)| match (s, &a.adversary) {
                (Some(s), _) => Ok(s.actual.clone()),
                (None, Some(policy)) => adversarial_broadcast(policy, a.id, t, self.m, self.spec.seed),
                (None, None) => Err(Error::Contract(format!("bad agent {} has no policy", a.id))),
            })
            .collect()
    }

    fn observe(&self, t: usize, i: AgentId, positions: &[GridPos]) -> Result<ObservationVector> {
        let readings = (0..positions.len())
            .filter(|&j| j != i)
            .map(|j| {
                let mut rng = StreamKey {
                    seed: self.spec.seed,
                    domain: Domain::Observation,
                    step: t,
                    a: i,
                    b: j,
                }
                .rng();
                sample_reading(j, positions[i], positions[j], &self.sensors[i], &mut rng)
            })
            .collect();
        ObservationVector::new(i, positions.len(), readings)
    }
}

pub fn run(spec: &ScenarioSpec) -> Result<SimulationTrace> {
    run_with(spec, &RunOptions::default())
}

/// Simulate `spec.horizon` steps. Refuses scenarios with validator errors.
pub fn run_with(spec: &ScenarioSpec, options: &RunOptions) -> Result<SimulationTrace> {
    let findings = validate(spec);
    if let Some(err) = findings.iter().find(|f| f.severity == Severity::Error) {
        return Err(Error::Refused(err.to_string()));
    }
    let world = World::new(spec)?;
    let n = spec.n_agents();

    let mut states: Vec<Option<AgentState>> = spec
        .agents
        .iter()
        .map(|a| {
            (a.identity == Identity::Good)
                .then(|| AgentState::new(a.id, n, a.initial_local.clone(), a.initial_actual.clone()))
                .transpose()
        })
        .collect::<Result<_>>()?;

    let mut metrics = RunMetrics {
        scenario: spec.name.clone(),
        seed: spec.seed,
        algorithm: spec.algorithm,
        rule: spec.rule,
        sigma: spec.sigma,
        f: spec.f,
        horizon: spec.horizon,
        tau: spec.tau,
        convergence_time: None,
        case_one_cumulative: Vec::with_capacity(spec.horizon + 1),
        mean_good_actual_true: Vec::with_capacity(spec.horizon + 1),
        mean_good_local_true: Vec::with_capacity(spec.horizon + 1),
        min_good_actual_true: Vec::with_capacity(spec.horizon + 1),
        final_local: Vec::new(),
        final_actual: Vec::new(),
    };
    let mut events = Vec::new();
    let mut steps = Vec::with_capacity(spec.horizon + 1);

    let positions = spec.positions_at(0);
    let mut shared = world.broadcasts(0, &states)?;
    check_invariants(0, spec, &states)?;
    record_metrics(&mut metrics, 0, spec, &states, 0);
    steps.push(StepRecord {
        t: 0,
        neighbors: world.neighbors(&positions)?,
        positions,
        local: snapshot_local(spec, &states, options),
        actual: if options.record_beliefs { shared.clone() } else { Vec::new() },
        observations: Vec::new(),
    });

    for t in 0..spec.horizon {
        let next = t + 1;
        let positions = spec.positions_at(next);
        let neighbors = world.neighbors(&positions)?;
        let targets = spec.target_positions(next);
        let ctx = StepContext {
            time: t,
            f: spec.f,
            rule: spec.rule,
            sources: &world.sources,
        };

        let updates: Vec<Option<(AgentState, Vec<CaseOneEvent>, ObservationVector)>> = states
            .par_iter()
            .map(|state| {
                let Some(state) = state else { return Ok(None) };
                let i = state.id;
                let obs = world.observe(next, i, &positions)?;
                let lik = likelihood_vector(&obs, &spec.hypotheses, positions[i], &targets, &world.sensors[i])?;
                let view = SharedView {
                    neighbors: neighbors[i],
                    beliefs: &shared,
                };
                let out = belief::step(spec.algorithm, state, &view, &lik, &ctx).map_err(|e| match e {
                    Error::ZeroMass | Error::ZeroEvidence => Error::Invariant {
                        step: next,
                        detail: format!("agent {i}: {e}"),
                    },
                    other => other,
                })?;
                Ok(Some((out.state, out.events, obs)))
            })
            .collect::<Result<_>>()?;

        let mut observations = Vec::new();
        let mut step_events = 0;
        for (slot, update) in states.iter_mut().zip(updates) {
            if let Some((state, ev, obs)) = update {
                *slot = Some(state);
                step_events += ev.len();
                events.extend(ev);
                observations.push(obs);
            }
        }
        check_invariants(next, spec, &states)?;
        shared = world.broadcasts(next, &states)?;
        record_metrics(&mut metrics, next, spec, &states, step_events);
        steps.push(StepRecord {
            t: next,
            positions,
            neighbors,
            local: snapshot_local(spec, &states, options),
            actual: if options.record_beliefs { shared.clone() } else { Vec::new() },
            observations,
        });
    }

    metrics.final_local = spec
        .agents
        .iter()
        .zip(&states)
        .map(|(a, s)| s.as_ref().map_or_else(|| a.initial_local.clone(), |s| s.local.clone()))
        .collect();
    metrics.final_actual = shared;
    Ok(SimulationTrace {
        scenario: spec.clone(),
        steps,
        events,
        metrics,
    })
}

fn snapshot_local(spec: &ScenarioSpec, states: &[Option<AgentState>], options: &RunOptions) -> Vec<Belief> {
    if !options.record_beliefs {
        return Vec::new();
    }
    spec.agents
        .iter()
        .zip(states)
        .map(|(a, s)| s.as_ref().map_or_else(|| a.initial_local.clone(), |s| s.local.clone()))
        .collect()
}

fn record_metrics(metrics: &mut RunMetrics, t: usize, spec: &ScenarioSpec, states: &[Option<AgentState>], new_events: usize) {
    let theta = spec.true_hypothesis;
    let good: Vec<&AgentState> = states.iter().flatten().collect();
    let count = good.len().max(1) as f64;
    let actual: Vec<f64> = good.iter().map(|s| s.actual.get(theta)).collect();
    metrics.mean_good_actual_true.push(actual.iter().sum::<f64>() / count);
    metrics
        .mean_good_local_true
        .push(good.iter().map(|s| s.local.get(theta)).sum::<f64>() / count);
    let min = actual.iter().copied().fold(f64::INFINITY, f64::min);
    metrics.min_good_actual_true.push(if good.is_empty() { 0.0 } else { min });
    let prev = metrics.case_one_cumulative.last().copied().unwrap_or(0);
    metrics.case_one_cumulative.push(prev + new_events);
    if metrics.convergence_time.is_none() && !good.is_empty() && min >= spec.tau {
        metrics.convergence_time = Some(t);
    }
}

/// Normalization and strict positivity of every good agent's AB on the true hypothesis.
fn check_invariants(t: usize, spec: &ScenarioSpec, states: &[Option<AgentState>]) -> Result<()> {
    for s in states.iter().flatten() {
        for (kind, b) in [("local", &s.local), ("actual", &s.actual)] {
            let sum: f64 = b.as_slice().iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE || b.as_slice().iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Invariant {
                    step: t,
                    detail: format!("agent {} {kind} belief is not normalized (sum {sum})", s.id),
                });
            }
        }
        if !(s.actual.get(spec.true_hypothesis) > 0.0) {
            return Err(Error::Invariant {
                step: t,
                detail: format!("agent {} actual belief on the true hypothesis reached 0", s.id),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::HypothesisSet;

    /// Agent 0 watches agent 1, which is bad and never within communication range.
    pub(crate) fn two_agent_spec(horizon: usize, seed: u64) -> ScenarioSpec {
        let hyps = HypothesisSet::identities(
            2,
            vec![
                IdentityLabel::from_bits(&[1, 1]).unwrap(),
                IdentityLabel::from_bits(&[1, 0]).unwrap(),
            ],
        )
        .unwrap();
        let prior = Belief::uniform(2);
        ScenarioSpec {
            name: "pair".into(),
            grid: Grid::new(6, 6).unwrap(),
            motion: MotionGraph::EightConnected,
            agents: vec![
                AgentSpec {
                    id: 0,
                    path: StatePath::stationary(0, GridPos::new(1, 1)),
                    comm: RangeSpec::new(3),
                    sensing: RangeSpec::new(3),
                    identity: Identity::Good,
                    adversary: None,
                    initial_local: prior.clone(),
                    initial_actual: prior.clone(),
                },
                AgentSpec {
                    id: 1,
                    path: StatePath::new(1, vec![GridPos::new(3, 3)], vec![GridPos::new(2, 3)]).unwrap(),
                    comm: RangeSpec::new(0),
                    sensing: RangeSpec::new(3),
                    identity: Identity::Bad,
                    adversary: Some(AdversaryPolicy::RandomBelief),
                    initial_local: prior.clone(),
                    initial_actual: prior,
                },
            ],
            hypotheses: hyps,
            true_hypothesis: 1,
            sigma: 0.5,
            f: 0,
            algorithm: Algorithm::Sdht,
            rule: FusionRule::Min,
            horizon,
            seed,
            tau: DEFAULT_TAU,
        }
    }

    #[test]
    fn horizon_zero_keeps_initial_beliefs() {
        let spec = two_agent_spec(0, 3);
        let trace = run(&spec).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].local[0], Belief::uniform(2));
        assert_eq!(trace.steps[0].actual[0], Belief::uniform(2));
        assert!(trace.events.is_empty());
        assert_eq!(trace.metrics.case_one_cumulative, vec![0]);
    }

    #[test]
    fn lone_observer_learns_the_other_identity() {
        let spec = two_agent_spec(50, 1);
        let trace = run(&spec).unwrap();
        assert_eq!(trace.steps.len(), 51);
        let last = &trace.steps[50];
        assert!(last.local[0].get(1) >= 0.99);
        assert!(last.actual[0].get(1) >= 0.99);
        assert!(trace.metrics.convergence_time.is_some());
        for s in &trace.steps {
            assert!(!s.neighbors[0].contains(1));
        }
    }

    #[test]
    fn deterministic_and_algorithm_paired() {
        let spec = two_agent_spec(20, 9);
        assert_eq!(run(&spec).unwrap(), run(&spec).unwrap());
        let mut other = spec.clone();
        other.algorithm = Algorithm::Adht;
        let a = run(&spec).unwrap();
        let b = run(&other).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.observations, y.observations);
            assert_eq!(x.positions, y.positions);
        }
    }

    #[test]
    fn refuses_invalid_scenario() {
        let mut spec = two_agent_spec(5, 0);
        spec.agents[0].initial_local = Belief::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(run(&spec), Err(Error::Refused(_))));
    }

    #[test]
    fn unrecorded_run_has_same_metrics() {
        let spec = two_agent_spec(30, 4);
        let full = run(&spec).unwrap();
        let lean = run_with(&spec, &RunOptions { record_beliefs: false }).unwrap();
        assert_eq!(full.metrics, lean.metrics);
        assert!(!lean.beliefs_recorded());
    }
}
