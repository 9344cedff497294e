//! Offline replay of a recorded trace.
//!
//! Every good agent's LB and AB at every step are recomputed from the trace's
//! own inputs (previous beliefs, neighbor sets, readings and the scenario) with
//! a deliberately plain implementation: explicit loops over hypothesis pairs,
//! maps for the asynchronous accumulator, and sorting instead of set algebra.
//! Recomputed values must match the recorded ones within one ulp and the
//! recomputed case-one branches must match the recorded events.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::SimulationTrace;
use crate::adversary::adversarial_broadcast;
use crate::belief::{Algorithm, FusionRule};
use crate::error::{Error, Result};
use crate::grid::{neighbors_at, Identity};
use crate::hypothesis::{compute_source_sets, AgentId, AgentSet, HypIdx, SourceSetIndex};
use crate::observation::joint_likelihood;

/// Pairwise checks are exact but quadratic in |Θ|; above this size the
/// equivalent per-hypothesis constraint family is used instead.
const PAIRWISE_LIMIT: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditMismatch {
    pub t: usize,
    pub agent: AgentId,
    pub what: String,
    pub hypothesis: Option<HypIdx>,
    pub recorded: f64,
    pub recomputed: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub updates_checked: usize,
    pub values_checked: usize,
    pub events_checked: usize,
    pub max_ulps: u64,
    pub mismatches: Vec<AuditMismatch>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Distance in units in the last place between two finite doubles.
pub fn ulp_distance(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

fn holds_for_all_rivals(sources: &SourceSetIndex, theta: HypIdx, set: AgentSet, k: usize) -> bool {
    let m = sources.hypothesis_count();
    if m <= PAIRWISE_LIMIT {
        (0..m)
            .filter(|&other| other != theta)
            .all(|other| sources.sources(theta, other).intersection(set).len() >= k)
    } else {
        sources.constraints(theta).iter().all(|c| c.intersection(set).len() >= k)
    }
}

fn fused_value(
    rule: FusionRule,
    sources: &SourceSetIndex,
    theta: HypIdx,
    pool: &BTreeMap<AgentId, f64>,
    own: f64,
    f: usize,
) -> Option<f64> {
    let mut asc: Vec<(f64, AgentId)> = pool.iter().map(|(&j, &v)| (v, j)).collect();
    asc.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    match rule {
        FusionRule::Min => asc.get(f).map(|&(v, _)| v.min(own)),
        FusionRule::Avg => {
            let low: BTreeSet<AgentId> = asc.iter().take(f).map(|&(_, j)| j).collect();
            let mut desc: Vec<(f64, AgentId)> = asc.into_iter().filter(|(_, j)| !low.contains(j)).collect();
            desc.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut high = AgentSet::empty();
            let mut taken = 0;
            while !holds_for_all_rivals(sources, theta, high, f + 1) {
                high.insert(desc.get(taken)?.1);
                taken += 1;
            }
            let mid: Vec<f64> = pool
                .iter()
                .filter(|(j, _)| !low.contains(j) && !high.contains(**j))
                .map(|(_, &v)| v)
                .collect();
            if mid.is_empty() {
                return None;
            }
            Some((mid.iter().sum::<f64>() / mid.len() as f64).min(own))
        }
    }
}

struct Accumulator {
    pool: BTreeMap<AgentId, f64>,
    fired: bool,
}

/// Replay `trace` and report every disagreement.
pub fn audit(trace: &SimulationTrace) -> Result<AuditReport> {
    if !trace.beliefs_recorded() {
        return Err(Error::Contract("trace has no recorded beliefs to audit".into()));
    }
    let spec = &trace.scenario;
    let sources = compute_source_sets(spec)?;
    let m = spec.hypotheses.count();
    let n = spec.n_agents();
    let labels = spec
        .hypotheses
        .labels()
        .ok_or_else(|| Error::InvalidHypotheses("audit needs identity labels".into()))?;
    let comm = spec.comm_ranges();
    let k = spec.rule.case_threshold(spec.f);

    let mut recorded_events: BTreeMap<(usize, AgentId), BTreeSet<HypIdx>> = BTreeMap::new();
    for e in &trace.events {
        recorded_events.entry((e.time, e.agent)).or_default().insert(e.hypothesis);
    }
    let mut accumulators: BTreeMap<(AgentId, HypIdx), Accumulator> = BTreeMap::new();
    let mut report = AuditReport::default();
    let mismatch = |report: &mut AuditReport, t, agent, what: &str, hypothesis, recorded: f64, recomputed: f64| {
        let d = ulp_distance(recorded, recomputed);
        report.values_checked += 1;
        report.max_ulps = report.max_ulps.max(d);
        if d > 1 {
            report.mismatches.push(AuditMismatch {
                t,
                agent,
                what: what.to_string(),
                hypothesis,
                recorded,
                recomputed,
            });
        }
    };
    let structural = |report: &mut AuditReport, t, agent, what: String| {
        report.mismatches.push(AuditMismatch {
            t,
            agent,
            what,
            hypothesis: None,
            recorded: f64::NAN,
            recomputed: f64::NAN,
        });
    };

    if trace.steps.len() != spec.horizon + 1 {
        structural(&mut report, 0, 0, format!("trace has {} steps, expected {}", trace.steps.len(), spec.horizon + 1));
    }
    for (t, step) in trace.steps.iter().enumerate() {
        if step.t != t {
            structural(&mut report, t, 0, format!("step index {} out of order", step.t));
        }
        let positions = spec.positions_at(t);
        if step.positions != positions {
            structural(&mut report, t, 0, "positions differ from the declared paths".into());
        }
        for i in 0..n {
            if neighbors_at(i, &positions, &comm)? != step.neighbors[i] {
                structural(&mut report, t, i, "neighbor set differs from recomputation".into());
            }
        }
        // Bad agents' broadcasts follow their policy.
        for a in spec.agents.iter().filter(|a| a.identity == Identity::Bad) {
            let policy = a.adversary.as_ref().ok_or_else(|| Error::Contract(format!("bad agent {} has no policy", a.id)))?;
            let expected = adversarial_broadcast(policy, a.id, t, m, spec.seed)?;
            for theta in 0..m {
                mismatch(&mut report, t, a.id, "broadcast", Some(theta), step.actual[a.id].get(theta), expected.get(theta));
            }
        }
    }

    for t in 1..trace.steps.len() {
        let prev = &trace.steps[t - 1];
        let step = &trace.steps[t];
        let targets = spec.target_positions(t);
        for a in spec.agents.iter().filter(|a| a.identity == Identity::Good) {
            let i = a.id;
            report.updates_checked += 1;
            let Some(obs) = step.observations.iter().find(|o| o.observer == i) else {
                structural(&mut report, t, i, "missing readings".into());
                continue;
            };
            let sensor = spec.sensor_model(i)?;
            let q_i = step.positions[i];

            // Bayes on the local belief.
            let mut numer = Vec::with_capacity(m);
            for (theta, label) in labels.iter().enumerate() {
                let l = joint_likelihood(obs, *label, q_i, &targets, &sensor)?;
                numer.push(l * prev.local[i].get(theta));
            }
            let mut denom = 0.0;
            for x in &numer {
                denom += x;
            }
            let local: Vec<f64> = numer.iter().map(|x| x / denom).collect();
            for theta in 0..m {
                mismatch(&mut report, t, i, "local", Some(theta), step.local[i].get(theta), local[theta]);
            }

            // Actual belief from the previous snapshot.
            let nbrs = step.neighbors[i];
            let mut raw = Vec::with_capacity(m);
            let mut fired = BTreeSet::new();
            for theta in 0..m {
                let own = local[theta];
                let pool: Option<BTreeMap<AgentId, f64>> = match spec.algorithm {
                    Algorithm::Sdht => holds_for_all_rivals(&sources, theta, nbrs, k)
                        .then(|| nbrs.iter().map(|j| (j, prev.actual[j].get(theta))).collect()),
                    Algorithm::Adht => {
                        let acc = accumulators.entry((i, theta)).or_insert(Accumulator {
                            pool: BTreeMap::new(),
                            fired: false,
                        });
                        if t == 1 || acc.fired {
                            acc.pool.clear();
                            acc.fired = false;
                        }
                        for j in nbrs.iter() {
                            acc.pool.insert(j, prev.actual[j].get(theta));
                        }
                        let members: AgentSet = acc.pool.keys().copied().collect();
                        acc.fired = holds_for_all_rivals(&sources, theta, members, k);
                        acc.fired.then(|| acc.pool.clone())
                    }
                };
                match pool {
                    Some(pool) => {
                        fired.insert(theta);
                        match fused_value(spec.rule, &sources, theta, &pool, own, spec.f) {
                            Some(v) => raw.push(v),
                            None => {
                                structural(&mut report, t, i, format!("no valid fusion for hypothesis {theta}"));
                                raw.push(own);
                            }
                        }
                    }
                    None => raw.push(prev.actual[i].get(theta).min(own)),
                }
            }
            let mut total = 0.0;
            for x in &raw {
                total += x;
            }
            for theta in 0..m {
                mismatch(&mut report, t, i, "actual", Some(theta), step.actual[i].get(theta), raw[theta] / total);
            }

            report.events_checked += fired.len();
            let recorded = recorded_events.remove(&(t, i)).unwrap_or_default();
            if recorded != fired {
                structural(
                    &mut report,
                    t,
                    i,
                    format!("case-one hypotheses differ: recorded {recorded:?}, recomputed {fired:?}"),
                );
            }
        }
    }
    for ((t, i), hyps) in recorded_events {
        structural(&mut report, t, i, format!("unexpected recorded events {hyps:?}"));
    }
    if let Some(e) = trace.events.iter().find(|e| e.algorithm != spec.algorithm) {
        structural(&mut report, e.time, e.agent, "event tagged with the wrong algorithm".into());
    }
    Ok(report)
}
