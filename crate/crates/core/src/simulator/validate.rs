//! Static scenario checks run before any simulation.

use std::fmt;

use serde::Serialize;

use super::ScenarioSpec;
use crate::adversary::AdversaryPolicy;
use crate::grid::{neighbors_at, Identity, MotionGraph};
use crate::hypothesis::{compute_source_sets, AgentSet, Belief};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        };
        write!(f, "{sev} [{}] {}", self.code, self.message)
    }
}

#[derive(Default)]
struct Findings(Vec<Finding>);

impl Findings {
    fn error(&mut self, code: &'static str, message: String) {
        self.0.push(Finding {
            severity: Severity::Error,
            code,
            message,
        });
    }

    fn warning(&mut self, code: &'static str, message: String) {
        self.0.push(Finding {
            severity: Severity::Warning,
            code,
            message,
        });
    }

    fn has_errors(&self) -> bool {
        self.0.iter().any(|f| f.severity == Severity::Error)
    }
}

/// All problems found in `spec`. Errors make [`super::run`] refuse the scenario;
/// warnings flag conditions the checks cannot establish.
pub fn validate(spec: &ScenarioSpec) -> Vec<Finding> {
    let mut out = Findings::default();
    check_parameters(spec, &mut out);
    check_hypotheses(spec, &mut out);
    check_agents(spec, &mut out);
    check_paths(spec, &mut out);
    // The remaining checks simulate paths and need a structurally sound scenario.
    if !out.has_errors() {
        check_topology(spec, &mut out);
    }
    out.0
}

fn check_parameters(spec: &ScenarioSpec, out: &mut Findings) {
    if !(spec.sigma > 0.0 && spec.sigma.is_finite()) {
        out.error("sigma", format!("sensor noise sigma must be positive and finite, got {}", spec.sigma));
    }
    if !(spec.tau > 0.0 && spec.tau <= 1.0) {
        out.error("tau", format!("convergence threshold must lie in (0, 1], got {}", spec.tau));
    }
    if spec.agents.is_empty() {
        out.error("agents", "scenario has no agents".into());
    }
}

fn check_hypotheses(spec: &ScenarioSpec, out: &mut Findings) {
    let n = spec.n_agents();
    match spec.hypotheses.n_agents() {
        None => out.error("hypotheses", "hypotheses must carry per-agent identity labels".into()),
        Some(k) if k != n => out.error(
            "hypotheses",
            format!("hypothesis labels cover {k} agents but the scenario has {n}"),
        ),
        _ => {}
    }
    let Some(label) = spec.true_label() else {
        out.error(
            "true-hypothesis",
            format!("true hypothesis index {} is out of range", spec.true_hypothesis),
        );
        return;
    };
    for a in &spec.agents {
        if label.identity(a.id) != a.identity {
            out.error(
                "true-hypothesis",
                format!(
                    "true hypothesis {} disagrees with agent {} being {:?}",
                    label.display(n),
                    a.id,
                    a.identity
                ),
            );
        }
    }
}

fn check_prior(out: &mut Findings, agent: usize, kind: &str, b: &Belief, m: usize) {
    if b.len() != m {
        out.error(
            "prior",
            format!("agent {agent} initial {kind} belief has {} entries, expected {m}", b.len()),
        );
    } else if let Some(k) = b.as_slice().iter().position(|&x| !(x > 0.0)) {
        out.error(
            "prior",
            format!("agent {agent} initial {kind} belief is zero on hypothesis {k}; every initial belief must be strictly positive"),
        );
    }
}

fn check_agents(spec: &ScenarioSpec, out: &mut Findings) {
    let m = spec.hypotheses.count();
    let bad: AgentSet = spec
        .agents
        .iter()
        .filter(|a| a.identity == Identity::Bad)
        .map(|a| a.id)
        .collect();
    for (k, a) in spec.agents.iter().enumerate() {
        if a.id != k {
            out.error("agents", format!("agent at position {k} has id {}; ids must be 0..N in order", a.id));
            continue;
        }
        match (a.identity, &a.adversary) {
            (Identity::Good, None) => {
                check_prior(out, a.id, "local", &a.initial_local, m);
                check_prior(out, a.id, "actual", &a.initial_actual, m);
            }
            (Identity::Good, Some(_)) => {
                out.error("adversary", format!("good agent {} has an adversary policy", a.id))
            }
            (Identity::Bad, None) => out.error("adversary", format!("bad agent {} has no adversary policy", a.id)),
            (Identity::Bad, Some(policy)) => check_policy(spec, a.id, policy, bad, out),
        }
    }
}

fn check_policy(spec: &ScenarioSpec, agent: usize, policy: &AdversaryPolicy, bad: AgentSet, out: &mut Findings) {
    let m = spec.hypotheses.count();
    match policy {
        AdversaryPolicy::RandomBelief => {}
        AdversaryPolicy::FixedFalse { hypothesis } if *hypothesis >= m => {
            out.error("adversary", format!("agent {agent} targets unknown hypothesis {hypothesis}"))
        }
        AdversaryPolicy::FixedFalse { .. } => {}
        AdversaryPolicy::Coordinated { group, hypothesis } => {
            if *hypothesis >= m {
                out.error("adversary", format!("agent {agent} targets unknown hypothesis {hypothesis}"));
            }
            if !group.contains(agent) || group.difference(bad).len() > 0 {
                out.error(
                    "adversary",
                    format!("coordination group {group} of agent {agent} must contain it and only bad agents"),
                );
            }
            for other in group.iter().filter(|&j| j != agent) {
                match spec.agents.get(other).and_then(|a| a.adversary.as_ref()) {
                    Some(AdversaryPolicy::Coordinated { group: g, hypothesis: h }) if g == group && h == hypothesis => {}
                    _ => out.error(
                        "adversary",
                        format!("agents {agent} and {other} disagree on their coordinated policy"),
                    ),
                }
            }
        }
        AdversaryPolicy::Custom { script } => {
            if script.is_empty() {
                out.error("adversary", format!("agent {agent} has an empty script"));
            }
            if let Some(b) = script.iter().find(|b| b.len() != m) {
                out.error(
                    "adversary",
                    format!("agent {agent} script entry has {} entries, expected {m}", b.len()),
                );
            }
        }
    }
}

fn check_paths(spec: &ScenarioSpec, out: &mut Findings) {
    for a in &spec.agents {
        for identity in [Identity::Good, Identity::Bad] {
            let cycle = a.path.cycle(identity);
            if cycle.is_empty() {
                out.error("path", format!("agent {} has an empty {identity:?} cycle", a.id));
                continue;
            }
            if let Some(cell) = cycle.iter().find(|c| !spec.grid.contains(**c)) {
                out.error("path", format!("agent {} {identity:?} cycle leaves the grid at {cell}", a.id));
            }
            if let Some((k, from, to)) = a.path.invalid_move(identity, &spec.motion) {
                let how = match spec.motion {
                    MotionGraph::EightConnected => "more than one cell",
                    MotionGraph::Explicit(_) => "along an undeclared edge",
                };
                out.error(
                    "path",
                    format!("agent {} {identity:?} cycle moves {how} from {from} to {to} at index {k}", a.id),
                );
            }
        }
    }
    if let Err(e) = spec.joint_period() {
        out.error("path", e.to_string());
    }
}

/// f-bound on bad neighbors and the source-coverage heuristic, over one joint period.
fn check_topology(spec: &ScenarioSpec, out: &mut Findings) {
    let Ok(period) = spec.joint_period() else { return };
    let n = spec.n_agents();
    let comm = spec.comm_ranges();
    let bad: AgentSet = spec
        .agents
        .iter()
        .filter(|a| a.identity == Identity::Bad)
        .map(|a| a.id)
        .collect();
    let good: Vec<usize> = spec.good_agents().collect();
    let mut reach = vec![AgentSet::empty(); n];
    let mut reported = AgentSet::empty();
    for t in 0..period {
        let positions = spec.positions_at(t);
        for &i in &good {
            let Ok(nb) = neighbors_at(i, &positions, &comm) else { return };
            reach[i] = reach[i].union(nb);
            let count = nb.intersection(bad).len();
            if count > spec.f && !reported.contains(i) {
                reported.insert(i);
                out.error(
                    "f-bound",
                    format!(
                        "good agent {i} has {count} bad neighbors {} at step {t}, more than f = {}",
                        nb.intersection(bad),
                        spec.f
                    ),
                );
            }
        }
    }

    let sources = match compute_source_sets(spec) {
        Ok(s) => s,
        Err(e) => {
            out.error("source-sets", e.to_string());
            return;
        }
    };
    if let Some(dist) = sources.distinguishers() {
        for (j, c) in dist.iter().enumerate() {
            if c.is_empty() {
                out.warning(
                    "observability",
                    format!("no agent's path ever separates agent {j}'s good and bad paths"),
                );
            }
        }
    }
    let threshold = spec.rule.case_threshold(spec.f);
    let m = spec.hypotheses.count();
    for &i in &good {
        // Alone, agent i learns θ* only if it separates θ* from every rival itself.
        let alone = (0..m)
            .filter(|&k| k != spec.true_hypothesis)
            .all(|k| sources.sources(spec.true_hypothesis, k).contains(i));
        if alone {
            continue;
        }
        let uncovered = (0..m).find(|&theta| !sources.meets(theta, reach[i], threshold));
        if let Some(theta) = uncovered {
            out.warning(
                "source-coverage",
                format!(
                    "agent {i} cannot reach {threshold} source agents for hypothesis {theta} within one period (neighbors seen: {})",
                    reach[i]
                ),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::two_agent_spec;
    use super::*;
    use crate::grid::GridPos;
    use crate::grid::StatePath;

    fn errors(spec: &ScenarioSpec) -> Vec<Finding> {
        validate(spec).into_iter().filter(|f| f.severity == Severity::Error).collect()
    }

    #[test]
    fn clean_scenario_has_no_errors() {
        assert!(errors(&two_agent_spec(10, 0)).is_empty());
    }

    #[test]
    fn zero_prior_is_an_error() {
        let mut spec = two_agent_spec(10, 0);
        spec.agents[0].initial_actual = Belief::new(vec![0.0, 1.0]).unwrap();
        let e = errors(&spec);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].code, "prior");
        assert!(e[0].message.contains("strictly positive"));
    }

    #[test]
    fn too_many_bad_neighbors_is_an_error() {
        let mut spec = two_agent_spec(10, 0);
        spec.agents[1].comm = crate::grid::RangeSpec::new(3);
        let e = errors(&spec);
        assert!(e.iter().any(|f| f.code == "f-bound"), "{e:?}");
    }

    #[test]
    fn inconsistent_truth_and_bad_paths() {
        let mut spec = two_agent_spec(10, 0);
        spec.true_hypothesis = 0;
        assert!(errors(&spec).iter().any(|f| f.code == "true-hypothesis"));
        let mut spec = two_agent_spec(10, 0);
        spec.agents[0].path = StatePath::new(0, vec![GridPos::new(0, 0), GridPos::new(3, 0)], vec![GridPos::new(0, 0)]).unwrap();
        assert!(errors(&spec).iter().any(|f| f.code == "path"));
        let mut spec = two_agent_spec(10, 0);
        spec.agents[1].adversary = None;
        assert!(errors(&spec).iter().any(|f| f.code == "adversary"));
        let mut spec = two_agent_spec(10, 0);
        spec.sigma = -1.0;
        assert!(errors(&spec).iter().any(|f| f.code == "sigma"));
    }

    #[test]
    fn unobservable_agent_warns() {
        let mut spec = two_agent_spec(10, 0);
        spec.agents[1].path = StatePath::stationary(1, GridPos::new(5, 5));
        let all = validate(&spec);
        assert!(all.iter().any(|f| f.code == "observability" && f.severity == Severity::Warning));
    }
}
