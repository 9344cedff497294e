//! TOML scenario files.
//!
//! ```toml
//! schema_version = 1
//! name = "example"
//! sigma = 0.5
//! f = 1
//! algorithm = "adht"         # sdht | adht
//! rule = "min"               # min | avg
//! horizon = 50               # default 50
//! seed = 0                   # default 0
//! tau = 0.99                 # default 0.99
//! true_hypothesis = [1, 1, 0]
//!
//! [grid]
//! width = 10
//! height = 10
//!
//! [motion]                   # optional, default eight-connected
//! kind = "eight-connected"   # or "explicit" with edges = [[[x, y], [x, y]], ...]
//!
//! [hypotheses]
//! kind = "identity-product"  # or "explicit" with labels = [[1, 1, 0], ...]
//!
//! [[agents]]
//! id = 0
//! identity = "good"
//! comm_radius = 3
//! sensing_radius = 3
//! good_cycle = [[1, 1], [1, 2]]
//! bad_cycle = [[1, 1]]
//! prior_local = "uniform"    # default; or an explicit probability vector
//! prior_actual = "uniform"
//! adversary = { kind = "random-belief" }   # bad agents only
//! ```
//!
//! Adversary kinds: `random-belief`, `fixed-false` (`hypothesis = [bits]`),
//! `coordinated` (`group = [ids]`, `hypothesis = [bits]`) and `custom`
//! (`script = [[probabilities], ...]`).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryPolicy;
use crate::belief::{Algorithm, FusionRule};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridPos, Identity, MotionGraph, RangeSpec, StatePath};
use crate::hypothesis::{AgentSet, Belief, HypIdx, HypothesisSet, IdentityLabel};
use crate::simulator::{AgentSpec, ScenarioSpec, DEFAULT_TAU};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_HORIZON: usize = 50;

type Cell = [i32; 2];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    name: String,
    sigma: f64,
    f: usize,
    algorithm: Algorithm,
    rule: FusionRule,
    #[serde(default)]
    horizon: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    tau: Option<f64>,
    true_hypothesis: Vec<u8>,
    grid: GridFile,
    #[serde(default)]
    motion: MotionFile,
    hypotheses: HypothesesFile,
    agents: Vec<AgentFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    width: u32,
    height: u32,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum MotionFile {
    #[default]
    EightConnected,
    Explicit { edges: Vec<[Cell; 2]> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum HypothesesFile {
    IdentityProduct,
    Explicit { labels: Vec<Vec<u8>> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentFile {
    id: usize,
    identity: Identity,
    comm_radius: u32,
    sensing_radius: u32,
    good_cycle: Vec<Cell>,
    bad_cycle: Vec<Cell>,
    #[serde(default)]
    prior_local: PriorFile,
    #[serde(default)]
    prior_actual: PriorFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adversary: Option<AdversaryFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PriorFile {
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for PriorFile {
    fn default() -> Self {
        PriorFile::Named("uniform".into())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum AdversaryFile {
    RandomBelief,
    FixedFalse { hypothesis: Vec<u8> },
    Coordinated { group: Vec<usize>, hypothesis: Vec<u8> },
    Custom { script: Vec<Vec<f64>> },
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

/// Parse and schema-check scenario text.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    file.into_spec()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text)
}

/// Scenario as TOML; parsing the result gives back an equal spec.
pub fn scenario_to_toml(spec: &ScenarioSpec) -> Result<String> {
    let file = ScenarioFile::from_spec(spec)?;
    toml::to_string(&file).map_err(|e| Error::schema("scenario", e.to_string()))
}

pub fn save_scenario(spec: &ScenarioSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scenario_to_toml(spec)?).map_err(|e| Error::io(path, e))
}

fn cells(field: &str, raw: &[Cell]) -> Result<Vec<GridPos>> {
    if raw.is_empty() {
        return Err(Error::schema(field, "cycle must list at least one cell"));
    }
    Ok(raw.iter().map(|&[x, y]| GridPos::new(x, y)).collect())
}

fn label(field: &str, bits: &[u8], n: usize) -> Result<IdentityLabel> {
    if bits.len() != n {
        return Err(Error::schema(field, format!("label needs {n} entries, got {}", bits.len())));
    }
    IdentityLabel::from_bits(bits).map_err(|e| Error::schema(field, e.to_string()))
}

fn hypothesis_index(field: &str, bits: &[u8], hyps: &HypothesisSet, n: usize) -> Result<HypIdx> {
    let l = label(field, bits, n)?;
    hyps.index_of(l)
        .ok_or_else(|| Error::schema(field, format!("{} is not in the hypothesis set", l.display(n))))
}

fn prior(field: &str, raw: &PriorFile, m: usize) -> Result<Belief> {
    match raw {
        PriorFile::Named(s) if s == "uniform" => Ok(Belief::uniform(m)),
        PriorFile::Named(s) => Err(Error::schema(field, format!("unknown prior `{s}`; use \"uniform\" or a vector"))),
        PriorFile::Explicit(v) => {
            if v.len() != m {
                return Err(Error::schema(field, format!("prior needs {m} entries, got {}", v.len())));
            }
            Belief::new(v.clone()).map_err(|e| Error::schema(field, e.to_string()))
        }
    }
}

fn prior_file(b: &Belief) -> PriorFile {
    if *b == Belief::uniform(b.len()) {
        PriorFile::default()
    } else {
        PriorFile::Explicit(b.as_slice().to_vec())
    }
}

fn bits_of(spec: &ScenarioSpec, h: HypIdx) -> Result<Vec<u8>> {
    let l = spec.hypotheses.label(h).ok_or(Error::UnknownHypothesis(h))?;
    Ok(l.to_bits(spec.n_agents()))
}

impl ScenarioFile {
    fn into_spec(self) -> Result<ScenarioSpec> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::schema("name", "name must be non-empty and contain no path separators"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::schema("sigma", format!("must be positive and finite, got {}", self.sigma)));
        }
        let tau = self.tau.unwrap_or(DEFAULT_TAU);
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::schema("tau", format!("must lie in (0, 1], got {tau}")));
        }
        let grid = Grid::new(self.grid.width, self.grid.height)?;
        let n = self.agents.len();
        if n == 0 {
            return Err(Error::schema("agents", "at least one agent is required"));
        }
        let hypotheses = match &self.hypotheses {
            HypothesesFile::IdentityProduct => {
                HypothesisSet::identity_product(n).map_err(|e| Error::schema("hypotheses", e.to_string()))?
            }
            HypothesesFile::Explicit { labels } => {
                let labels = labels
                    .iter()
                    .enumerate()
                    .map(|(k, bits)| label(&format!("hypotheses.labels[{k}]"), bits, n))
                    .collect::<Result<_>>()?;
                HypothesisSet::identities(n, labels).map_err(|e| Error::schema("hypotheses.labels", e.to_string()))?
            }
        };
        let m = hypotheses.count();
        let true_hypothesis = hypothesis_index("true_hypothesis", &self.true_hypothesis, &hypotheses, n)?;
        let motion = match self.motion {
            MotionFile::EightConnected => MotionGraph::EightConnected,
            MotionFile::Explicit { edges } => MotionGraph::Explicit(
                edges
                    .into_iter()
                    .map(|[[a, b], [c, d]]| (GridPos::new(a, b), GridPos::new(c, d)))
                    .collect(),
            ),
        };

        let mut seen = BTreeSet::new();
        let mut agents = Vec::with_capacity(n);
        for (k, a) in self.agents.iter().enumerate() {
            let at = |field: &str| format!("agents[{k}].{field}");
            if a.id != k || !seen.insert(a.id) {
                return Err(Error::schema(at("id"), format!("expected id {k}, got {}", a.id)));
            }
            let path = StatePath::new(
                a.id,
                cells(&at("good_cycle"), &a.good_cycle)?,
                cells(&at("bad_cycle"), &a.bad_cycle)?,
            )?;
            let adversary = match &a.adversary {
                None => None,
                Some(AdversaryFile::RandomBelief) => Some(AdversaryPolicy::RandomBelief),
                Some(AdversaryFile::FixedFalse { hypothesis }) => Some(AdversaryPolicy::FixedFalse {
                    hypothesis: hypothesis_index(&at("adversary.hypothesis"), hypothesis, &hypotheses, n)?,
                }),
                Some(AdversaryFile::Coordinated { group, hypothesis }) => {
                    if let Some(j) = group.iter().find(|&&j| j >= n) {
                        return Err(Error::schema(at("adversary.group"), format!("unknown agent {j}")));
                    }
                    Some(AdversaryPolicy::Coordinated {
                        group: group.iter().copied().collect::<AgentSet>(),
                        hypothesis: hypothesis_index(&at("adversary.hypothesis"), hypothesis, &hypotheses, n)?,
                    })
                }
                Some(AdversaryFile::Custom { script }) => Some(AdversaryPolicy::Custom {
                    script: script
                        .iter()
                        .enumerate()
                        .map(|(s, v)| prior(&at(&format!("adversary.script[{s}]")), &PriorFile::Explicit(v.clone()), m))
                        .collect::<Result<_>>()?,
                }),
            };
            if adversary.is_some() && a.identity == Identity::Good {
                return Err(Error::schema(at("adversary"), "only bad agents take an adversary policy"));
            }
            agents.push(AgentSpec {
                id: a.id,
                path,
                comm: RangeSpec::new(a.comm_radius),
                sensing: RangeSpec::new(a.sensing_radius),
                identity: a.identity,
                adversary,
                initial_local: prior(&at("prior_local"), &a.prior_local, m)?,
                initial_actual: prior(&at("prior_actual"), &a.prior_actual, m)?,
            });
        }
        Ok(ScenarioSpec {
            name: self.name,
            grid,
            motion,
            agents,
            hypotheses,
            true_hypothesis,
            sigma: self.sigma,
            f: self.f,
            algorithm: self.algorithm,
            rule: self.rule,
            horizon: self.horizon.unwrap_or(DEFAULT_HORIZON),
            seed: self.seed.unwrap_or(0),
            tau,
        })
    }

    fn from_spec(spec: &ScenarioSpec) -> Result<Self> {
        let n = spec.n_agents();
        let hypotheses = if spec.hypotheses.is_full_product() {
            HypothesesFile::IdentityProduct
        } else {
            let labels = spec
                .hypotheses
                .labels()
                .ok_or_else(|| Error::schema("hypotheses", "only identity-labelled hypotheses can be saved"))?;
            HypothesesFile::Explicit {
                labels: labels.iter().map(|l| l.to_bits(n)).collect(),
            }
        };
        let motion = match &spec.motion {
            MotionGraph::EightConnected => MotionFile::EightConnected,
            MotionGraph::Explicit(edges) => MotionFile::Explicit {
                edges: edges.iter().map(|(a, b)| [[a.x, a.y], [b.x, b.y]]).collect(),
            },
        };
        let to_cells = |c: &[GridPos]| c.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>();
        let agents = spec
            .agents
            .iter()
            .map(|a| {
                let adversary = match &a.adversary {
                    None => None,
                    Some(AdversaryPolicy::RandomBelief) => Some(AdversaryFile::RandomBelief),
                    Some(AdversaryPolicy::FixedFalse { hypothesis }) => Some(AdversaryFile::FixedFalse {
                        hypothesis: bits_of(spec, *hypothesis)?,
                    }),
                    Some(AdversaryPolicy::Coordinated { group, hypothesis }) => Some(AdversaryFile::Coordinated {
                        group: group.iter().collect(),
                        hypothesis: bits_of(spec, *hypothesis)?,
                    }),
                    Some(AdversaryPolicy::Custom { script }) => Some(AdversaryFile::Custom {
                        script: script.iter().map(|b| b.as_slice().to_vec()).collect(),
                    }),
                };
                Ok(AgentFile {
                    id: a.id,
                    identity: a.identity,
                    comm_radius: a.comm.radius,
                    sensing_radius: a.sensing.radius,
                    good_cycle: to_cells(&a.path.good_cycle),
                    bad_cycle: to_cells(&a.path.bad_cycle),
                    prior_local: prior_file(&a.initial_local),
                    prior_actual: prior_file(&a.initial_actual),
                    adversary,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ScenarioFile {
            schema_version: SCHEMA_VERSION,
            name: spec.name.clone(),
            sigma: spec.sigma,
            f: spec.f,
            algorithm: spec.algorithm,
            rule: spec.rule,
            horizon: Some(spec.horizon),
            seed: Some(spec.seed),
            tau: Some(spec.tau),
            true_hypothesis: bits_of(spec, spec.true_hypothesis)?,
            grid: GridFile {
                width: spec.grid.width,
                height: spec.grid.height,
            },
            motion,
            hypotheses,
            agents,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
schema_version = 1
name = "small"
sigma = 0.5
f = 0
algorithm = "sdht"
rule = "min"
true_hypothesis = [1, 0]

[grid]
width = 6
height = 6

[hypotheses]
kind = "explicit"
labels = [[1, 1], [1, 0]]

[[agents]]
id = 0
identity = "good"
comm_radius = 3
sensing_radius = 3
good_cycle = [[1, 1]]
bad_cycle = [[1, 1]]

[[agents]]
id = 1
identity = "bad"
comm_radius = 0
sensing_radius = 3
good_cycle = [[3, 3]]
bad_cycle = [[2, 3]]
adversary = { kind = "random-belief" }
"#;

    #[test]
    fn parses_and_materializes_defaults() {
        let spec = parse_scenario(SMALL).unwrap();
        assert_eq!(spec.n_agents(), 2);
        assert_eq!(spec.horizon, DEFAULT_HORIZON);
        assert_eq!(spec.tau, DEFAULT_TAU);
        assert_eq!(spec.seed, 0);
        assert_eq!(spec.true_hypothesis, 1);
        assert_eq!(spec.agents[0].initial_local, Belief::uniform(2));
        assert_eq!(spec.agents[1].adversary, Some(AdversaryPolicy::RandomBelief));
    }

    #[test]
    fn round_trip() {
        let spec = parse_scenario(SMALL).unwrap();
        let text = scenario_to_toml(&spec).unwrap();
        assert_eq!(parse_scenario(&text).unwrap(), spec);
        let mut odd = spec.clone();
        odd.agents[0].initial_local = Belief::new(vec![0.1, 0.9]).unwrap();
        odd.agents[1].adversary = Some(AdversaryPolicy::Custom {
            script: vec![Belief::new(vec![0.3, 0.7]).unwrap()],
        });
        odd.motion = MotionGraph::Explicit([(GridPos::new(1, 1), GridPos::new(1, 1))].into_iter().collect());
        assert_eq!(parse_scenario(&scenario_to_toml(&odd).unwrap()).unwrap(), odd);
    }

    #[test]
    fn negative_sigma_names_the_field() {
        let text = SMALL.replace("sigma = 0.5", "sigma = -1.0");
        match parse_scenario(&text) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "sigma"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_position() {
        let text = SMALL.replace("f = 0", "f = 0\nbogus = 3");
        match parse_scenario(&text) {
            Err(Error::Parse { line, message, .. }) => {
                assert!(line > 0);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_and_reference_errors() {
        let bad_version = SMALL.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(parse_scenario(&bad_version), Err(Error::Schema { field, .. }) if field == "schema_version"));
        let dangling = SMALL.replace("true_hypothesis = [1, 0]", "true_hypothesis = [0, 0]");
        assert!(matches!(parse_scenario(&dangling), Err(Error::Schema { field, .. }) if field == "true_hypothesis"));
        let prior = SMALL.replace("bad_cycle = [[1, 1]]", "bad_cycle = [[1, 1]]\nprior_local = [0.5]");
        assert!(matches!(parse_scenario(&prior), Err(Error::Schema { field, .. }) if field == "agents[0].prior_local"));
        let group = SMALL.replace(
            "{ kind = \"random-belief\" }",
            "{ kind = \"coordinated\", group = [1, 7], hypothesis = [1, 1] }",
        );
        assert!(matches!(parse_scenario(&group), Err(Error::Schema { field, .. }) if field == "agents[1].adversary.group"));
    }

    #[test]
    fn zero_prior_loads_for_the_validator() {
        let text = SMALL.replace("bad_cycle = [[1, 1]]", "bad_cycle = [[1, 1]]\nprior_actual = [1.0, 0.0]");
        let spec = parse_scenario(&text).unwrap();
        assert_eq!(spec.agents[0].initial_actual.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn line_column_counts_from_one() {
        assert_eq!(line_column("ab\ncd", 4), (2, 2));
        assert_eq!(line_column("ab", 0), (1, 1));
    }
}
