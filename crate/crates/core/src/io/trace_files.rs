//! Trace directories: CSV tables, a metrics document and a copy of the scenario.
//!
//! | file               | columns                               |
//! |--------------------|---------------------------------------|
//! | `beliefs.csv`      | `t,agent,kind,hyp,value`              |
//! | `events.csv`       | `t,agent,hyp,algorithm`               |
//! | `observations.csv` | `t,observer,target,x,y` (blank = none) |
//! | `topology.csv`     | `t,agent,x,y,neighbors`               |
//! | `series.csv`       | per-step good-agent averages on θ*    |
//! | `metrics.json`     | run summary                           |
//! | `scenario.toml`    | the scenario that produced the run    |
//!
//! Floats use Rust's shortest round-trip formatting, so reading a trace back
//! reproduces every value exactly and identical traces give identical bytes.
//! `beliefs.csv` is omitted when a run did not record beliefs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::belief::{Algorithm, CaseOneEvent};
use crate::error::{Error, Result};
use crate::grid::GridPos;
use crate::hypothesis::{AgentSet, Belief};
use crate::io::scenario_file::{load_scenario, save_scenario};
use crate::observation::{ObservationVector, SensorReading};
use crate::simulator::{RunMetrics, SimulationTrace, StepRecord};

pub const BELIEFS_FILE: &str = "beliefs.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const TOPOLOGY_FILE: &str = "topology.csv";
pub const SERIES_FILE: &str = "series.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const SCENARIO_FILE: &str = "scenario.toml";

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::TraceFormat {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn format_set(s: AgentSet) -> String {
    s.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" ")
}

/// Write every trace file into `dir` (created if missing); returns the paths written.
pub fn write_trace(trace: &SimulationTrace, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let scenario = dir.join(SCENARIO_FILE);
    save_scenario(&trace.scenario, &scenario)?;
    written.push(scenario);

    if trace.beliefs_recorded() {
        let path = dir.join(BELIEFS_FILE);
        let rows = trace.steps.iter().flat_map(|s| {
            s.local.iter().zip(&s.actual).enumerate().flat_map(move |(i, (l, a))| {
                [("local", l), ("actual", a)].into_iter().flat_map(move |(kind, b)| {
                    b.as_slice().iter().enumerate().map(move |(h, v)| {
                        vec![s.t.to_string(), i.to_string(), kind.to_string(), h.to_string(), v.to_string()]
                    })
                })
            })
        });
        write_rows(&path, &["t", "agent", "kind", "hyp", "value"], rows)?;
        written.push(path);
    }

    let path = dir.join(EVENTS_FILE);
    let rows = trace.events.iter().map(|e| {
        vec![
            e.time.to_string(),
            e.agent.to_string(),
            e.hypothesis.to_string(),
            e.algorithm.as_str().to_string(),
        ]
    });
    write_rows(&path, &["t", "agent", "hyp", "algorithm"], rows)?;
    written.push(path);

    let path = dir.join(OBSERVATIONS_FILE);
    let rows = trace.steps.iter().flat_map(|s| {
        s.observations.iter().flat_map(move |o| {
            o.readings.iter().map(move |r| {
                let (x, y) = r
                    .value
                    .map_or((String::new(), String::new()), |p| (p.x.to_string(), p.y.to_string()));
                vec![s.t.to_string(), o.observer.to_string(), r.target.to_string(), x, y]
            })
        })
    });
    write_rows(&path, &["t", "observer", "target", "x", "y"], rows)?;
    written.push(path);

    let path = dir.join(TOPOLOGY_FILE);
    let rows = trace.steps.iter().flat_map(|s| {
        s.positions.iter().zip(&s.neighbors).enumerate().map(move |(i, (p, n))| {
            vec![s.t.to_string(), i.to_string(), p.x.to_string(), p.y.to_string(), format_set(*n)]
        })
    });
    write_rows(&path, &["t", "agent", "x", "y", "neighbors"], rows)?;
    written.push(path);

    let path = dir.join(SERIES_FILE);
    let m = &trace.metrics;
    let rows = (0..m.case_one_cumulative.len()).map(|t| {
        vec![
            t.to_string(),
            m.mean_good_actual_true[t].to_string(),
            m.mean_good_local_true[t].to_string(),
            m.min_good_actual_true[t].to_string(),
            m.case_one_cumulative[t].to_string(),
        ]
    });
    write_rows(
        &path,
        &["t", "mean_actual_true", "mean_local_true", "min_actual_true", "case_one_cumulative"],
        rows,
    )?;
    written.push(path);

    let path = dir.join(METRICS_FILE);
    let mut json = serde_json::to_string_pretty(&trace.metrics).map_err(|e| Error::TraceFormat {
        path: path.clone(),
        message: e.to_string(),
    })?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.records().map(|rec| rec.map_err(|e| csv_error(path, e))).collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, k: usize) -> Result<T> {
    let raw = rec.get(k).unwrap_or("");
    raw.parse().map_err(|_| Error::TraceFormat {
        path: path.to_path_buf(),
        message: format!(
            "line {}: cannot parse column {k} value `{raw}`",
            rec.position().map_or(0, |p| p.line())
        ),
    })
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::TraceFormat {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Read a trace directory back into memory.
pub fn read_trace(dir: impl AsRef<Path>) -> Result<SimulationTrace> {
    let dir = dir.as_ref();
    let scenario = load_scenario(dir.join(SCENARIO_FILE))?;
    let n = scenario.n_agents();
    let m = scenario.hypotheses.count();
    let steps_n = scenario.horizon + 1;

    let path = dir.join(METRICS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let metrics: RunMetrics = serde_json::from_str(&text).map_err(|e| format_err(&path, e.to_string()))?;

    let mut steps: Vec<StepRecord> = (0..steps_n)
        .map(|t| StepRecord {
            t,
            positions: vec![GridPos::new(0, 0); n],
            neighbors: vec![AgentSet::empty(); n],
            local: Vec::new(),
            actual: Vec::new(),
            observations: Vec::new(),
        })
        .collect();

    let path = dir.join(TOPOLOGY_FILE);
    let rows = read_rows(&path)?;
    if rows.len() != steps_n * n {
        return Err(format_err(&path, format!("expected {} rows, found {}", steps_n * n, rows.len())));
    }
    for rec in &rows {
        let t: usize = field(&path, rec, 0)?;
        let i: usize = field(&path, rec, 1)?;
        if t >= steps_n || i >= n {
            return Err(format_err(&path, format!("row ({t}, {i}) out of range")));
        }
        steps[t].positions[i] = GridPos::new(field(&path, rec, 2)?, field(&path, rec, 3)?);
        let mut set = AgentSet::empty();
        for tok in rec.get(4).unwrap_or("").split_whitespace() {
            set.insert(tok.parse().map_err(|_| format_err(&path, format!("bad neighbor id `{tok}`")))?);
        }
        steps[t].neighbors[i] = set;
    }

    let path = dir.join(OBSERVATIONS_FILE);
    let mut readings: BTreeMap<(usize, usize), Vec<SensorReading>> = BTreeMap::new();
    for rec in read_rows(&path)? {
        let t: usize = field(&path, &rec, 0)?;
        let observer: usize = field(&path, &rec, 1)?;
        let target = field(&path, &rec, 2)?;
        let value = match (rec.get(3).unwrap_or(""), rec.get(4).unwrap_or("")) {
            ("", "") => None,
            _ => Some(GridPos::new(field(&path, &rec, 3)?, field(&path, &rec, 4)?)),
        };
        readings.entry((t, observer)).or_default().push(SensorReading { target, value });
    }
    for ((t, observer), r) in readings {
        let step = steps.get_mut(t).ok_or_else(|| format_err(&path, format!("step {t} out of range")))?;
        step.observations.push(ObservationVector::new(observer, n, r)?);
    }

    let path = dir.join(BELIEFS_FILE);
    if path.exists() {
        let mut values = vec![vec![vec![[0.0f64; 2]; m]; n]; steps_n];
        let rows = read_rows(&path)?;
        if rows.len() != steps_n * n * 2 * m {
            return Err(format_err(&path, format!("expected {} rows, found {}", steps_n * n * 2 * m, rows.len())));
        }
        for rec in &rows {
            let t: usize = field(&path, rec, 0)?;
            let i: usize = field(&path, rec, 1)?;
            let kind = match rec.get(2) {
                Some("local") => 0,
                Some("actual") => 1,
                other => return Err(format_err(&path, format!("unknown kind {other:?}"))),
            };
            let h: usize = field(&path, rec, 3)?;
            if t >= steps_n || i >= n || h >= m {
                return Err(format_err(&path, format!("row ({t}, {i}, {h}) out of range")));
            }
            values[t][i][h][kind] = field(&path, rec, 4)?;
        }
        for (step, per_agent) in steps.iter_mut().zip(values) {
            for v in per_agent {
                let local = Belief::new(v.iter().map(|x| x[0]).collect()).map_err(|e| format_err(&path, e.to_string()))?;
                let actual = Belief::new(v.iter().map(|x| x[1]).collect()).map_err(|e| format_err(&path, e.to_string()))?;
                step.local.push(local);
                step.actual.push(actual);
            }
        }
    }

    let path = dir.join(EVENTS_FILE);
    let events = read_rows(&path)?
        .iter()
        .map(|rec| {
            let algorithm = match rec.get(3) {
                Some("sdht") => Algorithm::Sdht,
                Some("adht") => Algorithm::Adht,
                other => return Err(format_err(&path, format!("unknown algorithm {other:?}"))),
            };
            Ok(CaseOneEvent {
                time: field(&path, rec, 0)?,
                agent: field(&path, rec, 1)?,
                hypothesis: field(&path, rec, 2)?,
                algorithm,
            })
        })
        .collect::<Result<_>>()?;

    Ok(SimulationTrace {
        scenario,
        steps,
        events,
        metrics,
    })
}
