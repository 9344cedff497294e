//! Paired batch comparisons across scenario variants and seeds.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use super::{run_with, RunOptions, ScenarioSpec};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub seed: u64,
    pub convergence_time: Option<usize>,
    pub case_one_total: usize,
    /// Cumulative case-one count at every step.
    #[serde(skip)]
    pub case_one_cumulative: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub labels: Vec<String>,
    pub seeds: Vec<u64>,
    /// `runs[variant][seed]`.
    pub runs: Vec<Vec<RunSummary>>,
    /// Median convergence time per variant; runs that never converge count as infinitely late.
    pub medians: Vec<Option<f64>>,
    /// Per seed, the variant(s) with the earliest convergence.
    pub winners: Vec<Vec<String>>,
}

/// Median where `None` sorts after every value; `None` when the median itself is `None`.
pub fn median_convergence(times: &[Option<usize>]) -> Option<f64> {
    if times.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = times
        .iter()
        .map(|t| t.map_or(f64::INFINITY, |x| x as f64))
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let med = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    med.is_finite().then_some(med)
}

/// Run every `(variant, seed)` pair and aggregate convergence times and case-one counts.
///
/// The seed of each variant is overridden, so all variants of one seed share
/// their observation stream.
pub fn compare(variants: &[(String, ScenarioSpec)], seeds: &[u64]) -> Result<ComparisonTable> {
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..seeds.len()).map(move |s| (v, s)))
        .collect();
    let options = RunOptions { record_beliefs: false };
    let results: Vec<RunSummary> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let (label, spec) = &variants[v];
            let mut spec = spec.clone();
            spec.seed = seeds[s];
            let trace = run_with(&spec, &options)?;
            Ok(RunSummary {
                label: label.clone(),
                seed: seeds[s],
                convergence_time: trace.metrics.convergence_time,
                case_one_total: trace.metrics.case_one_total(),
                case_one_cumulative: trace.metrics.case_one_cumulative,
            })
        })
        .collect::<Result<_>>()?;

    let mut runs: Vec<Vec<RunSummary>> = vec![Vec::with_capacity(seeds.len()); variants.len()];
    for ((v, _), r) in jobs.into_iter().zip(results) {
        runs[v].push(r);
    }
    let medians = runs
        .iter()
        .map(|rs| median_convergence(&rs.iter().map(|r| r.convergence_time).collect::<Vec<_>>()))
        .collect();
    let winners = (0..seeds.len())
        .map(|s| {
            let key = |v: usize| runs[v][s].convergence_time.unwrap_or(usize::MAX);
            let best = (0..variants.len()).map(key).min().unwrap_or(usize::MAX);
            if best == usize::MAX {
                return Vec::new();
            }
            (0..variants.len())
                .filter(|&v| key(v) == best)
                .map(|v| variants[v].0.clone())
                .collect()
        })
        .collect();
    Ok(ComparisonTable {
        labels: variants.iter().map(|(l, _)| l.clone()).collect(),
        seeds: seeds.to_vec(),
        runs,
        medians,
        winners,
    })
}

fn fmt_time(t: Option<usize>) -> String {
    t.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>6}", "seed")?;
        for l in &self.labels {
            write!(f, " {:>16} {:>10}", format!("{l}:conv"), "case-one")?;
        }
        writeln!(f, "  winner")?;
        for (s, seed) in self.seeds.iter().enumerate() {
            write!(f, "{seed:>6}")?;
            for rs in &self.runs {
                write!(f, " {:>16} {:>10}", fmt_time(rs[s].convergence_time), rs[s].case_one_total)?;
            }
            let w = &self.winners[s];
            let w = if w.is_empty() {
                "none".to_string()
            } else if w.len() == self.labels.len() && w.len() > 1 {
                "tie".to_string()
            } else {
                w.join(",")
            };
            writeln!(f, "  {w}")?;
        }
        write!(f, "{:>6}", "median")?;
        for m in &self.medians {
            let m = m.map_or_else(|| "-".to_string(), |x| format!("{x}"));
            write!(f, " {m:>16} {:>10}", "")?;
        }
        writeln!(f)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::two_agent_spec;
    use super::*;
    use crate::belief::Algorithm;

    #[test]
    fn median_examples() {
        assert_eq!(median_convergence(&[Some(3), Some(1), Some(2)]), Some(2.0));
        assert_eq!(median_convergence(&[Some(3), Some(1)]), Some(2.0));
        assert_eq!(median_convergence(&[Some(3), None, None]), None);
        assert_eq!(median_convergence(&[Some(3), Some(4), None]), Some(4.0));
        assert_eq!(median_convergence(&[]), None);
    }

    #[test]
    fn identical_variants_give_identical_rows() {
        let spec = two_agent_spec(30, 0);
        let variants = vec![("a".to_string(), spec.clone()), ("b".to_string(), spec)];
        let table = compare(&variants, &[5]).unwrap();
        assert_eq!(table.runs[0][0].convergence_time, table.runs[1][0].convergence_time);
        assert_eq!(table.runs[0][0].case_one_total, table.runs[1][0].case_one_total);
        assert_eq!(table.winners[0].len(), 2);
        let again = compare(&variants, &[5]).unwrap();
        assert_eq!(table, again);
        assert!(table.to_string().contains("tie"));
    }

    #[test]
    fn seeds_are_overridden() {
        let spec = two_agent_spec(30, 0);
        let mut adht = spec.clone();
        adht.algorithm = Algorithm::Adht;
        let t = compare(&[("sdht".into(), spec), ("adht".into(), adht)], &[1, 2, 3]).unwrap();
        assert_eq!(t.runs[1].iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}
