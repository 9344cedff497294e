//! `dht-sim`: run, validate, compare and audit hypothesis-testing simulations.
//!
//! Exit codes: 0 on success, 1 when a run hits an invariant violation, a
//! scenario fails validation or an audit finds mismatches, 2 on usage,
//! parse or I/O errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dht_core::belief::{Algorithm, FusionRule};
use dht_core::io::{load_scenario, read_trace, write_trace};
use dht_core::simulator::{audit, compare, run_with, validate, RunOptions, ScenarioSpec, Severity};
use dht_core::{bundled, Error};

#[derive(Parser, Debug)]
#[command(name = "dht-sim", version, about = "Byzantine-resilient distributed hypothesis testing simulator")]
struct Cli {
    /// Only print results, no progress lines.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation per seed and write its trace directory.
    Run(RunArgs),
    /// Check a scenario and print findings.
    Validate(ValidateArgs),
    /// Run paired batches that differ in one dimension and print a table.
    Compare(CompareArgs),
    /// Compare a grid of sigma or f values.
    Sweep(SweepArgs),
    /// Recompute every belief update of a trace directory and report mismatches.
    ReplayAudit(AuditArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgorithmArg {
    Sdht,
    Adht,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Sdht => Algorithm::Sdht,
            AlgorithmArg::Adht => Algorithm::Adht,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RuleArg {
    Min,
    Avg,
}

impl From<RuleArg> for FusionRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Min => FusionRule::Min,
            RuleArg::Avg => FusionRule::Avg,
        }
    }
}

/// Scenario fields that may be overridden from the command line.
#[derive(Args, Debug, Default, Clone)]
struct Overrides {
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    /// Sensor noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Bound on bad neighbors.
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Convergence threshold on the true hypothesis.
    #[arg(long)]
    tau: Option<f64>,
}

impl Overrides {
    fn apply(&self, spec: &mut ScenarioSpec) {
        if let Some(a) = self.algorithm {
            spec.algorithm = a.into();
        }
        if let Some(r) = self.rule {
            spec.rule = r.into();
        }
        if let Some(s) = self.sigma {
            spec.sigma = s;
        }
        if let Some(f) = self.f {
            spec.f = f;
        }
        if let Some(h) = self.horizon {
            spec.horizon = h;
        }
        if let Some(t) = self.tau {
            spec.tau = t;
        }
    }
}

#[derive(Args, Debug)]
struct SeedArgs {
    /// Single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list or range: `0..20`, `0..=19` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario file or bundled scenario name.
    scenario: String,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    seeds: SeedArgs,
    /// Output root; each run writes `<out>/<scenario>-seed<seed>-<algorithm>-<rule>/`.
    #[arg(long, env = "DHT_OUTPUT_ROOT", default_value = "runs")]
    out: PathBuf,
    /// Keep only metrics and series; skip belief tables and the audit.
    #[arg(long)]
    metrics_only: bool,
    /// Skip the replay audit after the run.
    #[arg(long)]
    fast: bool,
    /// Also write a gnuplot script next to the data.
    #[arg(long)]
    gnuplot_script: bool,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    scenario: String,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Dimension {
    Algorithm,
    Rule,
    Sigma,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Scenario file(s) or bundled name(s); several files are compared as-is.
    #[arg(required = true)]
    scenarios: Vec<String>,
    /// Dimension to vary on a single scenario.
    #[arg(long, value_enum)]
    vary: Option<Dimension>,
    /// Sigma values when varying sigma, comma separated.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    seeds: SeedArgs,
    /// Print the table as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    scenario: String,
    /// Sigma grid, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "f_values")]
    sigmas: Vec<f64>,
    /// f grid, comma separated.
    #[arg(long = "f-values", value_delimiter = ',')]
    f_values: Vec<usize>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    seeds: SeedArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct AuditArgs {
    /// Trace directory written by `run`.
    trace: PathBuf,
}

enum Failure {
    /// Invariant violation, validation error or audit mismatch.
    Check(String),
    /// Bad invocation, unreadable or malformed input.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_invariant_violation() || matches!(e, Error::Refused(_)) {
            Failure::Check(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type CliResult = Result<(), Failure>;

fn load(name: &str) -> Result<ScenarioSpec, Failure> {
    if let Some(spec) = bundled::load(name) {
        return Ok(spec?);
    }
    let path = Path::new(name);
    if !path.exists() {
        let known: Vec<&str> = bundled::names().collect();
        return Err(Failure::Usage(format!(
            "`{name}` is neither a file nor a bundled scenario ({})",
            known.join(", ")
        )));
    }
    Ok(load_scenario(path)?)
}

fn parse_seeds(args: &SeedArgs, default: u64) -> Result<Vec<u64>, Failure> {
    let bad = |s: &str| Failure::Usage(format!("invalid seed list `{s}`"));
    match (&args.seed, &args.seeds) {
        (Some(s), _) => Ok(vec![*s]),
        (None, None) => Ok(vec![default]),
        (None, Some(text)) => {
            let text = text.trim();
            if let Some((a, b)) = text.split_once("..") {
                let (b, inclusive) = match b.strip_prefix('=') {
                    Some(b) => (b, true),
                    None => (b, false),
                };
                let a: u64 = a.trim().parse().map_err(|_| bad(text))?;
                let b: u64 = b.trim().parse().map_err(|_| bad(text))?;
                let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
                if seeds.is_empty() {
                    return Err(bad(text));
                }
                Ok(seeds)
            } else {
                text.split(',').map(|s| s.trim().parse().map_err(|_| bad(text))).collect()
            }
        }
    }
}

fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

const GNUPLOT: &str = r#"# Good-agent averages on the true hypothesis.
set datafile separator ","
set key autotitle columnhead
set xlabel "t"
set ylabel "belief on true hypothesis"
set yrange [0:1.05]
set terminal pngcairo size 900,500
set output "series.png"
plot "series.csv" using 1:2 with lines title "mean actual", \
     "series.csv" using 1:3 with lines title "mean local", \
     "series.csv" using 1:4 with lines title "min actual"
set output "case_one.png"
set ylabel "cumulative case-one updates"
set autoscale y
plot "series.csv" using 1:5 with lines title "case one"
"#;

fn cmd_run(args: &RunArgs, quiet: bool) -> CliResult {
    let mut base = load(&args.scenario)?;
    args.overrides.apply(&mut base);
    let seeds = parse_seeds(&args.seeds, base.seed)?;
    let options = RunOptions {
        record_beliefs: !args.metrics_only,
    };
    for seed in seeds {
        let mut spec = base.clone();
        spec.seed = seed;
        let trace = run_with(&spec, &options)?;
        let dir = args.out.join(spec.run_name());
        write_trace(&trace, &dir)?;
        if args.gnuplot_script {
            let path = dir.join("plot.gp");
            std::fs::write(&path, GNUPLOT).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        }
        let conv = trace
            .metrics
            .convergence_time
            .map_or_else(|| "none".to_string(), |t| t.to_string());
        println!(
            "{}: convergence_time={conv} case_one={} dir={}",
            spec.run_name(),
            trace.metrics.case_one_total(),
            dir.display()
        );
        if !args.fast && !args.metrics_only {
            let report = audit(&trace)?;
            if !report.is_clean() {
                return Err(Failure::Check(format!(
                    "replay audit found {} mismatches in {}",
                    report.mismatches.len(),
                    dir.display()
                )));
            }
            say(quiet, format!("audit: {} updates, max {} ulp", report.updates_checked, report.max_ulps));
        }
    }
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> CliResult {
    let mut spec = load(&args.scenario)?;
    args.overrides.apply(&mut spec);
    let findings = validate(&spec);
    for f in &findings {
        println!("{f}");
    }
    let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
    if errors > 0 {
        return Err(Failure::Check(format!("{errors} error(s) in {}", spec.name)));
    }
    println!("{}: ok ({} warning(s))", spec.name, findings.len());
    Ok(())
}

fn print_table(table: &dht_core::simulator::ComparisonTable, json: bool) -> CliResult {
    if json {
        let text = serde_json_string(table)?;
        println!("{text}");
    } else {
        print!("{table}");
    }
    Ok(())
}

fn serde_json_string(table: &dht_core::simulator::ComparisonTable) -> Result<String, Failure> {
    serde_json::to_string_pretty(table).map_err(|e| Failure::Usage(e.to_string()))
}

fn cmd_compare(args: &CompareArgs) -> CliResult {
    let o = &args.overrides;
    let mut variants: Vec<(String, ScenarioSpec)> = Vec::new();
    match (args.scenarios.as_slice(), args.vary) {
        ([one], Some(dim)) => {
            let conflict = match dim {
                Dimension::Algorithm => o.algorithm.is_some(),
                Dimension::Rule => o.rule.is_some(),
                Dimension::Sigma => o.sigma.is_some(),
            };
            if conflict {
                return Err(Failure::Usage(format!("--vary {dim:?} conflicts with the matching override").to_lowercase()));
            }
            if dim != Dimension::Sigma && !args.values.is_empty() {
                return Err(Failure::Usage("--values only applies to --vary sigma".into()));
            }
            let mut base = load(one)?;
            o.apply(&mut base);
            match dim {
                Dimension::Algorithm => {
                    for a in [Algorithm::Sdht, Algorithm::Adht] {
                        let mut s = base.clone();
                        s.algorithm = a;
                        variants.push((a.as_str().to_string(), s));
                    }
                }
                Dimension::Rule => {
                    for r in [FusionRule::Min, FusionRule::Avg] {
                        let mut s = base.clone();
                        s.rule = r;
                        variants.push((r.as_str().to_string(), s));
                    }
                }
                Dimension::Sigma => {
                    if args.values.is_empty() {
                        return Err(Failure::Usage("--vary sigma needs --values".into()));
                    }
                    for &v in &args.values {
                        let mut s = base.clone();
                        s.sigma = v;
                        variants.push((format!("sigma={v}"), s));
                    }
                }
            }
        }
        (many, None) if many.len() >= 2 => {
            for name in many {
                let mut s = load(name)?;
                o.apply(&mut s);
                variants.push((name.clone(), s));
            }
        }
        (_, Some(_)) => return Err(Failure::Usage("--vary takes exactly one scenario".into())),
        (_, None) => return Err(Failure::Usage("give two or more scenarios or --vary".into())),
    }
    let seeds = parse_seeds(&args.seeds, variants[0].1.seed)?;
    let table = compare(&variants, &seeds)?;
    print_table(&table, args.json)
}

fn cmd_sweep(args: &SweepArgs) -> CliResult {
    let o = &args.overrides;
    let mut base = load(&args.scenario)?;
    o.apply(&mut base);
    let mut variants = Vec::new();
    match (args.sigmas.is_empty(), args.f_values.is_empty()) {
        (false, true) => {
            if o.sigma.is_some() {
                return Err(Failure::Usage("--sigmas conflicts with --sigma".into()));
            }
            for &v in &args.sigmas {
                let mut s = base.clone();
                s.sigma = v;
                variants.push((format!("sigma={v}"), s));
            }
        }
        (true, false) => {
            if o.f.is_some() {
                return Err(Failure::Usage("--f-values conflicts with --f".into()));
            }
            for &v in &args.f_values {
                let mut s = base.clone();
                s.f = v;
                variants.push((format!("f={v}"), s));
            }
        }
        _ => return Err(Failure::Usage("give exactly one of --sigmas or --f-values".into())),
    }
    let seeds = parse_seeds(&args.seeds, base.seed)?;
    let table = compare(&variants, &seeds)?;
    print_table(&table, args.json)
}

fn cmd_audit(args: &AuditArgs, quiet: bool) -> CliResult {
    let trace = read_trace(&args.trace)?;
    let report = audit(&trace)?;
    for m in report.mismatches.iter().take(20) {
        println!(
            "t={} agent={} {} hyp={:?} recorded={} recomputed={}",
            m.t, m.agent, m.what, m.hypothesis, m.recorded, m.recomputed
        );
    }
    println!(
        "{} updates, {} values, {} case-one events checked; max {} ulp; {} mismatches",
        report.updates_checked,
        report.values_checked,
        report.events_checked,
        report.max_ulps,
        report.mismatches.len()
    );
    if !report.is_clean() {
        return Err(Failure::Check("replay audit failed".into()));
    }
    say(quiet, "audit clean");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, cli.quiet),
        Command::Validate(a) => cmd_validate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ReplayAudit(a) => cmd_audit(a, cli.quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
