//! Command-line front end.
//!
//! Exit codes: 0 success (or FTS evidence), 1 configuration or validation
//! error, 2 simulation failure, 3 verdict "violated", 4 verdict
//! "inconclusive".

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::certificate::{certify, lemma1_cases, lemma1_oracle, Certification, CertifyOptions, Verdict, MIN_RADII};
use crate::export::{write_envelopes_csv, write_json, write_plot_files, write_trajectory_csv, Manifest};
use crate::integrator::{settling_time, simulate, IntegrationConfig, IntegrationError};
use crate::lyapunov::LyapunovSet;
use crate::model::{validate_system, HybridSystemDef, JumpSchedule, ModeSchedule};
use crate::registry;
use crate::sweep::{initial_conditions, run_sweep, SweepRun, DEFAULT_SEED};
use crate::sysfile::SystemFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SIMULATION: i32 = 2;
pub const EXIT_VIOLATED: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;

/// Sweep used for file-defined systems that do not carry their own.
const DEFAULT_RADII: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
const DEFAULT_ANGLES: usize = 8;
const LEMMA1_TOL: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(name = "hybrid-fts", version, about = "Simulate hybrid systems and check finite-time-stability certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate from one initial state; write the trajectory, a manifest and plot data.
    Simulate {
        #[command(flatten)]
        system: SystemArgs,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x0: Vec<f64>,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep initial states and check the certificate conditions.
    Certify(SweepArgs),
    /// Sweep initial states and tabulate settling behaviour.
    Sweep(SweepArgs),
    /// Check the power-sum inequalities on randomized sequences.
    Lemma1 {
        /// Number of random cases
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Draw each b_k within a relative 1e-6 of a_k.
        #[arg(long)]
        adversarial: bool,
        /// Directory for lemma1.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in examples.
    ListExamples,
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Integration step in seconds
    #[arg(long)]
    pub dt: Option<f64>,
    /// Simulation horizon in seconds
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Replace every activation duration.
    #[arg(long)]
    pub dwell: Option<f64>,
    /// Fire the jump map periodically with this period.
    #[arg(long)]
    pub jump_period: Option<f64>,
    /// Minimum jump-free activation of the finite-time-stable mode.
    #[arg(long)]
    pub td: Option<f64>,
    /// Seed for random schedules and sampled directions.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Built-in example name (see list-examples).
    #[arg(long)]
    pub example: Option<String>,
    /// JSON system-definition file.
    #[arg(long)]
    pub system: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Radii, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    /// Directions per radius.
    #[arg(long)]
    pub angles: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// An error that ends the command with `code`.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    config_error(format!("{}: {e}", path.display()))
}

/// A system with overrides applied.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub name: String,
    pub def: HybridSystemDef,
    pub lyapunov: Option<LyapunovSet>,
    pub config: IntegrationConfig,
    pub radii: Vec<f64>,
    pub angles: usize,
    pub seed: u64,
}

pub fn resolve(args: &SystemArgs) -> Result<Resolved, Failure> {
    let mut r = match (&args.source.example, &args.source.system) {
        (Some(name), None) => {
            let e = registry::by_name(name).map_err(|e| config_error(e.to_string()))?;
            Resolved {
                name: e.name,
                def: e.def,
                lyapunov: Some(e.lyapunov),
                config: e.config,
                radii: e.radii,
                angles: e.angles,
                seed: DEFAULT_SEED,
            }
        }
        (None, Some(path)) => {
            let sys = SystemFile::read(path)
                .and_then(|f| f.load())
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            let (radii, angles) = sys
                .sweep
                .map_or((DEFAULT_RADII.to_vec(), DEFAULT_ANGLES), |s| (s.radii, s.angles));
            let name = if sys.name.is_empty() {
                path.display().to_string()
            } else {
                sys.name
            };
            Resolved {
                name,
                def: sys.def,
                lyapunov: sys.lyapunov,
                config: sys.config,
                radii,
                angles,
                seed: DEFAULT_SEED,
            }
        }
        _ => return Err(config_error("give exactly one of --example and --system")),
    };

    if let Some(dt) = args.dt {
        r.config.dt = dt;
        r.config.guard_tol = r.config.guard_tol.min(dt);
    }
    if let Some(t_end) = args.t_end {
        r.config.t_end = t_end;
    }
    r.config
        .validate()
        .map_err(|e| config_error(e.to_string()))?;

    let mut policy = r.def.policy().clone();
    if let Some(dwell) = args.dwell {
        policy.mode_schedule = policy.mode_schedule.with_uniform_dwell(dwell);
    }
    if let Some(period) = args.jump_period {
        let jump = match policy.jump_schedule {
            JumpSchedule::Periodic { jump, .. } => jump,
            _ if !r.def.jumps().is_empty() => 0,
            _ => return Err(config_error("--jump-period given but the system has no jump map")),
        };
        policy.jump_schedule = JumpSchedule::Periodic { period, jump };
    }
    if let Some(td) = args.td {
        policy.dwell_min = td;
    }
    if let Some(seed) = args.seed {
        r.seed = seed;
        if let ModeSchedule::Random { seed: s, .. } = &mut policy.mode_schedule {
            *s = seed;
        }
    }
    if policy != *r.def.policy() {
        r.def = r
            .def
            .with_policy(policy)
            .map_err(|e| config_error(e.to_string()))?;
    }

    let violations = validate_system(&r.def);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(config_error(format!(
            "{}: the origin must be an equilibrium of every flow and jump map:\n  {}",
            r.name,
            list.join("\n  ")
        )));
    }
    Ok(r)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn classify(e: &IntegrationError) -> i32 {
    match e {
        IntegrationError::InvalidSystem(_) | IntegrationError::InvalidConfig(_) | IntegrationError::InitialState(_) => {
            EXIT_CONFIG
        }
        IntegrationError::NonFinite { .. } | IntegrationError::ScheduleExhausted { .. } | IntegrationError::NoSignChange => {
            EXIT_SIMULATION
        }
    }
}

fn cmd_simulate(system: &SystemArgs, x0: &[f64], out: &Path) -> Result<i32, Failure> {
    let r = resolve(system)?;
    if x0.len() != r.def.dim() {
        return Err(config_error(format!(
            "--x0 has {} components, the system has dimension {}",
            x0.len(),
            r.def.dim()
        )));
    }
    let traj = simulate(&r.def, x0, &r.config).map_err(|e| Failure {
        code: classify(&e),
        message: e.to_string(),
    })?;
    create_dir(out)?;
    let path = out.join("trajectory.csv");
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    write_trajectory_csv(std::io::BufWriter::new(file), &traj).map_err(|e| io_error(&path, e))?;
    let plots = write_plot_files(out, &traj, r.lyapunov.as_ref()).map_err(|e| config_error(e.to_string()))?;

    let mut manifest = Manifest::new(&r.name, &traj, &r.config);
    manifest.files = std::iter::once(path)
        .chain(plots)
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .collect();
    let path = out.join("manifest.json");
    write_json(&path, &manifest).map_err(|e| io_error(&path, e))?;

    println!(
        "{}: {} at t = {} after {} switches and {} jumps; |x| = {:e}",
        r.name,
        manifest.reason,
        manifest.t_final,
        manifest.switches,
        manifest.jumps,
        manifest.final_norm
    );
    match manifest.settling_time {
        Some(t) => println!("settling time: {t}"),
        None => println!("settling time: not reached"),
    }
    println!("wrote {} files to {}", manifest.files.len() + 1, out.display());
    Ok(EXIT_OK)
}

fn sweep_points(r: &Resolved, args: &SweepArgs) -> Vec<(f64, Vec<f64>)> {
    let radii = args.radii.clone().unwrap_or_else(|| r.radii.clone());
    let angles = args.angles.unwrap_or(r.angles);
    initial_conditions(r.def.dim(), &radii, angles, r.seed)
}

fn distinct_radii(points: &[(f64, Vec<f64>)]) -> usize {
    let mut radii: Vec<f64> = points.iter().map(|p| p.0).collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    radii.len()
}

#[derive(Debug, Serialize)]
struct SweepRow {
    radius: f64,
    x0: Vec<f64>,
    reason: Option<String>,
    t_final: Option<f64>,
    settling_time: Option<f64>,
    switches: Option<usize>,
    jumps: Option<usize>,
    error: Option<String>,
}

fn sweep_rows(runs: &[SweepRun], tol: f64) -> Vec<SweepRow> {
    runs.iter()
        .map(|run| match &run.result {
            Ok(traj) => SweepRow {
                radius: run.radius,
                x0: run.x0.clone(),
                reason: Some(traj.reason.to_string()),
                t_final: Some(traj.t_final),
                settling_time: settling_time(traj, tol),
                switches: Some(traj.switch_count()),
                jumps: Some(traj.jump_events.len()),
                error: None,
            },
            Err(e) => SweepRow {
                radius: run.radius,
                x0: run.x0.clone(),
                reason: None,
                t_final: None,
                settling_time: None,
                switches: None,
                jumps: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), ToString::to_string)
}

fn write_sweep_csv(path: &Path, n: usize, rows: &[SweepRow]) -> Result<(), Failure> {
    let fail = |e: csv::Error| io_error(path, e);
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    let mut head = vec!["radius".to_string()];
    head.extend((1..=n).map(|i| format!("x0_{i}")));
    head.extend(["reason", "t_final", "settling_time", "switches", "jumps", "error"].map(String::from));
    w.write_record(&head).map_err(fail)?;
    for row in rows {
        let mut rec = vec![row.radius.to_string()];
        rec.extend(row.x0.iter().map(f64::to_string));
        rec.extend([
            opt(&row.reason),
            opt(&row.t_final),
            opt(&row.settling_time),
            opt(&row.switches),
            opt(&row.jumps),
            opt(&row.error),
        ]);
        w.write_record(&rec).map_err(fail)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32, Failure> {
    let r = resolve(&args.system)?;
    let points = sweep_points(&r, args);
    if points.is_empty() {
        return Err(config_error("the sweep has no initial states"));
    }
    let runs = run_sweep(&r.def, &r.config, &points);
    let rows = sweep_rows(&runs, r.config.origin_tol);
    create_dir(&args.out)?;
    write_sweep_csv(&args.out.join("sweep.csv"), r.def.dim(), &rows)?;

    let mut by_reason: BTreeMap<String, usize> = BTreeMap::new();
    for row in &rows {
        *by_reason
            .entry(row.reason.clone().unwrap_or_else(|| "error".into()))
            .or_default() += 1;
    }
    println!("{}: {} runs", r.name, rows.len());
    for (reason, k) in &by_reason {
        println!("  {reason}: {k}");
    }
    if let Some(worst) = rows
        .iter()
        .filter_map(|row| row.settling_time)
        .max_by(f64::total_cmp)
    {
        println!("  longest settling time: {worst}");
    }
    let errors: Vec<&SweepRun> = runs.iter().filter(|run| run.result.is_err()).collect();
    if let Some(run) = errors.first() {
        let e = run.result.as_ref().unwrap_err();
        eprintln!("{} runs failed; first from x0 = {:?}: {e}", errors.len(), run.x0);
        return Ok(classify(e).max(EXIT_SIMULATION));
    }
    Ok(EXIT_OK)
}

/// Human-readable summary of a certification.
pub fn render_summary(name: &str, cert: &Certification) -> String {
    let report = cert.deciding();
    let mut s = String::new();
    let _ = writeln!(s, "{name}: verdict {} (decided by {})", cert.verdict, cert.decided_by);
    let _ = writeln!(s, "finite-time-stable mode: {}", report.fts_mode + 1);
    match report.fts_constants {
        Some(c) => {
            let how = if report.constants_estimated { "estimated" } else { "given" };
            let _ = writeln!(s, "decrease constants: c = {:e}, beta = {} ({how})", c.c, c.beta);
        }
        None => {
            let _ = writeln!(s, "decrease constants: none");
        }
    }
    for (i, c) in report.per_mode_constants.iter().enumerate() {
        if let Some(c) = c {
            let _ = writeln!(s, "  mode {}: c = {:e}, beta = {}", i + 1, c.c, c.beta);
        }
    }
    let _ = writeln!(s, "conditions:");
    for b in &report.conditions {
        let status = format!("{:?}", b.status).to_uppercase();
        let resid = b.worst_residual.map_or("-".to_string(), |r| format!("{r:.3e}"));
        let _ = writeln!(s, "  {status:<12} {:<28} residual {resid:<10} {}", b.name, b.note);
    }
    if !report.envelopes.is_empty() {
        let _ = writeln!(s, "envelopes (value at smallest radius / largest value):");
        for e in &report.envelopes {
            let _ = writeln!(
                s,
                "  {:<28} {:.3e} / {:.3e}",
                e.name,
                e.envelope.origin_value,
                e.envelope.max_value()
            );
        }
    }
    match report.settled_radius {
        Some(r) => {
            let _ = writeln!(s, "every run settled up to radius {r}");
        }
        None => {
            let _ = writeln!(s, "no radius at which every run settled");
        }
    }
    for note in &report.notes {
        let _ = writeln!(s, "note: {note}");
    }
    s
}

fn cmd_certify(args: &SweepArgs) -> Result<i32, Failure> {
    let r = resolve(&args.system)?;
    let set = r
        .lyapunov
        .clone()
        .ok_or_else(|| config_error(format!("{}: certify needs Lyapunov functions", r.name)))?;
    let points = sweep_points(&r, args);
    let got = distinct_radii(&points);
    if got < MIN_RADII {
        return Err(config_error(format!(
            "certify needs at least {MIN_RADII} distinct radii, got {got}"
        )));
    }
    let runs = run_sweep(&r.def, &r.config, &points);
    let opts = CertifyOptions::for_system(&r.def, r.config.origin_tol);
    let cert = certify(&r.def, &set, &runs, &opts).map_err(|e| config_error(e.to_string()))?;

    create_dir(&args.out)?;
    let path = args.out.join("report.json");
    write_json(&path, &cert).map_err(|e| io_error(&path, e))?;
    let path = args.out.join("envelopes.csv");
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    write_envelopes_csv(file, &cert.deciding().envelopes).map_err(|e| io_error(&path, e))?;
    let summary = render_summary(&r.name, &cert);
    let path = args.out.join("summary.txt");
    std::fs::write(&path, &summary).map_err(|e| io_error(&path, e))?;
    write_sweep_csv(&args.out.join("sweep.csv"), r.def.dim(), &sweep_rows(&runs, r.config.origin_tol))?;
    print!("{summary}");

    Ok(match cert.verdict {
        Verdict::FtsEvidence => EXIT_OK,
        Verdict::Violated => EXIT_VIOLATED,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    })
}

#[derive(Debug, Serialize)]
pub struct Lemma1Summary {
    pub count: usize,
    pub seed: u64,
    pub adversarial: bool,
    /// True when no cases were run.
    pub vacuous: bool,
    pub tolerance: f64,
    pub failures: usize,
    pub min_slack: Option<f64>,
    /// Case index attaining `min_slack`.
    pub worst_case: Option<usize>,
    /// Smallest slack of each inequality, in oracle order.
    pub per_inequality: Vec<(String, f64)>,
}

pub fn lemma1_summary(count: usize, seed: u64, adversarial: bool) -> Lemma1Summary {
    let mut summary = Lemma1Summary {
        count,
        seed,
        adversarial,
        vacuous: count == 0,
        tolerance: LEMMA1_TOL,
        failures: 0,
        min_slack: None,
        worst_case: None,
        per_inequality: Vec::new(),
    };
    for (k, case) in lemma1_cases(count, seed, adversarial).iter().enumerate() {
        let report = lemma1_oracle(&case.a, &case.b, case.r, None).expect("generated cases are valid");
        if !report.holds(LEMMA1_TOL) {
            summary.failures += 1;
        }
        if summary.min_slack.is_none_or(|m| report.min_slack < m) {
            summary.min_slack = Some(report.min_slack);
            summary.worst_case = Some(k);
        }
        if summary.per_inequality.is_empty() {
            summary.per_inequality = report
                .inequalities
                .iter()
                .map(|q| (q.name.clone(), q.slack))
                .collect();
        } else {
            for (acc, q) in summary.per_inequality.iter_mut().zip(&report.inequalities) {
                acc.1 = acc.1.min(q.slack);
            }
        }
    }
    summary
}

fn cmd_lemma1(count: usize, seed: u64, adversarial: bool, out: Option<&Path>) -> Result<i32, Failure> {
    let summary = lemma1_summary(count, seed, adversarial);
    if let Some(dir) = out {
        create_dir(dir)?;
        let path = dir.join("lemma1.json");
        write_json(&path, &summary).map_err(|e| io_error(&path, e))?;
    }
    if summary.vacuous {
        println!("lemma1: no cases (vacuous)");
        return Ok(EXIT_OK);
    }
    println!(
        "lemma1: {} cases (seed {}{}), {} failures, min slack {:e}",
        count,
        seed,
        if adversarial { ", adversarial" } else { "" },
        summary.failures,
        summary.min_slack.unwrap_or(f64::NAN)
    );
    for (name, slack) in &summary.per_inequality {
        println!("  {name:<40} {slack:e}");
    }
    Ok(if summary.failures == 0 { EXIT_OK } else { EXIT_VIOLATED })
}

fn cmd_list() -> i32 {
    for (name, description) in registry::list() {
        println!("{name:<14} {description}");
    }
    EXIT_OK
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Simulate { system, x0, out } => cmd_simulate(system, x0, out),
        Command::Certify(args) => cmd_certify(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Lemma1 {
            count,
            seed,
            adversarial,
            out,
        } => cmd_lemma1(*count, *seed, *adversarial, out.as_deref()),
        Command::ListExamples => Ok(cmd_list()),
    };
    result.unwrap_or_else(|f| {
        eprintln!("error: {}", f.message);
        f.code
    })
}
