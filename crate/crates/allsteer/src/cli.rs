//! Scenario-driven command line front end.
//!
//! Four subcommands cover the pipeline: `plan` runs the lattice search,
//! `smooth` adds the trajectory refinement, `rollout` adds the follower
//! and its metrics, and `check` re-validates a trajectory file against a
//! scenario's limits. Every run writes its outputs into the directory
//! given by `--out` and prints a `key=value` report to stdout; failures
//! print one `error code=...` line to stderr and exit nonzero.

use crate::evaluate::{self, ActuationLimits};
use crate::kinematics::{icm_radius, rotation, OMEGA_SINGULAR};
use crate::optimizer::{self, OptimizeError, OptimizeOptions};
use crate::search;
use crate::trajectory::{self, TrajectoryKnot};
use crate::world::{load_scenario, Scenario};
use crate::{BodyControl, BodyState};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Exit codes, one per failure class.
const EXIT_IO: i32 = 1;
const EXIT_PARSE: i32 = 2;
const EXIT_NO_PATH: i32 = 3;
const EXIT_INFEASIBLE: i32 = 4;
const EXIT_MAX_ITERATIONS: i32 = 5;

#[derive(Parser)]
#[command(name = "allsteer", version, about = "Plan and refine all-wheel-steering trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search an initial trajectory.
    Plan(RunArgs),
    /// Search, then refine the trajectory.
    Smooth(RunArgs),
    /// Full pipeline: search, refine, follow, measure.
    Rollout(RunArgs),
    /// Recompute a trajectory file's constraint residuals.
    Check(CheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Tabular,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario description file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; created when missing.
    #[arg(long)]
    out: PathBuf,
    /// Seed recorded with the run (the pipeline itself is deterministic).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Refinement iteration budget.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Max tolerated constraint violation.
    #[arg(long)]
    feas_tol: Option<f64>,
    /// Stationarity tolerance.
    #[arg(long)]
    opt_tol: Option<f64>,
    /// Follower sample period (s).
    #[arg(long, default_value_t = 0.02)]
    period: f64,
    /// Output table format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct CheckArgs {
    /// Scenario the trajectory claims to satisfy.
    #[arg(long)]
    scenario: PathBuf,
    /// Trajectory CSV to validate.
    #[arg(long)]
    trajectory: PathBuf,
    /// Max tolerated constraint violation.
    #[arg(long, default_value_t = 1e-6)]
    feas_tol: f64,
}

struct Failure {
    code: i32,
    tag: &'static str,
    detail: String,
}

impl Failure {
    fn new(code: i32, tag: &'static str, detail: impl Into<String>) -> Failure {
        Failure { code, tag, detail: detail.into() }
    }
    fn io(e: impl std::fmt::Display) -> Failure {
        Failure::new(EXIT_IO, "Io", e.to_string())
    }
    fn parse(e: impl std::fmt::Display) -> Failure {
        Failure::new(EXIT_PARSE, "ParseError", e.to_string())
    }
}

/// Entry point behind `main`; returns the process exit code.
pub fn run_cli(args: &[String]) -> i32 {
    let mut argv = vec!["allsteer".to_string()];
    argv.extend_from_slice(args);
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not failures.
            let done = e.use_stderr();
            let _ = e.print();
            return if done { EXIT_PARSE } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Plan(args) => pipeline(Stage::Plan, &args),
        Command::Smooth(args) => pipeline(Stage::Smooth, &args),
        Command::Rollout(args) => pipeline(Stage::Rollout, &args),
        Command::Check(args) => check(&args),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error code={} {}", f.tag, f.detail);
            f.code
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    Plan,
    Smooth,
    Rollout,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Plan => "plan",
            Stage::Smooth => "smooth",
            Stage::Rollout => "rollout",
        }
    }
}

fn fmt_float(v: f64) -> String {
    // Shortest representation that round-trips, so files diff cleanly.
    format!("{v}")
}

/// Trajectory table: body row plus per-wheel steering, speed and rolling
/// direction columns.
fn trajectory_table(knots: &[TrajectoryKnot]) -> (Vec<String>, Vec<Vec<String>>) {
    let nw = knots.first().map_or(0, |k| k.steer.len());
    let mut header: Vec<String> =
        ["t", "dt", "x", "y", "theta", "vx", "vy", "omega", "ax", "ay", "alpha", "phase"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    for i in 0..nw {
        header.push(format!("steer_{i}"));
    }
    for i in 0..nw {
        header.push(format!("speed_{i}"));
    }
    for i in 0..nw {
        header.push(format!("dir_{i}"));
    }
    let times = trajectory::knot_times(knots);
    let rows = knots
        .iter()
        .zip(&times)
        .map(|(k, &t)| {
            let mut row = vec![
                fmt_float(t),
                fmt_float(k.dt),
                fmt_float(k.state.x),
                fmt_float(k.state.y),
                fmt_float(k.state.theta),
                fmt_float(k.state.vx),
                fmt_float(k.state.vy),
                fmt_float(k.state.omega),
                fmt_float(k.control.ax),
                fmt_float(k.control.ay),
                fmt_float(k.control.alpha),
                k.phase.to_string(),
            ];
            row.extend(k.steer.iter().map(|v| fmt_float(*v)));
            row.extend(k.speed.iter().map(|v| fmt_float(*v)));
            row.extend(k.flags.iter().map(|f| f.to_string()));
            row
        })
        .collect();
    (header, rows)
}

fn render_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn render_tabular(header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let lines = std::iter::once(header).chain(rows.iter().map(|r| r.as_slice()));
    for line in lines {
        let text: Vec<String> =
            line.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        out.push_str(text.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Parse a trajectory CSV produced by [`trajectory_table`].
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<TrajectoryKnot>, String> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or("empty trajectory file")?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let fixed = ["t", "dt", "x", "y", "theta", "vx", "vy", "omega", "ax", "ay", "alpha", "phase"];
    if cols.len() < fixed.len() || cols[..fixed.len()] != fixed {
        return Err("unrecognized trajectory header".into());
    }
    let nw = cols[fixed.len()..].iter().filter(|c| c.starts_with("steer_")).count();
    if cols.len() != fixed.len() + 3 * nw {
        return Err("inconsistent wheel column count".into());
    }
    let mut knots = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != cols.len() {
            return Err(format!("line {}: expected {} cells, found {}", ln + 1, cols.len(), cells.len()));
        }
        let num = |i: usize| -> Result<f64, String> {
            cells[i].parse().map_err(|_| format!("line {}: bad number {:?}", ln + 1, cells[i]))
        };
        let state = BodyState::new(num(2)?, num(3)?, num(4)?, num(5)?, num(6)?, num(7)?);
        let control = BodyControl::new(num(8)?, num(9)?, num(10)?);
        let phase: u32 = cells[11]
            .parse()
            .map_err(|_| format!("line {}: bad phase {:?}", ln + 1, cells[11]))?;
        let mut knot = TrajectoryKnot::resting(state, nw);
        knot.control = control;
        knot.dt = num(1)?;
        knot.phase = phase;
        for w in 0..nw {
            knot.steer[w] = num(12 + w)?;
            knot.speed[w] = num(12 + nw + w)?;
            knot.flags[w] = cells[12 + 2 * nw + w]
                .parse()
                .map_err(|_| format!("line {}: bad direction {:?}", ln + 1, cells[12 + 2 * nw + w]))?;
        }
        knots.push(knot);
    }
    if knots.is_empty() {
        return Err("trajectory file has no knots".into());
    }
    trajectory::mark_keyframes(&mut knots);
    Ok(knots)
}

/// Instantaneous-center trace in spherical coordinates, one row per knot.
///
/// Turning knots map their center offset `r` to elevation `arctan|r|` and
/// azimuth `atan2(-r_y, -r_x)`; knots without usable rotation are flagged
/// singular at the equator, with the azimuth the sampling map would need
/// for their direction of travel.
pub fn icm_trace_csv(knots: &[TrajectoryKnot]) -> String {
    let mut out = String::from("knot,t,eps,psi,singular\n");
    let times = trajectory::knot_times(knots);
    for (i, (k, t)) in knots.iter().zip(&times).enumerate() {
        let st = k.state;
        let row = match icm_radius(&st) {
            Ok(icm) => {
                let (eps, psi) = icm.spherical();
                (eps, psi, 0)
            }
            Err(_) => {
                let r = rotation(st.theta);
                let vb = [r[0][0] * st.vx + r[1][0] * st.vy, r[0][1] * st.vx + r[1][1] * st.vy];
                let speed = vb[0].hypot(vb[1]);
                let psi = if speed > OMEGA_SINGULAR { vb[0].atan2(-vb[1]) } else { 0.0 };
                (std::f64::consts::FRAC_PI_2, psi, 1)
            }
        };
        let _ = writeln!(out, "{i},{},{},{},{}", fmt_float(*t), fmt_float(row.0), fmt_float(row.1), row.2);
    }
    out
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    std::fs::write(path, content).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    load_scenario(&text).map_err(Failure::parse)
}

struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    fn new() -> Report {
        Report { lines: Vec::new() }
    }
    fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }
    fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

fn push_constraint_report(report: &mut Report, rep: &optimizer::ConstraintReport) {
    for (name, value) in rep.families() {
        report.push(name, fmt_float(value));
    }
    report.push("objective", fmt_float(rep.objective));
    report.push("initial_objective", fmt_float(rep.initial_objective));
    report.push("first_order", fmt_float(rep.first_order));
    report.push("iterations", rep.iterations);
}

fn push_metrics(report: &mut Report, m: &evaluate::Metrics) {
    report.push("mean_position_error", fmt_float(m.mean_position_error));
    report.push("mean_heading_error", fmt_float(m.mean_heading_error));
    report.push("slide_literal_mean", fmt_float(m.slide_literal.mean));
    report.push("slide_literal_std", fmt_float(m.slide_literal.std));
    report.push("slide_lateral_mean", fmt_float(m.slide_lateral.mean));
    report.push("slide_lateral_std", fmt_float(m.slide_lateral.std));
    for (name, triple) in
        [("velocity", m.mean_velocity), ("accel", m.mean_accel), ("jerk", m.mean_jerk)]
    {
        report.push(&format!("mean_{name}_x"), fmt_float(triple[0]));
        report.push(&format!("mean_{name}_y"), fmt_float(triple[1]));
        report.push(&format!("mean_{name}_yaw"), fmt_float(triple[2]));
    }
}

fn rollout_csv(record: &evaluate::FollowRecord) -> String {
    let nw = record.ticks.first().map_or(0, |t| t.cmd_steer.len());
    let mut header = vec![
        "t".to_string(),
        "cmd_x".into(),
        "cmd_y".into(),
        "cmd_theta".into(),
        "ach_x".into(),
        "ach_y".into(),
        "ach_theta".into(),
        "ach_vx".into(),
        "ach_vy".into(),
        "ach_omega".into(),
    ];
    for i in 0..nw {
        header.push(format!("cmd_steer_{i}"));
        header.push(format!("ach_steer_{i}"));
        header.push(format!("cmd_speed_{i}"));
        header.push(format!("ach_speed_{i}"));
    }
    let mut out = header.join(",");
    out.push('\n');
    for tick in &record.ticks {
        let mut row = vec![
            fmt_float(tick.time),
            fmt_float(tick.commanded.x),
            fmt_float(tick.commanded.y),
            fmt_float(tick.commanded.theta),
            fmt_float(tick.achieved.x),
            fmt_float(tick.achieved.y),
            fmt_float(tick.achieved.theta),
            fmt_float(tick.achieved.vx),
            fmt_float(tick.achieved.vy),
            fmt_float(tick.achieved.omega),
        ];
        for i in 0..nw {
            row.push(fmt_float(tick.cmd_steer[i]));
            row.push(fmt_float(tick.ach_steer[i]));
            row.push(fmt_float(tick.cmd_speed[i]));
            row.push(fmt_float(tick.ach_speed[i]));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn pipeline(stage: Stage, args: &RunArgs) -> Result<(), Failure> {
    let scenario = load(&args.scenario)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::io(format!("{}: {e}", args.out.display())))?;
    let ext = match args.format {
        Format::Csv => "csv",
        Format::Tabular => "txt",
    };
    let render = |knots: &[TrajectoryKnot]| -> String {
        let (header, rows) = trajectory_table(knots);
        match args.format {
            Format::Csv => render_csv(&header, &rows),
            Format::Tabular => render_tabular(&header, &rows),
        }
    };

    let mut report = Report::new();
    report.push("command", stage.name());
    report.push("scenario", args.scenario.display());
    report.push("seed", args.seed);

    let t0 = Instant::now();
    let initial = match search::plan(&scenario) {
        Ok(initial) => initial,
        Err(e) => {
            report.push("success", false);
            write_file(&args.out.join("report.txt"), &report.render())?;
            return Err(Failure::new(EXIT_NO_PATH, "NoPath", e.to_string()));
        }
    };
    let search_s = t0.elapsed().as_secs_f64();
    write_file(&args.out.join("icm_trace.csv"), &icm_trace_csv(&initial.knots))?;

    if stage == Stage::Plan {
        write_file(&args.out.join(format!("trajectory.{ext}")), &render(&initial.knots))?;
        report.push("success", true);
        report.push("search_s", format!("{search_s:.6}"));
        report.push("search_knots", initial.knots.len());
        report.push("search_expanded", initial.nodes_expanded);
        report.push("search_total_time", fmt_float(initial.total_time));
        let text = report.render();
        write_file(&args.out.join("report.txt"), &text)?;
        print!("{text}");
        return Ok(());
    }

    write_file(&args.out.join(format!("initial.{ext}")), &render(&initial.knots))?;
    let defaults = OptimizeOptions::default();
    let opts = OptimizeOptions {
        max_iter: args.max_iter.unwrap_or(defaults.max_iter),
        feas_tol: args.feas_tol.unwrap_or(defaults.feas_tol),
        opt_tol: args.opt_tol.unwrap_or(defaults.opt_tol),
    };
    let t1 = Instant::now();
    let optimized = optimizer::optimize(&scenario, &initial.knots, &opts);
    let optimize_s = t1.elapsed().as_secs_f64();

    let finish = |report: &mut Report,
                      success: bool,
                      rep: Option<&optimizer::ConstraintReport>,
                      knots: Option<&[TrajectoryKnot]>|
     -> Result<(), Failure> {
        report.push("success", success);
        report.push("search_s", format!("{search_s:.6}"));
        report.push("optimize_s", format!("{optimize_s:.6}"));
        report.push("search_knots", initial.knots.len());
        report.push("search_expanded", initial.nodes_expanded);
        report.push("search_total_time", fmt_float(initial.total_time));
        if let Some(knots) = knots {
            report.push("optimized_knots", knots.len());
            write_file(&args.out.join(format!("trajectory.{ext}")), &render(knots))?;
        }
        if let Some(rep) = rep {
            push_constraint_report(report, rep);
        }
        Ok(())
    };

    let result = match optimized {
        Ok(result) => result,
        Err(OptimizeError::MaxIterations(best)) => {
            finish(&mut report, false, Some(&best.report), Some(&best.knots))?;
            let text = report.render();
            write_file(&args.out.join("report.txt"), &text)?;
            print!("{text}");
            return Err(Failure::new(
                EXIT_MAX_ITERATIONS,
                "MaxIterations",
                format!("budget {} exhausted, worst family {} at {:.3e}",
                    opts.max_iter, best.report.worst_family().0, best.report.worst_family().1),
            ));
        }
        Err(OptimizeError::Infeasible(rep)) => {
            finish(&mut report, false, Some(&rep), None)?;
            let text = report.render();
            write_file(&args.out.join("report.txt"), &text)?;
            print!("{text}");
            return Err(Failure::new(
                EXIT_INFEASIBLE,
                "Infeasible",
                format!("worst family {} at {:.3e}", rep.worst_family().0, rep.worst_family().1),
            ));
        }
        Err(OptimizeError::BadInitialGuess(msg)) => {
            finish(&mut report, false, None, None)?;
            let text = report.render();
            write_file(&args.out.join("report.txt"), &text)?;
            return Err(Failure::new(EXIT_INFEASIBLE, "Infeasible", msg));
        }
    };

    finish(&mut report, true, Some(&result.report), Some(&result.knots))?;

    if stage == Stage::Rollout {
        let t2 = Instant::now();
        let limits = ActuationLimits::from_layout(&scenario.layout);
        let record = evaluate::rollout(&result.knots, &scenario.layout, &limits, args.period);
        let metrics = evaluate::metrics(&record, &result.knots, &scenario.layout);
        let rollout_s = t2.elapsed().as_secs_f64();
        write_file(&args.out.join("rollout.csv"), &rollout_csv(&record))?;
        report.push("rollout_s", format!("{rollout_s:.6}"));
        report.push("rollout_ticks", record.ticks.len());
        report.push("rollout_period", fmt_float(record.period));
        push_metrics(&mut report, &metrics);
    }

    let text = report.render();
    write_file(&args.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn check(args: &CheckArgs) -> Result<(), Failure> {
    let scenario = load(&args.scenario)?;
    let text = std::fs::read_to_string(&args.trajectory)
        .map_err(|e| Failure::io(format!("{}: {e}", args.trajectory.display())))?;
    let knots = parse_trajectory_csv(&text).map_err(Failure::parse)?;
    let rep = optimizer::residual_report(&scenario, &knots);
    let mut report = Report::new();
    report.push("command", "check");
    report.push("trajectory", args.trajectory.display());
    report.push("knots", knots.len());
    for (name, value) in rep.families() {
        report.push(name, fmt_float(value));
    }
    let (worst, value) = rep.worst_family();
    report.push("worst_family", worst);
    report.push("max_violation", fmt_float(value.max(0.0)));
    let ok = rep.max_violation() <= args.feas_tol;
    report.push("success", ok);
    print!("{}", report.render());
    if ok {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_INFEASIBLE,
            "Infeasible",
            format!("worst family {worst} at {value:.3e}"),
        ))
    }
}
