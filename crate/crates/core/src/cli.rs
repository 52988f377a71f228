//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{self, hull_summary, DensitySpec, DiscreteMeasure, MeasureFormat};
use crate::network::Network;
use crate::perturb::{self, CompetitorSpec};
use crate::plot::{self, Arrow, PlotOptions};
use crate::projection::{self, ProjectionOptions};
use crate::solver::{self, InitStrategy, Mode, SolutionJson, SolverConfig};
use crate::verify::{self, CheckOptions};

#[derive(Debug, Parser)]
#[command(name = "adpnet", version, about = "Average distance networks under a length budget", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the descent and write solution, trace and diagnostics.
    Solve(SolveArgs),
    /// Solve over increasing budgets, warm-started.
    Sweep(SweepArgs),
    /// Diagnostics for a network or a solution file.
    Verify(VerifyArgs),
    /// Projection table and barycentre field of a network.
    Project(ProjectArgs),
    /// Competitor bounds at a vertex.
    Bounds(BoundsArgs),
    /// Render a solution as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    PrincipalSegment,
    MstOfCenters,
    Point,
}

#[derive(Debug, Args)]
struct MeasureArgs {
    /// Point cloud (CSV or JSON).
    #[arg(long)]
    measure: Option<PathBuf>,
    /// Coordinate count for CSV input.
    #[arg(long)]
    dim: Option<usize>,
    /// Sampled density when no file is given: unit_square, unit_disk,
    /// unit_segment, or a JSON density spec.
    #[arg(long, default_value = "unit_square")]
    density: String,
    /// Sample size for --density.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Seed for --density.
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "hard")]
    mode: ModeArg,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "principal-segment")]
    init: InitArg,
    #[arg(long)]
    init_length: Option<f64>,
    #[arg(long)]
    prune_mass_tol: Option<f64>,
    #[arg(long)]
    atom_insert_threshold: Option<f64>,
    #[arg(long)]
    min_edge: Option<f64>,
    #[arg(long)]
    every: Option<usize>,
    /// Flat `key = value` file merged under the command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    measure: MeasureArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Initial network JSON.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Exit with status 2 when the diagnostics report failures.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    measure: MeasureArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    lengths: Vec<f64>,
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    measure: MeasureArgs,
    /// Network JSON or solution.json.
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Skip the finite-difference check.
    #[arg(long)]
    no_fd: bool,
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[command(flatten)]
    measure: MeasureArgs,
    #[arg(long)]
    network: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    measure: MeasureArgs,
    #[arg(long)]
    network: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    center_vertex: usize,
    /// Budget `l` setting the cross size; the network length by default.
    #[arg(long)]
    length: Option<f64>,
    /// Radius of the set around the centre; `0.1 M` by default.
    #[arg(long)]
    radius: Option<f64>,
    /// Include per-point arrays.
    #[arg(long)]
    per_point: bool,
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Solution or network JSON.
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    measure: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value = "plot.svg")]
    out: PathBuf,
    #[arg(long, default_value_t = 800)]
    width: u32,
    #[arg(long, default_value_t = 800)]
    height: u32,
    #[arg(long, default_value_t = 2000)]
    max_points: usize,
    #[arg(long, default_value_t = 1.0)]
    arrow_scale: f64,
    /// Axis dropped for d = 3 (x, y, z or an index).
    #[arg(long)]
    project_axis: Option<String>,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Outcome {
    Ok,
    Failed,
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_threads();
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::Failed) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("ADPNET_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Inserts the `key = value` pairs of a `--config` file as flags right
/// after the subcommand, so that later command-line flags override them.
fn merge_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if let Some(v) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
        } else if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut extra = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: format!("expected key = value, found `{line}`"),
        })?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        let value = value.trim();
        match value {
            "true" => extra.push(OsString::from(flag)),
            "false" => {}
            _ => {
                extra.push(OsString::from(flag));
                extra.push(OsString::from(value));
            }
        }
    }
    let at = 2.min(args.len());
    args.splice(at..at, extra);
    Ok(args)
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Solve(a) => cmd_solve(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Project(a) => cmd_project(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn load_measure_args(a: &MeasureArgs) -> Result<DiscreteMeasure> {
    match &a.measure {
        Some(path) => measure::load_measure(path, MeasureFormat::from_path(path), a.dim),
        None => {
            let spec = match a.density.as_str() {
                "unit_square" => DensitySpec::unit_square(),
                "unit_disk" => DensitySpec::UniformDisk {
                    center: vec![0.0, 0.0],
                    radius: 1.0,
                },
                "unit_segment" => DensitySpec::Segment {
                    a: vec![0.0, 0.0],
                    b: vec![1.0, 0.0],
                },
                s if s.trim_start().starts_with('{') => serde_json::from_str(s)?,
                s => return Err(Error::validation(format!("unknown density `{s}`"))),
            };
            measure::sample_density(&spec, a.n, a.sample_seed)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_network(path: &Path) -> Result<Network> {
    load_solution_or_network(path).map(|(net, _)| net)
}

/// Reads either a solution file or a bare network.
fn load_solution_or_network(path: &Path) -> Result<(Network, Option<SolutionJson>)> {
    let text = read_text(path)?;
    if let Ok(sol) = serde_json::from_str::<SolutionJson>(&text) {
        return Ok((Network::from_json(&sol.network)?, Some(sol)));
    }
    Ok((Network::parse_json(&text)?, None))
}

fn solver_config(a: &SolverArgs) -> Result<SolverConfig> {
    let mut cfg = match a.mode {
        ModeArg::Hard => {
            let l = a
                .length
                .ok_or_else(|| Error::validation("hard mode needs --length"))?;
            SolverConfig::hard(a.p, l)
        }
        ModeArg::Soft => {
            let lambda = a
                .lambda
                .ok_or_else(|| Error::validation("soft mode needs --lambda"))?;
            SolverConfig::soft(a.p, lambda)
        }
    };
    if let Some(l) = a.length {
        cfg.budget = l;
    }
    if let Some(lambda) = a.lambda {
        cfg.lambda = lambda;
    }
    cfg.h = a.h;
    cfg.bandwidth = a.bandwidth;
    if let Some(s) = a.step {
        cfg.step = s;
    }
    if let Some(n) = a.max_iters {
        cfg.max_iters = n;
    }
    if let Some(g) = a.grad_tol {
        cfg.grad_tol = g;
    }
    cfg.seed = a.seed;
    cfg.init = match a.init {
        InitArg::PrincipalSegment => InitStrategy::PrincipalSegment,
        InitArg::MstOfCenters => InitStrategy::MstOfCenters,
        InitArg::Point => InitStrategy::Point,
    };
    cfg.init_length = a.init_length;
    if let Some(t) = a.prune_mass_tol {
        cfg.topology.prune_mass_tol = t;
    }
    cfg.topology.atom_insert_threshold = a.atom_insert_threshold;
    cfg.topology.min_edge = a.min_edge;
    if let Some(e) = a.every {
        cfg.topology.every = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, &s)
}

fn default_h(measure: &DiscreteMeasure, h: Option<f64>) -> f64 {
    h.unwrap_or_else(|| {
        let m = hull_summary(measure).diameter;
        0.02 * if m > 0.0 { m } else { 1.0 }
    })
}

fn cmd_solve(a: SolveArgs) -> Result<Outcome> {
    let measure = load_measure_args(&a.measure)?;
    let cfg = solver_config(&a.solver)?;
    let init = a.network.as_deref().map(load_network).transpose()?;
    let result = solver::solve(&measure, &cfg, init.as_ref())?;
    let report = verify::check_minimizer(&measure, &result, &cfg)?;
    write_json(&a.out.join("solution.json"), &result.to_json())?;
    write_atomic(&a.out.join("trace.csv"), &result.trace_csv())?;
    write_json(&a.out.join("diagnostics.json"), &report)?;
    println!("{}", report.summary());
    let mut failed = !report.failures().is_empty();
    if cfg.mode == Mode::Soft {
        let soft = verify::check_soft(&measure, &result.network, cfg.lambda, cfg.p, cfg.grad_tol, result.h)?;
        write_json(&a.out.join("soft.json"), &soft)?;
        println!(
            "soft: nontrivial field {}  scaling quotient {:.3e} ({})",
            soft.nontrivial_field,
            soft.scaling_quotient,
            if soft.scaling_pass { "pass" } else { "FAIL" }
        );
        failed |= soft.applicable && !(soft.nontrivial_field && soft.scaling_pass);
    }
    if !result.converged {
        log::warn!("{}", result.diagnostic.as_deref().unwrap_or("not converged"));
    }
    Ok(if a.strict && failed { Outcome::Failed } else { Outcome::Ok })
}

fn cmd_sweep(a: SweepArgs) -> Result<Outcome> {
    let measure = load_measure_args(&a.measure)?;
    let mut solver_args = a.solver;
    if solver_args.length.is_none() {
        solver_args.length = a.lengths.first().copied();
    }
    let cfg = solver_config(&solver_args)?;
    let res = solver::sweep(&measure, &a.lengths, &cfg)?;
    let csv = res.to_csv();
    write_atomic(&a.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    let increasing = res.quotients.iter().any(|&q| q > 1e-6);
    Ok(if a.strict && increasing { Outcome::Failed } else { Outcome::Ok })
}

fn cmd_verify(a: VerifyArgs) -> Result<Outcome> {
    let measure = load_measure_args(&a.measure)?;
    let (net, sol) = load_solution_or_network(&a.network)?;
    let cfg = sol.as_ref().map(|s| &s.config);
    let p = a.p.or(cfg.map(|c| c.p)).unwrap_or(2.0);
    let h = a.h.or(sol.as_ref().map(|s| s.h)).unwrap_or_else(|| default_h(&measure, None));
    let budget = a
        .length
        .or(cfg.filter(|c| c.mode == Mode::Hard).map(|c| c.budget));
    let opts = CheckOptions {
        p,
        budget,
        h,
        bandwidth: a.bandwidth.or(cfg.and_then(|c| c.bandwidth)).unwrap_or(h),
        run_fd: !a.no_fd,
    };
    let report = verify::check_network(&measure, &net, &opts)?;
    write_json(&a.out.join("diagnostics.json"), &report)?;
    println!("{}", report.summary());
    let mut failed = !report.failures().is_empty();
    let lambda = a
        .lambda
        .or(cfg.filter(|c| c.mode == Mode::Soft).map(|c| c.lambda));
    if let Some(lambda) = lambda {
        let grad_tol = a.grad_tol.or(cfg.map(|c| c.grad_tol)).unwrap_or(1e-7);
        let soft = verify::check_soft(&measure, &net, lambda, p, grad_tol, h)?;
        write_json(&a.out.join("soft.json"), &soft)?;
        failed |= soft.applicable && !(soft.nontrivial_field && soft.scaling_pass);
    }
    Ok(if a.strict && failed { Outcome::Failed } else { Outcome::Ok })
}

fn cmd_project(a: ProjectArgs) -> Result<Outcome> {
    let measure = load_measure_args(&a.measure)?;
    let net = load_network(&a.network)?;
    let h = default_h(&measure, a.h);
    let opts = ProjectionOptions::with_scale(hull_summary(&measure).diameter);
    let snap = solver::field_snapshot(&measure, &net, a.p, h, &opts)?;
    write_atomic(&a.out.join("projection.csv"), &snap.table.to_csv())?;
    write_atomic(&a.out.join("barycentre.csv"), &snap.field.to_csv(&snap.sampled))?;
    println!(
        "J_p = {:e}  ambiguous mass = {:e}",
        crate::functional::j_p(&measure, &snap.table, a.p)?,
        projection::ambiguous_mass(&snap.table, &measure)
    );
    Ok(Outcome::Ok)
}

fn cmd_bounds(a: BoundsArgs) -> Result<Outcome> {
    let measure = load_measure_args(&a.measure)?;
    let net = load_network(&a.network)?;
    if a.center_vertex >= net.num_vertices() {
        return Err(Error::validation(format!(
            "vertex {} out of range ({} vertices)",
            a.center_vertex,
            net.num_vertices()
        )));
    }
    let m = hull_summary(&measure).diameter;
    let budget = a.length.unwrap_or_else(|| net.total_length());
    let spec = CompetitorSpec::new(net.vertex(a.center_vertex).to_vec(), a.eps, budget)?;
    let opts = ProjectionOptions::with_scale(m);
    let table = projection::project(&measure, &net, &opts)?;
    let radius = a.radius.unwrap_or(0.1 * m);
    let report = perturb::bound_check(&measure, &net, &table, &spec, a.p, radius)?;
    let report = if a.per_point { report } else { report.summary() };
    write_json(&a.out.join("bounds.json"), &report)?;
    println!(
        "violations = {}  min slack = {:e}  aggregate {:e} >= {:e}: {}",
        report.violations, report.min_slack, report.aggregate_lhs, report.aggregate_rhs, report.aggregate_holds
    );
    let failed = report.violations > 0 || !report.aggregate_holds;
    Ok(if a.strict && failed { Outcome::Failed } else { Outcome::Ok })
}

fn cmd_plot(a: PlotArgs) -> Result<Outcome> {
    let (net, sol) = load_solution_or_network(&a.solution)?;
    let measure = a
        .measure
        .as_deref()
        .map(|path| measure::load_measure(path, MeasureFormat::from_path(path), a.dim))
        .transpose()?;
    let opts = PlotOptions {
        width: a.width,
        height: a.height,
        max_points: a.max_points,
        arrow_scale: a.arrow_scale,
        project_axis: a.project_axis.as_deref().map(plot::parse_axis).transpose()?,
    };
    let mut arrows = Vec::new();
    if let Some(m) = &measure {
        if net.total_length() > 0.0 && m.dim() == net.dim() {
            let p = sol.as_ref().map_or(a.p, |s| s.config.p);
            let h = a.h.or(sol.as_ref().map(|s| s.h)).unwrap_or_else(|| default_h(m, None));
            let popts = ProjectionOptions::with_scale(hull_summary(m).diameter);
            let snap = solver::field_snapshot(m, &net, p, h, &popts)?;
            for (i, node) in snap.sampled.nodes().iter().enumerate() {
                arrows.push(Arrow {
                    base: node.pos.clone(),
                    vector: snap.field.at(i).to_vec(),
                });
            }
        }
    }
    let svg = plot::render_svg(measure.as_ref(), &net, &arrows, &opts)?;
    write_atomic(&a.out, &svg)?;
    Ok(Outcome::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(["adpnet", "--help"]), 0);
        assert_eq!(run(["adpnet", "--version"]), 0);
    }

    #[test]
    fn unknown_flag_exits_one() {
        assert_eq!(run(["adpnet", "solve", "--bogus"]), 1);
        assert_eq!(run(["adpnet"]), 1);
    }

    #[test]
    fn hard_mode_needs_length() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["adpnet", "solve", "--n", "50", "--out", out]), 1);
    }

    #[test]
    fn config_merged_before_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\np = 3\nmax_iters = 5\nstrict = true\n").unwrap();
        let merged = merge_config(os(&["adpnet", "solve", "--config", path.to_str().unwrap(), "--p", "2"])).unwrap();
        let cli = Cli::try_parse_from(merged).unwrap();
        let Command::Solve(a) = cli.command else { panic!() };
        assert_eq!(a.solver.p, 2.0);
        assert_eq!(a.solver.max_iters, Some(5));
        assert!(a.strict);
    }

    #[test]
    fn bad_config_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "nonsense\n").unwrap();
        assert!(merge_config(os(&["adpnet", "solve", "--config", path.to_str().unwrap()])).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.txt");
        write_atomic(&path, "one").unwrap();
        write_atomic(&path, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
