//! Command-line front end. `run` parses arguments, dispatches, and maps
//! outcomes to exit codes: 0 success or order holds, 1 violation, 2 usage
//! or input error, 3 solver failure.

pub mod json;
pub mod suite;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::characterize::{self, InverseReport, MapSample};
use crate::duality::{self, verify_potential_property};
use crate::error::Error;
use crate::grid::{Grid, GridFunction};
use crate::measure::{w2_squared, Coupling, DiscreteMeasure};
use crate::order::{self, OrderSpec};
use crate::projection::{self, BarycentricOptions, Direction, LpOptions, ProjectionProblem, Support};
use crate::transforms;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Projections closer than this (in squared W2) to the vertex count as equal.
pub const EQUAL_TOL: f64 = 1e-8;

#[derive(Parser, Debug)]
#[command(name = "stochproj", version, about = "Wasserstein projections onto stochastic-order cones")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Project SOURCE onto the cone below (backward) or above (forward) VERTEX.
    Project(ProjectArgs),
    /// Decide whether A is dominated by B; exit 0 if so, 1 otherwise.
    CheckOrder(CheckOrderArgs),
    /// Solve primal and dual on one grid and report the gap.
    Gap(GapArgs),
    /// Apply a quadratic transform or envelope to a grid function.
    Transform(TransformArgs),
    /// Map checks on one or two projection results.
    Characterize(CharacterizeArgs),
    /// Displacement interpolation leaving the forward convex cone.
    DemoGeodesic(OutArgs),
    /// Random-instance invariant battery; CSV report.
    Suite(SuiteArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DirectionArg {
    Backward,
    Forward,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Backward => Direction::Backward,
            DirectionArg::Forward => Direction::Forward,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum OrderArg {
    Convex,
    Subharmonic,
    Trivial,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum MethodArg {
    Barycentric,
    Lp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransformOp {
    Legendre,
    Q2,
    Q2bar,
    Envelope,
    Q2e,
    Identities,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct AxisSpec {
    lo: f64,
    hi: f64,
    n: usize,
}

fn parse_axis(s: &str) -> Result<AxisSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected LO,HI,N, got '{s}'"));
    }
    let lo = parts[0].parse::<f64>().map_err(|e| format!("bad LO '{}': {e}", parts[0]))?;
    let hi = parts[1].parse::<f64>().map_err(|e| format!("bad HI '{}': {e}", parts[1]))?;
    let n = parts[2].parse::<usize>().map_err(|e| format!("bad N '{}': {e}", parts[2]))?;
    Ok(AxisSpec { lo, hi, n })
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Grid axis as LO,HI,N; repeat once per axis or give one to use on all.
    #[arg(long = "grid", value_name = "LO,HI,N", value_parser = parse_axis, allow_hyphen_values = true)]
    grid: Vec<AxisSpec>,
    /// Box scaling for the default forward grid when --grid is absent.
    #[arg(long, default_value_t = 1.5)]
    dilate: f64,
    /// Nodes per axis of the default forward grid [default: 101 in 1D, 21 in 2D].
    #[arg(long)]
    nodes: Option<usize>,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long, value_enum)]
    direction: DirectionArg,
    #[arg(long, value_enum, default_value = "convex")]
    order: OrderArg,
    #[command(flatten)]
    grid: GridArgs,
    /// Backward convex only: free barycenters (default without --grid) or a grid LP.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[command(flatten)]
    out: OutArgs,
    /// Also write the coupling as CSV triplets.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the assembled LP as sparse triplets.
    #[arg(long)]
    dump_lp: Option<PathBuf>,
    /// Exit 1 when the duality gap exceeds this.
    #[arg(long, default_value_t = 1e-6)]
    gap_tol: f64,
    /// Measure to project (μ backward, ν forward).
    source: PathBuf,
    /// Cone vertex (ν backward, μ forward).
    vertex: PathBuf,
}

#[derive(Args, Debug)]
struct CheckOrderArgs {
    #[arg(long, value_enum)]
    kind: OrderArg,
    /// Required for the subharmonic order.
    #[arg(long = "grid", value_name = "LO,HI,N", value_parser = parse_axis, allow_hyphen_values = true)]
    grid: Vec<AxisSpec>,
    #[command(flatten)]
    out: OutArgs,
    a: PathBuf,
    b: PathBuf,
}

#[derive(Args, Debug)]
struct GapArgs {
    #[arg(long, value_enum)]
    direction: DirectionArg,
    #[arg(long, value_enum, default_value = "convex")]
    order: OrderArg,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 1e-6)]
    gap_tol: f64,
    #[command(flatten)]
    out: OutArgs,
    source: PathBuf,
    vertex: PathBuf,
}

#[derive(Args, Debug)]
struct TransformArgs {
    #[arg(long, value_enum)]
    op: TransformOp,
    /// Evaluation grid (defaults to the input grid).
    #[arg(long = "eval-grid", value_name = "LO,HI,N", value_parser = parse_axis, allow_hyphen_values = true)]
    eval_grid: Vec<AxisSpec>,
    #[command(flatten)]
    out: OutArgs,
    function: PathBuf,
}

#[derive(Args, Debug)]
struct CharacterizeArgs {
    /// Matching radius for the inverse-relation check.
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    #[command(flatten)]
    out: OutArgs,
    result: PathBuf,
    second: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Instances per battery [default: 100 order pairs, 20 projections, 50 transforms].
    #[arg(long)]
    count: Option<usize>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: exit_code(&e), message: e.to_string() }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NumericalBreakdown(_)
        | Error::Solver(_)
        | Error::NotConverged { .. }
        | Error::TooLarge { .. }
        | Error::InvalidProgram(_)
        | Error::ConeEmpty => EXIT_SOLVER,
        Error::DimensionMismatch { .. }
        | Error::InvalidMeasure(_)
        | Error::InvalidGrid(_)
        | Error::OffGrid { .. }
        | Error::OnBoundary { .. }
        | Error::OutsideDomain { .. }
        | Error::Mismatch(_)
        | Error::Unsupported(_)
        | Error::Input(_) => EXIT_USAGE,
    }
}

type Outcome = Result<i32, Failure>;

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("STOCHPROJ_LOG", "error")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Project(a) => cmd_project(a),
        Command::CheckOrder(a) => cmd_check_order(a),
        Command::Gap(a) => cmd_gap(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Characterize(a) => cmd_characterize(a),
        Command::DemoGeodesic(a) => cmd_demo_geodesic(a),
        Command::Suite(a) => cmd_suite(a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), Failure> {
    emit(out, &json::to_stable_string(value)?)
}

fn build_grid(axes: &[AxisSpec], d: usize) -> Result<Grid, Failure> {
    let axes: Vec<AxisSpec> = match axes.len() {
        1 => vec![axes[0]; d],
        k if k == d => axes.to_vec(),
        k => return Err(Failure::usage(format!("--grid given {k} times for dimension {d}"))),
    };
    Ok(Grid::new(
        axes.iter().map(|a| a.lo).collect(),
        axes.iter().map(|a| a.hi).collect(),
        axes.iter().map(|a| a.n).collect(),
    )?)
}

fn positive(name: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{name} must be positive, got {v}")))
    }
}

fn check_dims(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<usize, Failure> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() }.into());
    }
    Ok(a.dim())
}

/// The explicit grid, or the default forward grid around both measures.
fn grid_or_default(g: &GridArgs, a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<Grid, Failure> {
    let d = check_dims(a, b)?;
    if !g.grid.is_empty() {
        return build_grid(&g.grid, d);
    }
    positive("--dilate", g.dilate)?;
    let n = g.nodes.unwrap_or(if d == 1 { 101 } else { 21 });
    Ok(projection::default_forward_grid(a, b, g.dilate, n)?)
}

fn require_grid(g: &GridArgs, d: usize, what: &str) -> Result<Grid, Failure> {
    if g.grid.is_empty() {
        return Err(Failure::usage(format!("{what} needs --grid")));
    }
    build_grid(&g.grid, d)
}

fn cmd_project(a: ProjectArgs) -> Outcome {
    positive("--gap-tol", a.gap_tol)?;
    let source: DiscreteMeasure = read_json(&a.source)?;
    let vertex: DiscreteMeasure = read_json(&a.vertex)?;
    let d = check_dims(&source, &vertex)?;
    let direction: Direction = a.direction.into();
    let (order, support) = match a.order {
        OrderArg::Trivial => (OrderSpec::Trivial, Support::Barycenters),
        OrderArg::Subharmonic => {
            let grid = require_grid(&a.grid, d, "the subharmonic order")?;
            (OrderSpec::Subharmonic { grid: grid.clone() }, Support::Grid(grid))
        }
        OrderArg::Convex => {
            let barycentric = match (direction, a.method) {
                (Direction::Forward, Some(MethodArg::Barycentric)) => {
                    return Err(Failure::usage("the barycentric method is backward only"));
                }
                (Direction::Backward, Some(m)) => m == MethodArg::Barycentric,
                (Direction::Backward, None) => a.grid.grid.is_empty(),
                (Direction::Forward, _) => false,
            };
            if barycentric {
                (OrderSpec::Convex, Support::Barycenters)
            } else {
                (OrderSpec::Convex, Support::Grid(grid_or_default(&a.grid, &source, &vertex)?))
            }
        }
    };
    let problem = ProjectionProblem { direction, order, source, vertex, support };
    let lp_opts = LpOptions { dump_path: a.dump_lp.clone(), ..LpOptions::default() };
    let result = projection::project_with(&problem, &lp_opts, &BarycentricOptions::default())?;
    log::info!("{} projection: cost {:e}, gap {:e}, {} iterations", result.method, result.cost, result.duality_gap, result.iterations);
    if let Some(p) = &a.csv {
        emit(Some(p), &result.coupling.to_csv())?;
    }
    emit_json(a.out.out.as_deref(), &result)?;
    let ok = result.certificate.holds && result.duality_gap.abs() <= a.gap_tol;
    Ok(if ok { EXIT_OK } else { EXIT_VIOLATION })
}

fn cmd_check_order(a: CheckOrderArgs) -> Outcome {
    let mu: DiscreteMeasure = read_json(&a.a)?;
    let nu: DiscreteMeasure = read_json(&a.b)?;
    let d = check_dims(&mu, &nu)?;
    let spec = match a.kind {
        OrderArg::Convex => OrderSpec::Convex,
        OrderArg::Trivial => OrderSpec::Trivial,
        OrderArg::Subharmonic => {
            if a.grid.is_empty() {
                return Err(Failure::usage("the subharmonic order needs --grid"));
            }
            OrderSpec::Subharmonic { grid: build_grid(&a.grid, d)? }
        }
    };
    let cert = order::check_order(&mu, &nu, &spec)?;
    emit_json(a.out.out.as_deref(), &cert)?;
    Ok(if cert.holds { EXIT_OK } else { EXIT_VIOLATION })
}

#[derive(Serialize)]
struct GapReport {
    primal: f64,
    dual: f64,
    gap: f64,
    #[serde(rename = "potentialPropertyResidual")]
    potential_property_residual: f64,
}

fn cmd_gap(a: GapArgs) -> Outcome {
    positive("--gap-tol", a.gap_tol)?;
    let source: DiscreteMeasure = read_json(&a.source)?;
    let vertex: DiscreteMeasure = read_json(&a.vertex)?;
    let d = check_dims(&source, &vertex)?;
    let direction: Direction = a.direction.into();
    let (order, grid) = match a.order {
        OrderArg::Trivial => return Err(Failure::usage("the trivial order has no dual")),
        OrderArg::Convex => (OrderSpec::Convex, grid_or_default(&a.grid, &source, &vertex)?),
        OrderArg::Subharmonic => {
            let g = require_grid(&a.grid, d, "the subharmonic order")?;
            (OrderSpec::Subharmonic { grid: g.clone() }, g)
        }
    };
    let problem = ProjectionProblem {
        direction,
        order: order.clone(),
        source: source.clone(),
        vertex: vertex.clone(),
        support: Support::Grid(grid.clone()),
    };
    let primal = projection::project(&problem)?;
    let dual = match direction {
        Direction::Backward => duality::solve_dual_backward(&source, &vertex, &order, &grid)?,
        Direction::Forward => duality::solve_dual_forward(&vertex, &source, &order, &grid)?,
    };
    let gap = duality::duality_gap(&primal, &dual)?;
    let pot = verify_potential_property(&dual, &primal.projection, &vertex);
    let report = GapReport { primal: primal.cost, dual: dual.dual_value, gap, potential_property_residual: pot.residual };
    emit_json(a.out.out.as_deref(), &report)?;
    Ok(if gap.abs() <= a.gap_tol { EXIT_OK } else { EXIT_VIOLATION })
}

fn cmd_transform(a: TransformArgs) -> Outcome {
    let f: GridFunction = read_json(&a.function)?;
    let eval = if a.eval_grid.is_empty() { f.grid.clone() } else { build_grid(&a.eval_grid, f.grid.dim())? };
    let out = a.out.out.as_deref();
    let g = match a.op {
        TransformOp::Legendre => transforms::legendre(&f, &eval)?,
        TransformOp::Q2 => transforms::q2(&f, &eval)?,
        TransformOp::Q2bar => transforms::q2bar(&f, &eval)?,
        TransformOp::Q2e => transforms::q2e(&f, &eval)?,
        TransformOp::Envelope => {
            if !a.eval_grid.is_empty() {
                return Err(Failure::usage("the envelope is computed on the input grid; drop --eval-grid"));
            }
            transforms::subharmonic_envelope(&f)?
        }
        TransformOp::Identities => {
            let r = transforms::identity_residuals(&f)?;
            emit_json(out, &r)?;
            let ok = r.involution <= 1e-12 && r.legendre_form <= 1e-12 && r.envelope_fixed_point <= 1e-9;
            return Ok(if ok { EXIT_OK } else { EXIT_VIOLATION });
        }
    };
    emit_json(out, &g)?;
    Ok(EXIT_OK)
}

/// The fields of a projection result that the map checks need.
#[derive(Deserialize)]
struct ResultInput {
    direction: Direction,
    source: DiscreteMeasure,
    vertex: DiscreteMeasure,
    projection: DiscreteMeasure,
    coupling: Coupling,
}

#[derive(Serialize)]
struct MapReport {
    direction: Direction,
    pairs: usize,
    excluded: usize,
    monotonicity_defect: f64,
    cyclically_monotone: bool,
    /// "contraction" for backward results, "expansion" for forward ones.
    map_kind: &'static str,
    map_defect: f64,
    w2_squared_to_vertex: f64,
    projection_equals_vertex: bool,
    passed: bool,
}

#[derive(Serialize)]
struct CharacterizeReport {
    results: Vec<MapReport>,
    inverse: Option<InverseReport>,
    passed: bool,
}

fn map_report(r: &ResultInput) -> Result<MapReport, Failure> {
    let (sample, map_kind) = match r.direction {
        Direction::Backward => (MapSample::from_barycenters(&r.coupling), "contraction"),
        Direction::Forward => (MapSample::from_coupling(&r.coupling.transpose(), characterize::DOMINANCE), "expansion"),
    };
    let monotonicity_defect = sample.cyclical_monotonicity_defect(4, 2000, 0);
    let cyclically_monotone = monotonicity_defect <= characterize::MONOTONE_TOL;
    let map_defect = match r.direction {
        Direction::Backward => sample.contraction_defect(),
        Direction::Forward => sample.expansion_defect(),
    };
    let w2 = w2_squared(&r.projection, &r.vertex)?.0;
    let equals = w2 <= EQUAL_TOL;
    // a projection equal to the vertex must come from a map of the right kind
    let passed = cyclically_monotone && (!equals || map_defect <= characterize::MONOTONE_TOL);
    Ok(MapReport {
        direction: r.direction,
        pairs: sample.len(),
        excluded: sample.excluded,
        monotonicity_defect,
        cyclically_monotone,
        map_kind,
        map_defect,
        w2_squared_to_vertex: w2,
        projection_equals_vertex: equals,
        passed,
    })
}

fn cmd_characterize(a: CharacterizeArgs) -> Outcome {
    positive("--h", a.h)?;
    let mut inputs: Vec<ResultInput> = vec![read_json(&a.result)?];
    if let Some(p) = &a.second {
        inputs.push(read_json(p)?);
    }
    let results = inputs.iter().map(map_report).collect::<Result<Vec<_>, _>>()?;
    let inverse = if inputs.len() == 2 {
        let (b, f) = match (inputs[0].direction, inputs[1].direction) {
            (Direction::Backward, Direction::Forward) => (&inputs[0], &inputs[1]),
            (Direction::Forward, Direction::Backward) => (&inputs[1], &inputs[0]),
            _ => return Err(Failure::usage("the inverse check needs one backward and one forward result")),
        };
        if b.source != f.vertex || b.vertex != f.source {
            return Err(Error::Mismatch("results belong to different instances".into()).into());
        }
        Some(characterize::inverse_relation_from_couplings(&b.coupling, &f.coupling, a.h))
    } else {
        None
    };
    let passed = results.iter().all(|r| r.passed) && inverse.as_ref().and_then(|i| i.passed) != Some(false);
    emit_json(a.out.out.as_deref(), &CharacterizeReport { results, inverse, passed })?;
    Ok(if passed { EXIT_OK } else { EXIT_VIOLATION })
}

fn cmd_demo_geodesic(a: OutArgs) -> Outcome {
    let report = projection::geodesic_demo()?;
    emit_json(a.out.as_deref(), &report)?;
    Ok(EXIT_OK)
}

fn cmd_suite(a: SuiteArgs) -> Outcome {
    let mut cfg = suite::SuiteConfig { seed: a.seed, ..suite::SuiteConfig::default() };
    if let Some(c) = a.count {
        cfg.order_pairs = c;
        cfg.projections = c;
        cfg.transforms = c;
    }
    let rows = suite::run_suite(&cfg)?;
    emit(a.out.as_deref(), &suite::to_csv(&rows))?;
    Ok(if rows.iter().all(|r| r.all_passed()) { EXIT_OK } else { EXIT_VIOLATION })
}
