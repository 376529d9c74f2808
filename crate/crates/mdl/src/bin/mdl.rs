//! Command-line front end. Every subcommand reads and writes the JSON and
//! CSV formats of the library; exit codes are 0 for a clean pass, 1 for a
//! failed check, 2 for usage or input errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mdl::alberti::MonotoneRep;
use mdl::blowup::{
    chart_map, composed_chart_map, factoring_check, sheet_fold_map, submersion_check, Blowup,
    FactorTarget, MapOracle, TreeTarget,
};
use mdl::fragment::{area_formula_check, fragment_length, metric_differential, Fragment};
use mdl::graph::GraphPoint;
use mdl::io::{cell_f64, cell_rat, read_json, write_json, Csv, FragmentDto, GraphDto, RepDto, SystemDto};
use mdl::limit::LimitSpace;
use mdl::lip::{distance_function, height_function, lip_scan, scale_radii};
use mdl::rational::{parse_rat, rat_int, rat_to_f64};
use num_traits::Zero;
use mdl::space::{EuclideanHost, NormKind};
use mdl::suite::{RunConfig, SuiteName, ToleranceBand};
use mdl::system::{GrowthRule, InverseSystem};
use mdl::{MdlError, Result};

#[derive(Parser)]
#[command(name = "mdl", version, about = "metric differentiation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and check inverse systems of metric graphs.
    System {
        #[command(subcommand)]
        command: SystemCmd,
    },
    /// Query the finite-depth approximation of the limit space.
    Limit {
        #[command(subcommand)]
        command: LimitCmd,
    },
    /// Curve fragment estimators.
    Frag {
        #[command(subcommand)]
        command: FragCmd,
    },
    /// Pointwise Lipschitz constant sweeps.
    Lip {
        #[command(subcommand)]
        command: LipCmd,
    },
    /// Line representations of the measure.
    Alberti {
        #[command(subcommand)]
        command: AlbertiCmd,
    },
    /// Finite-scale zooms and factoring checks.
    Blowup {
        #[command(subcommand)]
        command: BlowupCmd,
    },
    /// Run verification suites.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum SystemCmd {
    /// Generate a standard tower.
    Gen {
        #[arg(long)]
        m: u32,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        rule: String,
        /// Build the signed tent variant of the level maps.
        #[arg(long)]
        signed: bool,
        /// Accepted for interface stability; standard towers are
        /// deterministic, so the value is unused.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check every structural condition; exits 0 only if all pass.
    Validate { system: PathBuf },
}

#[derive(Subcommand)]
enum LimitCmd {
    /// Distance between two points with its approximation bound.
    Dist {
        system: PathBuf,
        /// Level of the approximation; defaults to the tower depth.
        #[arg(long)]
        depth: Option<usize>,
        /// Point as v<id> or e<edge>:<offset>, offsets rational in [0, 1].
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RhoArg {
    L1,
    L2,
    Linf,
}

impl RhoArg {
    fn kind(self) -> NormKind {
        match self {
            RhoArg::L1 => NormKind::L1,
            RhoArg::L2 => NormKind::L2,
            RhoArg::Linf => NormKind::Linf,
        }
    }
}

#[derive(Subcommand)]
enum FragCmd {
    /// Metric differential at a sample time, one row per probe scale.
    Md {
        fragment: PathBuf,
        #[arg(long, value_enum, default_value_t = RhoArg::L2)]
        rho: RhoArg,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 5)]
        scales: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Length under coarser and coarser subsampling.
    Len {
        fragment: PathBuf,
        #[arg(long, value_enum, default_value_t = RhoArg::L2)]
        rho: RhoArg,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Occupation versus speed integral over a net ladder.
    Area {
        fragment: PathBuf,
        #[arg(long, value_enum, default_value_t = RhoArg::L2)]
        rho: RhoArg,
        /// Comma-separated net widths, rational or decimal.
        #[arg(long, default_value = "1/16,1/64,1/256")]
        deltas: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LipCmd {
    /// Upper and lower pointwise constants over sampled points.
    Sweep {
        system: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
        /// Function to scan: "phi" or "dist:v<id>".
        #[arg(long, default_value = "phi")]
        f: String,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AlbertiCmd {
    /// Sample a monotone line representation.
    Gen {
        system: PathBuf,
        #[arg(long, default_value_t = 500)]
        lines: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Enumerate every monotone line exactly instead of sampling;
        /// `lines` becomes the enumeration cap.
        #[arg(long)]
        exact: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare cylinder occupations against edge masses.
    Verify {
        system: PathBuf,
        rep: PathBuf,
        /// Deepest level to audit.
        #[arg(long, default_value_t = 2)]
        level: usize,
        /// Largest tolerated absolute residual.
        #[arg(long, default_value_t = 0.02)]
        tol: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BlowupCmd {
    /// Zoom around a sampled generic point and audit the chart submersion.
    Run {
        system: PathBuf,
        #[arg(long, default_value_t = 1)]
        p_seed: u64,
        /// Zoom index n; the window lives at scale m^-n.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        /// Chart half-width in zoomed units.
        #[arg(long, default_value = "2")]
        window: String,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Factor a map through the chart; one row per zoom scale.
    Factor {
        system: PathBuf,
        /// "chart", "kink:<p/q>", or "fold".
        #[arg(long)]
        map: String,
        /// Tree target file for fold maps; a star is derived when absent.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        p_seed: u64,
        #[arg(long, default_value_t = 60)]
        lines: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Suite name or "all"; repeatable.
    #[arg(long = "suite", default_value = "all")]
    suites: Vec<String>,
    /// Run every suite regardless of --suite.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "fine")]
    tolerance: String,
    #[arg(short, long = "out-dir")]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("MDL_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("mdl: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::System { command } => run_system(command),
        Command::Limit { command } => run_limit(command),
        Command::Frag { command } => run_frag(command),
        Command::Lip { command } => run_lip(command),
        Command::Alberti { command } => run_alberti(command),
        Command::Blowup { command } => run_blowup(command),
        Command::Run(args) => run_suites(args),
    }
}

fn load_system(path: &Path, depth: Option<usize>) -> Result<InverseSystem> {
    let mut dto: SystemDto = read_json(path)?;
    if let Some(d) = depth {
        let have = dto.levels.len().saturating_sub(1);
        if d > have {
            return Err(MdlError::BadArgument(format!(
                "requested depth {d} exceeds the stored depth {have}"
            )));
        }
        dto.levels.truncate(d + 1);
        dto.projections.truncate(d);
        dto.phi.truncate(d + 1);
    }
    dto.to_system()
}

fn parse_point(system: &InverseSystem, spec: &str) -> Result<GraphPoint> {
    let bad = || MdlError::Parse(format!("point spec {spec:?}; expected v<id> or e<edge>:<offset>"));
    if let Some(v) = spec.strip_prefix('v') {
        return Ok(GraphPoint::Vertex(v.parse().map_err(|_| bad())?));
    }
    if let Some(rest) = spec.strip_prefix('e') {
        let (edge, offset) = rest.split_once(':').ok_or_else(bad)?;
        let edge: usize = edge.parse().map_err(|_| bad())?;
        let offset = parse_rat(offset)?;
        let length = system.level_graph(system.depth())?.edge(edge)?.length.clone();
        return Ok(GraphPoint::Interior { edge, offset: offset * length });
    }
    Err(bad())
}

fn emit_csv(csv: &Csv, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => csv.write(path),
        None => {
            print!("{}", csv.as_str());
            Ok(())
        }
    }
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn run_system(cmd: SystemCmd) -> Result<bool> {
    match cmd {
        SystemCmd::Gen { m, depth, rule, signed, seed: _, out } => {
            let rule: GrowthRule = rule.parse()?;
            let system = if signed {
                InverseSystem::generate_signed_tent(m, rule, depth)?
            } else {
                InverseSystem::generate(m, rule, depth)?
            };
            write_json(&out, &SystemDto::from_system(&system)?)?;
            Ok(true)
        }
        SystemCmd::Validate { system } => {
            let system = load_system(&system, None)?;
            let report = system.validate();
            for row in &report.rows {
                if row.passed {
                    println!("ok   {}", row.name);
                } else {
                    println!("FAIL {}: {}", row.name, row.detail);
                }
            }
            Ok(report.passed())
        }
    }
}

fn run_limit(cmd: LimitCmd) -> Result<bool> {
    match cmd {
        LimitCmd::Dist { system, depth, x, y, out } => {
            let system = load_system(&system, None)?;
            let level = depth.unwrap_or(system.depth());
            if level > system.depth() {
                return Err(MdlError::BadArgument(format!(
                    "depth {level} exceeds the tower depth {}",
                    system.depth()
                )));
            }
            let space = LimitSpace::new(system);
            let px = space.point(parse_point(space.system(), &x)?)?;
            let py = space.point(parse_point(space.system(), &y)?)?;
            let bracket = space.distance_bracket_at(&px, &py, level)?;
            emit_json(
                &serde_json::json!({
                    "estimate": rat_to_f64(bracket.estimate()),
                    "bound": rat_to_f64(&bracket.width()),
                }),
                out.as_deref(),
            )?;
            Ok(true)
        }
    }
}

fn host_metric_for(frag: &Fragment<Vec<f64>>, rho: RhoArg) -> Result<mdl::space::Pseudometric<'static, Vec<f64>>> {
    let dim = frag
        .points()
        .first()
        .map(Vec::len)
        .ok_or_else(|| MdlError::BadArgument("empty fragment".into()))?;
    Ok(EuclideanHost::new(dim, rho.kind()).metric())
}

fn run_frag(cmd: FragCmd) -> Result<bool> {
    match cmd {
        FragCmd::Md { fragment, rho, t, scales, out } => {
            let frag: Fragment<Vec<f64>> = read_json::<FragmentDto>(&fragment)?.to_fragment()?;
            let metric = host_metric_for(&frag, rho)?;
            let est = metric_differential(&frag, &metric, t, scales)?;
            let mut csv = Csv::new(&["scale", "estimate"]);
            for row in &est.scales {
                csv.row(&[cell_f64(row.h), cell_f64(row.sup_quotient)]);
            }
            emit_csv(&csv, out.as_deref())?;
            eprintln!(
                "md at t={t}: {} (exists: {}, oscillation {:.4})",
                est.value, est.exists, est.oscillation
            );
            Ok(est.exists)
        }
        FragCmd::Len { fragment, rho, out } => {
            let frag: Fragment<Vec<f64>> = read_json::<FragmentDto>(&fragment)?.to_fragment()?;
            let metric = host_metric_for(&frag, rho)?;
            let mut csv = Csv::new(&["scale", "estimate"]);
            for stride_pow in (0..5u32).rev() {
                let stride = 1usize << stride_pow;
                let sub = frag.subsample(stride)?;
                csv.row(&[
                    cell_f64(frag.grid_step() * stride as f64),
                    cell_f64(fragment_length(&sub, &metric)),
                ]);
            }
            emit_csv(&csv, out.as_deref())?;
            Ok(true)
        }
        FragCmd::Area { fragment, rho, deltas, out } => {
            let frag: Fragment<Vec<f64>> = read_json::<FragmentDto>(&fragment)?.to_fragment()?;
            let metric = host_metric_for(&frag, rho)?;
            let mut csv = Csv::new(&["scale", "estimate"]);
            for spec in deltas.split(',') {
                let delta = rat_to_f64(&parse_rat(spec)?);
                let check = area_formula_check(&frag, &metric, delta)?;
                csv.row(&[cell_f64(delta), cell_f64(check.gap())]);
            }
            emit_csv(&csv, out.as_deref())?;
            Ok(true)
        }
    }
}

fn run_lip(cmd: LipCmd) -> Result<bool> {
    match cmd {
        LipCmd::Sweep { system, depth, f, points, seed, out } => {
            let system = load_system(&system, depth)?;
            let space = LimitSpace::new(system);
            let func = match f.as_str() {
                "phi" => height_function(&space),
                spec => match spec.strip_prefix("dist:v") {
                    Some(v) => {
                        let v: usize = v
                            .parse()
                            .map_err(|_| MdlError::Parse(format!("function spec {spec:?}")))?;
                        distance_function(&space, &space.vertex_point(v)?)?
                    }
                    None => {
                        return Err(MdlError::Parse(format!(
                            "function spec {spec:?}; expected phi or dist:v<id>"
                        )))
                    }
                },
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<_> = (0..points)
                .map(|_| space.sample_point(&mut rng))
                .collect::<Result<_>>()?;
            let radii = scale_radii(&space, space.depth());
            let finest = cell_f64(rat_to_f64(radii.last().expect("positive depth")));
            use rayon::prelude::*;
            let estimates = xs
                .par_iter()
                .map(|x| lip_scan(&space, &func, x, &radii))
                .collect::<Result<Vec<_>>>()?;
            let mut csv = Csv::new(&["point_id", "phi_value", "Lip", "lip", "ratio", "finest_scale"]);
            for (id, (x, est)) in xs.iter().zip(&estimates).enumerate() {
                let ratio = if est.lower.is_zero() {
                    f64::INFINITY
                } else {
                    rat_to_f64(&(&est.upper / &est.lower))
                };
                csv.row(&[
                    id.to_string(),
                    cell_f64(rat_to_f64(&space.phi(x)?)),
                    cell_f64(rat_to_f64(&est.upper)),
                    cell_f64(rat_to_f64(&est.lower)),
                    cell_f64(ratio),
                    finest.clone(),
                ]);
            }
            emit_csv(&csv, out.as_deref())?;
            Ok(true)
        }
    }
}

fn run_alberti(cmd: AlbertiCmd) -> Result<bool> {
    match cmd {
        AlbertiCmd::Gen { system, lines, seed, exact, out } => {
            let system = load_system(&system, None)?;
            let rep = if exact {
                MonotoneRep::exact(&system, lines)?
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                MonotoneRep::sampled(&system, lines, &mut rng)?
            };
            write_json(&out, &RepDto::from_rep(&rep))?;
            Ok(true)
        }
        AlbertiCmd::Verify { system, rep, level, tol, out } => {
            let system = load_system(&system, None)?;
            let rep = read_json::<RepDto>(&rep)?.to_rep(&system)?;
            let mut csv = Csv::new(&["level", "edge", "target", "estimate", "residual"]);
            let mut worst = 0.0f64;
            for l in 0..=level.min(system.depth()) {
                let g = system.level_graph(l)?;
                for e in 0..g.edge_count() {
                    let occ = rep.cylinder_occupation(&system, l, e)?;
                    let mass = &g.edge(e)?.mass;
                    let residual = rat_to_f64(&(&occ - mass)).abs();
                    worst = worst.max(residual);
                    csv.row(&[
                        l.to_string(),
                        e.to_string(),
                        cell_rat(mass),
                        cell_f64(rat_to_f64(&occ)),
                        cell_f64(residual),
                    ]);
                }
            }
            emit_csv(&csv, out.as_deref())?;
            eprintln!("worst cylinder residual {worst:.6} against tolerance {tol}");
            Ok(worst <= tol)
        }
    }
}

fn run_blowup(cmd: BlowupCmd) -> Result<bool> {
    match cmd {
        BlowupCmd::Run { system, p_seed, scale, window, depth, samples, out } => {
            let system = load_system(&system, depth)?;
            let space = LimitSpace::new(system);
            let mut rng = ChaCha8Rng::seed_from_u64(p_seed);
            let p = space.generic_point(&mut rng, space.depth() + 2)?;
            let bu = Blowup::new(&space, p, scale, parse_rat(&window)?)?;
            let report = submersion_check(&bu, samples, &mut rng)?;
            emit_json(
                &serde_json::json!({
                    "phi_p": rat_to_f64(&space.phi(bu.basepoint())?),
                    "scale_index": bu.scale_index(),
                    "scale": rat_to_f64(bu.scale()),
                    "window": rat_to_f64(bu.window()),
                    "sigma": bu.sigma(),
                    "submersion": {
                        "samples": report.rows.len(),
                        "median_defect": report.median_bracket_defect(),
                        "max_defect": report.max_bracket_defect(),
                        "bound": rat_to_f64(&bu.slack_hat()),
                        "lipschitz_violations": report.lipschitz_violations,
                    },
                }),
                out.as_deref(),
            )?;
            Ok(report.lipschitz_violations == 0)
        }
        BlowupCmd::Factor { system, map, target, p_seed, lines, seed, out } => {
            let system = load_system(&system, None)?;
            let space = LimitSpace::new(system);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (factor_target, oracle): (FactorTarget, MapOracle<'_>) = match map.as_str() {
                "chart" => (FactorTarget::Line, chart_map(&space)),
                "fold" => {
                    let (derived, oracle) = sheet_fold_map(&space)?;
                    let tree = match &target {
                        Some(path) => TreeTarget::new(read_json::<GraphDto>(path)?.to_graph()?)?,
                        None => derived,
                    };
                    (FactorTarget::Tree(tree), oracle)
                }
                spec => match spec.strip_prefix("kink:") {
                    Some(at) => {
                        let kink = parse_rat(at)?;
                        let oracle = composed_chart_map(&space, format!("kink at {at}"), move |t| {
                            let bent = t - &kink;
                            if bent > rat_int(0) {
                                t / rat_int(2) + bent / rat_int(2)
                            } else {
                                t / rat_int(2)
                            }
                        });
                        (FactorTarget::Line, oracle)
                    }
                    None => {
                        return Err(MdlError::Parse(format!(
                            "map spec {spec:?}; expected chart, kink:<p/q>, or fold"
                        )))
                    }
                },
            };
            let mut point_rng = ChaCha8Rng::seed_from_u64(p_seed);
            let rep = MonotoneRep::sampled(space.system(), lines, &mut rng)?;
            let mut csv = Csv::new(&["scale", "median_defect", "max_defect"]);
            let mut bounded = true;
            for n in 0..space.depth().min(4) {
                let p = space.generic_point(&mut point_rng, space.depth() + 2)?;
                let bu = Blowup::new(&space, p, n, rat_int(1))?;
                let report = factoring_check(&bu, &factor_target, &oracle, &rep, 8, &mut rng)?;
                let mut defects = report.fiber_defects.clone();
                defects.sort_by(f64::total_cmp);
                let median = defects.get(defects.len() / 2).copied().unwrap_or(0.0);
                csv.row(&[
                    cell_f64(rat_to_f64(bu.scale())),
                    cell_f64(median),
                    cell_f64(report.max_fiber_defect),
                ]);
                bounded &= report.bigon_bounded;
            }
            emit_csv(&csv, out.as_deref())?;
            if !bounded {
                eprintln!("parallel branches fail to reconverge; factoring hypotheses do not hold");
            }
            Ok(bounded)
        }
    }
}

fn run_suites(args: RunArgs) -> Result<bool> {
    let mut config = RunConfig::new(args.depth, args.seed)?;
    config.band = args.tolerance.parse::<ToleranceBand>()?;
    config.out_dir = args.out_dir;
    let mut suites = Vec::new();
    if args.all {
        suites.extend(SuiteName::ALL);
    } else {
        for spec in &args.suites {
            if spec == "all" {
                suites.extend(SuiteName::ALL);
            } else {
                suites.push(spec.parse()?);
            }
        }
    }
    suites.dedup();
    config.suites = suites;
    let summary = mdl::suite::run(&config)?;
    print!("{}", summary.render());
    Ok(summary.passed())
}
