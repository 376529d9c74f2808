//! Named verification suites. Each suite exercises one slice of the
//! library against its quantitative contract, returns a pass/fail outcome
//! with detail lines, and emits CSV artifacts. Runs are deterministic:
//! every suite draws from its own fixed stream of the run seed, parallel
//! loops collect in index order, and artifacts never contain timings.

use std::path::PathBuf;
use std::time::Instant;

use num_traits::{One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::alberti::{fubini_rep, monotone_rep, rep_speed_band, MonotoneRep};
use crate::blowup::{
    blow_up_rep, chart_map, composed_chart_map, factoring_check, sheet_fold_map,
    submersion_check, variation_check, Blowup, FactorTarget,
};
use crate::error::{MdlError, Result};
use crate::fragment::{area_formula_check, metric_differential, Domain, Fragment};
use crate::io::{cell_f64, cell_rat, Csv};
use crate::limit::LimitSpace;
use crate::lip::{distance_function, height_function, lip_scan, scale_radii, RealFunction};
use crate::rational::{rat, rat_from_f64, rat_int, rat_to_f64, Rat};
use crate::seminorm::{
    chart_seminorm_bundle, direction_grid, euclidean_seminorm_bundle, GeodesicBundle,
    SeminormBundle,
};
use crate::space::{EuclideanHost, NormKind};
use crate::system::{GrowthRule, InverseSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteName {
    Axioms,
    Md,
    Area,
    LipLip,
    Seminorms,
    Alberti,
    Blowup,
    Variation,
    Factoring,
}

impl SuiteName {
    pub const ALL: [SuiteName; 9] = [
        SuiteName::Axioms,
        SuiteName::Md,
        SuiteName::Area,
        SuiteName::LipLip,
        SuiteName::Seminorms,
        SuiteName::Alberti,
        SuiteName::Blowup,
        SuiteName::Variation,
        SuiteName::Factoring,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteName::Axioms => "axioms",
            SuiteName::Md => "md",
            SuiteName::Area => "area",
            SuiteName::LipLip => "liplip",
            SuiteName::Seminorms => "seminorms",
            SuiteName::Alberti => "alberti",
            SuiteName::Blowup => "blowup",
            SuiteName::Variation => "variation",
            SuiteName::Factoring => "factoring",
        }
    }

    /// Stable stream id for the suite's random substream, independent of
    /// which suites a run selects.
    fn stream(self) -> u64 {
        Self::ALL.iter().position(|&s| s == self).expect("listed") as u64
    }
}

impl std::str::FromStr for SuiteName {
    type Err = MdlError;

    fn from_str(s: &str) -> Result<SuiteName> {
        match s.to_ascii_lowercase().as_str() {
            "axioms" => Ok(SuiteName::Axioms),
            "md" | "md-convergence" => Ok(SuiteName::Md),
            "area" => Ok(SuiteName::Area),
            "liplip" => Ok(SuiteName::LipLip),
            "seminorms" => Ok(SuiteName::Seminorms),
            "alberti" => Ok(SuiteName::Alberti),
            "blowup" => Ok(SuiteName::Blowup),
            "variation" => Ok(SuiteName::Variation),
            "factoring" => Ok(SuiteName::Factoring),
            other => Err(MdlError::Parse(format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToleranceBand {
    /// Reduced budgets for smoke runs.
    Coarse,
    /// Full acceptance budgets.
    Fine,
}

impl std::str::FromStr for ToleranceBand {
    type Err = MdlError;

    fn from_str(s: &str) -> Result<ToleranceBand> {
        match s.to_ascii_lowercase().as_str() {
            "coarse" => Ok(ToleranceBand::Coarse),
            "fine" => Ok(ToleranceBand::Fine),
            other => Err(MdlError::Parse(format!("unknown tolerance band {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub depth: usize,
    pub seed: u64,
    pub band: ToleranceBand,
    pub suites: Vec<SuiteName>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(depth: usize, seed: u64) -> Result<RunConfig> {
        if depth < 3 {
            return Err(MdlError::BadArgument(
                "runs need depth at least 3 for the zoom ladders".into(),
            ));
        }
        Ok(RunConfig {
            depth,
            seed,
            band: ToleranceBand::Fine,
            suites: SuiteName::ALL.to_vec(),
            out_dir: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub suite: SuiteName,
    pub passed: bool,
    pub lines: Vec<String>,
    pub artifacts: Vec<(String, String)>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub outcomes: Vec<SuiteOutcome>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    /// Deterministic text form: no timings, no paths.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            let mark = if o.passed { " ok " } else { "FAIL" };
            out.push_str(&format!("[{mark}] {}\n", o.suite.name()));
            for line in &o.lines {
                out.push_str("       ");
                out.push_str(line);
                out.push('\n');
            }
        }
        let good = self.outcomes.iter().filter(|o| o.passed).count();
        out.push_str(&format!("{good}/{} suites passed\n", self.outcomes.len()));
        out
    }

    pub fn outcome(&self, suite: SuiteName) -> Option<&SuiteOutcome> {
        self.outcomes.iter().find(|o| o.suite == suite)
    }
}

/// Accumulates labelled assertions for one suite.
struct Checks {
    rows: Vec<(bool, String)>,
}

impl Checks {
    fn new() -> Checks {
        Checks { rows: Vec::new() }
    }

    fn claim(&mut self, ok: bool, label: impl Into<String>) {
        self.rows.push((ok, label.into()));
    }

    fn passed(&self) -> bool {
        self.rows.iter().all(|(ok, _)| *ok)
    }

    fn lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|(ok, label)| format!("{} {label}", if *ok { "ok  " } else { "FAIL" }))
            .collect()
    }
}

fn suite_rng(seed: u64, suite: SuiteName) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(suite.stream());
    rng
}

fn sorted(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values
}

fn median_f64(values: &[f64]) -> f64 {
    let v = sorted(values.to_vec());
    if v.is_empty() {
        return 0.0;
    }
    v[v.len() / 2]
}

fn median_rat(values: &[Rat]) -> Rat {
    let mut v = values.to_vec();
    v.sort();
    v[v.len() / 2].clone()
}

/// Runs the selected suites in declaration order and writes artifacts plus
/// a summary file when an output directory is set. Honors MDL_THREADS.
pub fn run(config: &RunConfig) -> Result<Summary> {
    let threads = std::env::var("MDL_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| MdlError::BadArgument(format!("thread pool: {e}")))?;
    let summary = pool.install(|| run_inner(config))?;
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
        for outcome in &summary.outcomes {
            for (name, contents) in &outcome.artifacts {
                std::fs::write(dir.join(name), contents)?;
            }
        }
        std::fs::write(dir.join("summary.txt"), summary.render())?;
    }
    Ok(summary)
}

fn run_inner(config: &RunConfig) -> Result<Summary> {
    let mut outcomes = Vec::with_capacity(config.suites.len());
    for &suite in &config.suites {
        let start = Instant::now();
        let mut outcome = match suite {
            SuiteName::Axioms => run_axioms(config)?,
            SuiteName::Md => run_md(config)?,
            SuiteName::Area => run_area(config)?,
            SuiteName::LipLip => run_liplip(config)?,
            SuiteName::Seminorms => run_seminorms(config)?,
            SuiteName::Alberti => run_alberti(config)?,
            SuiteName::Blowup => run_blowup(config)?,
            SuiteName::Variation => run_variation(config)?,
            SuiteName::Factoring => run_factoring(config)?,
        };
        outcome.seconds = start.elapsed().as_secs_f64();
        outcomes.push(outcome);
    }
    Ok(Summary { outcomes })
}

fn laakso(depth: usize) -> Result<LimitSpace> {
    Ok(LimitSpace::new(InverseSystem::generate(2, GrowthRule::Periodic, depth)?))
}

/// Three increasing tower depths ending at the configured depth, deep
/// enough for every zoom the ladder suites take.
fn depth_ladder(depth: usize) -> [usize; 3] {
    let top = depth.max(6);
    [top - 2, top - 1, top]
}

/// Generates the standard towers over the small-arity grid and validates
/// the structural conditions; the measure-exactness rows must hold with
/// zero residual by construction.
fn run_axioms(config: &RunConfig) -> Result<SuiteOutcome> {
    let depth = match config.band {
        ToleranceBand::Fine => config.depth.min(6),
        ToleranceBand::Coarse => config.depth.min(4),
    };
    let combos: Vec<(u32, GrowthRule)> = [2u32, 3, 4]
        .into_iter()
        .flat_map(|m| [(m, GrowthRule::Periodic), (m, GrowthRule::Doubling)])
        .collect();
    let reports = combos
        .par_iter()
        .map(|&(m, rule)| {
            let system = InverseSystem::generate(m, rule, depth)?;
            let edges = system.level_graph(depth)?.edge_count();
            Ok((m, rule, edges, system.validate()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut checks = Checks::new();
    let mut csv = Csv::new(&["m", "rule", "depth", "check", "passed"]);
    for (m, rule, edges, report) in &reports {
        let rule_name = format!("{rule:?}").to_ascii_lowercase();
        for row in &report.rows {
            csv.row(&[
                m.to_string(),
                rule_name.clone(),
                depth.to_string(),
                row.name.to_string(),
                row.passed.to_string(),
            ]);
        }
        checks.claim(
            report.passed(),
            format!("m={m} {rule_name} depth {depth} validates ({edges} top edges)"),
        );
        for exact in ["mass_pushforward", "star_mass_splitting"] {
            let ok = report.row(exact).is_some_and(|r| r.passed);
            checks.claim(ok, format!("m={m} {rule_name}: {exact} residual exactly zero"));
        }
    }
    Ok(SuiteOutcome {
        suite: SuiteName::Axioms,
        passed: checks.passed(),
        lines: checks.lines(),
        artifacts: vec![("axioms.csv".into(), csv.as_str().to_string())],
        seconds: 0.0,
    })
}

/// Speed recovery for three reference fragments and the nonexistence flag
/// for the corner curve whose one-sided speeds disagree.
fn run_md(config: &RunConfig) -> Result<SuiteOutcome> {
    let resolution = match config.band {
        ToleranceBand::Fine => 14,
        ToleranceBand::Coarse => 10,
    };
    let tol = 1e-3;
    let mut checks = Checks::new();
    let mut csv = Csv::new(&["example", "estimate", "target", "error", "exists"]);

    let run_case = |name: &str,
                        est: crate::fragment::DifferentialEstimate,
                        target: f64,
                        checks: &mut Checks,
                        csv: &mut Csv| {
        let err = (est.value - target).abs();
        csv.row(&[
            name.to_string(),
            cell_f64(est.value),
            cell_f64(target),
            cell_f64(err),
            est.exists.to_string(),
        ]);
        checks.claim(
            est.exists && err < tol,
            format!("{name}: speed {:.6} within {tol} of {target}", est.value),
        );
    };

    let l1 = EuclideanHost::new(2, NormKind::L1).metric();
    let line = Fragment::from_fn(Domain::interval(0.0, 1.0), resolution, |t| vec![2.0 * t, t]);
    run_case("l1_line", metric_differential(&line, &l1, 0.5, 5)?, 3.0, &mut checks, &mut csv);

    let l2 = EuclideanHost::new(2, NormKind::L2).metric();
    let circle =
        Fragment::from_fn(Domain::interval(0.0, 1.0), resolution, |t| vec![t.cos(), t.sin()]);
    run_case("l2_circle", metric_differential(&circle, &l2, 0.5, 5)?, 1.0, &mut checks, &mut csv);

    let space = laakso(config.depth.min(4))?;
    let x = space.vertex_point(0)?;
    let (chain, _) = space.geodesic_through(&x)?;
    let geodesic = Fragment::from_fn(Domain::interval(0.0, 1.0), resolution, |t| {
        let t = rat_from_f64(t).expect("dyadic sample time");
        space.chain_point(&chain, &t).expect("chain covers the unit interval")
    });
    let rho = crate::space::limit_estimate_metric(&space);
    run_case(
        "tower_geodesic",
        metric_differential(&geodesic, &rho, 0.5, 5)?,
        1.0,
        &mut checks,
        &mut csv,
    );

    let corner =
        Fragment::from_fn(Domain::interval(-1.0, 1.0), resolution, |t| vec![t, t.abs()]);
    let est = metric_differential(&corner, &l2, 0.0, 5)?;
    csv.row(&[
        "l2_corner".into(),
        cell_f64(est.value),
        "nan".into(),
        "nan".into(),
        est.exists.to_string(),
    ]);
    checks.claim(
        !est.exists,
        format!("l2_corner: nonexistence flagged (oscillation {:.4})", est.oscillation),
    );

    Ok(SuiteOutcome {
        suite: SuiteName::Md,
        passed: checks.passed(),
        lines: checks.lines(),
        artifacts: vec![("md.csv".into(), csv.as_str().to_string())],
        seconds: 0.0,
    })
}

/// Occupation-versus-integral residuals over a shrinking net ladder for an
/// injective segment and a doubled traversal.
fn run_area(config: &RunConfig) -> Result<SuiteOutcome> {
    let (resolution, ladder): (u32, [f64; 3]) = match config.band {
        ToleranceBand::Fine => (14, [1.0 / 16.0, 1.0 / 64.0, 1.0 / 256.0]),
        ToleranceBand::Coarse => (10, [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0]),
    };
    let tol = 1e-3;
    let rho = EuclideanHost::new(2, NormKind::L2).metric();
    let segment = Fragment::from_fn(Domain::interval(0.0, 1.0), resolution, |t| vec![t, 0.0]);
    let tent = Fragment::from_fn(Domain::interval(0.0, 2.0), resolution, |t| {
        if t <= 1.0 { vec![t, 0.0] } else { vec![2.0 - t, 0.0] }
    });
    let mut checks = Checks::new();
    let mut csv = Csv::new(&["example", "delta", "residual"]);
    for (name, frag) in [("segment", &segment), ("doubled", &tent)] {
        let mut gaps = Vec::new();
        for &delta in &ladder {
            let check = area_formula_check(frag, &rho, delta)?;
            csv.row(&[name.to_string(), cell_f64(delta), cell_f64(check.gap())]);
            gaps.push(check.gap());
        }
        let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
        checks.claim(
            monotone,
            format!("{name}: residuals decay along the net ladder {gaps:?}"),
        );
        let last = *gaps.last().expect("ladder nonempty");
        checks.claim(
            last < tol,
            format!("{name}: finest residual {last:.6} below {tol}"),
        );
    }
    Ok(SuiteOutcome {
        suite: SuiteName::Area,
        passed: checks.passed(),
        lines: checks.lines(),
        artifacts: vec![("area.csv".into(), csv.as_str().to_string())],
        seconds: 0.0,
    })
}

/// Upper and lower pointwise constants agree for the chart function and
/// pinned distance functions over measure-weighted sample points.
fn run_liplip(config: &RunConfig) -> Result<SuiteOutcome> {
    let points = match config.band {
        ToleranceBand::Fine => 200,
        ToleranceBand::Coarse => 40,
    };
    let space = laakso(config.depth)?;
    let mut rng = suite_rng(config.seed, SuiteName::LipLip);
    let radii = scale_radii(&space, space.depth());
    let mut functions: Vec<(String, RealFunction<'_>)> =
        vec![("phi".into(), height_function(&space))];
    for i in 0..3 {
        let q = space.sample_point(&mut rng)?;
        functions.push((format!("dist_q{i}"), distance_function(&space, &q)?));
    }
    let xs: Vec<_> = (0..points)
        .map(|_| space.sample_point(&mut rng))
        .collect::<Result<_>>()?;

    let mut checks = Checks::new();
    let mut csv = Csv::new(&[
        "function",
        "point_id",
        "phi_value",
        "Lip",
        "lip",
        "ratio",
        "finest_scale",
    ]);
    let finest = rat_to_f64(radii.last().expect("ladder nonempty"));
    for (label, f) in &functions {
        let estimates = xs
            .par_iter()
            .map(|x| lip_scan(&space, f, x, &radii))
            .collect::<Result<Vec<_>>>()?;
        let mut ratios = Vec::with_capacity(estimates.len());
        for (id, (x, est)) in xs.iter().zip(&estimates).enumerate() {
            let ratio = if est.lower.is_zero() {
                f64::INFINITY
            } else {
                rat_to_f64(&(&est.upper / &est.lower))
            };
            csv.row(&[
                label.clone(),
                id.to_string(),
                cell_f64(rat_to_f64(&space.phi(x)?)),
                cell_f64(rat_to_f64(&est.upper)),
                cell_f64(rat_to_f64(&est.lower)),
                cell_f64(ratio),
                cell_f64(finest),
            ]);
            if !est.lower.is_zero() {
                ratios.push(&est.upper / &est.lower);
            }
        }
        checks.claim(
            ratios.len() == estimates.len(),
            format!("{}: lower constant positive at every point", label),
        );
        if ratios.is_empty() {
            continue;
        }
        let med = median_rat(&ratios);
        checks.claim(
            med >= Rat::one() && med <= rat(21, 20),
            format!("{}: median upper/lower ratio {:.4} in [1, 1.05]", label, rat_to_f64(&med)),
        );
        let mut sorted_ratios = ratios.clone();
        sorted_ratios.sort();
        let p90 = &sorted_ratios[(sorted_ratios.len() * 9) / 10 - 1];
        checks.claim(
            p90 <= &rat(23, 20),
            format!("{}: 90th percentile {:.4} at most 1.15", label, rat_to_f64(p90)),
        );

        // per-scale ratio medians along the ladder, each over a trailing
        // three-scale window; shorter windows are not the same statistic
        let mut scale_medians: Vec<Rat> = Vec::new();
        for j in 2..radii.len() {
            let lo_idx = j - 2;
            let mut per_point = Vec::with_capacity(estimates.len());
            for est in &estimates {
                let window = &est.scales[lo_idx..=j];
                let up = window.iter().map(|s| &s.ratio).max().expect("window");
                let lo = window.iter().map(|s| &s.ratio).min().expect("window");
                if lo.is_zero() {
                    continue;
                }
                per_point.push(up / lo);
            }
            if !per_point.is_empty() {
                scale_medians.push(median_rat(&per_point));
            }
        }
        let nonincreasing = scale_medians.windows(2).all(|w| w[1] <= w[0]);
        checks.claim(
            nonincreasing,
            format!(
                "{}: median ratios nonincreasing over scales {:?}",
                label,
                scale_medians.iter().map(rat_to_f64).collect::<Vec<_>>()
            ),
        );
    }
    Ok(SuiteOutcome {
        suite: SuiteName::LipLip,
        passed: checks.passed(),
        lines: checks.lines(),
        artifacts: vec![("liplip.csv".into(), csv.as_str().to_string())],
        seconds: 0.0,
    })
}

/// Nested generator families induce seminorms that settle: the relative
/// gap between the smallest and largest family is small and shrinks as the
/// family grows, on a flat host and on a tower chart.
fn run_seminorms(config: &RunConfig) -> Result<SuiteOutcome> {
    let generators = match config.band {
        ToleranceBand::Fine => 1000,
        ToleranceBand::Coarse => 200,
    };
    let mut rng = suite_rng(config.seed, SuiteName::Seminorms);
    let mut checks = Checks::new();
    let mut csv = Csv::new(&["space", "tier", "generators", "gap_to_last"]);

    let audit = |label: &str,
                     bundle: &SeminormBundle,
                     directions: &[Vec<f64>],
                     checks: &mut Checks,
                     csv: &mut Csv| {
        let last = bundle.tier_count() - 1;
        let mut gaps = Vec::new();
        for tier in 0..bundle.tier_count() {
            let gap = bundle.gap_to(tier, |v| bundle.value(last, v), directions);
            csv.row(&[
                label.to_string(),
                tier.to_string(),
                bundle.rows(tier).len().to_string(),
                cell_f64(gap),
            ]);
            gaps.push(gap);
        }
        let discrepancy = bundle.discrepancy(directions);
        checks.claim(
            discrepancy < 0.05,
            format!("{label}: tier discrepancy {discrepancy:.5} below 0.05"),
        );
        let nonincreasing = gaps.windows(2).all(|w| w[1] <= w[0]);
        checks.claim(
            nonincreasing,
            format!("{label}: gaps shrink as the family doubles {gaps:?}"),
        );
    };

    let host = EuclideanHost::new(2, NormKind::L1);
    let p = vec![0.0, 0.0];
    let host_bundle = euclidean_seminorm_bundle(&host, &p, generators, &mut rng)?;
    audit("l1_plane", &host_bundle, &direction_grid(2, 64), &mut checks, &mut csv);

    let space = laakso(config.depth.min(4))?;
    let center = space.generic_point(&mut rng, space.depth() + 2)?;
    let geodesics = GeodesicBundle::through(&space, &center, 6, &mut rng)?;
    let chart_bundle = chart_seminorm_bundle(&space, generators, &geodesics, &mut rng)?;
    audit("tower_chart", &chart_bundle, &direction_grid(1, 1), &mut checks, &mut csv);

    Ok(SuiteOutcome {
        suite: SuiteName::Seminorms,
        passed: checks.passed(),
        lines: checks.lines(),
        artifacts: vec![("seminorms.csv".into(), csv.as_str().to_string())],
        seconds: 0.0,
    })
}

/// Line representations reproduce product integrals on the square and
/// cylinder masses on towers, the latter exactly under the analytic branch
/// recursion.
fn run_alberti(config: &RunConfig) -> Result<SuiteOutcome> {
    let lines = match config.band {
        ToleranceBand::Fine => 1000,
        ToleranceBand::Coarse => 200,
    };
    let mut checks = Checks::new();
    let mut csv = Csv::new(&["mode", "level", "edge", "target", "estimate", "residual"]);

    let grid = fubini_rep(2, 0, 200, 10)?;
    let product = grid.integrate(&|p: &Vec<f64>| p[0] * p[1]);
    csv.row(&[
        "fubini".into(),
        "-".into(),
        "-".into(),
        cell_f64(0.25),
        cell_f64(product),
        cell_f64((product - 0.25).abs()),
    ]);
    checks.claim(
        (product - 0.25).abs() < 1e-4,
        format!("grid rep integrates xy to {product:.7} within 1e-4 of 0.25"),
    );

    let space = laakso(config.depth.min(4))?;
    let system = space.system();
    let rep = monotone_rep(&space, lines, config.seed)?;
    let mut worst_abs = 0.0f64;
    for level in 0..=2usize.min(space.depth()) {
        let g = system.level_graph(level)?;
        for e in 0..g.edge_count() {
            let occ = rep.cylinder_occupation(system, level, e)?;
            let mass = &g.edge(e)?.mass;
            let residual = rat_to_f64(&(&occ - mass).abs());
            worst_abs = worst_abs.max(residual);
            csv.row(&[
                "sampled".into(),
                level.to_string(),
                e.to_string(),
                cell_rat(mass),
                cell_f64(rat_to_f64(&occ)),
                cell_f64(residual),
            ]);
        }
    }
    checks.claim(
        worst_abs <= 0.02,
        format!("sampled rep at {lines} lines: worst cylinder residual {worst_abs:.5} within 0.02"),
    );

    let exact = crate::alberti::analytic_residual_table(system, 2.min(space.depth()))?;
    let mut all_zero = true;
    for cell in &exact {
        let zero = cell.residual().is_zero();
        all_zero &= zero;
        csv.row(&[
            "analytic".into(),
            cell.level.to_string(),
            cell.edge.to_string(),
            cell_rat(&cell.target),
            cell_rat(&cell.estimate),
            cell_rat(&cell.residual()),
        ]);
    }
    checks.claim(
        all_zero,
        format!("branch recursion reproduces all {} cylinder masses exactly", exact.len()),
    );

    Ok(SuiteOutcome {
        suite: SuiteName::Alberti,
        passed: checks.passed(),
        lines: checks.lines(),
        artifacts: vec![("alberti.csv".into(), csv.as_str().to_string())],
        seconds: 0.0,
    })
}

/// Zoom normalization stays in range, zoomed lines run at unit speed, and
/// the submersion defect is controlled by the truncation bracket, falling
/// with depth.
fn run_blowup(config: &RunConfig) -> Result<SuiteOutcome> {
    let mut rng = suite_rng(config.seed, SuiteName::Blowup);
    let mut checks = Checks::new();
    let mut csv = Csv::new(&["depth", "sigma", "median_defect", "max_defect", "bound"]);

    let space = laakso(config.depth)?;
    let m = space.system().m() as f64;
    let mut sigma_ok = true;
    let mut sigmas = Vec::new();
    for _ in 0..20 {
        let p = space.generic_point(&mut rng, space.depth() + 2)?;
        let bu = Blowup::new(&space, p, 2, rat_int(2))?;
        sigma_ok &= bu.sigma() >= 1.0 && bu.sigma() <= m;
        sigmas.push(bu.sigma());
    }
    checks.claim(
        sigma_ok,
        format!(
            "normalization exponent within [1, {m}] on 20 generic points (median {:.4})",
            median_f64(&sigmas)
        ),
    );

    let speed_space = laakso(config.depth.min(5))?;
    let p = speed_space.generic_point(&mut rng, speed_space.depth() + 2)?;
    let bu = Blowup::new(&speed_space, p, 1, rat_int(2))?;
    let rep = MonotoneRep::sampled(speed_space.system(), 100, &mut rng)?;
    let blown = blow_up_rep(&bu, &rep, 8)?;
    let band = rep_speed_band(&blown, &bu.metric(), 1e-9);
    checks.claim(
        (band.min - 1.0).abs() < 1e-9 && (band.max - 1.0).abs() < 1e-9,
        format!(
            "zoomed lines move at unit speed within 1e-9 (band [{:.12}, {:.12}])",
            band.min, band.max
        ),
    );

    let mut medians = Vec::new();
    for k in depth_ladder(config.depth) {
        let deep = laakso(k)?;
        let p = deep.generic_point(&mut rng, deep.depth() + 2)?;
        let bu = Blowup::new(&deep, p, 1, rat_int(2))?;
        let report = submersion_check(&bu, 40, &mut rng)?;
        checks.claim(
            report.lipschitz_violations == 0 && report.max_est_defect() == 0.0,
            format!("depth {k}: chart gaps realized exactly along fibers"),
        );
        let unzoom = rat_to_f64(bu.scale());
        let median = report.median_bracket_defect() * unzoom;
        let max = report.max_bracket_defect() * unzoom;
        let bound = rat_to_f64(&deep.slack(k));
        csv.row(&[
            k.to_string(),
            cell_f64(bu.sigma()),
            cell_f64(median),
            cell_f64(max),
            cell_f64(bound),
        ]);
        checks.claim(
            median <= bound * (1.0 + 1e-9),
            format!("depth {k}: median submersion defect {median:.6} within bracket {bound:.6}"),
        );
        medians.push(median);
    }
    checks.claim(
        medians.windows(2).all(|w| w[1] < w[0]),
        format!("median defects fall with depth {medians:?}"),
    );

    Ok(SuiteOutcome {
        suite: SuiteName::Blowup,
        passed: checks.passed(),
        lines: checks.lines(),
        artifacts: vec![("blowup.csv".into(), csv.as_str().to_string())],
        seconds: 0.0,
    })
}

/// The chart-affine variation law on zoomed balls: largest change over a
/// ball of zoomed radius r equals r times the slope, within twice the
/// truncation bracket.
fn run_variation(config: &RunConfig) -> Result<SuiteOutcome> {
    let mut rng = suite_rng(config.seed, SuiteName::Variation);
    let space = laakso(config.depth)?;
    let p = space.generic_point(&mut rng, space.depth() + 2)?;
    let bu = Blowup::new(&space, p, 1, rat_int(2))?;
    let centers = bu.window_points(&mut rng, 10)?;
    let radii: Vec<Rat> = [rat(1, 8), rat(1, 4), rat(1, 2), rat(3, 4), rat_int(1)].to_vec();
    let rows = variation_check(&bu, &rat_int(1), &centers, &radii)?;
    let bound = 2.0 * rat_to_f64(&bu.slack_hat());
    let mut csv = Csv::new(&["pair", "r_hat", "variation", "predicted", "residual"]);
    let mut worst = 0.0f64;
    for (i, row) in rows.iter().enumerate() {
        csv.row(&[
            i.to_string(),
            cell_f64(row.r_hat),
            cell_f64(row.var),
            cell_f64(row.predicted),
            cell_f64(row.residual()),
        ]);
        worst = worst.max(row.residual());
    }
    let mut checks = Checks::new();
    checks.claim(
        rows.len() == 50,
        format!("{} center/radius pairs audited", rows.len()),
    );
    checks.claim(
        worst <= bound,
        format!("worst variation residual {worst:.9} within twice the bracket {bound:.6}"),
    );
    Ok(SuiteOutcome {
        suite: SuiteName::Variation,
        passed: checks.passed(),
        lines: checks.lines(),
        artifacts: vec![("variation.csv".into(), csv.as_str().to_string())],
        seconds: 0.0,
    })
}

/// Factoring through the chart: the chart itself does so exactly, a kinked
/// reparameterization recovers its slope with collapsing fibers, and the
/// sheet fold on a tube tower is flagged with persistent fiber spread.
fn run_factoring(config: &RunConfig) -> Result<SuiteOutcome> {
    let mut rng = suite_rng(config.seed, SuiteName::Factoring);
    let mut checks = Checks::new();
    let mut csv = Csv::new(&[
        "target",
        "depth",
        "median_speed",
        "expected_speed",
        "max_fiber_defect",
        "bigon_bounded",
    ]);

    let space = laakso(config.depth.min(5))?;
    let p = space.generic_point(&mut rng, space.depth() + 2)?;
    let bu = Blowup::new(&space, p, 1, rat_int(2))?;
    let rep = MonotoneRep::sampled(space.system(), 60, &mut rng)?;
    let report = factoring_check(&bu, &FactorTarget::Line, &chart_map(&space), &rep, 10, &mut rng)?;
    csv.row(&[
        "chart".into(),
        space.depth().to_string(),
        cell_f64(report.median_speed),
        cell_f64(1.0),
        cell_f64(report.max_fiber_defect),
        report.bigon_bounded.to_string(),
    ]);
    checks.claim(
        report.median_speed == 1.0
            && report.max_constancy_defect == 0.0
            && report.max_fiber_defect == 0.0
            && report.bigon_bounded,
        "chart target: unit speed, zero constancy and fiber defects".to_string(),
    );

    let kink = rat(1, 4);
    let mut fiber_ladder = Vec::new();
    for k in depth_ladder(config.depth) {
        let deep = laakso(k)?;
        // the reparameterization below is affine away from the kink, so the
        // zoom window must sit entirely on one side of it
        let mut chosen = None;
        for _ in 0..50 {
            let p = deep.generic_point(&mut rng, deep.depth() + 3)?;
            let bu = Blowup::new(&deep, p, 3, rat_int(1))?;
            let (lo, hi) = bu.chart_range();
            if hi < kink || lo > kink {
                chosen = Some(bu);
                break;
            }
        }
        let bu = chosen.ok_or_else(|| {
            MdlError::Unreachable("no zoom window clear of the kink".into())
        })?;
        let phi_p = deep.phi(bu.basepoint())?;
        let expected = if phi_p > kink { 1.0 } else { 0.5 };
        let kink_fn = kink.clone();
        let map = composed_chart_map(&deep, "kinked_chart", move |t| {
            let bent = t - &kink_fn;
            if bent > Rat::zero() {
                t / rat_int(2) + bent / rat_int(2)
            } else {
                t / rat_int(2)
            }
        });
        let rep = MonotoneRep::sampled(deep.system(), 60, &mut rng)?;
        let report = factoring_check(&bu, &FactorTarget::Line, &map, &rep, 10, &mut rng)?;
        csv.row(&[
            "kinked_chart".into(),
            k.to_string(),
            cell_f64(report.median_speed),
            cell_f64(expected),
            cell_f64(report.max_fiber_defect),
            report.bigon_bounded.to_string(),
        ]);
        let speed_err = (report.median_speed - expected).abs() / expected;
        checks.claim(
            speed_err <= 0.02,
            format!(
                "kinked chart at depth {k}: speed {:.4} within 2% of {expected}",
                report.median_speed
            ),
        );
        fiber_ladder.push(report.max_fiber_defect);
    }
    checks.claim(
        fiber_ladder.windows(2).all(|w| w[1] <= w[0]),
        format!("fiber collapse defects nonincreasing with depth {fiber_ladder:?}"),
    );

    let tube = LimitSpace::new(InverseSystem::generate(2, GrowthRule::Tube, 3)?);
    let p = tube.generic_point(&mut rng, tube.depth() + 2)?;
    let bu = Blowup::new(&tube, p, 0, rat(1, 2))?;
    let rep = MonotoneRep::sampled(tube.system(), 30, &mut rng)?;
    let (tree, fold) = sheet_fold_map(&tube)?;
    let report = factoring_check(&bu, &FactorTarget::Tree(tree), &fold, &rep, 10, &mut rng)?;
    csv.row(&[
        "tube_fold".into(),
        tube.depth().to_string(),
        cell_f64(report.median_speed),
        "nan".into(),
        cell_f64(report.max_fiber_defect),
        report.bigon_bounded.to_string(),
    ]);
    checks.claim(
        !report.bigon_bounded && report.max_fiber_defect > 0.5,
        format!(
            "tube fold flagged: branch pairs unbounded, fiber spread {:.3} persists",
            report.max_fiber_defect
        ),
    );

    Ok(SuiteOutcome {
        suite: SuiteName::Factoring,
        passed: checks.passed(),
        lines: checks.lines(),
        artifacts: vec![("factoring.csv".into(), csv.as_str().to_string())],
        seconds: 0.0,
    })
}
