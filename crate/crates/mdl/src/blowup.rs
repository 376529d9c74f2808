//! Finite-scale zooms of a limit space around a basepoint: the chart and
//! all distances rescale by m^n, the measure renormalizes by the ball at
//! that scale. Everything structural stays rational, so the zoom is exact
//! and the only uncertainty is the depth-truncation bracket, which the
//! checks carry along explicitly.

use num_traits::{One, Signed, Zero};
use rand::Rng;

use crate::alberti::{AlbertiRep, Density, MonotoneRep, RepLine};
use crate::error::{MdlError, Result};
use crate::fragment::{Domain, Fragment};
use crate::graph::{GraphPoint, MetricGraph};
use crate::limit::{Bracket, LimitPoint, LimitSpace};
use crate::rational::{rat_frac, rat_from_f64, rat_int, rat_pow, rat_to_f64, Rat};
use crate::space::Pseudometric;
use crate::system::check_monotone_bigon;

/// Zoom of factor m^n centered at a point, restricted to the chart slab
/// |phi_hat| <= window.
pub struct Blowup<'a> {
    space: &'a LimitSpace,
    p: LimitPoint,
    n: usize,
    window: Rat,
    phi_p: Rat,
    scale: Rat,
    align: Rat,
    sigma: f64,
}

impl<'a> Blowup<'a> {
    pub fn new(space: &'a LimitSpace, p: LimitPoint, n: usize, window: Rat) -> Result<Self> {
        if n + 1 > space.depth() {
            return Err(MdlError::InsufficientDepth(format!(
                "window at scale {n} exceeds available depth {}",
                space.depth()
            )));
        }
        if window <= Rat::zero() {
            return Err(MdlError::BadArgument("window radius must be positive".into()));
        }
        let phi_p = space.phi(&p)?;
        if phi_p <= Rat::zero() || phi_p >= Rat::one() {
            return Err(MdlError::BadPoint(format!(
                "chart value {} sits on the boundary",
                crate::rational::format_rat(&phi_p)
            )));
        }
        let m = space.system().m();
        let scale = rat_pow(m, -(n as i32));
        let align = rat_frac(&(&phi_p / &scale));
        let sigma = (m as f64).powf(1.0 - rat_to_f64(&align));
        Ok(Blowup { space, p, n, window, phi_p, scale, align, sigma })
    }

    pub fn space(&self) -> &LimitSpace {
        self.space
    }

    pub fn basepoint(&self) -> &LimitPoint {
        &self.p
    }

    pub fn scale_index(&self) -> usize {
        self.n
    }

    /// r_n = m^-n.
    pub fn scale(&self) -> &Rat {
        &self.scale
    }

    pub fn window(&self) -> &Rat {
        &self.window
    }

    /// Fractional alignment of the basepoint's chart value to the m-adic
    /// grid at this scale, in [0, 1).
    pub fn alignment(&self) -> &Rat {
        &self.align
    }

    /// Grid-alignment normalization in [1, m]; m on grid points, falling
    /// toward 1 as the basepoint approaches the next grid line.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Recentered rescaled chart value; zero at the basepoint.
    pub fn phi_hat(&self, x: &LimitPoint) -> Result<Rat> {
        Ok((self.space.phi(x)? - &self.phi_p) / &self.scale)
    }

    /// Rescaled pinned distance surrogate.
    pub fn distance_hat(&self, x: &LimitPoint, y: &LimitPoint) -> Result<Rat> {
        Ok(self.space.d_estimate(x, y)? / &self.scale)
    }

    pub fn distance_hat_bracket(&self, x: &LimitPoint, y: &LimitPoint) -> Result<Bracket> {
        let b = self.space.distance_bracket(x, y)?;
        Ok(Bracket { lower: b.lower / &self.scale, upper: b.upper / &self.scale })
    }

    /// Truncation slack in zoomed units.
    pub fn slack_hat(&self) -> Rat {
        self.space.slack(self.space.depth()) / &self.scale
    }

    pub fn in_window(&self, x: &LimitPoint) -> Result<bool> {
        Ok(self.phi_hat(x)?.abs() <= self.window)
    }

    /// Chart range of the window in unzoomed coordinates.
    pub fn chart_range(&self) -> (Rat, Rat) {
        let half = &self.window * &self.scale;
        (&self.phi_p - &half, &self.phi_p + &half)
    }

    /// Mass normalizer: the measure bracket of the scale-r_n ball at the
    /// basepoint.
    pub fn normalizer(&self) -> Result<Bracket> {
        self.space.ball_bracket(&self.p, &self.scale)
    }

    /// Zoomed measure bracket of the ball of zoomed radius r_hat at x.
    pub fn measure_hat(&self, x: &LimitPoint, r_hat: &Rat) -> Result<(f64, f64)> {
        let ball = self.space.ball_bracket(x, &(r_hat * &self.scale))?;
        let norm = self.normalizer()?;
        Ok((
            rat_to_f64(&ball.lower) / rat_to_f64(&norm.upper),
            rat_to_f64(&ball.upper) / rat_to_f64(&norm.lower),
        ))
    }

    /// Bracket for c = 1 over the zoomed mass of B(basepoint, 1/sigma).
    pub fn normalization_constant(&self) -> Result<(f64, f64)> {
        let r = rat_from_f64(1.0 / self.sigma)
            .ok_or_else(|| MdlError::BadArgument("sigma out of range".into()))?;
        let (lo, hi) = self.measure_hat(&self.p, &r)?;
        Ok((1.0 / hi, 1.0 / lo))
    }

    /// Zoomed distance as a plain float metric.
    pub fn metric(&self) -> Pseudometric<'_, LimitPoint> {
        let scale = rat_to_f64(&self.scale);
        let space = self.space;
        Pseudometric::new("zoomed", move |x: &LimitPoint, y: &LimitPoint| {
            rat_to_f64(&space.d_estimate(x, y).expect("points share the tower")) / scale
        })
    }

    /// Edges of the deepest graph whose chart interval meets the window,
    /// with the overlapping chart interval of each.
    fn window_edges(&self) -> Result<Vec<(usize, Rat, Rat)>> {
        let g = self.space.system().level_graph(self.space.depth())?;
        let phi = self.space.system().phi_values(self.space.depth())?;
        let (lo, hi) = self.chart_range();
        let mut out = Vec::new();
        for (e, edge) in g.edges().iter().enumerate() {
            let (a, b) = (&phi[edge.u], &phi[edge.v]);
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            let from = if &lo > a { lo.clone() } else { a.clone() };
            let to = if &hi < b { hi.clone() } else { b.clone() };
            if to > from {
                out.push((e, from, to));
            }
        }
        Ok(out)
    }

    /// Measure-weighted samples inside the window slab.
    pub fn window_points<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
    ) -> Result<Vec<LimitPoint>> {
        let g = self.space.system().level_graph(self.space.depth())?;
        let phi = self.space.system().phi_values(self.space.depth())?;
        let edges = self.window_edges()?;
        if edges.is_empty() {
            return Err(MdlError::BadArgument("window misses every edge".into()));
        }
        let weights: Vec<Rat> = edges
            .iter()
            .map(|(e, from, to)| {
                let edge = g.edges().get(*e).expect("window edge");
                &edge.mass * (to - from) / &edge.length
            })
            .collect();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let k = crate::system::weighted_pick(rng, &weights);
            let (e, from, to) = &edges[k];
            let u = rat_from_f64(rng.random::<f64>()).unwrap_or_else(Rat::zero);
            let t = from + u * (to - from);
            let edge = g.edge(*e)?;
            let offset = (t - &phi[edge.u]).abs();
            out.push(self.space.point(g.point_on_edge(*e, offset)?)?);
        }
        Ok(out)
    }

    /// Every chart-level crossing of the deepest graph at zoomed height
    /// t_hat, restricted to the window.
    pub fn fiber_points(&self, t_hat: &Rat) -> Result<Vec<LimitPoint>> {
        if t_hat.abs() > self.window {
            return Err(MdlError::BadArgument("fiber height outside the window".into()));
        }
        let t = &self.phi_p + t_hat * &self.scale;
        let g = self.space.system().level_graph(self.space.depth())?;
        let phi = self.space.system().phi_values(self.space.depth())?;
        let mut out: Vec<LimitPoint> = Vec::new();
        for (e, edge) in g.edges().iter().enumerate() {
            let (a, b) = (&phi[edge.u], &phi[edge.v]);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if &t < lo || &t > hi {
                continue;
            }
            let offset = (&t - a).abs();
            let p = self.space.point(g.point_on_edge(e, offset)?)?;
            if !out.contains(&p) {
                out.push(p);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SubmersionRow {
    pub phi_gap: f64,
    /// Defect of the pinned distance; zero whenever a monotone chain
    /// realizes the fiber.
    pub est_defect: f64,
    /// Defect charged against the truncation bracket.
    pub bracket_defect: f64,
}

#[derive(Debug, Clone)]
pub struct SubmersionReport {
    pub rows: Vec<SubmersionRow>,
    /// Pairs where the chart gap exceeded even the bracketed distance.
    pub lipschitz_violations: usize,
    pub empty_fibers: usize,
}

impl SubmersionReport {
    fn quantile(values: &mut Vec<f64>, q: f64) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        values.sort_by(f64::total_cmp);
        let idx = ((values.len() - 1) as f64 * q).round() as usize;
        values[idx]
    }

    pub fn median_bracket_defect(&self) -> f64 {
        let mut v: Vec<f64> = self.rows.iter().map(|r| r.bracket_defect).collect();
        Self::quantile(&mut v, 0.5)
    }

    pub fn max_bracket_defect(&self) -> f64 {
        self.rows.iter().map(|r| r.bracket_defect).fold(0.0, f64::max)
    }

    pub fn max_est_defect(&self) -> f64 {
        self.rows.iter().map(|r| r.est_defect).fold(0.0, f64::max)
    }
}

/// Compares zoomed distances to chart gaps over sampled point/fiber pairs.
/// A metric submersion would make the infimum over the fiber equal the gap.
pub fn submersion_check<R: Rng + ?Sized>(
    bu: &Blowup<'_>,
    samples: usize,
    rng: &mut R,
) -> Result<SubmersionReport> {
    let ys = bu.window_points(rng, samples)?;
    let targets = bu.window_points(rng, samples)?;
    let slack = rat_to_f64(&bu.slack_hat());
    let mut rows = Vec::with_capacity(samples);
    let mut lipschitz_violations = 0usize;
    let mut empty_fibers = 0usize;
    for (y, t_point) in ys.iter().zip(&targets) {
        let t_hat = bu.phi_hat(t_point)?;
        let fiber = bu.fiber_points(&t_hat)?;
        if fiber.is_empty() {
            empty_fibers += 1;
            continue;
        }
        let gap = (bu.phi_hat(y)? - &t_hat).abs();
        let mut inf: Option<Rat> = None;
        for z in &fiber {
            let d = bu.distance_hat(y, z)?;
            if d < gap {
                lipschitz_violations += 1;
            }
            if inf.as_ref().is_none_or(|cur| &d < cur) {
                inf = Some(d);
            }
        }
        let inf = inf.expect("nonempty fiber");
        let est_defect = rat_to_f64(&(&inf - &gap).abs());
        rows.push(SubmersionRow {
            phi_gap: rat_to_f64(&gap),
            est_defect,
            bracket_defect: est_defect + slack,
        });
    }
    Ok(SubmersionReport { rows, lipschitz_violations, empty_fibers })
}

/// Restriction of a monotone representation to the window, rescaled: the
/// fragments are parameterized by the zoomed chart, their weights by the
/// mass normalizer. Lines missing the window are dropped.
pub fn blow_up_rep(
    bu: &Blowup<'_>,
    rep: &MonotoneRep,
    resolution: u32,
) -> Result<AlbertiRep<LimitPoint>> {
    let space = bu.space();
    let system = space.system();
    let norm = bu.normalizer()?.upper;
    if norm.is_zero() {
        return Err(MdlError::InvalidSystem("massless ball at the basepoint".into()));
    }
    let (chart_lo, chart_hi) = bu.chart_range();
    let mut lines = Vec::new();
    for line in &rep.lines {
        let lo_phi = line.chain.phi_start(system)?;
        let hi_phi = line.chain.phi_end(system)?;
        let lo = if chart_lo > lo_phi { chart_lo.clone() } else { lo_phi };
        let hi = if chart_hi < hi_phi { chart_hi.clone() } else { hi_phi };
        if hi <= lo {
            continue;
        }
        let lo_hat = (&lo - &bu.phi_p) / &bu.scale;
        let hi_hat = (&hi - &bu.phi_p) / &bu.scale;
        let chain = line.chain.clone();
        let phi_p = bu.phi_p.clone();
        let scale = bu.scale.clone();
        let fragment = Fragment::from_fn(
            Domain::interval(rat_to_f64(&lo_hat), rat_to_f64(&hi_hat)),
            resolution,
            move |t| {
                let mut x = &phi_p + rat_from_f64(t).unwrap_or_else(Rat::zero) * &scale;
                if x < lo {
                    x = lo.clone();
                }
                if x > hi {
                    x = hi.clone();
                }
                let gp = chain
                    .eval_at_phi(system, &x)
                    .expect("window stays on the chain");
                space.point(gp).expect("top point lifts")
            },
        );
        let weight = &line.weight / (&norm / &bu.scale);
        lines.push(RepLine {
            fragment,
            weight: rat_to_f64(&weight),
            density: Density::Const(1.0),
        });
    }
    Ok(AlbertiRep { lines })
}

/// Occupation of each window edge cylinder under the zoomed representation
/// against its normalized mass, in exact arithmetic.
pub fn blown_cylinder_rows(
    bu: &Blowup<'_>,
    rep: &MonotoneRep,
) -> Result<Vec<(usize, Rat, Rat)>> {
    let system = bu.space().system();
    let top = bu.space().depth();
    let norm = bu.normalizer()?.upper;
    let g = system.level_graph(top)?;
    let phi = system.phi_values(top)?;
    let (lo, hi) = bu.chart_range();
    let step = system.edge_length(top);
    let mut occ = vec![Rat::zero(); g.edge_count()];
    for line in &rep.lines {
        for &e in line.chain.edges() {
            occ[e] += &line.weight * &step;
        }
    }
    let mut rows = Vec::new();
    for (e, edge) in g.edges().iter().enumerate() {
        let (a, b) = (&phi[edge.u], &phi[edge.v]);
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        if a < &lo || b > &hi {
            continue;
        }
        rows.push((e, &edge.mass / &norm, &occ[e] / &norm));
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct VariationRow {
    pub r_hat: f64,
    pub var: f64,
    pub predicted: f64,
}

impl VariationRow {
    pub fn residual(&self) -> f64 {
        (self.var - self.predicted).abs()
    }
}

/// Largest change of the chart-affine function alpha * phi_hat over zoomed
/// balls, against the law var = r * |alpha|. The supremum is scanned edge
/// by edge in exact arithmetic.
pub fn variation_check(
    bu: &Blowup<'_>,
    alpha: &Rat,
    centers: &[LimitPoint],
    radii_hat: &[Rat],
) -> Result<Vec<VariationRow>> {
    let system = bu.space().system();
    let top = bu.space().depth();
    let g = system.level_graph(top)?;
    let phi = system.phi_values(top)?;
    let mut rows = Vec::new();
    for y in centers {
        let phi_y = bu.space().phi(y)?;
        for r_hat in radii_hat {
            let rho = r_hat * &bu.scale;
            let dist = g.bounded_distances_from(y.top(), &rho)?;
            let mut sup = Rat::zero();
            for edge in g.edges() {
                for (end, other) in [(edge.u, edge.v), (edge.v, edge.u)] {
                    let Some(d0) = dist[end].as_ref() else { continue };
                    let reach = &rho - d0;
                    if reach < Rat::zero() {
                        continue;
                    }
                    let span = if reach < edge.length { reach } else { edge.length.clone() };
                    let dir = if phi[other] >= phi[end] { Rat::one() } else { -Rat::one() };
                    for endpoint in [&phi[end] + &dir * &span, phi[end].clone()] {
                        let gap = (&endpoint - &phi_y).abs();
                        if gap > sup {
                            sup = gap;
                        }
                    }
                }
            }
            rows.push(VariationRow {
                r_hat: rat_to_f64(r_hat),
                var: rat_to_f64(&(&sup * &alpha.abs())) / rat_to_f64(&bu.scale),
                predicted: rat_to_f64(&(r_hat * &alpha.abs())),
            });
        }
    }
    Ok(rows)
}

/// Finite metric tree target; distances are path distances in the graph.
pub struct TreeTarget {
    graph: MetricGraph,
}

impl TreeTarget {
    pub fn new(graph: MetricGraph) -> Result<TreeTarget> {
        let v = graph.vertex_count();
        let mut parent: Vec<usize> = (0..v).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let root = find(parent, parent[x]);
                parent[x] = root;
            }
            parent[x]
        }
        for edge in graph.edges() {
            let (a, b) = (find(&mut parent, edge.u), find(&mut parent, edge.v));
            if a == b {
                return Err(MdlError::NotATree("target graph contains a cycle".into()));
            }
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        if (0..v).any(|x| find(&mut parent, x) != root) {
            return Err(MdlError::NotATree("target graph is disconnected".into()));
        }
        Ok(TreeTarget { graph })
    }

    /// Star tree: one center, `legs` tips at the given distance.
    pub fn star(legs: usize, leg_length: Rat) -> Result<TreeTarget> {
        if legs == 0 {
            return Err(MdlError::BadArgument("a star needs at least one leg".into()));
        }
        let edges = (0..legs)
            .map(|i| (0usize, i + 1, leg_length.clone(), Rat::one()))
            .collect();
        TreeTarget::new(MetricGraph::new(legs + 1, edges, 0)?)
    }

    pub fn graph(&self) -> &MetricGraph {
        &self.graph
    }

    pub fn distance(&self, a: &GraphPoint, b: &GraphPoint) -> Result<Rat> {
        self.graph.path_distance(a, b)
    }
}

/// Value of a map into the factoring target.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetPoint {
    Real(Rat),
    Tree(GraphPoint),
}

pub enum FactorTarget {
    Line,
    Tree(TreeTarget),
}

impl FactorTarget {
    pub fn distance(&self, a: &TargetPoint, b: &TargetPoint) -> Result<Rat> {
        match (self, a, b) {
            (FactorTarget::Line, TargetPoint::Real(x), TargetPoint::Real(y)) => Ok((x - y).abs()),
            (FactorTarget::Tree(t), TargetPoint::Tree(x), TargetPoint::Tree(y)) => {
                t.distance(x, y)
            }
            _ => Err(MdlError::BadArgument("map value does not live in the target".into())),
        }
    }
}

/// Map from the limit space into a factoring target.
pub struct MapOracle<'a> {
    name: String,
    f: Box<dyn Fn(&LimitPoint) -> Result<TargetPoint> + Sync + 'a>,
}

impl<'a> MapOracle<'a> {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&LimitPoint) -> Result<TargetPoint> + Sync + 'a,
    ) -> Self {
        MapOracle { name: name.into(), f: Box::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &LimitPoint) -> Result<TargetPoint> {
        (self.f)(x)
    }
}

/// The chart itself as a line-valued map.
pub fn chart_map(space: &LimitSpace) -> MapOracle<'_> {
    MapOracle::new("chart", move |x| Ok(TargetPoint::Real(space.phi(x)?)))
}

/// A scalar reparameterization of the chart.
pub fn composed_chart_map<'a>(
    space: &'a LimitSpace,
    name: impl Into<String>,
    psi: impl Fn(&Rat) -> Rat + Sync + 'a,
) -> MapOracle<'a> {
    MapOracle::new(name, move |x| Ok(TargetPoint::Real(psi(&space.phi(x)?))))
}

/// Component id per deepest-level edge after cutting the chart-boundary
/// vertices; parallel sheets of tube-like towers get distinct ids.
pub fn boundary_cut_components(space: &LimitSpace) -> Result<Vec<usize>> {
    let system = space.system();
    let top = space.depth();
    let g = system.level_graph(top)?;
    let phi = system.phi_values(top)?;
    let interior =
        |v: usize| phi[v] > Rat::zero() && phi[v] < Rat::one();
    let mut parent: Vec<usize> = (0..g.edge_count()).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let root = find(parent, parent[x]);
            parent[x] = root;
        }
        parent[x]
    }
    for v in 0..g.vertex_count() {
        if !interior(v) {
            continue;
        }
        let star = g.star(v)?;
        for w in star.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if a != b {
                parent[a] = b;
            }
        }
    }
    let mut ids = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(g.edge_count());
    for e in 0..g.edge_count() {
        let root = find(&mut parent, e);
        let next = ids.len();
        out.push(*ids.entry(root).or_insert(next));
    }
    Ok(out)
}

/// Folds every sheet onto a leg of a star tree at parameter
/// min(phi, 1 - phi). Distinct sheets map to distinct legs, so the map is
/// 1-Lipschitz but cannot factor through the chart when sheets stay apart.
pub fn sheet_fold_map(space: &LimitSpace) -> Result<(TreeTarget, MapOracle<'_>)> {
    let components = boundary_cut_components(space)?;
    let legs = components.iter().max().map_or(1, |&m| m + 1);
    let tree = TreeTarget::star(legs, crate::rational::rat(1, 2))?;
    let target_graph = tree.graph().clone();
    let oracle = MapOracle::new("sheet fold", move |x: &LimitPoint| {
        let system = space.system();
        let top = space.depth();
        let g = system.level_graph(top)?;
        let phi_x = space.phi(x)?;
        let one_minus = Rat::one() - &phi_x;
        let param = if phi_x <= one_minus { phi_x.clone() } else { one_minus };
        if param.is_zero() {
            return Ok(TargetPoint::Tree(GraphPoint::Vertex(0)));
        }
        let edge = match x.top() {
            GraphPoint::Interior { edge, .. } => *edge,
            GraphPoint::Vertex(v) => *g
                .star(*v)?
                .first()
                .ok_or_else(|| MdlError::InvalidSystem(format!("isolated vertex {v}")))?,
        };
        Ok(TargetPoint::Tree(target_graph.point_on_edge(components[edge], param)?))
    });
    Ok((tree, oracle))
}

#[derive(Debug, Clone)]
pub struct LineSpeedRow {
    pub speed: f64,
    pub constancy_defect: f64,
}

#[derive(Debug, Clone)]
pub struct FactoringReport {
    pub lines: Vec<LineSpeedRow>,
    pub median_speed: f64,
    pub max_constancy_defect: f64,
    pub fiber_defects: Vec<f64>,
    pub max_fiber_defect: f64,
    /// Whether parallel branches reconverge within the expected span; when
    /// false the factoring hypotheses fail and persistent fiber defects are
    /// expected.
    pub bigon_bounded: bool,
}

/// Speed constancy along blown monotone lines and collapse of chart fibers
/// under the map, the two halves of factoring through the chart.
pub fn factoring_check<R: Rng + ?Sized>(
    bu: &Blowup<'_>,
    target: &FactorTarget,
    map: &MapOracle<'_>,
    rep: &MonotoneRep,
    fiber_samples: usize,
    rng: &mut R,
) -> Result<FactoringReport> {
    let space = bu.space();
    let system = space.system();
    let (chart_lo, chart_hi) = bu.chart_range();
    let segments = 8;
    let mut lines = Vec::new();
    for line in &rep.lines {
        let lo_phi = line.chain.phi_start(system)?;
        let hi_phi = line.chain.phi_end(system)?;
        let lo = if chart_lo > lo_phi { chart_lo.clone() } else { lo_phi };
        let hi = if chart_hi < hi_phi { chart_hi.clone() } else { hi_phi };
        if hi <= lo {
            continue;
        }
        let mut values = Vec::with_capacity(segments + 1);
        for j in 0..=segments {
            let t = &lo + (&hi - &lo) * rat_int(j as i64) / rat_int(segments as i64);
            let gp = line.chain.eval_at_phi(system, &t)?;
            values.push((t, map.eval(&space.point(gp)?)?));
        }
        let mut speeds = Vec::with_capacity(segments);
        for w in values.windows(2) {
            let d = target.distance(&w[0].1, &w[1].1)?;
            let dt = &w[1].0 - &w[0].0;
            speeds.push(rat_to_f64(&(d / dt)));
        }
        speeds.sort_by(f64::total_cmp);
        lines.push(LineSpeedRow {
            speed: speeds[speeds.len() / 2],
            constancy_defect: speeds.last().unwrap() - speeds.first().unwrap(),
        });
    }

    let scale_factor = rat_pow(system.m(), bu.scale_index() as i32);
    let mut fiber_defects = Vec::new();
    let heights = bu.window_points(rng, fiber_samples)?;
    for h in &heights {
        let t_hat = bu.phi_hat(h)?;
        let fiber = bu.fiber_points(&t_hat)?;
        let values: Vec<TargetPoint> = fiber
            .iter()
            .take(24)
            .map(|z| map.eval(z))
            .collect::<Result<_>>()?;
        for i in 0..values.len() {
            for j in (i + 1)..values.len() {
                let d = target.distance(&values[i], &values[j])?;
                fiber_defects.push(rat_to_f64(&(&d * &scale_factor)));
            }
        }
    }

    let mut speeds: Vec<f64> = lines.iter().map(|l| l.speed).collect();
    speeds.sort_by(f64::total_cmp);
    let median_speed = if speeds.is_empty() { 0.0 } else { speeds[speeds.len() / 2] };
    let bigon = check_monotone_bigon(system, space.depth().min(3), 64)?;
    Ok(FactoringReport {
        median_speed,
        max_constancy_defect: lines
            .iter()
            .map(|l| l.constancy_defect)
            .fold(0.0, f64::max),
        lines,
        max_fiber_defect: fiber_defects.iter().copied().fold(0.0, f64::max),
        fiber_defects,
        bigon_bounded: bigon.bounded_by(2 * system.m()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alberti::rep_speed_band;
    use crate::rational::rat;
    use crate::system::{GrowthRule, InverseSystem};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn laakso(depth: usize) -> LimitSpace {
        LimitSpace::new(InverseSystem::generate(2, GrowthRule::Periodic, depth).unwrap())
    }

    #[test]
    fn sigma_stays_in_range_on_generic_points() {
        let space = laakso(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = space.generic_point(&mut rng, 8).unwrap();
            let bu = Blowup::new(&space, p, 2, rat_int(2)).unwrap();
            let m = space.system().m() as f64;
            assert!(bu.sigma() >= 1.0 && bu.sigma() <= m, "sigma {}", bu.sigma());
            let a = bu.alignment();
            assert!(a > &Rat::zero() && a < &Rat::one());
        }
    }

    #[test]
    fn boundary_points_are_rejected() {
        let space = laakso(3);
        let p = space.vertex_point(0).unwrap();
        let phi = space.phi(&p).unwrap();
        assert!(phi.is_zero() || phi.is_one());
        assert!(matches!(
            Blowup::new(&space, p, 1, rat_int(1)),
            Err(MdlError::BadPoint(_))
        ));
    }

    #[test]
    fn chart_recenters_exactly() {
        let space = laakso(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = space.generic_point(&mut rng, 6).unwrap();
        let bu = Blowup::new(&space, p.clone(), 2, rat_int(2)).unwrap();
        assert!(bu.phi_hat(&p).unwrap().is_zero());
        for q in bu.window_points(&mut rng, 10).unwrap() {
            let direct = (space.phi(&q).unwrap() - space.phi(&p).unwrap()) / bu.scale();
            assert_eq!(bu.phi_hat(&q).unwrap(), direct);
            assert!(bu.in_window(&q).unwrap());
        }
    }

    #[test]
    fn normalization_bracket_wraps_one() {
        let space = laakso(5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = space.generic_point(&mut rng, 8).unwrap();
        let bu = Blowup::new(&space, p, 2, rat_int(2)).unwrap();
        let (c_lo, c_hi) = bu.normalization_constant().unwrap();
        let r = rat_from_f64(1.0 / bu.sigma()).unwrap();
        let (nu_lo, nu_hi) = bu.measure_hat(bu.basepoint(), &r).unwrap();
        assert!(c_lo * nu_lo <= 1.0 + 1e-12);
        assert!(c_hi * nu_hi >= 1.0 - 1e-12);
    }

    #[test]
    fn submersion_defects_shrink_with_depth() {
        let mut medians = Vec::new();
        for depth in [3, 4, 5] {
            let space = laakso(depth);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let p = space.generic_point(&mut rng, 8).unwrap();
            let bu = Blowup::new(&space, p, 1, rat_int(2)).unwrap();
            let report = submersion_check(&bu, 40, &mut rng).unwrap();
            assert_eq!(report.lipschitz_violations, 0);
            assert_eq!(report.empty_fibers, 0);
            assert_eq!(report.max_est_defect(), 0.0);
            let bound = rat_to_f64(&bu.slack_hat());
            assert!(report.median_bracket_defect() <= bound + 1e-12);
            medians.push(report.median_bracket_defect());
        }
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }

    #[test]
    fn blown_lines_are_affine_unit_speed() {
        let space = laakso(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = space.generic_point(&mut rng, 6).unwrap();
        let bu = Blowup::new(&space, p, 1, rat_int(2)).unwrap();
        let rep = MonotoneRep::sampled(space.system(), 40, &mut rng).unwrap();
        let blown = blow_up_rep(&bu, &rep, 6).unwrap();
        assert!(!blown.lines.is_empty());
        for line in &blown.lines {
            let frag = &line.fragment;
            let offsets: Vec<f64> = frag
                .times()
                .iter()
                .zip(frag.points())
                .map(|(&t, p)| rat_to_f64(&bu.phi_hat(p).unwrap()) - t)
                .collect();
            for w in offsets.windows(2) {
                assert!((w[1] - w[0]).abs() < 1e-12, "chart drifted along the line");
            }
        }
        let rho = bu.metric();
        let band = rep_speed_band(&blown, &rho, 1e-9);
        assert!((band.min - 1.0).abs() < 1e-9 && (band.max - 1.0).abs() < 1e-9);
    }

    #[test]
    fn variation_matches_the_radius_law() {
        let space = laakso(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = space.generic_point(&mut rng, 6).unwrap();
        let bu = Blowup::new(&space, p.clone(), 1, rat_int(2)).unwrap();
        let radii = [rat(1, 4), rat(1, 2), rat_int(1)];
        for row in variation_check(&bu, &rat_int(1), &[p.clone()], &radii).unwrap() {
            assert_eq!(row.residual(), 0.0, "r_hat {}", row.r_hat);
        }
        for row in variation_check(&bu, &rat(-3, 2), &[p.clone()], &radii).unwrap() {
            assert_eq!(row.residual(), 0.0);
        }
        for row in variation_check(&bu, &Rat::zero(), &[p], &radii).unwrap() {
            assert_eq!(row.var, 0.0);
            assert_eq!(row.predicted, 0.0);
        }
    }

    #[test]
    fn chart_factors_exactly_through_itself() {
        let space = laakso(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = space.generic_point(&mut rng, 6).unwrap();
        let bu = Blowup::new(&space, p, 1, rat_int(2)).unwrap();
        let rep = MonotoneRep::sampled(space.system(), 30, &mut rng).unwrap();
        let map = chart_map(&space);
        let report =
            factoring_check(&bu, &FactorTarget::Line, &map, &rep, 10, &mut rng).unwrap();
        assert_eq!(report.max_constancy_defect, 0.0);
        assert_eq!(report.median_speed, 1.0);
        assert_eq!(report.max_fiber_defect, 0.0);
        assert!(report.bigon_bounded);
    }

    #[test]
    fn reparameterized_chart_recovers_the_slope() {
        let space = laakso(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = space
            .generic_point(&mut rng, 8)
            .unwrap();
        let bu = Blowup::new(&space, p.clone(), 3, rat_int(2)).unwrap();
        let rep = MonotoneRep::sampled(space.system(), 30, &mut rng).unwrap();
        let kink = rat(1, 4);
        let map = composed_chart_map(&space, "kinked", move |t| {
            let bent = t - &kink;
            if bent > Rat::zero() {
                t / rat_int(2) + bent / rat_int(2)
            } else {
                t / rat_int(2)
            }
        });
        let phi_p = space.phi(&p).unwrap();
        let expected = if phi_p > rat(1, 4) { 1.0 } else { 0.5 };
        let (lo, hi) = bu.chart_range();
        // window clear of the kink, so the map is affine across it
        if (lo - rat(1, 4)).abs() < bu.scale().clone() || (hi - rat(1, 4)).abs() < bu.scale().clone() {
            return;
        }
        let report =
            factoring_check(&bu, &FactorTarget::Line, &map, &rep, 10, &mut rng).unwrap();
        assert!((report.median_speed - expected).abs() < 1e-9);
        assert_eq!(report.max_fiber_defect, 0.0);
    }

    #[test]
    fn fold_map_spread_persists_on_tube_towers() {
        let tube = LimitSpace::new(InverseSystem::generate(2, GrowthRule::Tube, 3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = tube.generic_point(&mut rng, 6).unwrap();
        let bu = Blowup::new(&tube, p, 0, rat(1, 2)).unwrap();
        let rep = MonotoneRep::sampled(tube.system(), 20, &mut rng).unwrap();
        let (tree, map) = sheet_fold_map(&tube).unwrap();
        let report = factoring_check(
            &bu,
            &FactorTarget::Tree(tree),
            &map,
            &rep,
            10,
            &mut rng,
        )
        .unwrap();
        assert!(!report.bigon_bounded, "tube bigons should blow up");
        assert!(report.max_fiber_defect > 0.5, "defect {}", report.max_fiber_defect);
    }

    #[test]
    fn cyclic_targets_are_rejected() {
        let cycle = MetricGraph::new(
            3,
            vec![
                (0, 1, Rat::one(), Rat::one()),
                (1, 2, Rat::one(), Rat::one()),
                (2, 0, Rat::one(), Rat::one()),
            ],
            0,
        )
        .unwrap();
        assert!(matches!(TreeTarget::new(cycle), Err(MdlError::NotATree(_))));
    }
}
