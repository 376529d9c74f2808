//! Curve-fragment representations of measures: a finite family of weighted
//! fragments with line densities whose occupation integrals reassemble the
//! measure. The Fubini model covers the unit cube; the monotone model
//! covers tower limits, where branch walks weighted by edge masses make the
//! representation exact on cylinder sets.

use rand::Rng;

use crate::error::{MdlError, Result};
use crate::fragment::{local_speeds, Domain, Fragment};
use crate::limit::{LimitPoint, LimitSpace};
use crate::rational::{rat_from_f64, rat_int, rat_to_f64, Rat};
use crate::space::Pseudometric;
use crate::system::{InverseSystem, MonotoneChain};
use num_traits::{One, Signed, Zero};

/// Line density along one fragment, sampled on the fragment's grid.
#[derive(Debug, Clone)]
pub enum Density {
    Const(f64),
    Piecewise(Vec<f64>),
}

impl Density {
    pub fn at(&self, idx: usize) -> f64 {
        match self {
            Density::Const(c) => *c,
            Density::Piecewise(v) => v[idx],
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Density::Const(_))
    }
}

#[derive(Debug, Clone)]
pub struct RepLine<P> {
    pub fragment: Fragment<P>,
    pub weight: f64,
    pub density: Density,
}

/// Weighted fragments with densities; integrates functions against the
/// represented measure by per-line quadrature.
#[derive(Debug, Clone)]
pub struct AlbertiRep<P> {
    pub lines: Vec<RepLine<P>>,
}

impl<P> AlbertiRep<P> {
    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn integrate(&self, g: impl Fn(&P) -> f64) -> f64 {
        let mut total = 0.0;
        for line in &self.lines {
            let frag = &line.fragment;
            let times = frag.times();
            let points = frag.points();
            let mut acc = 0.0;
            for j in 0..times.len().saturating_sub(1) {
                let dt = times[j + 1] - times[j];
                if dt > frag.grid_step() * 1.5 {
                    continue;
                }
                let a = g(&points[j]) * line.density.at(j);
                let b = g(&points[j + 1]) * line.density.at(j + 1);
                acc += 0.5 * (a + b) * dt;
            }
            total += line.weight * acc;
        }
        total
    }

    pub fn total_mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    /// Densities multiplied by the indicator of the predicate.
    pub fn restrict(&self, pred: impl Fn(&P) -> bool) -> AlbertiRep<P>
    where
        P: Clone,
    {
        let lines = self
            .lines
            .iter()
            .map(|line| {
                let masked = line
                    .fragment
                    .points()
                    .iter()
                    .enumerate()
                    .map(|(j, p)| if pred(p) { line.density.at(j) } else { 0.0 })
                    .collect();
                RepLine {
                    fragment: line.fragment.clone(),
                    weight: line.weight,
                    density: Density::Piecewise(masked),
                }
            })
            .collect();
        AlbertiRep { lines }
    }

    /// Concatenates the parts of a finite partition back together.
    pub fn glue(parts: Vec<AlbertiRep<P>>) -> AlbertiRep<P> {
        AlbertiRep { lines: parts.into_iter().flat_map(|r| r.lines).collect() }
    }
}

/// A named integrand with the measure value it should reproduce.
pub struct TestFunction<'a, P> {
    pub name: String,
    pub target: f64,
    pub f: Box<dyn Fn(&P) -> f64 + Sync + 'a>,
}

impl<'a, P> TestFunction<'a, P> {
    pub fn new(name: impl Into<String>, target: f64, f: impl Fn(&P) -> f64 + Sync + 'a) -> Self {
        TestFunction { name: name.into(), target, f: Box::new(f) }
    }
}

#[derive(Debug, Clone)]
pub struct ResidualRow {
    pub name: String,
    pub target: f64,
    pub estimate: f64,
}

impl ResidualRow {
    pub fn residual(&self) -> f64 {
        (self.estimate - self.target).abs()
    }
}

pub fn verify_rep<P>(rep: &AlbertiRep<P>, tests: &[TestFunction<'_, P>]) -> Vec<ResidualRow> {
    tests
        .iter()
        .map(|t| ResidualRow {
            name: t.name.clone(),
            target: t.target,
            estimate: rep.integrate(&t.f),
        })
        .collect()
}

/// Parallel unit-speed lines along one axis of [0,1]^dim, one per transverse
/// grid cell, weighted by the cell volume.
pub fn fubini_rep(dim: usize, axis: usize, grid: usize, resolution: u32) -> Result<AlbertiRep<Vec<f64>>> {
    if dim == 0 || axis >= dim {
        return Err(MdlError::BadArgument(format!(
            "axis {axis} does not fit dimension {dim}"
        )));
    }
    if grid == 0 {
        return Err(MdlError::BadArgument("empty transverse grid".into()));
    }
    let transverse = dim - 1;
    let cells = grid.pow(transverse as u32);
    let weight = 1.0 / cells as f64;
    let mut lines = Vec::with_capacity(cells);
    let mut index = vec![0usize; transverse];
    for _ in 0..cells {
        let mut base = vec![0.0; dim];
        let mut k = 0;
        for d in 0..dim {
            if d == axis {
                continue;
            }
            base[d] = (index[k] as f64 + 0.5) / grid as f64;
            k += 1;
        }
        let fragment = Fragment::from_fn(Domain::interval(0.0, 1.0), resolution, |t| {
            let mut p = base.clone();
            p[axis] = t;
            p
        });
        lines.push(RepLine { fragment, weight, density: Density::Const(1.0) });
        for d in (0..transverse).rev() {
            index[d] += 1;
            if index[d] < grid {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(AlbertiRep { lines })
}

/// Index into nonnegative weights by a uniform draw over their total.
fn cdf_pick(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u * total < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn up_mass(system: &InverseSystem, level: usize, v: usize) -> Result<Rat> {
    let g = system.level_graph(level)?;
    let phi = system.phi_values(level)?;
    let mut s = Rat::zero();
    for &e in g.star(v)? {
        let w = g.other_endpoint(e, v)?;
        if phi[w] > phi[v] {
            s += &g.edge(e)?.mass;
        }
    }
    Ok(s)
}

fn has_down_edge(system: &InverseSystem, level: usize, v: usize) -> Result<bool> {
    let g = system.level_graph(level)?;
    let phi = system.phi_values(level)?;
    for &e in g.star(v)? {
        if phi[g.other_endpoint(e, v)?] < phi[v] {
            return Ok(true);
        }
    }
    Ok(false)
}

fn bottom_vertices(system: &InverseSystem, level: usize) -> Result<Vec<usize>> {
    let g = system.level_graph(level)?;
    let mut out = Vec::new();
    for v in 0..g.vertex_count() {
        if !has_down_edge(system, level, v)? && !up_mass(system, level, v)?.is_zero() {
            out.push(v);
        }
    }
    Ok(out)
}

/// Probability of the chain under the mass-weighted branch walk: start at
/// the bottom vertex with its share of the bottom rank, then take each edge
/// with its share of the upward mass.
fn chain_weight(system: &InverseSystem, chain: &MonotoneChain) -> Result<Rat> {
    let level = chain.level();
    let g = system.level_graph(level)?;
    let mut total = Rat::zero();
    for v in bottom_vertices(system, level)? {
        total += up_mass(system, level, v)?;
    }
    if total.is_zero() {
        return Err(MdlError::InvalidSystem("no upward mass at the bottom".into()));
    }
    let mut w = up_mass(system, level, chain.start_vertex())? / total;
    for (k, &e) in chain.edges().iter().enumerate() {
        let v = chain.vertices()[k];
        w = w * &g.edge(e)?.mass / up_mass(system, level, v)?;
    }
    Ok(w)
}

#[derive(Debug, Clone)]
pub struct MonotoneLine {
    pub chain: MonotoneChain,
    pub weight: Rat,
}

/// Monotone chains at the deepest level with exact rational weights.
#[derive(Debug, Clone)]
pub struct MonotoneRep {
    pub lines: Vec<MonotoneLine>,
}

impl MonotoneRep {
    /// Every maximal monotone chain, grown from the base level by lifting,
    /// weighted by its exact branch-product probability. Errors when the
    /// chain count would pass `cap`.
    pub fn exact(system: &InverseSystem, cap: usize) -> Result<MonotoneRep> {
        let mut chains = Vec::new();
        let mut stack: Vec<MonotoneChain> = bottom_vertices(system, 0)?
            .into_iter()
            .map(|v| MonotoneChain::at_vertex(system, 0, v))
            .collect::<Result<_>>()?;
        while let Some(chain) = stack.pop() {
            let ups = chain.up_candidates(system)?;
            if ups.is_empty() {
                chains.push(chain);
                continue;
            }
            for e in ups {
                let mut ext = chain.clone();
                ext.extend_up(system, e)?;
                stack.push(ext);
            }
            if chains.len() + stack.len() > cap {
                return Err(MdlError::BadArgument(format!("more than {cap} chains")));
            }
        }
        for level in 0..system.depth() {
            let mut next = Vec::new();
            for chain in &chains {
                next.extend(chain.lift_all(system)?);
                if next.len() > cap {
                    return Err(MdlError::BadArgument(format!(
                        "more than {cap} chains at level {}",
                        level + 1
                    )));
                }
            }
            chains = next;
        }
        let lines = chains
            .into_iter()
            .map(|chain| Ok(MonotoneLine { weight: chain_weight(system, &chain)?, chain }))
            .collect::<Result<_>>()?;
        Ok(MonotoneRep { lines })
    }

    /// Mass-weighted branch walks from the bottom of the deepest level,
    /// each carrying empirical weight 1/budget. Walks come in antithetic
    /// pairs sharing a flipped uniform stream, which cancels the sampling
    /// noise of single-branch events outright for even mass splits.
    pub fn sampled<R: Rng + ?Sized>(
        system: &InverseSystem,
        budget: usize,
        rng: &mut R,
    ) -> Result<MonotoneRep> {
        if budget == 0 {
            return Err(MdlError::BadArgument("empty line budget".into()));
        }
        let level = system.depth();
        let bottoms = bottom_vertices(system, level)?;
        let starts: Vec<f64> = bottoms
            .iter()
            .map(|&v| Ok(rat_to_f64(&up_mass(system, level, v)?)))
            .collect::<Result<_>>()?;
        let w = Rat::one() / rat_int(budget as i64);
        let mut lines = Vec::with_capacity(budget);
        while lines.len() < budget {
            let mut stream = Vec::new();
            for flip in [false, true] {
                if lines.len() == budget {
                    break;
                }
                let mut cursor = 0usize;
                let mut draw = |rng: &mut R| {
                    let u = if cursor < stream.len() {
                        stream[cursor]
                    } else {
                        let u = rng.random::<f64>();
                        stream.push(u);
                        u
                    };
                    cursor += 1;
                    if flip {
                        1.0 - u
                    } else {
                        u
                    }
                };
                let v = bottoms[cdf_pick(&starts, draw(rng))];
                let mut chain = MonotoneChain::at_vertex(system, level, v)?;
                loop {
                    let cands = chain.up_candidates(system)?;
                    match cands.len() {
                        0 => break,
                        1 => chain.extend_up(system, cands[0])?,
                        _ => {
                            let g = system.level_graph(level)?;
                            let masses: Vec<f64> = cands
                                .iter()
                                .map(|&e| Ok(rat_to_f64(&g.edge(e)?.mass)))
                                .collect::<Result<_>>()?;
                            let e = cands[cdf_pick(&masses, draw(rng))];
                            chain.extend_up(system, e)?;
                        }
                    }
                }
                lines.push(MonotoneLine { chain, weight: w.clone() });
            }
        }
        Ok(MonotoneRep { lines })
    }

    pub fn total_weight(&self) -> Rat {
        self.lines.iter().map(|l| &l.weight).sum()
    }

    /// Occupation of the cylinder over one edge of a shallower level:
    /// weighted time the chains spend above that edge.
    pub fn cylinder_occupation(
        &self,
        system: &InverseSystem,
        level: usize,
        edge: usize,
    ) -> Result<Rat> {
        let top = match self.lines.first() {
            Some(l) => l.chain.level(),
            None => return Ok(Rat::zero()),
        };
        let anc = system.ancestor_edges(top, level)?;
        let step = system.edge_length(top);
        let mut occ = Rat::zero();
        for line in &self.lines {
            let hits = line.chain.edges().iter().filter(|&&e| anc[e] == edge).count();
            occ += &line.weight * &step * rat_int(hits as i64);
        }
        Ok(occ)
    }

    /// Weighted time the chains spend with the level map inside [lo, hi].
    pub fn window_occupation(&self, system: &InverseSystem, lo: &Rat, hi: &Rat) -> Result<Rat> {
        let mut occ = Rat::zero();
        for line in &self.lines {
            let level = line.chain.level();
            let phi = system.phi_values(level)?;
            let mut inside = Rat::zero();
            for (k, _) in line.chain.edges().iter().enumerate() {
                let a = &phi[line.chain.vertices()[k]];
                let b = &phi[line.chain.vertices()[k + 1]];
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                let lo_k = if lo > a { lo } else { a };
                let hi_k = if hi < b { hi } else { b };
                if hi_k > lo_k {
                    inside += hi_k - lo_k;
                }
            }
            occ += &line.weight * inside;
        }
        Ok(occ)
    }

    /// Per-cylinder occupation against edge mass for every level up to
    /// `max_level`, in exact arithmetic.
    pub fn residual_table(
        &self,
        system: &InverseSystem,
        max_level: usize,
    ) -> Result<Vec<CellResidual>> {
        let top = match self.lines.first() {
            Some(l) => l.chain.level(),
            None => return Err(MdlError::BadArgument("empty representation".into())),
        };
        let step = system.edge_length(top);
        let mut rows = Vec::new();
        for level in 0..=max_level.min(top) {
            let g = system.level_graph(level)?;
            let anc = system.ancestor_edges(top, level)?;
            let mut occ = vec![Rat::zero(); g.edge_count()];
            for line in &self.lines {
                for &e in line.chain.edges() {
                    occ[anc[e]] += &line.weight * &step;
                }
            }
            for (edge, estimate) in occ.into_iter().enumerate() {
                rows.push(CellResidual {
                    level,
                    edge,
                    target: g.edge(edge)?.mass.clone(),
                    estimate,
                });
            }
        }
        Ok(rows)
    }

    /// Fragment form: each chain sampled by arclength on a dyadic grid.
    pub fn to_alberti(&self, space: &LimitSpace, resolution: u32) -> Result<AlbertiRep<LimitPoint>> {
        let mut lines = Vec::with_capacity(self.lines.len());
        for line in &self.lines {
            let span = line.chain.span(space.system());
            let span_f = rat_to_f64(&span);
            if span_f <= 0.0 {
                return Err(MdlError::BadArgument("chain with empty span".into()));
            }
            let chain = line.chain.clone();
            let fragment = Fragment::from_fn(Domain::interval(0.0, span_f), resolution, |t| {
                let mut tr = rat_from_f64(t).unwrap_or_else(Rat::zero);
                if tr > span {
                    tr = span.clone();
                }
                if tr < Rat::zero() {
                    tr = Rat::zero();
                }
                space
                    .chain_point(&chain, &tr)
                    .expect("parameter stays on the chain")
            });
            lines.push(RepLine {
                fragment,
                weight: rat_to_f64(&line.weight),
                density: Density::Const(1.0),
            });
        }
        Ok(AlbertiRep { lines })
    }
}

/// Probability that the branch walk covers each edge, by forward recursion
/// in increasing order of the level map. No enumeration: the mass-split
/// products are integrated edge by edge.
pub fn branch_marginals(system: &InverseSystem, level: usize) -> Result<Vec<Rat>> {
    let g = system.level_graph(level)?;
    let phi = system.phi_values(level)?;
    let mut order: Vec<usize> = (0..g.vertex_count()).collect();
    order.sort_by(|&a, &b| phi[a].cmp(&phi[b]));

    let mut total = Rat::zero();
    for v in bottom_vertices(system, level)? {
        total += up_mass(system, level, v)?;
    }
    if total.is_zero() {
        return Err(MdlError::InvalidSystem("no upward mass at the bottom".into()));
    }

    let mut cover = vec![Rat::zero(); g.edge_count()];
    for &v in &order {
        let mut inflow = Rat::zero();
        let mut has_down = false;
        for &e in g.star(v)? {
            if phi[g.other_endpoint(e, v)?] < phi[v] {
                has_down = true;
                inflow += &cover[e];
            }
        }
        let up = up_mass(system, level, v)?;
        if !has_down {
            inflow = &up / &total;
        }
        if up.is_zero() {
            continue;
        }
        for &e in g.star(v)? {
            if phi[g.other_endpoint(e, v)?] > phi[v] {
                cover[e] = &inflow * &g.edge(e)?.mass / &up;
            }
        }
    }
    Ok(cover)
}

/// Expected cylinder occupations of the branch walk against edge masses,
/// from the analytic marginals. Exact arithmetic throughout.
pub fn analytic_residual_table(
    system: &InverseSystem,
    max_level: usize,
) -> Result<Vec<CellResidual>> {
    let top = system.depth();
    let cover = branch_marginals(system, top)?;
    let step = system.edge_length(top);
    let mut rows = Vec::new();
    for level in 0..=max_level.min(top) {
        let g = system.level_graph(level)?;
        let anc = system.ancestor_edges(top, level)?;
        let mut occ = vec![Rat::zero(); g.edge_count()];
        for (e, p) in cover.iter().enumerate() {
            occ[anc[e]] += p * &step;
        }
        for (edge, estimate) in occ.into_iter().enumerate() {
            rows.push(CellResidual {
                level,
                edge,
                target: g.edge(edge)?.mass.clone(),
                estimate,
            });
        }
    }
    Ok(rows)
}

/// Sampled monotone representation at the deepest level of the space.
pub fn monotone_rep(space: &LimitSpace, budget: usize, seed: u64) -> Result<MonotoneRep> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    MonotoneRep::sampled(space.system(), budget, &mut rng)
}

#[derive(Debug, Clone)]
pub struct CellResidual {
    pub level: usize,
    pub edge: usize,
    pub target: Rat,
    pub estimate: Rat,
}

impl CellResidual {
    pub fn residual(&self) -> Rat {
        (&self.estimate - &self.target).abs()
    }
}

/// Directional cone around an axis; membership is by angle.
#[derive(Debug, Clone)]
pub struct Cone {
    axis: Vec<f64>,
    cos_angle: f64,
}

impl Cone {
    pub fn new(axis: Vec<f64>, angle: f64) -> Result<Cone> {
        let norm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(MdlError::BadArgument("cone axis must be nonzero".into()));
        }
        if !(0.0..=std::f64::consts::PI).contains(&angle) {
            return Err(MdlError::BadArgument("cone angle outside [0, pi]".into()));
        }
        Ok(Cone {
            axis: axis.iter().map(|x| x / norm).collect(),
            cos_angle: angle.cos(),
        })
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return false;
        }
        let dot: f64 = self.axis.iter().zip(v).map(|(a, x)| a * x).sum();
        dot / norm >= self.cos_angle - 1e-12
    }
}

/// Measure-weighted outcome of a per-sample check along a representation.
#[derive(Debug, Clone, Default)]
pub struct ConeSpeedReport {
    pub checked: f64,
    pub violating: f64,
}

impl ConeSpeedReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.checked <= 0.0 {
            0.0
        } else {
            self.violating / self.checked
        }
    }
}

/// Checks at interior samples that the chart velocity stays in the cone and
/// that f gains at least sigma times the metric speed.
pub fn cone_speed_check<P>(
    rep: &AlbertiRep<P>,
    f: impl Fn(&P) -> f64,
    chart: impl Fn(&P) -> Vec<f64>,
    cone: &Cone,
    sigma: impl Fn(&P) -> f64,
    rho: &Pseudometric<'_, P>,
    tol: f64,
) -> ConeSpeedReport {
    let mut report = ConeSpeedReport::default();
    for line in &rep.lines {
        let frag = &line.fragment;
        let times = frag.times();
        let points = frag.points();
        let speeds = local_speeds(frag, rho);
        for j in 1..times.len().saturating_sub(1) {
            let dt = times[j + 1] - times[j - 1];
            if dt > frag.grid_step() * 3.0 {
                continue;
            }
            let weight = line.weight * line.density.at(j) * 0.5 * dt;
            if weight <= 0.0 {
                continue;
            }
            let lo = &points[j - 1];
            let hi = &points[j + 1];
            let chart_vel: Vec<f64> = chart(hi)
                .iter()
                .zip(chart(lo))
                .map(|(a, b)| (a - b) / dt)
                .collect();
            let f_vel = (f(hi) - f(lo)) / dt;
            let ok = cone.contains(&chart_vel) && f_vel >= sigma(&points[j]) * speeds[j] - tol;
            report.checked += weight;
            if !ok {
                report.violating += weight;
            }
        }
    }
    report
}

/// Extremes and off-band measure fraction of local speeds along a
/// representation; the band is [1/(1+eps), 1+eps].
#[derive(Debug, Clone)]
pub struct SpeedBand {
    pub min: f64,
    pub max: f64,
    pub off_fraction: f64,
}

pub fn rep_speed_band<P>(rep: &AlbertiRep<P>, rho: &Pseudometric<'_, P>, eps: f64) -> SpeedBand {
    let mut min = f64::MAX;
    let mut max = 0.0f64;
    let mut checked = 0.0;
    let mut off = 0.0;
    for line in &rep.lines {
        let frag = &line.fragment;
        let speeds = local_speeds(frag, rho);
        let times = frag.times();
        for j in 1..times.len().saturating_sub(1) {
            let dt = times[j + 1] - times[j - 1];
            if dt > frag.grid_step() * 3.0 {
                continue;
            }
            let weight = line.weight * line.density.at(j) * 0.5 * dt;
            if weight <= 0.0 {
                continue;
            }
            min = min.min(speeds[j]);
            max = max.max(speeds[j]);
            checked += weight;
            if speeds[j] > 1.0 + eps || speeds[j] < 1.0 / (1.0 + eps) {
                off += weight;
            }
        }
    }
    SpeedBand {
        min: if checked > 0.0 { min } else { 0.0 },
        max,
        off_fraction: if checked > 0.0 { off / checked } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;
    use crate::space::{limit_estimate_metric, EuclideanHost, NormKind};
    use crate::system::GrowthRule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fubini_integrates_a_product_exactly() {
        let rep = fubini_rep(2, 0, 1000, 6).unwrap();
        let est = rep.integrate(|p| p[0] * p[1]);
        assert!((est - 0.25).abs() < 1e-9, "estimate {est}");
    }

    #[test]
    fn one_dimensional_rep_is_a_single_line() {
        let rep = fubini_rep(1, 0, 1, 8).unwrap();
        assert_eq!(rep.line_count(), 1);
        let est = rep.integrate(|p| p[0]);
        assert!((est - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disk_area_is_recovered_within_grid_error() {
        let rep = fubini_rep(2, 0, 200, 10).unwrap();
        let r2 = 0.8f64 * 0.8;
        let est = rep.integrate(|p| f64::from(p[0] * p[0] + p[1] * p[1] <= r2));
        let target = std::f64::consts::PI * r2 / 4.0;
        assert!((est - target).abs() < 5e-3, "estimate {est} target {target}");
    }

    #[test]
    fn doubled_weight_is_detected() {
        let mut rep = fubini_rep(2, 0, 50, 6).unwrap();
        let clean = verify_rep(
            &rep,
            &[TestFunction::new("mass", 1.0, |_: &Vec<f64>| 1.0)],
        );
        assert!(clean[0].residual() < 1e-9);
        rep.lines[7].weight *= 2.0;
        let dirty = verify_rep(
            &rep,
            &[
                TestFunction::new("mass", 1.0, |_: &Vec<f64>| 1.0),
                TestFunction::new("zero", 0.0, |_: &Vec<f64>| 0.0),
            ],
        );
        assert!(dirty[0].residual() >= 0.9 / 50.0);
        assert_eq!(dirty[1].residual(), 0.0);
    }

    #[test]
    fn exact_rep_weights_sum_to_one() {
        for system in [
            InverseSystem::generate(2, GrowthRule::Periodic, 3).unwrap(),
            InverseSystem::generate(3, GrowthRule::Doubling, 2).unwrap(),
        ] {
            let rep = MonotoneRep::exact(&system, 1 << 17).unwrap();
            assert_eq!(rep.total_weight(), Rat::one(), "{} lines", rep.lines.len());
        }
    }

    #[test]
    fn exact_rep_reproduces_every_cylinder_mass() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 3).unwrap();
        let rep = MonotoneRep::exact(&system, 1 << 17).unwrap();
        for row in rep.residual_table(&system, 3).unwrap() {
            assert!(
                row.residual().is_zero(),
                "level {} edge {} off by {}",
                row.level,
                row.edge,
                row.residual()
            );
        }
    }

    #[test]
    fn sampled_rep_approximates_cylinder_masses() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = MonotoneRep::sampled(&system, 2000, &mut rng).unwrap();
        assert_eq!(rep.total_weight(), Rat::one());
        let mut worst_abs = 0.0f64;
        let mut worst_rel = 0.0f64;
        for row in rep.residual_table(&system, 2).unwrap() {
            let abs = rat_to_f64(&row.residual());
            worst_abs = worst_abs.max(abs);
            worst_rel = worst_rel.max(abs / rat_to_f64(&row.target));
        }
        assert!(worst_abs < 0.01, "worst absolute residual {worst_abs}");
        assert!(worst_rel < 0.08, "worst relative residual {worst_rel}");
    }

    #[test]
    fn marginals_match_full_enumeration() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 2).unwrap();
        let rep = MonotoneRep::exact(&system, 1 << 17).unwrap();
        let cover = branch_marginals(&system, 2).unwrap();
        let g = system.level_graph(2).unwrap();
        for e in 0..g.edge_count() {
            let enumerated: Rat = rep
                .lines
                .iter()
                .filter(|l| l.chain.edges().contains(&e))
                .map(|l| l.weight.clone())
                .sum();
            assert_eq!(cover[e], enumerated, "edge {e}");
        }
    }

    #[test]
    fn analytic_occupations_are_exact_at_depth() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 5).unwrap();
        for row in analytic_residual_table(&system, 5).unwrap() {
            assert!(
                row.residual().is_zero(),
                "level {} edge {} off by {}",
                row.level,
                row.edge,
                row.residual()
            );
        }
    }

    #[test]
    fn half_window_carries_half_the_mass() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 3).unwrap();
        let rep = MonotoneRep::exact(&system, 1 << 17).unwrap();
        let half = rep
            .window_occupation(&system, &Rat::zero(), &rat(1, 2))
            .unwrap();
        assert_eq!(half, rat(1, 2));

        let space = LimitSpace::new(system);
        let frag_rep = rep.to_alberti(&space, 6).unwrap();
        let restricted = frag_rep.restrict(|p| rat_to_f64(&space.phi(p).unwrap()) < 0.5);
        let mass = restricted.total_mass();
        assert!((mass - 0.5).abs() < 0.01, "restricted mass {mass}");

        let upper = frag_rep.restrict(|p| rat_to_f64(&space.phi(p).unwrap()) >= 0.5);
        let glued = AlbertiRep::glue(vec![restricted, upper]);
        assert!((glued.total_mass() - frag_rep.total_mass()).abs() < 0.02);
    }

    #[test]
    fn monotone_lines_move_at_unit_speed() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 3).unwrap();
        let rep = MonotoneRep::exact(&system, 1 << 17).unwrap();
        let space = LimitSpace::new(system);
        let frag_rep = rep.to_alberti(&space, 5).unwrap();
        let rho = limit_estimate_metric(&space);
        let band = rep_speed_band(&frag_rep, &rho, 1e-9);
        assert!((band.min - 1.0).abs() < 1e-9 && (band.max - 1.0).abs() < 1e-9);
        assert_eq!(band.off_fraction, 0.0);
    }

    #[test]
    fn cone_check_splits_on_the_axis() {
        let rep = fubini_rep(2, 0, 20, 6).unwrap();
        let host = EuclideanHost::new(2, NormKind::L2);
        let rho = host.metric();
        let forward = Cone::new(vec![1.0, 0.0], std::f64::consts::FRAC_PI_4).unwrap();
        let report = cone_speed_check(
            &rep,
            |p: &Vec<f64>| p[0],
            |p: &Vec<f64>| p.clone(),
            &forward,
            |_| 1.0,
            &rho,
            1e-9,
        );
        assert_eq!(report.violation_fraction(), 0.0);

        let sideways = Cone::new(vec![0.0, 1.0], std::f64::consts::FRAC_PI_4).unwrap();
        let report = cone_speed_check(
            &rep,
            |p: &Vec<f64>| p[0],
            |p: &Vec<f64>| p.clone(),
            &sideways,
            |_| 1.0,
            &rho,
            1e-9,
        );
        assert_eq!(report.violation_fraction(), 1.0);
    }

    #[test]
    fn monotone_rep_passes_the_cone_check_on_the_height() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 3).unwrap();
        let rep = MonotoneRep::exact(&system, 1 << 17).unwrap();
        let space = LimitSpace::new(system);
        let frag_rep = rep.to_alberti(&space, 5).unwrap();
        let rho = limit_estimate_metric(&space);
        let cone = Cone::new(vec![1.0], 0.1).unwrap();
        let report = cone_speed_check(
            &frag_rep,
            |p: &LimitPoint| rat_to_f64(&space.phi(p).unwrap()),
            |p: &LimitPoint| vec![rat_to_f64(&space.phi(p).unwrap())],
            &cone,
            |_| 1.0,
            &rho,
            1e-6,
        );
        assert_eq!(report.violation_fraction(), 0.0);
    }
}
