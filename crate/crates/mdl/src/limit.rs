//! The inverse limit of a tower: points as compatible coordinate threads,
//! two-sided distance and measure brackets at every truncation depth,
//! monotone geodesics through a point, and measure-exact sampling.
//!
//! Projections never increase path length, so the top-level distance is a
//! lower bound for the limit distance; lifting a geodesic level by level
//! costs at most the fiber diameter per level, which sums to the geometric
//! slack used for the upper bound.

use num_traits::{One, Zero};
use rand::Rng;

use crate::error::{MdlError, Result};
use crate::graph::GraphPoint;
use crate::rational::{rat_from_f64, rat_int, Rat};
use crate::system::{InverseSystem, MonotoneChain};

/// A limit point, stored as its coordinate at every level of the tower.
/// Coordinates are compatible by construction: each one is the projection
/// of the one above.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LimitPoint {
    coords: Vec<GraphPoint>,
}

impl LimitPoint {
    pub fn top(&self) -> &GraphPoint {
        self.coords.last().expect("nonempty")
    }

    pub fn coordinate(&self, level: usize) -> Option<&GraphPoint> {
        self.coords.get(level)
    }
}

/// Exact rational enclosure of a quantity of the limit space computed from
/// a finite truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct Bracket {
    pub lower: Rat,
    pub upper: Rat,
}

impl Bracket {
    /// The canonical point estimate: the exactly computed truncation value.
    pub fn estimate(&self) -> &Rat {
        &self.lower
    }

    pub fn width(&self) -> Rat {
        &self.upper - &self.lower
    }

    pub fn contains(&self, v: &Rat) -> bool {
        &self.lower <= v && v <= &self.upper
    }

    pub fn encloses(&self, other: &Bracket) -> bool {
        self.lower <= other.lower && other.upper <= self.upper
    }
}

#[derive(Debug, Clone)]
pub struct LimitSpace {
    system: InverseSystem,
}

impl LimitSpace {
    pub fn new(system: InverseSystem) -> Self {
        LimitSpace { system }
    }

    pub fn system(&self) -> &InverseSystem {
        &self.system
    }

    pub fn depth(&self) -> usize {
        self.system.depth()
    }

    /// Wraps a top-level coordinate into a limit point, projecting it down
    /// through every level.
    pub fn point(&self, top: GraphPoint) -> Result<LimitPoint> {
        let k = self.depth();
        let mut coords = vec![top];
        for level in (0..k).rev() {
            let below = self.system.project_point(level, coords.last().unwrap())?;
            coords.push(below);
        }
        coords.reverse();
        Ok(LimitPoint { coords })
    }

    pub fn vertex_point(&self, v: usize) -> Result<LimitPoint> {
        let top = self.system.level_graph(self.depth())?.vertex_point(v)?;
        self.point(top)
    }

    pub fn phi(&self, x: &LimitPoint) -> Result<Rat> {
        self.system.phi_value(self.depth(), x.top())
    }

    /// Distance slack of a depth-`level` truncation: twice the tail sum of
    /// the fiber diameter bounds below that level.
    pub fn slack(&self, level: usize) -> Rat {
        let m = self.system.m();
        rat_int(2) * &self.system.profile().theta * self.system.edge_length(level)
            / rat_int(m as i64 - 1)
    }

    /// Encloses the limit distance using the level-`level` coordinates.
    pub fn distance_bracket_at(
        &self,
        x: &LimitPoint,
        y: &LimitPoint,
        level: usize,
    ) -> Result<Bracket> {
        let (cx, cy) = match (x.coordinate(level), y.coordinate(level)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(MdlError::InsufficientDepth(format!(
                    "points carry no level-{level} coordinate"
                )))
            }
        };
        let d = self.system.level_graph(level)?.path_distance(cx, cy)?;
        let upper = &d + self.slack(level);
        Ok(Bracket { lower: d, upper })
    }

    pub fn distance_bracket(&self, x: &LimitPoint, y: &LimitPoint) -> Result<Bracket> {
        self.distance_bracket_at(x, y, self.depth())
    }

    /// The pinned surrogate for the limit distance: the exact top distance.
    pub fn d_estimate(&self, x: &LimitPoint, y: &LimitPoint) -> Result<Rat> {
        let k = self.depth();
        self.system.level_graph(k)?.path_distance(x.top(), y.top())
    }

    /// Encloses the limit measure of the closed ball around `x`. The upper
    /// bound is the top-level ball at the same radius; the lower bound
    /// shrinks the radius by the distance slack.
    pub fn ball_bracket(&self, x: &LimitPoint, r: &Rat) -> Result<Bracket> {
        let k = self.depth();
        let g = self.system.level_graph(k)?;
        let upper = g.ball_measure(x.top(), r)?;
        let shrunk = r - self.slack(k);
        let lower = if shrunk < Rat::zero() {
            Rat::zero()
        } else {
            g.ball_measure(x.top(), &shrunk)?
        };
        Ok(Bracket { lower, upper })
    }

    /// The m^-K dense set: every top-level vertex as a limit point.
    pub fn dense_points(&self) -> Result<Vec<LimitPoint>> {
        let g = self.system.level_graph(self.depth())?;
        (0..g.vertex_count()).map(|v| self.vertex_point(v)).collect()
    }

    /// Measure-distributed sample: edge by mass, then a uniform offset.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LimitPoint> {
        let g = self.system.level_graph(self.depth())?;
        let weights: Vec<Rat> = g.edges().iter().map(|e| e.mass.clone()).collect();
        let e = crate::system::weighted_pick(rng, &weights);
        let u = rat_from_f64(rng.random::<f64>()).unwrap_or_else(Rat::zero);
        let offset = u * &g.edges()[e].length;
        self.point(g.point_on_edge(e, offset)?)
    }

    /// Point with a deep base-m expansion along its edge, so its level-map
    /// value avoids every coarse grid.
    pub fn generic_point<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        digits: usize,
    ) -> Result<LimitPoint> {
        let g = self.system.level_graph(self.depth())?;
        let m = self.system.m();
        let weights: Vec<Rat> = g.edges().iter().map(|e| e.mass.clone()).collect();
        let e = crate::system::weighted_pick(rng, &weights);
        let mut frac = Rat::zero();
        let mut scale = Rat::one();
        let m_rat = rat_int(m as i64);
        for _ in 0..digits.max(1) {
            scale /= &m_rat;
            let d = rng.random_range(0..m);
            frac += rat_int(d as i64) * &scale;
        }
        if frac.is_zero() {
            frac = scale;
        }
        let offset = frac * &g.edges()[e].length;
        self.point(g.point_on_edge(e, offset)?)
    }

    /// Deterministic maximal monotone geodesic through `x` at the top level,
    /// together with the arclength of `x` along it. Ties in the direction
    /// choice go to the smallest edge id.
    pub fn geodesic_through(&self, x: &LimitPoint) -> Result<(MonotoneChain, Rat)> {
        let mut chain = self.seed_chain(x)?;
        while let Some(&e) = chain.up_candidates(&self.system)?.first() {
            chain.extend_up(&self.system, e)?;
        }
        while let Some(&e) = chain.down_candidates(&self.system)?.first() {
            chain.extend_down(&self.system, e)?;
        }
        let t = chain
            .locate(&self.system, x.top())?
            .ok_or_else(|| MdlError::BadPoint("point fell off its own geodesic".into()))?;
        Ok((chain, t))
    }

    /// Mass-weighted random maximal geodesic through `x`.
    pub fn geodesic_through_sampled<R: Rng + ?Sized>(
        &self,
        x: &LimitPoint,
        rng: &mut R,
    ) -> Result<(MonotoneChain, Rat)> {
        let mut chain = self.seed_chain(x)?;
        while chain.extend_up_sampled(&self.system, rng)? {}
        while chain.extend_down_sampled(&self.system, rng)? {}
        let t = chain
            .locate(&self.system, x.top())?
            .ok_or_else(|| MdlError::BadPoint("point fell off its own geodesic".into()))?;
        Ok((chain, t))
    }

    fn seed_chain(&self, x: &LimitPoint) -> Result<MonotoneChain> {
        let k = self.depth();
        match x.top() {
            GraphPoint::Vertex(v) => MonotoneChain::at_vertex(&self.system, k, *v),
            GraphPoint::Interior { edge, .. } => MonotoneChain::from_edge(&self.system, k, *edge),
        }
    }

    /// Limit point on a top-level chain at arclength `t`.
    pub fn chain_point(&self, chain: &MonotoneChain, t: &Rat) -> Result<LimitPoint> {
        self.point(chain.eval(&self.system, t)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;
    use crate::system::GrowthRule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn laakso(depth: usize) -> LimitSpace {
        LimitSpace::new(InverseSystem::generate(2, GrowthRule::Periodic, depth).unwrap())
    }

    #[test]
    fn brackets_nest_as_truncation_deepens() {
        let space = laakso(4);
        let g = space.system().level_graph(4).unwrap();
        let xs = [0usize, g.vertex_count() / 2, g.vertex_count() - 1];
        for &a in &xs {
            for &b in &xs {
                let x = space.vertex_point(a).unwrap();
                let y = space.vertex_point(b).unwrap();
                let mut prev: Option<Bracket> = None;
                for level in 0..=4 {
                    let br = space.distance_bracket_at(&x, &y, level).unwrap();
                    assert!(br.lower <= br.upper);
                    if let Some(p) = &prev {
                        assert!(p.encloses(&br), "level {level}: {p:?} vs {br:?}");
                    }
                    prev = Some(br);
                }
            }
        }
    }

    #[test]
    fn same_fiber_points_separate_at_the_top() {
        let space = laakso(3);
        let sys = space.system();
        // a point whose fiber one level down is a genuine pair
        let (sub, _) = sys.subdivided(2).unwrap();
        let mut found = false;
        for w in 0..sub.vertex_count() {
            let fiber = sys.fiber_vertices(2, w).unwrap();
            if fiber.len() < 2 {
                continue;
            }
            let x = space.vertex_point(fiber[0]).unwrap();
            let y = space.vertex_point(fiber[1]).unwrap();
            let coarse = space.distance_bracket_at(&x, &y, 2).unwrap();
            assert!(coarse.lower.is_zero());
            assert!(coarse.upper > Rat::zero());
            let fine = space.distance_bracket(&x, &y).unwrap();
            assert!(fine.lower > Rat::zero());
            assert!(coarse.encloses(&fine));
            found = true;
            break;
        }
        assert!(found, "tower has no branching fiber");
    }

    #[test]
    fn geodesics_have_unit_speed_in_the_estimate() {
        let space = laakso(3);
        let x = space.vertex_point(3).unwrap();
        let (chain, t) = space.geodesic_through(&x).unwrap();
        assert_eq!(chain.span(space.system()), rat_int(1));
        assert_eq!(chain.eval(space.system(), &t).unwrap(), *x.top());
        for (s, u) in [(rat(1, 8), rat(3, 4)), (rat_int(0), rat_int(1))] {
            let p = space.chain_point(&chain, &s).unwrap();
            let q = space.chain_point(&chain, &u).unwrap();
            assert_eq!(space.d_estimate(&p, &q).unwrap(), u - s);
        }
    }

    #[test]
    fn ball_brackets_saturate_and_stay_ordered() {
        let space = laakso(3);
        let x = space.vertex_point(0).unwrap();
        let everything = space.ball_bracket(&x, &rat_int(10)).unwrap();
        assert_eq!(everything.lower, rat_int(1));
        assert_eq!(everything.upper, rat_int(1));
        let mut prev = Rat::zero();
        for r in [rat(1, 16), rat(1, 8), rat(1, 4), rat(1, 2), rat_int(1)] {
            let br = space.ball_bracket(&x, &r).unwrap();
            assert!(br.lower <= br.upper);
            assert!(br.upper >= prev);
            prev = br.upper;
        }
    }

    #[test]
    fn doubling_ball_bracket_matches_frozen_values() {
        let sys = InverseSystem::generate(3, GrowthRule::Doubling, 1).unwrap();
        let space = LimitSpace::new(sys);
        let x = space.vertex_point(0).unwrap();
        let br = space.ball_bracket(&x, &rat(1, 2)).unwrap();
        assert_eq!(br.lower, rat(1, 6));
        assert_eq!(br.upper, rat(1, 2));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let space = laakso(3);
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = space.sample_point(&mut r1).unwrap();
            let b = space.sample_point(&mut r2).unwrap();
            assert_eq!(a, b);
        }
        let g1 = space.generic_point(&mut r1, 40).unwrap();
        let g2 = space.generic_point(&mut r2, 40).unwrap();
        assert_eq!(g1, g2);
        assert!(matches!(g1.top(), GraphPoint::Interior { .. }));
    }

    #[test]
    fn generic_points_live_off_every_grid() {
        let space = laakso(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let p = space.generic_point(&mut rng, 40).unwrap();
            let phi = space.phi(&p).unwrap();
            for level in 0..=8 {
                let scale = crate::rational::rat_pow(2, level);
                assert!(!(&phi * &scale).is_integer(), "level {level}");
            }
        }
    }

    #[test]
    fn limit_points_project_coherently() {
        let space = laakso(3);
        let g = space.system().level_graph(3).unwrap();
        let p = space.point(g.point_on_edge(5, rat(1, 24)).unwrap()).unwrap();
        let phi = space.phi(&p).unwrap();
        for level in 0..=3 {
            let c = p.coordinate(level).unwrap();
            assert_eq!(space.system().phi_value(level, c).unwrap(), phi);
        }
    }
}
