//! Pointwise Lipschitz behaviour of real functions on a limit space. The
//! scan measures, scale by scale, the largest variation ratio over an exact
//! ball, then reads off upper and lower envelopes from the finest scales.

use crate::error::{MdlError, Result};
use crate::limit::{LimitPoint, LimitSpace};
use crate::rational::{rat_abs, Rat};
use num_traits::Zero;

/// Real-valued function on a limit space, exact in rational arithmetic.
pub struct RealFunction<'a> {
    name: String,
    f: Box<dyn Fn(&LimitPoint) -> Result<Rat> + Sync + 'a>,
}

impl<'a> RealFunction<'a> {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&LimitPoint) -> Result<Rat> + Sync + 'a,
    ) -> Self {
        RealFunction { name: name.into(), f: Box::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &LimitPoint) -> Result<Rat> {
        (self.f)(x)
    }
}

impl std::fmt::Debug for RealFunction<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealFunction").field("name", &self.name).finish()
    }
}

/// The height map as a scalar function.
pub fn height_function(space: &LimitSpace) -> RealFunction<'_> {
    RealFunction::new("height", move |x: &LimitPoint| space.phi(x))
}

/// Distance to a fixed point, evaluated at the deepest truncation. One
/// shortest-path sweep up front, cheap evaluations afterwards.
pub fn distance_function<'a>(
    space: &'a LimitSpace,
    z: &LimitPoint,
) -> Result<RealFunction<'a>> {
    let graph = space.system().level_graph(space.depth())?;
    let map = graph.distance_map(z.top())?;
    let name = format!("dist[{}]", graph.format_point(z.top()));
    Ok(RealFunction::new(name, move |x: &LimitPoint| {
        let g = space.system().level_graph(space.depth())?;
        map.eval(g, x.top())
    }))
}

/// Largest variation ratio of a function over the exact ball of radius `r`.
#[derive(Debug, Clone)]
pub struct ScaleVariation {
    pub r: Rat,
    pub ratio: Rat,
}

/// Per-scale variation ratios with their envelopes over the finest scales.
#[derive(Debug, Clone)]
pub struct LipEstimate {
    pub scales: Vec<ScaleVariation>,
    /// Largest ratio among the finest scales; stands in for the limsup.
    pub upper: Rat,
    /// Smallest ratio among the finest scales; stands in for the liminf.
    pub lower: Rat,
}

/// Radii m^-1 .. m^-deepest, coarse to fine.
pub fn scale_radii(space: &LimitSpace, deepest: usize) -> Vec<Rat> {
    (1..=deepest).map(|j| space.system().edge_length(j)).collect()
}

/// Scans variation ratios of `f` around `x` at the given radii. Candidates
/// at radius r are every vertex within exact distance r and the two points
/// at parameter distance exactly r along the monotone geodesic through `x`.
pub fn lip_scan(
    space: &LimitSpace,
    f: &RealFunction<'_>,
    x: &LimitPoint,
    radii: &[Rat],
) -> Result<LipEstimate> {
    if radii.is_empty() {
        return Err(MdlError::BadArgument("no scan radii".into()));
    }
    let fx = f.eval(x)?;
    let graph = space.system().level_graph(space.depth())?;
    let (chain, t0) = space.geodesic_through(x)?;
    let span = chain.span(space.system());
    let mut scales = Vec::with_capacity(radii.len());
    for r in radii {
        if r <= &Rat::zero() {
            return Err(MdlError::BadArgument("scan radii must be positive".into()));
        }
        let mut best = Rat::zero();
        for (v, d) in graph.bounded_distances_from(x.top(), r)?.iter().enumerate() {
            let Some(d) = d else { continue };
            if d.is_zero() || d > r {
                continue;
            }
            let y = space.vertex_point(v)?;
            let ratio = rat_abs(&(f.eval(&y)? - &fx)) / r;
            if ratio > best {
                best = ratio;
            }
        }
        for t in [&t0 - r, &t0 + r] {
            if t >= Rat::zero() && t <= span {
                let y = space.chain_point(&chain, &t)?;
                let ratio = rat_abs(&(f.eval(&y)? - &fx)) / r;
                if ratio > best {
                    best = ratio;
                }
            }
        }
        scales.push(ScaleVariation { r: r.clone(), ratio: best });
    }
    let window = &scales[scales.len().saturating_sub(3)..];
    let upper = window.iter().map(|s| &s.ratio).max().expect("nonempty").clone();
    let lower = window.iter().map(|s| &s.ratio).min().expect("nonempty").clone();
    Ok(LipEstimate { scales, upper, lower })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, rat_int};
    use crate::system::{GrowthRule, InverseSystem};
    use num_traits::One;

    fn space(m: u32, rule: GrowthRule, depth: usize) -> LimitSpace {
        LimitSpace::new(InverseSystem::generate(m, rule, depth).unwrap())
    }

    fn vertex_at_height(space: &LimitSpace, h: &Rat) -> LimitPoint {
        let values = space.system().phi_values(space.depth()).unwrap();
        let v = values.iter().position(|p| p == h).expect("height is hit by a vertex");
        space.vertex_point(v).unwrap()
    }

    #[test]
    fn height_ratios_are_exactly_one_at_every_scale() {
        let space = space(2, GrowthRule::Periodic, 4);
        let x = vertex_at_height(&space, &rat(1, 2));
        let f = height_function(&space);
        let est = lip_scan(&space, &f, &x, &scale_radii(&space, 4)).unwrap();
        assert_eq!(est.scales.len(), 4);
        for s in &est.scales {
            assert!(s.ratio.is_one(), "r = {}", s.r);
        }
        assert!(est.upper.is_one() && est.lower.is_one());
    }

    #[test]
    fn boundary_points_scan_one_sided() {
        let space = space(3, GrowthRule::Doubling, 2);
        let x = vertex_at_height(&space, &rat_int(0));
        let f = height_function(&space);
        let est = lip_scan(&space, &f, &x, &scale_radii(&space, 2)).unwrap();
        assert!(est.upper.is_one() && est.lower.is_one());
    }

    #[test]
    fn distance_functions_never_exceed_unit_ratio() {
        let space = space(2, GrowthRule::Periodic, 3);
        let z = space.vertex_point(0).unwrap();
        let f = distance_function(&space, &z).unwrap();
        let x = vertex_at_height(&space, &rat(1, 2));
        let est = lip_scan(&space, &f, &x, &scale_radii(&space, 3)).unwrap();
        assert!(est.upper <= rat_int(1));
        assert!(est.lower > Rat::zero());
    }

    #[test]
    fn empty_radius_list_is_rejected() {
        let space = space(2, GrowthRule::Periodic, 2);
        let x = space.vertex_point(0).unwrap();
        let f = height_function(&space);
        assert!(lip_scan(&space, &f, &x, &[]).is_err());
        assert!(lip_scan(&space, &f, &x, &[Rat::zero()]).is_err());
    }
}
