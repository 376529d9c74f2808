//! Seminorms on chart tangents built from families of scalar generators.
//! A generator contributes the row of its differential in chart coordinates;
//! a family induces v -> max |row . v|. Families come in nested tiers, so
//! the induced seminorms nest by construction: distance functions from a
//! dense set, a larger randomized distance family, then randomized
//! max/min lattice combinations of scaled distance functions.

use num_traits::Zero;
use rand::Rng;

use crate::error::{MdlError, Result};
use crate::limit::{LimitPoint, LimitSpace};
use crate::lip::RealFunction;
use crate::rational::{rat_to_f64, Rat};
use crate::space::{EuclideanHost, Pseudometric};
use crate::system::MonotoneChain;

/// Rows of generator differentials with tier boundaries. Tier k uses the
/// first `tier_ends[k]` rows, so later tiers dominate earlier ones exactly.
#[derive(Debug, Clone)]
pub struct SeminormBundle {
    dim: usize,
    rows: Vec<Vec<f64>>,
    tier_ends: Vec<usize>,
    /// Upper pointwise Lipschitz constant of the chart map, when computed.
    /// On one-dimensional charts |v| times this value is the dual seminorm.
    pub dual_lip: Option<f64>,
}

impl SeminormBundle {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>, tier_ends: Vec<usize>) -> Result<Self> {
        if tier_ends.is_empty()
            || tier_ends.windows(2).any(|w| w[1] < w[0])
            || *tier_ends.last().unwrap() != rows.len()
        {
            return Err(MdlError::BadArgument("tier boundaries must step up to the row count".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(MdlError::BadArgument("row width differs from the chart dimension".into()));
        }
        Ok(SeminormBundle { dim, rows, tier_ends, dual_lip: None })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tier_count(&self) -> usize {
        self.tier_ends.len()
    }

    pub fn rows(&self, tier: usize) -> &[Vec<f64>] {
        &self.rows[..self.tier_ends[tier]]
    }

    pub fn value(&self, tier: usize, v: &[f64]) -> f64 {
        self.rows(tier)
            .iter()
            .map(|row| row.iter().zip(v).map(|(r, x)| r * x).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// |v| scaled by the chart's upper Lipschitz constant, on 1-dimensional
    /// charts only.
    pub fn dual_value(&self, v: &[f64]) -> Option<f64> {
        (self.dim == 1).then_some(())?;
        self.dual_lip.map(|l| v[0].abs() * l)
    }

    /// Largest relative gap between the first and last tier over the
    /// direction grid. Zero when every tier already agrees.
    pub fn discrepancy(&self, directions: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for v in directions {
            let first = self.value(0, v);
            let last = self.value(self.tier_count() - 1, v);
            if last > 1e-12 {
                worst = worst.max((last - first) / last);
            }
        }
        worst
    }

    /// Largest relative gap between a tier and a reference norm.
    pub fn gap_to(&self, tier: usize, reference: impl Fn(&[f64]) -> f64, directions: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for v in directions {
            let mine = self.value(tier, v);
            let truth = reference(v);
            if truth > 1e-12 {
                worst = worst.max((mine - truth).abs() / truth);
            }
        }
        worst
    }
}

/// Evenly spread unit directions for a chart dimension.
pub fn direction_grid(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        0 => vec![],
        1 => vec![vec![1.0]],
        2 => (0..count.max(4))
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count.max(4) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // golden-angle spiral on the sphere, padded to higher dims with zeros
            let n = count.max(8);
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    let mut v = vec![r * a.cos(), r * a.sin(), z];
                    v.resize(dim, 0.0);
                    v
                })
                .collect()
        }
    }
}

enum HostGenerator {
    Distance { center: Vec<f64> },
    Lattice { terms: Vec<(f64, Vec<f64>, f64)>, use_max: bool },
}

impl HostGenerator {
    fn eval(&self, host: &EuclideanHost, x: &[f64]) -> f64 {
        match self {
            HostGenerator::Distance { center } => host.distance(x, center),
            HostGenerator::Lattice { terms, use_max } => {
                let vals = terms.iter().map(|(a, c, b)| a * host.distance(x, c) + b);
                if *use_max {
                    vals.fold(f64::MIN, f64::max)
                } else {
                    vals.fold(f64::MAX, f64::min)
                }
            }
        }
    }
}

fn host_gradient(host: &EuclideanHost, gen: &HostGenerator, p: &[f64], h: f64) -> Vec<f64> {
    (0..p.len())
        .map(|i| {
            let mut hi = p.to_vec();
            let mut lo = p.to_vec();
            hi[i] += h;
            lo[i] -= h;
            (gen.eval(host, &hi) - gen.eval(host, &lo)) / (2.0 * h)
        })
        .collect()
}

fn random_center<R: Rng + ?Sized>(dim: usize, p: &[f64], rng: &mut R) -> Vec<f64> {
    // kept away from p coordinate-wise so piecewise norms are smooth at p
    (0..dim)
        .map(|i| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            p[i] + sign * rng.random_range(0.5..2.5)
        })
        .collect()
}

/// Three nested generator tiers on a Euclidean host with the identity chart:
/// `base_count` distance functions, the same again, then lattice
/// combinations. Rows are central-difference gradients at `p`.
pub fn euclidean_seminorm_bundle<R: Rng + ?Sized>(
    host: &EuclideanHost,
    p: &[f64],
    base_count: usize,
    rng: &mut R,
) -> Result<SeminormBundle> {
    if p.len() != host.dim() {
        return Err(MdlError::BadArgument("point dimension differs from the host".into()));
    }
    let dim = host.dim();
    let mut gens: Vec<HostGenerator> = Vec::new();
    for _ in 0..base_count {
        gens.push(HostGenerator::Distance { center: random_center(dim, p, rng) });
    }
    let tier1 = gens.len();
    for _ in 0..base_count {
        gens.push(HostGenerator::Distance { center: random_center(dim, p, rng) });
    }
    let tier2 = gens.len();
    for k in 0..base_count {
        let terms = (0..rng.random_range(2..=3usize))
            .map(|_| {
                (rng.random_range(-1.0..=1.0), random_center(dim, p, rng), rng.random_range(-1.0..=1.0))
            })
            .collect();
        gens.push(HostGenerator::Lattice { terms, use_max: k % 2 == 0 });
    }
    let tier3 = gens.len();
    let rows = gens.iter().map(|g| host_gradient(host, g, p, 1e-6)).collect();
    SeminormBundle::new(dim, rows, vec![tier1, tier2, tier3])
}

/// Monotone geodesics through a point, used as the direction bundle for
/// differentials on one-dimensional charts.
pub struct GeodesicBundle {
    chains: Vec<(MonotoneChain, Rat)>,
}

impl GeodesicBundle {
    /// The deterministic geodesic through `p` plus `extra` sampled ones.
    pub fn through<R: Rng + ?Sized>(
        space: &LimitSpace,
        p: &LimitPoint,
        extra: usize,
        rng: &mut R,
    ) -> Result<GeodesicBundle> {
        let mut chains = vec![space.geodesic_through(p)?];
        for _ in 0..extra {
            chains.push(space.geodesic_through_sampled(p, rng)?);
        }
        Ok(GeodesicBundle { chains })
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn chains(&self) -> &[(MonotoneChain, Rat)] {
        &self.chains
    }

    /// Sample points on every chain at parameter offsets `j*h`, |j| <= k,
    /// paired with their exact chart offsets.
    pub fn regression_points(
        &self,
        space: &LimitSpace,
        k: usize,
        h: &Rat,
    ) -> Result<Vec<Vec<(Rat, LimitPoint)>>> {
        let mut out = Vec::with_capacity(self.chains.len());
        for (chain, t0) in &self.chains {
            let span = chain.span(space.system());
            let mut pts = Vec::new();
            for j in -(k as i64)..=(k as i64) {
                let t = t0 + Rat::from_integer(j.into()) * h;
                if t >= Rat::zero() && t <= span {
                    let x = &t - t0;
                    pts.push((x, space.chain_point(chain, &t)?));
                }
            }
            out.push(pts);
        }
        Ok(out)
    }
}

fn least_squares_slope(samples: &[(f64, f64)]) -> f64 {
    let sxx: f64 = samples.iter().map(|(x, _)| x * x).sum();
    if sxx <= 0.0 {
        return 0.0;
    }
    let sxy: f64 = samples.iter().map(|(x, y)| x * y).sum();
    sxy / sxx
}

/// Slope of a scalar function along each chain of the bundle; the row value
/// is the largest magnitude over chains.
fn bundle_row(
    f_values: &[Vec<(f64, f64)>], // per chain: (chart offset, f(y) - f(p))
) -> f64 {
    f_values
        .iter()
        .map(|samples| least_squares_slope(samples).abs())
        .fold(0.0, f64::max)
}

enum TowerGenerator {
    Distance { center: usize },
    Lattice { terms: Vec<(f64, usize, f64)>, use_max: bool },
}

/// Three nested generator tiers on a one-dimensional chart of a limit
/// space. Tier one draws distance functions from the geodesic bundle's own
/// vertices and a stride through the dense vertex set, the next tier adds
/// random vertices, the last adds lattice combinations. Rows are regression
/// slopes along the bundle.
pub fn chart_seminorm_bundle<R: Rng + ?Sized>(
    space: &LimitSpace,
    base_count: usize,
    bundle: &GeodesicBundle,
    rng: &mut R,
) -> Result<SeminormBundle> {
    let graph = space.system().level_graph(space.depth())?;
    let n_vertices = graph.vertex_count();
    let h = space.system().edge_length(space.depth());
    let points = bundle.regression_points(space, 3, &h)?;

    // distances from every regression point to every vertex, one sweep each
    let mut maps = Vec::new();
    for pts in &points {
        let mut row = Vec::new();
        for (x, y) in pts {
            row.push((rat_to_f64(x), graph.distance_map(y.top())?));
        }
        maps.push(row);
    }
    let vertex_values = |v: usize| -> Vec<Vec<(f64, f64)>> {
        maps.iter()
            .map(|row| {
                row.iter()
                    .map(|(x, map)| (*x, map.vertex_distance(v).map(rat_to_f64).unwrap_or(f64::MAX)))
                    .collect()
            })
            .collect()
    };

    let mut centers: Vec<usize> = Vec::new();
    for (chain, _) in bundle.chains() {
        centers.extend(chain.vertices().iter().copied());
    }
    centers.sort_unstable();
    centers.dedup();
    let stride = (n_vertices / base_count.max(1)).max(1);
    centers.extend((0..n_vertices).step_by(stride));
    centers.sort_unstable();
    centers.dedup();
    centers.truncate(base_count.max(8));
    let tier1_centers = centers.len();
    let mut gens: Vec<TowerGenerator> =
        centers.iter().map(|&c| TowerGenerator::Distance { center: c }).collect();
    for _ in 0..base_count {
        let c = rng.random_range(0..n_vertices);
        if !centers.contains(&c) {
            centers.push(c);
            gens.push(TowerGenerator::Distance { center: c });
        }
    }
    for k in 0..base_count {
        let terms = (0..rng.random_range(2..=3usize))
            .map(|_| {
                let c = centers[rng.random_range(0..centers.len())];
                (rng.random_range(-1.0..=1.0), c, rng.random_range(-1.0..=1.0))
            })
            .collect();
        gens.push(TowerGenerator::Lattice { terms, use_max: k % 2 == 0 });
    }

    let mut rows = Vec::with_capacity(gens.len());
    let mut tier_ends = Vec::new();
    for (i, gen) in gens.iter().enumerate() {
        let per_chain: Vec<Vec<(f64, f64)>> = match gen {
            TowerGenerator::Distance { center } => {
                let vals = vertex_values(*center);
                center_at_p(vals)
            }
            TowerGenerator::Lattice { terms, use_max } => {
                let parts: Vec<Vec<Vec<(f64, f64)>>> =
                    terms.iter().map(|(_, c, _)| vertex_values(*c)).collect();
                let combined = (0..parts[0].len())
                    .map(|ci| {
                        (0..parts[0][ci].len())
                            .map(|pi| {
                                let x = parts[0][ci][pi].0;
                                let vals = terms
                                    .iter()
                                    .zip(&parts)
                                    .map(|((a, _, b), part)| a * part[ci][pi].1 + b);
                                let y = if *use_max {
                                    vals.fold(f64::MIN, f64::max)
                                } else {
                                    vals.fold(f64::MAX, f64::min)
                                };
                                (x, y)
                            })
                            .collect()
                    })
                    .collect();
                center_at_p(combined)
            }
        };
        rows.push(vec![bundle_row(&per_chain)]);
        if i + 1 == tier1_centers {
            tier_ends.push(rows.len());
        }
    }
    tier_ends.push(gens.iter().filter(|g| matches!(g, TowerGenerator::Distance { .. })).count());
    tier_ends.push(rows.len());
    tier_ends.dedup();
    if tier_ends.len() < 3 {
        while tier_ends.len() < 3 {
            tier_ends.push(rows.len());
        }
    }
    SeminormBundle::new(1, rows, tier_ends)
}

/// Shifts every chain's samples so the value at offset zero is subtracted;
/// regression then measures differences from the basepoint.
fn center_at_p(per_chain: Vec<Vec<(f64, f64)>>) -> Vec<Vec<(f64, f64)>> {
    per_chain
        .into_iter()
        .map(|samples| {
            let f0 = samples
                .iter()
                .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
                .map(|(_, y)| *y)
                .unwrap_or(0.0);
            samples.into_iter().map(|(x, y)| (x, y - f0)).collect()
        })
        .collect()
}

/// Supremal directional derivative along a geodesic bundle versus the upper
/// Lipschitz constant. `gap` should be small and nonnegative; a large value
/// means the bundle undersamples the directions at `p`.
#[derive(Debug, Clone)]
pub struct DirectionalReport {
    pub sup_slope: f64,
    pub big_lip: f64,
    pub gap: f64,
}

pub fn directional_sup_check(
    space: &LimitSpace,
    f: &RealFunction<'_>,
    p: &LimitPoint,
    bundle: &GeodesicBundle,
    big_lip: f64,
) -> Result<DirectionalReport> {
    if bundle.is_empty() {
        return Err(MdlError::BadArgument("no geodesics through the point".into()));
    }
    let h = space.system().edge_length(space.depth());
    let fp = rat_to_f64(&f.eval(p)?);
    let mut sup = 0.0f64;
    for pts in bundle.regression_points(space, 3, &h)? {
        let samples: Vec<(f64, f64)> = pts
            .iter()
            .map(|(x, y)| Ok((rat_to_f64(x), rat_to_f64(&f.eval(y)?) - fp)))
            .collect::<Result<_>>()?;
        sup = sup.max(least_squares_slope(&samples).abs());
    }
    Ok(DirectionalReport { sup_slope: sup, big_lip, gap: big_lip - sup })
}

/// Seminorm induced by a pullback pseudometric on a one-dimensional chart:
/// the largest slope of any rho-distance function from the given centers.
/// Rank 0 flags a chart direction the pseudometric cannot see.
#[derive(Debug, Clone)]
pub struct PullbackSeminorm {
    pub value: f64,
    pub rank: u8,
}

pub fn pullback_seminorm(
    space: &LimitSpace,
    rho: &Pseudometric<'_, LimitPoint>,
    centers: &[LimitPoint],
    bundle: &GeodesicBundle,
) -> Result<PullbackSeminorm> {
    let h = space.system().edge_length(space.depth());
    let points = bundle.regression_points(space, 3, &h)?;
    let mut value = 0.0f64;
    for c in centers {
        for pts in &points {
            let samples: Vec<(f64, f64)> = pts
                .iter()
                .map(|(x, y)| (rat_to_f64(x), rho.eval(c, y)))
                .collect();
            value = value.max(least_squares_slope(&center_one(samples)).abs());
        }
    }
    Ok(PullbackSeminorm { value, rank: u8::from(value > 1e-6) })
}

fn center_one(samples: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let f0 = samples
        .iter()
        .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
        .map(|(_, y)| *y)
        .unwrap_or(0.0);
    samples.into_iter().map(|(x, y)| (x, y - f0)).collect()
}
