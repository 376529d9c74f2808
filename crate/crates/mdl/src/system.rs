//! Towers of metric measure graphs linked through edge subdivision.
//!
//! A tower of depth K holds graphs X_0, ..., X_K where every level-i edge
//! has length m^{-i}, together with a map from X_{i+1} onto the m-fold
//! subdivision of X_i and a real-valued level function on each floor. The
//! `validate` report checks the structural conditions under which the
//! inverse limit carries a geodesic metric and an exactly computable limit
//! measure; the generators build the standard families.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{MdlError, Result};
use crate::graph::{GraphPoint, HopScanner, MetricGraph, SubdivisionMap};
use crate::rational::{format_rat, rat_int, rat_pow, rat_to_f64, Rat};

/// How one level grows out of the previous one.
///
/// `Doubling` duplicates the middle cell of every edge. `Periodic` glues two
/// copies of the subdivided level at one interior grid vertex per edge, the
/// chosen index cycling with the level. `Tube` glues two copies at the
/// extreme-value vertices only; its constants blow up with depth and it
/// exists as the stress case for span bounds on monotone branch pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthRule {
    Doubling,
    Periodic,
    Tube,
}

impl FromStr for GrowthRule {
    type Err = MdlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "doubling" => Ok(GrowthRule::Doubling),
            "periodic" => Ok(GrowthRule::Periodic),
            "tube" => Ok(GrowthRule::Tube),
            other => Err(MdlError::Parse(format!("unknown growth rule {other:?}"))),
        }
    }
}

impl fmt::Display for GrowthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GrowthRule::Doubling => "doubling",
            GrowthRule::Periodic => "periodic",
            GrowthRule::Tube => "tube",
        })
    }
}

/// Uniform constants a tower is checked against: subdivision arity m, max
/// vertex valence, adjacent-edge mass ratio bound, and the factor theta in
/// the fiber diameter bound theta * m^{-(i+1)}.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityProfile {
    pub m: u32,
    pub delta: usize,
    pub c: Rat,
    pub theta: Rat,
}

impl AdmissibilityProfile {
    /// Tight-enough constants for the generated families. Doubling at m = 2
    /// and the tube rule pile up valence and mass skew level by level, so
    /// their constants depend on the final depth.
    pub fn standard(m: u32, rule: GrowthRule, depth: usize) -> Result<Self> {
        if m < 2 {
            return Err(MdlError::BadArgument("arity must be at least 2".into()));
        }
        let profile = match rule {
            GrowthRule::Doubling if m >= 3 => AdmissibilityProfile {
                m,
                delta: 4,
                c: rat_int(2),
                theta: rat_int(1),
            },
            GrowthRule::Doubling => AdmissibilityProfile {
                m,
                delta: 3usize << depth.min(32),
                c: rat_pow(2, depth as i32 + 1),
                theta: rat_int(1),
            },
            GrowthRule::Periodic => AdmissibilityProfile {
                m,
                delta: 4,
                c: rat_int(2),
                theta: rat_int(2 * (m as i64 - 1)),
            },
            GrowthRule::Tube => AdmissibilityProfile {
                m,
                delta: 4.max(1usize << depth.min(32)),
                c: rat_int(2),
                theta: rat_pow(m, depth as i32),
            },
        };
        Ok(profile)
    }
}

/// Map from a level onto the subdivision of the one below: vertex images
/// plus the derived edge images. `edge_image` is `None` when no target edge
/// of equal length joins the image endpoints, or when the choice (and with
/// it the map on interior points) is ambiguous.
#[derive(Debug, Clone)]
pub struct Projection {
    pub vertex_map: Vec<usize>,
    /// Per source edge: (target edge, flipped). Flipped means the source u
    /// endpoint sits over the target v endpoint.
    pub edge_image: Vec<Option<(usize, bool)>>,
}

fn derive_projection(
    source: &MetricGraph,
    target: &MetricGraph,
    vertex_map: Vec<usize>,
) -> Result<Projection> {
    if vertex_map.len() != source.vertex_count() {
        return Err(MdlError::InvalidSystem(format!(
            "vertex map has {} entries for {} vertices",
            vertex_map.len(),
            source.vertex_count()
        )));
    }
    for &w in &vertex_map {
        if w >= target.vertex_count() {
            return Err(MdlError::UnknownVertex(w));
        }
    }
    let mut edge_image = Vec::with_capacity(source.edge_count());
    for e in source.edges() {
        let wu = vertex_map[e.u];
        let wv = vertex_map[e.v];
        let mut candidates: Vec<usize> = Vec::new();
        for &f in target.star(wu)? {
            let fe = target.edge(f)?;
            let joins = (fe.u == wu && fe.v == wv) || (fe.u == wv && fe.v == wu);
            if joins && fe.length == e.length {
                candidates.push(f);
            }
        }
        candidates.dedup();
        let image = match candidates.as_slice() {
            [f] => {
                let fe = target.edge(*f)?;
                if fe.u == fe.v || e.u == e.v {
                    None
                } else {
                    Some((*f, fe.u != wu))
                }
            }
            _ => None,
        };
        edge_image.push(image);
    }
    Ok(Projection { vertex_map, edge_image })
}

#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub rows: Vec<CheckRow>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn row(&self, name: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            let mark = if row.passed { " ok " } else { "FAIL" };
            writeln!(f, "[{mark}] {:<22} {}", row.name, row.detail)?;
        }
        Ok(())
    }
}

fn pass(name: &'static str, detail: String) -> CheckRow {
    CheckRow { name, passed: true, detail }
}

fn fail(name: &'static str, detail: String) -> CheckRow {
    CheckRow { name, passed: false, detail }
}

#[derive(Debug, Clone)]
pub struct InverseSystem {
    profile: AdmissibilityProfile,
    signed: bool,
    levels: Vec<MetricGraph>,
    phi: Vec<Vec<Rat>>,
    subdivided: Vec<(MetricGraph, SubdivisionMap)>,
    phi_sub: Vec<Vec<Rat>>,
    projections: Vec<Projection>,
    edge_preimages: Vec<Vec<Vec<(usize, bool)>>>,
    vertex_fibers: Vec<Vec<Vec<usize>>>,
}

fn interpolate(graph: &MetricGraph, values: &[Rat], p: &GraphPoint) -> Result<Rat> {
    match p {
        GraphPoint::Vertex(v) => values
            .get(*v)
            .cloned()
            .ok_or(MdlError::UnknownVertex(*v)),
        GraphPoint::Interior { edge, offset } => {
            let e = graph.edge(*edge)?;
            let a = &values[e.u];
            let b = &values[e.v];
            Ok(a + (b - a) * offset / &e.length)
        }
    }
}

fn subdivided_values(
    parent: &MetricGraph,
    values: &[Rat],
    sub: &MetricGraph,
    map: &SubdivisionMap,
) -> Vec<Rat> {
    let m = rat_int(map.m as i64);
    let mut out = Vec::with_capacity(sub.vertex_count());
    for v in 0..sub.vertex_count() {
        match map.interior_vertex_origin(v) {
            None => out.push(values[v].clone()),
            Some((e, pos)) => {
                let edge = parent.edge(e).expect("cell parent");
                let a = &values[edge.u];
                let b = &values[edge.v];
                out.push(a + (b - a) * rat_int(pos as i64) / &m);
            }
        }
    }
    out
}

/// Grid position of a level-map value at resolution `scale` = m^{i+1},
/// reduced mod m. Values must already lie on the grid.
fn grid_index(value: &Rat, scale: &Rat, m: u32) -> Result<i64> {
    let g = value * scale;
    if !g.is_integer() {
        return Err(MdlError::InvalidSystem(format!(
            "level map value {} off the grid",
            format_rat(value)
        )));
    }
    let idx = g.to_integer().mod_floor(&BigInt::from(m));
    idx.to_i64().ok_or_else(|| {
        MdlError::InvalidSystem("grid index out of integer range".into())
    })
}

impl InverseSystem {
    /// Assembles a tower from raw parts, deriving edge images and fiber
    /// tables. Only shape errors are rejected here; run `validate` for the
    /// structural conditions.
    pub fn from_parts(
        profile: AdmissibilityProfile,
        signed: bool,
        levels: Vec<MetricGraph>,
        phi: Vec<Vec<Rat>>,
        vertex_maps: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if levels.is_empty() {
            return Err(MdlError::InvalidSystem("tower needs a base level".into()));
        }
        if phi.len() != levels.len() {
            return Err(MdlError::InvalidSystem(format!(
                "{} level maps for {} levels",
                phi.len(),
                levels.len()
            )));
        }
        for (i, g) in levels.iter().enumerate() {
            if phi[i].len() != g.vertex_count() {
                return Err(MdlError::InvalidSystem(format!(
                    "level {i}: {} map values for {} vertices",
                    phi[i].len(),
                    g.vertex_count()
                )));
            }
        }
        if vertex_maps.len() + 1 != levels.len() {
            return Err(MdlError::InvalidSystem(format!(
                "{} projections for {} levels",
                vertex_maps.len(),
                levels.len()
            )));
        }
        let mut subdivided = Vec::with_capacity(vertex_maps.len());
        let mut phi_sub = Vec::with_capacity(vertex_maps.len());
        let mut projections = Vec::with_capacity(vertex_maps.len());
        for (i, vm) in vertex_maps.into_iter().enumerate() {
            let (sub, map) = levels[i].subdivide(profile.m)?;
            let values = subdivided_values(&levels[i], &phi[i], &sub, &map);
            let proj = derive_projection(&levels[i + 1], &sub, vm)?;
            subdivided.push((sub, map));
            phi_sub.push(values);
            projections.push(proj);
        }
        let mut edge_preimages = Vec::with_capacity(projections.len());
        let mut vertex_fibers = Vec::with_capacity(projections.len());
        for (i, proj) in projections.iter().enumerate() {
            let sub = &subdivided[i].0;
            let mut ep = vec![Vec::new(); sub.edge_count()];
            for (e, image) in proj.edge_image.iter().enumerate() {
                if let Some((f, flip)) = image {
                    ep[*f].push((e, *flip));
                }
            }
            let mut vf = vec![Vec::new(); sub.vertex_count()];
            for (v, &w) in proj.vertex_map.iter().enumerate() {
                vf[w].push(v);
            }
            edge_preimages.push(ep);
            vertex_fibers.push(vf);
        }
        Ok(InverseSystem {
            profile,
            signed,
            levels,
            phi,
            subdivided,
            phi_sub,
            projections,
            edge_preimages,
            vertex_fibers,
        })
    }

    /// Standard tower over the unit segment with identity level map.
    pub fn generate(m: u32, rule: GrowthRule, depth: usize) -> Result<Self> {
        let profile = AdmissibilityProfile::standard(m, rule, depth)?;
        let base = MetricGraph::new(2, vec![(0, 1, rat_int(1), rat_int(1))], 0)?;
        let base_phi = vec![rat_int(0), rat_int(1)];
        Self::grow(profile, false, base, base_phi, rule, depth)
    }

    /// Tower over a two-edge tent base whose level map rises then falls;
    /// exercises the sign-carrying variant of the checks.
    pub fn generate_signed_tent(m: u32, rule: GrowthRule, depth: usize) -> Result<Self> {
        let profile = AdmissibilityProfile::standard(m, rule, depth)?;
        let half = crate::rational::rat(1, 2);
        let base = MetricGraph::new(
            3,
            vec![
                (0, 1, rat_int(1), half.clone()),
                (1, 2, rat_int(1), half),
            ],
            0,
        )?;
        let base_phi = vec![rat_int(0), rat_int(1), rat_int(0)];
        Self::grow(profile, true, base, base_phi, rule, depth)
    }

    fn grow(
        profile: AdmissibilityProfile,
        signed: bool,
        base: MetricGraph,
        base_phi: Vec<Rat>,
        rule: GrowthRule,
        depth: usize,
    ) -> Result<Self> {
        let mut levels = vec![base];
        let mut phi = vec![base_phi];
        let mut vertex_maps = Vec::with_capacity(depth);
        for i in 0..depth {
            let (next, next_phi, vm) = match rule {
                GrowthRule::Doubling => Self::double_step(&levels[i], &phi[i], profile.m, i)?,
                GrowthRule::Periodic => Self::periodic_step(&levels[i], &phi[i], profile.m, i)?,
                GrowthRule::Tube => Self::tube_step(&levels[i], &phi[i], profile.m, i)?,
            };
            levels.push(next);
            phi.push(next_phi);
            vertex_maps.push(vm);
        }
        Self::from_parts(profile, signed, levels, phi, vertex_maps)
    }

    fn double_step(
        prev: &MetricGraph,
        prev_phi: &[Rat],
        m: u32,
        i: usize,
    ) -> Result<(MetricGraph, Vec<Rat>, Vec<usize>)> {
        let (sub, map) = prev.subdivide(m)?;
        let values = subdivided_values(prev, prev_phi, &sub, &map);
        let scale = rat_pow(m, i as i32 + 1);
        let target = (m / 2) as i64;
        let two = rat_int(2);
        let mut edges = Vec::new();
        for e in sub.edges() {
            let low = values[e.u].clone().min(values[e.v].clone());
            if grid_index(&low, &scale, m)? == target {
                let half = &e.mass / &two;
                edges.push((e.u, e.v, e.length.clone(), half.clone()));
                edges.push((e.u, e.v, e.length.clone(), half));
            } else {
                edges.push((e.u, e.v, e.length.clone(), e.mass.clone()));
            }
        }
        let next = MetricGraph::new(sub.vertex_count(), edges, i as i32 + 1)?;
        Ok((next, values, (0..sub.vertex_count()).collect()))
    }

    fn periodic_step(
        prev: &MetricGraph,
        prev_phi: &[Rat],
        m: u32,
        i: usize,
    ) -> Result<(MetricGraph, Vec<Rat>, Vec<usize>)> {
        let (sub, map) = prev.subdivide(m)?;
        let values = subdivided_values(prev, prev_phi, &sub, &map);
        let j = 1 + (i as u32) % (m - 1);
        let mut glue = vec![false; sub.vertex_count()];
        for (e_id, e) in prev.edges().iter().enumerate() {
            let ascending = prev_phi[e.u] < prev_phi[e.v];
            let k = if ascending { j } else { m - j } as usize;
            glue[map.original_vertices + e_id * (m as usize - 1) + (k - 1)] = true;
        }
        glue_copies(&sub, &values, &glue, i as i32 + 1)
    }

    fn tube_step(
        prev: &MetricGraph,
        prev_phi: &[Rat],
        m: u32,
        i: usize,
    ) -> Result<(MetricGraph, Vec<Rat>, Vec<usize>)> {
        let (sub, map) = prev.subdivide(m)?;
        let values = subdivided_values(prev, prev_phi, &sub, &map);
        let lo = values.iter().min().expect("nonempty").clone();
        let hi = values.iter().max().expect("nonempty").clone();
        let glue: Vec<bool> = values.iter().map(|v| *v == lo || *v == hi).collect();
        glue_copies(&sub, &values, &glue, i as i32 + 1)
    }

    /// Swaps in a different constant profile; points and maps are unchanged.
    pub fn with_profile(mut self, profile: AdmissibilityProfile) -> Result<Self> {
        if profile.m != self.profile.m {
            return Err(MdlError::BadArgument(
                "profile arity must match the tower".into(),
            ));
        }
        self.profile = profile;
        Ok(self)
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn m(&self) -> u32 {
        self.profile.m
    }

    pub fn profile(&self) -> &AdmissibilityProfile {
        &self.profile
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn edge_length(&self, level: usize) -> Rat {
        rat_pow(self.profile.m, -(level as i32))
    }

    pub fn level_graph(&self, level: usize) -> Result<&MetricGraph> {
        self.levels.get(level).ok_or_else(|| {
            MdlError::InsufficientDepth(format!(
                "level {level} requested from a depth-{} tower",
                self.depth()
            ))
        })
    }

    /// Subdivision of level `level`, defined for level < depth.
    pub fn subdivided(&self, level: usize) -> Result<&(MetricGraph, SubdivisionMap)> {
        self.subdivided.get(level).ok_or_else(|| {
            MdlError::InsufficientDepth(format!(
                "subdivision of level {level} requested from a depth-{} tower",
                self.depth()
            ))
        })
    }

    pub fn projection(&self, level: usize) -> Result<&Projection> {
        self.projections.get(level).ok_or_else(|| {
            MdlError::InsufficientDepth(format!(
                "projection {level} requested from a depth-{} tower",
                self.depth()
            ))
        })
    }

    pub fn phi_values(&self, level: usize) -> Result<&[Rat]> {
        self.phi
            .get(level)
            .map(|v| v.as_slice())
            .ok_or_else(|| MdlError::BadArgument(format!("no level {level}")))
    }

    pub fn phi_value(&self, level: usize, p: &GraphPoint) -> Result<Rat> {
        interpolate(self.level_graph(level)?, self.phi_values(level)?, p)
    }

    pub fn phi_sub_values(&self, level: usize) -> Result<&[Rat]> {
        self.phi_sub
            .get(level)
            .map(|v| v.as_slice())
            .ok_or_else(|| MdlError::BadArgument(format!("no subdivided level {level}")))
    }

    pub fn phi_sub_value(&self, level: usize, p: &GraphPoint) -> Result<Rat> {
        interpolate(&self.subdivided(level)?.0, self.phi_sub_values(level)?, p)
    }

    pub fn fiber_vertices(&self, level: usize, w: usize) -> Result<&[usize]> {
        let fibers = self
            .vertex_fibers
            .get(level)
            .ok_or_else(|| MdlError::BadArgument(format!("no projection {level}")))?;
        fibers
            .get(w)
            .map(|v| v.as_slice())
            .ok_or(MdlError::UnknownVertex(w))
    }

    pub fn edge_preimages(&self, level: usize, f: usize) -> Result<&[(usize, bool)]> {
        let pre = self
            .edge_preimages
            .get(level)
            .ok_or_else(|| MdlError::BadArgument(format!("no projection {level}")))?;
        pre.get(f).map(|v| v.as_slice()).ok_or(MdlError::UnknownEdge(f))
    }

    /// Image in the subdivided level below: X_{level+1} -> X_level'.
    pub fn project_to_subdivided(&self, level: usize, p: &GraphPoint) -> Result<GraphPoint> {
        let proj = self.projection(level)?;
        let src = self.level_graph(level + 1)?;
        let sub = &self.subdivided(level)?.0;
        match p {
            GraphPoint::Vertex(v) => {
                let w = *proj
                    .vertex_map
                    .get(*v)
                    .ok_or(MdlError::UnknownVertex(*v))?;
                sub.vertex_point(w)
            }
            GraphPoint::Interior { edge, offset } => {
                let e = src.edge(*edge)?;
                let (f, flipped) = proj
                    .edge_image
                    .get(*edge)
                    .copied()
                    .flatten()
                    .ok_or_else(|| {
                        MdlError::InvalidSystem(format!(
                            "edge {edge} of level {} has no unambiguous image",
                            level + 1
                        ))
                    })?;
                let off = if flipped { &e.length - offset } else { offset.clone() };
                sub.point_on_edge(f, off)
            }
        }
    }

    /// Image one level down: X_{level+1} -> X_level.
    pub fn project_point(&self, level: usize, p: &GraphPoint) -> Result<GraphPoint> {
        let q = self.project_to_subdivided(level, p)?;
        let (sub, map) = self.subdivided(level)?;
        map.to_parent(self.level_graph(level)?, sub, &q)
    }

    /// Repeated projection from level `from` down to level `to`.
    pub fn project_to_level(&self, from: usize, to: usize, p: &GraphPoint) -> Result<GraphPoint> {
        if to > from {
            return Err(MdlError::BadArgument(format!(
                "cannot project upward from level {from} to {to}"
            )));
        }
        let mut q = p.clone();
        for level in (to..from).rev() {
            q = self.project_point(level, &q)?;
        }
        Ok(q)
    }

    /// Edge of X_to whose iterated cells contain the given edge of X_from.
    pub fn ancestor_edge(&self, from: usize, edge: usize, to: usize) -> Result<usize> {
        if to > from {
            return Err(MdlError::BadArgument(format!(
                "level {to} is above level {from}"
            )));
        }
        self.level_graph(from)?.edge(edge)?;
        let mut e = edge;
        for level in (to..from).rev() {
            let proj = self.projection(level)?;
            let (sub, _) = proj
                .edge_image
                .get(e)
                .copied()
                .flatten()
                .ok_or_else(|| MdlError::InvalidSystem(format!("edge {e} has no image")))?;
            e = self.subdivided(level)?.1.parent[sub].0;
        }
        Ok(e)
    }

    /// Ancestor edge at level `to` for every edge of X_from.
    pub fn ancestor_edges(&self, from: usize, to: usize) -> Result<Vec<usize>> {
        (0..self.level_graph(from)?.edge_count())
            .map(|e| self.ancestor_edge(from, e, to))
            .collect()
    }

    /// All preimages in X_{level+1} of a point of X_level'.
    pub fn lift_point(&self, level: usize, q: &GraphPoint) -> Result<Vec<GraphPoint>> {
        let src = self.level_graph(level + 1)?;
        match q {
            GraphPoint::Vertex(w) => Ok(self
                .fiber_vertices(level, *w)?
                .iter()
                .map(|&v| GraphPoint::Vertex(v))
                .collect()),
            GraphPoint::Interior { edge, offset } => {
                let mut out = Vec::new();
                for &(e, flipped) in self.edge_preimages(level, *edge)? {
                    let len = &src.edge(e)?.length;
                    let off = if flipped { len - offset } else { offset.clone() };
                    out.push(src.point_on_edge(e, off)?);
                }
                Ok(out)
            }
        }
    }

    /// All preimages in X_{level+1} of a point of X_level.
    pub fn lift_from_level(&self, level: usize, p: &GraphPoint) -> Result<Vec<GraphPoint>> {
        let (sub, map) = self.subdivided(level)?;
        let q = map.to_subdivided(self.level_graph(level)?, sub, p)?;
        self.lift_point(level, &q)
    }

    /// Fraction of the mass over each direction at the image vertex that
    /// flows through the lifted vertex `v` of X_{level+1}. Under the star
    /// splitting condition this is independent of the direction.
    pub fn vertex_lift_weight(&self, level: usize, v: usize) -> Result<Rat> {
        let proj = self.projection(level)?;
        let src = self.level_graph(level + 1)?;
        let sub = &self.subdivided(level)?.0;
        let w = *proj.vertex_map.get(v).ok_or(MdlError::UnknownVertex(v))?;
        let f0 = *sub
            .star(w)?
            .first()
            .ok_or_else(|| MdlError::InvalidSystem(format!("isolated vertex {w}")))?;
        let mut s = Rat::zero();
        for &e in src.star(v)? {
            if proj.edge_image[e].map(|(f, _)| f) == Some(f0) {
                s += &src.edge(e)?.mass;
            }
        }
        Ok(s / &sub.edge(f0)?.mass)
    }

    pub fn validate(&self) -> ValidationReport {
        let checks: [(&str, fn(&Self) -> CheckRow); 9] = [
            ("levels", Self::check_levels),
            ("base", Self::check_base),
            ("valence", Self::check_valence),
            ("projections", Self::check_projections),
            ("fiber", Self::check_fiber_diameter),
            ("mass_ratio", Self::check_mass_ratio),
            ("pushforward", Self::check_pushforward),
            ("star", Self::check_star_splitting),
            ("level_maps", Self::check_level_maps),
        ];
        let timing = std::env::var("MDL_CHECK_TIMING").is_ok();
        let mut rows = Vec::with_capacity(checks.len());
        for (name, check) in checks {
            let t = std::time::Instant::now();
            rows.push(check(self));
            if timing {
                eprintln!("  check {name}: {:?}", t.elapsed());
            }
        }
        ValidationReport { rows }
    }

    fn check_levels(&self) -> CheckRow {
        const NAME: &str = "level_shape";
        let mut edge_total = 0;
        for (i, g) in self.levels.iter().enumerate() {
            if !g.is_connected() {
                return fail(NAME, format!("level {i} is disconnected"));
            }
            let want = self.edge_length(i);
            for (id, e) in g.edges().iter().enumerate() {
                if e.length != want {
                    return fail(
                        NAME,
                        format!(
                            "level {i} edge {id}: length {} instead of {}",
                            format_rat(&e.length),
                            format_rat(&want)
                        ),
                    );
                }
                if e.mass <= Rat::zero() {
                    return fail(NAME, format!("level {i} edge {id}: mass not positive"));
                }
            }
            edge_total += g.edge_count();
        }
        pass(
            NAME,
            format!(
                "{} levels, arity {}, {} edges in total",
                self.levels.len(),
                self.profile.m,
                edge_total
            ),
        )
    }

    fn check_base(&self) -> CheckRow {
        const NAME: &str = "base_level";
        if self.signed {
            return pass(NAME, "sign-carrying tower, custom base".into());
        }
        let g = &self.levels[0];
        let one = rat_int(1);
        let ok = g.vertex_count() == 2
            && g.edge_count() == 1
            && g.edges()[0].length == one
            && g.edges()[0].mass == one
            && {
                let e = &g.edges()[0];
                let (a, b) = (&self.phi[0][e.u], &self.phi[0][e.v]);
                (a.is_zero() && *b == one) || (b.is_zero() && *a == one)
            };
        if ok {
            pass(NAME, "unit segment with unit mass and identity level map".into())
        } else {
            fail(NAME, "base is not the unit segment with identity level map".into())
        }
    }

    fn check_valence(&self) -> CheckRow {
        const NAME: &str = "valence_bound";
        let mut worst = 0usize;
        for (i, g) in self.levels.iter().enumerate() {
            for v in 0..g.vertex_count() {
                let val = g.valence(v).unwrap_or(0);
                worst = worst.max(val);
                if val > self.profile.delta {
                    return fail(
                        NAME,
                        format!(
                            "level {i} vertex {v}: valence {val} exceeds {}",
                            self.profile.delta
                        ),
                    );
                }
            }
        }
        pass(NAME, format!("max valence {worst} within {}", self.profile.delta))
    }

    fn check_projections(&self) -> CheckRow {
        const NAME: &str = "projection_structure";
        for (i, proj) in self.projections.iter().enumerate() {
            let src = &self.levels[i + 1];
            let sub = &self.subdivided[i].0;
            for (e, image) in proj.edge_image.iter().enumerate() {
                if image.is_none() {
                    return fail(
                        NAME,
                        format!("level {} edge {e} has no unique isometric image", i + 1),
                    );
                }
            }
            for v in 0..src.vertex_count() {
                let w = proj.vertex_map[v];
                for &f in sub.star(w).unwrap_or(&[]) {
                    let covered = src
                        .star(v)
                        .unwrap_or(&[])
                        .iter()
                        .any(|&e| proj.edge_image[e].map(|(g, _)| g) == Some(f));
                    if !covered {
                        return fail(
                            NAME,
                            format!(
                                "map {i} not open at vertex {v}: direction {f} at image {w} uncovered"
                            ),
                        );
                    }
                }
            }
            for f in 0..sub.edge_count() {
                if self.edge_preimages[i][f].is_empty() {
                    return fail(NAME, format!("map {i} misses subdivided edge {f}"));
                }
            }
            for w in 0..sub.vertex_count() {
                if self.vertex_fibers[i][w].is_empty() {
                    return fail(NAME, format!("map {i} has empty fiber over vertex {w}"));
                }
            }
        }
        pass(
            NAME,
            format!("{} maps simplicial, open, surjective", self.projections.len()),
        )
    }

    fn check_fiber_diameter(&self) -> CheckRow {
        const NAME: &str = "fiber_diameter";
        let mut worst = Rat::zero();
        for i in 0..self.projections.len() {
            let src = &self.levels[i + 1];
            let bound = &self.profile.theta * self.edge_length(i + 1);
            let cutoff = rat_int(2) * &bound;
            let level_worst = match hop_budget(src, &cutoff) {
                Some(h) => self.fiber_level_hops(i, &bound, h),
                None => self.fiber_level_exact(i, &bound, &cutoff),
            };
            match level_worst {
                Ok(w) => worst = worst.max(w),
                Err(msg) => return fail(NAME, msg),
            }
        }
        pass(NAME, format!("worst fiber diameter {}", format_rat(&worst)))
    }

    /// Fiber sweep of one projection on a uniform-length level, measured in
    /// hops with reused scratch.
    fn fiber_level_hops(
        &self,
        i: usize,
        bound: &Rat,
        budget: u32,
    ) -> std::result::Result<Rat, String> {
        let src = &self.levels[i + 1];
        let sub = &self.subdivided[i].0;
        let l = src.uniform_edge_length().expect("hop budget implies uniform length");
        let d_of = |k: Option<u32>| k.map(|k| rat_int(k as i64) * &l);
        let mut sa = HopScanner::new(src);
        let mut sb = HopScanner::new(src);
        let mut worst = Rat::zero();
        for w in 0..sub.vertex_count() {
            let fiber = &self.vertex_fibers[i][w];
            if fiber.len() < 2 {
                continue;
            }
            for (a_idx, &v1) in fiber.iter().enumerate() {
                if fiber.len() <= a_idx + 1 {
                    continue;
                }
                sa.run(src, v1, budget).map_err(|e| e.to_string())?;
                for &v2 in &fiber[a_idx + 1..] {
                    match d_of(sa.hops_to(v2)) {
                        Some(d) if &d <= bound => worst = worst.max(d),
                        _ => {
                            return Err(format!(
                                "fiber over vertex {w} of level {i} wider than {}",
                                format_rat(bound)
                            ))
                        }
                    }
                }
            }
        }
        for f in 0..sub.edge_count() {
            let pre = &self.edge_preimages[i][f];
            if pre.len() < 2 {
                continue;
            }
            for (a_idx, &(e1, fl1)) in pre.iter().enumerate() {
                if pre.len() <= a_idx + 1 {
                    continue;
                }
                let ed1 = src.edge(e1).map_err(|e| e.to_string())?;
                let (a1, b1) = if fl1 { (ed1.v, ed1.u) } else { (ed1.u, ed1.v) };
                sa.run(src, a1, budget).map_err(|e| e.to_string())?;
                sb.run(src, b1, budget).map_err(|e| e.to_string())?;
                for &(e2, fl2) in &pre[a_idx + 1..] {
                    let ed2 = src.edge(e2).map_err(|e| e.to_string())?;
                    let (a2, b2) = if fl2 { (ed2.v, ed2.u) } else { (ed2.u, ed2.v) };
                    let sup = matched_sup_core(
                        &ed1.length,
                        d_of(sa.hops_to(a2)),
                        d_of(sa.hops_to(b2)),
                        d_of(sb.hops_to(a2)),
                        d_of(sb.hops_to(b2)),
                    );
                    match sup {
                        Some(d) if &d <= bound => worst = worst.max(d),
                        _ => {
                            return Err(format!(
                                "fiber over edge {f} of level {i} wider than {} \
                                 (preimages {e1}, {e2})",
                                format_rat(bound)
                            ))
                        }
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Fallback fiber sweep with exact bounded shortest paths.
    fn fiber_level_exact(
        &self,
        i: usize,
        bound: &Rat,
        cutoff: &Rat,
    ) -> std::result::Result<Rat, String> {
        let src = &self.levels[i + 1];
        let sub = &self.subdivided[i].0;
        let mut worst = Rat::zero();
        for w in 0..sub.vertex_count() {
            let fiber = &self.vertex_fibers[i][w];
            if fiber.len() < 2 {
                continue;
            }
            for (a_idx, &v1) in fiber.iter().enumerate() {
                if fiber.len() <= a_idx + 1 {
                    continue;
                }
                let dist = src
                    .bounded_distances_from(&GraphPoint::Vertex(v1), cutoff)
                    .map_err(|e| e.to_string())?;
                for &v2 in &fiber[a_idx + 1..] {
                    match &dist[v2] {
                        Some(d) if d <= bound => worst = worst.max(d.clone()),
                        _ => {
                            return Err(format!(
                                "fiber over vertex {w} of level {i} wider than {}",
                                format_rat(bound)
                            ))
                        }
                    }
                }
            }
        }
        for f in 0..sub.edge_count() {
            let pre = &self.edge_preimages[i][f];
            if pre.len() < 2 {
                continue;
            }
            for (a_idx, &(e1, fl1)) in pre.iter().enumerate() {
                if pre.len() <= a_idx + 1 {
                    continue;
                }
                let ed1 = src.edge(e1).map_err(|e| e.to_string())?;
                let (a1, b1) = if fl1 { (ed1.v, ed1.u) } else { (ed1.u, ed1.v) };
                let from_a = src
                    .bounded_distances_from(&GraphPoint::Vertex(a1), cutoff)
                    .map_err(|e| e.to_string())?;
                let from_b = src
                    .bounded_distances_from(&GraphPoint::Vertex(b1), cutoff)
                    .map_err(|e| e.to_string())?;
                for &(e2, fl2) in &pre[a_idx + 1..] {
                    let ed2 = src.edge(e2).map_err(|e| e.to_string())?;
                    let (a2, b2) = if fl2 { (ed2.v, ed2.u) } else { (ed2.u, ed2.v) };
                    let sup = matched_sup_core(
                        &ed1.length,
                        from_a[a2].clone(),
                        from_a[b2].clone(),
                        from_b[a2].clone(),
                        from_b[b2].clone(),
                    );
                    match sup {
                        Some(d) if &d <= bound => worst = worst.max(d),
                        _ => {
                            return Err(format!(
                                "fiber over edge {f} of level {i} wider than {} \
                                 (preimages {e1}, {e2})",
                                format_rat(bound)
                            ))
                        }
                    }
                }
            }
        }
        Ok(worst)
    }

    fn check_mass_ratio(&self) -> CheckRow {
        const NAME: &str = "adjacent_mass_ratio";
        let mut worst = rat_int(1);
        for (i, g) in self.levels.iter().enumerate() {
            for v in 0..g.vertex_count() {
                let star = g.star(v).unwrap_or(&[]);
                if star.is_empty() {
                    continue;
                }
                let masses: Vec<&Rat> = star.iter().map(|&e| &g.edges()[e].mass).collect();
                let mn = masses.iter().min().unwrap();
                let mx = masses.iter().max().unwrap();
                let ratio = *mx / *mn;
                if ratio > self.profile.c {
                    return fail(
                        NAME,
                        format!(
                            "level {i} vertex {v}: mass ratio {} exceeds {}",
                            format_rat(&ratio),
                            format_rat(&self.profile.c)
                        ),
                    );
                }
                worst = worst.max(ratio);
            }
        }
        pass(NAME, format!("worst adjacent ratio {}", format_rat(&worst)))
    }

    fn check_pushforward(&self) -> CheckRow {
        const NAME: &str = "mass_pushforward";
        for i in 0..self.projections.len() {
            let src = &self.levels[i + 1];
            let sub = &self.subdivided[i].0;
            for f in 0..sub.edge_count() {
                let want = &sub.edges()[f].mass;
                let got: Rat = self.edge_preimages[i][f]
                    .iter()
                    .map(|&(e, _)| src.edges()[e].mass.clone())
                    .sum();
                if &got != want {
                    return fail(
                        NAME,
                        format!(
                            "map {i} edge {f}: pushforward mass {} instead of {}",
                            format_rat(&got),
                            format_rat(want)
                        ),
                    );
                }
            }
        }
        pass(NAME, "pushforward is exact on every edge".into())
    }

    fn check_star_splitting(&self) -> CheckRow {
        const NAME: &str = "star_mass_splitting";
        for (i, proj) in self.projections.iter().enumerate() {
            let src = &self.levels[i + 1];
            let sub = &self.subdivided[i].0;
            for w in 0..sub.vertex_count() {
                for &v in &self.vertex_fibers[i][w] {
                    let mut ratio: Option<Rat> = None;
                    for &f in sub.star(w).unwrap_or(&[]) {
                        let mut s = Rat::zero();
                        for &e in src.star(v).unwrap_or(&[]) {
                            if proj.edge_image[e].map(|(g, _)| g) == Some(f) {
                                s += &src.edges()[e].mass;
                            }
                        }
                        let r = s / &sub.edges()[f].mass;
                        match &ratio {
                            None => ratio = Some(r),
                            Some(prev) if *prev == r => {}
                            Some(prev) => {
                                return fail(
                                    NAME,
                                    format!(
                                        "map {i} vertex {v}: direction {f} carries ratio {} \
                                         against {} elsewhere",
                                        format_rat(&r),
                                        format_rat(prev)
                                    ),
                                )
                            }
                        }
                    }
                }
            }
        }
        pass(NAME, "every lifted vertex splits mass evenly over directions".into())
    }

    fn check_level_maps(&self) -> CheckRow {
        const NAME: &str = "grid_level_maps";
        for (i, g) in self.levels.iter().enumerate() {
            let scale = rat_pow(self.profile.m, i as i32);
            for (v, value) in self.phi[i].iter().enumerate() {
                if !(value * &scale).is_integer() {
                    return fail(
                        NAME,
                        format!(
                            "level {i} vertex {v}: value {} off the m^-{i} grid",
                            format_rat(value)
                        ),
                    );
                }
            }
            for (id, e) in g.edges().iter().enumerate() {
                let drop = (&self.phi[i][e.u] - &self.phi[i][e.v]).abs();
                if drop != e.length {
                    return fail(
                        NAME,
                        format!(
                            "level {i} edge {id}: value change {} instead of {}",
                            format_rat(&drop),
                            format_rat(&e.length)
                        ),
                    );
                }
            }
        }
        for (i, proj) in self.projections.iter().enumerate() {
            for (v, &w) in proj.vertex_map.iter().enumerate() {
                if self.phi[i + 1][v] != self.phi_sub[i][w] {
                    return fail(
                        NAME,
                        format!(
                            "level map does not commute with map {i} at vertex {v}"
                        ),
                    );
                }
            }
        }
        pass(NAME, "grid values, unit slopes, commutes with projections".into())
    }
}

fn glue_copies(
    sub: &MetricGraph,
    values: &[Rat],
    glue: &[bool],
    level: i32,
) -> Result<(MetricGraph, Vec<Rat>, Vec<usize>)> {
    let n = sub.vertex_count();
    let mut b_id = vec![0usize; n];
    let mut next_id = n;
    for v in 0..n {
        b_id[v] = if glue[v] {
            v
        } else {
            let id = next_id;
            next_id += 1;
            id
        };
    }
    let two = rat_int(2);
    let mut edges = Vec::with_capacity(sub.edge_count() * 2);
    for e in sub.edges() {
        edges.push((e.u, e.v, e.length.clone(), &e.mass / &two));
    }
    for e in sub.edges() {
        edges.push((b_id[e.u], b_id[e.v], e.length.clone(), &e.mass / &two));
    }
    let graph = MetricGraph::new(next_id, edges, level)?;
    let mut phi = values.to_vec();
    let mut vm: Vec<usize> = (0..n).collect();
    for v in 0..n {
        if !glue[v] {
            phi.push(values[v].clone());
            vm.push(v);
        }
    }
    Ok((graph, phi, vm))
}

/// Largest hop count whose distance stays within the cutoff.
fn hop_budget(graph: &MetricGraph, cutoff: &Rat) -> Option<u32> {
    let l = graph.uniform_edge_length()?;
    (cutoff / l).floor().to_integer().to_u32()
}

/// Exact supremum over matched parameters of the distance between two edges
/// of common length `l` lying over the same image edge, given the bounded
/// distances between their oriented endpoints. `None` means some parameter
/// pair exceeds the search cutoff behind those distances.
fn matched_sup_core(
    l: &Rat,
    daa: Option<Rat>,
    dab: Option<Rat>,
    dba: Option<Rat>,
    dbb: Option<Rat>,
) -> Option<Rat> {
    let cross = match (&dab, &dba) {
        (Some(x), Some(y)) => Some(l + x.min(y)),
        (Some(x), None) => Some(l + x),
        (None, Some(y)) => Some(l + y),
        (None, None) => None,
    };
    let two = rat_int(2);
    let four = rat_int(4);
    let mut breakpoints = vec![Rat::zero(), l.clone()];
    if let (Some(a), Some(b)) = (&daa, &dbb) {
        breakpoints.push((&two * l + b - a) / &four);
    }
    if let (Some(a), Some(c)) = (&daa, &cross) {
        breakpoints.push((c - a) / &two);
    }
    if let (Some(b), Some(c)) = (&dbb, &cross) {
        breakpoints.push(l - (c - b) / &two);
    }
    let mut sup: Option<Rat> = None;
    for s in breakpoints {
        let s = s.max(Rat::zero()).min(l.clone());
        let mut value: Option<Rat> = None;
        let mut consider = |cand: Rat| {
            if value.as_ref().is_none_or(|v| &cand < v) {
                value = Some(cand);
            }
        };
        if let Some(a) = &daa {
            consider(&two * &s + a);
        }
        if let Some(b) = &dbb {
            consider(&two * (l - &s) + b);
        }
        if let Some(c) = &cross {
            consider(c.clone());
        }
        match value {
            // every route out of this parameter exceeds the cutoff
            None => return None,
            Some(v) => {
                if sup.as_ref().is_none_or(|cur| &v > cur) {
                    sup = Some(v);
                }
            }
        }
    }
    sup
}

/// Path along which the level map strictly increases by one grid step per
/// edge. Stored as the vertex sequence plus the edge taken between each
/// consecutive pair, so parallel edges stay distinguishable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonotoneChain {
    level: usize,
    vertices: Vec<usize>,
    edges: Vec<usize>,
}

impl MonotoneChain {
    pub fn at_vertex(system: &InverseSystem, level: usize, v: usize) -> Result<Self> {
        let g = system.level_graph(level)?;
        if v >= g.vertex_count() {
            return Err(MdlError::UnknownVertex(v));
        }
        Ok(MonotoneChain { level, vertices: vec![v], edges: Vec::new() })
    }

    /// Single-edge chain oriented so the level map increases.
    pub fn from_edge(system: &InverseSystem, level: usize, edge: usize) -> Result<Self> {
        let g = system.level_graph(level)?;
        let e = g.edge(edge)?;
        let phi = system.phi_values(level)?;
        let (lo, hi) = if phi[e.u] < phi[e.v] {
            (e.u, e.v)
        } else if phi[e.v] < phi[e.u] {
            (e.v, e.u)
        } else {
            return Err(MdlError::BadArgument(format!(
                "edge {edge} is level: cannot orient"
            )));
        };
        Ok(MonotoneChain { level, vertices: vec![lo, hi], edges: vec![edge] })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn step_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn start_vertex(&self) -> usize {
        self.vertices[0]
    }

    pub fn end_vertex(&self) -> usize {
        *self.vertices.last().expect("nonempty")
    }

    pub fn span(&self, system: &InverseSystem) -> Rat {
        rat_int(self.edges.len() as i64) * system.edge_length(self.level)
    }

    pub fn phi_start(&self, system: &InverseSystem) -> Result<Rat> {
        Ok(system.phi_values(self.level)?[self.vertices[0]].clone())
    }

    pub fn phi_end(&self, system: &InverseSystem) -> Result<Rat> {
        Ok(system.phi_values(self.level)?[self.end_vertex()].clone())
    }

    /// Edges continuing the chain upward from the end vertex, ascending ids.
    pub fn up_candidates(&self, system: &InverseSystem) -> Result<Vec<usize>> {
        monotone_steps(system, self.level, self.end_vertex(), true)
    }

    /// Edges extending the chain downward below the start vertex.
    pub fn down_candidates(&self, system: &InverseSystem) -> Result<Vec<usize>> {
        monotone_steps(system, self.level, self.start_vertex(), false)
    }

    pub fn extend_up(&mut self, system: &InverseSystem, edge: usize) -> Result<()> {
        if !self.up_candidates(system)?.contains(&edge) {
            return Err(MdlError::BadArgument(format!(
                "edge {edge} does not continue the chain upward"
            )));
        }
        let g = system.level_graph(self.level)?;
        let w = g.other_endpoint(edge, self.end_vertex())?;
        self.vertices.push(w);
        self.edges.push(edge);
        Ok(())
    }

    pub fn extend_down(&mut self, system: &InverseSystem, edge: usize) -> Result<()> {
        if !self.down_candidates(system)?.contains(&edge) {
            return Err(MdlError::BadArgument(format!(
                "edge {edge} does not continue the chain downward"
            )));
        }
        let g = system.level_graph(self.level)?;
        let w = g.other_endpoint(edge, self.start_vertex())?;
        self.vertices.insert(0, w);
        self.edges.insert(0, edge);
        Ok(())
    }

    /// Mass-weighted random upward step; false when the chain tops out.
    pub fn extend_up_sampled<R: rand::Rng + ?Sized>(
        &mut self,
        system: &InverseSystem,
        rng: &mut R,
    ) -> Result<bool> {
        let cands = self.up_candidates(system)?;
        if cands.is_empty() {
            return Ok(false);
        }
        let g = system.level_graph(self.level)?;
        let weights: Vec<Rat> = cands.iter().map(|&e| g.edges()[e].mass.clone()).collect();
        let pick = weighted_pick(rng, &weights);
        self.extend_up(system, cands[pick])?;
        Ok(true)
    }

    pub fn extend_down_sampled<R: rand::Rng + ?Sized>(
        &mut self,
        system: &InverseSystem,
        rng: &mut R,
    ) -> Result<bool> {
        let cands = self.down_candidates(system)?;
        if cands.is_empty() {
            return Ok(false);
        }
        let g = system.level_graph(self.level)?;
        let weights: Vec<Rat> = cands.iter().map(|&e| g.edges()[e].mass.clone()).collect();
        let pick = weighted_pick(rng, &weights);
        self.extend_down(system, cands[pick])?;
        Ok(true)
    }

    /// Point at arclength `t` from the start; the chain has unit speed with
    /// respect to the level map.
    pub fn eval(&self, system: &InverseSystem, t: &Rat) -> Result<GraphPoint> {
        let h = system.edge_length(self.level);
        let span = self.span(system);
        if t < &Rat::zero() || t > &span {
            return Err(MdlError::BadArgument(format!(
                "parameter {} outside [0, {}]",
                format_rat(t),
                format_rat(&span)
            )));
        }
        if self.edges.is_empty() || t == &span {
            return Ok(GraphPoint::Vertex(self.end_vertex()));
        }
        let k = crate::rational::rat_floor(&(t / &h))
            .to_usize()
            .unwrap_or(0)
            .min(self.edges.len() - 1);
        let offset = t - rat_int(k as i64) * &h;
        let g = system.level_graph(self.level)?;
        let e = g.edge(self.edges[k])?;
        if e.u == self.vertices[k] {
            g.point_on_edge(self.edges[k], offset)
        } else {
            g.point_on_edge(self.edges[k], &e.length - &offset)
        }
    }

    /// Point at level-map value `x`.
    pub fn eval_at_phi(&self, system: &InverseSystem, x: &Rat) -> Result<GraphPoint> {
        let t = x - self.phi_start(system)?;
        self.eval(system, &t)
    }

    /// Arclength of `p` along the chain, if the chain passes through it.
    pub fn locate(&self, system: &InverseSystem, p: &GraphPoint) -> Result<Option<Rat>> {
        let h = system.edge_length(self.level);
        match p {
            GraphPoint::Vertex(v) => Ok(self
                .vertices
                .iter()
                .position(|&w| w == *v)
                .map(|k| rat_int(k as i64) * &h)),
            GraphPoint::Interior { edge, offset } => {
                let g = system.level_graph(self.level)?;
                for (k, &e) in self.edges.iter().enumerate() {
                    if e != *edge {
                        continue;
                    }
                    let ed = g.edge(e)?;
                    let local = if ed.u == self.vertices[k] {
                        offset.clone()
                    } else {
                        &ed.length - offset
                    };
                    return Ok(Some(rat_int(k as i64) * &h + local));
                }
                Ok(None)
            }
        }
    }

    /// The same path seen in the subdivided graph of this level.
    fn subdivided_path(&self, system: &InverseSystem) -> Result<(Vec<usize>, Vec<usize>)> {
        let (_, map) = system.subdivided(self.level)?;
        let parent = system.level_graph(self.level)?;
        let m = system.m() as usize;
        let mut vs = vec![self.vertices[0]];
        let mut es = Vec::with_capacity(self.edges.len() * m);
        for (k, &e) in self.edges.iter().enumerate() {
            let edge = parent.edge(e)?;
            let forward = edge.u == self.vertices[k];
            for c in 0..m {
                es.push(map.cells[e][if forward { c } else { m - 1 - c }]);
                let endpos = if forward { c + 1 } else { m - 1 - c };
                vs.push(if endpos == 0 {
                    edge.u
                } else if endpos == m {
                    edge.v
                } else {
                    map.original_vertices + e * (m - 1) + (endpos - 1)
                });
            }
        }
        Ok((vs, es))
    }

    /// Every chain one level up that projects onto this one, in a fixed
    /// lexicographic order.
    pub fn lift_all(&self, system: &InverseSystem) -> Result<Vec<MonotoneChain>> {
        let i = self.level;
        let proj = system.projection(i)?;
        let next = system.level_graph(i + 1)?;
        let (_, sub_edges) = self.subdivided_path(system)?;
        let sub_start = self.subdivided_path(system)?.0[0];
        let starts = system.fiber_vertices(i, sub_start)?;
        let mut stack: Vec<MonotoneChain> = starts
            .iter()
            .rev()
            .map(|&v| MonotoneChain { level: i + 1, vertices: vec![v], edges: Vec::new() })
            .collect();
        let mut done = Vec::new();
        while let Some(chain) = stack.pop() {
            let k = chain.edges.len();
            if k == sub_edges.len() {
                done.push(chain);
                continue;
            }
            let f = sub_edges[k];
            let v = chain.end_vertex();
            let mut cands: Vec<usize> = next
                .star(v)?
                .iter()
                .copied()
                .filter(|&e| proj.edge_image[e].map(|(g, _)| g) == Some(f))
                .collect();
            cands.dedup();
            for &e in cands.iter().rev() {
                let mut ext = chain.clone();
                ext.vertices.push(next.other_endpoint(e, v)?);
                ext.edges.push(e);
                stack.push(ext);
            }
        }
        done.sort_by(|a, b| (&a.vertices, &a.edges).cmp(&(&b.vertices, &b.edges)));
        Ok(done)
    }

    /// One mass-weighted lift; marginals match the measure when the tower
    /// splits star mass evenly.
    pub fn lift_sampled<R: rand::Rng + ?Sized>(
        &self,
        system: &InverseSystem,
        rng: &mut R,
    ) -> Result<MonotoneChain> {
        let i = self.level;
        let proj = system.projection(i)?;
        let next = system.level_graph(i + 1)?;
        let (sub_vertices, sub_edges) = self.subdivided_path(system)?;
        let starts = system.fiber_vertices(i, sub_vertices[0])?;
        let weights: Vec<Rat> = starts
            .iter()
            .map(|&v| system.vertex_lift_weight(i, v))
            .collect::<Result<_>>()?;
        let mut chain = MonotoneChain {
            level: i + 1,
            vertices: vec![starts[weighted_pick(rng, &weights)]],
            edges: Vec::new(),
        };
        for &f in &sub_edges {
            let v = chain.end_vertex();
            let cands: Vec<usize> = next
                .star(v)?
                .iter()
                .copied()
                .filter(|&e| proj.edge_image[e].map(|(g, _)| g) == Some(f))
                .collect();
            if cands.is_empty() {
                return Err(MdlError::NotLiftable(format!(
                    "no edge over {f} at vertex {v}"
                )));
            }
            let weights: Vec<Rat> = cands
                .iter()
                .map(|&e| next.edges()[e].mass.clone())
                .collect();
            let e = cands[weighted_pick(rng, &weights)];
            chain.vertices.push(next.other_endpoint(e, v)?);
            chain.edges.push(e);
        }
        Ok(chain)
    }

    /// All maximal chains starting from the minimum-value vertices.
    pub fn enumerate_from_bottom(
        system: &InverseSystem,
        level: usize,
    ) -> Result<Vec<MonotoneChain>> {
        let g = system.level_graph(level)?;
        let phi = system.phi_values(level)?;
        let lo = phi.iter().min().cloned().unwrap_or_else(Rat::zero);
        let mut stack: Vec<MonotoneChain> = (0..g.vertex_count())
            .rev()
            .filter(|&v| phi[v] == lo)
            .map(|v| MonotoneChain { level, vertices: vec![v], edges: Vec::new() })
            .collect();
        let mut done = Vec::new();
        while let Some(chain) = stack.pop() {
            let cands = chain.up_candidates(system)?;
            if cands.is_empty() {
                done.push(chain);
                continue;
            }
            for &e in cands.iter().rev() {
                let mut ext = chain.clone();
                ext.vertices.push(g.other_endpoint(e, chain.end_vertex())?);
                ext.edges.push(e);
                stack.push(ext);
            }
        }
        done.sort_by(|a, b| (&a.vertices, &a.edges).cmp(&(&b.vertices, &b.edges)));
        Ok(done)
    }
}

fn monotone_steps(
    system: &InverseSystem,
    level: usize,
    v: usize,
    upward: bool,
) -> Result<Vec<usize>> {
    let g = system.level_graph(level)?;
    let phi = system.phi_values(level)?;
    let h = system.edge_length(level);
    let mut out: Vec<usize> = g
        .star(v)?
        .iter()
        .copied()
        .filter(|&e| {
            let w = g.other_endpoint(e, v).expect("incident");
            if upward {
                phi[w] == &phi[v] + &h
            } else {
                phi[w] == &phi[v] - &h
            }
        })
        .collect();
    out.dedup();
    Ok(out)
}

pub(crate) fn weighted_pick<R: rand::Rng + ?Sized>(rng: &mut R, weights: &[Rat]) -> usize {
    let total: f64 = weights.iter().map(rat_to_f64).sum();
    if !(total > 0.0) {
        return 0;
    }
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        x -= rat_to_f64(w);
        if x <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Outcome of scanning every vertex for pairs of upward branches and the
/// number of grid steps until the two branches first share a vertex again.
#[derive(Debug, Clone)]
pub struct BigonReport {
    pub level: usize,
    pub span_cap: u32,
    pub pairs_checked: usize,
    /// (vertex, first edge, second edge, steps) for the slowest reconverging pair.
    pub max_resolved: Option<(usize, usize, usize, u32)>,
    /// Pairs that never met again within the cap; these are not bigons.
    pub unresolved: usize,
}

impl BigonReport {
    /// Worst reconvergence span in units of the level's edge length.
    pub fn required_ratio(&self) -> Option<u32> {
        self.max_resolved.map(|(_, _, _, s)| s)
    }

    pub fn bounded_by(&self, d: u32) -> bool {
        self.required_ratio().is_none_or(|s| s <= d)
    }
}

/// For every vertex and every pair of distinct upward edges, finds the first
/// level-map height at which the two branch reachability sets intersect.
pub fn check_monotone_bigon(
    system: &InverseSystem,
    level: usize,
    span_cap: u32,
) -> Result<BigonReport> {
    let g = system.level_graph(level)?;
    let phi = system.phi_values(level)?;
    let h = system.edge_length(level);
    let mut pairs_checked = 0usize;
    let mut unresolved = 0usize;
    let mut max_resolved: Option<(usize, usize, usize, u32)> = None;
    for v in 0..g.vertex_count() {
        let ups = monotone_steps(system, level, v, true)?;
        for (a_idx, &ea) in ups.iter().enumerate() {
            for &eb in &ups[a_idx + 1..] {
                pairs_checked += 1;
                match first_reconvergence(g, phi, &h, v, ea, eb, span_cap)? {
                    Some(steps) => {
                        if max_resolved.is_none_or(|(_, _, _, s)| steps > s) {
                            max_resolved = Some((v, ea, eb, steps));
                        }
                    }
                    None => unresolved += 1,
                }
            }
        }
    }
    Ok(BigonReport { level, span_cap, pairs_checked, max_resolved, unresolved })
}

fn first_reconvergence(
    g: &MetricGraph,
    phi: &[Rat],
    h: &Rat,
    v: usize,
    ea: usize,
    eb: usize,
    cap: u32,
) -> Result<Option<u32>> {
    let mut fa: BTreeSet<usize> = BTreeSet::from([g.other_endpoint(ea, v)?]);
    let mut fb: BTreeSet<usize> = BTreeSet::from([g.other_endpoint(eb, v)?]);
    for step in 1..=cap {
        if fa.intersection(&fb).next().is_some() {
            return Ok(Some(step));
        }
        if step == cap || fa.is_empty() || fb.is_empty() {
            break;
        }
        let advance = |front: &BTreeSet<usize>| -> Result<BTreeSet<usize>> {
            let mut next = BTreeSet::new();
            for &w in front {
                for &e in g.star(w)? {
                    let x = g.other_endpoint(e, w)?;
                    if phi[x] == &phi[w] + h {
                        next.insert(x);
                    }
                }
            }
            Ok(next)
        };
        fa = advance(&fa)?;
        fb = advance(&fb)?;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    #[test]
    fn doubling_towers_validate_and_count() {
        for (m, depth) in [(3u32, 2usize), (4, 2), (2, 3)] {
            let sys = InverseSystem::generate(m, GrowthRule::Doubling, depth).unwrap();
            let report = sys.validate();
            assert!(report.passed(), "m={m}:\n{report}");
            for i in 0..=depth {
                let g = sys.level_graph(i).unwrap();
                assert_eq!(g.edge_count(), ((m + 1) as usize).pow(i as u32));
                assert_eq!(g.total_mass(), rat_int(1));
            }
        }
    }

    #[test]
    fn periodic_towers_validate_and_count() {
        for (m, depth) in [(2u32, 3usize), (3, 2)] {
            let sys = InverseSystem::generate(m, GrowthRule::Periodic, depth).unwrap();
            let report = sys.validate();
            assert!(report.passed(), "m={m}:\n{report}");
            for i in 0..=depth {
                let g = sys.level_graph(i).unwrap();
                assert_eq!(g.edge_count(), ((2 * m) as usize).pow(i as u32));
                assert_eq!(g.total_mass(), rat_int(1));
            }
        }
    }

    #[test]
    fn tube_tower_validates_with_inflated_constants() {
        let sys = InverseSystem::generate(2, GrowthRule::Tube, 3).unwrap();
        let report = sys.validate();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn signed_tent_tower_validates() {
        let sys = InverseSystem::generate_signed_tent(3, GrowthRule::Periodic, 2).unwrap();
        let report = sys.validate();
        assert!(report.passed(), "{report}");
        assert!(sys.is_signed());
    }

    fn hand_built_doubling_m3(tamper: Option<(usize, Rat)>) -> InverseSystem {
        let base = MetricGraph::new(2, vec![(0, 1, rat_int(1), rat_int(1))], 0).unwrap();
        let third = rat(1, 3);
        let mut masses = vec![rat(1, 3), rat(1, 6), rat(1, 6), rat(1, 3)];
        if let Some((idx, extra)) = tamper {
            masses[idx] += extra;
        }
        let x1 = MetricGraph::new(
            4,
            vec![
                (0, 2, third.clone(), masses[0].clone()),
                (2, 3, third.clone(), masses[1].clone()),
                (2, 3, third.clone(), masses[2].clone()),
                (3, 1, third.clone(), masses[3].clone()),
            ],
            1,
        )
        .unwrap();
        let profile = AdmissibilityProfile::standard(3, GrowthRule::Doubling, 1).unwrap();
        InverseSystem::from_parts(
            profile,
            false,
            vec![base, x1],
            vec![
                vec![rat_int(0), rat_int(1)],
                vec![rat_int(0), rat_int(1), rat(1, 3), rat(2, 3)],
            ],
            vec![vec![0, 1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn pushforward_violation_is_detected() {
        let good = hand_built_doubling_m3(None);
        assert!(good.validate().passed());
        let bad = hand_built_doubling_m3(Some((1, rat(1, 7))));
        let report = bad.validate();
        assert!(!report.passed());
        assert!(!report.row("mass_pushforward").unwrap().passed);
        assert!(report.row("level_shape").unwrap().passed);
    }

    #[test]
    fn fiber_bound_violation_is_detected() {
        let sys = InverseSystem::generate(3, GrowthRule::Periodic, 1).unwrap();
        assert!(sys.validate().passed());
        let tight = AdmissibilityProfile {
            theta: rat_int(1),
            ..sys.profile().clone()
        };
        let report = sys.with_profile(tight).unwrap().validate();
        assert!(!report.row("fiber_diameter").unwrap().passed);
    }

    #[test]
    fn off_grid_level_map_is_detected() {
        let base = MetricGraph::new(2, vec![(0, 1, rat_int(1), rat_int(1))], 0).unwrap();
        let profile = AdmissibilityProfile::standard(2, GrowthRule::Doubling, 0).unwrap();
        let sys = InverseSystem::from_parts(
            profile,
            false,
            vec![base],
            vec![vec![rat_int(0), rat(9, 10)]],
            vec![],
        )
        .unwrap();
        let report = sys.validate();
        assert!(!report.row("grid_level_maps").unwrap().passed);
    }

    #[test]
    fn project_and_lift_round_trip() {
        let sys = InverseSystem::generate(2, GrowthRule::Periodic, 2).unwrap();
        let top = sys.level_graph(2).unwrap();
        let mut points = vec![GraphPoint::Vertex(0), GraphPoint::Vertex(top.vertex_count() - 1)];
        points.push(top.point_on_edge(3, rat(1, 16)).unwrap());
        points.push(top.point_on_edge(7, rat(3, 16)).unwrap());
        for p in points {
            let q = sys.project_to_subdivided(1, &p).unwrap();
            let lifts = sys.lift_point(1, &q).unwrap();
            assert!(lifts.contains(&p), "{p:?} missing from its own fiber");
            for l in &lifts {
                assert_eq!(sys.project_to_subdivided(1, l).unwrap(), q);
            }
            let base = sys.project_to_level(2, 0, &p).unwrap();
            let via_mid = sys
                .project_point(0, &sys.project_point(1, &p).unwrap())
                .unwrap();
            assert_eq!(base, via_mid);
        }
    }

    #[test]
    fn projections_preserve_phi() {
        let sys = InverseSystem::generate(3, GrowthRule::Doubling, 2).unwrap();
        let top = sys.level_graph(2).unwrap();
        for e in 0..top.edge_count() {
            let p = top.point_on_edge(e, rat(1, 27)).unwrap();
            let phi_top = sys.phi_value(2, &p).unwrap();
            let down = sys.project_point(1, &p).unwrap();
            assert_eq!(sys.phi_value(1, &down).unwrap(), phi_top);
        }
    }

    #[test]
    fn lift_weights_sum_to_one_over_fibers() {
        let sys = InverseSystem::generate(2, GrowthRule::Periodic, 2).unwrap();
        for i in 0..2 {
            let sub = &sys.subdivided(i).unwrap().0;
            for w in 0..sub.vertex_count() {
                let total: Rat = sys
                    .fiber_vertices(i, w)
                    .unwrap()
                    .iter()
                    .map(|&v| sys.vertex_lift_weight(i, v).unwrap())
                    .sum();
                assert_eq!(total, rat_int(1), "fiber over {w} at level {i}");
            }
        }
    }

    #[test]
    fn chain_counts_through_lifts() {
        let sys = InverseSystem::generate(2, GrowthRule::Periodic, 2).unwrap();
        let base_chains = MonotoneChain::enumerate_from_bottom(&sys, 0).unwrap();
        assert_eq!(base_chains.len(), 1);
        let level1 = MonotoneChain::enumerate_from_bottom(&sys, 1).unwrap();
        assert_eq!(level1.len(), 4);
        for chain in &level1 {
            assert_eq!(chain.step_count(), 2);
            assert_eq!(chain.lift_all(&sys).unwrap().len(), 8);
        }
        let level2 = MonotoneChain::enumerate_from_bottom(&sys, 2).unwrap();
        assert_eq!(level2.len(), 32);
    }

    #[test]
    fn chain_eval_walks_the_path() {
        let sys = InverseSystem::generate(2, GrowthRule::Periodic, 1).unwrap();
        let chains = MonotoneChain::enumerate_from_bottom(&sys, 1).unwrap();
        let chain = &chains[0];
        assert_eq!(chain.span(&sys), rat_int(1));
        let g = sys.level_graph(1).unwrap();
        let p = chain.eval(&sys, &rat(1, 4)).unwrap();
        assert_eq!(sys.phi_value(1, &p).unwrap(), rat(1, 4));
        let q = chain.eval(&sys, &rat(5, 8)).unwrap();
        assert_eq!(sys.phi_value(1, &q).unwrap(), rat(5, 8));
        assert_eq!(g.path_distance(&p, &q).unwrap(), rat(3, 8));
        assert_eq!(chain.locate(&sys, &q).unwrap(), Some(rat(5, 8)));
        assert_eq!(
            chain.eval_at_phi(&sys, &rat(1, 2)).unwrap(),
            GraphPoint::Vertex(chain.vertices()[1])
        );
    }

    #[test]
    fn monotone_chains_are_unit_speed_geodesics() {
        let sys = InverseSystem::generate(2, GrowthRule::Periodic, 2).unwrap();
        let chains = MonotoneChain::enumerate_from_bottom(&sys, 2).unwrap();
        let g = sys.level_graph(2).unwrap();
        let chain = &chains[0];
        for (s, t) in [(rat(1, 8), rat(7, 8)), (rat(1, 3), rat(2, 3)), (rat_int(0), rat_int(1))] {
            let p = chain.eval(&sys, &s).unwrap();
            let q = chain.eval(&sys, &t).unwrap();
            assert_eq!(g.path_distance(&p, &q).unwrap(), t - s);
        }
    }

    #[test]
    fn bigon_spans_stay_small_for_periodic_and_blow_up_for_tube() {
        let periodic = InverseSystem::generate(2, GrowthRule::Periodic, 3).unwrap();
        let report = check_monotone_bigon(&periodic, 3, 16).unwrap();
        assert!(report.pairs_checked > 0);
        assert!(report.bounded_by(4), "{report:?}");

        let tube = InverseSystem::generate(2, GrowthRule::Tube, 3).unwrap();
        let report = check_monotone_bigon(&tube, 3, 16).unwrap();
        assert!(!report.bounded_by(4), "{report:?}");
        assert_eq!(report.required_ratio(), Some(8));
    }

    #[test]
    fn doubled_cells_reconverge_within_one_parent_cell() {
        let sys = InverseSystem::generate(3, GrowthRule::Doubling, 2).unwrap();
        let fresh = check_monotone_bigon(&sys, 1, 8).unwrap();
        assert_eq!(fresh.required_ratio(), Some(1));
        // copies of the level-1 doubled cell rejoin after its m subdivided steps
        let deep = check_monotone_bigon(&sys, 2, 8).unwrap();
        assert_eq!(deep.required_ratio(), Some(3));
        assert_eq!(deep.unresolved, 0);
    }
}
