//! Metric measure graphs: finite multigraphs with positive rational edge
//! lengths and a mass per edge (a constant-density multiple of arclength).
//!
//! Points live on edges, distances are exact shortest-path lengths, and ball
//! measures are computed edge by edge in closed form. Self-loops and parallel
//! edges are permitted.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_traits::Zero;

use crate::error::{MdlError, Result};
use crate::rational::{parse_rat, format_rat, rat_int, Rat};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub length: Rat,
    pub mass: Rat,
}

/// A point of the underlying space: either a vertex or a point strictly
/// inside an edge, at `offset` from the edge's `u` endpoint. Constructors
/// canonicalize endpoint offsets to the vertex form, so equality is
/// structural.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GraphPoint {
    Vertex(usize),
    Interior { edge: usize, offset: Rat },
}

impl GraphPoint {
    pub fn vertex(v: usize) -> Self {
        GraphPoint::Vertex(v)
    }
}

#[derive(Debug, Clone)]
pub struct MetricGraph {
    vertex_count: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    level: i32,
}

/// Bookkeeping for an m-fold edge subdivision: which cells each parent edge
/// produced, and conversions of points between the two presentations of the
/// same underlying space.
#[derive(Debug, Clone)]
pub struct SubdivisionMap {
    pub m: u32,
    pub original_vertices: usize,
    /// Per parent edge, the m cell edge ids in order from the parent's `u`.
    pub cells: Vec<Vec<usize>>,
    /// Per cell edge, (parent edge, cell index).
    pub parent: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct HeapEntry {
    dist: Rat,
    vertex: usize,
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl MetricGraph {
    pub fn new(
        vertex_count: usize,
        edges: Vec<(usize, usize, Rat, Rat)>,
        level: i32,
    ) -> Result<Self> {
        if vertex_count == 0 {
            return Err(MdlError::BadArgument("graph needs at least one vertex".into()));
        }
        let mut adj = vec![Vec::new(); vertex_count];
        let mut es = Vec::with_capacity(edges.len());
        for (id, (u, v, length, mass)) in edges.into_iter().enumerate() {
            if u >= vertex_count {
                return Err(MdlError::UnknownVertex(u));
            }
            if v >= vertex_count {
                return Err(MdlError::UnknownVertex(v));
            }
            if length <= Rat::zero() {
                return Err(MdlError::BadArgument(format!("edge {id} has non-positive length")));
            }
            if mass < Rat::zero() {
                return Err(MdlError::BadArgument(format!("edge {id} has negative mass")));
            }
            adj[u].push(id);
            if v != u {
                adj[v].push(id);
            } else {
                // loop contributes twice to the star
                adj[u].push(id);
            }
            es.push(Edge { u, v, length, mass });
        }
        Ok(MetricGraph { vertex_count, edges: es, adj, level })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn level(&self) -> i32 {
        self.level
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> Result<&Edge> {
        self.edges.get(e).ok_or(MdlError::UnknownEdge(e))
    }

    /// Edge ids incident to `v`; a self-loop appears twice.
    pub fn star(&self, v: usize) -> Result<&[usize]> {
        self.adj
            .get(v)
            .map(|s| s.as_slice())
            .ok_or(MdlError::UnknownVertex(v))
    }

    pub fn valence(&self, v: usize) -> Result<usize> {
        Ok(self.star(v)?.len())
    }

    pub fn total_mass(&self) -> Rat {
        self.edges.iter().map(|e| e.mass.clone()).sum()
    }

    pub fn other_endpoint(&self, e: usize, v: usize) -> Result<usize> {
        let edge = self.edge(e)?;
        if edge.u == v {
            Ok(edge.v)
        } else if edge.v == v {
            Ok(edge.u)
        } else {
            Err(MdlError::BadPoint(format!("vertex {v} not on edge {e}")))
        }
    }

    pub fn vertex_point(&self, v: usize) -> Result<GraphPoint> {
        if v >= self.vertex_count {
            return Err(MdlError::UnknownVertex(v));
        }
        Ok(GraphPoint::Vertex(v))
    }

    /// Point at `offset` from the `u` endpoint of edge `e`; offsets 0 and
    /// `length` canonicalize to the endpoint vertices.
    pub fn point_on_edge(&self, e: usize, offset: Rat) -> Result<GraphPoint> {
        let edge = self.edge(e)?;
        if offset < Rat::zero() || offset > edge.length {
            return Err(MdlError::BadPoint(format!(
                "offset {} outside edge {e} of length {}",
                format_rat(&offset),
                format_rat(&edge.length)
            )));
        }
        if offset.is_zero() {
            Ok(GraphPoint::Vertex(edge.u))
        } else if offset == edge.length {
            Ok(GraphPoint::Vertex(edge.v))
        } else {
            Ok(GraphPoint::Interior { edge: e, offset })
        }
    }

    pub fn contains(&self, p: &GraphPoint) -> bool {
        match p {
            GraphPoint::Vertex(v) => *v < self.vertex_count,
            GraphPoint::Interior { edge, offset } => self
                .edges
                .get(*edge)
                .is_some_and(|e| offset > &Rat::zero() && offset < &e.length),
        }
    }

    fn check_point(&self, p: &GraphPoint) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(MdlError::BadPoint(format!("{} not on this graph", self.format_point(p))))
        }
    }

    /// `edge:offset`; vertices print through their smallest incident edge.
    pub fn format_point(&self, p: &GraphPoint) -> String {
        match p {
            GraphPoint::Vertex(v) => match self.adj.get(*v).and_then(|s| s.iter().min()) {
                Some(&e) => {
                    let edge = &self.edges[e];
                    if edge.u == *v {
                        format!("{e}:0")
                    } else {
                        format!("{e}:{}", format_rat(&edge.length))
                    }
                }
                None => format!("v{v}"),
            },
            GraphPoint::Interior { edge, offset } => format!("{edge}:{}", format_rat(offset)),
        }
    }

    pub fn parse_point(&self, s: &str) -> Result<GraphPoint> {
        let (e, off) = s
            .split_once(':')
            .ok_or_else(|| MdlError::Parse(format!("expected edge:offset, got {s:?}")))?;
        let e: usize = e
            .trim()
            .parse()
            .map_err(|_| MdlError::Parse(format!("bad edge id in {s:?}")))?;
        let offset = parse_rat(off)?;
        self.point_on_edge(e, offset)
    }

    /// (vertex, distance-from-p) pairs that seed shortest-path searches.
    pub(crate) fn seeds(&self, p: &GraphPoint) -> Result<Vec<(usize, Rat)>> {
        self.check_point(p)?;
        Ok(match p {
            GraphPoint::Vertex(v) => vec![(*v, Rat::zero())],
            GraphPoint::Interior { edge, offset } => {
                let e = &self.edges[*edge];
                vec![(e.u, offset.clone()), (e.v, &e.length - offset)]
            }
        })
    }

    fn dijkstra(&self, seeds: &[(usize, Rat)], cutoff: Option<&Rat>) -> Vec<Option<Rat>> {
        let mut dist: Vec<Option<Rat>> = vec![None; self.vertex_count];
        let mut heap = BinaryHeap::new();
        for (v, d) in seeds {
            if cutoff.is_some_and(|c| d > c) {
                continue;
            }
            if dist[*v].as_ref().is_none_or(|cur| d < cur) {
                dist[*v] = Some(d.clone());
                heap.push(HeapEntry { dist: d.clone(), vertex: *v });
            }
        }
        while let Some(HeapEntry { dist: d, vertex: v }) = heap.pop() {
            if dist[v].as_ref().is_some_and(|cur| &d > cur) {
                continue;
            }
            for &e in &self.adj[v] {
                let edge = &self.edges[e];
                let w = if edge.u == v { edge.v } else { edge.u };
                let nd = &d + &edge.length;
                if cutoff.is_some_and(|c| &nd > c) {
                    continue;
                }
                if dist[w].as_ref().is_none_or(|cur| &nd < cur) {
                    dist[w] = Some(nd.clone());
                    heap.push(HeapEntry { dist: nd, vertex: w });
                }
            }
        }
        dist
    }

    /// Exact distances from `p` to every vertex (`None` when unreachable).
    pub fn distances_from(&self, p: &GraphPoint) -> Result<Vec<Option<Rat>>> {
        Ok(self.dijkstra(&self.seeds(p)?, None))
    }

    /// Like `distances_from` but only distances <= cutoff are produced.
    pub fn bounded_distances_from(&self, p: &GraphPoint, cutoff: &Rat) -> Result<Vec<Option<Rat>>> {
        Ok(self.dijkstra(&self.seeds(p)?, Some(cutoff)))
    }

    /// Hop counts from a vertex out to `max_hops`, `None` beyond. When every
    /// edge has the same length this is the shortest-path distance in units
    /// of that length.
    pub fn bounded_hops_from(&self, v: usize, max_hops: u32) -> Result<Vec<Option<u32>>> {
        let mut scanner = HopScanner::new(self);
        scanner.run(self, v, max_hops)?;
        Ok((0..self.vertex_count).map(|w| scanner.hops_to(w)).collect())
    }

    /// The common edge length, when there is one.
    pub fn uniform_edge_length(&self) -> Option<Rat> {
        let first = self.edges.first()?;
        if self.edges.iter().all(|e| e.length == first.length) {
            Some(first.length.clone())
        } else {
            None
        }
    }

    pub fn path_distance(&self, p: &GraphPoint, q: &GraphPoint) -> Result<Rat> {
        if p == q {
            self.check_point(p)?;
            return Ok(Rat::zero());
        }
        self.distance_map(p)?.eval(self, q)
    }

    /// One full shortest-path sweep from `p`, reusable across many targets.
    pub fn distance_map(&self, p: &GraphPoint) -> Result<DistanceMap> {
        Ok(DistanceMap { source: p.clone(), dist: self.distances_from(p)? })
    }

    pub fn is_connected(&self) -> bool {
        if self.vertex_count == 0 {
            return true;
        }
        let mut seen = vec![false; self.vertex_count];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &e in &self.adj[v] {
                let edge = &self.edges[e];
                let w = if edge.u == v { edge.v } else { edge.u };
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.vertex_count
    }

    /// Exact measure of the closed metric ball around `p`: per edge, the
    /// covered sublength times the edge's mass density.
    pub fn ball_measure(&self, p: &GraphPoint, r: &Rat) -> Result<Rat> {
        self.check_point(p)?;
        if r < &Rat::zero() {
            return Err(MdlError::BadArgument("negative radius".into()));
        }
        let dist = self.distances_from(p)?;
        let mut total = Rat::zero();
        for (id, edge) in self.edges.iter().enumerate() {
            let mut intervals: Vec<(Rat, Rat)> = Vec::new();
            if let Some(du) = &dist[edge.u] {
                if du <= r {
                    let hi = (r - du).min(edge.length.clone());
                    intervals.push((Rat::zero(), hi));
                }
            }
            if let Some(dv) = &dist[edge.v] {
                if dv <= r {
                    let lo = (&edge.length - (r - dv)).max(Rat::zero());
                    intervals.push((lo, edge.length.clone()));
                }
            }
            if let GraphPoint::Interior { edge: pe, offset } = p {
                if *pe == id {
                    let lo = (offset - r).max(Rat::zero());
                    let hi = (offset + r).min(edge.length.clone());
                    intervals.push((lo, hi));
                }
            }
            let covered = union_length(intervals);
            if !covered.is_zero() {
                total += covered * &edge.mass / &edge.length;
            }
        }
        Ok(total)
    }

    /// m-fold subdivision: every edge becomes m cells of equal length and
    /// equal mass. The underlying metric measure space is unchanged.
    pub fn subdivide(&self, m: u32) -> Result<(MetricGraph, SubdivisionMap)> {
        if m < 2 {
            return Err(MdlError::BadArgument("subdivision needs m >= 2".into()));
        }
        let mm = m as usize;
        let n0 = self.vertex_count;
        let vertex_count = n0 + self.edges.len() * (mm - 1);
        let mut edges = Vec::with_capacity(self.edges.len() * mm);
        let mut cells = Vec::with_capacity(self.edges.len());
        let mut parent = Vec::with_capacity(self.edges.len() * mm);
        let m_rat = rat_int(m as i64);
        for (id, e) in self.edges.iter().enumerate() {
            let clen = &e.length / &m_rat;
            let cmass = &e.mass / &m_rat;
            let pos = |k: usize| -> usize {
                if k == 0 {
                    e.u
                } else if k == mm {
                    e.v
                } else {
                    n0 + id * (mm - 1) + (k - 1)
                }
            };
            let mut cell_ids = Vec::with_capacity(mm);
            for k in 0..mm {
                cell_ids.push(edges.len());
                parent.push((id, k));
                edges.push((pos(k), pos(k + 1), clen.clone(), cmass.clone()));
            }
            cells.push(cell_ids);
        }
        let sub = MetricGraph::new(vertex_count, edges, self.level)?;
        Ok((sub, SubdivisionMap { m, original_vertices: n0, cells, parent }))
    }
}

/// Reusable scratch for repeated bounded hop scans over one graph. A run
/// resets only the vertices the previous run touched, so tight loops of
/// small-radius scans stay linear in the explored balls.
pub struct HopScanner {
    hops: Vec<u32>,
    touched: Vec<usize>,
    frontier: Vec<usize>,
    next: Vec<usize>,
}

impl HopScanner {
    pub fn new(graph: &MetricGraph) -> HopScanner {
        HopScanner {
            hops: vec![u32::MAX; graph.vertex_count()],
            touched: Vec::new(),
            frontier: Vec::new(),
            next: Vec::new(),
        }
    }

    pub fn run(&mut self, graph: &MetricGraph, start: usize, max_hops: u32) -> Result<()> {
        if start >= graph.vertex_count() {
            return Err(MdlError::UnknownVertex(start));
        }
        debug_assert_eq!(self.hops.len(), graph.vertex_count());
        for &v in &self.touched {
            self.hops[v] = u32::MAX;
        }
        self.touched.clear();
        self.hops[start] = 0;
        self.touched.push(start);
        self.frontier.clear();
        self.frontier.push(start);
        for step in 1..=max_hops {
            self.next.clear();
            for &x in &self.frontier {
                for &e in &graph.adj[x] {
                    let edge = &graph.edges[e];
                    let w = if edge.u == x { edge.v } else { edge.u };
                    if self.hops[w] == u32::MAX {
                        self.hops[w] = step;
                        self.touched.push(w);
                        self.next.push(w);
                    }
                }
            }
            if self.next.is_empty() {
                break;
            }
            std::mem::swap(&mut self.frontier, &mut self.next);
        }
        Ok(())
    }

    pub fn hops_to(&self, v: usize) -> Option<u32> {
        match self.hops.get(v) {
            Some(&h) if h != u32::MAX => Some(h),
            _ => None,
        }
    }
}

/// Distances from one source point to every vertex, plus enough context to
/// answer point queries without another sweep.
#[derive(Debug, Clone)]
pub struct DistanceMap {
    source: GraphPoint,
    dist: Vec<Option<Rat>>,
}

impl DistanceMap {
    pub fn source(&self) -> &GraphPoint {
        &self.source
    }

    pub fn vertex_distance(&self, v: usize) -> Option<&Rat> {
        self.dist.get(v).and_then(|d| d.as_ref())
    }

    /// Distance from the fixed source to `q`. Must be queried against the
    /// graph the map was built on.
    pub fn eval(&self, graph: &MetricGraph, q: &GraphPoint) -> Result<Rat> {
        if &self.source == q {
            graph.check_point(q)?;
            return Ok(Rat::zero());
        }
        let mut best: Option<Rat> = None;
        for (w, c) in graph.seeds(q)? {
            if let Some(d) = &self.dist[w] {
                let cand = d + &c;
                if best.as_ref().is_none_or(|b| &cand < b) {
                    best = Some(cand);
                }
            }
        }
        // a direct segment inside a shared edge can beat every vertex route
        if let (
            GraphPoint::Interior { edge: ep, offset: sp },
            GraphPoint::Interior { edge: eq, offset: sq },
        ) = (&self.source, q)
        {
            if ep == eq {
                let cand = if sp >= sq { sp - sq } else { sq - sp };
                if best.as_ref().is_none_or(|b| &cand < b) {
                    best = Some(cand);
                }
            }
        }
        best.ok_or_else(|| {
            MdlError::Unreachable(format!(
                "{} and {} lie in different components",
                graph.format_point(&self.source),
                graph.format_point(q)
            ))
        })
    }
}

impl SubdivisionMap {
    /// For an interior vertex of the subdivided graph, the (parent edge,
    /// grid position 1..m-1) that created it.
    pub fn interior_vertex_origin(&self, v: usize) -> Option<(usize, usize)> {
        if v < self.original_vertices {
            return None;
        }
        let m = self.m as usize;
        let k = v - self.original_vertices;
        Some((k / (m - 1), k % (m - 1) + 1))
    }

    pub fn to_subdivided(
        &self,
        parent_graph: &MetricGraph,
        sub: &MetricGraph,
        p: &GraphPoint,
    ) -> Result<GraphPoint> {
        match p {
            GraphPoint::Vertex(v) => sub.vertex_point(*v),
            GraphPoint::Interior { edge, offset } => {
                let e = parent_graph.edge(*edge)?;
                let m_rat = rat_int(self.m as i64);
                let clen = &e.length / &m_rat;
                let mut j = 0usize;
                let mut start = Rat::zero();
                while j + 1 < self.m as usize && &start + &clen <= *offset {
                    start += &clen;
                    j += 1;
                }
                sub.point_on_edge(self.cells[*edge][j], offset - &start)
            }
        }
    }

    pub fn to_parent(
        &self,
        parent_graph: &MetricGraph,
        _sub: &MetricGraph,
        p: &GraphPoint,
    ) -> Result<GraphPoint> {
        match p {
            GraphPoint::Vertex(v) => match self.interior_vertex_origin(*v) {
                None => parent_graph.vertex_point(*v),
                Some((edge, pos)) => {
                    let e = parent_graph.edge(edge)?;
                    let m_rat = rat_int(self.m as i64);
                    let offset = &e.length * rat_int(pos as i64) / m_rat;
                    parent_graph.point_on_edge(edge, offset)
                }
            },
            GraphPoint::Interior { edge, offset } => {
                let (pe, j) = *self
                    .parent
                    .get(*edge)
                    .ok_or(MdlError::UnknownEdge(*edge))?;
                let e = parent_graph.edge(pe)?;
                let m_rat = rat_int(self.m as i64);
                let base = &e.length * rat_int(j as i64) / m_rat;
                parent_graph.point_on_edge(pe, base + offset)
            }
        }
    }
}

/// Total length of a union of closed intervals.
fn union_length(mut intervals: Vec<(Rat, Rat)>) -> Rat {
    intervals.retain(|(a, b)| a < b);
    intervals.sort();
    let mut total = Rat::zero();
    let mut current: Option<(Rat, Rat)> = None;
    for (a, b) in intervals {
        match current.take() {
            None => current = Some((a, b)),
            Some((ca, cb)) => {
                if a <= cb {
                    current = Some((ca, cb.max(b)));
                } else {
                    total += &cb - &ca;
                    current = Some((a, b));
                }
            }
        }
    }
    if let Some((ca, cb)) = current {
        total += &cb - &ca;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    fn triangle() -> MetricGraph {
        MetricGraph::new(
            3,
            vec![
                (0, 1, rat_int(1), rat_int(1)),
                (0, 2, rat_int(1), rat_int(1)),
                (1, 2, rat_int(1), rat_int(1)),
            ],
            0,
        )
        .unwrap()
    }

    #[test]
    fn vertex_distances_on_triangle() {
        let g = triangle();
        let d = g
            .path_distance(&GraphPoint::Vertex(1), &GraphPoint::Vertex(2))
            .unwrap();
        assert_eq!(d, rat_int(1));
    }

    #[test]
    fn interior_points_use_both_routes() {
        let g = triangle();
        let p = g.point_on_edge(0, rat(1, 4)).unwrap();
        let q = g.point_on_edge(1, rat(1, 4)).unwrap();
        // through vertex 0: 1/4 + 1/4; around the far side: 3/4 + 1 + 3/4
        assert_eq!(g.path_distance(&p, &q).unwrap(), rat(1, 2));
    }

    #[test]
    fn same_edge_direct_segment_wins() {
        let g = MetricGraph::new(2, vec![(0, 1, rat_int(4), rat_int(1))], 0).unwrap();
        let p = g.point_on_edge(0, rat_int(1)).unwrap();
        let q = g.point_on_edge(0, rat_int(3)).unwrap();
        assert_eq!(g.path_distance(&p, &q).unwrap(), rat_int(2));
    }

    #[test]
    fn self_loop_wraps_around() {
        let g = MetricGraph::new(1, vec![(0, 0, rat_int(4), rat_int(1))], 0).unwrap();
        let p = g.point_on_edge(0, rat_int(1)).unwrap();
        let q = g.point_on_edge(0, rat(7, 2)).unwrap();
        // inside: 5/2, around through the vertex: 1 + 1/2
        assert_eq!(g.path_distance(&p, &q).unwrap(), rat(3, 2));
    }

    #[test]
    fn parallel_edges_shorten_distances() {
        let g = MetricGraph::new(
            2,
            vec![(0, 1, rat_int(1), rat_int(1)), (0, 1, rat_int(1), rat_int(1))],
            0,
        )
        .unwrap();
        let p = g.point_on_edge(0, rat(1, 2)).unwrap();
        let q = g.point_on_edge(1, rat(1, 2)).unwrap();
        assert_eq!(g.path_distance(&p, &q).unwrap(), rat_int(1));
    }

    #[test]
    fn ball_measure_triangle_center_vertex() {
        let g = triangle();
        let got = g.ball_measure(&GraphPoint::Vertex(0), &rat(1, 2)).unwrap();
        assert_eq!(got, rat_int(1));
    }

    #[test]
    fn ball_measure_matches_sampling_oracle() {
        let g = MetricGraph::new(
            4,
            vec![
                (0, 1, rat_int(1), rat(1, 2)),
                (1, 2, rat(1, 2), rat_int(2)),
                (2, 0, rat_int(1), rat_int(1)),
                (1, 3, rat(3, 4), rat(1, 4)),
            ],
            0,
        )
        .unwrap();
        let p = g.point_on_edge(0, rat(1, 3)).unwrap();
        for r in [rat(1, 4), rat(1, 2), rat(9, 8), rat_int(4)] {
            let exact = g.ball_measure(&p, &r).unwrap();
            // Riemann sum over a fine grid of every edge, weighted by density.
            let n = 4000;
            let mut approx = 0.0;
            for (id, e) in g.edges().iter().enumerate() {
                let len = crate::rational::rat_to_f64(&e.length);
                let density = crate::rational::rat_to_f64(&e.mass) / len;
                for k in 0..n {
                    let s = rat_int(2 * k as i64 + 1) * &e.length / rat_int(2 * n as i64);
                    let q = g.point_on_edge(id, s).unwrap();
                    if g.path_distance(&p, &q).unwrap() <= r {
                        approx += density * len / n as f64;
                    }
                }
            }
            let exact_f = crate::rational::rat_to_f64(&exact);
            assert!(
                (exact_f - approx).abs() < 5e-3,
                "r={r:?} exact={exact_f} sampled={approx}"
            );
        }
    }

    #[test]
    fn ball_measure_saturates_at_total_mass() {
        let g = triangle();
        let total = g.total_mass();
        let got = g.ball_measure(&GraphPoint::Vertex(0), &rat_int(10)).unwrap();
        assert_eq!(got, total);
    }

    #[test]
    fn subdivision_preserves_distances_and_mass() {
        let g = triangle();
        let (sub, map) = g.subdivide(3).unwrap();
        assert_eq!(sub.edge_count(), 9);
        assert_eq!(sub.total_mass(), g.total_mass());
        let p = g.point_on_edge(0, rat(1, 2)).unwrap();
        let q = g.point_on_edge(2, rat(1, 3)).unwrap();
        let sp = map.to_subdivided(&g, &sub, &p).unwrap();
        let sq = map.to_subdivided(&g, &sub, &q).unwrap();
        assert_eq!(
            g.path_distance(&p, &q).unwrap(),
            sub.path_distance(&sp, &sq).unwrap()
        );
        assert_eq!(map.to_parent(&g, &sub, &sp).unwrap(), p);
        assert_eq!(map.to_parent(&g, &sub, &sq).unwrap(), q);
    }

    #[test]
    fn subdivision_point_maps_canonicalize_grid_points() {
        let g = triangle();
        let (sub, map) = g.subdivide(2).unwrap();
        let mid = g.point_on_edge(1, rat(1, 2)).unwrap();
        let s = map.to_subdivided(&g, &sub, &mid).unwrap();
        assert!(matches!(s, GraphPoint::Vertex(_)));
        assert_eq!(map.to_parent(&g, &sub, &s).unwrap(), mid);
    }

    #[test]
    fn point_parsing_round_trips() {
        let g = triangle();
        let p = g.parse_point("2:1/4").unwrap();
        assert_eq!(p, g.point_on_edge(2, rat(1, 4)).unwrap());
        let q = g.parse_point(&g.format_point(&p)).unwrap();
        assert_eq!(p, q);
        assert!(g.parse_point("9:0").is_err());
        assert!(g.parse_point("0:7/2").is_err());
    }

    #[test]
    fn unreachable_components_error() {
        let g = MetricGraph::new(
            4,
            vec![(0, 1, rat_int(1), rat_int(1)), (2, 3, rat_int(1), rat_int(1))],
            0,
        )
        .unwrap();
        assert!(!g.is_connected());
        let err = g
            .path_distance(&GraphPoint::Vertex(0), &GraphPoint::Vertex(3))
            .unwrap_err();
        assert!(matches!(err, MdlError::Unreachable(_)));
    }
}
