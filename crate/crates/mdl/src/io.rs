//! File formats. Towers, fragments, and line representations round trip
//! through JSON; numeric ladders go out as CSV. Exact quantities serialize
//! as rational strings ("3/4"; plain integers and decimals also parse), so
//! a file round trip loses nothing.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::alberti::{AlbertiRep, Density, MonotoneLine, MonotoneRep, RepLine};
use crate::error::{MdlError, Result};
use crate::fragment::{Domain, Fragment};
use crate::graph::{GraphPoint, MetricGraph};
use crate::rational::{format_rat, parse_rat, Rat};
use crate::system::{AdmissibilityProfile, InverseSystem, MonotoneChain};

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(std::fs::write(path, text)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeDto {
    pub u: usize,
    pub v: usize,
    pub length: String,
    pub mass: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDto {
    pub vertices: usize,
    pub edges: Vec<EdgeDto>,
    pub level: i32,
}

impl GraphDto {
    pub fn from_graph(g: &MetricGraph) -> GraphDto {
        GraphDto {
            vertices: g.vertex_count(),
            edges: g
                .edges()
                .iter()
                .map(|e| EdgeDto {
                    u: e.u,
                    v: e.v,
                    length: format_rat(&e.length),
                    mass: format_rat(&e.mass),
                })
                .collect(),
            level: g.level(),
        }
    }

    pub fn to_graph(&self) -> Result<MetricGraph> {
        let edges = self
            .edges
            .iter()
            .map(|e| Ok((e.u, e.v, parse_rat(&e.length)?, parse_rat(&e.mass)?)))
            .collect::<Result<Vec<_>>>()?;
        MetricGraph::new(self.vertices, edges, self.level)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileDto {
    pub m: u32,
    #[serde(rename = "Delta")]
    pub delta: usize,
    #[serde(rename = "C")]
    pub c: String,
    pub theta: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionDto {
    pub vertex_map: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelMapDto {
    pub vertex_values: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemDto {
    pub profile: ProfileDto,
    pub signed: bool,
    pub levels: Vec<GraphDto>,
    pub projections: Vec<ProjectionDto>,
    pub phi: Vec<LevelMapDto>,
}

impl SystemDto {
    pub fn from_system(system: &InverseSystem) -> Result<SystemDto> {
        let profile = system.profile();
        let mut levels = Vec::with_capacity(system.depth() + 1);
        let mut phi = Vec::with_capacity(system.depth() + 1);
        for i in 0..=system.depth() {
            levels.push(GraphDto::from_graph(system.level_graph(i)?));
            phi.push(LevelMapDto {
                vertex_values: system.phi_values(i)?.iter().map(format_rat).collect(),
            });
        }
        let projections = (0..system.depth())
            .map(|i| {
                Ok(ProjectionDto { vertex_map: system.projection(i)?.vertex_map.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SystemDto {
            profile: ProfileDto {
                m: profile.m,
                delta: profile.delta,
                c: format_rat(&profile.c),
                theta: format_rat(&profile.theta),
            },
            signed: system.is_signed(),
            levels,
            projections,
            phi,
        })
    }

    pub fn to_system(&self) -> Result<InverseSystem> {
        let profile = AdmissibilityProfile {
            m: self.profile.m,
            delta: self.profile.delta,
            c: parse_rat(&self.profile.c)?,
            theta: parse_rat(&self.profile.theta)?,
        };
        let levels = self
            .levels
            .iter()
            .map(GraphDto::to_graph)
            .collect::<Result<Vec<_>>>()?;
        let phi = self
            .phi
            .iter()
            .map(|m| m.vertex_values.iter().map(|v| parse_rat(v)).collect())
            .collect::<Result<Vec<_>>>()?;
        let vertex_maps = self.projections.iter().map(|p| p.vertex_map.clone()).collect();
        InverseSystem::from_parts(profile, self.signed, levels, phi, vertex_maps)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FragmentDto {
    pub domain: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl FragmentDto {
    pub fn from_fragment(frag: &Fragment<Vec<f64>>) -> FragmentDto {
        let mut domain: Vec<[f64; 2]> = frag
            .domain()
            .intervals()
            .iter()
            .map(|&(a, b)| [a, b])
            .collect();
        domain.extend(frag.domain().isolated().iter().map(|&t| [t, t]));
        FragmentDto {
            domain,
            times: frag.times().to_vec(),
            points: frag.points().to_vec(),
        }
    }

    pub fn to_fragment(&self) -> Result<Fragment<Vec<f64>>> {
        let mut intervals = Vec::new();
        let mut isolated = Vec::new();
        for &[a, b] in &self.domain {
            if b > a {
                intervals.push((a, b));
            } else {
                isolated.push(a);
            }
        }
        Fragment::from_samples(
            Domain::new(intervals, isolated)?,
            self.times.clone(),
            self.points.clone(),
        )
    }
}

/// Graph point as either a vertex id or an edge-offset pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphPointDto {
    Vertex { vertex: usize },
    Interior { edge: usize, offset: String },
}

impl GraphPointDto {
    pub fn from_point(p: &GraphPoint) -> GraphPointDto {
        match p {
            GraphPoint::Vertex(v) => GraphPointDto::Vertex { vertex: *v },
            GraphPoint::Interior { edge, offset } => GraphPointDto::Interior {
                edge: *edge,
                offset: format_rat(offset),
            },
        }
    }

    pub fn to_point(&self) -> Result<GraphPoint> {
        Ok(match self {
            GraphPointDto::Vertex { vertex } => GraphPoint::Vertex(*vertex),
            GraphPointDto::Interior { edge, offset } => GraphPoint::Interior {
                edge: *edge,
                offset: parse_rat(offset)?,
            },
        })
    }
}

/// A line of a representation: the vertex path of a monotone chain at the
/// deepest level, which determines its unit-speed fragment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineDto {
    pub level: usize,
    pub vertices: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensityDto {
    Tag(String),
    Piecewise(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepDto {
    pub lines: Vec<LineDto>,
    pub weights: Vec<String>,
    pub density: DensityDto,
}

fn chain_from_vertices(
    system: &InverseSystem,
    level: usize,
    vertices: &[usize],
) -> Result<MonotoneChain> {
    let (first, rest) = vertices
        .split_first()
        .ok_or_else(|| MdlError::Parse("empty line".into()))?;
    let g = system.level_graph(level)?;
    let mut chain = MonotoneChain::at_vertex(system, level, *first)?;
    for &w in rest {
        let edge = chain
            .up_candidates(system)?
            .into_iter()
            .find(|&e| g.other_endpoint(e, chain.end_vertex()).is_ok_and(|x| x == w))
            .ok_or_else(|| {
                MdlError::Parse(format!(
                    "no monotone step from {} to {w}",
                    chain.end_vertex()
                ))
            })?;
        chain.extend_up(system, edge)?;
    }
    Ok(chain)
}

impl RepDto {
    pub fn from_rep(rep: &MonotoneRep) -> RepDto {
        RepDto {
            lines: rep
                .lines
                .iter()
                .map(|l| LineDto {
                    level: l.chain.level(),
                    vertices: l.chain.vertices().to_vec(),
                })
                .collect(),
            weights: rep.lines.iter().map(|l| format_rat(&l.weight)).collect(),
            density: DensityDto::Tag("const".into()),
        }
    }

    pub fn to_rep(&self, system: &InverseSystem) -> Result<MonotoneRep> {
        if self.lines.len() != self.weights.len() {
            return Err(MdlError::Parse(format!(
                "{} lines but {} weights",
                self.lines.len(),
                self.weights.len()
            )));
        }
        match &self.density {
            DensityDto::Tag(tag) if tag == "const" => {}
            _ => {
                return Err(MdlError::Parse(
                    "monotone representations carry constant density".into(),
                ))
            }
        }
        let lines = self
            .lines
            .iter()
            .zip(&self.weights)
            .map(|(line, w)| {
                Ok(MonotoneLine {
                    chain: chain_from_vertices(system, line.level, &line.vertices)?,
                    weight: parse_rat(w)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MonotoneRep { lines })
    }
}

/// Representation over host-space curves, written with explicit fragments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HostRepDto {
    pub lines: Vec<FragmentDto>,
    pub weights: Vec<f64>,
    pub density: DensityDto,
}

impl HostRepDto {
    pub fn from_rep(rep: &AlbertiRep<Vec<f64>>) -> HostRepDto {
        let constant = rep.lines.iter().all(|l| l.density.is_const());
        let density = if constant {
            DensityDto::Tag("const".into())
        } else {
            DensityDto::Piecewise(
                rep.lines
                    .iter()
                    .map(|l| {
                        (0..l.fragment.len()).map(|i| l.density.at(i)).collect()
                    })
                    .collect(),
            )
        };
        HostRepDto {
            lines: rep.lines.iter().map(|l| FragmentDto::from_fragment(&l.fragment)).collect(),
            weights: rep.lines.iter().map(|l| l.weight).collect(),
            density,
        }
    }

    pub fn to_rep(&self) -> Result<AlbertiRep<Vec<f64>>> {
        if self.lines.len() != self.weights.len() {
            return Err(MdlError::Parse(format!(
                "{} lines but {} weights",
                self.lines.len(),
                self.weights.len()
            )));
        }
        let mut lines = Vec::with_capacity(self.lines.len());
        for (i, (frag, &weight)) in self.lines.iter().zip(&self.weights).enumerate() {
            let fragment = frag.to_fragment()?;
            let density = match &self.density {
                DensityDto::Tag(tag) if tag == "const" => Density::Const(1.0),
                DensityDto::Piecewise(per_line) => {
                    let values = per_line.get(i).ok_or_else(|| {
                        MdlError::Parse(format!("no density row for line {i}"))
                    })?;
                    if values.len() != fragment.len() {
                        return Err(MdlError::Parse(format!(
                            "density row {i} has {} values for {} samples",
                            values.len(),
                            fragment.len()
                        )));
                    }
                    Density::Piecewise(values.clone())
                }
                DensityDto::Tag(tag) => {
                    return Err(MdlError::Parse(format!("unknown density tag {tag:?}")))
                }
            };
            lines.push(RepLine { fragment, weight, density });
        }
        Ok(AlbertiRep { lines })
    }
}

/// Column-checked CSV accumulator with deterministic output: declared
/// header, one comma-joined row per call, LF endings, shortest round-trip
/// float formatting.
pub struct Csv {
    cols: usize,
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Csv {
        let mut buf = header.join(",");
        buf.push('\n');
        Csv { cols: header.len(), buf }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.cols, "row width differs from the header");
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            debug_assert!(!cell.contains([',', '\n']), "cell needs quoting");
            self.buf.push_str(cell);
        }
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, &self.buf)?)
    }
}

pub fn cell_f64(x: f64) -> String {
    let mut s = String::new();
    let _ = write!(s, "{x}");
    s
}

pub fn cell_rat(x: &Rat) -> String {
    format_rat(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;
    use crate::system::{GrowthRule, InverseSystem};
    use num_traits::One;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_files_round_trip_exactly() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 2).unwrap();
        let g = system.level_graph(2).unwrap();
        let dto = GraphDto::from_graph(g);
        let text = serde_json::to_string(&dto).unwrap();
        let back: GraphDto = serde_json::from_str(&text).unwrap();
        let h = back.to_graph().unwrap();
        assert_eq!(h.vertex_count(), g.vertex_count());
        assert_eq!(h.edge_count(), g.edge_count());
        for (a, b) in g.edges().iter().zip(h.edges()) {
            assert_eq!((a.u, a.v), (b.u, b.v));
            assert_eq!(a.length, b.length);
            assert_eq!(a.mass, b.mass);
        }
    }

    #[test]
    fn decimal_and_fraction_cells_parse() {
        let dto = GraphDto {
            vertices: 2,
            edges: vec![EdgeDto {
                u: 0,
                v: 1,
                length: "0.25".into(),
                mass: "1/3".into(),
            }],
            level: 0,
        };
        let g = dto.to_graph().unwrap();
        assert_eq!(g.edges()[0].length, rat(1, 4));
        assert_eq!(g.edges()[0].mass, rat(1, 3));
    }

    #[test]
    fn system_files_rebuild_a_working_tower() {
        let system = InverseSystem::generate(2, GrowthRule::Doubling, 3).unwrap();
        let dto = SystemDto::from_system(&system).unwrap();
        let text = serde_json::to_string_pretty(&dto).unwrap();
        let back: SystemDto = serde_json::from_str(&text).unwrap();
        let rebuilt = back.to_system().unwrap();
        assert!(rebuilt.validate().passed());
        for i in 0..=system.depth() {
            assert_eq!(system.phi_values(i).unwrap(), rebuilt.phi_values(i).unwrap());
        }
        for i in 0..system.depth() {
            assert_eq!(
                system.projection(i).unwrap().vertex_map,
                rebuilt.projection(i).unwrap().vertex_map
            );
        }
    }

    #[test]
    fn fragment_files_keep_samples_and_domain() {
        let domain = Domain::new(vec![(0.0, 0.4), (0.6, 1.0)], vec![0.5]).unwrap();
        let frag = Fragment::from_fn(domain, 5, |t| vec![t, t * t]);
        let dto = FragmentDto::from_fragment(&frag);
        let back = dto.to_fragment().unwrap();
        assert_eq!(back.times(), frag.times());
        assert_eq!(back.points(), frag.points());
        assert_eq!(back.domain().intervals(), frag.domain().intervals());
        assert_eq!(back.domain().isolated(), frag.domain().isolated());
    }

    #[test]
    fn rep_files_preserve_occupations() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = MonotoneRep::sampled(&system, 25, &mut rng).unwrap();
        let dto = RepDto::from_rep(&rep);
        let text = serde_json::to_string(&dto).unwrap();
        let back: RepDto = serde_json::from_str(&text).unwrap();
        let rebuilt = back.to_rep(&system).unwrap();
        assert_eq!(rebuilt.total_weight(), Rat::one());
        let g = system.level_graph(1).unwrap();
        for e in 0..g.edge_count() {
            assert_eq!(
                rep.cylinder_occupation(&system, 1, e).unwrap(),
                rebuilt.cylinder_occupation(&system, 1, e).unwrap()
            );
        }
    }

    #[test]
    fn host_rep_files_keep_integrals() {
        use crate::alberti::fubini_rep;
        let rep = fubini_rep(2, 0, 6, 6).unwrap();
        let dto = HostRepDto::from_rep(&rep);
        let back = dto.to_rep().unwrap();
        let f = |p: &Vec<f64>| p[0] * p[1];
        assert!((rep.integrate(&f) - back.integrate(&f)).abs() < 1e-12);
    }

    #[test]
    fn csv_output_is_stable() {
        let mut csv = Csv::new(&["scale", "estimate"]);
        csv.row(&[cell_f64(0.5), cell_f64(1.0 / 3.0)]);
        csv.row(&[cell_f64(0.25), cell_rat(&rat(2, 7))]);
        assert_eq!(
            csv.as_str(),
            "scale,estimate\n0.5,0.3333333333333333\n0.25,2/7\n"
        );
    }
}
