//! Target spaces for curve fragments. A fragment maps into some metric
//! space; everything downstream only ever sees that space through a
//! [`Pseudometric`], so finite-dimensional hosts and tower limits plug into
//! the same analysis code.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use crate::error::{MdlError, Result};
use crate::graph::DistanceMap;
use crate::limit::{LimitPoint, LimitSpace};
use crate::rational::rat_to_f64;

/// Norms available on a Euclidean host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L1,
    L2,
    Linf,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::L1 => write!(f, "l1"),
            NormKind::L2 => write!(f, "l2"),
            NormKind::Linf => write!(f, "linf"),
        }
    }
}

impl FromStr for NormKind {
    type Err = MdlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(NormKind::L1),
            "l2" | "2" | "euclidean" => Ok(NormKind::L2),
            "linf" | "inf" | "max" => Ok(NormKind::Linf),
            other => Err(MdlError::Parse(format!("unknown norm {other:?}"))),
        }
    }
}

/// R^n with one of the classical norms.
#[derive(Debug, Clone, Copy)]
pub struct EuclideanHost {
    dim: usize,
    norm: NormKind,
}

impl EuclideanHost {
    pub fn new(dim: usize, norm: NormKind) -> Self {
        EuclideanHost { dim, norm }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> NormKind {
        self.norm
    }

    pub fn norm_of(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        match self.norm {
            NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
            NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormKind::Linf => v.iter().fold(0.0, |a, x| a.max(x.abs())),
        }
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.norm_of(&diff)
    }

    pub fn metric(&self) -> Pseudometric<'static, Vec<f64>> {
        let host = *self;
        Pseudometric::new(format!("{}^{}", self.norm, self.dim), move |x: &Vec<f64>, y: &Vec<f64>| {
            host.distance(x, y)
        })
    }

    /// Distance seen by the `i`-th coordinate alone.
    pub fn coordinate_distance(&self, i: usize) -> Pseudometric<'static, Vec<f64>> {
        Pseudometric::new(format!("coord{i}"), move |x: &Vec<f64>, y: &Vec<f64>| {
            (x[i] - y[i]).abs()
        })
    }
}

/// A named symmetric distance-like function. Zero self-distance is assumed,
/// the triangle inequality is the caller's responsibility.
pub struct Pseudometric<'a, P> {
    name: String,
    f: Box<dyn Fn(&P, &P) -> f64 + Sync + 'a>,
}

impl<'a, P> Pseudometric<'a, P> {
    pub fn new(name: impl Into<String>, f: impl Fn(&P, &P) -> f64 + Sync + 'a) -> Self {
        Pseudometric { name: name.into(), f: Box::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &P, y: &P) -> f64 {
        (self.f)(x, y)
    }
}

impl<P> fmt::Debug for Pseudometric<'_, P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pseudometric").field("name", &self.name).finish()
    }
}

/// Deepest-truncation distance on a limit space as a float pseudometric.
/// Shortest-path sweeps are cached per source point, so repeated queries
/// against a fixed family of probes stay cheap.
pub fn limit_estimate_metric(space: &LimitSpace) -> Pseudometric<'_, LimitPoint> {
    let cache: Mutex<HashMap<crate::graph::GraphPoint, DistanceMap>> = Mutex::new(HashMap::new());
    Pseudometric::new("limit", move |x: &LimitPoint, y: &LimitPoint| {
        let graph = space
            .system()
            .level_graph(space.depth())
            .expect("limit space always holds its own deepest level");
        let mut maps = cache.lock().expect("cache lock");
        if maps.len() > 256 {
            maps.clear();
        }
        let map = maps
            .entry(x.top().clone())
            .or_insert_with(|| graph.distance_map(x.top()).expect("point from this space"));
        let d = map.eval(graph, y.top()).expect("tower levels are connected");
        rat_to_f64(&d)
    })
}

/// Pullback of the real line through the height map: |phi(x) - phi(y)|.
pub fn height_distance(space: &LimitSpace) -> Pseudometric<'_, LimitPoint> {
    Pseudometric::new("height", move |x: &LimitPoint, y: &LimitPoint| {
        let hx = space.phi(x).expect("point from this space");
        let hy = space.phi(y).expect("point from this space");
        rat_to_f64(&(hx - hy)).abs()
    })
}
