//! Curve fragments: maps from a compact piece of the real line into a
//! pseudometric space, sampled on a dyadic grid. The analysis here estimates
//! metric differentials scale by scale, flags parameters where no
//! differential can exist, measures length, and compares occupation counts
//! against the integrated speed.

use std::collections::BTreeSet;

use crate::error::{MdlError, Result};
use crate::space::Pseudometric;

const TIME_EPS: f64 = 1e-9;

/// Closed subset of the line: disjoint closed intervals plus isolated points.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    intervals: Vec<(f64, f64)>,
    isolated: Vec<f64>,
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Domain {
        Domain::new(vec![(a, b)], vec![]).expect("a single interval is always valid")
    }

    pub fn new(mut intervals: Vec<(f64, f64)>, mut isolated: Vec<f64>) -> Result<Domain> {
        intervals.sort_by(|p, q| p.0.total_cmp(&q.0));
        for &(a, b) in &intervals {
            if !(a < b) {
                return Err(MdlError::BadArgument(format!(
                    "degenerate interval [{a}, {b}]; list single points as isolated"
                )));
            }
        }
        for w in intervals.windows(2) {
            if w[1].0 <= w[0].1 + TIME_EPS {
                return Err(MdlError::BadArgument(format!(
                    "intervals [{}, {}] and [{}, {}] touch",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        isolated.sort_by(f64::total_cmp);
        for &t in &isolated {
            if intervals.iter().any(|&(a, b)| t >= a - TIME_EPS && t <= b + TIME_EPS) {
                return Err(MdlError::BadArgument(format!(
                    "isolated time {t} already lies inside an interval"
                )));
            }
        }
        Ok(Domain { intervals, isolated })
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn isolated(&self) -> &[f64] {
        &self.isolated
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|&(a, b)| b - a).sum()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| t >= a - TIME_EPS && t <= b + TIME_EPS)
            || self.is_isolated(t)
    }

    pub fn is_isolated(&self, t: f64) -> bool {
        self.isolated.iter().any(|&s| (s - t).abs() <= TIME_EPS)
    }

    pub fn interval_of(&self, t: f64) -> Option<(f64, f64)> {
        self.intervals.iter().copied().find(|&(a, b)| t >= a - TIME_EPS && t <= b + TIME_EPS)
    }
}

/// A map from a domain into `P`, known through samples on a dyadic grid of
/// step 2^-resolution (plus the isolated domain points).
#[derive(Debug, Clone)]
pub struct Fragment<P> {
    domain: Domain,
    times: Vec<f64>,
    points: Vec<P>,
    grid: f64,
}

impl<P> Fragment<P> {
    pub fn from_fn(domain: Domain, resolution: u32, f: impl Fn(f64) -> P) -> Fragment<P> {
        let grid = 0.5f64.powi(resolution as i32);
        let mut times = Vec::new();
        for &(a, b) in domain.intervals() {
            let steps = ((b - a) / grid).floor() as u64;
            for k in 0..=steps {
                times.push(a + k as f64 * grid);
            }
            if b - (a + steps as f64 * grid) > TIME_EPS {
                times.push(b);
            }
        }
        times.extend_from_slice(domain.isolated());
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);
        let points = times.iter().map(|&t| f(t)).collect();
        Fragment { domain, times, points, grid }
    }

    /// Rebuilds a fragment from explicit samples. Times must strictly
    /// increase and match the points one to one; the grid step is taken as
    /// the smallest gap.
    pub fn from_samples(domain: Domain, times: Vec<f64>, points: Vec<P>) -> Result<Fragment<P>> {
        if times.len() != points.len() {
            return Err(MdlError::BadArgument(format!(
                "{} times for {} points",
                times.len(),
                points.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MdlError::BadArgument("sample times must increase".into()));
        }
        let grid = times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        let grid = if grid.is_finite() { grid } else { 1.0 };
        Ok(Fragment { domain, times, points, grid })
    }

    /// Post-composes with `g`, keeping the same domain and sample times.
    pub fn map<Q>(&self, mut g: impl FnMut(f64, &P) -> Q) -> Fragment<Q> {
        Fragment {
            domain: self.domain.clone(),
            times: self.times.clone(),
            points: self.times.iter().zip(&self.points).map(|(&t, p)| g(t, p)).collect(),
            grid: self.grid,
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[P] {
        &self.points
    }

    pub fn grid_step(&self) -> f64 {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&x| x < t - TIME_EPS);
        (i < self.times.len() && (self.times[i] - t).abs() <= TIME_EPS).then_some(i)
    }

    pub fn point_at(&self, t: f64) -> Option<&P> {
        self.index_of(t).map(|i| &self.points[i])
    }

    /// Every stride-th sample plus the final one, as a coarser fragment.
    pub fn subsample(&self, stride: usize) -> Result<Fragment<P>>
    where
        P: Clone,
    {
        if stride == 0 {
            return Err(MdlError::BadArgument("zero subsample stride".into()));
        }
        let last = self.times.len().saturating_sub(1);
        let keep = |i: &usize| *i % stride == 0 || *i == last;
        let times = (0..self.times.len()).filter(keep).map(|i| self.times[i]).collect();
        let points = (0..self.points.len()).filter(keep).map(|i| self.points[i].clone()).collect();
        Fragment::from_samples(self.domain.clone(), times, points)
    }
}

/// Difference quotients observed at one scale around a fixed time.
#[derive(Debug, Clone)]
pub struct ScaleRow {
    pub h: f64,
    /// Largest slope any probe distance function shows across [t-h, t+h].
    pub sup_quotient: f64,
    /// Endpoint separation over 2h, when both sides exist.
    pub two_point: Option<f64>,
    /// Sum of the one-sided chords over 2h, when both sides exist.
    pub chord_sum: Option<f64>,
}

/// Metric differential estimate at one parameter time.
#[derive(Debug, Clone)]
pub struct DifferentialEstimate {
    pub time: f64,
    pub value: f64,
    /// False when the finest scales disagree: either the endpoint separation
    /// detracts from the chord sum or the slopes refuse to settle.
    pub exists: bool,
    pub oscillation: f64,
    pub scales: Vec<ScaleRow>,
}

const OSCILLATION_TOLERANCE: f64 = 0.1;

/// Estimates the metric differential of the fragment at time `t` through
/// difference quotients at `scales` dyadic scales, the finest being the
/// sample grid itself. Quotients only use sample times inside the domain.
pub fn metric_differential<P>(
    frag: &Fragment<P>,
    rho: &Pseudometric<'_, P>,
    t: f64,
    scales: usize,
) -> Result<DifferentialEstimate> {
    let idx = frag
        .index_of(t)
        .ok_or_else(|| MdlError::BadArgument(format!("time {t} is not a sample time")))?;
    if frag.domain.is_isolated(t) {
        return Err(MdlError::IsolatedTime(t));
    }
    let probes = probe_indices(frag.len(), idx);
    let mut rows: Vec<ScaleRow> = Vec::new();
    for j in (0..scales.max(1)).rev() {
        let h = frag.grid * (1u64 << j) as f64;
        let plus = frag.index_of(t + h);
        let minus = frag.index_of(t - h);
        if plus.is_none() && minus.is_none() {
            continue;
        }
        let mut sup = 0.0f64;
        for &pi in &probes {
            let x = &frag.points[pi];
            let q = match (plus, minus) {
                (Some(p), Some(n)) => {
                    (rho.eval(&frag.points[p], x) - rho.eval(&frag.points[n], x)) / (2.0 * h)
                }
                (Some(p), None) => {
                    (rho.eval(&frag.points[p], x) - rho.eval(&frag.points[idx], x)) / h
                }
                (None, Some(n)) => {
                    (rho.eval(&frag.points[idx], x) - rho.eval(&frag.points[n], x)) / h
                }
                (None, None) => unreachable!(),
            };
            sup = sup.max(q.abs());
        }
        let (two_point, chord_sum) = match (plus, minus) {
            (Some(p), Some(n)) => (
                Some(rho.eval(&frag.points[p], &frag.points[n]) / (2.0 * h)),
                Some(
                    (rho.eval(&frag.points[p], &frag.points[idx])
                        + rho.eval(&frag.points[idx], &frag.points[n]))
                        / (2.0 * h),
                ),
            ),
            _ => (None, None),
        };
        rows.push(ScaleRow { h, sup_quotient: sup, two_point, chord_sum });
    }
    if rows.is_empty() {
        return Err(MdlError::IsolatedTime(t));
    }
    let fine = &rows[rows.len().saturating_sub(3)..];
    let value = fine.iter().fold(0.0f64, |a, r| a.max(r.sup_quotient));
    let mut osc = 0.0f64;
    for r in fine {
        if let (Some(q2), Some(q1)) = (r.two_point, r.chord_sum) {
            osc = osc.max((q2 - q1).abs() / q1.max(1e-12));
        }
    }
    if fine.len() > 1 {
        let hi = fine.iter().fold(f64::MIN, |a, r| a.max(r.sup_quotient));
        let lo = fine.iter().fold(f64::MAX, |a, r| a.min(r.sup_quotient));
        osc = osc.max((hi - lo) / hi.max(1e-12));
    }
    Ok(DifferentialEstimate {
        time: t,
        value,
        exists: osc <= OSCILLATION_TOLERANCE,
        oscillation: osc,
        scales: rows,
    })
}

/// Probe indices for the sup over distance functions. The sup is taken over
/// every sample; a stride plus a dyadic fan around the center kicks in only
/// past a size cap, where the full sweep would dominate the run.
fn probe_indices(n: usize, idx: usize) -> Vec<usize> {
    const EXHAUSTIVE_CAP: usize = 1 << 15;
    if n <= EXHAUSTIVE_CAP {
        return (0..n).collect();
    }
    let mut set = BTreeSet::new();
    let stride = n / EXHAUSTIVE_CAP + 1;
    let mut k = 0;
    while k < n {
        set.insert(k);
        k += stride;
    }
    set.insert(n - 1);
    let mut step = 1;
    while step < n {
        if idx >= step {
            set.insert(idx - step);
        }
        if idx + step < n {
            set.insert(idx + step);
        }
        step *= 2;
    }
    set.into_iter().collect()
}

/// Sum of sample-to-sample distances across each interval of the domain.
pub fn fragment_length<P>(frag: &Fragment<P>, rho: &Pseudometric<'_, P>) -> f64 {
    let mut total = 0.0;
    for i in 1..frag.len() {
        if frag.times[i] - frag.times[i - 1] <= frag.grid * 1.5 {
            total += rho.eval(&frag.points[i - 1], &frag.points[i]);
        }
    }
    total
}

/// Lebesgue density surrogate: the fraction of [t-h, t+h] covered by the
/// domain, one entry per scale. Tends to 1 at density points.
pub fn domain_density_ratios(domain: &Domain, t: f64, scales: &[f64]) -> Vec<f64> {
    scales
        .iter()
        .map(|&h| {
            let (lo, hi) = (t - h, t + h);
            let covered: f64 = domain
                .intervals()
                .iter()
                .map(|&(a, b)| (b.min(hi) - a.max(lo)).max(0.0))
                .sum();
            covered / (2.0 * h)
        })
        .collect()
}

/// Smith-Volterra style positive-measure Cantor set: step k removes the open
/// middle 4^-k from each of the 2^(k-1) surviving intervals. All endpoints
/// are dyadic, total measure 1/2 in the limit.
pub fn fat_cantor_domain(steps: usize) -> Domain {
    let mut intervals = vec![(0.0f64, 1.0f64)];
    for k in 1..=steps {
        let gap = 0.25f64.powi(k as i32);
        let mut next = Vec::with_capacity(intervals.len() * 2);
        for (a, b) in intervals {
            let mid = (a + b) / 2.0;
            next.push((a, mid - gap / 2.0));
            next.push((mid + gap / 2.0, b));
        }
        intervals = next;
    }
    Domain::new(intervals, vec![]).expect("gaps keep the intervals disjoint")
}

/// Length of a fragment measured three ways.
#[derive(Debug, Clone)]
pub struct LengthReport {
    /// Sum of consecutive sample distances.
    pub polyline: f64,
    /// Trapezoid integral of the local speed.
    pub speed_integral: f64,
    /// Integral of a caller-supplied pointwise norm of the velocity, when a
    /// chart norm is available.
    pub chart_integral: Option<f64>,
}

/// Measures length as a polyline sum and as the integral of the local speed,
/// optionally also integrating a chart norm `v(t)`. With `require_injective`
/// the image is scanned for revisits first, since the comparison against
/// one-dimensional measure only makes sense at multiplicity one.
pub fn length_report<P>(
    frag: &Fragment<P>,
    rho: &Pseudometric<'_, P>,
    chart_speed: Option<&dyn Fn(f64) -> f64>,
    require_injective: bool,
) -> Result<LengthReport> {
    if require_injective {
        let scan_delta = frag.grid * 8.0;
        if let Some(t) = first_revisit(frag, rho, scan_delta) {
            return Err(MdlError::Multiplicity(t));
        }
    }
    let polyline = fragment_length(frag, rho);
    let speed = local_speeds(frag, rho);
    let mut speed_integral = 0.0;
    let mut chart_integral = chart_speed.map(|_| 0.0);
    for i in 1..frag.len() {
        let dt = frag.times[i] - frag.times[i - 1];
        if dt > frag.grid * 1.5 {
            continue;
        }
        speed_integral += 0.5 * (speed[i - 1] + speed[i]) * dt;
        if let (Some(total), Some(v)) = (chart_integral.as_mut(), chart_speed) {
            *total += 0.5 * (v(frag.times[i - 1]) + v(frag.times[i])) * dt;
        }
    }
    Ok(LengthReport { polyline, speed_integral, chart_integral })
}

/// First time the curve re-enters a net cell it previously left, if ever.
/// A heuristic at resolution `delta`: cells are Voronoi regions of a greedy
/// net and a revisit is a second assignment run for the same cell.
fn first_revisit<P>(frag: &Fragment<P>, rho: &Pseudometric<'_, P>, delta: f64) -> Option<f64> {
    let mut net: Vec<usize> = Vec::new();
    for i in 0..frag.len() {
        if net.iter().all(|&z| rho.eval(&frag.points[i], &frag.points[z]) > delta) {
            net.push(i);
        }
    }
    let mut runs = vec![0usize; net.len()];
    let mut prev: Option<usize> = None;
    for i in 0..frag.len() {
        let mut best = 0usize;
        let mut best_d = f64::MAX;
        for (j, &z) in net.iter().enumerate() {
            let d = rho.eval(&frag.points[i], &frag.points[z]);
            if d < best_d - 1e-15 {
                best_d = d;
                best = j;
            }
        }
        if prev != Some(best) {
            runs[best] += 1;
            if runs[best] > 1 {
                return Some(frag.times[i]);
            }
            prev = Some(best);
        }
    }
    None
}

pub(crate) fn local_speeds<P>(frag: &Fragment<P>, rho: &Pseudometric<'_, P>) -> Vec<f64> {
    (0..frag.len())
        .map(|i| {
            let left = i > 0 && frag.times[i] - frag.times[i - 1] <= frag.grid * 1.5;
            let right =
                i + 1 < frag.len() && frag.times[i + 1] - frag.times[i] <= frag.grid * 1.5;
            match (left, right) {
                (true, true) => {
                    rho.eval(&frag.points[i - 1], &frag.points[i + 1])
                        / (frag.times[i + 1] - frag.times[i - 1])
                }
                (true, false) => {
                    rho.eval(&frag.points[i - 1], &frag.points[i])
                        / (frag.times[i] - frag.times[i - 1])
                }
                (false, true) => {
                    rho.eval(&frag.points[i], &frag.points[i + 1])
                        / (frag.times[i + 1] - frag.times[i])
                }
                (false, false) => 0.0,
            }
        })
        .collect()
}

/// Occupation count against integrated speed at one net resolution.
#[derive(Debug, Clone)]
pub struct AreaCheck {
    pub delta: f64,
    pub net_size: usize,
    /// Sum over net points of multiplicity times cell width.
    pub occupation: f64,
    /// Trapezoid integral of the local speed over the parameter domain.
    pub integral: f64,
}

impl AreaCheck {
    pub fn gap(&self) -> f64 {
        (self.occupation - self.integral).abs()
    }
}

/// Compares the multiplicity-weighted measure of a greedy delta-net of the
/// image against the integral of the fragment's local speed. The two agree
/// up to an error vanishing with delta.
pub fn area_formula_check<P>(
    frag: &Fragment<P>,
    rho: &Pseudometric<'_, P>,
    delta: f64,
) -> Result<AreaCheck> {
    if delta <= 0.0 {
        return Err(MdlError::BadArgument(format!("net resolution {delta} must be positive")));
    }
    if frag.len() < 2 {
        return Err(MdlError::BadArgument("fragment has fewer than two samples".into()));
    }
    let mut net: Vec<usize> = Vec::new();
    for i in 0..frag.len() {
        if net.iter().all(|&z| rho.eval(&frag.points[i], &frag.points[z]) > delta) {
            net.push(i);
        }
    }
    if net.len() < 2 {
        return Err(MdlError::BadArgument(format!(
            "net resolution {delta} exceeds the fragment diameter"
        )));
    }
    let mut widths = vec![0.0f64; net.len()];
    for j in 0..net.len() - 1 {
        widths[j] = rho.eval(&frag.points[net[j]], &frag.points[net[j + 1]]);
    }
    let mut mult = vec![0usize; net.len()];
    let mut prev: Option<usize> = None;
    for i in 0..frag.len() {
        let mut best = 0usize;
        let mut best_d = f64::MAX;
        for (j, &z) in net.iter().enumerate() {
            let d = rho.eval(&frag.points[i], &frag.points[z]);
            if d < best_d - 1e-15 {
                best_d = d;
                best = j;
            }
        }
        if prev != Some(best) {
            mult[best] += 1;
            prev = Some(best);
        }
    }
    let occupation = mult.iter().zip(&widths).map(|(&m, &w)| m as f64 * w).sum();
    let speed = |i: usize| -> f64 {
        let left = i > 0 && frag.times[i] - frag.times[i - 1] <= frag.grid * 1.5;
        let right = i + 1 < frag.len() && frag.times[i + 1] - frag.times[i] <= frag.grid * 1.5;
        match (left, right) {
            (true, true) => {
                rho.eval(&frag.points[i - 1], &frag.points[i + 1])
                    / (frag.times[i + 1] - frag.times[i - 1])
            }
            (true, false) => {
                rho.eval(&frag.points[i - 1], &frag.points[i])
                    / (frag.times[i] - frag.times[i - 1])
            }
            (false, true) => {
                rho.eval(&frag.points[i], &frag.points[i + 1])
                    / (frag.times[i + 1] - frag.times[i])
            }
            (false, false) => 0.0,
        }
    };
    let mut integral = 0.0;
    for i in 1..frag.len() {
        let dt = frag.times[i] - frag.times[i - 1];
        if dt <= frag.grid * 1.5 {
            integral += 0.5 * (speed(i - 1) + speed(i)) * dt;
        }
    }
    Ok(AreaCheck { delta, net_size: net.len(), occupation, integral })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::LimitSpace;
    use crate::rational::{rat_from_f64, rat_to_f64};
    use crate::space::{limit_estimate_metric, EuclideanHost, NormKind};
    use crate::system::{GrowthRule, InverseSystem};

    fn host(norm: NormKind) -> EuclideanHost {
        EuclideanHost::new(2, norm)
    }

    #[test]
    fn dyadic_sampling_covers_every_component() {
        let dom = Domain::new(vec![(0.0, 0.5), (0.75, 1.0)], vec![2.0]).unwrap();
        let frag = Fragment::from_fn(dom, 3, |t| t);
        assert_eq!(frag.times().first(), Some(&0.0));
        assert_eq!(frag.times().last(), Some(&2.0));
        assert_eq!(frag.len(), 5 + 3 + 1);
        assert!(frag.index_of(0.75).is_some());
        assert!(frag.index_of(0.6).is_none());
    }

    #[test]
    fn touching_intervals_are_rejected() {
        assert!(Domain::new(vec![(0.0, 0.5), (0.5, 1.0)], vec![]).is_err());
        assert!(Domain::new(vec![(0.0, 1.0)], vec![0.5]).is_err());
        assert!(Domain::new(vec![(0.3, 0.3)], vec![]).is_err());
    }

    #[test]
    fn line_speed_under_each_norm() {
        let frag = Fragment::from_fn(Domain::interval(0.0, 1.0), 6, |t| vec![t, 2.0 * t]);
        for (norm, expect) in [
            (NormKind::L1, 3.0),
            (NormKind::L2, 5.0f64.sqrt()),
            (NormKind::Linf, 2.0),
        ] {
            let est = metric_differential(&frag, &host(norm).metric(), 0.5, 4).unwrap();
            assert!((est.value - expect).abs() < 1e-9, "{norm}: {}", est.value);
            assert!(est.exists);
            assert!(est.oscillation < 1e-9);
        }
    }

    #[test]
    fn circle_speed_is_one() {
        let frag =
            Fragment::from_fn(Domain::interval(0.0, 1.0), 8, |t| vec![t.cos(), t.sin()]);
        let est = metric_differential(&frag, &host(NormKind::L2).metric(), 0.5, 5).unwrap();
        assert!((est.value - 1.0).abs() < 2e-3, "value {}", est.value);
        assert!(est.exists);
    }

    #[test]
    fn corner_flags_depend_on_the_norm() {
        let frag = Fragment::from_fn(Domain::interval(-1.0, 1.0), 7, |t| vec![t, t.abs()]);
        let l2 = metric_differential(&frag, &host(NormKind::L2).metric(), 0.0, 5).unwrap();
        assert!(!l2.exists, "oscillation {}", l2.oscillation);
        let l1 = metric_differential(&frag, &host(NormKind::L1).metric(), 0.0, 5).unwrap();
        assert!(!l1.exists, "oscillation {}", l1.oscillation);
        // under the max norm this curve is an isometric copy of the line
        let linf = metric_differential(&frag, &host(NormKind::Linf).metric(), 0.0, 5).unwrap();
        assert!(linf.exists, "oscillation {}", linf.oscillation);
        assert!((linf.value - 1.0).abs() < 1e-9);
        // and away from the corner every norm settles
        let l2_off = metric_differential(&frag, &host(NormKind::L2).metric(), 0.5, 5).unwrap();
        assert!(l2_off.exists);
        assert!((l2_off.value - 2.0f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn isolated_times_are_rejected() {
        let dom = Domain::new(vec![(0.0, 1.0)], vec![2.0]).unwrap();
        let frag = Fragment::from_fn(dom, 4, |t| vec![t, 0.0]);
        let err = metric_differential(&frag, &host(NormKind::L2).metric(), 2.0, 4);
        assert!(matches!(err, Err(MdlError::IsolatedTime(t)) if t == 2.0));
    }

    #[test]
    fn boundary_times_fall_back_to_one_sided_quotients() {
        let frag = Fragment::from_fn(Domain::interval(0.0, 1.0), 6, |t| vec![t, 2.0 * t]);
        let est = metric_differential(&frag, &host(NormKind::L1).metric(), 0.0, 4).unwrap();
        assert!((est.value - 3.0).abs() < 1e-9);
        assert!(est.exists);
        assert!(est.scales.iter().all(|r| r.two_point.is_none()));
    }

    #[test]
    fn tower_geodesic_has_unit_speed_exactly() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 3).unwrap();
        let space = LimitSpace::new(system);
        let x = space.vertex_point(0).unwrap();
        let (chain, _) = space.geodesic_through(&x).unwrap();
        let frag = Fragment::from_fn(Domain::interval(0.0, 1.0), 5, |t| {
            space.chain_point(&chain, &rat_from_f64(t).expect("dyadic")).unwrap()
        });
        let rho = limit_estimate_metric(&space);
        let est = metric_differential(&frag, &rho, 0.5, 4).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.oscillation, 0.0);
        assert!(est.exists);
        assert_eq!(fragment_length(&frag, &rho), 1.0);
    }

    #[test]
    fn height_composition_keeps_unit_speed() {
        let system = InverseSystem::generate(2, GrowthRule::Periodic, 2).unwrap();
        let space = LimitSpace::new(system);
        let x = space.vertex_point(1).unwrap();
        let (chain, _) = space.geodesic_through(&x).unwrap();
        let frag = Fragment::from_fn(Domain::interval(0.0, 1.0), 4, |t| {
            space.chain_point(&chain, &rat_from_f64(t).expect("dyadic")).unwrap()
        });
        let heights = frag.map(|_, p| vec![rat_to_f64(&space.phi(p).unwrap())]);
        let line = EuclideanHost::new(1, NormKind::L2).metric();
        let est = metric_differential(&heights, &line, 0.5, 3).unwrap();
        assert_eq!(est.value, 1.0);
        assert!(est.exists);
    }

    #[test]
    fn occupation_matches_integral_for_a_segment() {
        let frag = Fragment::from_fn(Domain::interval(0.0, 1.0), 8, |t| vec![t, 0.0]);
        let rho = host(NormKind::L2).metric();
        // the mismatch is bounded by the net resolution at every delta
        for delta in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
            let check = area_formula_check(&frag, &rho, delta).unwrap();
            assert!((check.integral - 1.0).abs() < 1e-9);
            assert!(check.gap() <= 2.0 * delta, "gap {} at {delta}", check.gap());
        }
    }

    #[test]
    fn double_cover_doubles_the_occupation() {
        let tent = |t: f64| if t <= 1.0 { vec![t, 0.0] } else { vec![2.0 - t, 0.0] };
        let frag = Fragment::from_fn(Domain::interval(0.0, 2.0), 7, tent);
        let rho = host(NormKind::L2).metric();
        let check = area_formula_check(&frag, &rho, 1.0 / 16.0).unwrap();
        assert!((check.occupation - 2.0).abs() <= 4.0 * check.delta, "{}", check.occupation);
        assert!((check.integral - 2.0).abs() < 0.05, "{}", check.integral);
        assert!(check.gap() <= 4.0 * check.delta);
    }

    #[test]
    fn oversized_nets_are_rejected() {
        let frag = Fragment::from_fn(Domain::interval(0.0, 1.0), 4, |t| vec![t, 0.0]);
        assert!(area_formula_check(&frag, &host(NormKind::L2).metric(), 10.0).is_err());
        assert!(area_formula_check(&frag, &host(NormKind::L2).metric(), 0.0).is_err());
    }

    #[test]
    fn density_ratios_see_the_domain_shape() {
        let full = Domain::interval(0.0, 1.0);
        for r in domain_density_ratios(&full, 0.5, &[0.25, 0.125, 0.0625]) {
            assert_eq!(r, 1.0);
        }
        let split = Domain::new(vec![(0.0, 1.0), (2.0, 3.0)], vec![]).unwrap();
        let ratios = domain_density_ratios(&split, 0.5, &[1.0, 0.25]);
        assert!(ratios[0] < 1.0);
        assert_eq!(ratios[1], 1.0);
    }

    #[test]
    fn fat_cantor_density_depends_on_the_point() {
        let dom = fat_cantor_domain(6);
        assert!((dom.measure() - 0.5).abs() < 0.02);
        // far inside a surviving interval the window is eventually covered
        let (a0, b0) = dom.intervals()[0];
        let interior = (a0 + b0) / 2.0;
        let scales: Vec<f64> = (4..14).map(|j| 0.5f64.powi(j)).collect();
        let ratios = domain_density_ratios(&dom, interior, &scales);
        assert_eq!(*ratios.last().unwrap(), 1.0);
        // at the edge of a removed gap, half of a small window stays empty
        let gap_edge = dom.intervals()[0].1;
        let edge_ratios = domain_density_ratios(&dom, gap_edge, &[1e-5, 1e-6]);
        assert!(edge_ratios.iter().all(|&r| r < 0.75), "{edge_ratios:?}");
    }

    #[test]
    fn length_report_measures_an_axis_polyline() {
        let corner = |t: f64| if t <= 1.0 { vec![t, 0.0] } else { vec![1.0, t - 1.0] };
        let frag = Fragment::from_fn(Domain::interval(0.0, 2.0), 7, corner);
        let report = length_report(&frag, &host(NormKind::L1).metric(), None, true).unwrap();
        assert!((report.polyline - 2.0).abs() < 1e-9);
        assert!((report.speed_integral - 2.0).abs() < 1e-2);
        assert!(report.chart_integral.is_none());
    }

    #[test]
    fn length_report_rejects_doubled_traversals() {
        let tent = |t: f64| if t <= 1.0 { vec![t, 0.0] } else { vec![2.0 - t, 0.0] };
        let frag = Fragment::from_fn(Domain::interval(0.0, 2.0), 7, tent);
        let err = length_report(&frag, &host(NormKind::L2).metric(), None, true);
        assert!(matches!(err, Err(MdlError::Multiplicity(_))));
        // without the injectivity requirement both measurements still run
        let report = length_report(&frag, &host(NormKind::L2).metric(), None, false).unwrap();
        assert!((report.polyline - 2.0).abs() < 1e-9);
    }

    #[test]
    fn chart_norm_integral_rides_along() {
        let frag = Fragment::from_fn(Domain::interval(0.0, 1.0), 6, |t| vec![t, 2.0 * t]);
        let speed = |_: f64| 3.0;
        let report =
            length_report(&frag, &host(NormKind::L1).metric(), Some(&speed), true).unwrap();
        assert!((report.polyline - 3.0).abs() < 1e-9);
        assert!((report.chart_integral.unwrap() - 3.0).abs() < 1e-9);
    }
}
