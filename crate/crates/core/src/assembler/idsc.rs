//! Inner-distance shape contexts and cyclic contour correspondence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::polygon::{arc_lengths, contains, point_at, segments_intersect};
use crate::geometry::Point2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdscParams {
    pub samples: usize,
    pub distance_bins: usize,
    pub angle_bins: usize,
    /// Sub-sample steps tried around the best integer shift.
    pub refine_steps: usize,
}

impl Default for IdscParams {
    fn default() -> Self {
        Self {
            samples: 32,
            distance_bins: 8,
            angle_bins: 8,
            refine_steps: 16,
        }
    }
}

/// Whether the open segment between contour points `a` and `b` stays
/// inside the closed polygon `pts`.
fn visible(pts: &[Point2], a: usize, b: usize) -> bool {
    let n = pts.len();
    if (a + 1) % n == b || (b + 1) % n == a {
        return true;
    }
    for i in 0..n {
        let j = (i + 1) % n;
        if i == a || i == b || j == a || j == b {
            continue;
        }
        if segments_intersect(&pts[a], &pts[b], &pts[i], &pts[j]) {
            return false;
        }
    }
    contains(pts, &((pts[a] + pts[b]) * 0.5))
}

/// Shortest paths inside the polygon between all contour points: the
/// distance matrix and the first point after `a` on the path to `b`.
fn inner_paths(pts: &[Point2]) -> (Vec<f64>, Vec<usize>) {
    let n = pts.len();
    let mut d = vec![f64::INFINITY; n * n];
    let mut next = vec![usize::MAX; n * n];
    for a in 0..n {
        d[a * n + a] = 0.0;
        next[a * n + a] = a;
        for b in a + 1..n {
            if visible(pts, a, b) {
                let len = (pts[a] - pts[b]).norm();
                d[a * n + b] = len;
                d[b * n + a] = len;
                next[a * n + b] = b;
                next[b * n + a] = a;
            }
        }
    }
    for k in 0..n {
        for a in 0..n {
            let dak = d[a * n + k];
            if !dak.is_finite() {
                continue;
            }
            for b in 0..n {
                let via = dak + d[k * n + b];
                if via < d[a * n + b] {
                    d[a * n + b] = via;
                    next[a * n + b] = next[a * n + k];
                }
            }
        }
    }
    (d, next)
}

/// Normalized histograms of (log inner distance, inner angle) from each
/// contour point to all others. Contours are closed and counterclockwise.
pub fn descriptors(pts: &[Point2], p: &IdscParams) -> Vec<Vec<f64>> {
    let n = pts.len();
    let (d, next) = inner_paths(pts);
    let finite: Vec<f64> = d.iter().copied().filter(|x| x.is_finite() && *x > 0.0).collect();
    let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    let (lo, hi) = ((0.125f64).ln(), 2f64.ln());
    (0..n)
        .map(|a| {
            let tangent = pts[(a + 1) % n] - pts[(a + n - 1) % n];
            let mut h = vec![0.0; p.distance_bins * p.angle_bins];
            let mut total = 0.0;
            for b in 0..n {
                let dist = d[a * n + b];
                if b == a || !dist.is_finite() {
                    continue;
                }
                let hop = pts[next[a * n + b]] - pts[a];
                let angle = (tangent.perp(&hop)).atan2(tangent.dot(&hop)).rem_euclid(std::f64::consts::TAU);
                let r = ((dist / mean).ln() - lo) / (hi - lo);
                let rb = ((r * p.distance_bins as f64).floor().max(0.0) as usize).min(p.distance_bins - 1);
                let ab = ((angle / std::f64::consts::TAU * p.angle_bins as f64) as usize).min(p.angle_bins - 1);
                h[rb * p.angle_bins + ab] += 1.0;
                total += 1.0;
            }
            if total > 0.0 {
                for x in &mut h {
                    *x /= total;
                }
            }
            h
        })
        .collect()
}

pub fn chi2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| if x + y > 0.0 { (x - y) * (x - y) / (x + y) } else { 0.0 })
        .sum::<f64>()
        * 0.5
}

/// Piecewise-linear, cyclically monotone map between the arc-length
/// parameters (in `[0, 1)`) of two closed curves.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMap {
    /// (target parameter, source parameter), target parameters increasing
    /// in `[0, 1)` and source parameters increasing, spanning less than one
    /// turn.
    pub anchors: Vec<(f64, f64)>,
}

impl BoundaryMap {
    /// A rotation of the parameter by `offset`.
    pub fn shift(offset: f64) -> Self {
        Self {
            anchors: vec![(0.0, offset)],
        }
    }

    /// Builds the map through user key pairs; fails unless the pairs keep
    /// their cyclic order on both curves.
    pub fn through(pairs: &[(f64, f64)]) -> Result<Self> {
        let mut a: Vec<(f64, f64)> = pairs.iter().map(|&(t, s)| (t.rem_euclid(1.0), s.rem_euclid(1.0))).collect();
        a.sort_by(|x, y| x.0.total_cmp(&y.0));
        for i in 1..a.len() {
            while a[i].1 <= a[i - 1].1 {
                a[i].1 += 1.0;
            }
        }
        if a.len() > 1 && a.last().unwrap().1 - a[0].1 >= 1.0 {
            return Err(Error::JunctionMismatch);
        }
        Ok(Self { anchors: a })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let a = &self.anchors;
        let t = t.rem_euclid(1.0);
        if a.len() == 1 {
            return (t - a[0].0 + a[0].1).rem_euclid(1.0);
        }
        // the segment from the last anchor wraps to the first
        let k = a.iter().rposition(|x| x.0 <= t);
        let (p, q) = match k {
            Some(k) if k + 1 < a.len() => (a[k], a[k + 1]),
            Some(k) => (a[k], (a[0].0 + 1.0, a[0].1 + 1.0)),
            None => ((a[a.len() - 1].0 - 1.0, a[a.len() - 1].1 - 1.0), a[0]),
        };
        let f = (t - p.0) / (q.0 - p.0);
        (p.1 + f * (q.1 - p.1)).rem_euclid(1.0)
    }
}

/// `count` points at equal arc length starting `start` (a fraction of the
/// length) along a closed polyline.
pub fn sample_closed(poly: &[Point2], count: usize, start: f64) -> Vec<Point2> {
    let cum = arc_lengths(poly, true);
    let total = *cum.last().unwrap();
    (0..count)
        .map(|i| point_at(poly, &cum, true, (start + i as f64 / count as f64) * total))
        .collect()
}

/// Result of matching a target contour onto a source contour.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourMatch {
    pub map: BoundaryMap,
    pub cost: f64,
    /// Matched sample pairs (target index, source index).
    pub pairs: Vec<(usize, usize)>,
}

/// Matches two closed counterclockwise contours by the cyclic shift of
/// IDSC samples with the least total χ² cost. `target_junction` and
/// `source_junction` flag samples in the junction region; when both have
/// some, at least one matched pair must join them. The best integer shift
/// is refined to sub-sample precision.
pub fn match_contours(
    target: &[Point2],
    source: &[Point2],
    junction: Option<(&dyn Fn(&Point2) -> bool, &dyn Fn(&Point2) -> bool)>,
    p: &IdscParams,
) -> Result<ContourMatch> {
    let n = p.samples;
    let src = sample_closed(source, n, 0.0);
    let ds = descriptors(&src, p);
    let cost_at = |offset: f64| -> f64 {
        let dt = descriptors(&sample_closed(target, n, offset / n as f64), p);
        (0..n).map(|a| chi2(&dt[a], &ds[a])).sum()
    };
    let tgt = sample_closed(target, n, 0.0);
    let dt = descriptors(&tgt, p);
    let flags = junction.map(|(jt, js)| (tgt.iter().map(jt).collect::<Vec<_>>(), src.iter().map(js).collect::<Vec<_>>()));
    let constrained = flags.as_ref().is_some_and(|(ft, fs)| ft.contains(&true) && fs.contains(&true));
    let mut best: Option<(f64, usize)> = None;
    for s in 0..n {
        if constrained {
            let (ft, fs) = flags.as_ref().unwrap();
            if !(0..n).any(|a| ft[a] && fs[(a + s) % n]) {
                continue;
            }
        }
        let c: f64 = (0..n).map(|a| chi2(&dt[a], &ds[(a + s) % n])).sum();
        if best.is_none_or(|b| c < b.0) {
            best = Some((c, s));
        }
    }
    let (mut cost, s) = best.ok_or(Error::JunctionMismatch)?;
    // target sample a sits at parameter (a - s')/n against source sample a
    let mut offset = -(s as f64);
    let steps = p.refine_steps.max(1) as i64;
    for k in -steps..=steps {
        if k == 0 {
            continue;
        }
        let o = -(s as f64) + k as f64 / steps as f64;
        let c = cost_at(o);
        if c < cost - 1e-12 {
            cost = c;
            offset = o;
        }
    }
    let pairs = (0..n).map(|a| (a, (a + s) % n)).collect();
    Ok(ContourMatch {
        map: BoundaryMap::shift((-offset / n as f64).rem_euclid(1.0)),
        cost,
        pairs,
    })
}
