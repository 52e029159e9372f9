//! Closed and open 2D polylines in drawing coordinates.

use super::Point2;

/// Signed area, positive for counterclockwise loops.
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    0.5 * a
}

/// Area centroid of a simple polygon; falls back to the vertex mean for
/// degenerate input.
pub fn centroid(poly: &[Point2]) -> Point2 {
    let n = poly.len();
    let area = signed_area(poly);
    if area.abs() < 1e-300 {
        return poly.iter().sum::<Point2>() / n.max(1) as f64;
    }
    let mut c = Point2::zeros();
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let cr = p.x * q.y - q.x * p.y;
        c += (p + q) * cr;
    }
    c / (6.0 * area)
}

/// Even-odd point-in-polygon test.
pub fn contains(poly: &[Point2], p: &Point2) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = poly[i];
        let b = poly[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: &Point2, b: &Point2, p: &Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test.
pub fn segments_intersect(a: &Point2, b: &Point2, c: &Point2, d: &Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// True when no two non-adjacent edges of the closed loop touch.
pub fn is_simple(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        for j in (i + 1)..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let c = poly[j];
            let d = poly[(j + 1) % n];
            if segments_intersect(&a, &b, &c, &d) {
                return false;
            }
        }
    }
    true
}

/// Removes consecutive duplicates (including the closing point).
pub fn dedup(poly: &[Point2], tol: f64) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(poly.len());
    for p in poly {
        if out.last().is_none_or(|q| (q - p).norm() > tol) {
            out.push(*p);
        }
    }
    while out.len() > 1 && (out[0] - out[out.len() - 1]).norm() <= tol {
        out.pop();
    }
    out
}

/// Cumulative arc length of a closed loop; the last entry is the perimeter.
pub fn arc_lengths(poly: &[Point2], closed: bool) -> Vec<f64> {
    let n = poly.len();
    let segs = if closed { n } else { n.saturating_sub(1) };
    let mut acc = vec![0.0; segs + 1];
    for i in 0..segs {
        acc[i + 1] = acc[i] + (poly[(i + 1) % n] - poly[i]).norm();
    }
    acc
}

/// Point at arc length `s` along the polyline.
pub fn point_at(poly: &[Point2], cum: &[f64], closed: bool, s: f64) -> Point2 {
    let n = poly.len();
    let total = *cum.last().unwrap();
    let s = if closed { s.rem_euclid(total.max(1e-300)) } else { s.clamp(0.0, total) };
    let seg = match cum.binary_search_by(|x| x.total_cmp(&s)) {
        Ok(i) => i.min(cum.len() - 2),
        Err(i) => i.saturating_sub(1).min(cum.len() - 2),
    };
    let len = cum[seg + 1] - cum[seg];
    let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
    let a = poly[seg];
    let b = poly[(seg + 1) % n];
    a + (b - a) * t
}

/// `count` points evenly spaced by arc length, starting at `poly[0]`.
pub fn resample(poly: &[Point2], count: usize, closed: bool) -> Vec<Point2> {
    let cum = arc_lengths(poly, closed);
    let total = *cum.last().unwrap();
    let denom = if closed { count as f64 } else { (count.max(2) - 1) as f64 };
    (0..count)
        .map(|k| point_at(poly, &cum, closed, total * k as f64 / denom))
        .collect()
}

/// Closest point on the closed loop and its arc-length parameter.
pub fn closest_point(poly: &[Point2], p: &Point2) -> (Point2, f64) {
    let n = poly.len();
    let mut best = (poly[0], 0.0);
    let mut best_d = f64::INFINITY;
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let q = a + ab * t;
        let d = (q - p).norm_squared();
        if d < best_d {
            best_d = d;
            best = (q, acc + t * len2.sqrt());
        }
        acc += len2.sqrt();
    }
    best
}

/// Axis-aligned bounds `(min, max)`.
pub fn bounds(poly: &[Point2]) -> (Point2, Point2) {
    let mut lo = Point2::repeat(f64::INFINITY);
    let mut hi = Point2::repeat(f64::NEG_INFINITY);
    for p in poly {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// Area and centroid of the intersection of two polygons, estimated on a
/// `resolution × resolution` sample grid over their common bounding box.
/// Returns `None` when they do not overlap.
pub fn overlap(a: &[Point2], b: &[Point2], resolution: usize) -> Option<(f64, Point2)> {
    let (alo, ahi) = bounds(a);
    let (blo, bhi) = bounds(b);
    let lo = alo.sup(&blo);
    let hi = ahi.inf(&bhi);
    if lo.x >= hi.x || lo.y >= hi.y {
        return None;
    }
    let dx = (hi.x - lo.x) / resolution as f64;
    let dy = (hi.y - lo.y) / resolution as f64;
    let mut count = 0usize;
    let mut sum = Point2::zeros();
    for j in 0..resolution {
        for i in 0..resolution {
            let p = Point2::new(lo.x + (i as f64 + 0.5) * dx, lo.y + (j as f64 + 0.5) * dy);
            if contains(a, &p) && contains(b, &p) {
                count += 1;
                sum += p;
            }
        }
    }
    if count == 0 {
        return None;
    }
    Some((count as f64 * dx * dy, sum / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Point2> {
        vec![
            Point2::new(x0, y0),
            Point2::new(x0 + s, y0),
            Point2::new(x0 + s, y0 + s),
            Point2::new(x0, y0 + s),
        ]
    }

    #[test]
    fn area_centroid_contains() {
        let sq = square(0.0, 0.0, 2.0);
        assert_relative_eq!(signed_area(&sq), 4.0);
        assert_relative_eq!(centroid(&sq), Point2::new(1.0, 1.0));
        assert!(contains(&sq, &Point2::new(0.5, 1.5)));
        assert!(!contains(&sq, &Point2::new(2.5, 1.5)));
    }

    #[test]
    fn simplicity() {
        assert!(is_simple(&square(0.0, 0.0, 1.0)));
        let bowtie = vec![Point2::new(0., 0.), Point2::new(1., 1.), Point2::new(1., 0.), Point2::new(0., 1.)];
        assert!(!is_simple(&bowtie));
    }

    #[test]
    fn resample_square() {
        let pts = resample(&square(0.0, 0.0, 1.0), 8, true);
        assert_eq!(pts.len(), 8);
        assert_relative_eq!(pts[1], Point2::new(0.5, 0.0));
        assert_relative_eq!(pts[3], Point2::new(1.0, 0.5));
    }

    #[test]
    fn overlap_of_offset_squares() {
        let (area, c) = overlap(&square(0.0, 0.0, 1.0), &square(0.5, 0.5, 1.0), 200).unwrap();
        assert_relative_eq!(area, 0.25, max_relative = 1e-2);
        assert_relative_eq!(c, Point2::new(0.75, 0.75), epsilon = 1e-2);
        assert!(overlap(&square(0.0, 0.0, 1.0), &square(2.0, 2.0, 1.0), 50).is_none());
    }
}
