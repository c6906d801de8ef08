//! Closed 2D polygons: containment, area moments, resampling and Douglas-Peucker.

use nalgebra::Vector2;

pub type Point2 = Vector2<f64>;

/// Even-odd containment test.
pub fn contains(poly: &[Point2], p: &Point2) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
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

pub fn segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

pub fn boundary_distance(poly: &[Point2], p: &Point2) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| segment_distance(p, &poly[i], &poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Inside, or within `tol` of the boundary.
pub fn contains_with_tolerance(poly: &[Point2], p: &Point2, tol: f64) -> bool {
    contains(poly, p) || boundary_distance(poly, p) <= tol
}

pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

pub fn perimeter(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| (poly[(i + 1) % n] - poly[i]).norm()).sum()
}

/// Axis-aligned bounds `(min, max)`.
pub fn bounds(poly: &[Point2]) -> (Point2, Point2) {
    poly.iter().fold(
        (
            Point2::new(f64::INFINITY, f64::INFINITY),
            Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        ),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

/// Area centroid and central second moments `(μ20, μ11, μ02)` of the enclosed region.
pub fn moments(poly: &[Point2]) -> Option<(Point2, [f64; 3])> {
    let n = poly.len();
    let a = signed_area(poly);
    if n < 3 || a.abs() < 1e-12 {
        return None;
    }
    let (mut cx, mut cy, mut ixx, mut ixy, mut iyy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let cross = p.x * q.y - q.x * p.y;
        cx += (p.x + q.x) * cross;
        cy += (p.y + q.y) * cross;
        ixx += (p.x * p.x + p.x * q.x + q.x * q.x) * cross;
        iyy += (p.y * p.y + p.y * q.y + q.y * q.y) * cross;
        ixy += (p.x * q.y + 2.0 * p.x * p.y + 2.0 * q.x * q.y + q.x * p.y) * cross;
    }
    cx /= 6.0 * a;
    cy /= 6.0 * a;
    // Raw moments over the (signed) area, then shift to the centroid.
    let mxx = ixx / (12.0 * a) - cx * cx;
    let myy = iyy / (12.0 * a) - cy * cy;
    let mxy = ixy / (24.0 * a) - cx * cy;
    Some((Point2::new(cx, cy), [mxx, mxy, myy]))
}

/// Orientation of the major principal axis (radians, in `(-π/2, π/2]`) and the
/// major/minor eigenvalue ratio.
pub fn principal_axis(poly: &[Point2]) -> Option<(f64, f64)> {
    let (_, [mxx, mxy, myy]) = moments(poly)?;
    let angle = 0.5 * (2.0 * mxy).atan2(mxx - myy);
    let mean = 0.5 * (mxx + myy);
    let dev = (0.25 * (mxx - myy).powi(2) + mxy * mxy).sqrt();
    let (l1, l2) = (mean + dev, mean - dev);
    if l2 <= 0.0 {
        return Some((angle, f64::INFINITY));
    }
    Some((angle, l1 / l2))
}

/// Cumulative arc length at every vertex of the closed polygon; the last entry is the perimeter.
pub fn arc_lengths(poly: &[Point2]) -> Vec<f64> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    let mut s = 0.0;
    out.push(0.0);
    for i in 0..n {
        s += (poly[(i + 1) % n] - poly[i]).norm();
        out.push(s);
    }
    out
}

/// Point at arc length `s` (wrapped) along the closed polygon.
pub fn point_at_arc(poly: &[Point2], cumulative: &[f64], s: f64) -> Point2 {
    let n = poly.len();
    let total = cumulative[n];
    if total == 0.0 {
        return poly[0];
    }
    let s = s.rem_euclid(total);
    // First edge whose end passes s.
    let i = match cumulative[1..].binary_search_by(|v| v.total_cmp(&s)) {
        Ok(i) | Err(i) => i.min(n - 1),
    };
    let (a, b) = (poly[i], poly[(i + 1) % n]);
    let len = cumulative[i + 1] - cumulative[i];
    if len == 0.0 {
        return a;
    }
    a + (b - a) * ((s - cumulative[i]) / len)
}

fn dp_open(points: &[Point2], epsilon: f64, keep: &mut [bool], lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let (a, b) = (points[lo], points[hi]);
    let mut best = (0.0, lo);
    for i in lo + 1..hi {
        let d = segment_distance(&points[i], &a, &b);
        if d > best.0 {
            best = (d, i);
        }
    }
    if best.0 > epsilon {
        keep[best.1] = true;
        dp_open(points, epsilon, keep, lo, best.1);
        dp_open(points, epsilon, keep, best.1, hi);
    }
}

/// Douglas-Peucker simplification of a closed contour. Returns indices of the
/// kept vertices in contour order.
///
/// The contour is split at vertex 0 and the vertex farthest from it; each half
/// is simplified independently.
pub fn douglas_peucker_closed(contour: &[Point2], epsilon: f64) -> Vec<usize> {
    let n = contour.len();
    if n <= 3 {
        return (0..n).collect();
    }
    // Anchor on the two vertices that are farthest apart along a first pass.
    let far_from = |k: usize| {
        (0..n)
            .max_by(|&i, &j| {
                (contour[i] - contour[k])
                    .norm_squared()
                    .total_cmp(&(contour[j] - contour[k]).norm_squared())
            })
            .unwrap()
    };
    let a = far_from(0);
    let b = far_from(a);
    let (a, b) = (a.min(b), a.max(b));
    if a == b {
        return vec![a];
    }
    // Rotate so the first anchor is at index 0, then close the loop.
    let rotated: Vec<Point2> = (0..=n).map(|i| contour[(a + i) % n]).collect();
    let mid = b - a;
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[mid] = true;
    dp_open(&rotated, epsilon, &mut keep, 0, mid);
    dp_open(&rotated, epsilon, &mut keep, mid, n);
    let mut out: Vec<usize> = (0..n).filter(|&i| keep[i]).map(|i| (i + a) % n).collect();
    out.sort_unstable();
    // An anchor may be a mid-edge point; drop kept vertices that are collinear with their neighbors.
    loop {
        let m = out.len();
        if m <= 3 {
            break;
        }
        let drop = (0..m).find(|&k| {
            let prev = contour[out[(k + m - 1) % m]];
            let next = contour[out[(k + 1) % m]];
            segment_distance(&contour[out[k]], &prev, &next) <= epsilon
        });
        match drop {
            Some(k) => {
                out.remove(k);
            }
            None => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(side: f64) -> Vec<Point2> {
        vec![
            Point2::new(0.0, 0.0),
            Point2::new(side, 0.0),
            Point2::new(side, side),
            Point2::new(0.0, side),
        ]
    }

    #[test]
    fn square_area_perimeter_moments() {
        let sq = square(2.0);
        assert_eq!(signed_area(&sq), 4.0);
        assert_eq!(perimeter(&sq), 8.0);
        let (c, [mxx, mxy, myy]) = moments(&sq).unwrap();
        assert!((c - Point2::new(1.0, 1.0)).norm() < 1e-12);
        // Second central moment of a 2x2 square per unit area: s²/12.
        assert!((mxx - 4.0 / 12.0).abs() < 1e-12);
        assert!((myy - 4.0 / 12.0).abs() < 1e-12);
        assert!(mxy.abs() < 1e-12);
    }

    #[test]
    fn principal_axis_of_rotated_rectangle() {
        let ang = 30f64.to_radians();
        let (c, s) = (ang.cos(), ang.sin());
        let rect: Vec<Point2> = [(-4.0, -1.0), (4.0, -1.0), (4.0, 1.0), (-4.0, 1.0)]
            .iter()
            .map(|&(x, y)| Point2::new(c * x - s * y, s * x + c * y))
            .collect();
        let (theta, ratio) = principal_axis(&rect).unwrap();
        assert!((theta - ang).abs() < 1e-9);
        assert!((ratio - 16.0).abs() < 1e-9);
    }

    #[test]
    fn containment() {
        let sq = square(10.0);
        assert!(contains(&sq, &Point2::new(5.0, 5.0)));
        assert!(!contains(&sq, &Point2::new(11.0, 5.0)));
        assert!(contains_with_tolerance(&sq, &Point2::new(10.4, 5.0), 0.5));
    }

    #[test]
    fn dp_on_dense_square_keeps_the_corners() {
        let mut contour = Vec::new();
        for i in 0..9 {
            contour.push(Point2::new(i as f64, 0.0));
        }
        for i in 0..9 {
            contour.push(Point2::new(9.0, i as f64));
        }
        for i in 0..9 {
            contour.push(Point2::new(9.0 - i as f64, 9.0));
        }
        for i in 0..9 {
            contour.push(Point2::new(0.0, 9.0 - i as f64));
        }
        let kept = douglas_peucker_closed(&contour, 1.0);
        let pts: Vec<Point2> = kept.iter().map(|&i| contour[i]).collect();
        assert_eq!(pts.len(), 4, "{pts:?}");
        for corner in [(0.0, 0.0), (9.0, 0.0), (9.0, 9.0), (0.0, 9.0)] {
            assert!(pts.contains(&Point2::new(corner.0, corner.1)));
        }
    }

    #[test]
    fn arc_sampling_wraps() {
        let sq = square(10.0);
        let cum = arc_lengths(&sq);
        assert_eq!(cum[4], 40.0);
        assert!((point_at_arc(&sq, &cum, 15.0) - Point2::new(10.0, 5.0)).norm() < 1e-12);
        assert!((point_at_arc(&sq, &cum, -5.0) - Point2::new(0.0, 5.0)).norm() < 1e-12);
        assert!((point_at_arc(&sq, &cum, 40.0) - Point2::new(0.0, 0.0)).norm() < 1e-12);
    }
}
