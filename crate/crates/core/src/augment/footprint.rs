//! 2D object footprints on the table plane.

use nalgebra::Vector2;

type P = Vector2<f64>;

fn cross(o: &P, a: &P, b: &P) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull in counter-clockwise order (Andrew's monotone chain).
pub fn convex_hull(points: &[P]) -> Vec<P> {
    let mut pts: Vec<P> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<P> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<P> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn point_segment_distance(p: &P, a: &P, b: &P) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Inside or on the boundary of a counter-clockwise convex polygon.
fn contains(poly: &[P], p: &P) -> bool {
    match poly.len() {
        0 => false,
        1 => poly[0] == *p,
        2 => point_segment_distance(p, &poly[0], &poly[1]) == 0.0,
        n => (0..n).all(|i| cross(&poly[i], &poly[(i + 1) % n], p) >= 0.0),
    }
}

fn edges(poly: &[P]) -> Vec<(P, P)> {
    match poly.len() {
        0 => vec![],
        1 => vec![(poly[0], poly[0])],
        n => (0..n).map(|i| (poly[i], poly[(i + 1) % n])).collect(),
    }
}

fn segments_intersect(a: &P, b: &P, c: &P, d: &P) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Euclidean distance between two convex polygons, 0 when they overlap.
pub fn polygon_distance(a: &[P], b: &[P]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    if a.iter().any(|p| contains(b, p)) || b.iter().any(|p| contains(a, p)) {
        return 0.0;
    }
    let ea = edges(a);
    let eb = edges(b);
    let mut best = f64::INFINITY;
    for (p, q) in &ea {
        for (r, s) in &eb {
            if segments_intersect(p, q, r, s) {
                return 0.0;
            }
            best = best
                .min(point_segment_distance(p, r, s))
                .min(point_segment_distance(q, r, s))
                .min(point_segment_distance(r, p, q))
                .min(point_segment_distance(s, p, q));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: f64, y: f64, s: f64) -> Vec<P> {
        convex_hull(&[
            P::new(x, y),
            P::new(x + s, y),
            P::new(x + s, y + s),
            P::new(x, y + s),
            P::new(x + s / 2.0, y + s / 2.0),
        ])
    }

    #[test]
    fn hull_drops_interior() {
        assert_eq!(square(0.0, 0.0, 1.0).len(), 4);
    }

    #[test]
    fn distances() {
        let a = square(0.0, 0.0, 1.0);
        assert_eq!(polygon_distance(&a, &square(0.5, 0.5, 1.0)), 0.0);
        assert!((polygon_distance(&a, &square(1.5, 0.0, 1.0)) - 0.5).abs() < 1e-12);
        let diag = polygon_distance(&a, &square(2.0, 2.0, 1.0));
        assert!((diag - 2f64.sqrt()).abs() < 1e-12);
        // contained
        assert_eq!(polygon_distance(&a, &square(0.25, 0.25, 0.5)), 0.0);
    }
}
