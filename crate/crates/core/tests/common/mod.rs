#![allow(dead_code)]

use tethernet_core::Vec3;

/// Convex hull volume and area by enumerating every supporting plane through
/// three input points. O(n^4), only meant for small point sets.
pub fn brute_force_hull(points: &[Vec3]) -> (f64, f64) {
    let n = points.len();
    let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n as f64;
    let scale = points.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    let eps = 1e-9 * scale.max(1.0);
    let mut planes: Vec<(Vec3, f64)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let nrm = (points[j] - points[i]).cross(&(points[k] - points[i]));
                if nrm.norm() < 1e-12 * scale * scale {
                    continue;
                }
                let mut nrm = nrm.normalize();
                let mut off = nrm.dot(&points[i]);
                let above = points.iter().any(|p| nrm.dot(p) - off > eps);
                let below = points.iter().any(|p| nrm.dot(p) - off < -eps);
                if above && below {
                    continue;
                }
                if above {
                    nrm = -nrm;
                    off = -off;
                }
                let dup = planes
                    .iter()
                    .any(|(m, o)| (m - nrm).norm() < 1e-7 && (o - off).abs() < 1e-7 * scale.max(1.0));
                if !dup {
                    planes.push((nrm, off));
                }
            }
        }
    }
    let mut volume = 0.0;
    let mut area = 0.0;
    for (nrm, off) in &planes {
        let on: Vec<Vec3> = points
            .iter()
            .filter(|p| (nrm.dot(p) - off).abs() <= eps)
            .copied()
            .collect();
        let u = if nrm.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let u = (u - nrm * nrm.dot(&u)).normalize();
        let w = nrm.cross(&u);
        let pts2: Vec<(f64, f64)> = on.iter().map(|p| (p.dot(&u), p.dot(&w))).collect();
        let a = polygon_area(pts2);
        area += a;
        volume += a * (off - nrm.dot(&centroid)) / 3.0;
    }
    (volume, area)
}

/// Area of the 2-D convex hull (Andrew's monotone chain).
fn polygon_area(mut pts: Vec<(f64, f64)>) -> f64 {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let m = hull.len();
    (0..m)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % m]);
            a.0 * b.1 - a.1 * b.0
        })
        .sum::<f64>()
        .abs()
        * 0.5
}
