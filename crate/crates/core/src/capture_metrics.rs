//! Convex-hull capture quality index and success classification.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::contact::TargetBody;
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HullSummary {
    pub vertex_count: usize,
    pub volume: f64,
    pub surface_area: f64,
}

#[derive(Debug, Clone, Copy)]
struct Face {
    v: [usize; 3],
    normal: Vec3,
    offset: f64,
    alive: bool,
}

impl Face {
    fn new(points: &[Vec3], v: [usize; 3]) -> Self {
        let n = (points[v[1]] - points[v[0]]).cross(&(points[v[2]] - points[v[0]]));
        let normal = n / n.norm();
        Self {
            v,
            normal,
            offset: normal.dot(&points[v[0]]),
            alive: true,
        }
    }

    fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Exact convex hull of `points` by incremental insertion.
///
/// Flat (coplanar) inputs yield zero volume and twice the polygon area, as
/// for a two-sided sheet; collinear inputs yield zero for both.
pub fn convex_hull_3d(points: &[Vec3]) -> Result<HullSummary> {
    if points.len() < 4 {
        return Err(Error::invalid(format!(
            "convex hull needs at least 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::Numerical("non-finite hull input".into()));
    }
    let (lo, hi) = points.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let scale = (hi - lo).norm();
    if scale == 0.0 {
        return Ok(HullSummary { vertex_count: 1, volume: 0.0, surface_area: 0.0 });
    }
    let eps = 1e-11 * scale;

    // Initial simplex from extreme points.
    let i0 = (0..points.len())
        .min_by(|&a, &b| points[a].x.total_cmp(&points[b].x))
        .unwrap();
    let i1 = farthest(points, |p| (p - points[i0]).norm());
    let axis = (points[i1] - points[i0]).normalize();
    let line_dist = |p: &Vec3| {
        let d = p - points[i0];
        (d - axis * d.dot(&axis)).norm()
    };
    let i2 = farthest(points, line_dist);
    if line_dist(&points[i2]) <= eps {
        return Ok(HullSummary { vertex_count: 2, volume: 0.0, surface_area: 0.0 });
    }
    let plane_n = (points[i1] - points[i0])
        .cross(&(points[i2] - points[i0]))
        .normalize();
    let plane_dist = |p: &Vec3| plane_n.dot(&(p - points[i0]));
    let i3 = farthest(points, |p| plane_dist(p).abs());
    if plane_dist(&points[i3]).abs() <= eps {
        return Ok(planar_hull(points, &points[i0], &plane_n));
    }

    let interior = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let mut faces: Vec<Face> = Vec::new();
    for tri in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let mut f = Face::new(points, tri);
        if f.distance(&interior) > 0.0 {
            f = Face::new(points, [tri[0], tri[2], tri[1]]);
        }
        faces.push(f);
    }

    let seeds = [i0, i1, i2, i3];
    let mut visible = Vec::new();
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (pi, p) in points.iter().enumerate() {
        if seeds.contains(&pi) {
            continue;
        }
        visible.clear();
        visible.extend(
            faces
                .iter()
                .enumerate()
                .filter(|(_, f)| f.alive && f.distance(p) > eps)
                .map(|(k, _)| k),
        );
        if visible.is_empty() {
            continue;
        }
        edges.clear();
        for &k in &visible {
            let v = faces[k].v;
            for e in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                edges.insert(e);
            }
            faces[k].alive = false;
        }
        let horizon: Vec<(usize, usize)> = edges
            .iter()
            .filter(|&&(a, b)| !edges.contains(&(b, a)))
            .copied()
            .collect();
        for (a, b) in horizon {
            faces.push(Face::new(points, [a, b, pi]));
        }
        if faces.len() > 64 && faces.iter().filter(|f| !f.alive).count() * 2 > faces.len() {
            faces.retain(|f| f.alive);
        }
    }

    let mut volume = 0.0;
    let mut area = 0.0;
    let mut vertices = HashSet::new();
    for f in faces.iter().filter(|f| f.alive) {
        let (a, b, c) = (points[f.v[0]], points[f.v[1]], points[f.v[2]]);
        let cross = (b - a).cross(&(c - a));
        area += 0.5 * cross.norm();
        volume += (a - interior).dot(&(b - interior).cross(&(c - interior))) / 6.0;
        vertices.extend(f.v);
    }
    Ok(HullSummary {
        vertex_count: vertices.len(),
        volume,
        surface_area: area,
    })
}

fn farthest(points: &[Vec3], metric: impl Fn(&Vec3) -> f64) -> usize {
    (0..points.len())
        .max_by(|&a, &b| metric(&points[a]).total_cmp(&metric(&points[b])))
        .unwrap()
}

fn planar_hull(points: &[Vec3], origin: &Vec3, normal: &Vec3) -> HullSummary {
    let u = normal.cross(&if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() }).normalize();
    let w = normal.cross(&u);
    let flat: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let d = p - origin;
            (d.dot(&u), d.dot(&w))
        })
        .collect();
    let (hull, area) = polygon_hull_2d(flat);
    HullSummary {
        vertex_count: hull,
        volume: 0.0,
        surface_area: 2.0 * area,
    }
}

/// Monotone-chain hull; returns (vertex count, enclosed area).
pub(crate) fn polygon_hull_2d(mut pts: Vec<(f64, f64)>) -> (usize, f64) {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return (pts.len(), 0.0);
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let n = hull.len();
    let area = (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0;
    (n, area)
}

/// Reference geometry of the target used by the capture index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqiReference {
    pub volume: f64,
    pub surface_area: f64,
    pub characteristic_length: f64,
}

impl From<&TargetBody> for CqiReference {
    fn from(t: &TargetBody) -> Self {
        Self {
            volume: t.volume,
            surface_area: t.surface_area,
            characteristic_length: t.characteristic_length,
        }
    }
}

/// Capture quality index `J_n`; lower is better, zero is a perfect wrap.
pub fn cqi(volume: f64, surface_area: f64, com_distance: f64, target: &CqiReference) -> f64 {
    0.1 * (volume - target.volume).abs() / target.volume
        + 0.1 * (surface_area - target.surface_area).abs() / target.surface_area
        + 0.8 * com_distance.abs() / target.characteristic_length
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqiSample {
    pub time: f64,
    pub value: f64,
    pub com_distance: f64,
}

/// Mean capture index over the final `window` seconds of `history`.
pub fn settled_cqi(history: &[CqiSample], window: f64) -> Result<f64> {
    let (first, last) = match (history.first(), history.last()) {
        (Some(f), Some(l)) => (f.time, l.time),
        _ => return Err(Error::invalid("empty capture index history")),
    };
    if last - first < window - 1e-9 {
        return Err(Error::invalid(format!(
            "history spans {:.3} s, shorter than the {window} s window",
            last - first
        )));
    }
    let start = last - window - 1e-9;
    let (sum, count) = history
        .iter()
        .filter(|s| s.time >= start)
        .fold((0.0, 0usize), |(s, c), x| (s + x.value, c + 1));
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessThresholds {
    pub max_cqi: f64,
    pub min_locked_pairs: u32,
    pub min_final_mass: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        Self {
            max_cqi: 2.5,
            min_locked_pairs: 8,
            min_final_mass: 2.0,
        }
    }
}

impl SuccessThresholds {
    pub fn cqi_ok(&self, settled: f64) -> bool {
        settled <= self.max_cqi
    }

    pub fn locks_ok(&self, locked: u32) -> bool {
        locked >= self.min_locked_pairs
    }

    pub fn mass_ok(&self, final_mass: f64) -> bool {
        final_mass >= self.min_final_mass
    }

    pub fn is_success(&self, settled: f64, locked: u32, final_mass: f64) -> bool {
        self.cqi_ok(settled) && self.locks_ok(locked) && self.mass_ok(final_mass)
    }
}

/// Capture succeeds when the settled index, the locked pairs and the final MU
/// mass all meet their thresholds (bounds inclusive).
pub fn classify_success(settled: f64, locked_pairs: u32, final_mass: f64) -> bool {
    SuccessThresholds::default().is_success(settled, locked_pairs, final_mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cube() -> Vec<Vec3> {
        let mut v = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    v.push(Vec3::new(x, y, z));
                }
            }
        }
        v
    }

    #[test]
    fn unit_cube() {
        let h = convex_hull_3d(&cube()).unwrap();
        assert!((h.volume - 1.0).abs() < 1e-12);
        assert!((h.surface_area - 6.0).abs() < 1e-12);
        assert_eq!(h.vertex_count, 8);
    }

    #[test]
    fn unit_cube_with_interior_and_face_points() {
        let mut pts = cube();
        pts.push(Vec3::new(0.5, 0.5, 0.5));
        pts.push(Vec3::new(0.5, 0.5, 1.0));
        pts.push(Vec3::new(0.0, 0.3, 0.7));
        let h = convex_hull_3d(&pts).unwrap();
        assert!((h.volume - 1.0).abs() < 1e-12);
        assert!((h.surface_area - 6.0).abs() < 1e-12);
    }

    #[test]
    fn corner_tetrahedron() {
        let pts = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let h = convex_hull_3d(&pts).unwrap();
        assert!((h.volume - 1.0 / 6.0).abs() < 1e-14);
        assert!((h.surface_area - (1.5 + 3f64.sqrt() / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn flat_sheet_is_two_sided() {
        let pts: Vec<Vec3> = (0..5)
            .flat_map(|i| (0..4).map(move |j| Vec3::new(i as f64, j as f64, 2.0)))
            .collect();
        let h = convex_hull_3d(&pts).unwrap();
        assert_eq!(h.volume, 0.0);
        assert!((h.surface_area - 24.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        assert!(convex_hull_3d(&[Vec3::zeros(), Vec3::x(), Vec3::y()]).is_err());
    }

    #[test]
    fn cqi_worked_examples() {
        let r = CqiReference { volume: 125.3, surface_area: 159.9, characteristic_length: 1.95 };
        assert_eq!(cqi(125.3, 159.9, 0.0, &r), 0.0);
        assert!((cqi(250.6, 159.9, 0.0, &r) - 0.1).abs() < 1e-12);
        assert!((cqi(250.6, 319.8, 1.95, &r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cqi_shape_terms_are_scale_free() {
        let r = CqiReference { volume: 3.0, surface_area: 11.0, characteristic_length: 0.5 };
        let r2 = CqiReference { volume: 24.0, surface_area: 44.0, characteristic_length: 1.0 };
        let a = cqi(5.0, 7.0, 0.0, &r);
        let b = cqi(40.0, 28.0, 0.0, &r2);
        assert!((a - b).abs() < 1e-12);
    }

    fn ramp(n: usize, window: f64) -> Vec<CqiSample> {
        (0..=n)
            .map(|i| {
                let s = i as f64 / n as f64;
                CqiSample { time: 10.0 + s * window, value: s, com_distance: 0.0 }
            })
            .collect()
    }

    #[test]
    fn settled_examples() {
        let flat: Vec<CqiSample> = (0..500)
            .map(|i| CqiSample { time: i as f64 * 0.01, value: 1.7, com_distance: 0.0 })
            .collect();
        assert!((settled_cqi(&flat, 2.0).unwrap() - 1.7).abs() < 1e-12);
        assert!((settled_cqi(&ramp(200, 2.0), 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(settled_cqi(&flat[..100], 2.0).is_err());
        assert!(settled_cqi(&[], 2.0).is_err());
    }

    #[test]
    fn success_examples() {
        assert!(classify_success(2.4, 9, 2.1));
        assert!(!classify_success(2.6, 12, 2.5));
        assert!(classify_success(2.5, 8, 2.0));
        assert!(!classify_success(2.0, 7, 2.3));
        assert!(!classify_success(2.0, 8, 1.99));
        assert!(!classify_success(f64::NAN, 12, 2.3));
    }

    fn pts_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), n)
    }

    proptest! {
        #[test]
        fn adding_points_never_shrinks_hull(pts in pts_strategy(5..40), extra in pts_strategy(1..10)) {
            let a: Vec<Vec3> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let mut b = a.clone();
            b.extend(extra.iter().map(|&(x, y, z)| Vec3::new(x, y, z)));
            let ha = convex_hull_3d(&a).unwrap();
            let hb = convex_hull_3d(&b).unwrap();
            prop_assert!(hb.volume >= ha.volume * (1.0 - 1e-12) - 1e-12);
        }

        #[test]
        fn translation_invariant(pts in pts_strategy(4..40), (dx, dy, dz) in (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64)) {
            let a: Vec<Vec3> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let shift = Vec3::new(dx, dy, dz);
            let b: Vec<Vec3> = a.iter().map(|p| p + shift).collect();
            let ha = convex_hull_3d(&a).unwrap();
            let hb = convex_hull_3d(&b).unwrap();
            prop_assert!((ha.volume - hb.volume).abs() <= 1e-9 * ha.volume.max(1.0));
            prop_assert!((ha.surface_area - hb.surface_area).abs() <= 1e-9 * ha.surface_area.max(1.0));
        }

        #[test]
        fn cqi_terms_non_negative(v in 0.0..500.0f64, s in 0.0..500.0f64, q in -20.0..20.0f64) {
            let r = CqiReference { volume: 125.3, surface_area: 159.9, characteristic_length: 1.95 };
            let j = cqi(v, s, q, &r);
            prop_assert!(j >= 0.0);
            prop_assert_eq!(j == 0.0, v == 125.3 && s == 159.9 && q == 0.0);
        }
    }
}
