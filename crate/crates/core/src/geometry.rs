//! Planar primitives: points, segments, polylines with cached arc-length,
//! disks, and crack sets with distance / crossing queries.
//!
//! All coordinates are `f64` lengths. Collinearity and touching tests use a
//! small absolute tolerance proportional to the scene diameter (see
//! [`scene_eps`]); segments touching within that tolerance count as crossing,
//! which keeps crack severing conservative.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative tolerance factor for geometric predicates.
pub const EPS_GEO_REL: f64 = 1e-12;

/// Absolute tolerance for a scene of the given diameter.
#[inline]
pub fn scene_eps(diameter: f64) -> f64 {
    EPS_GEO_REL * diameter.max(1.0)
}

/// Point in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite());
        Point2 { x, y }
    }

    #[inline]
    pub fn dist(&self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn lerp(&self, other: Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + t * (other.x - self.x),
            self.y + t * (other.y - self.y),
        )
    }
}

/// Disk `B_radius(center)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Disk {
    pub center: Point2,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Point2, radius: f64) -> Self {
        assert!(radius > 0.0, "disk radius must be positive");
        Disk { center, radius }
    }

    #[inline]
    pub fn contains(&self, q: Point2) -> bool {
        q.dist(self.center) < self.radius
    }
}

/// Open polyline with cached cumulative arc-lengths.
///
/// Subarc queries are O(log #vertices) thanks to the cache; construction
/// rejects zero-length segments so the cumulative lengths are strictly
/// increasing.
#[derive(Debug, Clone)]
pub struct Polyline {
    vertices: Vec<Point2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Domain(format!(
                "polyline needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        let mut cumulative = Vec::with_capacity(vertices.len());
        cumulative.push(0.0);
        for w in vertices.windows(2) {
            let d = w[0].dist(w[1]);
            if d <= 0.0 {
                return Err(Error::Domain(
                    "polyline has a zero-length segment".to_string(),
                ));
            }
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Ok(Polyline {
            vertices,
            cumulative,
        })
    }

    pub fn segment(a: Point2, b: Point2) -> Result<Self> {
        Polyline::new(vec![a, b])
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn first(&self) -> Point2 {
        self.vertices[0]
    }

    pub fn last(&self) -> Point2 {
        *self.vertices.last().unwrap()
    }

    /// Total length `l(p)`.
    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Cumulative arc-length up to vertex `i`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    fn check_arclength(&self, s: f64) -> Result<f64> {
        let l = self.length();
        let slack = 1e-9 * l.max(1.0);
        if s < -slack || s > l + slack {
            return Err(Error::Domain(format!(
                "arc-length {s} outside [0, {l}]"
            )));
        }
        Ok(s.clamp(0.0, l))
    }

    /// Point at arc-length `s` from the first vertex.
    pub fn arc_point(&self, s: f64) -> Result<Point2> {
        let s = self.check_arclength(s)?;
        // index of the segment containing s
        let i = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.vertices.len() - 2),
            Err(i) => i - 1,
        };
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / seg_len;
        Ok(self.vertices[i].lerp(self.vertices[i + 1], t))
    }

    /// Length of the subarc between arc-lengths `s <= t`.
    pub fn subarc_length(&self, s: f64, t: f64) -> Result<f64> {
        let s = self.check_arclength(s)?;
        let t = self.check_arclength(t)?;
        if s > t {
            return Err(Error::Domain(format!("subarc requires s <= t, got {s} > {t}")));
        }
        Ok(t - s)
    }

    /// Prefix of the polyline up to arc-length `s` (at least one segment).
    pub fn truncate_at(&self, s: f64) -> Result<Polyline> {
        let s = self.check_arclength(s)?;
        let mut verts = vec![self.vertices[0]];
        for i in 1..self.vertices.len() {
            if self.cumulative[i] < s {
                verts.push(self.vertices[i]);
            } else {
                break;
            }
        }
        let end = self.arc_point(s)?;
        if end.dist(*verts.last().unwrap()) > 0.0 {
            verts.push(end);
        }
        if verts.len() < 2 {
            // degenerate prefix: keep a tiny first step so the result is a polyline
            return Err(Error::Domain(format!("truncation at {s} leaves no segment")));
        }
        Polyline::new(verts)
    }

    /// Samples along the polyline at arc-steps of at most `step`,
    /// always including every vertex. Returns (arc-length, point) pairs.
    pub fn sample(&self, step: f64) -> Vec<(f64, Point2)> {
        assert!(step > 0.0);
        let mut out = Vec::new();
        for i in 0..self.vertices.len() - 1 {
            let s0 = self.cumulative[i];
            let s1 = self.cumulative[i + 1];
            let n = ((s1 - s0) / step).ceil().max(1.0) as usize;
            for k in 0..n {
                let t = k as f64 / n as f64;
                out.push((
                    s0 + t * (s1 - s0),
                    self.vertices[i].lerp(self.vertices[i + 1], t),
                ));
            }
        }
        out.push((self.length(), self.last()));
        out
    }

    fn bbox(&self) -> (Point2, Point2) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }
}

/// Distance from `q` to the closed segment `[a, b]`.
pub fn point_segment_distance(q: Point2, a: Point2, b: Point2) -> f64 {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return q.dist(a);
    }
    let t = (((q.x - a.x) * dx + (q.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    q.dist(a.lerp(b, t))
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Minimum distance between closed segments `[a,b]` and `[p,q]`.
/// Zero when they properly intersect.
pub fn segment_segment_distance(a: Point2, b: Point2, p: Point2, q: Point2) -> f64 {
    let d1 = orient(a, b, p);
    let d2 = orient(a, b, q);
    let d3 = orient(p, q, a);
    let d4 = orient(p, q, b);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return 0.0; // proper crossing
    }
    point_segment_distance(p, a, b)
        .min(point_segment_distance(q, a, b))
        .min(point_segment_distance(a, p, q))
        .min(point_segment_distance(b, p, q))
}

/// Union of polylines representing the closed discontinuity set `K`.
///
/// Components must be pairwise non-crossing; they may touch at shared
/// endpoint vertices (a spider shares its center).
#[derive(Debug, Clone, Default)]
pub struct CrackSet {
    components: Vec<Polyline>,
}

impl CrackSet {
    pub fn empty() -> Self {
        CrackSet { components: vec![] }
    }

    pub fn new(components: Vec<Polyline>) -> Result<Self> {
        let set = CrackSet { components };
        set.check_non_crossing()?;
        Ok(set)
    }

    fn check_non_crossing(&self) -> Result<()> {
        let eps = scene_eps(self.bbox_diameter());
        for i in 0..self.components.len() {
            for j in i + 1..self.components.len() {
                let pi = &self.components[i];
                let pj = &self.components[j];
                for si in pi.vertices().windows(2) {
                    for sj in pj.vertices().windows(2) {
                        let d = segment_segment_distance(si[0], si[1], sj[0], sj[1]);
                        if d > eps {
                            continue;
                        }
                        // contact allowed only at shared endpoint vertices
                        let endpoint_contact = [si[0], si[1]]
                            .iter()
                            .any(|u| [sj[0], sj[1]].iter().any(|v| u.dist(*v) <= eps));
                        if !endpoint_contact {
                            return Err(Error::Domain(format!(
                                "crack components {i} and {j} cross"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn components(&self) -> &[Polyline] {
        &self.components
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Total one-dimensional measure: the sum of component lengths.
    pub fn total_length(&self) -> f64 {
        self.components.iter().map(|p| p.length()).sum()
    }

    fn bbox_diameter(&self) -> f64 {
        if self.components.is_empty() {
            return 0.0;
        }
        let mut lo = self.components[0].vertices()[0];
        let mut hi = lo;
        for p in &self.components {
            let (l, h) = p.bbox();
            lo.x = lo.x.min(l.x);
            lo.y = lo.y.min(l.y);
            hi.x = hi.x.max(h.x);
            hi.y = hi.y.max(h.y);
        }
        lo.dist(hi)
    }

    /// Tolerance used for predicates against this crack set plus the
    /// extra scene points `pts`.
    pub fn eps_with(&self, pts: &[Point2]) -> f64 {
        let mut d = self.bbox_diameter();
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                d = d.max(a.dist(*b));
            }
        }
        scene_eps(d)
    }

    /// Euclidean distance from `q` to the union of segments.
    pub fn dist_to_crack(&self, q: Point2) -> Result<f64> {
        if self.components.is_empty() {
            return Err(Error::Domain("distance to an empty crack set".to_string()));
        }
        let mut best = f64::INFINITY;
        for p in &self.components {
            for w in p.vertices().windows(2) {
                best = best.min(point_segment_distance(q, w[0], w[1]));
            }
        }
        Ok(best)
    }

    /// Distance that treats an empty crack set as infinitely far.
    pub fn dist_or_inf(&self, q: Point2) -> f64 {
        self.dist_to_crack(q).unwrap_or(f64::INFINITY)
    }

    /// Whether the segment `(a, b)` intersects the crack set. Touching
    /// within the scene tolerance counts as crossing.
    pub fn segment_crosses(&self, a: Point2, b: Point2) -> bool {
        if self.components.is_empty() {
            return false;
        }
        let eps = self.eps_with(&[a, b]);
        for p in &self.components {
            for w in p.vertices().windows(2) {
                if segment_segment_distance(a, b, w[0], w[1]) <= eps {
                    return true;
                }
            }
        }
        false
    }

    /// Length of `K` clipped to the open disk `B`: `H^1(K ∩ B)`.
    ///
    /// Exact per segment: the chord parameter interval is solved in closed
    /// form from the quadratic `|a + t(b-a) - c|^2 = R^2`.
    pub fn clipped_length(&self, window: Disk) -> f64 {
        let mut total = 0.0;
        for p in &self.components {
            for w in p.vertices().windows(2) {
                total += segment_length_in_disk(w[0], w[1], window);
            }
        }
        total
    }
}

/// First point along the polyline where it exits the circle `|z - c| = R`,
/// assuming the first vertex starts strictly inside. Returns the arc-length
/// of the crossing and the crossing point.
pub fn first_circle_exit(p: &Polyline, circle: Disk) -> Option<(f64, Point2)> {
    let c = circle.center;
    let rr = circle.radius * circle.radius;
    for (i, w) in p.vertices().windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        if b.dist(c) < circle.radius {
            continue; // still inside at the far end
        }
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let fx = a.x - c.x;
        let fy = a.y - c.y;
        let aa = dx * dx + dy * dy;
        let bb = 2.0 * (fx * dx + fy * dy);
        let cc = fx * fx + fy * fy - rr;
        let disc = bb * bb - 4.0 * aa * cc;
        if disc < 0.0 {
            continue;
        }
        // first vertex of the segment inside: the exit is the larger root
        let t = ((-bb + disc.sqrt()) / (2.0 * aa)).clamp(0.0, 1.0);
        let arc = p.cumulative()[i] + t * aa.sqrt();
        return Some((arc, a.lerp(b, t)));
    }
    None
}

/// Length of segment `[a,b] ∩ B`.
pub fn segment_length_in_disk(a: Point2, b: Point2, disk: Disk) -> f64 {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let fx = a.x - disk.center.x;
    let fy = a.y - disk.center.y;
    let aa = dx * dx + dy * dy;
    if aa == 0.0 {
        return 0.0;
    }
    let bb = 2.0 * (fx * dx + fy * dy);
    let cc = fx * fx + fy * fy - disk.radius * disk.radius;
    let disc = bb * bb - 4.0 * aa * cc;
    if disc <= 0.0 {
        return 0.0;
    }
    let sq = disc.sqrt();
    let t0 = ((-bb - sq) / (2.0 * aa)).clamp(0.0, 1.0);
    let t1 = ((-bb + sq) / (2.0 * aa)).clamp(0.0, 1.0);
    (t1 - t0).max(0.0) * aa.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn l_shape() -> Polyline {
        Polyline::new(vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0)]).unwrap()
    }

    #[test]
    fn arc_point_unit_segment_midpoint() {
        let seg = Polyline::segment(p(0.0, 0.0), p(1.0, 0.0)).unwrap();
        let q = seg.arc_point(0.5).unwrap();
        assert!(q.dist(p(0.5, 0.0)) < 1e-15);
    }

    #[test]
    fn arc_point_zero_is_first_vertex() {
        let q = l_shape().arc_point(0.0).unwrap();
        assert!(q.dist(p(0.0, 0.0)) < 1e-15);
    }

    #[test]
    fn arc_point_l_shape() {
        // hand arc-length: 1.5 lands halfway up the vertical leg
        let q = l_shape().arc_point(1.5).unwrap();
        assert!(q.dist(p(1.0, 0.5)) < 1e-15);
    }

    #[test]
    fn arc_point_out_of_range() {
        assert!(l_shape().arc_point(2.5).is_err());
        assert!(l_shape().arc_point(-0.5).is_err());
    }

    #[test]
    fn subarc_lengths() {
        let seg = Polyline::segment(p(0.0, 0.0), p(1.0, 0.0)).unwrap();
        assert_eq!(seg.subarc_length(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(seg.subarc_length(0.3, 0.3).unwrap(), 0.0);
        assert!((l_shape().subarc_length(0.5, 1.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn polyline_rejects_degenerate() {
        assert!(Polyline::new(vec![p(0.0, 0.0)]).is_err());
        assert!(Polyline::new(vec![p(0.0, 0.0), p(0.0, 0.0)]).is_err());
    }

    #[test]
    fn dist_to_crack_cases() {
        let k = CrackSet::new(vec![
            Polyline::segment(p(-1.0, 0.0), p(0.0, 0.0)).unwrap(),
        ])
        .unwrap();
        assert!((k.dist_to_crack(p(0.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(k.dist_to_crack(p(-0.5, 0.0)).unwrap(), 0.0);
        // nearest point is the tip endpoint
        let d = k.dist_to_crack(p(1.0, 1.0)).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert!(CrackSet::empty().dist_to_crack(p(0.0, 0.0)).is_err());
    }

    #[test]
    fn segment_crosses_cases() {
        let k = CrackSet::new(vec![
            Polyline::segment(p(0.0, 0.0), p(1.0, 0.0)).unwrap(),
        ])
        .unwrap();
        assert!(k.segment_crosses(p(0.5, -0.1), p(0.5, 0.1)));
        assert!(!k.segment_crosses(p(2.0, 0.0), p(3.0, 0.0)));

        let k2 = CrackSet::new(vec![
            Polyline::segment(p(-1.0, 0.0), p(0.0, 0.0)).unwrap(),
        ])
        .unwrap();
        assert!(k2.segment_crosses(p(-0.5, -0.1), p(0.5, 0.1)));
        // touching an endpoint counts (conservative)
        assert!(k2.segment_crosses(p(0.0, 0.0), p(0.5, 0.5)));
    }

    #[test]
    fn crackset_rejects_crossing_components() {
        let a = Polyline::segment(p(-1.0, 0.0), p(1.0, 0.0)).unwrap();
        let b = Polyline::segment(p(0.5, -1.0), p(0.5, 1.0)).unwrap();
        assert!(CrackSet::new(vec![a, b]).is_err());
    }

    #[test]
    fn crackset_allows_shared_endpoints() {
        // three-armed spider
        let arms = vec![
            Polyline::segment(p(0.0, 0.0), p(0.0, 1.0)).unwrap(),
            Polyline::segment(p(0.0, 0.0), p(-0.866, -0.5)).unwrap(),
            Polyline::segment(p(0.0, 0.0), p(0.866, -0.5)).unwrap(),
        ];
        assert!(CrackSet::new(arms).is_ok());
    }

    #[test]
    fn clipped_length_tip_and_interior() {
        let k = CrackSet::new(vec![
            Polyline::segment(p(-1.0, 0.0), p(0.0, 0.0)).unwrap(),
        ])
        .unwrap();
        let r = 0.25;
        let at_tip = k.clipped_length(Disk::new(p(0.0, 0.0), r));
        assert!((at_tip - r).abs() < 1e-14);
        let interior = k.clipped_length(Disk::new(p(-0.5, 0.0), r));
        assert!((interior - 2.0 * r).abs() < 1e-14);
    }

    #[test]
    fn truncate_prefix() {
        let t = l_shape().truncate_at(1.5).unwrap();
        assert!((t.length() - 1.5).abs() < 1e-12);
        assert!(t.last().dist(p(1.0, 0.5)) < 1e-12);
    }
}
