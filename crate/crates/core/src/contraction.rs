//! Scene contraction and ray decomposition.
//!
//! The piecewise-projective contraction maps all of R³ into `[-2, 2]³`. Inside
//! the unit cube it is the identity; outside, the dominant axis `j` (largest
//! `|x_j|`) selects one of six projective maps:
//!
//! ```text
//! y_k = x_k / |x_j|              for k != j
//! y_j = (2 - 1/|x_j|) sign(x_j)
//! ```
//!
//! Projective maps preserve lines, so a world-space ray becomes a sequence of
//! straight segments in contracted space, one per region it passes through.
//! [`segment_ray`] computes those segments analytically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Point3, Vec3};

/// Tolerance used when merging region-boundary crossings along a ray.
const CROSSING_EPS: f64 = 1e-12;

/// One of the seven regions of the contraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionId {
    Core,
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl RegionId {
    /// Dominant axis and its sign for the six outer regions.
    pub fn axis(self) -> Option<(usize, f64)> {
        match self {
            RegionId::Core => None,
            RegionId::PosX => Some((0, 1.0)),
            RegionId::NegX => Some((0, -1.0)),
            RegionId::PosY => Some((1, 1.0)),
            RegionId::NegY => Some((1, -1.0)),
            RegionId::PosZ => Some((2, 1.0)),
            RegionId::NegZ => Some((2, -1.0)),
        }
    }

    fn from_axis(axis: usize, positive: bool) -> RegionId {
        match (axis, positive) {
            (0, true) => RegionId::PosX,
            (0, false) => RegionId::NegX,
            (1, true) => RegionId::PosY,
            (1, false) => RegionId::NegY,
            (2, true) => RegionId::PosZ,
            (2, false) => RegionId::NegZ,
            _ => unreachable!("axis out of range"),
        }
    }
}

/// Axis with the largest magnitude; ties go to the lower axis index.
#[inline]
fn dominant_axis(x: Point3) -> usize {
    let a = x.abs();
    let mut j = 0;
    if a.y > a[j] {
        j = 1;
    }
    if a.z > a[j] {
        j = 2;
    }
    j
}

/// Region containing `x`. Ties on `|x_j|` resolve x before y before z; a zero
/// dominant coordinate cannot occur outside the core, so `+` wins only for
/// strictly positive values.
pub fn region_of(x: Point3) -> RegionId {
    if x.norm_inf() <= 1.0 {
        return RegionId::Core;
    }
    let j = dominant_axis(x);
    RegionId::from_axis(j, x[j] > 0.0)
}

/// Evaluates the projective map of `region` at `x`, whether or not `x` lies
/// inside that region. Used to get continuous segment endpoints on region
/// boundaries.
#[inline]
pub fn contract_in_region(x: Point3, region: RegionId) -> Point3 {
    match region.axis() {
        None => x,
        Some((j, sign)) => {
            let n = x[j].abs();
            let mut y = x / n;
            y[j] = sign * (2.0 - 1.0 / n);
            y
        }
    }
}

/// Piecewise-projective contraction into `[-2, 2]³`.
pub fn contract_pi(x: Point3) -> Point3 {
    contract_in_region(x, region_of(x))
}

/// Spherical contraction into the radius-2 ball. Kept as a comparison
/// baseline; it does not map lines to lines.
pub fn contract_spherical(x: Point3) -> Point3 {
    let n = x.norm();
    if n <= 1.0 {
        x
    } else {
        x * ((2.0 - 1.0 / n) / n)
    }
}

/// World-space ray with a unit direction and a parametric extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Point3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        if !origin.is_finite() || !direction.is_finite() {
            return Err(Error::InvalidRay("non-finite origin or direction".into()));
        }
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRay(format!(
                "direction must be unit length, got norm {}",
                direction.norm()
            )));
        }
        if !(t_near >= 0.0 && t_near < t_far && t_far.is_finite()) {
            return Err(Error::InvalidRay(format!(
                "need 0 <= t_near < t_far < inf, got [{t_near}, {t_far}]"
            )));
        }
        Ok(Self { origin, direction, t_near, t_far })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.direction * t
    }
}

/// A piece of a ray that stays inside one contraction region. In contracted
/// space it is the straight segment `start + s * direction`, `s ∈ [0, length]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySegment {
    pub region: RegionId,
    pub t0: f64,
    pub t1: f64,
    pub start: Point3,
    pub end: Point3,
    /// Unit direction in contracted space (zero for a degenerate image).
    pub direction: Vec3,
    /// Contracted length of the segment.
    pub length: f64,
}

impl RaySegment {
    #[inline]
    pub fn point_at(&self, s: f64) -> Point3 {
        self.start + self.direction * s
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentedRay {
    pub segments: Vec<RaySegment>,
}

impl SegmentedRay {
    /// Sum of contracted segment lengths.
    pub fn contracted_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Maps a cumulative contracted arc position to a point, walking the
    /// segments in order. Positions past the end clamp to the last point.
    pub fn point_at_arc(&self, s: f64) -> Option<Point3> {
        let mut rest = s;
        for seg in &self.segments {
            if rest <= seg.length {
                return Some(seg.point_at(rest.max(0.0)));
            }
            rest -= seg.length;
        }
        self.segments.last().map(|seg| seg.end)
    }
}

fn push_crossing(out: &mut Vec<f64>, t: f64, ray: &Ray) {
    if t.is_finite() && t > ray.t_near && t < ray.t_far {
        out.push(t);
    }
}

/// Splits a world ray at every contraction-region boundary it crosses and
/// returns the contracted image of each piece.
///
/// Candidate crossings come from the planes `x_j = ±1` and `x_i = ±x_j`;
/// the region of each sub-interval is decided at its midpoint and equal
/// neighbours are merged.
pub fn segment_ray(ray: &Ray) -> SegmentedRay {
    let o = ray.origin;
    let d = ray.direction;
    let mut ts = Vec::with_capacity(14);
    ts.push(ray.t_near);
    for j in 0..3 {
        if d[j] != 0.0 {
            push_crossing(&mut ts, (1.0 - o[j]) / d[j], ray);
            push_crossing(&mut ts, (-1.0 - o[j]) / d[j], ray);
        }
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let diff = d[i] - d[j];
        if diff != 0.0 {
            push_crossing(&mut ts, (o[j] - o[i]) / diff, ray);
        }
        let sum = d[i] + d[j];
        if sum != 0.0 {
            push_crossing(&mut ts, -(o[i] + o[j]) / sum, ray);
        }
    }
    ts.push(ray.t_far);
    ts.sort_by(|a, b| a.total_cmp(b));
    ts.dedup_by(|b, a| (*b - *a).abs() <= CROSSING_EPS);
    // dedup keeps the earlier value; make sure the far end survives exactly
    if let Some(last) = ts.last_mut() {
        *last = ray.t_far;
    }

    let mut pieces: Vec<(RegionId, f64, f64)> = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 - t0 <= 0.0 {
            continue;
        }
        let region = region_of(ray.at(0.5 * (t0 + t1)));
        match pieces.last_mut() {
            Some(last) if last.0 == region => last.2 = t1,
            _ => pieces.push((region, t0, t1)),
        }
    }

    let segments = pieces
        .into_iter()
        .map(|(region, t0, t1)| {
            let start = contract_in_region(ray.at(t0), region);
            let end = contract_in_region(ray.at(t1), region);
            let delta = end - start;
            let length = delta.norm();
            let direction = if length > 0.0 { delta / length } else { Vec3::ZERO };
            RaySegment { region, t0, t1, start, end, direction, length }
        })
        .collect();
    SegmentedRay { segments }
}

/// Slab-test intersection of the ray `origin + t * direction`, `t >= 0`, with
/// the closed box `[box_min, box_max]`. Returns `[t_enter, t_exit]` with
/// `t_enter` clamped to zero when the origin is inside the box.
pub fn ray_aabb(origin: Point3, direction: Vec3, box_min: Point3, box_max: Point3) -> Option<(f64, f64)> {
    debug_assert!(box_min.x < box_max.x && box_min.y < box_max.y && box_min.z < box_max.z);
    let mut t_enter = 0.0_f64;
    let mut t_exit = f64::INFINITY;
    for j in 0..3 {
        let o = origin[j];
        let d = direction[j];
        if d == 0.0 {
            if o < box_min[j] || o > box_max[j] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let mut a = (box_min[j] - o) * inv;
        let mut b = (box_max[j] - o) * inv;
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t_enter = t_enter.max(a);
        t_exit = t_exit.min(b);
        if t_enter > t_exit {
            return None;
        }
    }
    Some((t_enter, t_exit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm_inf() <= tol
    }

    #[test]
    fn contract_identity_and_hand_values() {
        let p = Vec3::new(0.5, -0.3, 0.2);
        assert_eq!(contract_pi(p), p);
        assert!(close(contract_pi(Vec3::new(4.0, 0.0, 0.0)), Vec3::new(1.75, 0.0, 0.0), 1e-12));
        assert!(close(contract_pi(Vec3::new(2.0, 4.0, 0.0)), Vec3::new(0.5, 1.75, 0.0), 1e-12));
        assert!(close(
            contract_pi(Vec3::new(-3.0, 1.0, 0.5)),
            Vec3::new(-5.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0),
            1e-12
        ));
    }

    #[test]
    fn unit_cube_surface_uses_identity() {
        let p = Vec3::new(1.0, -0.4, 1.0);
        assert_eq!(region_of(p), RegionId::Core);
        assert_eq!(contract_pi(p), p);
    }

    #[test]
    fn spherical_values() {
        assert_eq!(contract_spherical(Vec3::new(0.5, 0.0, 0.0)), Vec3::new(0.5, 0.0, 0.0));
        assert!(close(contract_spherical(Vec3::new(4.0, 0.0, 0.0)), Vec3::new(1.75, 0.0, 0.0), 1e-12));
        assert!(close(contract_spherical(Vec3::new(3.0, 4.0, 0.0)), Vec3::new(1.08, 1.44, 0.0), 1e-12));
    }

    #[test]
    fn region_ties_prefer_x() {
        assert_eq!(region_of(Vec3::new(0.2, 0.2, 0.2)), RegionId::Core);
        assert_eq!(region_of(Vec3::new(0.0, 5.0, 0.0)), RegionId::PosY);
        assert_eq!(region_of(Vec3::new(2.0, 2.0, 0.0)), RegionId::PosX);
        assert_eq!(region_of(Vec3::new(-2.0, 2.0, 2.0)), RegionId::NegX);
        assert_eq!(region_of(Vec3::new(0.0, -3.0, 3.0)), RegionId::NegY);
    }

    #[test]
    fn short_axis_ray_is_single_core_segment() {
        let ray = Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), 0.0, 0.5).unwrap();
        let seg = segment_ray(&ray);
        assert_eq!(seg.segments.len(), 1);
        let s = seg.segments[0];
        assert_eq!(s.region, RegionId::Core);
        assert_eq!(s.start, Vec3::ZERO);
        assert_eq!(s.end, Vec3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn axis_ray_splits_at_unit_cube() {
        let ray = Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), 0.0, 10.0).unwrap();
        let seg = segment_ray(&ray);
        assert_eq!(seg.segments.len(), 2);
        assert_eq!(seg.segments[0].region, RegionId::Core);
        assert_eq!((seg.segments[0].t0, seg.segments[0].t1), (0.0, 1.0));
        assert_eq!(seg.segments[1].region, RegionId::PosX);
        assert_eq!((seg.segments[1].t0, seg.segments[1].t1), (1.0, 10.0));
        assert!(close(seg.segments[1].end, Vec3::new(1.9, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn oblique_ray_visits_core_then_pos_x_then_pos_y() {
        let ray = Ray::new(Vec3::new(0.2, -0.9, 0.1), Vec3::new(1.0, 1.2, 0.0).normalized(), 0.0, 40.0).unwrap();
        let seg = segment_ray(&ray);
        let regions: Vec<_> = seg.segments.iter().map(|s| s.region).collect();
        assert_eq!(regions, vec![RegionId::Core, RegionId::PosX, RegionId::PosY]);
        for s in &seg.segments {
            for k in 1..=10 {
                let t = s.t0 + (s.t1 - s.t0) * k as f64 / 11.0;
                let p = contract_pi(ray.at(t));
                let rel = p - s.start;
                let along = rel.dot(s.direction);
                let off = (rel - s.direction * along).norm_inf();
                assert!(off < 1e-7 * s.length.max(1.0), "residual {off}");
            }
        }
    }

    #[test]
    fn aabb_examples() {
        let bmin = Vec3::new(1.0, -1.0, -1.0);
        let bmax = Vec3::new(2.0, 1.0, 1.0);
        assert_eq!(ray_aabb(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), bmin, bmax), Some((1.0, 2.0)));
        assert_eq!(ray_aabb(Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), bmin, bmax), None);
        let (_, exit) = ray_aabb(
            Vec3::splat(0.5),
            Vec3::new(1.0, 1.0, 0.0).normalized(),
            Vec3::ZERO,
            Vec3::splat(1.0),
        )
        .unwrap();
        assert!((exit - 0.5 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn aabb_box_behind_origin_misses() {
        let hit = ray_aabb(Vec3::new(3.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, -1.0, -1.0), Vec3::new(2.0, 1.0, 1.0));
        assert_eq!(hit, None);
    }

    #[test]
    fn invalid_rays_rejected() {
        assert!(Ray::new(Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0), 0.0, 1.0).is_err());
        assert!(Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), 1.0, 1.0).is_err());
        assert!(Ray::new(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 0.0, 1.0).is_err());
    }
}
