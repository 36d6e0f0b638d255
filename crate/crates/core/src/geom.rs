//! Gravity-aligned rigid placements and yaw-rotated box geometry.
//!
//! Everything in a scene is a box that may only rotate about the gravity
//! (z) axis, so a placement is a 3D translation plus a single yaw angle and
//! all footprint geometry happens in the horizontal plane.

// Resolves f64 math when the crate is built without std.
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use alloc::vec::Vec;

pub const PI: f64 = core::f64::consts::PI;
pub const TAU: f64 = core::f64::consts::TAU;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut r = (x + PI) % TAU;
    if r <= 0.0 {
        r += TAU;
    }
    r - PI
}

/// Rigid placement: translation plus rotation about the gravity axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Center position in meters.
    pub center: [f64; 3],
    /// Rotation about the z axis, radians in `(-pi, pi]`.
    pub yaw: f64,
}

impl Pose {
    pub fn new(center: [f64; 3], yaw: f64) -> Self {
        Pose {
            center,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Pose {
            center: [0.0; 3],
            yaw: 0.0,
        }
    }

    /// Rotates a vector by this pose's yaw (no translation).
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let (s, c) = (self.yaw.sin(), self.yaw.cos());
        [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
    }

    /// Maps a point from this pose's local frame to the world frame.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotate(p);
        [
            r[0] + self.center[0],
            r[1] + self.center[1],
            r[2] + self.center[2],
        ]
    }

    /// Composition `self ∘ other`: apply `other` in the local frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            center: self.apply(other.center),
            yaw: wrap_angle(self.yaw + other.yaw),
        }
    }

    /// Inverse placement, so that `p.compose(&p.inverse())` is the identity.
    pub fn inverse(&self) -> Pose {
        let inv_yaw = wrap_angle(-self.yaw);
        let (s, c) = (inv_yaw.sin(), inv_yaw.cos());
        let [x, y, z] = self.center;
        Pose {
            center: [-(c * x - s * y), -(s * x + c * y), -z],
            yaw: inv_yaw,
        }
    }

    /// Relative placement of `other` as seen from `self`.
    pub fn relative_to(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("box sizes must be strictly positive, got ({0}, {1}, {2})")]
    NonPositiveSize(OrderedF64, OrderedF64, OrderedF64),
}

/// f64 wrapper so size errors can derive `Eq` for test comparisons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderedF64(pub f64);
impl Eq for OrderedF64 {}
impl core::fmt::Display for OrderedF64 {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Axis-aligned box extents (width, depth, height) in the object frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxShape {
    /// Full sizes in meters: x extent, y extent, z extent.
    pub size: [f64; 3],
}

impl BoxShape {
    pub fn new(size: [f64; 3]) -> Result<Self, ShapeError> {
        if size.iter().all(|&s| s > 0.0) {
            Ok(BoxShape { size })
        } else {
            Err(ShapeError::NonPositiveSize(
                OrderedF64(size[0]),
                OrderedF64(size[1]),
                OrderedF64(size[2]),
            ))
        }
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }
}

/// A placed box: pose plus shape. The building block for all geometry tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedBox {
    pub pose: Pose,
    pub shape: BoxShape,
}

impl PlacedBox {
    pub fn bottom(&self) -> f64 {
        self.pose.center[2] - self.shape.size[2] * 0.5
    }

    pub fn top(&self) -> f64 {
        self.pose.center[2] + self.shape.size[2] * 0.5
    }

    /// Horizontal footprint corners in world coordinates, counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let hw = self.shape.size[0] * 0.5;
        let hd = self.shape.size[1] * 0.5;
        let local = [[hw, hd], [-hw, hd], [-hw, -hd], [hw, -hd]];
        let mut out = [[0.0; 2]; 4];
        for (o, l) in out.iter_mut().zip(local.iter()) {
            let p = self.pose.apply([l[0], l[1], 0.0]);
            *o = [p[0], p[1]];
        }
        out
    }

    /// World-frame axis-aligned bounds `(min, max)`.
    pub fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        let fp = self.footprint();
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for c in fp.iter() {
            for i in 0..2 {
                min[i] = min[i].min(c[i]);
                max[i] = max[i].max(c[i]);
            }
        }
        min[2] = self.bottom();
        max[2] = self.top();
        (min, max)
    }

    /// Whether a world point lies inside the box expanded by `margin`.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        let d = [
            p[0] - self.pose.center[0],
            p[1] - self.pose.center[1],
            p[2] - self.pose.center[2],
        ];
        let (s, c) = ((-self.pose.yaw).sin(), (-self.pose.yaw).cos());
        let local = [c * d[0] - s * d[1], s * d[0] + c * d[1], d[2]];
        (0..3).all(|i| local[i].abs() <= self.shape.size[i] * 0.5 + margin)
    }

    /// Exact intersection volume of two yaw-rotated boxes: convex footprint
    /// intersection area times the vertical interval overlap.
    pub fn intersection_volume(&self, other: &PlacedBox) -> f64 {
        let dz = self.top().min(other.top()) - self.bottom().max(other.bottom());
        if dz <= 0.0 {
            return 0.0;
        }
        footprint_intersection_area(&self.footprint(), &other.footprint()) * dz
    }

    pub fn volume(&self) -> f64 {
        self.shape.volume()
    }
}

/// Area of the intersection of two convex counter-clockwise polygons.
pub fn footprint_intersection_area(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> f64 {
    let mut poly: Vec<[f64; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if poly.is_empty() {
            return 0.0;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        poly = clip_halfplane(&poly, a, b);
    }
    polygon_area(&poly)
}

// Sutherland-Hodgman step: keep the side of (a, b) that is to the left,
// which is the interior for counter-clockwise clip polygons. Points exactly
// on the edge count as inside so that clipping a polygon by itself is exact.
fn clip_halfplane(poly: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let mut out = Vec::with_capacity(poly.len() + 2);
    let n = poly.len();
    for i in 0..n {
        let cur = poly[i];
        let nxt = poly[(i + 1) % n];
        let sc = side(cur);
        let sn = side(nxt);
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0) {
            let t = sc / (sc - sn);
            out.push([
                cur[0] + t * (nxt[0] - cur[0]),
                cur[1] + t * (nxt[1] - cur[1]),
            ]);
        }
    }
    out
}

/// Shoelace area; input need not be closed.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    let n = poly.len();
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    (acc * 0.5).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat_of(p: &Pose) -> [[f64; 4]; 4] {
        let (s, c) = (p.yaw.sin(), p.yaw.cos());
        [
            [c, -s, 0.0, p.center[0]],
            [s, c, 0.0, p.center[1]],
            [0.0, 0.0, 1.0, p.center[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    fn mat_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    // Gauss-Jordan inversion of a homogeneous transform, used as an oracle
    // for Pose::inverse.
    fn mat_inv(m: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut a = *m;
        let mut inv = [[0.0; 4]; 4];
        for (i, row) in inv.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            inv.swap(col, pivot);
            let d = a[col][col];
            for j in 0..4 {
                a[col][j] /= d;
                inv[col][j] /= d;
            }
            for i in 0..4 {
                if i != col {
                    let f = a[i][col];
                    for j in 0..4 {
                        a[i][j] -= f * a[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
        inv
    }

    fn pose_close(a: &Pose, b: &Pose, tol: f64) -> bool {
        let dy = wrap_angle(a.yaw - b.yaw).abs();
        a.center
            .iter()
            .zip(b.center.iter())
            .all(|(x, y)| (x - y).abs() < tol)
            && dy < tol
    }

    #[test]
    fn identity_composes_trivially() {
        let p = Pose::new([1.5, -2.0, 0.3], 0.7);
        assert_eq!(Pose::identity().compose(&p), p);
        assert!(pose_close(&p.compose(&p.inverse()), &Pose::identity(), 1e-12));
    }

    #[test]
    fn compose_matches_matrix_oracle() {
        let a = Pose::new([1.0, 0.0, 0.0], PI / 2.0);
        let b = Pose::new([1.0, 0.0, 0.0], 0.0);
        let ab = a.compose(&b);
        assert!((ab.center[0] - 1.0).abs() < 1e-12);
        assert!((ab.center[1] - 1.0).abs() < 1e-12);
        assert!((ab.center[2]).abs() < 1e-12);
        assert!((ab.yaw - PI / 2.0).abs() < 1e-12);

        let m = mat_mul(&mat_of(&a), &mat_of(&b));
        assert!((m[0][3] - ab.center[0]).abs() < 1e-12);
        assert!((m[1][3] - ab.center[1]).abs() < 1e-12);
    }

    #[test]
    fn pure_translation_inverse() {
        let p = Pose::new([2.0, 0.0, 0.0], 0.0);
        let inv = p.inverse();
        assert_eq!(inv.center, [-2.0, 0.0, 0.0]);
        assert_eq!(inv.yaw, 0.0);
        assert_eq!(Pose::identity().inverse(), Pose::identity());
    }

    #[test]
    fn rejects_non_positive_sizes() {
        assert!(BoxShape::new([1.0, 0.0, 1.0]).is_err());
        assert!(BoxShape::new([1.0, 1.0, -2.0]).is_err());
        assert!(BoxShape::new([0.3, 0.2, 0.1]).is_ok());
    }

    #[test]
    fn self_clip_is_exact() {
        let b = PlacedBox {
            pose: Pose::new([0.4, -0.7, 0.2], 0.9),
            shape: BoxShape::new([1.2, 0.8, 0.5]).unwrap(),
        };
        let fp = b.footprint();
        let area = footprint_intersection_area(&fp, &fp);
        assert_eq!(area, polygon_area(&fp));
        assert!((polygon_area(&fp) - 1.2 * 0.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn inverse_roundtrip(
            x in -5.0..5.0f64, y in -5.0..5.0f64, z in -2.0..2.0f64,
            yaw in -8.0..8.0f64,
        ) {
            let p = Pose::new([x, y, z], yaw);
            let id = p.inverse().compose(&p);
            prop_assert!(pose_close(&id, &Pose::identity(), 1e-9));

            // Oracle: invert the homogeneous matrix directly.
            let inv = p.inverse();
            let oracle = mat_inv(&mat_of(&p));
            prop_assert!((oracle[0][3] - inv.center[0]).abs() < 1e-9);
            prop_assert!((oracle[1][3] - inv.center[1]).abs() < 1e-9);
            prop_assert!((oracle[2][3] - inv.center[2]).abs() < 1e-9);
        }

        #[test]
        fn compose_is_associative(
            vals in proptest::array::uniform12(-4.0..4.0f64),
        ) {
            let p = |i: usize| Pose::new([vals[i], vals[i + 1], vals[i + 2]], vals[i + 3] * 0.7);
            let (a, b, c) = (p(0), p(4), p(8));
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(pose_close(&l, &r, 1e-9));
        }

        #[test]
        fn wrap_is_idempotent(x in -50.0..50.0f64) {
            let w = wrap_angle(x);
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w), w);
        }
    }
}
