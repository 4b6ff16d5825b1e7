//! Planar geometry shared by every stage: vectors, arc-length parameterized
//! polylines, segment distances and ray intersection.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    /// Unit vector at `angle` radians from +x.
    #[inline]
    pub fn from_angle(angle: T) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-D cross product; positive when `o` is counter-clockwise of `self`.
    #[inline]
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn dist(self, o: Self) -> T {
        (self - o).norm()
    }

    #[inline]
    pub fn angle(self) -> T {
        self.y.atan2(self.x)
    }

    /// Counter-clockwise perpendicular.
    #[inline]
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self * (T::one() / n))
        } else {
            None
        }
    }

    pub fn rotated(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    #[inline]
    pub fn lerp(self, o: Self, u: T) -> Self {
        self + (o - self) * u
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn cast<U: Scalar>(self) -> Vec2<U> {
        Vec2::new(U::of(self.x.to_f64_lossy()), U::of(self.y.to_f64_lossy()))
    }
}

impl<T: Scalar> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> AddAssign for Vec2<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x = self.x + o.x;
        self.y = self.y + o.y;
    }
}

impl<T: Scalar> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> SubAssign for Vec2<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        self.x = self.x - o.x;
        self.y = self.y - o.y;
    }
}

impl<T: Scalar> Mul<T> for Vec2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, k: T) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

impl<T: Scalar> Neg for Vec2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

// Points are stored as `[x, y]` pairs in files.
impl<T: Serialize> Serialize for Vec2<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [&self.x, &self.y].serialize(serializer)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Vec2<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y] = <[T; 2]>::deserialize(deserializer)?;
        Ok(Vec2 { x, y })
    }
}

/// Closest point on segment `[a, b]` to `p`, returned as the clamped segment parameter in `[0, 1]`.
#[inline]
pub fn segment_param<T: Scalar>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> T {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq <= T::zero() {
        return T::zero();
    }
    ((p - a).dot(ab) / len_sq).max(T::zero()).min(T::one())
}

#[inline]
pub fn point_segment_distance<T: Scalar>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> T {
    let u = segment_param(p, a, b);
    p.dist(a.lerp(b, u))
}

/// Range along the ray `origin + r * dir` (unit `dir`) at which it first meets segment `[a, b]`.
pub fn ray_segment_intersection<T: Scalar>(
    origin: Vec2<T>,
    dir: Vec2<T>,
    a: Vec2<T>,
    b: Vec2<T>,
) -> Option<T> {
    let e = b - a;
    let denom = dir.cross(e);
    let w = a - origin;
    let eps = T::epsilon() * T::of(64.0);
    if denom.abs() <= eps * e.norm() {
        // Parallel. A collinear overlap is hit at its nearest endpoint ahead of the origin.
        if w.cross(dir).abs() > eps * (T::one() + w.norm()) {
            return None;
        }
        let ra = (a - origin).dot(dir);
        let rb = (b - origin).dot(dir);
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        return if hi < T::zero() {
            None
        } else {
            Some(lo.max(T::zero()))
        };
    }
    let r = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    if r >= T::zero() && u >= T::zero() && u <= T::one() {
        Some(r)
    } else {
        None
    }
}

/// Even-odd point-in-polygon test (boundary points may go either way).
pub fn point_in_polygon<T: Scalar>(p: Vec2<T>, poly: &[Vec2<T>]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.y > p.y) != (pj.y > p.y) {
            let x_cross = pj.x + (p.y - pj.y) * (pi.x - pj.x) / (pi.y - pj.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// True when the polygon is convex (either winding), with no repeated vertices.
pub fn is_convex<T: Scalar>(poly: &[Vec2<T>]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0i8;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        if a == b {
            return false;
        }
        let z = (b - a).cross(c - b);
        let s = if z > T::zero() {
            1
        } else if z < T::zero() {
            -1
        } else {
            0
        };
        if s != 0 {
            if sign != 0 && s != sign {
                return false;
            }
            sign = s;
        }
    }
    sign != 0
}

/// Corners of an oriented box, counter-clockwise.
pub fn obb_corners<T: Scalar>(
    center: Vec2<T>,
    heading: T,
    half_length: T,
    half_width: T,
) -> [Vec2<T>; 4] {
    let f = Vec2::from_angle(heading);
    let l = f.perp();
    [
        center + f * half_length - l * half_width,
        center + f * half_length + l * half_width,
        center - f * half_length + l * half_width,
        center - f * half_length - l * half_width,
    ]
}

/// Result of projecting a point onto a [`Polyline`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    /// Arc length of the nearest point.
    pub s: T,
    /// Signed perpendicular offset, positive to the left of the direction of travel.
    pub lateral: T,
    pub point: Vec2<T>,
    pub distance: T,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolylineError {
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("consecutive polyline points {0} and {1} coincide")]
    RepeatedPoint(usize, usize),
    #[error("polyline point {0} is not finite")]
    NonFinite(usize),
}

/// Ordered 2-D points with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline<T> {
    points: Vec<Vec2<T>>,
    s: Vec<T>,
}

impl<T: Scalar> Polyline<T> {
    pub fn new(points: Vec<Vec2<T>>) -> Result<Self, PolylineError> {
        if points.len() < 2 {
            return Err(PolylineError::TooFewPoints(points.len()));
        }
        let mut s = Vec::with_capacity(points.len());
        s.push(T::zero());
        for i in 0..points.len() {
            if !points[i].is_finite() {
                return Err(PolylineError::NonFinite(i));
            }
            if i > 0 {
                let d = points[i].dist(points[i - 1]);
                if d <= T::zero() {
                    return Err(PolylineError::RepeatedPoint(i - 1, i));
                }
                s.push(s[i - 1] + d);
            }
        }
        Ok(Self { points, s })
    }

    pub fn points(&self) -> &[Vec2<T>] {
        &self.points
    }

    /// Cumulative arc length at each vertex.
    pub fn arc_lengths(&self) -> &[T] {
        &self.s
    }

    pub fn length(&self) -> T {
        *self.s.last().expect("non-empty")
    }

    fn segment_at(&self, s: T) -> usize {
        // last vertex index with s_i <= s, limited to a valid segment start
        let n = self.points.len();
        match self
            .s
            .binary_search_by(|v| v.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: T) -> Vec2<T> {
        let s = s.max(T::zero()).min(self.length());
        let i = self.segment_at(s);
        let seg = self.s[i + 1] - self.s[i];
        let u = ((s - self.s[i]) / seg).max(T::zero()).min(T::one());
        self.points[i].lerp(self.points[i + 1], u)
    }

    /// Unit tangent of the segment containing arc length `s`.
    pub fn tangent_at(&self, s: T) -> Vec2<T> {
        let s = s.max(T::zero()).min(self.length());
        let i = self.segment_at(s);
        let d = self.points[i + 1] - self.points[i];
        d * (T::one() / d.norm())
    }

    pub fn heading_at(&self, s: T) -> T {
        self.tangent_at(s).angle()
    }

    pub fn project(&self, p: Vec2<T>) -> Projection<T> {
        let mut best: Option<Projection<T>> = None;
        for i in 0..self.points.len() - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let u = segment_param(p, a, b);
            let q = a.lerp(b, u);
            let d = p.dist(q);
            if best.is_none_or(|bp| d < bp.distance) {
                let seg_len = self.s[i + 1] - self.s[i];
                let t = (b - a) * (T::one() / seg_len);
                best = Some(Projection {
                    s: self.s[i] + u * seg_len,
                    lateral: t.cross(p - q),
                    point: q,
                    distance: d,
                    segment: i,
                });
            }
        }
        best.expect("polyline has a segment")
    }

    pub fn distance(&self, p: Vec2<T>) -> T {
        self.points
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(T::infinity(), T::min)
    }

    /// Resample at arc-length spacing `step`, always including both ends.
    pub fn sample(&self, step: T) -> Vec<(T, Vec2<T>)> {
        let len = self.length();
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let s = T::of(k as f64) * step;
            if s >= len {
                break;
            }
            out.push((s, self.point_at(s)));
            k += 1;
        }
        out.push((len, self.point_at(len)));
        out
    }

    /// Same polyline continued in a straight line past its last vertex by `extra` meters.
    pub fn extended(&self, extra: T) -> Self {
        if extra <= T::zero() {
            return self.clone();
        }
        let mut points = self.points.clone();
        let last = *points.last().expect("non-empty");
        points.push(last + self.tangent_at(self.length()) * extra);
        Self::new(points).expect("extension keeps points distinct")
    }

    pub fn cast<U: Scalar>(&self) -> Polyline<U> {
        Polyline {
            points: self.points.iter().map(|p| p.cast()).collect(),
            s: self.s.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }
}

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    let pi = T::of(std::f64::consts::PI);
    let two_pi = pi + pi;
    let mut r = (a + pi) % two_pi;
    if r < T::zero() {
        r = r + two_pi;
    }
    r - pi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight() -> Polyline<f64> {
        Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)]).unwrap()
    }

    #[test]
    fn projection_on_start_is_origin() {
        let p = straight().project(Vec2::new(0.0, 0.0));
        assert_eq!((p.s, p.lateral), (0.0, 0.0));
    }

    #[test]
    fn projection_left_of_midpoint() {
        let p = straight().project(Vec2::new(5.0, 2.0));
        assert!((p.s - 5.0).abs() < 1e-12);
        assert!((p.lateral - 2.0).abs() < 1e-12);
        let r = straight().project(Vec2::new(5.0, -2.0));
        assert!((r.lateral + 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_clamps_past_the_ends() {
        let line = straight();
        assert_eq!(line.project(Vec2::new(-3.0, 1.0)).s, 0.0);
        assert_eq!(line.project(Vec2::new(14.0, 1.0)).s, 10.0);
    }

    #[test]
    fn rejects_degenerate_polylines() {
        assert_eq!(
            Polyline::new(vec![Vec2::new(1.0, 1.0)]).unwrap_err(),
            PolylineError::TooFewPoints(1)
        );
        assert_eq!(
            Polyline::new(vec![Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)]).unwrap_err(),
            PolylineError::RepeatedPoint(0, 1)
        );
    }

    #[test]
    fn point_at_interpolates_across_corners() {
        let l = Polyline::<f64>::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(4.0, 3.0),
        ])
        .unwrap();
        assert_eq!(l.length(), 7.0);
        let p = l.point_at(5.5);
        assert!((p.x - 4.0).abs() < 1e-12 && (p.y - 1.5).abs() < 1e-12);
        assert!((l.heading_at(6.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn ray_hits_near_face() {
        let r = ray_segment_intersection(
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(9.0, -1.0),
            Vec2::new(9.0, 1.0),
        );
        assert_eq!(r, Some(9.0));
        let miss = ray_segment_intersection(
            Vec2::new(0.0, 0.0),
            Vec2::new(-1.0, 0.0),
            Vec2::new(9.0, -1.0),
            Vec2::new(9.0, 1.0),
        );
        assert_eq!(miss, None);
    }

    #[test]
    fn convexity() {
        let sq = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        assert!(is_convex(&sq));
        let dart = [
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 1.0),
            Vec2::new(0.0, 2.0),
            Vec2::new(0.5, 1.0),
        ];
        assert!(!is_convex(&dart));
        assert!(point_in_polygon(Vec2::new(0.5, 0.5), &sq));
        assert!(!point_in_polygon(Vec2::new(1.5, 0.5), &sq));
    }

    #[test]
    fn wraps_angles() {
        use std::f64::consts::PI;
        assert!((wrap_angle(3.0 * PI) + PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5f64) + 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn f32_polyline_matches_f64() {
        let l32: Polyline<f32> = straight().cast();
        let p = l32.project(Vec2::new(5.0f32, 2.0));
        assert!((p.s - 5.0).abs() < 1e-6 && (p.lateral - 2.0).abs() < 1e-6);
    }
}
