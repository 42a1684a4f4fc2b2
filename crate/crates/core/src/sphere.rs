//! Great circles and geodesic arcs on the unit sphere.

use nalgebra::{DMatrix, Matrix3, Unit, UnitQuaternion, Vector3};

use crate::camera::{Bearing, CameraError, CameraModel, PixelPoint};
use crate::scalar::Real;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("bearing is parallel to the circle normal")]
    PoleSingularity,
    #[error("nearest circle point lies outside the field of view")]
    NearestOutOfFov,
    #[error("invalid geodesic segment: {0}")]
    InvalidSegment(&'static str),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Great circle given by the unit normal of its plane. `k` and `-k` describe
/// the same circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreatCircle<T: Real> {
    k: Vector3<T>,
}

impl<T: Real> GreatCircle<T> {
    pub fn from_normal(k: Vector3<T>) -> Option<Self> {
        let n = k.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return None;
        }
        Some(GreatCircle { k: k / n })
    }

    /// Circle through two non-parallel bearings.
    pub fn through(a: &Bearing<T>, b: &Bearing<T>) -> Option<Self> {
        let k = a.as_vector().cross(b.as_vector());
        if k.norm() < T::lit(1e-12) {
            return None;
        }
        Self::from_normal(k)
    }

    pub fn normal(&self) -> &Vector3<T> {
        &self.k
    }

    /// Normal with a deterministic sign (largest component positive).
    pub fn canonical_normal(&self) -> Vector3<T> {
        let i = self.k.iamax();
        if self.k[i] < T::zero() {
            -self.k
        } else {
            self.k
        }
    }

    /// Angle between the two circle planes, in `[0, pi/2]`.
    pub fn angle_to(&self, other: &GreatCircle<T>) -> T {
        let c = self.k.dot(&other.k).abs();
        let s = self.k.cross(&other.k).norm();
        s.atan2(c)
    }

    /// Signed sine of the angular distance of `b` from the circle plane.
    pub fn offset(&self, b: &Bearing<T>) -> T {
        self.k.dot(b.as_vector())
    }

    pub fn rotated(&self, r: &UnitQuaternion<T>) -> Self {
        GreatCircle { k: r * self.k }
    }
}

/// Shorter great-circle arc between two bearings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicSegment<T: Real> {
    pub circle: GreatCircle<T>,
    pub start: Bearing<T>,
    pub end: Bearing<T>,
}

impl<T: Real> GeodesicSegment<T> {
    /// Segment between two bearings, circle taken from their cross product.
    pub fn between(start: Bearing<T>, end: Bearing<T>) -> Result<Self, GeometryError> {
        let circle = GreatCircle::through(&start, &end)
            .ok_or(GeometryError::InvalidSegment("endpoints are parallel or antipodal"))?;
        Ok(GeodesicSegment { circle, start, end })
    }

    /// Segment on a given circle; endpoints must lie on it.
    pub fn on_circle(circle: GreatCircle<T>, start: Bearing<T>, end: Bearing<T>) -> Result<Self, GeometryError> {
        let tol = T::lit(1e-6);
        if circle.offset(&start).abs() > tol || circle.offset(&end).abs() > tol {
            return Err(GeometryError::InvalidSegment("endpoint off the circle"));
        }
        let len = start.angle_to(&end);
        if !(len > T::zero()) || len >= T::pi() - T::lit(1e-12) {
            return Err(GeometryError::InvalidSegment("arc length must lie in (0, pi)"));
        }
        Ok(GeodesicSegment { circle, start, end })
    }

    pub fn reversed(&self) -> Self {
        GeodesicSegment { circle: self.circle, start: self.end, end: self.start }
    }

    pub fn rotated(&self, r: &UnitQuaternion<T>) -> Self {
        GeodesicSegment {
            circle: self.circle.rotated(r),
            start: Bearing::new_unchecked(r * self.start.as_vector()),
            end: Bearing::new_unchecked(r * self.end.as_vector()),
        }
    }

    /// Unit rotation axis that carries `start` towards `end`.
    fn travel_axis(&self) -> Vector3<T> {
        let k = self.circle.normal();
        if k.dot(&self.start.as_vector().cross(self.end.as_vector())) >= T::zero() {
            *k
        } else {
            -*k
        }
    }

    /// Point at arc parameter `t` (radians from `start`).
    pub fn point_at(&self, t: T) -> Bearing<T> {
        let axis = Unit::new_unchecked(self.travel_axis());
        let q = UnitQuaternion::from_axis_angle(&axis, t);
        Bearing::from_vector(q * self.start.as_vector()).expect("rotation keeps unit norm")
    }

    /// `n` evenly spaced points including both endpoints (`n >= 2`).
    pub fn sample(&self, n: usize) -> Vec<Bearing<T>> {
        let len = arc_length(self);
        let last = n.max(2) - 1;
        (0..=last)
            .map(|i| {
                if i == last {
                    self.end
                } else {
                    self.point_at(len * T::from_usize(i).unwrap() / T::from_usize(last).unwrap())
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult<T: Real> {
    pub circle: GreatCircle<T>,
    pub rms_angular_residual: T,
    pub n_points: usize,
}

fn smallest_right_singular<T: Real>(m: DMatrix<T>) -> Result<(Vector3<T>, T, T), GeometryError> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateInput("svd failed"))?;
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].partial_cmp(&sv[b]).unwrap_or(std::cmp::Ordering::Equal));
    let smallest = order[0];
    let k = Vector3::new(v_t[(smallest, 0)], v_t[(smallest, 1)], v_t[(smallest, 2)]);
    let largest = sv[order[order.len() - 1]];
    let middle = if sv.len() >= 3 { sv[order[1]] } else { T::zero() };
    Ok((k, middle, largest))
}

/// Least-squares great circle through bearings: the unit `k` minimising
/// `sum (p_i . k)^2`.
pub fn fit_great_circle<T: Real>(points: &[Bearing<T>]) -> Result<FitResult<T>, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::DegenerateInput("need at least two points"));
    }
    let n = points.len();
    // Pad to three rows so the SVD always yields a full 3x3 V.
    let rows = n.max(3);
    let mut a = DMatrix::<T>::zeros(rows, 3);
    for (i, p) in points.iter().enumerate() {
        let v = p.as_vector();
        a[(i, 0)] = v.x;
        a[(i, 1)] = v.y;
        a[(i, 2)] = v.z;
    }
    let (k, middle, largest) = smallest_right_singular(a)?;
    if !(largest > T::zero()) || middle <= largest * T::lit(1e-9) {
        return Err(GeometryError::DegenerateInput("points span a single direction"));
    }
    let circle = GreatCircle::from_normal(k).ok_or(GeometryError::DegenerateInput("null normal"))?;
    Ok(FitResult { rms_angular_residual: rms_offset(&circle, points), circle, n_points: n })
}

pub(crate) fn rms_offset<T: Real>(c: &GreatCircle<T>, points: &[Bearing<T>]) -> T {
    let mut acc = T::zero();
    for p in points {
        let d = c.offset(p);
        acc += d * d;
    }
    (acc / T::from_usize(points.len()).unwrap()).sqrt()
}

/// Running scatter matrix `sum p p^T` for repeated circle fits over a growing
/// point set. The minimiser of `sum (p.k)^2` is the smallest singular vector
/// of the scatter matrix, identical to the stacked-matrix SVD.
#[derive(Debug, Clone)]
pub struct ScatterAccumulator<T: Real> {
    m: Matrix3<T>,
    count: usize,
}

impl<T: Real> Default for ScatterAccumulator<T> {
    fn default() -> Self {
        ScatterAccumulator { m: Matrix3::zeros(), count: 0 }
    }
}

impl<T: Real> ScatterAccumulator<T> {
    pub fn add(&mut self, b: &Bearing<T>) {
        let v = b.as_vector();
        self.m += v * v.transpose();
        self.count += 1;
    }

    pub fn remove(&mut self, b: &Bearing<T>) {
        let v = b.as_vector();
        self.m -= v * v.transpose();
        self.count -= 1;
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn fit(&self) -> Result<GreatCircle<T>, GeometryError> {
        if self.count < 2 {
            return Err(GeometryError::DegenerateInput("need at least two points"));
        }
        let svd = self.m.svd(false, true);
        let v_t = svd.v_t.ok_or(GeometryError::DegenerateInput("svd failed"))?;
        let sv = svd.singular_values;
        let (mut lo, mut hi) = (0, 0);
        for i in 1..3 {
            if sv[i] < sv[lo] {
                lo = i;
            }
            if sv[i] > sv[hi] {
                hi = i;
            }
        }
        let mid = 3 - lo - hi;
        // singular values of the scatter matrix are squares of those of the stack
        if lo == hi || sv[mid] <= sv[hi] * T::lit(1e-18) {
            return Err(GeometryError::DegenerateInput("points span a single direction"));
        }
        GreatCircle::from_normal(Vector3::new(v_t[(lo, 0)], v_t[(lo, 1)], v_t[(lo, 2)]))
            .ok_or(GeometryError::DegenerateInput("null normal"))
    }
}

/// Closest point of the circle to `b`: `k x normalize(b x k)`.
pub fn nearest_on_circle<T: Real>(b: &Bearing<T>, c: &GreatCircle<T>) -> Result<Bearing<T>, GeometryError> {
    let k = c.normal();
    let bk = b.as_vector().cross(k);
    let n = bk.norm();
    if n <= T::lit(1e-9) {
        return Err(GeometryError::PoleSingularity);
    }
    Bearing::from_vector(k.cross(&(bk / n))).ok_or(GeometryError::PoleSingularity)
}

/// Image distance from a pixel to the projected great circle, measured to the
/// projection of the nearest point on the sphere.
pub fn pixel_to_curve_distance<T: Real>(
    model: &CameraModel<T>,
    p: &PixelPoint<T>,
    c: &GreatCircle<T>,
) -> Result<T, GeometryError> {
    let b = model.unproject(p)?;
    bearing_to_curve_distance(model, &b, p, c)
}

/// Same as [`pixel_to_curve_distance`] when the bearing of `p` is already known.
pub fn bearing_to_curve_distance<T: Real>(
    model: &CameraModel<T>,
    b: &Bearing<T>,
    p: &PixelPoint<T>,
    c: &GreatCircle<T>,
) -> Result<T, GeometryError> {
    let nearest = nearest_on_circle(b, c)?;
    if !model.is_valid_bearing(&nearest) {
        return Err(GeometryError::NearestOutOfFov);
    }
    let q = model.project(&nearest)?;
    Ok(model.pixel_distance(&q, p))
}

pub fn arc_length<T: Real>(s: &GeodesicSegment<T>) -> T {
    s.start.angle_to(&s.end)
}

/// Cuts `s` into consecutive sub-arcs of `m_deg` degrees; the last one takes
/// the remainder.
pub fn slice_segment<T: Real>(s: &GeodesicSegment<T>, m_deg: T) -> Vec<GeodesicSegment<T>> {
    assert!(m_deg > T::zero(), "slice angle must be positive");
    let len = arc_length(s);
    let step = m_deg.deg_to_rad();
    let ratio = len / step - T::lit(1e-9);
    let n = ratio.ceil().max(T::one()).to_usize().unwrap_or(1).max(1);
    if n == 1 {
        return vec![*s];
    }
    let mut cuts = Vec::with_capacity(n + 1);
    cuts.push(s.start);
    for i in 1..n {
        cuts.push(s.point_at(step * T::from_usize(i).unwrap()));
    }
    cuts.push(s.end);
    cuts.windows(2)
        .map(|w| GeodesicSegment { circle: s.circle, start: w[0], end: w[1] })
        .collect()
}

/// Fraction of `target` covered by the projection of `source` onto the
/// circle of `target`.
pub fn covered_fraction<T: Real>(source: &GeodesicSegment<T>, target: &GeodesicSegment<T>) -> T {
    let len = arc_length(target);
    if !(len > T::zero()) {
        return T::zero();
    }
    let u = *target.start.as_vector();
    let w = target.travel_axis().cross(&u);
    let angle = |b: &Bearing<T>| b.as_vector().dot(&w).atan2(b.as_vector().dot(&u));
    let (a, b) = match (
        nearest_on_circle(&source.start, &target.circle),
        nearest_on_circle(&source.end, &target.circle),
    ) {
        (Ok(a), Ok(b)) => (angle(&a), angle(&b)),
        _ => return T::zero(),
    };
    let mut d = b - a;
    while d > T::pi() {
        d -= T::two_pi();
    }
    while d <= -T::pi() {
        d += T::two_pi();
    }
    let lo = a.min(a + d);
    let hi = a.max(a + d);
    let mut covered = T::zero();
    for shift in [-T::two_pi(), T::zero(), T::two_pi()] {
        let l = (lo + shift).max(T::zero());
        let h = (hi + shift).min(len);
        if h > l {
            covered += h - l;
        }
    }
    (covered / len).min(T::one())
}

/// Symmetric overlap ratio of two roughly co-circular arcs, in `[0, 1]`.
///
/// Zero when the circle planes differ by more than 45 degrees.
pub fn segment_overlap<T: Real>(s1: &GeodesicSegment<T>, s2: &GeodesicSegment<T>) -> T {
    if s1.circle.angle_to(&s2.circle) >= T::frac_pi_4() {
        return T::zero();
    }
    covered_fraction(s1, s2).min(covered_fraction(s2, s1))
}
