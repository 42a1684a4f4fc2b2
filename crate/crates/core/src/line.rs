//! 3D lines: Plücker coordinates, the minimal orthonormal parameterization,
//! rigid transforms, two-view triangulation and the unit-sphere line residual.

use nalgebra::{Matrix3, Matrix4, Rotation3, SMatrix, UnitQuaternion, Vector2, Vector3, Vector4, Vector6};

use crate::camera::Bearing;
use crate::scalar::Real;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum LineError {
    #[error("line passes through the origin")]
    LineThroughOrigin,
    #[error("degenerate two-view geometry (observation planes nearly parallel)")]
    DegenerateGeometry,
    #[error("line passes through the camera centre")]
    DegenerateLine,
    #[error("invalid Plücker coordinates: {0}")]
    InvalidLine(&'static str),
}

pub type Matrix2x10<T> = SMatrix<T, 2, 10>;

/// Rigid body pose mapping camera coordinates into the world frame:
/// `x_world = q * x_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub q: UnitQuaternion<T>,
    pub t: Vector3<T>,
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Pose { q: UnitQuaternion::identity(), t: Vector3::zeros() }
    }

    pub fn new(q: UnitQuaternion<T>, t: Vector3<T>) -> Self {
        Pose { q, t }
    }

    pub fn rotation(&self) -> Matrix3<T> {
        self.q.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        let qi = self.q.inverse();
        Pose { q: qi, t: -(qi * self.t) }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose<T>) -> Self {
        Pose { q: self.q * other.q, t: self.q * other.t + self.t }
    }

    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.q * p + self.t
    }

    /// Right-multiplied rotation increment and additive translation:
    /// `R <- R Exp(delta[0..3])`, `t <- t + delta[3..6]`.
    pub fn retract(&self, delta: &Vector6<T>) -> Self {
        let dr = UnitQuaternion::from_scaled_axis(Vector3::new(delta[0], delta[1], delta[2]));
        Pose { q: self.q * dr, t: self.t + Vector3::new(delta[3], delta[4], delta[5]) }
    }
}

/// Plücker line `(n, d)` with moment `n = p x d`, stored with `|d| = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluckerLine<T: Real> {
    n: Vector3<T>,
    d: Vector3<T>,
}

impl<T: Real> PluckerLine<T> {
    pub fn new(n: Vector3<T>, d: Vector3<T>) -> Result<Self, LineError> {
        let dn = d.norm();
        if !(dn > T::zero()) || !dn.is_finite() || !n.norm().is_finite() {
            return Err(LineError::InvalidLine("direction must be non-zero and finite"));
        }
        if n.dot(&d).abs() > T::lit(1e-9) * n.norm() * dn {
            return Err(LineError::InvalidLine("moment and direction are not orthogonal"));
        }
        Ok(PluckerLine { n: n / dn, d: d / dn })
    }

    /// Line through two distinct points.
    pub fn through_points(a: &Vector3<T>, b: &Vector3<T>) -> Result<Self, LineError> {
        let d = b - a;
        Self::new(a.cross(&d), d)
    }

    pub fn moment(&self) -> &Vector3<T> {
        &self.n
    }

    pub fn direction(&self) -> &Vector3<T> {
        &self.d
    }

    pub fn distance_to_origin(&self) -> T {
        self.n.norm()
    }

    /// Point of the line closest to the origin.
    pub fn closest_point(&self) -> Vector3<T> {
        self.d.cross(&self.n)
    }

    /// Unit 6-vector `(n, d) / |(n, d)|`, for scale-free comparisons.
    pub fn normalized_coords(&self) -> Vector6<T> {
        let v = Vector6::new(self.n.x, self.n.y, self.n.z, self.d.x, self.d.y, self.d.z);
        v / v.norm()
    }
}

/// Minimal line parameterization: ZYX Euler angles `psi = (roll, pitch, yaw)`
/// of `U = [n/|n|, d/|d|, (n x d)/|n x d|] = Rz(yaw) Ry(pitch) Rx(roll)` and
/// `phi` with `(cos phi, sin phi) ~ (|n|, |d|)`, so the origin distance is
/// `cot phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthonormalLine<T: Real> {
    pub psi: Vector3<T>,
    pub phi: T,
}

impl<T: Real> OrthonormalLine<T> {
    pub fn rotation(&self) -> Rotation3<T> {
        Rotation3::from_euler_angles(self.psi.x, self.psi.y, self.psi.z)
    }

    /// Unscaled `(n, d) = (cos phi u1, sin phi u2)`.
    fn raw_plucker(&self) -> (Vector3<T>, Vector3<T>) {
        let u = self.rotation().into_inner();
        let (s, c) = self.phi.sin_cos();
        (u.column(0) * c, u.column(1) * s)
    }

    /// Additive update of the four parameters.
    pub fn plus(&self, delta: &Vector4<T>) -> Self {
        OrthonormalLine { psi: self.psi + Vector3::new(delta[0], delta[1], delta[2]), phi: self.phi + delta[3] }
    }

    /// True when pitch is within `tol` of +-pi/2 (ZYX gimbal lock).
    pub fn near_gimbal_lock(&self, tol: T) -> bool {
        (self.psi.y.abs() - T::frac_pi_2()).abs() < tol
    }
}

pub fn plucker_to_orthonormal<T: Real>(l: &PluckerLine<T>) -> Result<OrthonormalLine<T>, LineError> {
    let nn = l.n.norm();
    let dn = l.d.norm();
    if nn < T::lit(1e-12) * dn {
        return Err(LineError::LineThroughOrigin);
    }
    let u1 = l.n / nn;
    let u2 = l.d / dn;
    let u3 = u1.cross(&u2);
    let u = Matrix3::from_columns(&[u1, u2, u3 / u3.norm()]);
    let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(u).euler_angles();
    Ok(OrthonormalLine { psi: Vector3::new(roll, pitch, yaw), phi: dn.atan2(nn) })
}

pub fn orthonormal_to_plucker<T: Real>(o: &OrthonormalLine<T>) -> PluckerLine<T> {
    let (n, d) = o.raw_plucker();
    let s = d.norm();
    PluckerLine { n: n / s, d: d / s }
}

/// Re-expresses a line given in frame A in frame B, where `pose` maps A
/// points into B.
pub fn transform_line<T: Real>(pose: &Pose<T>, l: &PluckerLine<T>) -> PluckerLine<T> {
    let d = pose.q * l.d;
    let n = pose.q * l.n + pose.t.cross(&d);
    let s = d.norm();
    PluckerLine { n: n / s, d: d / s }
}

/// Geodesic-segment observation of a line: endpoint bearings in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineObservation<T: Real> {
    pub frame: usize,
    pub start: Bearing<T>,
    pub end: Bearing<T>,
}

impl<T: Real> LineObservation<T> {
    /// Normal of the plane through the camera centre and both endpoints.
    pub fn plane_normal(&self) -> Vector3<T> {
        self.start.as_vector().cross(self.end.as_vector())
    }
}

/// Intersects the two back-projected observation planes (world frame).
pub fn triangulate_line<T: Real>(
    obs1: &LineObservation<T>,
    pose1: &Pose<T>,
    obs2: &LineObservation<T>,
    pose2: &Pose<T>,
) -> Result<PluckerLine<T>, LineError> {
    let plane = |obs: &LineObservation<T>, pose: &Pose<T>| -> Result<Vector4<T>, LineError> {
        let n = obs.plane_normal();
        let norm = n.norm();
        if norm < T::lit(1e-12) {
            return Err(LineError::DegenerateGeometry);
        }
        let a = pose.q * (n / norm);
        Ok(Vector4::new(a.x, a.y, a.z, -a.dot(&pose.t)))
    };
    let p1 = plane(obs1, pose1)?;
    let p2 = plane(obs2, pose2)?;
    let a1 = p1.xyz();
    let a2 = p2.xyz();
    if a1.cross(&a2).norm().atan2(a1.dot(&a2).abs()) < T::lit(0.5).deg_to_rad() {
        return Err(LineError::DegenerateGeometry);
    }
    // dual Plücker matrix: upper-left block is -[d]x, last column is -n
    let dual: Matrix4<T> = p1 * p2.transpose() - p2 * p1.transpose();
    let d = Vector3::new(-dual[(2, 1)], -dual[(0, 2)], -dual[(1, 0)]);
    let n = Vector3::new(-dual[(0, 3)], -dual[(1, 3)], -dual[(2, 3)]);
    let s = d.norm();
    Ok(PluckerLine { n: n / s, d: d / s })
}

/// Moment of the world line in the camera frame of `pose` (camera -> world):
/// `n_c = R^T (n_w - t x d_w)`.
fn camera_moment<T: Real>(n_w: &Vector3<T>, d_w: &Vector3<T>, pose: &Pose<T>) -> Vector3<T> {
    pose.q.inverse() * (n_w - pose.t.cross(d_w))
}

/// Signed point-to-plane sines of both endpoints: `p . n_c / |n_c|`.
pub fn line_residual_signed<T: Real>(
    line: &PluckerLine<T>,
    pose: &Pose<T>,
    obs: &LineObservation<T>,
) -> Result<Vector2<T>, LineError> {
    let nc = camera_moment(&line.n, &line.d, pose);
    let norm = nc.norm();
    if norm <= T::lit(1e-12) {
        return Err(LineError::DegenerateLine);
    }
    let nh = nc / norm;
    Ok(Vector2::new(obs.start.as_vector().dot(&nh), obs.end.as_vector().dot(&nh)))
}

/// Line reprojection error on the unit sphere (absolute values).
pub fn line_residual<T: Real>(
    line: &PluckerLine<T>,
    pose: &Pose<T>,
    obs: &LineObservation<T>,
) -> Result<Vector2<T>, LineError> {
    line_residual_signed(line, pose, obs).map(|r| r.map(|v| v.abs()))
}

fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(T::zero(), -v.z, v.y, v.z, T::zero(), -v.x, -v.y, v.x, T::zero())
}

/// Partial derivatives of `U = Rz(yaw) Ry(pitch) Rx(roll)` w.r.t. roll,
/// pitch and yaw.
fn euler_derivatives<T: Real>(psi: &Vector3<T>) -> [Matrix3<T>; 3] {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), psi.x).into_inner();
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), psi.y).into_inner();
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), psi.z).into_inner();
    let ex = skew::<T>(&Vector3::x());
    let ey = skew::<T>(&Vector3::y());
    let ez = skew::<T>(&Vector3::z());
    [rz * ry * rx * ex, rz * ry * ey * rx, ez * rz * ry * rx]
}

/// Signed residual and its Jacobian with respect to
/// `[dtheta (3), dt (3), dpsi (3), dphi]`; the pose block follows
/// [`Pose::retract`]. Pose columns are zero when `pose_fixed` is set.
pub fn line_residual_jacobian<T: Real>(
    line: &OrthonormalLine<T>,
    pose: &Pose<T>,
    obs: &LineObservation<T>,
    pose_fixed: bool,
) -> Result<(Vector2<T>, Matrix2x10<T>), LineError> {
    let (n_w, d_w) = line.raw_plucker();
    let nc = camera_moment(&n_w, &d_w, pose);
    let norm = nc.norm();
    if norm <= T::lit(1e-12) {
        return Err(LineError::DegenerateLine);
    }
    let nh = nc / norm;
    let rt = pose.q.inverse().to_rotation_matrix().into_inner();

    let mut res = Vector2::zeros();
    let mut jac = Matrix2x10::zeros();
    // d n_c / d (pose, line)
    let dn_dtheta = skew(&nc);
    let dn_dt = rt * skew(&d_w);
    let u = line.rotation().into_inner();
    let (s, c) = line.phi.sin_cos();
    let du = euler_derivatives(&line.psi);
    let mut dn_dline = SMatrix::<T, 3, 4>::zeros();
    for (j, dui) in du.iter().enumerate() {
        let dn_w = dui.column(0) * c;
        let dd_w = dui.column(1) * s;
        let col = rt * (dn_w - pose.t.cross(&dd_w));
        dn_dline.set_column(j, &col);
    }
    let dn_w_phi = u.column(0) * (-s);
    let dd_w_phi = u.column(1) * c;
    dn_dline.set_column(3, &(rt * (dn_w_phi - pose.t.cross(&dd_w_phi))));

    for (i, p) in [obs.start.as_vector(), obs.end.as_vector()].into_iter().enumerate() {
        res[i] = p.dot(&nh);
        // d (p.n / |n|) / dn = (p - (p.nh) nh)^T / |n|
        let g = (p - nh * p.dot(&nh)) / norm;
        let gt = g.transpose();
        if !pose_fixed {
            jac.fixed_view_mut::<1, 3>(i, 0).copy_from(&(gt * dn_dtheta));
            jac.fixed_view_mut::<1, 3>(i, 3).copy_from(&(gt * dn_dt));
        }
        jac.fixed_view_mut::<1, 4>(i, 6).copy_from(&(gt * dn_dline));
    }
    Ok((res, jac))
}
