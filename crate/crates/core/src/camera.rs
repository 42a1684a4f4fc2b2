//! Pixel <-> unit-sphere mappings for the supported camera families.
//!
//! Every model maps a pixel to a [`Bearing`] (a unit vector in the camera
//! frame, optical axis `+z`) and back. Field-of-view limits are expressed as a
//! band of polar angles measured from `+z`, which covers both ordinary
//! fisheye cones and the annular band of panoramic annular lenses.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum CameraError {
    #[error("bearing outside the camera field of view")]
    BearingOutOfFov,
    #[error("projection is singular for this bearing")]
    ProjectionSingularity,
    #[error("pixel outside the valid image domain")]
    PixelOutOfDomain,
    #[error("camera config parse error: {0}")]
    Parse(String),
    #[error("invalid camera parameter: {0}")]
    InvalidParameter(String),
}

/// Unit-norm observation direction in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing<T: Real>(Vector3<T>);

impl<T: Real> Bearing<T> {
    /// Normalizes `v`; `None` for zero or non-finite input.
    pub fn from_vector(v: Vector3<T>) -> Option<Self> {
        let n = v.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return None;
        }
        Some(Bearing(v / n))
    }

    pub fn new(alpha: T, beta: T, gamma: T) -> Option<Self> {
        Self::from_vector(Vector3::new(alpha, beta, gamma))
    }

    /// Wraps a vector that is already unit length.
    pub fn new_unchecked(v: Vector3<T>) -> Self {
        Bearing(v)
    }

    pub fn alpha(&self) -> T {
        self.0.x
    }

    pub fn beta(&self) -> T {
        self.0.y
    }

    pub fn gamma(&self) -> T {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<T> {
        &self.0
    }

    pub fn into_vector(self) -> Vector3<T> {
        self.0
    }

    /// Angle from the `+z` optical axis, in radians.
    pub fn polar_angle(&self) -> T {
        let r = (self.0.x * self.0.x + self.0.y * self.0.y).sqrt();
        r.atan2(self.0.z)
    }

    /// Great-circle distance to `other`, in radians.
    pub fn angle_to(&self, other: &Bearing<T>) -> T {
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0))
    }

    pub fn neg(&self) -> Self {
        Bearing(-self.0)
    }
}

/// Continuous pixel coordinates; origin at the centre of the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint<T: Real> {
    pub x: T,
    pub y: T,
}

impl<T: Real> PixelPoint<T> {
    pub fn new(x: T, y: T) -> Self {
        PixelPoint { x, y }
    }

    pub fn to_vector(self) -> Vector2<T> {
        Vector2::new(self.x, self.y)
    }
}

/// Valid polar-angle band, in degrees from the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FovBand<T: Real> {
    pub min_deg: T,
    pub max_deg: T,
}

impl<T: Real> FovBand<T> {
    pub fn new(min_deg: T, max_deg: T) -> Result<Self, CameraError> {
        if !(min_deg < max_deg) || min_deg < T::zero() || max_deg > T::lit(180.0) {
            return Err(CameraError::InvalidParameter(format!(
                "fov band [{min_deg}, {max_deg}] must satisfy 0 <= min < max <= 180"
            )));
        }
        Ok(FovBand { min_deg, max_deg })
    }

    pub fn contains_polar(&self, polar_rad: T) -> bool {
        let deg = polar_rad.rad_to_deg();
        deg >= self.min_deg && deg <= self.max_deg
    }
}

/// Radial-tangential distortion applied on the normalized plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadTan<T: Real> {
    pub k1: T,
    pub k2: T,
    pub p1: T,
    pub p2: T,
}

impl<T: Real> RadTan<T> {
    fn distort(&self, m: Vector2<T>) -> Vector2<T> {
        let two = T::lit(2.0);
        let (x, y) = (m.x, m.y);
        let r2 = x * x + y * y;
        let radial = T::one() + self.k1 * r2 + self.k2 * r2 * r2;
        Vector2::new(
            x * radial + two * self.p1 * x * y + self.p2 * (r2 + two * x * x),
            y * radial + self.p1 * (r2 + two * y * y) + two * self.p2 * x * y,
        )
    }

    fn jacobian(&self, m: Vector2<T>) -> Matrix2<T> {
        let two = T::lit(2.0);
        let (x, y) = (m.x, m.y);
        let r2 = x * x + y * y;
        let radial = T::one() + self.k1 * r2 + self.k2 * r2 * r2;
        let dradial = self.k1 + two * self.k2 * r2; // d radial / d r2
        let dxx = radial + x * dradial * two * x + two * self.p1 * y + self.p2 * T::lit(6.0) * x;
        let dxy = x * dradial * two * y + two * self.p1 * x + self.p2 * two * y;
        let dyx = y * dradial * two * x + self.p1 * two * x + two * self.p2 * y;
        let dyy = radial + y * dradial * two * y + self.p1 * T::lit(6.0) * y + two * self.p2 * x;
        Matrix2::new(dxx, dxy, dyx, dyy)
    }

    fn undistort(&self, md: Vector2<T>) -> Option<Vector2<T>> {
        let mut m = md;
        for _ in 0..50 {
            let err = self.distort(m) - md;
            if err.norm() < T::lit(1e-14) {
                return Some(m);
            }
            let step = self.jacobian(m).try_inverse()? * err;
            m -= step;
            if !m.x.is_finite() || !m.y.is_finite() {
                return None;
            }
        }
        let err = self.distort(m) - md;
        (err.norm() < T::lit(1e-9)).then_some(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equirectangular<T: Real> {
    pub width: u32,
    pub height: u32,
    pub fov: FovBand<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedMei<T: Real> {
    pub xi: T,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub distortion: Option<RadTan<T>>,
    pub size: Option<(u32, u32)>,
    pub fov: FovBand<T>,
}

/// Polynomial omnidirectional model.
///
/// A pixel offset `(u', v')` from the centre (after undoing the affine part)
/// back-projects to the ray `(u', v', -f(rho))` with
/// `f(rho) = a0 + a1 rho + ... + a4 rho^4`, so calibrations with `a0 < 0`
/// place the optical axis along `+z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaramuzza<T: Real> {
    pub poly: Vec<T>,
    pub cx: T,
    pub cy: T,
    pub c: T,
    pub d: T,
    pub e: T,
    pub width: u32,
    pub height: u32,
    pub fov: FovBand<T>,
    rho_max: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pinhole<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub size: Option<(u32, u32)>,
    pub fov: FovBand<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CameraModel<T: Real> {
    Equirectangular(Equirectangular<T>),
    UnifiedMei(UnifiedMei<T>),
    Scaramuzza(Scaramuzza<T>),
    Pinhole(Pinhole<T>),
}

fn check_focal<T: Real>(fx: T, fy: T) -> Result<(), CameraError> {
    if !(fx > T::zero() && fy > T::zero()) {
        return Err(CameraError::InvalidParameter("fx and fy must be positive".into()));
    }
    Ok(())
}

fn check_finite<T: Real>(name: &str, v: T) -> Result<(), CameraError> {
    if !v.is_finite() {
        return Err(CameraError::InvalidParameter(format!("{name} must be finite")));
    }
    Ok(())
}

impl<T: Real> Equirectangular<T> {
    pub fn new(width: u32, height: u32, fov: FovBand<T>) -> Result<Self, CameraError> {
        if width == 0 || height == 0 {
            return Err(CameraError::InvalidParameter("image size must be positive".into()));
        }
        Ok(Equirectangular { width, height, fov })
    }
}

impl<T: Real> UnifiedMei<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        xi: T,
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        distortion: Option<RadTan<T>>,
        size: Option<(u32, u32)>,
        fov: FovBand<T>,
    ) -> Result<Self, CameraError> {
        check_focal(fx, fy)?;
        for (name, v) in [("xi", xi), ("cx", cx), ("cy", cy)] {
            check_finite(name, v)?;
        }
        if xi < T::zero() {
            return Err(CameraError::InvalidParameter("xi must be non-negative".into()));
        }
        Ok(UnifiedMei { xi, fx, fy, cx, cy, distortion, size, fov })
    }
}

impl<T: Real> Pinhole<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, size: Option<(u32, u32)>, fov: FovBand<T>) -> Result<Self, CameraError> {
        check_focal(fx, fy)?;
        check_finite("cx", cx)?;
        check_finite("cy", cy)?;
        Ok(Pinhole { fx, fy, cx, cy, size, fov })
    }
}

impl<T: Real> Scaramuzza<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        poly: Vec<T>,
        cx: T,
        cy: T,
        c: T,
        d: T,
        e: T,
        width: u32,
        height: u32,
        fov: FovBand<T>,
    ) -> Result<Self, CameraError> {
        if poly.is_empty() || poly[0] == T::zero() || !poly[0].is_finite() {
            return Err(CameraError::InvalidParameter("a0 must be non-zero".into()));
        }
        if poly.len() > 5 {
            return Err(CameraError::InvalidParameter("at most five coefficients a0..a4".into()));
        }
        if width == 0 || height == 0 {
            return Err(CameraError::InvalidParameter("image size must be positive".into()));
        }
        let det = c - d * e;
        if det.abs() < T::lit(1e-12) {
            return Err(CameraError::InvalidParameter("affine part is singular".into()));
        }
        let mut model = Scaramuzza { poly, cx, cy, c, d, e, width, height, fov, rho_max: T::zero() };
        let half = T::lit(0.5);
        let corners = [
            (-half, -half),
            (T::from_u32(width).unwrap() - half, -half),
            (-half, T::from_u32(height).unwrap() - half),
            (T::from_u32(width).unwrap() - half, T::from_u32(height).unwrap() - half),
        ];
        let mut rho_max = T::zero();
        for (x, y) in corners {
            rho_max = rho_max.max(model.sensor_offset(x, y).norm());
        }
        model.rho_max = rho_max * T::lit(1.5);
        Ok(model)
    }

    fn poly_eval(&self, rho: T) -> (T, T) {
        let mut f = T::zero();
        let mut df = T::zero();
        for (i, &a) in self.poly.iter().enumerate().rev() {
            df = df * rho + f;
            f = f * rho + a;
            let _ = i;
        }
        (f, df)
    }

    fn sensor_offset(&self, x: T, y: T) -> Vector2<T> {
        let du = x - self.cx;
        let dv = y - self.cy;
        let det = self.c - self.d * self.e;
        // [c d; e 1]^-1
        Vector2::new((du - self.d * dv) / det, (self.c * dv - self.e * du) / det)
    }

    /// Radial distance on the sensor for a bearing with radial part `r` and
    /// axial part `gamma`; solves `gamma * rho + r * f(rho) = 0`.
    fn solve_rho(&self, r: T, gamma: T) -> Result<T, CameraError> {
        let g = |rho: T| {
            let (f, df) = self.poly_eval(rho);
            (gamma * rho + r * f, gamma + r * df)
        };
        let tol = T::lit(1e-10).max(T::default_epsilon() * T::lit(100.0) * (T::one() + self.rho_max));
        let mut lo = T::zero();
        let mut hi = self.rho_max;
        let (g_lo, _) = g(lo);
        let (g_hi, _) = g(hi);
        if g_lo.abs() <= tol {
            return Ok(lo);
        }
        if g_lo * g_hi > T::zero() {
            return Err(CameraError::ProjectionSingularity);
        }
        let rising = g_hi > g_lo;
        let theta = r.atan2(gamma);
        let mut rho = (theta * self.poly[0].abs()).max(lo).min(hi);
        for _ in 0..50 {
            let (val, dval) = g(rho);
            if val.abs() <= tol {
                return Ok(rho);
            }
            if (val > T::zero()) == rising {
                hi = rho;
            } else {
                lo = rho;
            }
            let newton = rho - val / dval;
            rho = if dval != T::zero() && newton > lo && newton < hi {
                newton
            } else {
                (lo + hi) * T::lit(0.5)
            };
        }
        let (val, _) = g(rho);
        if val.abs() <= tol * T::lit(1e3) {
            Ok(rho)
        } else {
            Err(CameraError::ProjectionSingularity)
        }
    }
}

impl<T: Real> CameraModel<T> {
    pub fn fov(&self) -> &FovBand<T> {
        match self {
            CameraModel::Equirectangular(m) => &m.fov,
            CameraModel::UnifiedMei(m) => &m.fov,
            CameraModel::Scaramuzza(m) => &m.fov,
            CameraModel::Pinhole(m) => &m.fov,
        }
    }

    /// Image size when the model carries one.
    pub fn image_size(&self) -> Option<(u32, u32)> {
        match self {
            CameraModel::Equirectangular(m) => Some((m.width, m.height)),
            CameraModel::UnifiedMei(m) => m.size,
            CameraModel::Scaramuzza(m) => Some((m.width, m.height)),
            CameraModel::Pinhole(m) => m.size,
        }
    }

    /// True when the image wraps around horizontally (full panoramas).
    pub fn wraps_horizontally(&self) -> bool {
        matches!(self, CameraModel::Equirectangular(_))
    }

    /// Euclidean pixel distance, taking horizontal wrap-around into account.
    pub fn pixel_distance(&self, a: &PixelPoint<T>, b: &PixelPoint<T>) -> T {
        let mut dx = a.x - b.x;
        let dy = a.y - b.y;
        if let CameraModel::Equirectangular(m) = self {
            let w = T::from_u32(m.width).unwrap();
            let half = w * T::lit(0.5);
            while dx > half {
                dx -= w;
            }
            while dx < -half {
                dx += w;
            }
        }
        (dx * dx + dy * dy).sqrt()
    }

    fn projectable(&self, b: &Bearing<T>) -> bool {
        match self {
            CameraModel::Equirectangular(_) => true,
            CameraModel::UnifiedMei(m) => b.gamma() + m.xi > T::lit(1e-12),
            CameraModel::Pinhole(_) => b.gamma() > T::lit(1e-12),
            CameraModel::Scaramuzza(_) => true,
        }
    }

    pub fn is_valid_bearing(&self, b: &Bearing<T>) -> bool {
        self.fov().contains_polar(b.polar_angle()) && self.projectable(b)
    }

    pub fn is_valid_pixel(&self, p: &PixelPoint<T>) -> bool {
        self.unproject(p).is_ok()
    }

    /// Row-major validity of every integer pixel centre of a `width x height` grid.
    pub fn valid_pixel_mask(&self, width: usize, height: usize) -> Vec<bool> {
        let mut mask = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let p = PixelPoint::new(T::from_usize(x).unwrap(), T::from_usize(y).unwrap());
                mask.push(self.unproject(&p).is_ok());
            }
        }
        mask
    }

    fn inside_bounds(&self, p: &PixelPoint<T>) -> bool {
        if !p.x.is_finite() || !p.y.is_finite() {
            return false;
        }
        let half = T::lit(0.5);
        match self {
            CameraModel::Equirectangular(m) => {
                p.y >= T::zero() && p.y <= T::from_u32(m.height).unwrap()
            }
            _ => match self.image_size() {
                Some((w, h)) => {
                    p.x >= -half
                        && p.y >= -half
                        && p.x <= T::from_u32(w).unwrap() - half
                        && p.y <= T::from_u32(h).unwrap() - half
                }
                None => true,
            },
        }
    }

    pub fn project(&self, b: &Bearing<T>) -> Result<PixelPoint<T>, CameraError> {
        if !self.fov().contains_polar(b.polar_angle()) {
            return Err(CameraError::BearingOutOfFov);
        }
        let (alpha, beta, gamma) = (b.alpha(), b.beta(), b.gamma());
        match self {
            CameraModel::Equirectangular(m) => {
                let theta = beta.atan2(alpha);
                let lat = gamma.max(-T::one()).min(T::one()).asin();
                let w = T::from_u32(m.width).unwrap();
                let h = T::from_u32(m.height).unwrap();
                Ok(PixelPoint::new(
                    (theta / T::two_pi() + T::lit(0.5)) * w,
                    (T::lit(0.5) - lat / T::pi()) * h,
                ))
            }
            CameraModel::UnifiedMei(m) => {
                let denom = gamma + m.xi;
                if denom <= T::lit(1e-12) {
                    return Err(CameraError::ProjectionSingularity);
                }
                let mut mm = Vector2::new(alpha / denom, beta / denom);
                if let Some(dist) = &m.distortion {
                    mm = dist.distort(mm);
                }
                Ok(PixelPoint::new(m.fx * mm.x + m.cx, m.fy * mm.y + m.cy))
            }
            CameraModel::Pinhole(m) => {
                if gamma <= T::lit(1e-12) {
                    return Err(CameraError::ProjectionSingularity);
                }
                Ok(PixelPoint::new(m.fx * alpha / gamma + m.cx, m.fy * beta / gamma + m.cy))
            }
            CameraModel::Scaramuzza(m) => {
                let r = (alpha * alpha + beta * beta).sqrt();
                if r <= T::lit(1e-15) {
                    if gamma > T::zero() {
                        return Ok(PixelPoint::new(m.cx, m.cy));
                    }
                    return Err(CameraError::ProjectionSingularity);
                }
                let rho = m.solve_rho(r, gamma)?;
                let u = rho * alpha / r;
                let v = rho * beta / r;
                Ok(PixelPoint::new(m.c * u + m.d * v + m.cx, m.e * u + v + m.cy))
            }
        }
    }

    pub fn unproject(&self, p: &PixelPoint<T>) -> Result<Bearing<T>, CameraError> {
        if !self.inside_bounds(p) {
            return Err(CameraError::PixelOutOfDomain);
        }
        let ray = match self {
            CameraModel::Equirectangular(m) => {
                let w = T::from_u32(m.width).unwrap();
                let h = T::from_u32(m.height).unwrap();
                let theta = (p.x / w - T::lit(0.5)) * T::two_pi();
                let lat = (T::lit(0.5) - p.y / h) * T::pi();
                let (st, ct) = theta.sin_cos();
                let (sl, cl) = lat.sin_cos();
                Vector3::new(cl * ct, cl * st, sl)
            }
            CameraModel::UnifiedMei(m) => {
                let md = Vector2::new((p.x - m.cx) / m.fx, (p.y - m.cy) / m.fy);
                let mm = match &m.distortion {
                    Some(dist) => dist.undistort(md).ok_or(CameraError::PixelOutOfDomain)?,
                    None => md,
                };
                let r2 = mm.norm_squared();
                let disc = T::one() + (T::one() - m.xi * m.xi) * r2;
                if disc < T::zero() {
                    return Err(CameraError::PixelOutOfDomain);
                }
                let factor = (m.xi + disc.sqrt()) / (T::one() + r2);
                Vector3::new(factor * mm.x, factor * mm.y, factor - m.xi)
            }
            CameraModel::Pinhole(m) => Vector3::new((p.x - m.cx) / m.fx, (p.y - m.cy) / m.fy, T::one()),
            CameraModel::Scaramuzza(m) => {
                let off = m.sensor_offset(p.x, p.y);
                let (f, _) = m.poly_eval(off.norm());
                Vector3::new(off.x, off.y, -f)
            }
        };
        let b = Bearing::from_vector(ray).ok_or(CameraError::PixelOutOfDomain)?;
        if !self.is_valid_bearing(&b) {
            return Err(CameraError::PixelOutOfDomain);
        }
        Ok(b)
    }

    /// Casts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> CameraModel<U> {
        let c = |v: T| U::lit(v.as_f64());
        let fov = FovBand { min_deg: c(self.fov().min_deg), max_deg: c(self.fov().max_deg) };
        match self {
            CameraModel::Equirectangular(m) => {
                CameraModel::Equirectangular(Equirectangular { width: m.width, height: m.height, fov })
            }
            CameraModel::UnifiedMei(m) => CameraModel::UnifiedMei(UnifiedMei {
                xi: c(m.xi),
                fx: c(m.fx),
                fy: c(m.fy),
                cx: c(m.cx),
                cy: c(m.cy),
                distortion: m.distortion.map(|d| RadTan { k1: c(d.k1), k2: c(d.k2), p1: c(d.p1), p2: c(d.p2) }),
                size: m.size,
                fov,
            }),
            CameraModel::Pinhole(m) => CameraModel::Pinhole(Pinhole {
                fx: c(m.fx),
                fy: c(m.fy),
                cx: c(m.cx),
                cy: c(m.cy),
                size: m.size,
                fov,
            }),
            CameraModel::Scaramuzza(m) => CameraModel::Scaramuzza(Scaramuzza {
                poly: m.poly.iter().map(|&a| c(a)).collect(),
                cx: c(m.cx),
                cy: c(m.cy),
                c: c(m.c),
                d: c(m.d),
                e: c(m.e),
                width: m.width,
                height: m.height,
                fov,
                rho_max: c(m.rho_max),
            }),
        }
    }
}

/// JSON camera description; `fov_deg` defaults per family.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CameraConfig {
    Equirectangular {
        width: u32,
        height: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fov_deg: Option<[f64; 2]>,
    },
    #[serde(alias = "unified_mei")]
    Mei {
        xi: f64,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        #[serde(default)]
        k1: f64,
        #[serde(default)]
        k2: f64,
        #[serde(default)]
        p1: f64,
        #[serde(default)]
        p2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fov_deg: Option<[f64; 2]>,
    },
    Scaramuzza {
        a: Vec<f64>,
        cx: f64,
        cy: f64,
        #[serde(default = "one")]
        c: f64,
        #[serde(default)]
        d: f64,
        #[serde(default)]
        e: f64,
        width: u32,
        height: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fov_deg: Option<[f64; 2]>,
    },
    Pinhole {
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fov_deg: Option<[f64; 2]>,
    },
}

fn one() -> f64 {
    1.0
}

fn size_pair(w: Option<u32>, h: Option<u32>) -> Result<Option<(u32, u32)>, CameraError> {
    match (w, h) {
        (Some(w), Some(h)) if w > 0 && h > 0 => Ok(Some((w, h))),
        (None, None) => Ok(None),
        _ => Err(CameraError::InvalidParameter("width and height must be given together and be positive".into())),
    }
}

impl CameraConfig {
    pub fn build<T: Real>(&self) -> Result<CameraModel<T>, CameraError> {
        let l = T::lit;
        let band = |fov: &Option<[f64; 2]>, default_max: f64| {
            let [lo, hi] = fov.unwrap_or([0.0, default_max]);
            FovBand::new(l(lo), l(hi))
        };
        Ok(match self {
            CameraConfig::Equirectangular { width, height, fov_deg } => {
                CameraModel::Equirectangular(Equirectangular::new(*width, *height, band(fov_deg, 180.0)?)?)
            }
            CameraConfig::Mei { xi, fx, fy, cx, cy, k1, k2, p1, p2, width, height, fov_deg } => {
                let distortion = if [*k1, *k2, *p1, *p2].iter().any(|v| *v != 0.0) {
                    Some(RadTan { k1: l(*k1), k2: l(*k2), p1: l(*p1), p2: l(*p2) })
                } else {
                    None
                };
                CameraModel::UnifiedMei(UnifiedMei::new(
                    l(*xi),
                    l(*fx),
                    l(*fy),
                    l(*cx),
                    l(*cy),
                    distortion,
                    size_pair(*width, *height)?,
                    band(fov_deg, 120.0)?,
                )?)
            }
            CameraConfig::Scaramuzza { a, cx, cy, c, d, e, width, height, fov_deg } => {
                CameraModel::Scaramuzza(Scaramuzza::new(
                    a.iter().map(|&v| l(v)).collect(),
                    l(*cx),
                    l(*cy),
                    l(*c),
                    l(*d),
                    l(*e),
                    *width,
                    *height,
                    band(fov_deg, 120.0)?,
                )?)
            }
            CameraConfig::Pinhole { fx, fy, cx, cy, width, height, fov_deg } => CameraModel::Pinhole(Pinhole::new(
                l(*fx),
                l(*fy),
                l(*cx),
                l(*cy),
                size_pair(*width, *height)?,
                band(fov_deg, 180.0)?,
            )?),
        })
    }

    pub fn from_model<T: Real>(model: &CameraModel<T>) -> Self {
        let f = |v: T| v.as_f64();
        let fov = Some([f(model.fov().min_deg), f(model.fov().max_deg)]);
        match model {
            CameraModel::Equirectangular(m) => {
                CameraConfig::Equirectangular { width: m.width, height: m.height, fov_deg: fov }
            }
            CameraModel::UnifiedMei(m) => {
                let d = m.distortion.unwrap_or(RadTan { k1: T::zero(), k2: T::zero(), p1: T::zero(), p2: T::zero() });
                CameraConfig::Mei {
                    xi: f(m.xi),
                    fx: f(m.fx),
                    fy: f(m.fy),
                    cx: f(m.cx),
                    cy: f(m.cy),
                    k1: f(d.k1),
                    k2: f(d.k2),
                    p1: f(d.p1),
                    p2: f(d.p2),
                    width: m.size.map(|s| s.0),
                    height: m.size.map(|s| s.1),
                    fov_deg: fov,
                }
            }
            CameraModel::Scaramuzza(m) => CameraConfig::Scaramuzza {
                a: m.poly.iter().map(|&v| f(v)).collect(),
                cx: f(m.cx),
                cy: f(m.cy),
                c: f(m.c),
                d: f(m.d),
                e: f(m.e),
                width: m.width,
                height: m.height,
                fov_deg: fov,
            },
            CameraModel::Pinhole(m) => CameraConfig::Pinhole {
                fx: f(m.fx),
                fy: f(m.fy),
                cx: f(m.cx),
                cy: f(m.cy),
                width: m.size.map(|s| s.0),
                height: m.size.map(|s| s.1),
                fov_deg: fov,
            },
        }
    }
}

/// Parses a JSON camera config and validates the parameters.
pub fn load_model<T: Real>(config_text: &str) -> Result<CameraModel<T>, CameraError> {
    let cfg: CameraConfig = serde_json::from_str(config_text).map_err(|e| CameraError::Parse(e.to_string()))?;
    cfg.build()
}

pub fn model_to_json<T: Real>(model: &CameraModel<T>) -> String {
    serde_json::to_string_pretty(&CameraConfig::from_model(model)).expect("camera config serializes")
}

/// Synthetic parameter sets used by the fixtures, tests and the `demo` command.
pub mod presets {
    use super::*;

    /// 720x540 fisheye, unified model, 0-110 degree polar band.
    pub fn fisheye() -> CameraModel<f64> {
        CameraModel::UnifiedMei(
            UnifiedMei::new(1.2, 270.0, 270.0, 359.5, 269.5, None, Some((720, 540)), FovBand::new(0.0, 110.0).unwrap())
                .unwrap(),
        )
    }

    /// 1280x960 panoramic annular lens, polynomial model, 40-120 degree band.
    ///
    /// The polynomial is a least-squares fit to an equidistant lens with
    /// roughly 224 px/rad; the 120 degree edge lands near rho = 470 px.
    pub fn panoramic_annular() -> CameraModel<f64> {
        CameraModel::Scaramuzza(
            Scaramuzza::new(
                PAL_POLY.to_vec(),
                639.5,
                479.5,
                1.0,
                0.0,
                0.0,
                1280,
                960,
                FovBand::new(40.0, 120.0).unwrap(),
            )
            .unwrap(),
        )
    }

    /// 1024x512 full panorama.
    pub fn equirectangular() -> CameraModel<f64> {
        CameraModel::Equirectangular(Equirectangular::new(1024, 512, FovBand::new(0.0, 180.0).unwrap()).unwrap())
    }

    pub const PAL_POLY: [f64; 5] = [-225.0, 0.0, 1.93e-3, -3.25e-6, 8.32e-9];
}
