//! Segment distances, rotated image pairs and the repeatability /
//! localization-error protocol.

use nalgebra::UnitQuaternion;

use crate::camera::{CameraModel, PixelPoint};
use crate::detector::is_detectable_pixel;
use crate::image::GrayImage;
use crate::sphere::{pixel_to_curve_distance, segment_overlap, GeodesicSegment};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum EvalError {
    #[error("rotation of {angle_deg:.2} deg exceeds the {max_deg} deg limit for this camera")]
    RotationTooLarge { angle_deg: f64, max_deg: f64 },
    #[error("invalid evaluation parameter: {0}")]
    InvalidParameter(String),
}

/// Largest rotation allowed for pairs on cameras without a full panorama.
pub const MAX_PAIR_ROTATION_DEG: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Endpoint-to-curve distance with an overlap gate.
    Orth,
    /// Endpoint-to-endpoint distance.
    Struct,
}

impl std::str::FromStr for Metric {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orth" => Ok(Metric::Orth),
            "struct" => Ok(Metric::Struct),
            other => Err(EvalError::InvalidParameter(format!("unknown metric {other} (expected orth or struct)"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Orth => "orth",
            Metric::Struct => "struct",
        })
    }
}

/// Minimum overlap for `d_orth` to be finite.
pub const MIN_OVERLAP: f64 = 0.5;

fn endpoints_px(model: &CameraModel<f64>, s: &GeodesicSegment<f64>) -> Option<[PixelPoint<f64>; 2]> {
    Some([model.project(&s.start).ok()?, model.project(&s.end).ok()?])
}

/// Mean distance of `s`'s projected endpoints to `target`'s projected circle.
fn endpoint_to_curve(model: &CameraModel<f64>, s: &GeodesicSegment<f64>, target: &GeodesicSegment<f64>) -> f64 {
    let Some(pts) = endpoints_px(model, s) else { return f64::INFINITY };
    let mut acc = 0.0;
    for p in &pts {
        match pixel_to_curve_distance(model, p, &target.circle) {
            Ok(d) => acc += d,
            Err(_) => return f64::INFINITY,
        }
    }
    acc / 2.0
}

/// Orthogonal distance in pixels; `+inf` when the overlap is below 0.5 or a
/// distance cannot be evaluated.
pub fn d_orth(model: &CameraModel<f64>, s1: &GeodesicSegment<f64>, s2: &GeodesicSegment<f64>) -> f64 {
    if segment_overlap(s1, s2) < MIN_OVERLAP {
        return f64::INFINITY;
    }
    0.5 * (endpoint_to_curve(model, s1, s2) + endpoint_to_curve(model, s2, s1))
}

/// Structural distance: mean endpoint distance under the better pairing.
pub fn d_struct(model: &CameraModel<f64>, s1: &GeodesicSegment<f64>, s2: &GeodesicSegment<f64>) -> f64 {
    let (Some([a1, a2]), Some([b1, b2])) = (endpoints_px(model, s1), endpoints_px(model, s2)) else {
        return f64::INFINITY;
    };
    let d = |p: &PixelPoint<f64>, q: &PixelPoint<f64>| model.pixel_distance(p, q);
    let straight = 0.5 * (d(&a1, &b1) + d(&a2, &b2));
    let crossed = 0.5 * (d(&a1, &b2) + d(&a2, &b1));
    straight.min(crossed)
}

pub fn distance(metric: Metric, model: &CameraModel<f64>, s1: &GeodesicSegment<f64>, s2: &GeodesicSegment<f64>) -> f64 {
    match metric {
        Metric::Orth => d_orth(model, s1, s2),
        Metric::Struct => d_struct(model, s1, s2),
    }
}

/// Second view of a pure-rotation pair. A bearing `b` of the first view is
/// seen at `rotation * b` in the second.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedPair {
    pub image: GrayImage,
    pub rotation: UnitQuaternion<f64>,
}

impl RotatedPair {
    pub fn transport(&self, s: &GeodesicSegment<f64>) -> GeodesicSegment<f64> {
        s.rotated(&self.rotation)
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-6 {
        r
    } else {
        v
    }
}

/// Warps `img` by a camera rotation: `img2(p) = img(project(R^-1 unproject(p)))`,
/// bilinear, with pre-images outside the FoV set to 0.
pub fn make_rotated_pair(
    img: &GrayImage,
    model: &CameraModel<f64>,
    rotation: &UnitQuaternion<f64>,
) -> Result<RotatedPair, EvalError> {
    let angle_deg = rotation.angle().to_degrees();
    if !model.wraps_horizontally() && angle_deg > MAX_PAIR_ROTATION_DEG + 1e-9 {
        return Err(EvalError::RotationTooLarge { angle_deg, max_deg: MAX_PAIR_ROTATION_DEG });
    }
    let (w, h) = (img.width(), img.height());
    let inv = rotation.inverse();
    let wrap = model.wraps_horizontally();
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let Ok(b) = model.unproject(&PixelPoint::new(x as f64, y as f64)) else { continue };
            let b1 = crate::camera::Bearing::new_unchecked(inv * b.as_vector());
            let Ok(q) = model.project(&b1) else { continue };
            let (mut qx, qy) = (snap(q.x), snap(q.y));
            if wrap {
                qx = qx.rem_euclid(w as f64);
                if qx >= w as f64 - 1e-6 {
                    qx = 0.0;
                }
            }
            if let Some(v) = img.sample_bilinear(qx, qy, wrap) {
                out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(RotatedPair { image: out, rotation: *rotation })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub rep: f64,
    /// Mean distance over matched segments; `None` without matches.
    pub le: Option<f64>,
    pub n_detected_a: usize,
    pub n_detected_b: usize,
    pub metric: Metric,
    pub eps_px: f64,
    /// Set when either side had no detections (or none visible in the other view).
    pub empty_side: bool,
}

/// Samples per segment used to decide whether a transported segment is
/// visible in the other view.
const VISIBILITY_SAMPLES: usize = 5;

fn visible_in(model: &CameraModel<f64>, size: (usize, usize), s: &GeodesicSegment<f64>) -> bool {
    s.sample(VISIBILITY_SAMPLES).iter().all(|b| match model.project(b) {
        Ok(p) => is_detectable_pixel(model, size.0, size.1, p.x.round() as i64, p.y.round() as i64),
        Err(_) => false,
    })
}

/// One direction of the protocol: greedy one-to-one matching of transported
/// `src` segments against `dst`. Returns (visible count, matched distances).
fn match_direction(
    src: &[GeodesicSegment<f64>],
    dst: &[GeodesicSegment<f64>],
    rotation: &UnitQuaternion<f64>,
    model: &CameraModel<f64>,
    size: (usize, usize),
    eps_px: f64,
    metric: Metric,
) -> (usize, Vec<f64>) {
    let moved: Vec<GeodesicSegment<f64>> =
        src.iter().map(|s| s.rotated(rotation)).filter(|s| visible_in(model, size, s)).collect();
    let mut candidates = Vec::new();
    for (i, a) in moved.iter().enumerate() {
        for (j, b) in dst.iter().enumerate() {
            let d = distance(metric, model, a, b);
            if d <= eps_px {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; moved.len()];
    let mut used_b = vec![false; dst.len()];
    let mut matched = Vec::new();
    for (d, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            matched.push(d);
        }
    }
    (moved.len(), matched)
}

/// Symmetric repeatability and localization error of two detection sets
/// related by `rotation` (view A bearing `b` appears at `rotation * b` in B).
/// Only segments whose transport is visible in the other view are counted.
pub fn evaluate_pair(
    dets_a: &[GeodesicSegment<f64>],
    dets_b: &[GeodesicSegment<f64>],
    rotation: &UnitQuaternion<f64>,
    model: &CameraModel<f64>,
    size: (usize, usize),
    eps_px: f64,
    metric: Metric,
) -> Result<PairResult, EvalError> {
    if !(eps_px > 0.0) {
        return Err(EvalError::InvalidParameter("eps must be positive".into()));
    }
    let (vis_a, m_ab) = match_direction(dets_a, dets_b, rotation, model, size, eps_px, metric);
    let (vis_b, m_ba) = match_direction(dets_b, dets_a, &rotation.inverse(), model, size, eps_px, metric);
    let empty_side = vis_a == 0 || vis_b == 0 || dets_a.is_empty() || dets_b.is_empty();
    let rate = |vis: usize, m: usize| if vis == 0 { 0.0 } else { m as f64 / vis as f64 };
    let rep = 0.5 * (rate(vis_a, m_ab.len()) + rate(vis_b, m_ba.len()));
    let all: Vec<f64> = m_ab.iter().chain(m_ba.iter()).copied().collect();
    let le = (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64);
    Ok(PairResult {
        rep,
        le,
        n_detected_a: dets_a.len(),
        n_detected_b: dets_b.len(),
        metric,
        eps_px,
        empty_side,
    })
}

pub fn repeatability(
    dets_a: &[GeodesicSegment<f64>],
    dets_b: &[GeodesicSegment<f64>],
    rotation: &UnitQuaternion<f64>,
    model: &CameraModel<f64>,
    size: (usize, usize),
    eps_px: f64,
    metric: Metric,
) -> Result<f64, EvalError> {
    evaluate_pair(dets_a, dets_b, rotation, model, size, eps_px, metric).map(|r| r.rep)
}

pub fn localization_error(
    dets_a: &[GeodesicSegment<f64>],
    dets_b: &[GeodesicSegment<f64>],
    rotation: &UnitQuaternion<f64>,
    model: &CameraModel<f64>,
    size: (usize, usize),
    eps_px: f64,
    metric: Metric,
) -> Result<Option<f64>, EvalError> {
    evaluate_pair(dets_a, dets_b, rotation, model, size, eps_px, metric).map(|r| r.le)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{presets, Bearing};
    use nalgebra::Vector3;

    fn seg(a: [f64; 3], b: [f64; 3]) -> GeodesicSegment<f64> {
        GeodesicSegment::between(Bearing::new(a[0], a[1], a[2]).unwrap(), Bearing::new(b[0], b[1], b[2]).unwrap())
            .unwrap()
    }

    #[test]
    fn distances_on_identical_and_disjoint() {
        let model = presets::fisheye();
        let s = seg([-0.3, 0.1, 1.0], [0.3, 0.15, 1.0]);
        assert!(d_orth(&model, &s, &s) < 1e-9);
        assert!(d_struct(&model, &s, &s) < 1e-12);
        assert!(d_struct(&model, &s, &s.reversed()) < 1e-12);
        let a = s.point_at(0.0);
        let len = crate::sphere::arc_length(&s);
        let first = GeodesicSegment::on_circle(s.circle, a, s.point_at(0.3 * len)).unwrap();
        let second = GeodesicSegment::on_circle(s.circle, s.point_at(0.6 * len), s.end).unwrap();
        assert!(d_orth(&model, &first, &second).is_infinite());
    }

    #[test]
    fn identity_pair_is_identical() {
        let model = presets::equirectangular();
        let mut img = GrayImage::new(1024, 512);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i * 31 % 251) as u8;
        }
        let pair = make_rotated_pair(&img, &model, &UnitQuaternion::identity()).unwrap();
        assert_eq!(pair.image, img);
    }

    #[test]
    fn equirect_quarter_turn_is_a_shift() {
        let model = presets::equirectangular();
        let mut img = GrayImage::new(1024, 512);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i * 7 % 253) as u8;
        }
        let r = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let pair = make_rotated_pair(&img, &model, &r).unwrap();
        for y in [0usize, 100, 256, 511] {
            for x in 0..1024 {
                assert_eq!(pair.image.get((x + 256) % 1024, y), img.get(x, y), "x {x} y {y}");
            }
        }
    }

    #[test]
    fn rotation_limit() {
        let model = presets::fisheye();
        let img = GrayImage::new(720, 540);
        let r = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 61f64.to_radians());
        assert!(matches!(make_rotated_pair(&img, &model, &r), Err(EvalError::RotationTooLarge { .. })));
    }

    #[test]
    fn protocol_trivial_cases() {
        let model = presets::fisheye();
        let dets = vec![seg([-0.3, 0.1, 1.0], [0.3, 0.15, 1.0]), seg([0.1, -0.4, 1.0], [0.2, 0.3, 1.0])];
        let id = UnitQuaternion::identity();
        let r = evaluate_pair(&dets, &dets, &id, &model, (720, 540), 5.0, Metric::Orth).unwrap();
        assert_eq!(r.rep, 1.0);
        assert!(r.le.unwrap() < 1e-9);
        let e = evaluate_pair(&dets, &[], &id, &model, (720, 540), 5.0, Metric::Orth).unwrap();
        assert_eq!(e.rep, 0.0);
        assert!(e.empty_side);
        assert!(e.le.is_none());
    }
}
