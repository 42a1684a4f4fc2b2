//! Random 3D wireframe scenes rendered through any camera model, with exact
//! geodesic-segment ground truth per frame.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::ba::{BaProblem, FixedMask, LineObs, PointFeature, PointObs};
use crate::camera::{Bearing, CameraModel, PixelPoint};
use crate::image::GrayImage;
use crate::line::{plucker_to_orthonormal, LineObservation, PluckerLine, Pose};
use crate::sphere::{GeodesicSegment, GreatCircle};

/// Axis-aligned scene box plus a spherical keep-out zone around the origin,
/// where cameras are usually placed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub keep_out_radius: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { min: Vector3::repeat(-5.0), max: Vector3::repeat(5.0), keep_out_radius: 1.5 }
    }
}

impl Bounds {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Characteristic length used to normalise trajectory errors.
    pub fn scale(&self) -> f64 {
        (self.max - self.min).amax()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment3 {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub segments: Vec<Segment3>,
    pub seed: u64,
    pub bounds: Bounds,
}

pub const MIN_SEGMENT_LENGTH: f64 = 0.5;
pub const MAX_SEGMENT_LENGTH: f64 = 3.0;

fn distance_to_origin(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let d = b - a;
    let t = (-a.dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (a + d * t).norm()
}

/// Deterministic random scene: midpoints uniform in the box, directions
/// uniform on the sphere, lengths uniform in [0.5, 3]. Candidates leaving the
/// box or entering the keep-out zone are redrawn.
pub fn gen_scene(seed: u64, n_lines: usize, bounds: Bounds) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::with_capacity(n_lines);
    while segments.len() < n_lines {
        let mid = Vector3::from_fn(|i, _| rng.random_range(bounds.min[i]..=bounds.max[i]));
        let dir = loop {
            let v = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let n: f64 = v.norm();
            if n > 1e-9 {
                break v / n;
            }
        };
        let len = rng.random_range(MIN_SEGMENT_LENGTH..=MAX_SEGMENT_LENGTH);
        let a = mid - dir * (0.5 * len);
        let b = mid + dir * (0.5 * len);
        if bounds.contains(&a) && bounds.contains(&b) && distance_to_origin(&a, &b) >= bounds.keep_out_radius {
            segments.push(Segment3 { a, b });
        }
    }
    Scene { segments, seed, bounds }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderStyle {
    pub line_intensity: f64,
    pub background: f64,
    pub stroke_width_px: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle { line_intensity: 220.0, background: 30.0, stroke_width_px: 2.0, noise_sigma: 0.0, noise_seed: 0 }
    }
}

/// Ground-truth geodesic of one visible run of a scene segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtSegment {
    /// Index into `Scene::segments`.
    pub id: usize,
    pub segment: GeodesicSegment<f64>,
    pub image_arc_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: GrayImage,
    pub gt: Vec<GtSegment>,
}

impl RenderOutput {
    pub fn gt_circles(&self) -> Vec<GreatCircle<f64>> {
        self.gt.iter().map(|g| g.segment.circle).collect()
    }
}

/// GT arcs shorter than this on the image are dropped.
pub const MIN_GT_ARC_PX: f64 = 30.0;
const COARSE_STEP_RAD: f64 = 2e-3;
const MAX_DRAW_STEP_PX: f64 = 0.5;

struct Projector<'a> {
    model: &'a CameraModel<f64>,
    width: f64,
    height: f64,
}

impl Projector<'_> {
    /// Pixel of `b` when it is visible on the image.
    fn pixel(&self, b: &Bearing<f64>) -> Option<PixelPoint<f64>> {
        let p = self.model.project(b).ok()?;
        let inside_x = self.model.wraps_horizontally() || (p.x >= 0.0 && p.x <= self.width - 1.0);
        (inside_x && p.y >= 0.0 && p.y <= self.height - 1.0).then_some(p)
    }
}

/// Renders the scene seen from `pose` (camera to world).
pub fn render(
    scene: &Scene,
    pose: &Pose<f64>,
    model: &CameraModel<f64>,
    width: usize,
    height: usize,
    style: &RenderStyle,
) -> RenderOutput {
    let proj = Projector { model, width: width as f64, height: height as f64 };
    let inv = pose.inverse();
    let mut coverage = vec![0f32; width * height];
    let mut gt = Vec::new();

    for (id, seg) in scene.segments.iter().enumerate() {
        let (Some(ba), Some(bb)) =
            (Bearing::from_vector(inv.transform_point(&seg.a)), Bearing::from_vector(inv.transform_point(&seg.b)))
        else {
            continue;
        };
        let Ok(full) = GeodesicSegment::between(ba, bb) else { continue };
        let arc = ba.angle_to(&bb);
        let n = (arc / COARSE_STEP_RAD).ceil().max(1.0) as usize;
        let params: Vec<f64> = (0..=n).map(|i| arc * i as f64 / n as f64).collect();
        let visible: Vec<bool> = params.iter().map(|&t| proj.pixel(&full.point_at(t)).is_some()).collect();

        let mut i = 0;
        while i <= n {
            if !visible[i] {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < n && visible[j + 1] {
                j += 1;
            }
            let t0 = if i == 0 { 0.0 } else { refine_boundary(&proj, &full, params[i - 1], params[i]) };
            let t1 = if j == n { arc } else { refine_boundary(&proj, &full, params[j + 1], params[j]) };
            let polyline = dense_polyline(&proj, &full, t0, t1);
            let mut length = 0.0;
            for w in polyline.windows(2) {
                length += model.pixel_distance(&w[0], &w[1]);
                stamp(&mut coverage, width, height, model.wraps_horizontally(), &w[0], &w[1], style.stroke_width_px);
            }
            if length >= MIN_GT_ARC_PX {
                if let Ok(segment) = GeodesicSegment::on_circle(full.circle, full.point_at(t0), full.point_at(t1)) {
                    gt.push(GtSegment { id, segment, image_arc_px: length });
                }
            }
            i = j + 1;
        }
    }

    let mask = model.valid_pixel_mask(width, height);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(style.noise_seed);
    let noise = Normal::new(0.0, style.noise_sigma.max(0.0)).ok();
    let mut data = vec![0u8; width * height];
    for (idx, px) in data.iter_mut().enumerate() {
        if !mask[idx] {
            continue;
        }
        let mut v = style.background + (style.line_intensity - style.background) * coverage[idx] as f64;
        if style.noise_sigma > 0.0 {
            if let Some(dist) = &noise {
                v += dist.sample(&mut noise_rng);
            }
        }
        *px = v.round().clamp(0.0, 255.0) as u8;
    }
    RenderOutput { image: GrayImage::from_raw(width, height, data).expect("buffer sized to image"), gt }
}

/// Arc parameter of the visibility boundary between `t_out` (hidden) and
/// `t_in` (visible); returns a visible parameter.
fn refine_boundary(proj: &Projector, seg: &GeodesicSegment<f64>, mut t_out: f64, mut t_in: f64) -> f64 {
    for _ in 0..40 {
        let mid = 0.5 * (t_out + t_in);
        if proj.pixel(&seg.point_at(mid)).is_some() {
            t_in = mid;
        } else {
            t_out = mid;
        }
    }
    t_in
}

/// Projected points along `[t0, t1]` with consecutive spacing at most
/// `MAX_DRAW_STEP_PX`.
fn dense_polyline(proj: &Projector, seg: &GeodesicSegment<f64>, t0: f64, t1: f64) -> Vec<PixelPoint<f64>> {
    let n = ((t1 - t0) / COARSE_STEP_RAD).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(4 * n);
    let mut prev_t = t0;
    let Some(mut prev_p) = proj.pixel(&seg.point_at(t0)) else { return out };
    out.push(prev_p);
    for i in 1..=n {
        let t = t0 + (t1 - t0) * i as f64 / n as f64;
        let Some(p) = proj.pixel(&seg.point_at(t)) else { continue };
        subdivide(proj, seg, prev_t, prev_p, t, p, &mut out, 0);
        prev_t = t;
        prev_p = p;
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn subdivide(
    proj: &Projector,
    seg: &GeodesicSegment<f64>,
    ta: f64,
    pa: PixelPoint<f64>,
    tb: f64,
    pb: PixelPoint<f64>,
    out: &mut Vec<PixelPoint<f64>>,
    depth: u32,
) {
    if depth < 12 && proj.model.pixel_distance(&pa, &pb) > MAX_DRAW_STEP_PX {
        let tm = 0.5 * (ta + tb);
        if let Some(pm) = proj.pixel(&seg.point_at(tm)) {
            subdivide(proj, seg, ta, pa, tm, pm, out, depth + 1);
            subdivide(proj, seg, tm, pm, tb, pb, out, depth + 1);
            return;
        }
    }
    out.push(pb);
}

/// Adds an anti-aliased stroke along the chord `a..b` (max-composited).
fn stamp(
    coverage: &mut [f32],
    width: usize,
    height: usize,
    wrap: bool,
    a: &PixelPoint<f64>,
    b: &PixelPoint<f64>,
    stroke: f64,
) {
    let w = width as f64;
    let mut bx = b.x;
    if wrap {
        while bx - a.x > 0.5 * w {
            bx -= w;
        }
        while a.x - bx > 0.5 * w {
            bx += w;
        }
    }
    let half = 0.5 * stroke;
    let reach = half + 1.0;
    let x0 = (a.x.min(bx) - reach).floor() as i64;
    let x1 = (a.x.max(bx) + reach).ceil() as i64;
    let y0 = ((a.y.min(b.y) - reach).floor() as i64).max(0);
    let y1 = ((a.y.max(b.y) + reach).ceil() as i64).min(height as i64 - 1);
    let (dx, dy) = (bx - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let xi = if wrap {
                x.rem_euclid(width as i64)
            } else if x < 0 || x >= width as i64 {
                continue;
            } else {
                x
            };
            let (px, py) = (x as f64 - a.x, y as f64 - a.y);
            let t = if len2 > 0.0 { ((px * dx + py * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let dist = ((px - t * dx).powi(2) + (py - t * dy).powi(2)).sqrt();
            let c = (half + 0.5 - dist).clamp(0.0, 1.0) as f32;
            let cell = &mut coverage[y as usize * width + xi as usize];
            if c > *cell {
                *cell = c;
            }
        }
    }
}

/// Random rotation with a uniformly distributed axis and an angle uniform in
/// `[0, max_deg]`.
pub fn sample_rotation(rng: &mut impl Rng, max_deg: f64) -> UnitQuaternion<f64> {
    let axis = loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-9 {
            break Unit::new_normalize(v);
        }
    };
    let angle = rng.random_range(0.0..=max_deg).to_radians();
    UnitQuaternion::from_axis_angle(&axis, angle)
}

/// Image size for `model`, falling back to `default` when the model does not
/// carry one.
pub fn image_size_for(model: &CameraModel<f64>, default: (usize, usize)) -> (usize, usize) {
    model.image_size().map(|(w, h)| (w as usize, h as usize)).unwrap_or(default)
}

/// Shape of a seeded bundle-adjustment scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaSceneSpec {
    pub n_poses: usize,
    pub n_points: usize,
    pub n_lines: usize,
    /// Relative perturbation applied to the initial estimate.
    pub perturbation: f64,
    /// Fraction of point observations replaced by gross outliers.
    pub outlier_fraction: f64,
    pub outlier_deg: f64,
}

impl Default for BaSceneSpec {
    fn default() -> Self {
        BaSceneSpec { n_poses: 5, n_points: 100, n_lines: 30, perturbation: 0.05, outlier_fraction: 0.0, outlier_deg: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaScenario {
    /// Ground-truth states with (possibly corrupted) observations.
    pub truth: BaProblem<f64>,
    /// Perturbed starting point; gauge-fixed components keep their true values.
    pub initial: BaProblem<f64>,
    pub scale: f64,
}

/// Radius of the circle the camera centres are placed on.
pub const BA_RIG_RADIUS: f64 = 1.0;

fn sample_in_shell(rng: &mut ChaCha8Rng, bounds: &Bounds, min_radius: f64) -> Vector3<f64> {
    loop {
        let p = Vector3::from_fn(|k, _| rng.random_range(bounds.min[k]..bounds.max[k]));
        if p.norm() >= min_radius {
            return p;
        }
    }
}

fn rotate_off(rng: &mut ChaCha8Rng, b: &Vector3<f64>, deg: f64) -> Vector3<f64> {
    let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    let axis = Unit::new_normalize(b.cross(&v));
    UnitQuaternion::from_axis_angle(&axis, deg.to_radians()) * b
}

/// Cameras on a circle around the origin looking in random directions;
/// points and lines filling the default scene box. Every point is observed
/// from all frames but its host, every line from all frames.
pub fn gen_ba_problem(seed: u64, spec: &BaSceneSpec) -> BaScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = Bounds::default();
    let min_radius = 2.0 * bounds.keep_out_radius;
    let n_poses = spec.n_poses.max(2);
    let poses: Vec<Pose<f64>> = (0..n_poses)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n_poses as f64;
            let c = Vector3::new(a.cos(), a.sin(), 0.2 * (2.0 * a).sin()) * BA_RIG_RADIUS;
            Pose::new(sample_rotation(&mut rng, 180.0), c)
        })
        .collect();
    let bearing_in = |pose: &Pose<f64>, x: &Vector3<f64>| Bearing::new_unchecked((pose.inverse().transform_point(x)).normalize());

    let mut points = Vec::with_capacity(spec.n_points);
    let mut point_obs = Vec::new();
    for k in 0..spec.n_points {
        let x = sample_in_shell(&mut rng, &bounds, min_radius);
        let host = rng.random_range(0..n_poses);
        let local = poses[host].inverse().transform_point(&x);
        points.push(PointFeature { host_frame: host, host_bearing: Bearing::new_unchecked(local.normalize()), lambda: 1.0 / local.norm() });
        for (f, pose) in poses.iter().enumerate() {
            if f != host {
                point_obs.push(PointObs { frame: f, point: k, bearing: bearing_in(pose, &x), weight: 1.0 });
            }
        }
    }
    let mut lines = Vec::with_capacity(spec.n_lines);
    let mut line_obs = Vec::new();
    while lines.len() < spec.n_lines {
        let a = sample_in_shell(&mut rng, &bounds, min_radius);
        let b = sample_in_shell(&mut rng, &bounds, min_radius);
        let Ok(pl) = PluckerLine::through_points(&a, &b) else { continue };
        if (a - b).norm() < MIN_SEGMENT_LENGTH || pl.distance_to_origin() < min_radius {
            continue;
        }
        let Ok(o) = plucker_to_orthonormal(&pl) else { continue };
        let id = lines.len();
        lines.push(o);
        for (f, pose) in poses.iter().enumerate() {
            let obs = LineObservation { frame: f, start: bearing_in(pose, &a), end: bearing_in(pose, &b) };
            line_obs.push(LineObs { line: id, obs, weight: 1.0 });
        }
    }
    let n_out = (spec.outlier_fraction * point_obs.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..point_obs.len()).collect();
    for i in 0..n_out.min(idx.len()) {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
        let o = &mut point_obs[idx[i]];
        o.bearing = Bearing::new_unchecked(rotate_off(&mut rng, o.bearing.as_vector(), spec.outlier_deg));
    }

    let mut truth = BaProblem {
        poses: poses.clone(),
        fixed: vec![FixedMask::FREE; n_poses],
        points,
        lines,
        point_obs,
        line_obs,
        gt_poses: Some(poses),
    };
    truth.fix_gauge();

    let sigma = spec.perturbation;
    let mut initial = truth.clone();
    let mut gauss = |s: f64| -> f64 { Normal::new(0.0, s).map(|n| n.sample(&mut rng)).unwrap_or(0.0) };
    for (pose, mask) in initial.poses.iter_mut().zip(&truth.fixed) {
        let mut d = nalgebra::Vector6::zeros();
        for k in 0..6 {
            let s = if k < 3 { sigma } else { sigma * BA_RIG_RADIUS };
            let v = gauss(s);
            if !mask.0[k] {
                d[k] = v;
            }
        }
        let next = pose.retract(&d);
        let keep_q = mask.0[..3].iter().all(|&f| f);
        pose.t = Vector3::from_fn(|k, _| if mask.0[3 + k] { pose.t[k] } else { next.t[k] });
        if !keep_q {
            pose.q = next.q;
        }
    }
    for pt in initial.points.iter_mut() {
        pt.lambda *= (1.0 + gauss(sigma)).max(0.5);
    }
    for l in initial.lines.iter_mut() {
        let d = nalgebra::Vector4::new(gauss(sigma), gauss(sigma), gauss(sigma), gauss(sigma) * l.phi);
        *l = l.plus(&d);
    }
    BaScenario { truth, initial, scale: bounds.scale() }
}
