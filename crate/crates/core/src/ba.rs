//! Robust point-line bundle adjustment on the unit sphere: inverse-distance
//! points, orthonormal lines, Huber loss and Levenberg-Marquardt.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SMatrix, UnitQuaternion, Vector2, Vector3, Vector4, Vector6};
use rayon::prelude::*;
use serde::Serialize;

use crate::camera::Bearing;
use crate::line::{line_residual_jacobian, LineError, LineObservation, OrthonormalLine, Pose};
use crate::scalar::Real;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum BaError {
    #[error("point projects onto the camera centre")]
    PointAtCameraCenter,
    #[error(transparent)]
    Line(#[from] LineError),
    #[error("normal equations are singular")]
    SingularNormalEquations,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Point parameterized by inverse distance along its first-observation
/// bearing in the host frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFeature<T: Real> {
    pub host_frame: usize,
    pub host_bearing: Bearing<T>,
    pub lambda: T,
}

impl<T: Real> PointFeature<T> {
    pub fn world_point(&self, host: &Pose<T>) -> Vector3<T> {
        host.transform_point(&(self.host_bearing.as_vector() / self.lambda))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointObs<T: Real> {
    pub frame: usize,
    pub point: usize,
    pub bearing: Bearing<T>,
    pub weight: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineObs<T: Real> {
    pub line: usize,
    pub obs: LineObservation<T>,
    pub weight: T,
}

/// Per-pose gauge mask over the tangent coordinates `[rx, ry, rz, tx, ty, tz]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FixedMask(pub [bool; 6]);

impl FixedMask {
    pub const FREE: FixedMask = FixedMask([false; 6]);
    pub const ALL: FixedMask = FixedMask([true; 6]);

    pub fn is_fully_fixed(&self) -> bool {
        self.0.iter().all(|&f| f)
    }

    /// Six `0`/`1` characters.
    pub fn parse(s: &str) -> Option<Self> {
        let b = s.as_bytes();
        if b.len() != 6 {
            return None;
        }
        let mut m = [false; 6];
        for (k, c) in b.iter().enumerate() {
            m[k] = match c {
                b'0' => false,
                b'1' => true,
                _ => return None,
            };
        }
        Some(FixedMask(m))
    }

    pub fn to_flags(&self) -> String {
        self.0.iter().map(|&f| if f { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaProblem<T: Real> {
    pub poses: Vec<Pose<T>>,
    pub fixed: Vec<FixedMask>,
    pub points: Vec<PointFeature<T>>,
    pub lines: Vec<OrthonormalLine<T>>,
    pub point_obs: Vec<PointObs<T>>,
    pub line_obs: Vec<LineObs<T>>,
    /// Reference poses used for trajectory error reporting.
    pub gt_poses: Option<Vec<Pose<T>>>,
}

impl<T: Real> BaProblem<T> {
    pub fn validate(&self) -> Result<(), BaError> {
        let bad = |m: String| Err(BaError::InvalidProblem(m));
        if self.fixed.len() != self.poses.len() {
            return bad("fixed mask count differs from pose count".into());
        }
        if !self.fixed.iter().any(FixedMask::is_fully_fixed) {
            return bad("no fully fixed pose".into());
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.host_frame >= self.poses.len() {
                return bad(format!("point {i} references missing frame {}", p.host_frame));
            }
            if !(p.lambda > T::zero()) {
                return bad(format!("point {i} has non-positive inverse distance"));
            }
        }
        for o in &self.point_obs {
            if o.frame >= self.poses.len() || o.point >= self.points.len() {
                return bad(format!("point observation ({}, {}) references a missing entity", o.frame, o.point));
            }
        }
        for o in &self.line_obs {
            if o.obs.frame >= self.poses.len() || o.line >= self.lines.len() {
                return bad(format!("line observation ({}, {}) references a missing entity", o.obs.frame, o.line));
            }
        }
        if let Some(gt) = &self.gt_poses {
            if gt.len() != self.poses.len() {
                return bad("GT pose count differs from pose count".into());
            }
        }
        Ok(())
    }

    /// Freezes pose 0 and the largest-baseline translation coordinate of
    /// pose 1 (rotation, translation and scale gauge).
    pub fn fix_gauge(&mut self) {
        for m in self.fixed.iter_mut() {
            *m = FixedMask::FREE;
        }
        if let Some(m) = self.fixed.first_mut() {
            *m = FixedMask::ALL;
        }
        if self.poses.len() > 1 {
            let b = self.poses[1].t - self.poses[0].t;
            let k = (0..3).max_by(|&i, &j| b[i].abs().partial_cmp(&b[j].abs()).unwrap_or(Ordering::Equal)).unwrap_or(0);
            self.fixed[1].0[3 + k] = true;
        }
    }

    /// Root-mean-square camera-centre distance to the reference poses.
    pub fn ate(&self) -> Option<T> {
        let gt = self.gt_poses.as_ref()?;
        if gt.is_empty() || gt.len() != self.poses.len() {
            return None;
        }
        let sum = self.poses.iter().zip(gt).fold(T::zero(), |acc, (p, g)| acc + (p.t - g.t).norm_squared());
        Some((sum / T::lit(gt.len() as f64)).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T: Real> {
    pub max_iters: usize,
    pub huber_delta_point: T,
    pub huber_delta_line: T,
    pub lm_lambda_init: T,
    pub cost_tol: T,
    pub gradient_tol: T,
    /// Evaluates residual blocks on the rayon pool. Assembly order is
    /// unchanged, so results match the serial path.
    pub parallel: bool,
}

/// 1.5 px at a 300 px focal length, in radians.
pub const DEFAULT_HUBER_DELTA: f64 = 1.5 / 300.0;

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            max_iters: 100,
            huber_delta_point: T::lit(DEFAULT_HUBER_DELTA),
            huber_delta_line: T::lit(DEFAULT_HUBER_DELTA),
            lm_lambda_init: T::lit(1e-4),
            cost_tol: T::lit(1e-10),
            gradient_tol: T::lit(1e-10),
            parallel: false,
        }
    }
}

impl<T: Real> SolveOptions<T> {
    /// Plain squared loss.
    pub fn quadratic(mut self) -> Self {
        self.huber_delta_point = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
        self.huber_delta_line = self.huber_delta_point;
        self
    }

    pub fn validate(&self) -> Result<(), BaError> {
        let pos = |v: T| v > T::zero();
        if self.max_iters == 0
            || !pos(self.huber_delta_point)
            || !pos(self.huber_delta_line)
            || !pos(self.lm_lambda_init)
            || !pos(self.cost_tol)
            || !pos(self.gradient_tol)
        {
            return Err(BaError::InvalidProblem("solver options must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientConverged,
    CostConverged,
    /// Iteration budget exhausted with the gradient above tolerance; the
    /// best iterate is returned.
    NonConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub costs: Vec<f64>,
    pub gradient_norm: f64,
    pub termination: Termination,
    pub ate: Option<f64>,
}

/// Huber cost on a squared norm and its derivative with respect to `r2`.
pub fn huber<T: Real>(r2: T, delta: T) -> (T, T) {
    let r = r2.sqrt();
    if r <= delta {
        (r2, T::one())
    } else {
        (T::lit(2.0) * delta * r - delta * delta, delta / r)
    }
}

/// Orthonormal tangent basis at `b` built from the axis of its smallest
/// absolute component.
pub fn tangent_basis<T: Real>(b: &Vector3<T>) -> (Vector3<T>, Vector3<T>) {
    let a = b.map(|v| v.abs());
    let axis = if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let b1 = b.cross(&axis).normalize();
    let b2 = b.cross(&b1);
    (b1, b2)
}

pub type PointJacobian<T> = SMatrix<T, 2, 13>;

fn skew<T: Real>(v: &Vector3<T>) -> nalgebra::Matrix3<T> {
    nalgebra::Matrix3::new(T::zero(), -v.z, v.y, v.z, T::zero(), -v.x, -v.y, v.x, T::zero())
}

pub fn point_residual<T: Real>(
    pose_host: &Pose<T>,
    pose_target: &Pose<T>,
    feat: &PointFeature<T>,
    observed: &Bearing<T>,
) -> Result<Vector2<T>, BaError> {
    point_residual_jacobian(pose_host, pose_target, feat, observed, false).map(|(r, _)| r)
}

/// Residual and Jacobian with respect to
/// `[dtheta_host, dt_host, dtheta_target, dt_target, dlambda]`. When host
/// and target are the same frame, pass `same_frame` so the pose columns
/// vanish exactly.
pub fn point_residual_jacobian<T: Real>(
    pose_host: &Pose<T>,
    pose_target: &Pose<T>,
    feat: &PointFeature<T>,
    observed: &Bearing<T>,
    same_frame: bool,
) -> Result<(Vector2<T>, PointJacobian<T>), BaError> {
    if !(feat.lambda > T::zero()) {
        return Err(BaError::InvalidProblem("non-positive inverse distance".into()));
    }
    let bh = *feat.host_bearing.as_vector();
    let local = bh / feat.lambda;
    let rh = pose_host.rotation();
    let rt_t = pose_target.rotation().transpose();
    let pc = if same_frame { local } else { rt_t * (rh * local + pose_host.t - pose_target.t) };
    let norm = pc.norm();
    if norm <= T::lit(1e-12) {
        return Err(BaError::PointAtCameraCenter);
    }
    let pred = pc / norm;
    let obs = *observed.as_vector();
    let (b1, b2) = tangent_basis(&obs);
    let diff = pred - obs;
    let res = Vector2::new(b1.dot(&diff), b2.dot(&diff));

    let proj = (nalgebra::Matrix3::identity() - pred * pred.transpose()) / norm;
    let basis = SMatrix::<T, 2, 3>::from_rows(&[b1.transpose(), b2.transpose()]);
    let dr_dpc = basis * proj;
    let mut jac = PointJacobian::zeros();
    let dpc_dlambda = if same_frame { -bh / (feat.lambda * feat.lambda) } else { -(rt_t * rh * bh) / (feat.lambda * feat.lambda) };
    jac.fixed_view_mut::<2, 1>(0, 12).copy_from(&(dr_dpc * dpc_dlambda));
    if !same_frame {
        // host: X_w = R_h Exp(dtheta) x + t_h
        let dpc_dth = rt_t * rh * (-skew(&local));
        jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dr_dpc * dpc_dth));
        jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&(dr_dpc * rt_t));
        // target: X_c = Exp(-dtheta) R_t^T (X_w - t_t)
        jac.fixed_view_mut::<2, 3>(0, 6).copy_from(&(dr_dpc * skew(&pc)));
        jac.fixed_view_mut::<2, 3>(0, 9).copy_from(&(dr_dpc * (-rt_t)));
    }
    Ok((res, jac))
}

/// Column offsets of the free parameters.
struct Layout {
    pose_cols: Vec<[Option<usize>; 6]>,
    point_col: Vec<usize>,
    line_col: Vec<usize>,
    dim: usize,
}

impl Layout {
    fn new<T: Real>(p: &BaProblem<T>) -> Self {
        let mut dim = 0;
        let pose_cols = p
            .fixed
            .iter()
            .map(|m| {
                let mut c = [None; 6];
                for (k, slot) in c.iter_mut().enumerate() {
                    if !m.0[k] {
                        *slot = Some(dim);
                        dim += 1;
                    }
                }
                c
            })
            .collect();
        let point_col = (0..p.points.len()).map(|i| dim + i).collect();
        dim += p.points.len();
        let line_col = (0..p.lines.len()).map(|i| dim + 4 * i).collect();
        dim += 4 * p.lines.len();
        Layout { pose_cols, point_col, line_col, dim }
    }
}

/// Residual block: squared-norm contribution plus sparse Jacobian rows.
struct Block<T: Real> {
    res: Vector2<T>,
    cols: Vec<(usize, Vector2<T>)>,
    weight: T,
    delta: T,
}

fn cmp_bearing<T: Real>(a: &Bearing<T>, b: &Bearing<T>) -> Ordering {
    let (a, b) = (a.as_vector(), b.as_vector());
    for k in 0..3 {
        match a[k].partial_cmp(&b[k]) {
            Some(Ordering::Equal) | None => {}
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

fn canonical_order<T: Real>(p: &BaProblem<T>) -> (Vec<usize>, Vec<usize>) {
    let mut po: Vec<usize> = (0..p.point_obs.len()).collect();
    po.sort_by(|&i, &j| {
        let (a, b) = (&p.point_obs[i], &p.point_obs[j]);
        (a.frame, a.point)
            .cmp(&(b.frame, b.point))
            .then_with(|| cmp_bearing(&a.bearing, &b.bearing))
            .then_with(|| a.weight.partial_cmp(&b.weight).unwrap_or(Ordering::Equal))
    });
    let mut lo: Vec<usize> = (0..p.line_obs.len()).collect();
    lo.sort_by(|&i, &j| {
        let (a, b) = (&p.line_obs[i], &p.line_obs[j]);
        (a.obs.frame, a.line)
            .cmp(&(b.obs.frame, b.line))
            .then_with(|| cmp_bearing(&a.obs.start, &b.obs.start))
            .then_with(|| cmp_bearing(&a.obs.end, &b.obs.end))
            .then_with(|| a.weight.partial_cmp(&b.weight).unwrap_or(Ordering::Equal))
    });
    (po, lo)
}

fn point_block<T: Real>(p: &BaProblem<T>, lay: &Layout, o: &PointObs<T>, delta: T) -> Result<Block<T>, BaError> {
    let feat = &p.points[o.point];
    let same = feat.host_frame == o.frame;
    let (res, jac) = point_residual_jacobian(&p.poses[feat.host_frame], &p.poses[o.frame], feat, &o.bearing, same)?;
    let mut cols = Vec::with_capacity(13);
    if !same {
        for (frame, off) in [(feat.host_frame, 0), (o.frame, 6)] {
            for k in 0..6 {
                if let Some(c) = lay.pose_cols[frame][k] {
                    cols.push((c, jac.column(off + k).into_owned()));
                }
            }
        }
    }
    cols.push((lay.point_col[o.point], jac.column(12).into_owned()));
    Ok(Block { res, cols, weight: o.weight, delta })
}

fn line_block<T: Real>(p: &BaProblem<T>, lay: &Layout, o: &LineObs<T>, delta: T) -> Result<Block<T>, BaError> {
    let frame = o.obs.frame;
    let (res, jac) = line_residual_jacobian(&p.lines[o.line], &p.poses[frame], &o.obs, false)?;
    let mut cols = Vec::with_capacity(10);
    for k in 0..6 {
        if let Some(c) = lay.pose_cols[frame][k] {
            cols.push((c, jac.column(k).into_owned()));
        }
    }
    for k in 0..4 {
        cols.push((lay.line_col[o.line] + k, jac.column(6 + k).into_owned()));
    }
    Ok(Block { res, cols, weight: o.weight, delta })
}

struct Linearization<T: Real> {
    cost: T,
    h: DMatrix<T>,
    g: DVector<T>,
}

fn blocks<T: Real>(
    p: &BaProblem<T>,
    lay: &Layout,
    order: &(Vec<usize>, Vec<usize>),
    opts: &SolveOptions<T>,
) -> Result<Vec<Block<T>>, BaError> {
    let pb = |&i: &usize| point_block(p, lay, &p.point_obs[i], opts.huber_delta_point);
    let lb = |&i: &usize| line_block(p, lay, &p.line_obs[i], opts.huber_delta_line);
    type Blocks<T> = Vec<Result<Block<T>, BaError>>;
    let (mut a, b): (Blocks<T>, Blocks<T>) = if opts.parallel {
        (order.0.par_iter().map(pb).collect(), order.1.par_iter().map(lb).collect())
    } else {
        (order.0.iter().map(pb).collect(), order.1.iter().map(lb).collect())
    };
    a.extend(b);
    a.into_iter().collect()
}

fn total_cost<T: Real>(bl: &[Block<T>]) -> T {
    bl.iter().fold(T::zero(), |acc, b| acc + b.weight * huber(b.res.norm_squared(), b.delta).0)
}

fn linearize<T: Real>(bl: &[Block<T>], dim: usize) -> Linearization<T> {
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    let mut cost = T::zero();
    for b in bl {
        let (c, w) = huber(b.res.norm_squared(), b.delta);
        cost += b.weight * c;
        let w = w * b.weight;
        for (ci, ji) in &b.cols {
            g[*ci] += w * ji.dot(&b.res);
            for (cj, jj) in &b.cols {
                h[(*ci, *cj)] += w * ji.dot(jj);
            }
        }
    }
    Linearization { cost, h, g }
}

fn apply_step<T: Real>(p: &BaProblem<T>, lay: &Layout, step: &DVector<T>) -> BaProblem<T> {
    let mut out = p.clone();
    for (i, pose) in out.poses.iter_mut().enumerate() {
        let cols = &lay.pose_cols[i];
        if cols.iter().all(Option::is_none) {
            continue;
        }
        let mut d = Vector6::zeros();
        for k in 0..6 {
            if let Some(c) = cols[k] {
                d[k] = step[c];
            }
        }
        let mut next = pose.retract(&d);
        // keep frozen coordinates bit-identical
        for k in 0..3 {
            if cols[3 + k].is_none() {
                next.t[k] = pose.t[k];
            }
        }
        if cols[..3].iter().all(Option::is_none) {
            next.q = pose.q;
        }
        *pose = next;
    }
    for (i, pt) in out.points.iter_mut().enumerate() {
        pt.lambda += step[lay.point_col[i]];
    }
    for (i, l) in out.lines.iter_mut().enumerate() {
        let c = lay.line_col[i];
        *l = l.plus(&Vector4::new(step[c], step[c + 1], step[c + 2], step[c + 3]));
    }
    out
}

fn inf_norm<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Levenberg-Marquardt on the Huber-reweighted point and line residuals.
pub fn solve<T: Real>(problem: &BaProblem<T>, opts: &SolveOptions<T>) -> Result<(BaProblem<T>, SolveReport), BaError> {
    problem.validate()?;
    opts.validate()?;
    let lay = Layout::new(problem);
    let order = canonical_order(problem);
    let mut cur = problem.clone();
    let mut lin = linearize(&blocks(&cur, &lay, &order, opts)?, lay.dim);
    let initial = lin.cost;
    let mut costs = vec![initial.as_f64()];
    let mut mu = opts.lm_lambda_init;
    let mut iterations = 0;
    let mut termination = Termination::NonConvergence;
    let floor = T::lit(1e-12);

    while iterations < opts.max_iters {
        if lay.dim == 0 || inf_norm(&lin.g) < opts.gradient_tol {
            termination = Termination::GradientConverged;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        let mut converged = false;
        let mut factorized = false;
        while mu < T::lit(1e16) {
            let mut a = lin.h.clone();
            for k in 0..lay.dim {
                a[(k, k)] += mu * lin.h[(k, k)].max(floor);
            }
            let Some(ch) = a.cholesky() else {
                mu *= T::lit(10.0);
                continue;
            };
            factorized = true;
            let step = ch.solve(&(-&lin.g));
            let cand = apply_step(&cur, &lay, &step);
            let cand_cost = blocks(&cand, &lay, &order, opts).ok().map(|bl| total_cost(&bl));
            match cand_cost {
                Some(c) if c < lin.cost => {
                    let rel = (lin.cost - c) / lin.cost;
                    cur = cand;
                    lin = linearize(&blocks(&cur, &lay, &order, opts)?, lay.dim);
                    costs.push(lin.cost.as_f64());
                    mu = (mu / T::lit(10.0)).max(T::lit(1e-15));
                    accepted = true;
                    converged = rel < opts.cost_tol;
                    break;
                }
                _ => mu *= T::lit(10.0),
            }
        }
        if !factorized {
            return Err(BaError::SingularNormalEquations);
        }
        if !accepted {
            // no damping level lowers the cost any further
            termination = Termination::CostConverged;
            break;
        }
        if converged {
            termination = Termination::CostConverged;
            break;
        }
        if inf_norm(&lin.g) < opts.gradient_tol {
            termination = Termination::GradientConverged;
            break;
        }
    }
    let report = SolveReport {
        iterations,
        initial_cost: initial.as_f64(),
        final_cost: lin.cost.as_f64(),
        costs,
        gradient_norm: inf_norm(&lin.g).as_f64(),
        termination,
        ate: cur.ate().map(|v| v.as_f64()),
    };
    Ok((cur, report))
}

fn parse_floats(toks: &[&str], line: usize) -> Result<Vec<f64>, BaError> {
    toks.iter()
        .map(|t| t.parse::<f64>().map_err(|_| BaError::Parse { line, msg: format!("bad number `{t}`") }))
        .collect()
}

fn parse_index(t: &str, line: usize) -> Result<usize, BaError> {
    t.parse::<usize>().map_err(|_| BaError::Parse { line, msg: format!("bad index `{t}`") })
}

// Already-unit inputs are kept verbatim so that parse/write round trips.
fn bearing_from(v: &[f64], line: usize) -> Result<Bearing<f64>, BaError> {
    let v = Vector3::new(v[0], v[1], v[2]);
    if (v.norm() - 1.0).abs() < 1e-12 {
        return Ok(Bearing::new_unchecked(v));
    }
    Bearing::from_vector(v).ok_or_else(|| BaError::Parse { line, msg: "zero bearing".into() })
}

fn pose_from(v: &[f64], line: usize) -> Result<Pose<f64>, BaError> {
    let q = nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]);
    if !(q.norm() > 1e-12) {
        return Err(BaError::Parse { line, msg: "zero quaternion".into() });
    }
    let q = if (q.norm() - 1.0).abs() < 1e-12 { UnitQuaternion::new_unchecked(q) } else { UnitQuaternion::from_quaternion(q) };
    Ok(Pose::new(q, Vector3::new(v[4], v[5], v[6])))
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Poses,
    Points,
    Lines,
    PointObs,
    LineObs,
    Gt,
}

/// Parses the sectioned text problem format. Ids must be `0..n` in order
/// within each entity section.
pub fn parse_problem(text: &str) -> Result<BaProblem<f64>, BaError> {
    let mut p = BaProblem {
        poses: vec![],
        fixed: vec![],
        points: vec![],
        lines: vec![],
        point_obs: vec![],
        line_obs: vec![],
        gt_poses: None,
    };
    let mut section = Section::None;
    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        let toks: Vec<&str> = s.split_whitespace().collect();
        let header = match toks[0] {
            "POSES" => Some(Section::Poses),
            "POINTS" => Some(Section::Points),
            "LINES" => Some(Section::Lines),
            "POINT_OBS" => Some(Section::PointObs),
            "LINE_OBS" => Some(Section::LineObs),
            "GT" => Some(Section::Gt),
            _ => None,
        };
        if let Some(h) = header {
            if toks.len() != 1 {
                return Err(BaError::Parse { line: ln, msg: "section header takes no arguments".into() });
            }
            section = h;
            if h == Section::Gt {
                p.gt_poses.get_or_insert_with(Vec::new);
            }
            continue;
        }
        let want = match section {
            Section::None => return Err(BaError::Parse { line: ln, msg: "data before any section header".into() }),
            Section::Poses => 9,
            Section::Points => 6,
            Section::Lines => 5,
            Section::PointObs => 5,
            Section::LineObs => 8,
            Section::Gt => 8,
        };
        if toks.len() != want {
            return Err(BaError::Parse { line: ln, msg: format!("expected {want} fields, found {}", toks.len()) });
        }
        let id = parse_index(toks[0], ln)?;
        let sequential = |n: usize| {
            if id == n {
                Ok(())
            } else {
                Err(BaError::Parse { line: ln, msg: format!("expected id {n}, found {id}") })
            }
        };
        match section {
            Section::Poses => {
                sequential(p.poses.len())?;
                let v = parse_floats(&toks[1..8], ln)?;
                p.poses.push(pose_from(&v, ln)?);
                let m = FixedMask::parse(toks[8])
                    .ok_or_else(|| BaError::Parse { line: ln, msg: "fixed_flags must be six 0/1 characters".into() })?;
                p.fixed.push(m);
            }
            Section::Points => {
                sequential(p.points.len())?;
                let host = parse_index(toks[1], ln)?;
                let v = parse_floats(&toks[2..6], ln)?;
                p.points.push(PointFeature { host_frame: host, host_bearing: bearing_from(&v, ln)?, lambda: v[3] });
            }
            Section::Lines => {
                sequential(p.lines.len())?;
                let v = parse_floats(&toks[1..5], ln)?;
                p.lines.push(OrthonormalLine { psi: Vector3::new(v[0], v[1], v[2]), phi: v[3] });
            }
            Section::PointObs => {
                let point = parse_index(toks[1], ln)?;
                let v = parse_floats(&toks[2..5], ln)?;
                p.point_obs.push(PointObs { frame: id, point, bearing: bearing_from(&v, ln)?, weight: 1.0 });
            }
            Section::LineObs => {
                let line = parse_index(toks[1], ln)?;
                let v = parse_floats(&toks[2..8], ln)?;
                let obs = LineObservation { frame: id, start: bearing_from(&v[..3], ln)?, end: bearing_from(&v[3..], ln)? };
                p.line_obs.push(LineObs { line, obs, weight: 1.0 });
            }
            Section::Gt => {
                let gt = p.gt_poses.get_or_insert_with(Vec::new);
                sequential(gt.len())?;
                let v = parse_floats(&toks[1..8], ln)?;
                gt.push(pose_from(&v, ln)?);
            }
            Section::None => unreachable!(),
        }
    }
    p.validate()?;
    Ok(p)
}

/// Inverse of [`parse_problem`]; floats use shortest round-trip notation.
pub fn write_problem(p: &BaProblem<f64>) -> String {
    let mut s = String::new();
    let pose = |s: &mut String, i: usize, x: &Pose<f64>| {
        let q = x.q.quaternion();
        let _ = write!(s, "{i} {} {} {} {} {} {} {}", q.w, q.i, q.j, q.k, x.t.x, x.t.y, x.t.z);
    };
    s.push_str("POSES\n");
    for (i, x) in p.poses.iter().enumerate() {
        pose(&mut s, i, x);
        let _ = writeln!(s, " {}", p.fixed[i].to_flags());
    }
    s.push_str("POINTS\n");
    for (i, f) in p.points.iter().enumerate() {
        let b = f.host_bearing.as_vector();
        let _ = writeln!(s, "{i} {} {} {} {} {}", f.host_frame, b.x, b.y, b.z, f.lambda);
    }
    s.push_str("LINES\n");
    for (i, l) in p.lines.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {} {}", l.psi.x, l.psi.y, l.psi.z, l.phi);
    }
    s.push_str("POINT_OBS\n");
    for o in &p.point_obs {
        let b = o.bearing.as_vector();
        let _ = writeln!(s, "{} {} {} {} {}", o.frame, o.point, b.x, b.y, b.z);
    }
    s.push_str("LINE_OBS\n");
    for o in &p.line_obs {
        let (a, b) = (o.obs.start.as_vector(), o.obs.end.as_vector());
        let _ = writeln!(s, "{} {} {} {} {} {} {} {}", o.obs.frame, o.line, a.x, a.y, a.z, b.x, b.y, b.z);
    }
    if let Some(gt) = &p.gt_poses {
        s.push_str("GT\n");
        for (i, x) in gt.iter().enumerate() {
            pose(&mut s, i, x);
            s.push('\n');
        }
    }
    s
}
