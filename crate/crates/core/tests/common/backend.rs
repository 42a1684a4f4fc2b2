//! Seeded worst-case measurements of the line back end and the point
//! residual, shared by the back-end, solver and acceptance tests.

use geoseg::ba::{point_residual, point_residual_jacobian, PointFeature};
use geoseg::camera::Bearing;
use geoseg::line::*;
use nalgebra::{UnitQuaternion, Vector3, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose<f64> {
    Pose::new(UnitQuaternion::from_scaled_axis(rand_vec(rng, 1.5)), rand_vec(rng, 2.0))
}

pub fn random_line(rng: &mut ChaCha8Rng) -> PluckerLine<f64> {
    loop {
        let a = rand_vec(rng, 5.0);
        let b = rand_vec(rng, 5.0);
        if (a - b).norm() > 0.5 {
            if let Ok(l) = PluckerLine::through_points(&a, &b) {
                if l.distance_to_origin() > 0.2 {
                    return l;
                }
            }
        }
    }
}

/// Observation of the world segment `a..b` from `pose`.
pub fn observe(pose: &Pose<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<LineObservation<f64>> {
    let inv = pose.inverse();
    Some(LineObservation {
        frame: 0,
        start: Bearing::from_vector(inv.transform_point(a))?,
        end: Bearing::from_vector(inv.transform_point(b))?,
    })
}

/// Relative error with an absolute floor for entries near zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Worst coordinate error of Plücker -> orthonormal -> Plücker.
pub fn orthonormal_round_trip_worst(seed: u64, lines: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..lines)
        .map(|_| {
            let l = random_line(&mut rng);
            let back = orthonormal_to_plucker(&plucker_to_orthonormal(&l).unwrap());
            (back.normalized_coords() - l.normalized_coords()).amax()
        })
        .fold(0.0, f64::max)
}

/// Worst `|n·d| / (|n| |d|)` after random rigid transforms.
pub fn plucker_constraint_worst(seed: u64, lines: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..lines)
        .map(|_| {
            let l = random_line(&mut rng);
            let t = transform_line(&random_pose(&mut rng), &l);
            t.moment().dot(t.direction()).abs() / (t.moment().norm().max(1e-300) * t.direction().norm())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TriangulationWorst {
    pub direction: f64,
    pub distance: f64,
    pub residual: f64,
}

/// Noise-free two-view triangulation of random segments in front of the rig.
pub fn triangulation_worst(seed: u64, cases: usize) -> TriangulationWorst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = TriangulationWorst::default();
    let mut checked = 0;
    while checked < cases {
        let a = rand_vec(&mut rng, 5.0) + Vector3::new(0.0, 0.0, 8.0);
        let b = rand_vec(&mut rng, 5.0) + Vector3::new(0.0, 0.0, 8.0);
        let p1 = random_pose(&mut rng);
        let p2 = random_pose(&mut rng);
        let (Some(o1), Some(o2)) = (observe(&p1, &a, &b), observe(&p2, &a, &b)) else { continue };
        let Ok(l) = triangulate_line(&o1, &p1, &o2, &p2) else { continue };
        let truth = PluckerLine::through_points(&a, &b).unwrap();
        w.direction = w.direction.max(l.direction().cross(truth.direction()).norm());
        w.distance = w.distance.max((l.distance_to_origin() - truth.distance_to_origin()).abs());
        for (pose, obs) in [(&p1, &o1), (&p2, &o2)] {
            w.residual = w.residual.max(line_residual(&l, pose, obs).unwrap().amax());
        }
        checked += 1;
    }
    w
}

/// Worst residual change when the line coordinates are rescaled.
pub fn scale_invariance_worst(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let l = random_line(&mut rng);
            let pose = random_pose(&mut rng);
            let obs = LineObservation {
                frame: 0,
                start: Bearing::from_vector(rand_vec(&mut rng, 1.0)).unwrap(),
                end: Bearing::from_vector(rand_vec(&mut rng, 1.0)).unwrap(),
            };
            let s = rng.random_range(0.1..10.1);
            let scaled = PluckerLine::new(l.moment() * s, l.direction() * s).unwrap();
            (line_residual(&l, &pose, &obs).unwrap() - line_residual(&scaled, &pose, &obs).unwrap()).amax()
        })
        .fold(0.0, f64::max)
}

/// Worst relative gap between the analytic line Jacobian (pose and
/// orthonormal increments) and central differences.
pub fn line_jacobian_worst(seed: u64, configs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < configs {
        let l = random_line(&mut rng);
        let o = plucker_to_orthonormal(&l).unwrap();
        if o.near_gimbal_lock(0.05) {
            continue;
        }
        let pose = random_pose(&mut rng);
        let p = l.closest_point();
        let Some(obs) = observe(&pose, &(p - l.direction() * 1.3), &(p + l.direction() * 0.9)) else { continue };
        let Ok((_, j)) = line_residual_jacobian(&o, &pose, &obs, false) else { continue };
        let eval = |pose: &Pose<f64>, o: &OrthonormalLine<f64>| line_residual_signed(&orthonormal_to_plucker(o), pose, &obs).unwrap();
        for c in 0..10 {
            let (plus, minus) = if c < 6 {
                let mut d = Vector6::zeros();
                d[c] = h;
                (eval(&pose.retract(&d), &o), eval(&pose.retract(&-d), &o))
            } else {
                let mut d = Vector4::zeros();
                d[c - 6] = h;
                (eval(&pose, &o.plus(&d)), eval(&pose, &o.plus(&-d)))
            };
            let fd = (plus - minus) / (2.0 * h);
            for r in 0..2 {
                worst = worst.max(relative_error(j[(r, c)], fd[r]));
            }
        }
        done += 1;
    }
    worst
}

/// Worst relative gap between the analytic point Jacobian (host pose,
/// target pose, inverse distance) and central differences.
pub fn point_jacobian_worst(seed: u64, configs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < configs {
        let host = random_pose(&mut rng);
        let target = random_pose(&mut rng);
        let x = rand_vec(&mut rng, 5.0);
        let local = host.inverse().transform_point(&x);
        if local.norm() < 1.0 || target.inverse().transform_point(&x).norm() < 1.0 {
            continue;
        }
        let feat = PointFeature { host_frame: 0, host_bearing: Bearing::from_vector(local).unwrap(), lambda: 1.0 / local.norm() };
        let obs = Bearing::from_vector(target.inverse().transform_point(&x) + rand_vec(&mut rng, 0.1)).unwrap();
        let (_, jac) = point_residual_jacobian(&host, &target, &feat, &obs, false).unwrap();
        for col in 0..13 {
            let eval = |s: f64| {
                let mut d = Vector6::zeros();
                let (mut hp, mut tp, mut f) = (host, target, feat);
                match col {
                    0..=5 => {
                        d[col] = s;
                        hp = host.retract(&d);
                    }
                    6..=11 => {
                        d[col - 6] = s;
                        tp = target.retract(&d);
                    }
                    _ => f.lambda += s,
                }
                point_residual(&hp, &tp, &f, &obs).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            for r in 0..2 {
                worst = worst.max(relative_error(jac[(r, col)], fd[r]));
            }
        }
        done += 1;
    }
    worst
}
