mod common;

use geoseg::ba::*;
use geoseg::camera::Bearing;
use geoseg::line::Pose;
use geoseg::synthetic::{gen_ba_problem, BaSceneSpec};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose<f64> {
    Pose::new(UnitQuaternion::from_scaled_axis(rand_vec(rng, 2.0)), rand_vec(rng, 1.0))
}

fn monotone(costs: &[f64]) -> bool {
    costs.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn point_jacobian_matches_central_differences() {
    let worst = common::backend::point_jacobian_worst(21, 100);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn noise_free_observation_has_zero_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let host = random_pose(&mut rng);
        let target = random_pose(&mut rng);
        let x = rand_vec(&mut rng, 5.0) + Vector3::new(6.0, 0.0, 0.0);
        let local = host.inverse().transform_point(&x);
        let feat = PointFeature { host_frame: 0, host_bearing: Bearing::from_vector(local).unwrap(), lambda: 1.0 / local.norm() };
        let obs = Bearing::from_vector(target.inverse().transform_point(&x)).unwrap();
        let r = point_residual(&host, &target, &feat, &obs).unwrap();
        assert!(r.norm() < 1e-12, "{r}");
    }
}

#[test]
fn point_at_camera_centre_is_rejected() {
    let host = Pose::identity();
    let target = Pose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 2.0));
    let feat = PointFeature { host_frame: 0, host_bearing: Bearing::new(0.0, 0.0, 1.0).unwrap(), lambda: 0.5 };
    let obs = Bearing::new(0.0, 0.0, 1.0).unwrap();
    assert_eq!(point_residual(&host, &target, &feat, &obs), Err(BaError::PointAtCameraCenter));
}

#[test]
fn ground_truth_start_converges_immediately() {
    let sc = gen_ba_problem(11, &BaSceneSpec::default());
    let (_, rep) = solve(&sc.truth, &SolveOptions::default()).unwrap();
    assert!(rep.iterations <= 2, "{rep:?}");
    assert!(rep.final_cost < 1e-18, "{rep:?}");
}

#[test]
fn perturbed_start_recovers_poses() {
    for seed in [1, 2, 3] {
        let sc = gen_ba_problem(seed, &BaSceneSpec::default());
        let (out, rep) = solve(&sc.initial, &SolveOptions::default()).unwrap();
        let ate = rep.ate.unwrap();
        assert!(ate < 1e-3 * sc.scale, "seed {seed}: ate {ate} {rep:?}");
        assert!(monotone(&rep.costs));
        assert_eq!(out.poses[0], sc.initial.poses[0]);
    }
}

#[test]
fn huber_resists_gross_outliers() {
    let spec = BaSceneSpec { outlier_fraction: 0.2, ..Default::default() };
    for seed in [5, 6] {
        let sc = gen_ba_problem(seed, &spec);
        let (_, robust) = solve(&sc.initial, &SolveOptions::default()).unwrap();
        let (_, plain) = solve(&sc.initial, &SolveOptions::default().quadratic()).unwrap();
        let (ar, ap) = (robust.ate.unwrap(), plain.ate.unwrap());
        assert!(ar < 5e-3 * sc.scale, "seed {seed}: huber ate {ar}");
        assert!(ap > 5e-3 * sc.scale, "seed {seed}: quadratic ate {ap}");
        assert!(monotone(&robust.costs) && monotone(&plain.costs));
    }
}

#[test]
fn gauge_components_are_untouched() {
    let sc = gen_ba_problem(8, &BaSceneSpec::default());
    let (out, _) = solve(&sc.initial, &SolveOptions::default()).unwrap();
    for (i, m) in sc.initial.fixed.iter().enumerate() {
        for k in 0..3 {
            if m.0[3 + k] {
                assert_eq!(out.poses[i].t[k].to_bits(), sc.initial.poses[i].t[k].to_bits());
            }
        }
        if m.0[..3].iter().all(|&f| f) {
            assert_eq!(out.poses[i].q, sc.initial.poses[i].q);
        }
    }
}

#[test]
fn observation_order_does_not_change_the_solution() {
    let sc = gen_ba_problem(9, &BaSceneSpec { n_points: 40, n_lines: 10, ..Default::default() });
    let mut shuffled = sc.initial.clone();
    shuffled.point_obs.reverse();
    shuffled.line_obs.rotate_left(7);
    let (a, ra) = solve(&sc.initial, &SolveOptions::default()).unwrap();
    let (b, rb) = solve(&shuffled, &SolveOptions::default()).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.poses, b.poses);
}

#[test]
fn parallel_mode_matches_serial() {
    let sc = gen_ba_problem(10, &BaSceneSpec { n_points: 40, n_lines: 10, ..Default::default() });
    let (_, serial) = solve(&sc.initial, &SolveOptions::default()).unwrap();
    let (_, par) = solve(&sc.initial, &SolveOptions { parallel: true, ..Default::default() }).unwrap();
    assert!((serial.final_cost - par.final_cost).abs() <= 1e-12);
}

#[test]
fn missing_gauge_is_rejected() {
    let mut p = gen_ba_problem(1, &BaSceneSpec { n_points: 5, n_lines: 2, ..Default::default() }).initial;
    p.fixed[0] = FixedMask::FREE;
    assert!(matches!(solve(&p, &SolveOptions::default()), Err(BaError::InvalidProblem(_))));
}

#[test]
fn problem_text_round_trip() {
    let sc = gen_ba_problem(2, &BaSceneSpec { n_points: 10, n_lines: 4, ..Default::default() });
    let text = write_problem(&sc.initial);
    let back = parse_problem(&text).unwrap();
    assert_eq!(write_problem(&back), text);
    assert_eq!(back.poses.len(), 5);
    assert_eq!(back.points.len(), 10);
    assert_eq!(back.lines.len(), 4);
    assert!(back.gt_poses.is_some());
}

#[test]
fn parse_errors_name_the_line() {
    let err = parse_problem("POSES\n0 1 0 0 0 0 0 0 111111\nPOINTS\n0 0 1 0\n").unwrap_err();
    assert_eq!(err, BaError::Parse { line: 4, msg: "expected 6 fields, found 4".into() });
}

proptest! {
    #[test]
    fn huber_is_continuous_and_quadratic_inside(r in 0.0f64..10.0, delta in 0.01f64..5.0) {
        let (c, w) = huber(r * r, delta);
        if r <= delta {
            prop_assert_eq!(c, r * r);
            prop_assert_eq!(w, 1.0);
        } else {
            prop_assert!(c <= r * r + 1e-12);
            prop_assert!((w - delta / r).abs() < 1e-15);
        }
        let (knee, _) = huber(delta * delta, delta);
        prop_assert!((knee - delta * delta).abs() < 1e-12);
        prop_assert_eq!(huber(r * r, f64::MAX).0, r * r);
    }
}
