mod common;

use std::collections::HashSet;

use common::protocol::*;
use geoseg::camera::{presets, CameraModel};
use geoseg::detector::*;
use geoseg::eval::{d_orth, d_struct};
use geoseg::image::GrayImage;
use geoseg::line::Pose;
use geoseg::sphere::covered_fraction;
use geoseg::synthetic::{image_size_for, render, RenderOutput, RenderStyle, Scene, Segment3};
use nalgebra::Vector3;
use proptest::prelude::*;

fn single_line(model: &CameraModel<f64>, a: Vector3<f64>, b: Vector3<f64>) -> RenderOutput {
    let (w, h) = image_size_for(model, (1280, 960));
    let scene = Scene { segments: vec![Segment3 { a, b }], seed: 0, bounds: Default::default() };
    render(&scene, &Pose::identity(), model, w, h, &RenderStyle::default())
}

fn polar_point(polar_deg: f64, azimuth_deg: f64, range: f64) -> Vector3<f64> {
    let (t, p) = (polar_deg.to_radians(), azimuth_deg.to_radians());
    Vector3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos()) * range
}

#[test]
fn seed_seven_scene_is_recovered_on_all_families() {
    for (name, m) in families() {
        let out = frame(&m, 7, LINES);
        let dets = detect(&out.image, &m, &DetectorParams::default()).unwrap();
        let r = recovery(&m, &out, &dets, EPS_PX);
        assert!(r >= 0.9, "{name}: recovered {r:.3} of {} ground-truth segments", out.gt.len());
    }
}

#[test]
fn blank_frames_give_no_segments() {
    for (_, m) in families() {
        let (w, h) = image_size_for(&m, (1280, 960));
        for v in [0u8, 30, 255] {
            assert!(detect(&GrayImage::filled(w, h, v), &m, &DetectorParams::default()).unwrap().is_empty());
        }
    }
}

#[test]
fn segments_respect_fit_length_and_exclusivity() {
    let p = DetectorParams::default();
    for (name, m) in families() {
        let out = frame(&m, 21, 60);
        let dets = detect(&out.image, &m, &p).unwrap();
        assert!(!dets.is_empty());
        let mut seen = HashSet::new();
        for s in &dets {
            assert!(s.avg_fit_px <= p.t_fit_px, "{name}: fit {}", s.avg_fit_px);
            assert!(polyline_length(&m, &s.chain) >= p.min_segment_len_px, "{name}: short chain");
            for px in &s.chain {
                assert!(seen.insert((px.x, px.y)), "{name}: pixel {px:?} in two segments");
            }
            // endpoints lie on the fitted circle
            assert!(s.geo.start.as_vector().dot(s.geo.circle.normal()).abs() < 1e-9);
            assert!(s.geo.end.as_vector().dot(s.geo.circle.normal()).abs() < 1e-9);
        }
    }
}

#[test]
fn detection_is_deterministic() {
    for (_, m) in families() {
        let out = frame(&m, 33, LINES);
        let a = detect(&out.image, &m, &DetectorParams::default()).unwrap();
        let b = detect(&out.image, &m, &DetectorParams::default()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn line_across_the_negative_half_plane_is_one_segment() {
    let m = presets::panoramic_annular();
    let out = single_line(&m, polar_point(85.0, 10.0, 3.0), polar_point(115.0, 50.0, 3.0));
    assert_eq!(out.gt.len(), 1, "ground truth split");
    let gt = out.gt[0].segment;
    let dets = detect(&out.image, &m, &DetectorParams::default()).unwrap();
    assert_eq!(dets.len(), 1, "found {} segments", dets.len());
    let cover = covered_fraction(&dets[0].geo, &gt);
    assert!(cover >= 0.9, "covers {cover:.3} of the arc");
}

#[test]
fn single_rendered_line_gives_one_accurate_segment() {
    for (name, m, a, b) in [
        ("fisheye", presets::fisheye(), Vector3::new(-3.0, 0.5, 2.0), Vector3::new(3.0, 1.0, 2.5)),
        ("pal", presets::panoramic_annular(), polar_point(70.0, 200.0, 3.0), polar_point(95.0, 250.0, 3.0)),
        ("equirect", presets::equirectangular(), Vector3::new(3.0, -1.0, 0.3), Vector3::new(1.0, 3.0, -0.4)),
    ] {
        let out = single_line(&m, a, b);
        assert_eq!(out.gt.len(), 1);
        let g = &out.gt[0];
        assert!(g.image_arc_px >= 200.0, "{name}: arc only {} px", g.image_arc_px);
        let dets = detect(&out.image, &m, &DetectorParams::default()).unwrap();
        assert_eq!(dets.len(), 1, "{name}: {} segments", dets.len());
        let d = &dets[0];
        let ortho = d_orth(&m, &d.geo, &g.segment);
        let structural = d_struct(&m, &d.geo, &g.segment);
        assert!(ortho < 2.0, "{name}: d_orth {ortho}");
        assert!(structural < 5.0, "{name}: d_struct {structural}");
        let angle = d.geo.circle.angle_to(&g.segment.circle).to_degrees();
        assert!(angle < 1.0, "{name}: normal off by {angle} deg");
    }
}

#[test]
fn anchors_are_dense_along_a_rendered_geodesic() {
    let m = presets::fisheye();
    let out = single_line(&m, Vector3::new(-1.5, 0.8, 3.0), Vector3::new(1.5, 1.2, 3.5));
    let p = DetectorParams::default();
    let gm = gradients(&preprocess(&out.image, &p).unwrap(), p.t_gradient_min).unwrap();
    let anchors = extract_anchors(&gm, &p);
    let per_px = anchors.len() as f64 / out.gt[0].image_arc_px;
    assert!(per_px >= 0.25, "{per_px} anchors per pixel");
}

#[test]
fn cluttered_frame_count_is_in_sanity_band() {
    let m = presets::fisheye();
    let out = frame(&m, 7, 100);
    let n = detect(&out.image, &m, &DetectorParams::default()).unwrap().len();
    assert!((50..=300).contains(&n), "{n} segments");
}

#[test]
fn constant_image_preprocesses_to_constant() {
    let img = GrayImage::filled(20, 10, 77);
    let out = preprocess(&img, &DetectorParams::default()).unwrap();
    let v = out.get(0, 0);
    assert!(out.data().iter().all(|&x| x == v));
    assert!(gradients(&out, 36).unwrap().magnitudes().iter().all(|&g| g == 0));
}

#[test]
fn empty_and_tiny_images_are_rejected() {
    let p = DetectorParams::default();
    assert!(matches!(preprocess(&GrayImage::new(0, 0), &p), Err(DetectorError::EmptyImage)));
    assert!(matches!(gradients(&GrayImage::filled(2, 5, 1), 36), Err(DetectorError::ImageTooSmall { .. })));
}

/// Border-clamped Sobel components, written out independently.
fn sobel(img: &GrayImage, x: usize, y: usize) -> (i32, i32) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let at = |dx: i64, dy: i64| {
        let (xx, yy) = ((x as i64 + dx).clamp(0, w - 1), (y as i64 + dy).clamp(0, h - 1));
        img.get(xx as usize, yy as usize) as i32
    };
    let gx = at(1, -1) + 2 * at(1, 0) + at(1, 1) - at(-1, -1) - 2 * at(-1, 0) - at(-1, 1);
    let gy = at(-1, 1) + 2 * at(0, 1) + at(1, 1) - at(-1, -1) - 2 * at(0, -1) - at(1, -1);
    (gx, gy)
}

proptest! {
    #[test]
    fn gradients_commute_with_transpose(w in 3usize..12, h in 3usize..12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
        let img = GrayImage::from_raw(w, h, data).unwrap();
        let a = gradients(&img, 0).unwrap().transposed();
        let b = gradients(&img.transposed(), 0).unwrap();
        let t = img.transposed();
        for y in 0..w {
            for x in 0..h {
                prop_assert_eq!(a.magnitude(x, y), b.magnitude(x, y));
                // orientation is only defined when one component dominates
                let (gx, gy) = sobel(&t, x, y);
                if a.magnitude(x, y) > 0 && gx.abs() != gy.abs() {
                    prop_assert_eq!(a.is_vertical_edge(x, y), b.is_vertical_edge(x, y));
                }
            }
        }
    }
}

