mod common;

use common::protocol::*;
use geoseg::camera::{presets, Bearing, CameraModel};
use geoseg::descriptor::*;
use geoseg::detector::{detect, DetectorParams};
use geoseg::eval::make_rotated_pair;
use geoseg::line::Pose;
use geoseg::sphere::{slice_segment, GeodesicSegment};
use geoseg::synthetic::{image_size_for, render, RenderOutput, RenderStyle, Scene, Segment3};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

fn one_line(model: &CameraModel<f64>, a: Vector3<f64>, b: Vector3<f64>) -> RenderOutput {
    let (w, h) = image_size_for(model, (1280, 960));
    let scene = Scene { segments: vec![Segment3 { a, b }], seed: 0, bounds: Default::default() };
    render(&scene, &Pose::identity(), model, w, h, &RenderStyle::default())
}

/// Sub-arc of `s` from its start spanning `deg` degrees.
fn prefix(s: &GeodesicSegment<f64>, deg: f64) -> GeodesicSegment<f64> {
    GeodesicSegment::on_circle(s.circle, s.start, s.point_at(deg.to_radians())).unwrap()
}

#[test]
fn slice_counts_follow_arc_length() {
    let s = GeodesicSegment::between(Bearing::new(1.0, 0.0, 1.0).unwrap(), Bearing::new(1.0, 1.0, 1.0).unwrap()).unwrap();
    assert_eq!(slice_segment(&prefix(&s, 25.0), 10.0).len(), 3);
    assert_eq!(slice_segment(&prefix(&s, 9.0), 10.0).len(), 1);
}

#[test]
fn same_slice_after_small_rotation_is_close() {
    let m = presets::fisheye();
    let a = one_line(&m, Vector3::new(-3.0, 0.5, 2.0), Vector3::new(3.0, 1.0, 2.5));
    let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 10f64.to_radians());
    let b = make_rotated_pair(&a.image, &m, &rot).unwrap();
    let gt = a.gt[0].segment;
    let mut checked = 0;
    for s in slice_segment(&prefix(&gt, 60.0), 10.0) {
        let (Ok(da), Ok(db)) =
            (compute_slice_descriptor(&a.image, &m, &s), compute_slice_descriptor(&b.image, &m, &b.transport(&s)))
        else {
            continue;
        };
        let frac = da.hamming(&db) as f64 / DESCRIPTOR_BITS as f64;
        assert!(frac < 0.25, "hamming fraction {frac}");
        assert_eq!(da.hamming(&da), 0);
        checked += 1;
    }
    assert!(checked >= 4, "only {checked} slices inside both images");
}

#[test]
fn reversing_a_segment_reverses_its_slices() {
    let m = presets::fisheye();
    let a = one_line(&m, Vector3::new(-3.0, 0.5, 2.0), Vector3::new(3.0, 1.0, 2.5));
    // a whole number of slices, so both directions cut at the same places
    let seg = prefix(&a.gt[0].segment, 40.0);
    let p = MatchParams::default();
    let fwd = compute_rlbd_geo(&a.image, &m, &seg, &p).unwrap();
    let back = compute_rlbd_geo(&a.image, &m, &seg.reversed(), &p).unwrap();
    assert_eq!(fwd.slices.len(), 4);
    // cut points agree up to rounding, which may flip a bit or two
    let close = |x: &SliceDescriptor, y: &SliceDescriptor| x.hamming(y) <= 2;
    for (x, y) in back.slices.iter().zip(fwd.reversed().slices.iter()) {
        assert!(close(x, y), "hamming {}", x.hamming(y));
    }
    let d = rlbd_distance(&fwd, &back, 2).unwrap();
    assert!(d < 0.01, "reversal distance {d}");
}

#[test]
fn detected_descriptors_match_themselves_perfectly() {
    let m = presets::panoramic_annular();
    let out = frame(&m, 3, LINES);
    let p = MatchParams::default();
    let descs: Vec<_> = detect(&out.image, &m, &DetectorParams::default())
        .unwrap()
        .iter()
        .filter_map(|s| compute_rlbd(&out.image, &m, s, &p).ok())
        .collect();
    assert!(descs.len() > 10);
    for d in &descs {
        assert_eq!(rlbd_distance(d, d, 1), Some(0.0));
        assert_eq!(rlbd_distance(d, &d.reversed(), 1), Some(0.0));
    }
    // isolated strokes can share a descriptor exactly; such ties are
    // ambiguous and dropped, so every surviving mutual match is a self match
    let matches = match_descriptors(&descs, &descs, &p);
    assert!(!matches.is_empty());
    assert!(matches.iter().all(|x| x.index_a == x.index_b && x.score == 1.0));
}

#[test]
fn dump_lines_have_id_count_and_hex_slices() {
    let m = presets::fisheye();
    let a = one_line(&m, Vector3::new(-3.0, 0.5, 2.0), Vector3::new(3.0, 1.0, 2.5));
    let d = compute_rlbd_geo(&a.image, &m, &a.gt[0].segment, &MatchParams::default()).unwrap();
    let line = dump_line(17, &d);
    let fields: Vec<&str> = line.split(',').collect();
    assert_eq!(fields[0], "17");
    assert_eq!(fields[1].parse::<usize>().unwrap(), d.slices.len());
    assert_eq!(fields.len(), 2 + d.slices.len());
    for (f, s) in fields[2..].iter().zip(&d.slices) {
        assert_eq!(f.len(), 64);
        assert_eq!(SliceDescriptor::from_hex(f), Some(*s));
    }
}

#[test]
fn empty_inputs_and_bad_params() {
    let d = RlbdDescriptor { slices: vec![SliceDescriptor { bits: [1; 4] }], mirrored: vec![SliceDescriptor { bits: [2; 4] }], m_deg: 10.0 };
    assert!(match_descriptors(&[], std::slice::from_ref(&d), &MatchParams::default()).is_empty());
    assert!(match_descriptors(std::slice::from_ref(&d), &[], &MatchParams::default()).is_empty());
    assert!(MatchParams { m_deg: 0.0, ..Default::default() }.validate().is_err());
    assert!(MatchParams { hamming_frac_max: 1.0, ..Default::default() }.validate().is_err());
    assert!(MatchParams { min_overlap_slices: 0, ..Default::default() }.validate().is_err());
}

fn arb_desc() -> impl Strategy<Value = RlbdDescriptor> {
    (1usize..6, any::<u64>()).prop_map(|(n, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut slice = || SliceDescriptor { bits: [rng.random(), rng.random(), rng.random(), rng.random()] };
        let slices = (0..n).map(|_| slice()).collect();
        let mirrored = (0..n).map(|_| slice()).collect();
        RlbdDescriptor { slices, mirrored, m_deg: 10.0 }
    })
}

proptest! {
    #[test]
    fn distance_is_symmetric_bounded_and_reversal_blind(a in arb_desc(), b in arb_desc()) {
        let d = rlbd_distance(&a, &b, 1);
        prop_assert_eq!(d, rlbd_distance(&b, &a, 1));
        prop_assert_eq!(d, rlbd_distance(&a, &b.reversed(), 1));
        if let Some(d) = d {
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }

    #[test]
    fn matching_is_a_partial_injection(a in prop::collection::vec(arb_desc(), 0..8), b in prop::collection::vec(arb_desc(), 0..8), mutual in any::<bool>(), thr in 0.3f64..0.9) {
        let p = MatchParams { hamming_frac_max: thr, min_overlap_slices: 1, mutual_check: mutual, ..Default::default() };
        let m = match_descriptors(&a, &b, &p);
        let mut ua = std::collections::HashSet::new();
        let mut ub = std::collections::HashSet::new();
        for x in &m {
            prop_assert!(ua.insert(x.index_a) && ub.insert(x.index_b));
            prop_assert!((0.0..=1.0).contains(&x.score));
            prop_assert!(1.0 - x.score <= thr + 1e-12);
        }
    }
}
