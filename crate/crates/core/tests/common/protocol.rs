//! Seeded end-to-end protocols on rendered scenes shared by the detector,
//! evaluation and acceptance tests.

use geoseg::camera::{presets, CameraModel};
use geoseg::descriptor::{compute_rlbd, match_descriptors, MatchParams};
use geoseg::detector::{detect, CurveSegment, DetectorParams};
use geoseg::eval::{d_orth, evaluate_pair, make_rotated_pair, Metric, PairResult, RotatedPair, MAX_PAIR_ROTATION_DEG};
use geoseg::line::Pose;
use geoseg::sphere::{covered_fraction, pixel_to_curve_distance, GeodesicSegment};
use geoseg::synthetic::{gen_scene, image_size_for, render, sample_rotation, Bounds, RenderOutput, RenderStyle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EPS_PX: f64 = 5.0;
pub const PAIR_SCENES: u64 = 20;
pub const LINES: usize = 40;
/// Scene seeds of the pair corpus start here; the rotation of pair `i` is
/// drawn from seed `i`.
pub const PAIR_SCENE_SEED_BASE: u64 = 1000;

pub fn families() -> Vec<(&'static str, CameraModel<f64>)> {
    vec![
        ("fisheye", presets::fisheye()),
        ("pal", presets::panoramic_annular()),
        ("equirect", presets::equirectangular()),
    ]
}

pub fn frame(model: &CameraModel<f64>, seed: u64, lines: usize) -> RenderOutput {
    let (w, h) = image_size_for(model, (1280, 960));
    render(&gen_scene(seed, lines, Bounds::default()), &Pose::identity(), model, w, h, &RenderStyle::default())
}

/// Fraction of ground-truth segments with a detection at `d_orth < eps`
/// (which already requires overlap of at least one half).
pub fn recovery(model: &CameraModel<f64>, out: &RenderOutput, dets: &[CurveSegment], eps: f64) -> f64 {
    if out.gt.is_empty() {
        return 1.0;
    }
    let hit = out.gt.iter().filter(|g| dets.iter().any(|d| d_orth(model, &d.geo, &g.segment) < eps)).count();
    hit as f64 / out.gt.len() as f64
}

pub struct Pair {
    pub a: RenderOutput,
    pub b: RotatedPair,
}

pub fn rotated_pair(model: &CameraModel<f64>, index: u64) -> Pair {
    let a = frame(model, PAIR_SCENE_SEED_BASE + index, LINES);
    let limit = if model.wraps_horizontally() { 180.0 } else { MAX_PAIR_ROTATION_DEG };
    let rot = sample_rotation(&mut ChaCha8Rng::seed_from_u64(index), limit);
    let b = make_rotated_pair(&a.image, model, &rot).expect("rotation within limit");
    Pair { a, b }
}

pub fn pair_metrics(model: &CameraModel<f64>, pair: &Pair) -> PairResult {
    let p = DetectorParams::default();
    let ga: Vec<_> = detect(&pair.a.image, model, &p).unwrap().into_iter().map(|s| s.geo).collect();
    let gb: Vec<_> = detect(&pair.b.image, model, &p).unwrap().into_iter().map(|s| s.geo).collect();
    let size = (pair.a.image.width(), pair.a.image.height());
    evaluate_pair(&ga, &gb, &pair.b.rotation, model, size, EPS_PX, Metric::Orth).unwrap()
}

/// Ground-truth id a detection belongs to: the segment it covers by at least
/// one half with the smallest mean endpoint-to-circle distance below `EPS_PX`.
pub fn associate(model: &CameraModel<f64>, s: &GeodesicSegment<f64>, gts: &[(usize, GeodesicSegment<f64>)]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (id, g) in gts {
        if covered_fraction(g, s) < 0.5 {
            continue;
        }
        let mut acc = 0.0;
        for e in [s.start, s.end] {
            match model.project(&e).ok().and_then(|p| pixel_to_curve_distance(model, &p, &g.circle).ok()) {
                Some(d) => acc += 0.5 * d,
                None => acc = f64::INFINITY,
            }
        }
        if acc < EPS_PX && best.is_none_or(|b| acc < b.0) {
            best = Some((acc, *id));
        }
    }
    best.map(|b| b.1)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MatchTally {
    pub correct: usize,
    pub total: usize,
    pub unassociated: usize,
    /// Matches whose view-A segment, carried by the known rotation, lies
    /// within `EPS_PX` of its view-B partner under `d_orth`.
    pub gated: usize,
}

impl MatchTally {
    pub fn precision(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn gated_precision(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.gated as f64 / self.total as f64
        }
    }

    pub fn add(&mut self, o: MatchTally) {
        self.correct += o.correct;
        self.total += o.total;
        self.unassociated += o.unassociated;
        self.gated += o.gated;
    }
}

/// Matches descriptors across the pair and counts matches whose two sides
/// belong to the same ground-truth segment, and matches that agree with the
/// known rotation.
pub fn match_tally(model: &CameraModel<f64>, pair: &Pair) -> MatchTally {
    let p = DetectorParams::default();
    let mp = MatchParams::default();
    let describe = |img, segs: Vec<CurveSegment>| -> Vec<_> {
        segs.into_iter().filter_map(|s| compute_rlbd(img, model, &s, &mp).ok().map(|d| (s.geo, d))).collect()
    };
    let da = describe(&pair.a.image, detect(&pair.a.image, model, &p).unwrap());
    let db = describe(&pair.b.image, detect(&pair.b.image, model, &p).unwrap());
    let la: Vec<_> = da.iter().map(|x| x.1.clone()).collect();
    let lb: Vec<_> = db.iter().map(|x| x.1.clone()).collect();
    let gta: Vec<_> = pair.a.gt.iter().map(|g| (g.id, g.segment)).collect();
    let gtb: Vec<_> = pair.a.gt.iter().map(|g| (g.id, pair.b.transport(&g.segment))).collect();
    let mut t = MatchTally::default();
    for m in match_descriptors(&la, &lb, &mp) {
        let ia = associate(model, &da[m.index_a].0, &gta);
        let ib = associate(model, &db[m.index_b].0, &gtb);
        if ia.is_none() || ib.is_none() {
            t.unassociated += 1;
        }
        if ia.is_some() && ia == ib {
            t.correct += 1;
        }
        if d_orth(model, &pair.b.transport(&da[m.index_a].0), &db[m.index_b].0) < EPS_PX {
            t.gated += 1;
        }
        t.total += 1;
    }
    t
}
