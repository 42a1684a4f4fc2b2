//! Curve segment detection on distorted images: contrast normalisation,
//! Sobel gradients, anchor extraction and an edge-drawing walk that fits a
//! great circle on the sphere while it grows.

use std::collections::VecDeque;

use crate::camera::{Bearing, CameraModel, PixelPoint};
use crate::image::GrayImage;
use crate::sphere::{arc_length, bearing_to_curve_distance, covered_fraction, fit_great_circle, nearest_on_circle, GeodesicSegment, GreatCircle, ScatterAccumulator};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum DetectorError {
    #[error("empty image")]
    EmptyImage,
    #[error("image too small ({width}x{height}); need at least 3x3")]
    ImageTooSmall { width: usize, height: usize },
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Margin by which an anchor must beat both neighbours across the edge.
    pub t_anchor: u16,
    /// Gradient magnitudes below this are treated as non-edge.
    pub t_gradient_min: u16,
    /// Maximum pixel-to-curve distance for a pixel to extend a segment.
    pub t_fit_px: f64,
    /// Consecutive off-curve pixels tolerated before the walk breaks.
    pub t_outliers: usize,
    /// Pixels collected before the first circle fit.
    pub min_fit_len: usize,
    /// Minimum chain length in pixels (polyline length).
    pub min_segment_len_px: f64,
    /// Accepted pixels between circle refits.
    pub refit_interval: usize,
    pub anchor_scan_stride: usize,
    pub gaussian_sigma: f64,
    /// Clip limit of the histogram equalisation, in multiples of the mean bin
    /// count. `None` gives plain global equalisation.
    pub hist_clip_limit: Option<f64>,
    /// A thin bright or dark stroke has two gradient flanks, each walked as
    /// its own segment. A segment lying within this many pixels of a longer
    /// one on a nearly identical circle, and mostly covered by it, is
    /// dropped. Zero keeps every flank.
    pub flank_merge_px: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            t_anchor: 8,
            t_gradient_min: 36,
            t_fit_px: 1.5,
            t_outliers: 3,
            min_fit_len: 15,
            min_segment_len_px: 30.0,
            refit_interval: 8,
            anchor_scan_stride: 2,
            gaussian_sigma: 1.0,
            hist_clip_limit: Some(DEFAULT_HIST_CLIP_LIMIT),
            flank_merge_px: DEFAULT_FLANK_MERGE_PX,
        }
    }
}

pub const DEFAULT_HIST_CLIP_LIMIT: f64 = 40.0;
/// Flank spacing of a 2 px stroke after the default blur is about 3 px.
pub const DEFAULT_FLANK_MERGE_PX: f64 = 4.0;
/// Circle planes of two flanks of one stroke agree to well under this.
const FLANK_MAX_ANGLE_DEG: f64 = 2.0;
/// Share of the shorter flank that must lie alongside the longer one.
const FLANK_MIN_COVER: f64 = 0.8;

impl DetectorParams {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |what: &str| Err(DetectorError::InvalidParams(what.to_string()));
        if self.t_anchor == 0 || self.t_gradient_min == 0 {
            return bad("gradient thresholds must be positive");
        }
        if !(self.t_fit_px > 0.0) || !(self.min_segment_len_px > 0.0) || !(self.gaussian_sigma > 0.0) {
            return bad("t_fit_px, min_segment_len_px and gaussian_sigma must be positive");
        }
        if self.t_outliers == 0 || self.min_fit_len < 3 || self.refit_interval == 0 || self.anchor_scan_stride == 0 {
            return bad("integer parameters must be positive (min_fit_len >= 3)");
        }
        if self.min_fit_len as f64 >= self.min_segment_len_px {
            return bad("min_fit_len must be smaller than min_segment_len_px");
        }
        if !(self.flank_merge_px >= 0.0) {
            return bad("flank_merge_px must be non-negative");
        }
        if let Some(c) = self.hist_clip_limit {
            if !(c >= 1.0) {
                return bad("hist_clip_limit must be at least 1");
            }
        }
        Ok(())
    }
}

/// Integer pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgePixel {
    pub x: u32,
    pub y: u32,
}

impl EdgePixel {
    pub fn new(x: u32, y: u32) -> Self {
        EdgePixel { x, y }
    }

    pub fn point(&self) -> PixelPoint<f64> {
        PixelPoint::new(self.x as f64, self.y as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSegment {
    pub chain: Vec<EdgePixel>,
    pub geo: GeodesicSegment<f64>,
    pub avg_fit_px: f64,
}

/// L1 gradient magnitude and edge orientation per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradientMap {
    width: usize,
    height: usize,
    magnitude: Vec<u16>,
    vertical_edge: Vec<bool>,
}

impl GradientMap {
    pub fn new(width: usize, height: usize) -> Self {
        GradientMap { width, height, magnitude: vec![0; width * height], vertical_edge: vec![false; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn magnitude(&self, x: usize, y: usize) -> u16 {
        self.magnitude[y * self.width + x]
    }

    /// True when the edge through the pixel runs vertically (`|Gx| >= |Gy|`).
    #[inline]
    pub fn is_vertical_edge(&self, x: usize, y: usize) -> bool {
        self.vertical_edge[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, magnitude: u16, vertical_edge: bool) {
        let i = y * self.width + x;
        self.magnitude[i] = magnitude;
        self.vertical_edge[i] = vertical_edge;
    }

    pub fn magnitudes(&self) -> &[u16] {
        &self.magnitude
    }

    pub fn transposed(&self) -> GradientMap {
        let mut out = GradientMap::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y, x, self.magnitude(x, y), !self.is_vertical_edge(x, y));
            }
        }
        out
    }
}

/// Global histogram equalisation `v -> floor(255 cdf(v) / N)`, optionally
/// contrast limited (bins clipped at `clip * N / 256`, excess spread evenly).
/// A single-valued image is returned unchanged.
pub fn equalize_histogram(img: &GrayImage, clip_limit: Option<f64>) -> GrayImage {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() <= 1 {
        return img.clone();
    }
    let n = img.data().len() as f64;
    let mut lut = [0u8; 256];
    match clip_limit {
        None => {
            let total = img.data().len() as u64;
            let mut cdf = 0u64;
            for (v, &c) in hist.iter().enumerate() {
                cdf += c;
                lut[v] = (255 * cdf / total) as u8;
            }
        }
        Some(clip) => {
            let limit = clip * n / 256.0;
            let excess: f64 = hist.iter().map(|&c| (c as f64 - limit).max(0.0)).sum();
            let bonus = excess / 256.0;
            let mut cdf = 0.0;
            for (v, &c) in hist.iter().enumerate() {
                cdf += (c as f64).min(limit) + bonus;
                lut[v] = (255.0 * cdf / n + 1e-9).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let data = img.data().iter().map(|&v| lut[v as usize]).collect();
    GrayImage::from_raw(img.width(), img.height(), data).expect("same size")
}

/// 5x5 separable Gaussian with clamped borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let mut k = [0f64; 5];
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *w = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);

    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0f64; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kw) in k.iter().enumerate() {
                acc += kw * row[clamp(x as isize + i as isize - 2, w)] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kw) in k.iter().enumerate() {
                acc += kw * tmp[clamp(y as isize + i as isize - 2, h) * w + x];
            }
            out[y * w + x] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    GrayImage::from_raw(w, h, out).expect("same size")
}

pub fn preprocess(img: &GrayImage, params: &DetectorParams) -> Result<GrayImage, DetectorError> {
    if img.is_empty() {
        return Err(DetectorError::EmptyImage);
    }
    Ok(gaussian_blur(&equalize_histogram(img, params.hist_clip_limit), params.gaussian_sigma))
}

/// 3x3 Sobel with clamped borders; magnitudes below `t_gradient_min` are zeroed.
pub fn gradients(img: &GrayImage, t_gradient_min: u16) -> Result<GradientMap, DetectorError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(DetectorError::ImageTooSmall { width: w, height: h });
    }
    let d = img.data();
    let mut gm = GradientMap::new(w, h);
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let p = |xx: usize, yy: usize| d[yy * w + xx] as i32;
            let gx = p(xp, ym) + 2 * p(xp, y) + p(xp, yp) - p(xm, ym) - 2 * p(xm, y) - p(xm, yp);
            let gy = p(xm, yp) + 2 * p(x, yp) + p(xp, yp) - p(xm, ym) - 2 * p(x, ym) - p(xp, ym);
            let mag = (gx.abs() + gy.abs()).min(u16::MAX as i32) as u16;
            let i = y * w + x;
            gm.vertical_edge[i] = gx.abs() >= gy.abs();
            gm.magnitude[i] = if mag >= t_gradient_min { mag } else { 0 };
        }
    }
    Ok(gm)
}

/// Local maxima across the edge direction on every `anchor_scan_stride`-th row.
pub fn extract_anchors(gm: &GradientMap, params: &DetectorParams) -> Vec<EdgePixel> {
    let (w, h) = (gm.width, gm.height);
    let t = params.t_anchor as i32;
    let mut out = Vec::new();
    if w < 3 || h < 3 {
        return out;
    }
    for y in (1..h - 1).step_by(params.anchor_scan_stride.max(1)) {
        for x in 1..w - 1 {
            let m = gm.magnitude(x, y) as i32;
            if m == 0 {
                continue;
            }
            let (a, b) = if gm.is_vertical_edge(x, y) {
                (gm.magnitude(x - 1, y), gm.magnitude(x + 1, y))
            } else {
                (gm.magnitude(x, y - 1), gm.magnitude(x, y + 1))
            };
            if m - a as i32 >= t && m - b as i32 >= t {
                out.push(EdgePixel::new(x as u32, y as u32));
            }
        }
    }
    out
}

/// Pixels closer than this to an unprojectable pixel get zero gradient; the
/// blur and Sobel footprints reach that far.
const FOV_EROSION_PX: i64 = 3;

const FOV_PROBES: [(i64, i64); 9] = [
    (0, 0),
    (FOV_EROSION_PX, 0),
    (-FOV_EROSION_PX, 0),
    (0, FOV_EROSION_PX),
    (0, -FOV_EROSION_PX),
    (FOV_EROSION_PX - 1, FOV_EROSION_PX - 1),
    (1 - FOV_EROSION_PX, FOV_EROSION_PX - 1),
    (FOV_EROSION_PX - 1, 1 - FOV_EROSION_PX),
    (1 - FOV_EROSION_PX, 1 - FOV_EROSION_PX),
];

/// Whether an edge at pixel `(x, y)` of a `width x height` image can be
/// detected: the pixel and its erosion probes must all be projectable.
pub fn is_detectable_pixel(model: &CameraModel<f64>, width: usize, height: usize, x: i64, y: i64) -> bool {
    FOV_PROBES.iter().all(|&(dx, dy)| pixel_projectable(model, width, height, x + dx, y + dy))
}

fn pixel_projectable(model: &CameraModel<f64>, width: usize, height: usize, x: i64, y: i64) -> bool {
    if y < 0 || y >= height as i64 || (!model.wraps_horizontally() && (x < 0 || x >= width as i64)) {
        return false;
    }
    let x = x.rem_euclid(width as i64);
    model.unproject(&PixelPoint::new(x as f64, y as f64)).is_ok()
}

/// Zeroes gradients at pixels that are unprojectable or near the FoV border.
fn suppress_invalid(gm: &mut GradientMap, model: &CameraModel<f64>) {
    let (w, h) = (gm.width, gm.height);
    // 0 unknown, 1 valid, 2 invalid
    let mut cache = vec![0u8; w * h];
    let mut valid = |x: i64, y: i64| -> bool {
        if y < 0 || y >= h as i64 || (!model.wraps_horizontally() && (x < 0 || x >= w as i64)) {
            return false;
        }
        let x = x.rem_euclid(w as i64);
        let i = y as usize * w + x as usize;
        if cache[i] == 0 {
            cache[i] = if pixel_projectable(model, w, h, x, y) { 1 } else { 2 };
        }
        cache[i] == 1
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if gm.magnitude[i] == 0 {
                continue;
            }
            if !FOV_PROBES.iter().all(|&(dx, dy)| valid(x as i64 + dx, y as i64 + dy)) {
                gm.magnitude[i] = 0;
            }
        }
    }
}

/// Segment under construction.
struct Builder {
    chain: VecDeque<EdgePixel>,
    bearings: VecDeque<Bearing<f64>>,
    scatter: ScatterAccumulator<f64>,
    circle: Option<GreatCircle<f64>>,
    since_refit: usize,
}

impl Builder {
    fn new() -> Self {
        Builder {
            chain: VecDeque::new(),
            bearings: VecDeque::new(),
            scatter: ScatterAccumulator::default(),
            circle: None,
            since_refit: 0,
        }
    }

    fn push(&mut self, px: EdgePixel, b: Bearing<f64>, back: bool) {
        self.scatter.add(&b);
        if back {
            self.chain.push_back(px);
            self.bearings.push_back(b);
        } else {
            self.chain.push_front(px);
            self.bearings.push_front(b);
        }
    }

    fn drop_oldest(&mut self, adding_back: bool) {
        let b = if adding_back {
            self.chain.pop_front();
            self.bearings.pop_front()
        } else {
            self.chain.pop_back();
            self.bearings.pop_back()
        };
        if let Some(b) = b {
            self.scatter.remove(&b);
        }
    }
}

/// Pending walk start: pixel, incoming direction, and whether the pixel
/// itself is part of the new segment.
#[derive(Clone, Copy)]
struct Restart {
    px: EdgePixel,
    dir: (i32, i32),
}

struct Walker<'a> {
    gm: &'a GradientMap,
    model: &'a CameraModel<f64>,
    params: &'a DetectorParams,
    wrap: bool,
    /// Segment id + 1 of the segment owning each pixel, 0 when free.
    owner: Vec<u32>,
    /// Generation stamp of the last segment build that touched each pixel.
    visited: Vec<u32>,
    generation: u32,
    /// Pixels that already seeded a restarted walk.
    restarted: Vec<bool>,
    bearings: Vec<Option<Option<Bearing<f64>>>>,
}

impl<'a> Walker<'a> {
    fn idx(&self, p: EdgePixel) -> usize {
        p.y as usize * self.gm.width + p.x as usize
    }

    fn mag(&self, p: EdgePixel) -> u16 {
        self.gm.magnitude[self.idx(p)]
    }

    fn bearing(&mut self, p: EdgePixel) -> Option<Bearing<f64>> {
        let i = self.idx(p);
        if let Some(b) = self.bearings[i] {
            return b;
        }
        let b = self.model.unproject(&p.point()).ok();
        self.bearings[i] = Some(b);
        b
    }

    fn offset(&self, p: EdgePixel, dx: i32, dy: i32) -> Option<EdgePixel> {
        let (w, h) = (self.gm.width as i64, self.gm.height as i64);
        let y = p.y as i64 + dy as i64;
        if y < 0 || y >= h {
            return None;
        }
        let mut x = p.x as i64 + dx as i64;
        if self.wrap {
            x = x.rem_euclid(w);
        } else if x < 0 || x >= w {
            return None;
        }
        Some(EdgePixel::new(x as u32, y as u32))
    }

    /// One step of the three-neighbour growth rule.
    fn step(&self, cur: EdgePixel, dir: (i32, i32)) -> Option<(EdgePixel, (i32, i32))> {
        let vertical = self.gm.vertical_edge[self.idx(cur)];
        let (dx, dy) = dir;
        let use_horizontal = if vertical { dy == 0 } else { dx != 0 };
        let cands: [(i32, i32); 3] = if use_horizontal {
            let sx = dx.signum();
            [(sx, 0), (sx, -1), (sx, 1)]
        } else {
            let sy = if dy == 0 { 1 } else { dy.signum() };
            [(0, sy), (-1, sy), (1, sy)]
        };
        let mut best: Option<(EdgePixel, (i32, i32), u16)> = None;
        for &(cx, cy) in &cands {
            if let Some(p) = self.offset(cur, cx, cy) {
                let m = self.mag(p);
                if m > 0 && best.is_none_or(|(_, _, bm)| m > bm) {
                    best = Some((p, (cx, cy), m));
                }
            }
        }
        best.map(|(p, d, _)| (p, d))
    }

    fn pixel_distance(&mut self, p: EdgePixel, circle: &GreatCircle<f64>) -> Option<f64> {
        let b = self.bearing(p)?;
        bearing_to_curve_distance(self.model, &b, &p.point(), circle).ok()
    }

    fn mean_fit(&mut self, chain: &VecDeque<EdgePixel>, circle: &GreatCircle<f64>) -> f64 {
        let mut acc = 0.0;
        for &p in chain {
            match self.pixel_distance(p, circle) {
                Some(d) => acc += d,
                None => return f64::INFINITY,
            }
        }
        acc / chain.len().max(1) as f64
    }

    /// Extends `seg` from `start` along `dir`; returns the restart point when
    /// the walk ends because of off-curve pixels.
    fn grow(&mut self, seg: &mut Builder, start: EdgePixel, dir: (i32, i32), back: bool) -> Option<Restart> {
        let mut cur = start;
        let mut dir = dir;
        let mut outliers = 0usize;
        let mut first_outlier: Option<Restart> = None;
        let p = self.params;
        loop {
            let (next, d) = self.step(cur, dir)?;
            cur = next;
            dir = d;
            let i = self.idx(cur);
            let taken = self.owner[i] != 0 || self.visited[i] == self.generation;
            let accepted = if taken {
                false
            } else if seg.circle.is_none() {
                let b = self.bearing(cur)?;
                self.visited[i] = self.generation;
                seg.push(cur, b, back);
                if seg.chain.len() >= p.min_fit_len {
                    match seg.scatter.fit() {
                        Ok(c) if self.mean_fit(&seg.chain, &c) <= p.t_fit_px => {
                            seg.circle = Some(c);
                            seg.since_refit = 0;
                        }
                        _ => seg.drop_oldest(back),
                    }
                }
                true
            } else {
                let circle = seg.circle.expect("checked above");
                match self.pixel_distance(cur, &circle) {
                    Some(dist) if dist <= p.t_fit_px => {
                        let b = self.bearing(cur).expect("distance needs a bearing");
                        self.visited[i] = self.generation;
                        seg.push(cur, b, back);
                        seg.since_refit += 1;
                        if seg.since_refit >= p.refit_interval {
                            if let Ok(c) = seg.scatter.fit() {
                                seg.circle = Some(c);
                            }
                            seg.since_refit = 0;
                        }
                        true
                    }
                    _ => false,
                }
            };
            if accepted {
                outliers = 0;
                first_outlier = None;
            } else {
                outliers += 1;
                if first_outlier.is_none() && !taken {
                    first_outlier = Some(Restart { px: cur, dir });
                }
                if outliers > p.t_outliers {
                    return first_outlier;
                }
            }
        }
    }

    /// Validates a finished chain; splits arcs approaching a half turn.
    fn finalize(&mut self, seg: Builder, out: &mut Vec<CurveSegment>) {
        if seg.circle.is_none() || seg.chain.len() < 2 {
            return;
        }
        let Ok(circle) = seg.scatter.fit() else { return };
        let chain: Vec<EdgePixel> = seg.chain.into_iter().collect();
        let bearings: Vec<Bearing<f64>> = seg.bearings.into_iter().collect();

        // unwrapped angle of each chain bearing along the circle
        let k = *circle.normal();
        let Ok(origin) = nearest_on_circle(&bearings[0], &circle) else { return };
        let e1 = *origin.as_vector();
        let e2 = k.cross(&e1);
        let mut angles = Vec::with_capacity(bearings.len());
        let mut prev = 0.0f64;
        for b in &bearings {
            let v = b.as_vector();
            let mut a = v.dot(&e2).atan2(v.dot(&e1));
            while a - prev > std::f64::consts::PI {
                a -= std::f64::consts::TAU;
            }
            while a - prev < -std::f64::consts::PI {
                a += std::f64::consts::TAU;
            }
            angles.push(a);
            prev = a;
        }
        let total = (angles[angles.len() - 1] - angles[0]).abs();
        let pieces: Vec<(usize, usize)> = if total < std::f64::consts::PI - 1e-3 {
            vec![(0, chain.len())]
        } else {
            let quarter = std::f64::consts::FRAC_PI_2;
            let mut out = Vec::new();
            let mut s = 0;
            let base = angles[0];
            for i in 1..chain.len() {
                if ((angles[i] - base) / quarter).abs().floor() != ((angles[s] - base) / quarter).abs().floor() {
                    out.push((s, i));
                    s = i;
                }
            }
            out.push((s, chain.len()));
            out
        };

        for (s, e) in pieces {
            if e - s < 2 {
                continue;
            }
            let part = &chain[s..e];
            if polyline_length(self.model, part) < self.params.min_segment_len_px {
                continue;
            }
            let part_deque: VecDeque<EdgePixel> = part.iter().copied().collect();
            let avg = self.mean_fit(&part_deque, &circle);
            if !(avg <= self.params.t_fit_px) {
                continue;
            }
            let (Ok(start), Ok(end)) =
                (nearest_on_circle(&bearings[s], &circle), nearest_on_circle(&bearings[e - 1], &circle))
            else {
                continue;
            };
            let Ok(geo) = GeodesicSegment::on_circle(circle, start, end) else { continue };
            let id = out.len() as u32 + 1;
            for &p in part {
                let i = self.idx(p);
                self.owner[i] = id;
            }
            out.push(CurveSegment { chain: part.to_vec(), geo, avg_fit_px: avg });
        }
    }
}

/// Length of the pixel polyline (steps of 1 or sqrt 2, wrap aware).
pub fn polyline_length(model: &CameraModel<f64>, chain: &[EdgePixel]) -> f64 {
    chain.windows(2).map(|w| model.pixel_distance(&w[0].point(), &w[1].point())).sum()
}

/// Runs the full detector on a raw image.
pub fn detect(
    img: &GrayImage,
    model: &CameraModel<f64>,
    params: &DetectorParams,
) -> Result<Vec<CurveSegment>, DetectorError> {
    params.validate()?;
    let pre = preprocess(img, params)?;
    let mut gm = gradients(&pre, params.t_gradient_min)?;
    suppress_invalid(&mut gm, model);
    Ok(detect_on_gradients(&gm, model, params))
}

/// Edge walk on a precomputed gradient map.
pub fn detect_on_gradients(gm: &GradientMap, model: &CameraModel<f64>, params: &DetectorParams) -> Vec<CurveSegment> {
    let mut anchors = extract_anchors(gm, params);
    anchors.sort_by_key(|p| (std::cmp::Reverse(gm.magnitude(p.x as usize, p.y as usize)), p.y, p.x));

    let n = gm.width * gm.height;
    let mut walker = Walker {
        gm,
        model,
        params,
        wrap: model.wraps_horizontally(),
        owner: vec![0; n],
        visited: vec![0; n],
        generation: 0,
        restarted: vec![false; n],
        bearings: vec![None; n],
    };
    let mut out = Vec::new();
    let mut stack: Vec<Restart> = Vec::new();

    for anchor in anchors {
        let ai = walker.idx(anchor);
        if walker.owner[ai] != 0 {
            continue;
        }
        let Some(b) = walker.bearing(anchor) else { continue };
        walker.generation += 1;
        let mut seg = Builder::new();
        walker.visited[ai] = walker.generation;
        seg.push(anchor, b, true);
        let (fwd, bwd) = if gm.vertical_edge[ai] { ((0, 1), (0, -1)) } else { ((1, 0), (-1, 0)) };
        if let Some(r) = walker.grow(&mut seg, anchor, fwd, true) {
            stack.push(r);
        }
        if let Some(r) = walker.grow(&mut seg, anchor, bwd, false) {
            stack.push(r);
        }
        walker.finalize(seg, &mut out);

        while let Some(r) = stack.pop() {
            let ri = walker.idx(r.px);
            if walker.owner[ri] != 0 || walker.restarted[ri] {
                continue;
            }
            walker.restarted[ri] = true;
            let Some(b) = walker.bearing(r.px) else { continue };
            walker.generation += 1;
            let mut seg = Builder::new();
            walker.visited[ri] = walker.generation;
            seg.push(r.px, b, true);
            if let Some(next) = walker.grow(&mut seg, r.px, r.dir, true) {
                stack.push(next);
            }
            walker.finalize(seg, &mut out);
        }
    }
    if params.flank_merge_px > 0.0 {
        out = merge_flanks(out, model, params.flank_merge_px, params.t_fit_px);
    }
    out
}

/// Whether `short` runs alongside `long` within `max_px`.
fn is_flank_of(model: &CameraModel<f64>, short: &CurveSegment, long: &CurveSegment, max_px: f64) -> bool {
    if short.geo.circle.angle_to(&long.geo.circle) > FLANK_MAX_ANGLE_DEG.to_radians() {
        return false;
    }
    if covered_fraction(&long.geo, &short.geo) < FLANK_MIN_COVER {
        return false;
    }
    let probes = [short.geo.start, short.geo.point_at(0.5 * arc_length(&short.geo)), short.geo.end];
    let mut total = 0.0;
    for b in &probes {
        let Ok(p) = model.project(b) else { return false };
        match bearing_to_curve_distance(model, b, &p, &long.geo.circle) {
            Ok(d) => total += d,
            Err(_) => return false,
        }
    }
    total / probes.len() as f64 <= max_px
}

/// Merges every group of parallel flanks into its longest member, whose
/// circle is refitted over the pixels of all flanks so it follows the middle
/// of the stroke. Survivors stay in detection order.
fn merge_flanks(segs: Vec<CurveSegment>, model: &CameraModel<f64>, max_px: f64, t_fit_px: f64) -> Vec<CurveSegment> {
    let mut order: Vec<usize> = (0..segs.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(segs[i].chain.len()), i));
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in order {
        match groups.iter_mut().find(|(k, _)| is_flank_of(model, &segs[i], &segs[*k], max_px)) {
            Some((_, absorbed)) => absorbed.push(i),
            None => groups.push((i, Vec::new())),
        }
    }
    groups.sort_unstable_by_key(|g| g.0);
    groups
        .into_iter()
        .map(|(k, absorbed)| {
            let own = &segs[k];
            if absorbed.is_empty() {
                return own.clone();
            }
            centre_line(model, own, absorbed.iter().map(|&i| &segs[i]), t_fit_px).unwrap_or_else(|| own.clone())
        })
        .collect()
}

/// `own` with its circle refitted over its pixels and those of `flanks`;
/// `None` when the refit fails or no longer fits `own`'s chain on average
/// within the walk tolerance.
fn centre_line<'a>(
    model: &CameraModel<f64>,
    own: &CurveSegment,
    flanks: impl Iterator<Item = &'a CurveSegment>,
    t_fit_px: f64,
) -> Option<CurveSegment> {
    let bearing = |p: &EdgePixel| model.unproject(&p.point()).ok();
    let mut pts: Vec<Bearing<f64>> = own.chain.iter().filter_map(bearing).collect();
    for f in flanks {
        pts.extend(f.chain.iter().filter_map(bearing));
    }
    let circle = fit_great_circle(&pts).ok()?.circle;
    let mut total = 0.0;
    for p in &own.chain {
        let b = bearing(p)?;
        total += bearing_to_curve_distance(model, &b, &p.point(), &circle).ok()?;
    }
    let avg = total / own.chain.len() as f64;
    if !(avg <= t_fit_px) {
        return None;
    }
    let (first, last) = (bearing(own.chain.first()?)?, bearing(own.chain.last()?)?);
    let geo = GeodesicSegment::on_circle(circle, nearest_on_circle(&first, &circle).ok()?, nearest_on_circle(&last, &circle).ok()?).ok()?;
    Some(CurveSegment { chain: own.chain.clone(), geo, avg_fit_px: avg })
}
