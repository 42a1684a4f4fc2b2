//! Band-based binary descriptors computed per fixed-angle slice of a curve
//! segment, and Hamming matching of the recombined slice sequences.

use std::sync::OnceLock;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraModel;
use crate::detector::CurveSegment;
use crate::image::GrayImage;
use crate::sphere::{slice_segment, GeodesicSegment};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("slice projects outside the image")]
    SliceOutsideImage,
    #[error("no slice of the segment could be described")]
    NoSlices,
    #[error("invalid match parameters: {0}")]
    InvalidParams(String),
}

pub const N_BANDS: usize = 9;
pub const BAND_WIDTH_PX: usize = 7;
/// Mean and standard deviation of four gradient sums per band.
pub const STATS_PER_BAND: usize = 8;
pub const FLOAT_DIMS: usize = N_BANDS * STATS_PER_BAND;
pub const DESCRIPTOR_BITS: usize = 256;
const PAIR_TABLE_SEED: u64 = 0x5eed_1bd0;

/// 256-bit binary descriptor of one arc slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SliceDescriptor {
    pub bits: [u64; 4],
}

impl SliceDescriptor {
    pub fn hamming(&self, other: &SliceDescriptor) -> u32 {
        self.bits.iter().zip(other.bits.iter()).map(|(a, b)| (a ^ b).count_ones()).sum()
    }

    pub fn to_hex(&self) -> String {
        self.bits.iter().map(|w| format!("{w:016x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 || !s.is_ascii() {
            return None;
        }
        let mut bits = [0u64; 4];
        for (i, w) in bits.iter_mut().enumerate() {
            *w = u64::from_str_radix(&s[16 * i..16 * (i + 1)], 16).ok()?;
        }
        Some(SliceDescriptor { bits })
    }
}

/// Slice descriptors in arc order from the segment start. `mirrored[i]`
/// describes slice `i` as seen when travelling the segment backwards.
#[derive(Debug, Clone, PartialEq)]
pub struct RlbdDescriptor {
    pub slices: Vec<SliceDescriptor>,
    pub mirrored: Vec<SliceDescriptor>,
    pub m_deg: f64,
}

impl RlbdDescriptor {
    /// The same descriptor for the segment travelled end to start.
    pub fn reversed(&self) -> RlbdDescriptor {
        RlbdDescriptor {
            slices: self.mirrored.iter().rev().copied().collect(),
            mirrored: self.slices.iter().rev().copied().collect(),
            m_deg: self.m_deg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    pub m_deg: f64,
    pub hamming_frac_max: f64,
    pub min_overlap_slices: usize,
    pub mutual_check: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams { m_deg: 10.0, hamming_frac_max: 0.25, min_overlap_slices: 2, mutual_check: true }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        if !(self.m_deg > 0.0) {
            return Err(DescriptorError::InvalidParams("m_deg must be positive".into()));
        }
        if !(self.hamming_frac_max > 0.0 && self.hamming_frac_max < 1.0) {
            return Err(DescriptorError::InvalidParams("hamming_frac_max must lie in (0, 1)".into()));
        }
        if self.min_overlap_slices == 0 {
            return Err(DescriptorError::InvalidParams("min_overlap_slices must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed comparison pairs over the float descriptor dimensions.
fn pair_table() -> &'static [(u8, u8); DESCRIPTOR_BITS] {
    static TABLE: OnceLock<[(u8, u8); DESCRIPTOR_BITS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(PAIR_TABLE_SEED);
        let mut table = [(0u8, 0u8); DESCRIPTOR_BITS];
        for entry in table.iter_mut() {
            let i = rng.random_range(0..FLOAT_DIMS);
            let mut j = rng.random_range(0..FLOAT_DIMS - 1);
            if j >= i {
                j += 1;
            }
            *entry = (i as u8, j as u8);
        }
        table
    })
}

fn binarize(v: &[f64; FLOAT_DIMS]) -> SliceDescriptor {
    let mut bits = [0u64; 4];
    for (k, &(i, j)) in pair_table().iter().enumerate() {
        if v[i as usize] > v[j as usize] {
            bits[k / 64] |= 1 << (k % 64);
        }
    }
    SliceDescriptor { bits }
}

/// Unit-normalises, clips at 0.4 and renormalises a block in place.
fn normalize_block(block: &mut [f64]) {
    for _ in 0..2 {
        let n = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n <= 1e-12 {
            block.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        block.iter_mut().for_each(|v| *v = (*v / n).min(0.4));
    }
    let n = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 1e-12 {
        block.iter_mut().for_each(|v| *v /= n);
    }
}

struct Sampler<'a> {
    img: &'a GrayImage,
    wrap: bool,
}

impl Sampler<'_> {
    fn value(&self, x: f64, y: f64) -> Option<f64> {
        self.img.sample_bilinear(x, y, self.wrap)
    }

    /// Central-difference image gradient; zero where the stencil leaves the image.
    fn gradient(&self, x: f64, y: f64) -> Vector2<f64> {
        match (self.value(x + 1.0, y), self.value(x - 1.0, y), self.value(x, y + 1.0), self.value(x, y - 1.0)) {
            (Some(xp), Some(xm), Some(yp), Some(ym)) => Vector2::new(0.5 * (xp - xm), 0.5 * (yp - ym)),
            _ => Vector2::zeros(),
        }
    }
}

/// Descriptor of one sub-arc, computed on its image chord and oriented by
/// the travel direction from `sub.start` to `sub.end`.
pub fn compute_slice_descriptor(
    img: &GrayImage,
    model: &CameraModel<f64>,
    sub: &GeodesicSegment<f64>,
) -> Result<SliceDescriptor, DescriptorError> {
    compute_slice_descriptor_pair(img, model, sub).map(|p| p.0)
}

/// Descriptors of a sub-arc for both travel directions, forward first.
pub fn compute_slice_descriptor_pair(
    img: &GrayImage,
    model: &CameraModel<f64>,
    sub: &GeodesicSegment<f64>,
) -> Result<(SliceDescriptor, SliceDescriptor), DescriptorError> {
    let p0 = model.project(&sub.start).map_err(|_| DescriptorError::SliceOutsideImage)?;
    let p1 = model.project(&sub.end).map_err(|_| DescriptorError::SliceOutsideImage)?;
    let (w, h) = (img.width() as f64, img.height() as f64);
    let wrap = model.wraps_horizontally();
    let inside = |x: f64, y: f64| y >= 0.0 && y <= h - 1.0 && (wrap || (x >= 0.0 && x <= w - 1.0));
    if !inside(p0.x, p0.y) || !inside(p1.x, p1.y) {
        return Err(DescriptorError::SliceOutsideImage);
    }
    let a = p0.to_vector();
    let mut b = p1.to_vector();
    if wrap {
        while b.x - a.x > 0.5 * w {
            b.x -= w;
        }
        while a.x - b.x > 0.5 * w {
            b.x += w;
        }
    }
    let len = (b - a).norm();
    if len < 1.0 {
        return Err(DescriptorError::SliceOutsideImage);
    }
    let sampler = Sampler { img, wrap };
    let rows = (len.round() as usize).max(2);
    let half_width = (N_BANDS * BAND_WIDTH_PX) as f64 / 2.0;
    let n_cols = N_BANDS * BAND_WIDTH_PX;

    let dir = (b - a) / len;
    let perp = Vector2::new(-dir.y, dir.x);

    // gradient samples g[row][col] in image coordinates
    let mut grads = vec![Vector2::zeros(); rows * n_cols];
    for r in 0..rows {
        let base = a + (b - a) * (r as f64 / (rows - 1) as f64);
        for c in 0..n_cols {
            let p = base + perp * (c as f64 + 0.5 - half_width);
            grads[r * n_cols + c] = sampler.gradient(p.x, p.y);
        }
    }
    let forward = band_statistics(&grads, rows, n_cols, dir, perp, false);
    let backward = band_statistics(&grads, rows, n_cols, -dir, -perp, true);
    Ok((forward, backward))
}

/// Band statistics of the gradient samples in the frame `(dir, perp)`;
/// `flip` reads rows and columns mirrored, which is how the samples appear
/// when travelling the chord backwards.
fn band_statistics(
    grads: &[Vector2<f64>],
    rows: usize,
    n_cols: usize,
    dir: Vector2<f64>,
    perp: Vector2<f64>,
    flip: bool,
) -> SliceDescriptor {
    let half_width = n_cols as f64 / 2.0;
    let sigma_g = half_width;
    let mut sums = vec![[0f64; 4]; rows * N_BANDS];
    for r in 0..rows {
        let rr = if flip { rows - 1 - r } else { r };
        for c in 0..n_cols {
            let cc = if flip { n_cols - 1 - c } else { c };
            let g = grads[rr * n_cols + cc];
            let t = c as f64 + 0.5 - half_width;
            let weight = (-t * t / (2.0 * sigma_g * sigma_g)).exp();
            let gp = g.dot(&perp) * weight;
            let gl = g.dot(&dir) * weight;
            let s = &mut sums[r * N_BANDS + c / BAND_WIDTH_PX];
            if gp > 0.0 {
                s[0] += gp;
            } else {
                s[1] -= gp;
            }
            if gl > 0.0 {
                s[2] += gl;
            } else {
                s[3] -= gl;
            }
        }
    }

    let mut means = [0f64; N_BANDS * 4];
    let mut stds = [0f64; N_BANDS * 4];
    for band in 0..N_BANDS {
        for k in 0..4 {
            let vals = (0..rows).map(|r| sums[r * N_BANDS + band][k]);
            let mean = vals.clone().sum::<f64>() / rows as f64;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows as f64;
            means[band * 4 + k] = mean;
            stds[band * 4 + k] = var.sqrt();
        }
    }
    normalize_block(&mut means);
    normalize_block(&mut stds);
    let mut v = [0f64; FLOAT_DIMS];
    v[..N_BANDS * 4].copy_from_slice(&means);
    v[N_BANDS * 4..].copy_from_slice(&stds);
    binarize(&v)
}

/// Describes each `m_deg` slice of the segment; slices falling outside the
/// image are skipped.
pub fn compute_rlbd(
    img: &GrayImage,
    model: &CameraModel<f64>,
    seg: &CurveSegment,
    params: &MatchParams,
) -> Result<RlbdDescriptor, DescriptorError> {
    compute_rlbd_geo(img, model, &seg.geo, params)
}

pub fn compute_rlbd_geo(
    img: &GrayImage,
    model: &CameraModel<f64>,
    geo: &GeodesicSegment<f64>,
    params: &MatchParams,
) -> Result<RlbdDescriptor, DescriptorError> {
    params.validate()?;
    let (slices, mirrored): (Vec<_>, Vec<_>) = slice_segment(geo, params.m_deg)
        .iter()
        .filter_map(|s| compute_slice_descriptor_pair(img, model, s).ok())
        .unzip();
    if slices.is_empty() {
        return Err(DescriptorError::NoSlices);
    }
    Ok(RlbdDescriptor { slices, mirrored, m_deg: params.m_deg })
}

/// Minimum, over relative shifts and both relative orientations, of the mean
/// slice Hamming fraction. Each aligned slice pair is compared in both
/// travel directions, which keeps the distance symmetric. Alignments must
/// overlap in at least `min_overlap` slices. `None` when no alignment
/// qualifies.
pub fn rlbd_distance(a: &RlbdDescriptor, b: &RlbdDescriptor, min_overlap: usize) -> Option<f64> {
    let (na, nb) = (a.slices.len() as isize, b.slices.len() as isize);
    if na == 0 || nb == 0 {
        return None;
    }
    let need = min_overlap.max(1) as isize;
    let mut best: Option<(u32, isize)> = None;
    for reversed in [false, true] {
        for shift in -(nb - 1)..na {
            let mut total = 0u32;
            let mut count = 0isize;
            for i in shift.max(0)..na.min(shift + nb) {
                let j = i - shift;
                let (ia, jb) = (i as usize, j as usize);
                total += if reversed {
                    let jr = (nb - 1 - j) as usize;
                    a.slices[ia].hamming(&b.mirrored[jr]) + a.mirrored[ia].hamming(&b.slices[jr])
                } else {
                    a.slices[ia].hamming(&b.slices[jb]) + a.mirrored[ia].hamming(&b.mirrored[jb])
                };
                count += 1;
            }
            if count < need {
                continue;
            }
            // compare total/count exactly via cross multiplication
            let better = match best {
                None => true,
                Some((bt, bc)) => (total as i64) * (bc as i64) < (bt as i64) * (count as i64),
            };
            if better {
                best = Some((total, count));
            }
        }
    }
    best.map(|(t, c)| t as f64 / (2.0 * c as f64 * DESCRIPTOR_BITS as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub score: f64,
}

/// Matches two descriptor lists. Pairs with distance above
/// `hamming_frac_max` are discarded; with `mutual_check` only mutual nearest
/// neighbours survive, otherwise pairs are taken greedily by distance. A
/// nearest neighbour tied with another candidate is treated as ambiguous.
pub fn match_descriptors(a: &[RlbdDescriptor], b: &[RlbdDescriptor], params: &MatchParams) -> Vec<Match> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let dist: Vec<Vec<Option<f64>>> = a
        .iter()
        .map(|da| {
            b.iter()
                .map(|db| rlbd_distance(da, db, params.min_overlap_slices).filter(|&d| d <= params.hamming_frac_max))
                .collect()
        })
        .collect();

    let mut out = Vec::new();
    if params.mutual_check {
        let unique_best = |items: &mut dyn Iterator<Item = (usize, Option<f64>)>| -> Option<usize> {
            let mut best: Option<(usize, f64)> = None;
            let mut tied = false;
            for (k, d) in items {
                let Some(d) = d else { continue };
                match best {
                    None => best = Some((k, d)),
                    Some((_, bd)) if d < bd => {
                        best = Some((k, d));
                        tied = false;
                    }
                    Some((_, bd)) if d == bd => tied = true,
                    _ => {}
                }
            }
            if tied {
                None
            } else {
                best.map(|(k, _)| k)
            }
        };
        let best_b: Vec<Option<usize>> =
            (0..a.len()).map(|i| unique_best(&mut (0..b.len()).map(|j| (j, dist[i][j])))).collect();
        let best_a: Vec<Option<usize>> =
            (0..b.len()).map(|j| unique_best(&mut (0..a.len()).map(|i| (i, dist[i][j])))).collect();
        for (i, bj) in best_b.iter().enumerate() {
            if let Some(j) = *bj {
                if best_a[j] == Some(i) {
                    let d = dist[i][j].expect("best has a distance");
                    out.push(Match { index_a: i, index_b: j, score: 1.0 - d });
                }
            }
        }
    } else {
        let mut cand: Vec<(f64, usize, usize)> = Vec::new();
        for (i, row) in dist.iter().enumerate() {
            for (j, d) in row.iter().enumerate() {
                if let Some(d) = d {
                    cand.push((*d, i, j));
                }
            }
        }
        cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut used_a = vec![false; a.len()];
        let mut used_b = vec![false; b.len()];
        for (d, i, j) in cand {
            if !used_a[i] && !used_b[j] {
                used_a[i] = true;
                used_b[j] = true;
                out.push(Match { index_a: i, index_b: j, score: 1.0 - d });
            }
        }
    }
    out.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.index_a.cmp(&y.index_a)).then(x.index_b.cmp(&y.index_b)));
    out
}

/// `id,n_slices,<hex>,<hex>,...`
pub fn dump_line(id: usize, d: &RlbdDescriptor) -> String {
    let mut s = format!("{id},{}", d.slices.len());
    for sl in &d.slices {
        s.push(',');
        s.push_str(&sl.to_hex());
    }
    s
}
