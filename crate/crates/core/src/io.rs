//! Text formats shared by the command-line tools, plus atomic file output.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::camera::CameraModel;
use crate::descriptor::{dump_line, Match, RlbdDescriptor};
use crate::detector::CurveSegment;
use crate::eval::PairResult;
use crate::synthetic::GtSegment;

/// `%.9g`-style formatting: nine significant digits, trailing zeros
/// trimmed, exponent notation outside `[1e-5, 1e9)`.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.8e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let mant = trim_zeros(mant);
        return format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub const SEGMENTS_HEADER: &str = "id,n_px,kx,ky,kz,xs,ys,xe,ye,avg_fit_px";

/// Segment table; endpoints are the projections of the geodesic endpoints.
pub fn segments_csv(model: &CameraModel<f64>, segs: &[CurveSegment]) -> String {
    let mut s = format!("{SEGMENTS_HEADER}\n");
    for (id, seg) in segs.iter().enumerate() {
        let k = seg.geo.circle.normal();
        let proj = |b| model.project(b).map(|p| (p.x, p.y)).unwrap_or((f64::NAN, f64::NAN));
        let (xs, ys) = proj(&seg.geo.start);
        let (xe, ye) = proj(&seg.geo.end);
        let row = [k.x, k.y, k.z, xs, ys, xe, ye, seg.avg_fit_px].map(fmt_sig9).join(",");
        let _ = writeln!(s, "{id},{},{row}", seg.chain.len());
    }
    s
}

pub fn chains_csv(segs: &[CurveSegment]) -> String {
    let mut s = String::from("id,x,y\n");
    for (id, seg) in segs.iter().enumerate() {
        for px in &seg.chain {
            let _ = writeln!(s, "{id},{},{}", px.x, px.y);
        }
    }
    s
}

pub const GT_HEADER: &str = "id,kx,ky,kz,bsx,bsy,bsz,bex,bey,bez";

pub fn gt_csv(gt: &[GtSegment]) -> String {
    let mut s = format!("{GT_HEADER}\n");
    for g in gt {
        let k = g.segment.circle.normal();
        let (a, b) = (g.segment.start.as_vector(), g.segment.end.as_vector());
        let row = [k.x, k.y, k.z, a.x, a.y, a.z, b.x, b.y, b.z].map(fmt_sig9).join(",");
        let _ = writeln!(s, "{},{row}", g.id);
    }
    s
}

pub fn descriptor_dump(descs: &[(usize, RlbdDescriptor)]) -> String {
    let mut s = String::new();
    for (id, d) in descs {
        s.push_str(&dump_line(*id, d));
        s.push('\n');
    }
    s
}

pub const MATCHES_HEADER: &str = "id_a,id_b,score";

/// Matches keyed by segment ids rather than descriptor indices.
pub fn matches_csv(matches: &[Match], ids_a: &[usize], ids_b: &[usize]) -> String {
    let mut s = format!("{MATCHES_HEADER}\n");
    for m in matches {
        let _ = writeln!(s, "{},{},{}", ids_a[m.index_a], ids_b[m.index_b], fmt_sig9(m.score));
    }
    s
}

pub const EVAL_HEADER: &str = "pair_id,rep,le,n_a,n_b";

/// Per-pair rows plus a `MEAN` row; an undefined localization error is
/// left empty and excluded from the mean.
pub fn eval_csv(rows: &[(String, PairResult)]) -> String {
    let mut s = format!("{EVAL_HEADER}\n");
    let le = |v: Option<f64>| v.map(fmt_sig9).unwrap_or_default();
    for (id, r) in rows {
        let _ = writeln!(s, "{id},{},{},{},{}", fmt_sig9(r.rep), le(r.le), r.n_detected_a, r.n_detected_b);
    }
    let n = rows.len().max(1) as f64;
    let rep = rows.iter().map(|r| r.1.rep).sum::<f64>() / n;
    let les: Vec<f64> = rows.iter().filter_map(|r| r.1.le).collect();
    let mean_le = (!les.is_empty()).then(|| les.iter().sum::<f64>() / les.len() as f64);
    let na = rows.iter().map(|r| r.1.n_detected_a as f64).sum::<f64>() / n;
    let nb = rows.iter().map(|r| r.1.n_detected_b as f64).sum::<f64>() / n;
    let _ = writeln!(s, "MEAN,{},{},{},{}", fmt_sig9(rep), le(mean_le), fmt_sig9(na), fmt_sig9(nb));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(-0.5), "-0.5");
        assert_eq!(fmt_sig9(std::f64::consts::PI), "3.14159265");
        assert_eq!(fmt_sig9(1234.56789012), "1234.56789");
        assert_eq!(fmt_sig9(1.5e-7), "1.5e-07");
        assert_eq!(fmt_sig9(123456789012.0), "1.23456789e+11");
        assert_eq!(fmt_sig9(0.000123456789123), "0.000123456789");
        assert_eq!(fmt_sig9(999999999.7), "1e+09");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
