//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::{Quaternion, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ba::{parse_problem, solve, write_problem, SolveOptions, SolveReport};
use crate::camera::{load_model, CameraModel};
use crate::descriptor::{compute_rlbd, match_descriptors, MatchParams, RlbdDescriptor};
use crate::detector::{detect, CurveSegment, DetectorParams};
use crate::eval::{evaluate_pair, make_rotated_pair, Metric, PairResult, MAX_PAIR_ROTATION_DEG};
use crate::image::GrayImage;
use crate::io::{chains_csv, descriptor_dump, eval_csv, fmt_sig9, gt_csv, matches_csv, segments_csv, write_atomic};
use crate::line::{orthonormal_to_plucker, plucker_to_orthonormal, triangulate_line, LineObservation};
use crate::synthetic::{gen_ba_problem, gen_scene, image_size_for, render, sample_rotation, BaSceneSpec, Bounds, RenderStyle};

/// Image size used when the camera file does not specify one.
pub const DEFAULT_IMAGE_SIZE: (usize, usize) = (1280, 960);

#[derive(Parser, Debug)]
#[command(name = "geoseg", version, about = "Geodesic segment detection and point-line estimation for wide-angle cameras")]
struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct SeedArg {
    /// Random seed; falls back to GEOSEG_SEED, then 7.
    #[arg(long, env = "GEOSEG_SEED", default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct DetectorArgs {
    #[arg(long, default_value_t = DetectorParams::default().t_anchor)]
    t_anchor: u16,
    #[arg(long, default_value_t = DetectorParams::default().t_gradient_min)]
    t_gradient_min: u16,
    #[arg(long, default_value_t = DetectorParams::default().t_fit_px)]
    t_fit_px: f64,
    #[arg(long, default_value_t = DetectorParams::default().t_outliers)]
    t_outliers: usize,
    #[arg(long, default_value_t = DetectorParams::default().min_fit_len)]
    min_fit_len: usize,
    #[arg(long, default_value_t = DetectorParams::default().min_segment_len_px)]
    min_segment_len_px: f64,
    #[arg(long, default_value_t = DetectorParams::default().refit_interval)]
    refit_interval: usize,
    #[arg(long, default_value_t = DetectorParams::default().anchor_scan_stride)]
    anchor_scan_stride: usize,
    #[arg(long, default_value_t = DetectorParams::default().gaussian_sigma)]
    gaussian_sigma: f64,
    /// Histogram equalisation clip limit; 0 selects plain equalisation.
    #[arg(long, default_value_t = crate::detector::DEFAULT_HIST_CLIP_LIMIT)]
    hist_clip_limit: f64,
    /// Drop parallel flank duplicates within this many pixels; 0 keeps all.
    #[arg(long, default_value_t = DetectorParams::default().flank_merge_px)]
    flank_merge_px: f64,
}

impl DetectorArgs {
    fn params(&self) -> DetectorParams {
        DetectorParams {
            t_anchor: self.t_anchor,
            t_gradient_min: self.t_gradient_min,
            t_fit_px: self.t_fit_px,
            t_outliers: self.t_outliers,
            min_fit_len: self.min_fit_len,
            min_segment_len_px: self.min_segment_len_px,
            refit_interval: self.refit_interval,
            anchor_scan_stride: self.anchor_scan_stride,
            gaussian_sigma: self.gaussian_sigma,
            hist_clip_limit: (self.hist_clip_limit > 0.0).then_some(self.hist_clip_limit),
            flank_merge_px: self.flank_merge_px,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct MatchArgs {
    #[arg(long, default_value_t = MatchParams::default().m_deg)]
    m_deg: f64,
    #[arg(long, default_value_t = MatchParams::default().hamming_frac_max)]
    hamming_frac_max: f64,
    #[arg(long, default_value_t = MatchParams::default().min_overlap_slices)]
    min_overlap_slices: usize,
    /// Accept one-sided nearest neighbours instead of mutual ones.
    #[arg(long)]
    no_mutual_check: bool,
}

impl MatchArgs {
    fn params(&self) -> MatchParams {
        MatchParams {
            m_deg: self.m_deg,
            hamming_frac_max: self.hamming_frac_max,
            min_overlap_slices: self.min_overlap_slices,
            mutual_check: !self.no_mutual_check,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct SolveArgs {
    #[arg(long, default_value_t = SolveOptions::<f64>::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = SolveOptions::<f64>::default().huber_delta_point)]
    huber_delta_point: f64,
    #[arg(long, default_value_t = SolveOptions::<f64>::default().huber_delta_line)]
    huber_delta_line: f64,
    #[arg(long, default_value_t = SolveOptions::<f64>::default().lm_lambda_init)]
    lm_lambda_init: f64,
    /// Evaluate residual blocks on the worker pool.
    #[arg(long)]
    parallel: bool,
}

impl SolveArgs {
    fn options(&self) -> SolveOptions<f64> {
        SolveOptions {
            max_iters: self.max_iters,
            huber_delta_point: self.huber_delta_point,
            huber_delta_line: self.huber_delta_line,
            lm_lambda_init: self.lm_lambda_init,
            parallel: self.parallel,
            ..SolveOptions::default()
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a random wireframe scene with ground truth.
    Synth {
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long, default_value_t = 40)]
        lines: usize,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long, default_value_t = RenderStyle::default().noise_sigma)]
        noise_sigma: f64,
        /// Also write a rotated copy of the frame.
        #[arg(long)]
        pair_out: Option<PathBuf>,
        /// Pair list describing the rotated copy, for `eval`.
        #[arg(long, requires = "pair_out")]
        pairs_out: Option<PathBuf>,
        /// Upper bound of the random pair rotation; defaults to the model limit.
        #[arg(long)]
        max_rotation_deg: Option<f64>,
    },
    /// Detect curve segments in an image.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pixel chain sidecar.
        #[arg(long)]
        chains: Option<PathBuf>,
        #[command(flatten)]
        det: DetectorArgs,
    },
    /// Detect, describe and match segments between two images.
    Match {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image_a: PathBuf,
        #[arg(long)]
        image_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Descriptor dump of the first image.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Descriptor dump of the second image.
        #[arg(long)]
        dump_b: Option<PathBuf>,
        #[command(flatten)]
        det: DetectorArgs,
        #[command(flatten)]
        mat: MatchArgs,
    },
    /// Repeatability and localization error over a list of rotated pairs.
    Eval {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        eps: f64,
        #[arg(long, default_value_t = Metric::Orth)]
        metric: Metric,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        det: DetectorArgs,
    },
    /// Bundle-adjust a problem file.
    Ba {
        #[arg(long)]
        problem: PathBuf,
        /// JSON report; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Refined problem in the input format.
        #[arg(long)]
        out_problem: Option<PathBuf>,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Two-frame triangulate-and-refine example on a seeded synthetic scene.
    Demo {
        #[command(flatten)]
        seed: SeedArg,
        /// Write the generated problem file.
        #[arg(long)]
        problem_out: Option<PathBuf>,
        /// Write the JSON solver report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        solve: SolveArgs,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 domain error, 2 usage error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads as usize).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("geoseg: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("geoseg: {msg}");
            1
        }
    }
}

fn read_model(path: &Path) -> Result<CameraModel<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read camera file {}", path.display()))?;
    load_model(&text).with_context(|| format!("invalid camera file {}", path.display()))
}

fn read_image(path: &Path) -> Result<GrayImage> {
    GrayImage::read_pnm(path).with_context(|| format!("cannot read image {}", path.display()))
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn detect_image(img: &GrayImage, model: &CameraModel<f64>, params: &DetectorParams, path: &Path) -> Result<Vec<CurveSegment>> {
    detect(img, model, params).with_context(|| format!("detection failed on {}", path.display()))
}

/// Descriptors of the segments that have at least one describable slice,
/// keyed by segment id.
fn describe(img: &GrayImage, model: &CameraModel<f64>, segs: &[CurveSegment], mp: &MatchParams) -> Vec<(usize, RlbdDescriptor)> {
    segs.par_iter()
        .enumerate()
        .filter_map(|(i, s)| compute_rlbd(img, model, s, mp).ok().map(|d| (i, d)))
        .collect()
}

/// Path as written into a pair list: bare file name when it sits next to
/// the list, absolute otherwise.
fn list_entry(list: &Path, target: &Path) -> Result<String> {
    let abs = |p: &Path| std::fs::canonicalize(p).with_context(|| format!("cannot resolve {}", p.display()));
    let target_abs = abs(target)?;
    let list_dir = match list.parent() {
        Some(d) if !d.as_os_str().is_empty() => abs(d)?,
        _ => abs(Path::new("."))?,
    };
    if target_abs.parent() == Some(list_dir.as_path()) {
        if let Some(name) = target_abs.file_name() {
            return Ok(name.to_string_lossy().into_owned());
        }
    }
    Ok(target_abs.to_string_lossy().into_owned())
}

struct PairEntry {
    id: String,
    a: PathBuf,
    b: PathBuf,
    rotation: UnitQuaternion<f64>,
}

/// Pair list: `pair_id image_a image_b qw qx qy qz` per line, where the
/// quaternion rotates first-image bearings into the second image. Relative
/// paths resolve against the list's directory; `#` starts a comment.
fn read_pairs(path: &Path) -> Result<Vec<PairEntry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read pair list {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        let t: Vec<&str> = s.split_whitespace().collect();
        let ctx = || format!("{}:{}", path.display(), ln + 1);
        if t.len() != 7 {
            bail!("{}: expected 7 fields, found {}", ctx(), t.len());
        }
        let mut q = [0.0; 4];
        for (k, v) in t[3..].iter().enumerate() {
            q[k] = v.parse().map_err(|_| anyhow!("{}: bad number `{v}`", ctx()))?;
        }
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if !(quat.norm() > 1e-12) {
            bail!("{}: zero quaternion", ctx());
        }
        out.push(PairEntry {
            id: t[0].to_string(),
            a: base.join(t[1]),
            b: base.join(t[2]),
            rotation: UnitQuaternion::from_quaternion(quat),
        });
    }
    Ok(out)
}

fn report_json(report: &SolveReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).context("cannot serialize report")?;
    s.push('\n');
    Ok(s)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { seed, lines, model, out, gt, width, height, noise_sigma, pair_out, pairs_out, max_rotation_deg } => {
            let cam = read_model(&model)?;
            if lines == 0 {
                bail!("--lines must be at least 1");
            }
            let (dw, dh) = image_size_for(&cam, DEFAULT_IMAGE_SIZE);
            let (w, h) = (width.unwrap_or(dw), height.unwrap_or(dh));
            let scene = gen_scene(seed.seed, lines, Bounds::default());
            let style = RenderStyle { noise_sigma, noise_seed: seed.seed, ..RenderStyle::default() };
            let frame = render(&scene, &crate::line::Pose::identity(), &cam, w, h, &style);
            write_out(&out, &frame.image.encode_pgm())?;
            if let Some(gt) = gt {
                write_out(&gt, gt_csv(&frame.gt).as_bytes())?;
            }
            if let Some(pair_out) = pair_out {
                let limit = if cam.wraps_horizontally() { 180.0 } else { MAX_PAIR_ROTATION_DEG };
                let max_deg = max_rotation_deg.unwrap_or(limit);
                let mut rng = ChaCha8Rng::seed_from_u64(seed.seed);
                let rot = sample_rotation(&mut rng, max_deg);
                let pair = make_rotated_pair(&frame.image, &cam, &rot)?;
                write_out(&pair_out, &pair.image.encode_pgm())?;
                if let Some(list) = pairs_out {
                    let q = rot.quaternion();
                    let line = format!(
                        "{} {} {} {} {} {} {}\n",
                        seed.seed,
                        list_entry(&list, &out)?,
                        list_entry(&list, &pair_out)?,
                        q.w,
                        q.i,
                        q.j,
                        q.k
                    );
                    write_out(&list, line.as_bytes())?;
                }
            }
            Ok(())
        }
        Command::Detect { model, image, out, chains, det } => {
            let cam = read_model(&model)?;
            let img = read_image(&image)?;
            let segs = detect_image(&img, &cam, &det.params(), &image)?;
            write_out(&out, segments_csv(&cam, &segs).as_bytes())?;
            if let Some(c) = chains {
                write_out(&c, chains_csv(&segs).as_bytes())?;
            }
            Ok(())
        }
        Command::Match { model, image_a, image_b, out, dump, dump_b, det, mat } => {
            let cam = read_model(&model)?;
            let mp = mat.params();
            mp.validate()?;
            let dp = det.params();
            let (ia, ib) = (read_image(&image_a)?, read_image(&image_b)?);
            let sa = detect_image(&ia, &cam, &dp, &image_a)?;
            let sb = detect_image(&ib, &cam, &dp, &image_b)?;
            let da = describe(&ia, &cam, &sa, &mp);
            let db = describe(&ib, &cam, &sb, &mp);
            let la: Vec<RlbdDescriptor> = da.iter().map(|d| d.1.clone()).collect();
            let lb: Vec<RlbdDescriptor> = db.iter().map(|d| d.1.clone()).collect();
            let matches = match_descriptors(&la, &lb, &mp);
            let ids_a: Vec<usize> = da.iter().map(|d| d.0).collect();
            let ids_b: Vec<usize> = db.iter().map(|d| d.0).collect();
            write_out(&out, matches_csv(&matches, &ids_a, &ids_b).as_bytes())?;
            if let Some(p) = dump {
                write_out(&p, descriptor_dump(&da).as_bytes())?;
            }
            if let Some(p) = dump_b {
                write_out(&p, descriptor_dump(&db).as_bytes())?;
            }
            Ok(())
        }
        Command::Eval { pairs, model, eps, metric, out, det } => {
            let cam = read_model(&model)?;
            let dp = det.params();
            let entries = read_pairs(&pairs)?;
            let rows: Vec<Result<(String, PairResult)>> = entries
                .par_iter()
                .map(|e| {
                    let (ia, ib) = (read_image(&e.a)?, read_image(&e.b)?);
                    if (ia.width(), ia.height()) != (ib.width(), ib.height()) {
                        bail!("pair {}: {} and {} differ in size", e.id, e.a.display(), e.b.display());
                    }
                    let ga: Vec<_> = detect_image(&ia, &cam, &dp, &e.a)?.into_iter().map(|s| s.geo).collect();
                    let gb: Vec<_> = detect_image(&ib, &cam, &dp, &e.b)?.into_iter().map(|s| s.geo).collect();
                    let r = evaluate_pair(&ga, &gb, &e.rotation, &cam, (ia.width(), ia.height()), eps, metric)
                        .with_context(|| format!("pair {}", e.id))?;
                    Ok((e.id.clone(), r))
                })
                .collect();
            let rows: Vec<(String, PairResult)> = rows.into_iter().collect::<Result<_>>()?;
            let csv = eval_csv(&rows);
            match out {
                Some(p) => write_out(&p, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Ba { problem, out, out_problem, solve: sa } => {
            let text = std::fs::read_to_string(&problem).with_context(|| format!("cannot read problem {}", problem.display()))?;
            let p = parse_problem(&text).with_context(|| format!("invalid problem {}", problem.display()))?;
            let (refined, report) = solve(&p, &sa.options()).with_context(|| format!("solving {}", problem.display()))?;
            let json = report_json(&report)?;
            match out {
                Some(path) => write_out(&path, json.as_bytes())?,
                None => print!("{json}"),
            }
            if let Some(path) = out_problem {
                write_out(&path, write_problem(&refined).as_bytes())?;
            }
            Ok(())
        }
        Command::Demo { seed, problem_out, out, solve: sa } => demo(seed.seed, problem_out, out, &sa.options()),
    }
}

/// Triangulates every line of a seeded two-frame scene, then refines poses,
/// points and lines from a perturbed start.
fn demo(seed: u64, problem_out: Option<PathBuf>, out: Option<PathBuf>, opts: &SolveOptions<f64>) -> Result<()> {
    let spec = BaSceneSpec { n_poses: 2, n_points: 50, n_lines: 20, ..BaSceneSpec::default() };
    let sc = gen_ba_problem(seed, &spec);
    let obs_of = |line: usize, frame: usize| -> Option<LineObservation<f64>> {
        sc.truth.line_obs.iter().find(|o| o.line == line && o.obs.frame == frame).map(|o| o.obs)
    };
    let (mut dir_err, mut dist_err) = (0.0f64, 0.0f64);
    let mut initial = sc.initial.clone();
    for (i, truth_line) in sc.truth.lines.iter().enumerate() {
        let (Some(o0), Some(o1)) = (obs_of(i, 0), obs_of(i, 1)) else { continue };
        let gt = orthonormal_to_plucker(truth_line);
        if let Ok(tri) = triangulate_line(&o0, &sc.truth.poses[0], &o1, &sc.truth.poses[1]) {
            dir_err = dir_err.max(tri.direction().cross(gt.direction()).norm().atan2(tri.direction().dot(gt.direction()).abs()));
            dist_err = dist_err.max((tri.distance_to_origin() - gt.distance_to_origin()).abs());
        }
        // initial lines come from the perturbed poses, as in a real pipeline
        if let Ok(l) = triangulate_line(&o0, &initial.poses[0], &o1, &initial.poses[1]) {
            if let Ok(o) = plucker_to_orthonormal(&l) {
                initial.lines[i] = o;
            }
        }
    }
    if let Some(p) = problem_out {
        write_out(&p, write_problem(&initial).as_bytes())?;
    }
    let (_, report) = solve(&initial, opts)?;
    println!("triangulation_direction_error_rad {}", fmt_sig9(dir_err));
    println!("triangulation_distance_error {}", fmt_sig9(dist_err));
    println!("ba_iterations {}", report.iterations);
    println!("ba_final_cost {}", fmt_sig9(report.final_cost));
    println!("ba_ate {}", report.ate.map(fmt_sig9).unwrap_or_else(|| "nan".into()));
    println!("scene_scale {}", fmt_sig9(sc.scale));
    if let Some(p) = out {
        write_out(&p, report_json(&report)?.as_bytes())?;
    }
    Ok(())
}
