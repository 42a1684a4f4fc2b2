#![allow(dead_code)]

pub mod backend;
pub mod protocol;

use geoseg::camera::{Bearing, CameraModel, PixelPoint};
use geoseg::sphere::*;
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

pub fn random_bearing(rng: &mut impl Rng) -> Bearing<f64> {
    Bearing::new_unchecked(random_unit(rng))
}

/// Point on the circle with normal `k` at angle `t` from a fixed reference.
pub fn circle_point(k: &Vector3<f64>, t: f64) -> Vector3<f64> {
    let r = if k.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = k.cross(&r).normalize();
    let v = k.cross(&u);
    u * t.cos() + v * t.sin()
}

/// Worst ratio of fitted to best-random objective over `cases` noisy point
/// sets, each compared with `probes` random normals. Values <= 1 mean the
/// fit was never beaten.
pub fn fit_optimality(seed: u64, cases: usize, probes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = random_unit(&mut rng);
        let n = rng.random_range(3..60);
        let noise = rng.random_range(0.0..0.05);
        let pts: Vec<Bearing<f64>> = (0..n)
            .map(|_| {
                let p = circle_point(&k, rng.random_range(0.0..std::f64::consts::TAU)) + random_unit(&mut rng) * noise;
                Bearing::from_vector(p).unwrap()
            })
            .collect();
        let fit = fit_great_circle(&pts).unwrap();
        let obj = |k: &Vector3<f64>| pts.iter().map(|p| p.as_vector().dot(k).powi(2)).sum::<f64>();
        let fitted = obj(fit.circle.normal());
        for _ in 0..probes {
            let other = obj(&random_unit(&mut rng));
            worst = worst.max(fitted / other.max(1e-300));
        }
    }
    worst
}

/// Largest excess of the analytic nearest-point angle over a dense sweep of
/// the circle, and the largest off-circle residual.
pub fn nearest_vs_bruteforce(seed: u64, cases: usize, samples: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut excess, mut off) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..cases {
        let k = random_unit(&mut rng);
        let b = random_bearing(&mut rng);
        let c = GreatCircle::from_normal(k).unwrap();
        let Ok(n) = nearest_on_circle(&b, &c) else { continue };
        off = off.max(n.as_vector().dot(&k).abs());
        let best = (0..samples)
            .map(|i| b.as_vector().dot(&circle_point(&k, i as f64 * std::f64::consts::TAU / samples as f64)).clamp(-1.0, 1.0).acos())
            .fold(f64::INFINITY, f64::min);
        excess = excess.max(b.angle_to(&n) - best);
    }
    (excess, off)
}

/// Compares the pixel-to-curve distance with the minimum pixel distance to
/// `samples` projected circle points. Test pixels lie within `max_offset_deg`
/// of the circle on the sphere, or anywhere in the image when `None`.
/// Returns `(max |d - min|, max (min - d))` over `cases` evaluable pairs.
pub fn pixel_distance_vs_bruteforce(
    model: &CameraModel<f64>,
    seed: u64,
    cases: usize,
    samples: usize,
    max_offset_deg: Option<f64>,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = model.image_size().expect("model with an image size");
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
    let inside = |p: &PixelPoint<f64>| p.x >= 0.0 && p.y >= 0.0 && p.x <= wf && p.y <= hf;
    let (mut gap, mut deficit) = (0.0f64, f64::NEG_INFINITY);
    let mut done = 0;
    while done < cases {
        let k = random_unit(&mut rng);
        let c = GreatCircle::from_normal(k).unwrap();
        let p = match max_offset_deg {
            Some(off) => {
                let on = circle_point(&k, rng.random_range(0.0..std::f64::consts::TAU));
                let axis = nalgebra::Unit::new_normalize(on.cross(&k));
                let tilt = UnitQuaternion::from_axis_angle(&axis, rng.random_range(-off..off).to_radians());
                match model.project(&Bearing::new_unchecked(tilt * on)) {
                    Ok(p) => p,
                    Err(_) => continue,
                }
            }
            None => PixelPoint::new(rng.random_range(0.0..wf), rng.random_range(0.0..hf)),
        };
        if !inside(&p) {
            continue;
        }
        let Ok(d) = pixel_to_curve_distance(model, &p, &c) else { continue };
        let mut best = f64::INFINITY;
        for i in 0..samples {
            let q = Bearing::new_unchecked(circle_point(&k, i as f64 * std::f64::consts::TAU / samples as f64));
            if !model.is_valid_bearing(&q) {
                continue;
            }
            if let Ok(pq) = model.project(&q) {
                best = best.min(model.pixel_distance(&p, &pq));
            }
        }
        gap = gap.max((d - best).abs());
        deficit = deficit.max(best - d);
        done += 1;
    }
    (gap, deficit)
}
