//! Procedural scenes for smoke tests and examples.
//!
//! Each scene is a smooth colour gradient with soft-edged blobs and a mild
//! texture. Low-light inputs darken the scene with a random gain and gamma
//! and add sensor-like Gaussian noise; HDR scenes exponentiate a smooth
//! field to span roughly three decades of radiance.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{save_hdr, save_png, DatasetSpec, ImagePlane, PlaneKind, Task};
use crate::{Error, Result};

/// A well-exposed LDR scene in roughly `[0.05, 0.95]`.
pub fn scene(height: usize, width: usize, rng: &mut impl Rng) -> ImagePlane {
    let base: [[f64; 3]; 2] = [
        [rng.gen_range(0.2..0.7), rng.gen_range(0.2..0.7), rng.gen_range(0.2..0.7)],
        [rng.gen_range(0.3..0.9), rng.gen_range(0.3..0.9), rng.gen_range(0.3..0.9)],
    ];
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.gen_range(3..7))
        .map(|_| {
            (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.08..0.3),
                [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)],
            )
        })
        .collect();
    let freq = rng.gen_range(6.0..14.0);
    let amp = rng.gen_range(0.02..0.06);
    ImagePlane::from_fn(
        height,
        width,
        3,
        |y, x, c| {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let t = 0.5 + 0.5 * ((u - 0.5) * angle.cos() + (v - 0.5) * angle.sin());
            let mut val = base[0][c] * (1.0 - t) + base[1][c] * t;
            for &(bx, by, r, col) in &blobs {
                let d = ((u - bx).powi(2) + (v - by).powi(2)).sqrt();
                let w = 1.0 / (1.0 + ((d - r) / 0.015).exp());
                val = val * (1.0 - w) + col[c] * w;
            }
            val += amp * (freq * u * std::f64::consts::TAU).sin() * (freq * v * std::f64::consts::PI).cos();
            val.clamp(0.05, 0.95)
        },
        PlaneKind::Ldr,
    )
}

/// Under-exposed, noisy rendition of `target`: `gain · target^gamma + noise`.
pub fn darken(target: &ImagePlane, gain: f64, gamma: f64, noise: f64, rng: &mut impl Rng) -> ImagePlane {
    let normal = Normal::new(0.0, noise.max(0.0)).expect("valid noise level");
    let data = target
        .data()
        .iter()
        .map(|&v| (gain * v.powf(gamma) + normal.sample(rng)).clamp(0.0, 1.0))
        .collect();
    ImagePlane::new(target.height(), target.width(), target.channels(), data, PlaneKind::Ldr)
        .expect("clamped values are valid")
}

/// Scene radiance spanning about `10^decades : 1`.
pub fn hdr_scene(height: usize, width: usize, decades: f64, rng: &mut impl Rng) -> ImagePlane {
    let ldr = scene(height, width, rng);
    let (sx, sy) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
    let data = ldr
        .data()
        .chunks_exact(3)
        .enumerate()
        .flat_map(|(p, px)| {
            let (y, x) = ((p / width) as f64 / height as f64, (p % width) as f64 / width as f64);
            let sun = (-((x - sx).powi(2) + (y - sy).powi(2)) / 0.01).exp();
            let lum = (px.iter().sum::<f64>() / 3.0).max(1e-3);
            let scale = 10f64.powf(decades * (0.7 * lum + 0.3 * sun)) * 1e-2;
            px.iter().map(move |&v| v * scale).collect::<Vec<_>>()
        })
        .collect();
    ImagePlane::new(height, width, 3, data, PlaneKind::Hdr).expect("positive radiance")
}

/// A simple global operator used as the tone-mapping "reference":
/// `L/(1+L)` on max-normalised radiance with display gamma.
pub fn reference_tonemap(hdr: &ImagePlane) -> ImagePlane {
    let max = hdr.max().max(1e-12);
    let key = 8.0 / max;
    hdr.map(PlaneKind::Ldr, |v| {
        let l = v * key;
        (l / (1.0 + l)).powf(1.0 / 2.2).clamp(0.0, 1.0)
    })
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes `count` low/normal-light PNG pairs under `root/{input,target}`.
pub fn write_lowlight_pairs(
    root: &Path,
    count: usize,
    height: usize,
    width: usize,
    noise: f64,
    seed: u64,
) -> Result<DatasetSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ensure_dir(&root.join("input"))?;
    ensure_dir(&root.join("target"))?;
    for i in 0..count {
        let target = scene(height, width, &mut rng);
        let gain = rng.gen_range(0.08..0.2);
        let gamma = rng.gen_range(1.0..1.3);
        let input = darken(&target, gain, gamma, noise, &mut rng);
        let name = format!("{i:04}.png");
        save_png(&target, root.join("target").join(&name))?;
        save_png(&input, root.join("input").join(&name))?;
    }
    let mut spec = DatasetSpec::from_root(root, Task::Lle);
    spec.resize = Some((height, width));
    Ok(spec)
}

/// Writes `count` HDR scenes (`input/*.hdr`) with tone-mapped PNG targets.
pub fn write_hdr_set(root: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<DatasetSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ensure_dir(&root.join("input"))?;
    ensure_dir(&root.join("target"))?;
    for i in 0..count {
        let hdr = hdr_scene(height, width, 3.0, &mut rng);
        save_hdr(&hdr, root.join("input").join(format!("{i:04}.hdr")))?;
        save_png(&reference_tonemap(&hdr), root.join("target").join(format!("{i:04}.png")))?;
    }
    let mut spec = DatasetSpec::from_root(root, Task::Tm);
    spec.resize = Some((height, width));
    spec.augmentation = Some((0.7, 2.0));
    Ok(spec)
}
