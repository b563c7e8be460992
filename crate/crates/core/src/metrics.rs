//! Full-reference quality metrics.
//!
//! SSIM is computed on luminance (mean of the channels) with an 11×11
//! Gaussian window (σ = 1.5), `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²`, and
//! averaged over all fully-contained windows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::imaging::ImagePlane;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn same_shape(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(a.dims(), b.dims()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &ImagePlane, b: &ImagePlane, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Structural similarity with peak 1.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    ssim_with_peak(a, b, 1.0)
}

pub fn ssim_with_peak(a: &ImagePlane, b: &ImagePlane, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}"
        )));
    }
    let (la, lb) = (a.luminance(), b.luminance());
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&la, h, w, &k);
    let mu_b = filter_valid(&lb, h, w, &k);
    let e_aa = filter_valid(&prod(&la, &la), h, w, &k);
    let e_bb = filter_valid(&prod(&lb, &lb), h, w, &k);
    let e_ab = filter_valid(&prod(&la, &lb), h, w, &k);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Per-image scores and their means.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Self {
            rows,
            mean_psnr,
            mean_ssim,
        }
    }

    /// `filename,psnr,ssim` rows; identical pairs print `inf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("filename,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.6}", r.name, fmt_db(r.psnr), r.ssim);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::PlaneKind;
    use approx::assert_relative_eq;

    fn flat(v: f64) -> ImagePlane {
        ImagePlane::filled(16, 16, 3, v, PlaneKind::Ldr)
    }

    #[test]
    fn psnr_examples() {
        assert_relative_eq!(psnr(&flat(0.0), &flat(0.1), 1.0).unwrap(), 20.0, epsilon = 1e-9);
        assert_eq!(psnr(&flat(0.3), &flat(0.3), 1.0).unwrap(), f64::INFINITY);
        assert_relative_eq!(psnr(&flat(0.0), &flat(0.5), 1.0).unwrap(), 6.020599913279624, epsilon = 1e-12);
        assert!(psnr(&flat(0.0), &ImagePlane::filled(8, 16, 3, 0.0, PlaneKind::Ldr), 1.0).is_err());
    }

    #[test]
    fn window_sums_to_one() {
        assert_relative_eq!(gaussian_window().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ssim_identity_and_size_guard() {
        let img = ImagePlane::from_fn(20, 24, 3, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f64 / 10.0, PlaneKind::Ldr);
        assert_relative_eq!(ssim(&img, &img).unwrap(), 1.0, epsilon = 1e-12);
        let small = ImagePlane::filled(10, 30, 3, 0.5, PlaneKind::Ldr);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn csv_writes_inf() {
        let r = MetricReport::from_rows(vec![MetricRow {
            name: "a.png".into(),
            psnr: f64::INFINITY,
            ssim: 1.0,
        }]);
        assert_eq!(r.to_csv(), "filename,psnr,ssim\na.png,inf,1.000000\n");
    }
}
