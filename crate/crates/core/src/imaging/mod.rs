//! Image carrier, file I/O and preprocessing.

mod dataset;
pub mod rgbe;
pub mod synthetic;

pub use dataset::{iterate_pairs, list_inputs, DatasetSpec, EpochBatches, PairedDataset, PairedSample, Task};
pub use rgbe::{load_hdr, save_hdr};

use std::path::Path;

use image::{DynamicImage, RgbImage};

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Value range an [`ImagePlane`] promises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaneKind {
    /// Display-referred, `[0, 1]`.
    Ldr,
    /// Scene-referred radiance, `[0, ∞)`.
    Hdr,
    /// High-frequency residuals; any finite value.
    Signed,
}

/// `H×W×C` image stored interleaved (row-major, channel fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    kind: PlaneKind,
    data: Vec<f64>,
}

impl ImagePlane {
    /// Validates the range invariant for `kind`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>, kind: PlaneKind) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidImage(format!(
                "degenerate dimensions {height}×{width}×{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(height * width * channels, data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite value {bad}")));
        }
        match kind {
            PlaneKind::Signed => {}
            PlaneKind::Hdr | PlaneKind::Ldr => {
                if let Some(bad) = data.iter().find(|&&v| v < 0.0) {
                    return Err(Error::InvalidImage(format!("negative value {bad}")));
                }
                if kind == PlaneKind::Ldr {
                    if let Some(bad) = data.iter().find(|&&v| v > 1.0) {
                        return Err(Error::InvalidImage(format!("LDR value {bad} exceeds 1")));
                    }
                }
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            kind,
            data,
        })
    }

    /// Panics on an invalid fill value.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64, kind: PlaneKind) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels], kind)
            .expect("invalid fill value")
    }

    /// Panics if `f` produces values outside the range of `kind`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
        kind: PlaneKind,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data, kind).expect("from_fn produced invalid values")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn kind(&self) -> PlaneKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Elementwise map; panics if the result violates `kind`.
    pub fn map(&self, kind: PlaneKind, f: impl Fn(f64) -> f64) -> Self {
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
            kind,
        )
        .expect("mapped plane violates its range")
    }

    pub fn clamp01(&self) -> Self {
        self.map(PlaneKind::Ldr, |v| v.clamp(0.0, 1.0))
    }

    /// Per-pixel mean over channels, as a single-channel plane.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect()
    }

    /// `[1, C, H, W]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (h, w, c) = self.dims();
        let mut out = vec![T::zero(); h * w * c];
        for (p, px) in self.data.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * h * w + p] = T::of(v);
            }
        }
        Tensor::from_vec(&[1, c, h, w], out)
    }

    /// Batch member `index` of an NCHW tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize, kind: PlaneKind) -> Result<Self> {
        let (n, c, h, w) = t.dims4();
        if index >= n {
            return Err(Error::InvalidArgument(format!("batch index {index} out of range {n}")));
        }
        let src = &t.data()[index * c * h * w..(index + 1) * c * h * w];
        let mut data = vec![0.0; h * w * c];
        for ch in 0..c {
            for p in 0..h * w {
                data[p * c + ch] = src[ch * h * w + p].as_f64();
            }
        }
        Self::new(h, w, c, data, kind)
    }

    /// Reflect-pads bottom/right so both sides are multiples of `multiple`.
    pub fn pad_to_multiple(&self, multiple: usize) -> Self {
        let ph = self.height.div_ceil(multiple) * multiple;
        let pw = self.width.div_ceil(multiple) * multiple;
        if (ph, pw) == (self.height, self.width) {
            return self.clone();
        }
        let reflect = |i: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let r = i % period;
            if r < n {
                r
            } else {
                period - r
            }
        };
        let c = self.channels;
        let mut data = Vec::with_capacity(ph * pw * c);
        for y in 0..ph {
            let sy = reflect(y, self.height);
            for x in 0..pw {
                let sx = reflect(x, self.width);
                let base = (sy * self.width + sx) * c;
                data.extend_from_slice(&self.data[base..base + c]);
            }
        }
        Self {
            height: ph,
            width: pw,
            channels: c,
            kind: self.kind,
            data,
        }
    }

    /// Top-left `h×w` window.
    pub fn crop(&self, h: usize, w: usize) -> Result<Self> {
        if h > self.height || w > self.width || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {h}×{w} outside {}×{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            let start = y * self.width * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Self::new(h, w, c, data, self.kind)
    }
}

/// Loads an 8-bit PNG or JPEG as a 3-channel plane scaled to `[0, 1]`.
///
/// Grayscale is replicated to RGB and alpha is dropped.
pub fn load_ldr(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    let rgb = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(Error::Unsupported {
                path: path.to_path_buf(),
                reason: format!("expected 8 bits per channel, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    ImagePlane::new(h as usize, w as usize, 3, data, PlaneKind::Ldr)
}

/// Writes an 8-bit RGB PNG, clamping to `[0, 1]` and rounding.
pub fn save_png(img: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if img.channels() != 3 {
        return Err(Error::InvalidArgument(format!(
            "PNG export needs 3 channels, got {}",
            img.channels()
        )));
    }
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads LDR or HDR depending on the extension (`.hdr`/`.pic` are RGBE).
pub fn load_any(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    if is_hdr_path(path) {
        load_hdr(path)
    } else {
        load_ldr(path)
    }
}

pub(crate) fn is_hdr_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("hdr") || e.eq_ignore_ascii_case("pic"))
}

pub(crate) fn is_image_path(path: &Path) -> bool {
    is_hdr_path(path)
        || path.extension().and_then(|e| e.to_str()).is_some_and(|e| {
            ["png", "jpg", "jpeg"].iter().any(|x| e.eq_ignore_ascii_case(x))
        })
}

/// `(img / max(img))^β`, elementwise. The result is LDR with max exactly 1.
pub fn augment_hdr(img: &ImagePlane, beta: f64) -> Result<ImagePlane> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("augmentation exponent must be positive, got {beta}")));
    }
    let max = img.max();
    if !(max > 0.0) {
        return Err(Error::InvalidImage("cannot normalise an all-zero image".into()));
    }
    Ok(img.map(PlaneKind::Ldr, |v| (v.max(0.0) / max).powf(beta).min(1.0)))
}

/// Bilinear resample with half-pixel centres and edge clamping.
///
/// Outputs are convex combinations of input samples, so the result never
/// leaves the input's `[min, max]`.
pub fn resize(img: &ImagePlane, height: usize, width: usize) -> Result<ImagePlane> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("degenerate resize target {height}×{width}")));
    }
    if (height, width) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    let c = img.channels();
    let taps = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let scale = src_len as f64 / dst_len as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let xs: Vec<_> = (0..width).map(|x| taps(x, img.width(), width)).collect();
    let mut data = Vec::with_capacity(height * width * c);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, img.height(), height);
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = img.get(y0, x0, ch) * (1.0 - fx) + img.get(y0, x1, ch) * fx;
                let bottom = img.get(y1, x0, ch) * (1.0 - fx) + img.get(y1, x1, ch) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v);
            }
        }
    }
    // Rounding in the blend can step a hair outside the source range.
    let (lo, hi) = (img.min(), img.max());
    for v in &mut data {
        *v = v.clamp(lo, hi);
    }
    ImagePlane::new(height, width, c, data, img.kind())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_bad_values() {
        assert!(ImagePlane::new(1, 1, 3, vec![0.0, f64::NAN, 0.0], PlaneKind::Hdr).is_err());
        assert!(ImagePlane::new(1, 1, 3, vec![0.0, f64::INFINITY, 0.0], PlaneKind::Hdr).is_err());
        assert!(ImagePlane::new(1, 1, 3, vec![0.0, -0.1, 0.0], PlaneKind::Hdr).is_err());
        assert!(ImagePlane::new(1, 1, 3, vec![0.0, 1.5, 0.0], PlaneKind::Ldr).is_err());
        assert!(ImagePlane::new(1, 1, 3, vec![0.0, 1.5, 0.0], PlaneKind::Hdr).is_ok());
        assert!(ImagePlane::new(1, 1, 3, vec![0.0, -1.5, 0.0], PlaneKind::Signed).is_ok());
    }

    #[test]
    fn augment_examples() {
        let img = ImagePlane::from_fn(2, 2, 3, |y, x, _| (y * 2 + x) as f64 * 2.0 / 3.0, PlaneKind::Hdr);
        let out = augment_hdr(&img, 1.0).unwrap();
        assert_eq!(out.max(), 1.0);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b / 2.0).abs() < 1e-15);
        }
        let quarter = ImagePlane::new(1, 2, 3, vec![0.25, 0.25, 0.25, 1.0, 1.0, 1.0], PlaneKind::Hdr).unwrap();
        let sq = augment_hdr(&quarter, 2.0).unwrap();
        assert_eq!(sq.data()[0], 0.0625);
        let unit = ImagePlane::from_fn(3, 3, 3, |y, x, c| ((y + x + c) % 4) as f64 / 3.0, PlaneKind::Ldr);
        assert_eq!(augment_hdr(&unit, 1.0).unwrap(), unit);
        assert!(augment_hdr(&ImagePlane::filled(2, 2, 3, 0.0, PlaneKind::Hdr), 1.0).is_err());
        assert!(augment_hdr(&unit, 0.0).is_err());
    }

    #[test]
    fn resize_examples() {
        let img = ImagePlane::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x + c) % 11) as f64 / 10.0, PlaneKind::Ldr);
        assert_eq!(resize(&img, 5, 7).unwrap(), img);
        let flat = ImagePlane::filled(9, 13, 3, 0.37, PlaneKind::Ldr);
        let r = resize(&flat, 16, 8).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        let checker = ImagePlane::from_fn(2, 2, 3, |y, x, _| ((y + x) % 2) as f64, PlaneKind::Ldr);
        let one = resize(&checker, 1, 1).unwrap();
        assert!(one.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(resize(&img, 0, 4).is_err());
    }

    #[test]
    fn reflect_pad_then_crop_round_trips() {
        let img = ImagePlane::from_fn(5, 6, 3, |y, x, c| (y * 6 + x + c) as f64 / 40.0, PlaneKind::Ldr);
        let padded = img.pad_to_multiple(4);
        assert_eq!(padded.dims(), (8, 8, 3));
        // Row 5 mirrors row 3, column 6 mirrors column 4.
        assert_eq!(padded.get(5, 0, 0), img.get(3, 0, 0));
        assert_eq!(padded.get(0, 6, 1), img.get(0, 4, 1));
        assert_eq!(padded.crop(5, 6).unwrap(), img);
    }

    #[test]
    fn tensor_round_trip_preserves_layout() {
        let img = ImagePlane::from_fn(3, 4, 3, |y, x, c| (y * 100 + x * 10 + c) as f64 / 400.0, PlaneKind::Ldr);
        let t = img.to_tensor::<f64>();
        assert_eq!(t.shape(), &[1, 3, 3, 4]);
        assert_eq!(t.data()[12 + 4 + 2], img.get(1, 2, 1));
        assert_eq!(ImagePlane::from_tensor(&t, 0, PlaneKind::Ldr).unwrap(), img);
    }
}
