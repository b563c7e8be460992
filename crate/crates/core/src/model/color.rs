//! Colour recovery after light adaptation.
//!
//! With `M_x` the per-pixel mean over the RGB channels,
//! `I_light^c = M_enh · S^c / max(M_low, ε)` where `S` is `I_enh`
//! ([`ColorMode::LiteralEq5`]) or `I_low` ([`ColorMode::InputColor`]).
//! The result is clamped to be nonnegative.

use crate::imaging::{ImagePlane, PlaneKind};
use crate::tensor::{ColorMode, Scalar};
use crate::{Error, Result};

/// Floor on the low-frequency channel mean in the denominator.
pub const COLOR_EPS: f64 = 1e-4;

#[inline]
fn mean3<T: Scalar>(v: [T; 3]) -> T {
    (v[0] + v[1] + v[2]) / T::of(3.0)
}

#[inline]
pub(crate) fn recover_pixel<T: Scalar>(enh: [T; 3], low: [T; 3], mode: ColorMode) -> [T; 3] {
    let m_enh = mean3(enh);
    let m_low = mean3(low).max(T::of(COLOR_EPS));
    let src = match mode {
        ColorMode::LiteralEq5 => enh,
        ColorMode::InputColor => low,
    };
    src.map(|s| (m_enh * s / m_low).max(T::zero()))
}

/// Adjoint of [`recover_pixel`]: returns `(∂L/∂enh, ∂L/∂low)`.
#[inline]
pub(crate) fn recover_pixel_backward<T: Scalar>(
    enh: [T; 3],
    low: [T; 3],
    grad: [T; 3],
    mode: ColorMode,
) -> ([T; 3], [T; 3]) {
    let three = T::of(3.0);
    let m_enh = mean3(enh);
    let raw_low = mean3(low);
    let floored = raw_low < T::of(COLOR_EPS);
    let m_low = raw_low.max(T::of(COLOR_EPS));
    let src = match mode {
        ColorMode::LiteralEq5 => enh,
        ColorMode::InputColor => low,
    };
    // The clamp only bites on negative pre-activations.
    let mut g = grad;
    for c in 0..3 {
        if m_enh * src[c] / m_low < T::zero() {
            g[c] = T::zero();
        }
    }
    let s: T = (0..3).map(|c| g[c] * src[c]).sum();
    let d_low_mean = if floored {
        T::zero()
    } else {
        -m_enh * s / (three * m_low * m_low)
    };
    match mode {
        ColorMode::LiteralEq5 => {
            let ge = g.map(|gc| s / (three * m_low) + gc * m_enh / m_low);
            (ge, [d_low_mean; 3])
        }
        ColorMode::InputColor => {
            let ge = [s / (three * m_low); 3];
            let gl = g.map(|gc| gc * m_enh / m_low + d_low_mean);
            (ge, gl)
        }
    }
}

/// Plane-level colour recovery.
pub fn color_recover(enh: &ImagePlane, low: &ImagePlane, mode: ColorMode) -> Result<ImagePlane> {
    if enh.dims() != low.dims() {
        return Err(Error::shape(enh.dims(), low.dims()));
    }
    if enh.channels() != 3 {
        return Err(Error::InvalidArgument(format!(
            "colour recovery needs 3 channels, got {}",
            enh.channels()
        )));
    }
    let mut data = Vec::with_capacity(enh.data().len());
    for (e, l) in enh.data().chunks_exact(3).zip(low.data().chunks_exact(3)) {
        let out = recover_pixel([e[0], e[1], e[2]], [l[0], l[1], l[2]], mode);
        data.extend_from_slice(&out);
    }
    ImagePlane::new(enh.height(), enh.width(), 3, data, PlaneKind::Hdr)
}
