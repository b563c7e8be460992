//! Naka-Rushton response curves.
//!
//! `f(I; σ, n) = I^n / (I^n + σ^n)`, evaluated as `1 / (1 + (σ/I)^n)`.
//! `σ` is the half-response intensity and `n` sets the slope. The curve
//! parameters are learned in an unconstrained space and mapped through
//! softplus so they stay strictly positive.

use crate::imaging::{ImagePlane, PlaneKind};
use crate::tensor::Scalar;
use crate::{Error, Result};

/// Lower bound on the intensity used in `∂f/∂I`, where the true derivative
/// is unbounded at `I = 0` for `n < 1`.
pub const NR_EPS: f64 = 1e-8;

/// Initial half-response intensity of every curve.
pub const INIT_SIGMA: f64 = 0.5;
/// Exponent range spanned (inclusive, evenly spaced) by a fresh bank.
pub const INIT_EXPONENT_RANGE: (f64, f64) = (0.5, 8.0);

#[inline]
pub fn response<T: Scalar>(intensity: T, sigma: T, n: T) -> T {
    if intensity <= T::zero() {
        return T::zero();
    }
    // (σ/I)^n overflows to +inf for tiny I, which correctly yields 0.
    T::one() / (T::one() + (sigma / intensity).powf(n))
}

#[derive(Clone, Copy, Debug)]
pub struct Partials<T> {
    pub d_input: T,
    pub d_sigma: T,
    pub d_exponent: T,
}

/// Analytic partial derivatives of [`response`].
///
/// Written in terms of `q = f(1 - f)`, which stays finite where `(σ/I)^n`
/// overflows.
#[inline]
pub fn partials<T: Scalar>(intensity: T, sigma: T, n: T) -> Partials<T> {
    if intensity <= T::zero() {
        return Partials {
            d_input: T::zero(),
            d_sigma: T::zero(),
            d_exponent: T::zero(),
        };
    }
    let f = response(intensity, sigma, n);
    let q = f * (T::one() - f);
    if q == T::zero() {
        return Partials {
            d_input: T::zero(),
            d_sigma: T::zero(),
            d_exponent: T::zero(),
        };
    }
    let ratio = sigma / intensity;
    Partials {
        d_input: n / intensity.max(T::of(NR_EPS)) * q,
        d_sigma: -(n / sigma) * q,
        d_exponent: -q * ratio.ln(),
    }
}

/// Applies one curve elementwise to an image.
pub fn nr_apply(img: &ImagePlane, sigma: f64, n: f64) -> Result<ImagePlane> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("NR sigma must be positive, got {sigma}")));
    }
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidArgument(format!("NR exponent must be positive, got {n}")));
    }
    if img.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("NR input must be nonnegative".into()));
    }
    Ok(img.map(PlaneKind::Ldr, |v| response(v, sigma, n)))
}

/// `n_k = linspace(lo, hi, K)` computed as numpy does (`i·step + lo`, last
/// point pinned to `hi`); a single curve sits at `lo`.
pub fn initial_exponents(k: usize) -> Vec<f64> {
    let (lo, hi) = INIT_EXPONENT_RANGE;
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (k - 1) as f64;
            (0..k).map(|i| if i == k - 1 { hi } else { i as f64 * step + lo }).collect()
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    crate::tensor::softplus(x)
}

/// A raw value whose softplus evaluates to exactly `y` in `f64`, so a
/// freshly initialised bank reproduces its target parameters bit for bit.
///
/// Starts from the analytic inverse `ln(e^y - 1)` and walks a few ulps;
/// falls back to the closest candidate if no exact hit exists.
pub fn softplus_preimage(y: f64) -> f64 {
    assert!(y > 0.0, "softplus preimage needs a positive target");
    let start = if y > 30.0 { y } else { y.exp_m1().ln() };
    let mut best = start;
    let mut best_err = (softplus(start) - y).abs();
    if best_err == 0.0 {
        return start;
    }
    for dir in [1.0f64, -1.0] {
        let mut x = start;
        for _ in 0..256 {
            x = next_toward(x, dir);
            let err = (softplus(x) - y).abs();
            if err == 0.0 {
                return x;
            }
            if err < best_err {
                best = x;
                best_err = err;
            }
        }
    }
    best
}

fn next_toward(x: f64, dir: f64) -> f64 {
    let bits = x.to_bits();
    let up = (x > 0.0) == (dir > 0.0);
    if x == 0.0 {
        return if dir > 0.0 { f64::from_bits(1) } else { -f64::from_bits(1) };
    }
    f64::from_bits(if up { bits + 1 } else { bits - 1 })
}

/// Read-only view of a curve bank in parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct NrCurveBank {
    pub sigmas: Vec<f64>,
    pub exponents: Vec<f64>,
}

impl NrCurveBank {
    pub fn from_raw(sigma_raw: &[f64], exponent_raw: &[f64]) -> Self {
        Self {
            sigmas: sigma_raw.iter().map(|&v| softplus(v)).collect(),
            exponents: exponent_raw.iter().map(|&v| softplus(v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn all_positive(&self) -> bool {
        self.sigmas.iter().chain(&self.exponents).all(|&v| v > 0.0 && v.is_finite())
    }

    /// Responses of every curve at `samples` evenly spaced intensities in
    /// `[0, 1]`; row `i` holds `(I_i, f_1(I_i), …, f_K(I_i))`.
    pub fn sample(&self, samples: usize) -> Vec<Vec<f64>> {
        let samples = samples.max(2);
        (0..samples)
            .map(|i| {
                let x = i as f64 / (samples - 1) as f64;
                let mut row = Vec::with_capacity(self.len() + 1);
                row.push(x);
                row.extend(
                    self.sigmas
                        .iter()
                        .zip(&self.exponents)
                        .map(|(&s, &n)| response(x, s, n)),
                );
                row
            })
            .collect()
    }
}
