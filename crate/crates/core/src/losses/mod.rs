//! Training objective.
//!
//! Every squared norm is a per-element mean and every gradient penalty is
//! anisotropic total variation (mean absolute forward difference along each
//! spatial axis, summed over the two axes). The same functions exist at two
//! levels: graph builders used by training, and plane-level evaluators.

mod perceptual;

pub use perceptual::{ExtractorKind, PerceptualConfig, PerceptualExtractor, Vgg16Features};

use serde::{Deserialize, Serialize};

use crate::imaging::ImagePlane;
use crate::tensor::{Graph, Scalar, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Reconstruction `‖I − (I_high + I_low)‖²`.
    pub recon: f64,
    /// Low-band fidelity `‖I − I_low‖²`.
    pub low_fidelity: f64,
    /// Smoothness of the input-side low band.
    pub smooth_input: f64,
    /// Smoothness of the target-side low band.
    pub smooth_target: f64,
    pub dc: f64,
    pub light: f64,
    pub detail: f64,
    pub com: f64,
    pub perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 100.0,
            low_fidelity: 2.0,
            smooth_input: 1.0,
            smooth_target: 5.0,
            dc: 1.0,
            light: 10.0,
            detail: 1.0,
            com: 5.0,
            perceptual: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("recon", self.recon),
            ("low_fidelity", self.low_fidelity),
            ("smooth_input", self.smooth_input),
            ("smooth_target", self.smooth_target),
            ("dc", self.dc),
            ("light", self.light),
            ("detail", self.detail),
            ("com", self.com),
            ("perceptual", self.perceptual),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-term values of one objective evaluation. Terms absent from the
/// configured model are reported as 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub dc_in: f64,
    pub dc_gt: f64,
    pub dc: f64,
    pub light: f64,
    pub detail: f64,
    pub com: f64,
    pub perceptual: f64,
    pub total: f64,
}

impl LossReport {
    /// `total` recomputed from the parts.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.dc * self.dc + w.light * self.light + w.detail * self.detail + w.com * self.com + w.perceptual * self.perceptual
    }

    pub fn is_finite(&self) -> bool {
        [
            self.dc_in,
            self.dc_gt,
            self.dc,
            self.light,
            self.detail,
            self.com,
            self.perceptual,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Decomposition loss for one image and its bands.
pub fn dc_graph<T: Scalar>(g: &mut Graph<T>, image: Var, low: Var, high: Var, w: &LossWeights, smooth: f64) -> Var {
    let recon = g.add(high, low);
    let r = g.mse(image, recon);
    let f = g.mse(image, low);
    let s = g.tv(low);
    g.weighted_sum(&[(r, T::of(w.recon)), (f, T::of(w.low_fidelity)), (s, T::of(smooth))])
}

/// Graph handles the objective needs. The `Option` fields are present
/// exactly when the model has a high-frequency pathway.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub input: Var,
    pub target: Var,
    pub output: Var,
    pub light: Var,
    pub detail: Option<Var>,
    pub low: Option<Var>,
    pub high: Option<Var>,
    pub target_low: Option<Var>,
    pub target_high: Option<Var>,
}

/// Handles of each term plus the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub dc_in: Option<Var>,
    pub dc_gt: Option<Var>,
    pub light: Var,
    pub detail: Option<Var>,
    pub com: Var,
    pub perceptual: Option<Var>,
    pub total: Var,
}

impl LossTerms {
    pub fn report<T: Scalar>(&self, g: &Graph<T>) -> LossReport {
        let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item().as_f64());
        let dc_in = val(self.dc_in);
        let dc_gt = val(self.dc_gt);
        LossReport {
            dc_in,
            dc_gt,
            dc: dc_in + dc_gt,
            light: val(Some(self.light)),
            detail: val(self.detail),
            com: val(Some(self.com)),
            perceptual: val(self.perceptual),
            total: val(Some(self.total)),
        }
    }
}

/// Builds the full objective. Target-side bands are detached where they
/// serve as regression targets for the pathways; in the one-pathway model
/// the light pathway regresses onto the target itself.
pub fn total_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    v: &LossVars,
    w: &LossWeights,
    extractor: &PerceptualExtractor,
) -> LossTerms {
    let two_path = match (v.low, v.high, v.target_low, v.target_high, v.detail) {
        (Some(low), Some(high), Some(tl), Some(th), Some(detail)) => Some((low, high, tl, th, detail)),
        (None, None, None, None, None) => None,
        _ => panic!("loss inputs must all be present or all be absent for the high-frequency pathway"),
    };
    let mut sum = Vec::new();
    let (dc_in, dc_gt, detail, light) = match two_path {
        Some((low, high, tl, th, detail)) => {
            let dc_in = dc_graph(g, v.input, low, high, w, w.smooth_input);
            let dc_gt = dc_graph(g, v.target, tl, th, w, w.smooth_target);
            let tl_fixed = g.detach(tl);
            let th_fixed = g.detach(th);
            let light = g.mse(v.light, tl_fixed);
            let det = g.mse(detail, th_fixed);
            sum.push((dc_in, T::of(w.dc)));
            sum.push((dc_gt, T::of(w.dc)));
            sum.push((det, T::of(w.detail)));
            (Some(dc_in), Some(dc_gt), Some(det), light)
        }
        None => (None, None, None, g.mse(v.light, v.target)),
    };
    sum.push((light, T::of(w.light)));
    let com = g.mse(v.output, v.target);
    sum.push((com, T::of(w.com)));
    let perceptual = extractor.loss_graph(g, v.output, v.target);
    if let Some(p) = perceptual {
        sum.push((p, T::of(w.perceptual)));
    }
    let total = g.weighted_sum(&sum);
    LossTerms {
        dc_in,
        dc_gt,
        light,
        detail,
        com,
        perceptual,
        total,
    }
}

fn check_same(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(a.dims(), b.dims()));
    }
    Ok(())
}

fn on_graph(g: &mut Graph<f64>, p: &ImagePlane) -> Var {
    g.input(p.to_tensor())
}

fn mse_planes(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_same(a, b)?;
    let mut g = Graph::new();
    let (x, y) = (on_graph(&mut g, a), on_graph(&mut g, b));
    let l = g.mse(x, y);
    Ok(g.value(l).item())
}

fn dc_planes(image: &ImagePlane, low: &ImagePlane, high: &ImagePlane, w: &LossWeights, smooth: f64) -> Result<f64> {
    check_same(image, low)?;
    check_same(image, high)?;
    let mut g = Graph::new();
    let (x, l, h) = (on_graph(&mut g, image), on_graph(&mut g, low), on_graph(&mut g, high));
    let loss = dc_graph(&mut g, x, l, h, w, smooth);
    Ok(g.value(loss).item())
}

pub fn loss_dc_in(input: &ImagePlane, low: &ImagePlane, high: &ImagePlane, w: &LossWeights) -> Result<f64> {
    dc_planes(input, low, high, w, w.smooth_input)
}

pub fn loss_dc_gt(target: &ImagePlane, low: &ImagePlane, high: &ImagePlane, w: &LossWeights) -> Result<f64> {
    dc_planes(target, low, high, w, w.smooth_target)
}

#[allow(clippy::too_many_arguments)]
pub fn loss_dc(
    input: &ImagePlane,
    low: &ImagePlane,
    high: &ImagePlane,
    target: &ImagePlane,
    target_low: &ImagePlane,
    target_high: &ImagePlane,
    w: &LossWeights,
) -> Result<f64> {
    Ok(loss_dc_in(input, low, high, w)? + loss_dc_gt(target, target_low, target_high, w)?)
}

pub fn loss_light(light: &ImagePlane, target_low: &ImagePlane) -> Result<f64> {
    mse_planes(light, target_low)
}

pub fn loss_detail(detail: &ImagePlane, target_high: &ImagePlane) -> Result<f64> {
    mse_planes(detail, target_high)
}

pub fn loss_com(output: &ImagePlane, target: &ImagePlane) -> Result<f64> {
    mse_planes(output, target)
}

pub fn loss_perceptual(output: &ImagePlane, target: &ImagePlane, extractor: &PerceptualExtractor) -> Result<f64> {
    check_same(output, target)?;
    let mut g = Graph::new();
    let (x, y) = (on_graph(&mut g, output), on_graph(&mut g, target));
    Ok(extractor.loss_graph(&mut g, x, y).map_or(0.0, |l| g.value(l).item()))
}

/// Plane-level counterpart of [`LossVars`].
#[derive(Clone, Copy, Debug)]
pub struct LossPlanes<'a> {
    pub input: &'a ImagePlane,
    pub target: &'a ImagePlane,
    pub output: &'a ImagePlane,
    pub light: &'a ImagePlane,
    pub detail: Option<&'a ImagePlane>,
    pub low: Option<&'a ImagePlane>,
    pub high: Option<&'a ImagePlane>,
    pub target_low: Option<&'a ImagePlane>,
    pub target_high: Option<&'a ImagePlane>,
}

pub fn total_loss(p: &LossPlanes, w: &LossWeights, extractor: &PerceptualExtractor) -> Result<LossReport> {
    let planes = [Some(p.input), Some(p.output), Some(p.light), p.detail, p.low, p.high, p.target_low, p.target_high];
    for q in planes.into_iter().flatten() {
        check_same(p.target, q)?;
    }
    let flags = [p.detail, p.low, p.high, p.target_low, p.target_high].map(|o| o.is_some());
    if flags.iter().any(|&f| f) && !flags.iter().all(|&f| f) {
        return Err(Error::InvalidArgument(
            "high-frequency loss inputs must be all present or all absent".into(),
        ));
    }
    let mut g = Graph::new();
    let mut put = |q: Option<&ImagePlane>| q.map(|q| on_graph(&mut g, q));
    let vars = LossVars {
        input: put(Some(p.input)).unwrap(),
        target: put(Some(p.target)).unwrap(),
        output: put(Some(p.output)).unwrap(),
        light: put(Some(p.light)).unwrap(),
        detail: put(p.detail),
        low: put(p.low),
        high: put(p.high),
        target_low: put(p.target_low),
        target_high: put(p.target_high),
    };
    let terms = total_loss_graph(&mut g, &vars, w, extractor);
    Ok(terms.report(&g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::PlaneKind;
    use approx::assert_relative_eq;

    fn flat(v: f64) -> ImagePlane {
        ImagePlane::filled(8, 8, 3, v, PlaneKind::Signed)
    }

    #[test]
    fn weight_defaults_and_validation() {
        let w = LossWeights::default();
        assert_eq!(w.smooth_target / w.smooth_input, 5.0);
        assert!(w.validate().is_ok());
        assert!(LossWeights { light: 0.0, ..w.clone() }.validate().is_err());
        assert!(LossWeights { com: f64::NAN, ..w }.validate().is_err());
    }

    #[test]
    fn dc_examples() {
        let w = LossWeights::default();
        assert_eq!(loss_dc_in(&flat(0.4), &flat(0.4), &flat(0.0), &w).unwrap(), 0.0);
        assert_eq!(loss_dc_in(&flat(1.0), &flat(0.0), &flat(0.0), &w).unwrap(), 102.0);
        assert!(loss_dc_in(&flat(1.0), &ImagePlane::filled(8, 4, 3, 0.0, PlaneKind::Ldr), &flat(0.0), &w).is_err());
    }

    #[test]
    fn ramp_tv_matches_slope() {
        let w = LossWeights::default();
        let s = 0.03;
        let ramp = ImagePlane::from_fn(8, 8, 3, |_, x, _| s * x as f64, PlaneKind::Ldr);
        let got = loss_dc_gt(&ramp, &ramp, &flat(0.0), &w).unwrap();
        assert_relative_eq!(got, w.smooth_target * s, max_relative = 1e-12);
    }

    #[test]
    fn mse_terms() {
        assert_relative_eq!(loss_light(&flat(0.3), &flat(0.4)).unwrap(), 0.01, max_relative = 1e-12);
        assert_eq!(loss_detail(&flat(0.2), &flat(0.2)).unwrap(), 0.0);
        let a = ImagePlane::from_fn(8, 8, 3, |y, x, c| ((y + 2 * x + c) % 5) as f64 * 0.1, PlaneKind::Ldr);
        assert_eq!(loss_com(&a, &flat(0.1)).unwrap(), loss_com(&flat(0.1), &a).unwrap());
    }

    #[test]
    fn unit_terms_total_eighteen() {
        let r = LossReport {
            dc: 1.0,
            light: 1.0,
            detail: 1.0,
            com: 1.0,
            perceptual: 1.0,
            ..LossReport::default()
        };
        assert_eq!(r.weighted_sum(&LossWeights::default()), 18.0);
    }

    #[test]
    fn total_is_weighted_sum_of_parts() {
        let w = LossWeights::default();
        let mk = |k: usize| ImagePlane::from_fn(8, 8, 3, |y, x, c| ((y * 3 + x * k + c) % 7) as f64 / 7.0, PlaneKind::Ldr);
        let planes: Vec<ImagePlane> = (1..=9).map(mk).collect();
        let p = LossPlanes {
            input: &planes[0],
            target: &planes[1],
            output: &planes[2],
            light: &planes[3],
            detail: Some(&planes[4]),
            low: Some(&planes[5]),
            high: Some(&planes[6]),
            target_low: Some(&planes[7]),
            target_high: Some(&planes[8]),
        };
        let r = total_loss(&p, &w, &PerceptualExtractor::Null).unwrap();
        assert_relative_eq!(r.total, r.weighted_sum(&w), max_relative = 1e-14);
        assert_relative_eq!(r.dc, r.dc_in + r.dc_gt, max_relative = 1e-15);
        assert_relative_eq!(r.light, loss_light(&planes[3], &planes[7]).unwrap(), max_relative = 1e-15);
        assert!(r.dc > 0.0);

        let one = LossPlanes {
            detail: None,
            low: None,
            high: None,
            target_low: None,
            target_high: None,
            ..p
        };
        let r1 = total_loss(&one, &w, &PerceptualExtractor::Null).unwrap();
        assert_eq!((r1.dc, r1.detail), (0.0, 0.0));
        assert_relative_eq!(r1.total, w.light * r1.light + w.com * r1.com, max_relative = 1e-14);

        let broken = LossPlanes { detail: None, ..p };
        assert!(total_loss(&broken, &w, &PerceptualExtractor::Null).is_err());
    }
}
