//! The light adaptation network.
//!
//! Three sub-networks share one flat, name-keyed parameter map:
//!
//! * `decomp.*`: five Conv3×3+PReLU trunk layers, then a sigmoid head
//!   (`I_low ∈ [0, 1]`) and a linear head (signed `I_high`).
//! * `light.*`: the Naka-Rushton curve bank (`light.nr.*`, stored through
//!   softplus), a three-level U-Net fusing the `3K` curve responses, and a
//!   1×1 sigmoid head producing `I_enh`.
//! * `detail.*`: an input conv, residual blocks `x + PReLU(conv(PReLU(conv x)))`
//!   and a linear output conv. With weight sharing, the first five detail
//!   convolutions reuse the decomposition trunk's weights and biases.
//!
//! `I_light` is `I_enh` after colour recovery, and the output is
//! `I_light + I_detail`. In the one-pathway configuration the light pathway
//! sees the input image directly and there are no `decomp.*`/`detail.*`
//! parameters at all.

pub mod checkpoint;
pub mod color;
mod net;
pub mod nr;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use color::color_recover;
pub use net::{decompose_graph, detail_graph, forward_graph, light_adapt_graph, Bound, ForwardVars};
pub use nr::{nr_apply, NrCurveBank};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::{ImagePlane, PlaneKind};
use crate::tensor::{ColorMode, Graph, Scalar, Tensor};
use crate::{Error, Result};

/// Spatial dimensions must be multiples of this (two 2× poolings).
pub const SIZE_MULTIPLE: usize = 4;

const PRELU_INIT: f64 = 0.25;
/// Detail convolutions that can borrow a trunk layer when sharing.
const SHAREABLE_TRUNK: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of Naka-Rushton curves `K`.
    pub nr_curves: usize,
    pub base_channels: usize,
    /// `false` selects the one-pathway ablation.
    pub use_high_pathway: bool,
    pub color_recovery: ColorMode,
    pub share_weights: bool,
    pub detail_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            nr_curves: 16,
            base_channels: 32,
            use_high_pathway: true,
            color_recovery: ColorMode::LiteralEq5,
            share_weights: true,
            detail_blocks: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nr_curves < 1 {
            return Err(Error::Config("model.nr_curves must be at least 1".into()));
        }
        if self.base_channels < 8 {
            return Err(Error::Config(format!(
                "model.base_channels must be at least 8, got {}",
                self.base_channels
            )));
        }
        if self.use_high_pathway && self.detail_blocks < 1 {
            return Err(Error::Config("model.detail_blocks must be at least 1".into()));
        }
        Ok(())
    }

    /// Parameter name a detail convolution reads its weights from.
    /// Slot 0 is the input conv, slots `2b+1`, `2b+2` the two convs of
    /// block `b` (0-based).
    pub(crate) fn detail_conv_name(&self, slot: usize) -> String {
        if self.share_weights && slot < SHAREABLE_TRUNK {
            return format!("decomp.trunk{}", slot + 1);
        }
        if slot == 0 {
            "detail.in".to_string()
        } else {
            let block = (slot - 1) / 2 + 1;
            let half = if slot % 2 == 1 { "a" } else { "b" };
            format!("detail.block{block}.{half}")
        }
    }

    pub(crate) fn detail_slots(&self) -> usize {
        1 + 2 * self.detail_blocks
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform { fan_in: usize },
    Const(f64),
    Exponents,
}

/// `(name, shape, init)` for every parameter `config` implies, in a fixed order.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let c = config.base_channels;
    let k = config.nr_curves;
    let conv = |out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, co: usize, ci: usize, ks: usize| {
        let fan_in = ci * ks * ks;
        out.push((format!("{name}.weight"), vec![co, ci, ks, ks], Init::Uniform { fan_in }));
        out.push((format!("{name}.bias"), vec![co], Init::Uniform { fan_in }));
    };
    let prelu = |out: &mut Vec<(String, Vec<usize>, Init)>, name: &str| {
        out.push((format!("{name}.prelu"), vec![1], Init::Const(PRELU_INIT)));
    };

    if config.use_high_pathway {
        for i in 1..=5 {
            let name = format!("decomp.trunk{i}");
            conv(&mut out, &name, c, if i == 1 { 3 } else { c }, 3);
            prelu(&mut out, &name);
        }
        conv(&mut out, "decomp.low_head", 3, c, 3);
        conv(&mut out, "decomp.high_head", 3, c, 3);
    }

    out.push(("light.nr.sigma_raw".into(), vec![k], Init::Const(nr::softplus_preimage(nr::INIT_SIGMA))));
    out.push(("light.nr.exponent_raw".into(), vec![k], Init::Exponents));
    let unet: [(&str, usize); 10] = [
        ("l1a", 3 * k),
        ("l1b", c),
        ("l2a", c),
        ("l2b", c),
        ("l3a", c),
        ("l3b", c),
        ("d2a", 2 * c),
        ("d2b", c),
        ("d1a", 2 * c),
        ("d1b", c),
    ];
    for (layer, ci) in unet {
        let name = format!("light.unet.{layer}");
        conv(&mut out, &name, c, ci, 3);
        prelu(&mut out, &name);
    }
    for up in ["up2", "up1"] {
        // Transposed conv weights are [ci, co, 2, 2]; fan-in follows co·4.
        let fan_in = c * 4;
        out.push((format!("light.unet.{up}.weight"), vec![c, c, 2, 2], Init::Uniform { fan_in }));
        out.push((format!("light.unet.{up}.bias"), vec![c], Init::Uniform { fan_in }));
    }
    conv(&mut out, "light.out", 3, c, 1);

    if config.use_high_pathway {
        for slot in 0..config.detail_slots() {
            let conv_name = config.detail_conv_name(slot);
            if !conv_name.starts_with("decomp.") {
                conv(&mut out, &conv_name, c, if slot == 0 { 3 } else { c }, 3);
            }
            let own = ModelConfig {
                share_weights: false,
                ..config.clone()
            }
            .detail_conv_name(slot);
            prelu(&mut out, &own);
        }
        conv(&mut out, "detail.out", 3, c, 3);
    }
    out
}

/// All learnable parameters plus the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    params: BTreeMap<String, Tensor<f64>>,
}

impl ModelState {
    /// Builds a state from named tensors, checking them against the layout
    /// `config` implies.
    pub fn from_params(config: ModelConfig, params: BTreeMap<String, Tensor<f64>>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "configuration implies {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &expected {
            match params.get(name) {
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, configuration implies {shape:?}",
                        t.shape()
                    )))
                }
                Some(t) if !t.all_finite() => {
                    return Err(Error::Checkpoint(format!("parameter {name} is not finite")))
                }
                _ => {}
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<f64>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<f64>> {
        self.params.get(name)
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<f64>> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn curve_bank(&self) -> NrCurveBank {
        NrCurveBank::from_raw(
            self.params["light.nr.sigma_raw"].data(),
            self.params["light.nr.exponent_raw"].data(),
        )
    }

    /// Puts every parameter on `graph`, as trainable leaves or constants.
    pub fn bind<T: Scalar>(&self, graph: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    graph.param(t.cast())
                } else {
                    graph.input(t.cast())
                };
                (name.clone(), v)
            })
            .collect();
        Bound::new(vars)
    }
}

/// Fresh parameters: σ_k = 0.5, n_k = linspace(0.5, 8, K), PReLU slopes
/// 0.25, and `U(−1/√fan_in, 1/√fan_in)` for convolution weights and biases.
pub fn init_state(config: &ModelConfig, seed: u64) -> Result<ModelState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exponents: Vec<f64> = nr::initial_exponents(config.nr_curves)
        .into_iter()
        .map(nr::softplus_preimage)
        .collect();
    let mut params = BTreeMap::new();
    for (name, shape, init) in layout(config) {
        let len: usize = shape.iter().product();
        let data = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Const(v) => vec![v; len],
            Init::Exponents => exponents.clone(),
        };
        params.insert(name, Tensor::from_vec(&shape, data));
    }
    ModelState::from_params(config.clone(), params)
}

/// Low/high-frequency pair of one image.
#[derive(Clone, Debug)]
pub struct DecompOutput {
    pub low: ImagePlane,
    pub high: ImagePlane,
}

/// Everything one forward pass produces.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub output: ImagePlane,
    pub light: ImagePlane,
    pub enhanced: ImagePlane,
    pub detail: Option<ImagePlane>,
    pub decomp: Option<DecompOutput>,
}

fn check_dims(img: &ImagePlane) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::InvalidArgument(format!("expected RGB input, got {} channels", img.channels())));
    }
    if img.height() % SIZE_MULTIPLE != 0 || img.width() % SIZE_MULTIPLE != 0 {
        return Err(Error::InvalidArgument(format!(
            "image {}×{} is not divisible by {SIZE_MULTIPLE}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

fn require_high_pathway(state: &ModelState) -> Result<()> {
    if state.config.use_high_pathway {
        Ok(())
    } else {
        Err(Error::InvalidArgument("the one-pathway model has no decomposition network".into()))
    }
}

pub fn decompose(img: &ImagePlane, state: &ModelState) -> Result<DecompOutput> {
    check_dims(img)?;
    require_high_pathway(state)?;
    let mut g = Graph::<f64>::new();
    let p = state.bind(&mut g, false);
    let x = g.input(img.to_tensor());
    let (low, high) = decompose_graph(&mut g, &p, x);
    Ok(DecompOutput {
        low: ImagePlane::from_tensor(g.value(low), 0, PlaneKind::Ldr)?,
        high: ImagePlane::from_tensor(g.value(high), 0, PlaneKind::Signed)?,
    })
}

/// `I_enh`: curve bank, fusion U-Net and 1×1 sigmoid head (no colour recovery).
pub fn light_adapt(low: &ImagePlane, state: &ModelState) -> Result<ImagePlane> {
    check_dims(low)?;
    if low.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidArgument("light adaptation input must lie in [0, 1]".into()));
    }
    let mut g = Graph::<f64>::new();
    let p = state.bind(&mut g, false);
    let x = g.input(low.to_tensor());
    let enh = light_adapt_graph(&mut g, &p, &state.config, x);
    ImagePlane::from_tensor(g.value(enh), 0, PlaneKind::Ldr)
}

pub fn detail_enhance(high: &ImagePlane, state: &ModelState) -> Result<ImagePlane> {
    check_dims(high)?;
    require_high_pathway(state)?;
    let mut g = Graph::<f64>::new();
    let p = state.bind(&mut g, false);
    let x = g.input(high.to_tensor());
    let d = detail_graph(&mut g, &p, &state.config, x);
    ImagePlane::from_tensor(g.value(d), 0, PlaneKind::Signed)
}

/// Full forward pass in double precision, returning every intermediate.
pub fn forward(img: &ImagePlane, state: &ModelState) -> Result<ForwardOutput> {
    check_dims(img)?;
    let mut g = Graph::<f64>::new();
    let p = state.bind(&mut g, false);
    let x = g.input(img.to_tensor());
    let f = forward_graph(&mut g, &p, &state.config, x);
    let plane = |v, kind| ImagePlane::from_tensor(g.value(v), 0, kind);
    let decomp = match (f.low, f.high) {
        (Some(low), Some(high)) => Some(DecompOutput {
            low: plane(low, PlaneKind::Ldr)?,
            high: plane(high, PlaneKind::Signed)?,
        }),
        _ => None,
    };
    Ok(ForwardOutput {
        output: plane(f.output, PlaneKind::Signed)?,
        light: plane(f.light, PlaneKind::Hdr)?,
        enhanced: plane(f.enhanced, PlaneKind::Ldr)?,
        detail: f.detail.map(|d| plane(d, PlaneKind::Signed)).transpose()?,
        decomp,
    })
}

/// Anything that maps an input image to an enhanced LDR image.
pub trait Enhancer {
    fn enhance(&self, img: &ImagePlane) -> Result<ImagePlane>;
}

impl Enhancer for ModelState {
    /// Single-precision inference at native size: reflect-pad to a multiple
    /// of 4, run, crop back and clamp to `[0, 1]`.
    fn enhance(&self, img: &ImagePlane) -> Result<ImagePlane> {
        if img.channels() != 3 {
            return Err(Error::InvalidArgument("expected an RGB image".into()));
        }
        let padded = img.pad_to_multiple(SIZE_MULTIPLE);
        let mut g = Graph::<f32>::new();
        let p = self.bind(&mut g, false);
        let x = g.input(padded.to_tensor());
        let f = forward_graph(&mut g, &p, &self.config, x);
        let out = g.value(f.output).map(|v| v.clamp(0.0, 1.0));
        ImagePlane::from_tensor(&out, 0, PlaneKind::Ldr)?.crop(img.height(), img.width())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            nr_curves: 4,
            base_channels: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_reproduces_curve_parameters() {
        let s = init_state(&small(), 7).unwrap();
        let bank = s.curve_bank();
        assert_eq!(bank.sigmas, vec![0.5; 4]);
        assert_eq!(bank.exponents, vec![0.5, 3.0, 5.5, 8.0]);
    }

    #[test]
    fn init_is_deterministic_in_the_seed() {
        assert_eq!(init_state(&small(), 3).unwrap(), init_state(&small(), 3).unwrap());
        assert_ne!(init_state(&small(), 3).unwrap(), init_state(&small(), 4).unwrap());
    }

    #[test]
    fn shared_layers_appear_once() {
        let shared = init_state(&small(), 0).unwrap();
        assert!(shared.param("detail.in.weight").is_none());
        assert!(shared.param("detail.block3.a.weight").is_some());
        assert!(shared.param("detail.in.prelu").is_some());
        let own = init_state(&ModelConfig { share_weights: false, ..small() }, 0).unwrap();
        assert!(own.param("detail.in.weight").is_some());
    }

    #[test]
    fn one_pathway_has_only_light_parameters() {
        let s = init_state(&ModelConfig { use_high_pathway: false, ..small() }, 0).unwrap();
        assert!(s.params().keys().all(|k| k.starts_with("light.")));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { nr_curves: 0, ..small() }.validate().is_err());
        assert!(ModelConfig { base_channels: 4, ..small() }.validate().is_err());
    }

    #[test]
    fn from_params_rejects_foreign_layouts() {
        let s = init_state(&small(), 0).unwrap();
        let other = ModelConfig { nr_curves: 5, ..small() };
        assert!(ModelState::from_params(other, s.params().clone()).is_err());
    }

    #[test]
    fn dimension_contract() {
        let s = init_state(&small(), 0).unwrap();
        let bad = ImagePlane::filled(10, 12, 3, 0.5, PlaneKind::Ldr);
        assert!(decompose(&bad, &s).is_err());
        assert!(forward(&bad, &s).is_err());
        // Inference pads instead.
        let out = s.enhance(&bad).unwrap();
        assert_eq!(out.dims(), (10, 12, 3));
    }
}
