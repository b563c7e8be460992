//! Fixed feature extractors for the perceptual term.
//!
//! The VGG16 extractor runs the first three convolution stages (up to the
//! ReLU after the seventh convolution) on ImageNet-normalised input. Its
//! weights are read from a safetensors file using torchvision's
//! `features.<index>.{weight,bias}` names.

use std::fs;
use std::path::{Path, PathBuf};

use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

/// torchvision indices of the convolutions used, with a 2×2 max-pool
/// after the ones flagged `true`.
const VGG_LAYERS: [(usize, usize, usize, bool); 7] = [
    (0, 3, 64, false),
    (2, 64, 64, true),
    (5, 64, 128, false),
    (7, 128, 128, true),
    (10, 128, 256, false),
    (12, 256, 256, false),
    (14, 256, 256, false),
];
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// Perceptual term fixed at 0.
    #[default]
    Null,
    Vgg16,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualConfig {
    pub extractor: ExtractorKind,
    pub weights: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub enum PerceptualExtractor {
    Null,
    Vgg16(Vgg16Features),
}

impl PerceptualExtractor {
    pub fn from_config(cfg: &PerceptualConfig) -> Result<Self> {
        match cfg.extractor {
            ExtractorKind::Null => Ok(Self::Null),
            ExtractorKind::Vgg16 => {
                let path = cfg
                    .weights
                    .as_ref()
                    .ok_or_else(|| Error::Weights("the vgg16 extractor needs loss.perceptual.weights".into()))?;
                Ok(Self::Vgg16(Vgg16Features::load(path)?))
            }
        }
    }

    /// MSE between extracted features, or `None` for the null extractor.
    pub fn loss_graph<T: Scalar>(&self, g: &mut Graph<T>, output: Var, target: Var) -> Option<Var> {
        match self {
            Self::Null => None,
            Self::Vgg16(net) => {
                let fo = net.features(g, output);
                let target = g.detach(target);
                let ft = net.features(g, target);
                Some(g.mse(fo, ft))
            }
        }
    }
}

/// Frozen VGG16 convolution stack.
#[derive(Clone, Debug)]
pub struct Vgg16Features {
    layers: Vec<(Tensor<f64>, Tensor<f64>, bool)>,
}

impl Vgg16Features {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Weights(format!("cannot read {}: {e}", path.display())))?;
        let st = SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Weights(format!("{} is not a safetensors file: {e}", path.display())))?;
        let read = |name: String, shape: &[usize]| -> Result<Tensor<f64>> {
            let view = st
                .tensor(&name)
                .map_err(|_| Error::Weights(format!("{}: missing tensor {name}", path.display())))?;
            if view.shape() != shape {
                return Err(Error::Weights(format!(
                    "{}: {name} has shape {:?}, expected {shape:?}",
                    path.display(),
                    view.shape()
                )));
            }
            let data: Vec<f64> = match view.dtype() {
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                other => return Err(Error::Weights(format!("{}: {name} has unsupported dtype {other:?}", path.display()))),
            };
            Ok(Tensor::from_vec(shape, data))
        };
        let layers = VGG_LAYERS
            .iter()
            .map(|&(idx, ci, co, pool)| {
                Ok((
                    read(format!("features.{idx}.weight"), &[co, ci, 3, 3])?,
                    read(format!("features.{idx}.bias"), &[co])?,
                    pool,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn features<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let scale: Vec<T> = IMAGENET_STD.iter().map(|s| T::of(1.0 / s)).collect();
        let shift: Vec<T> = IMAGENET_MEAN.iter().zip(IMAGENET_STD).map(|(m, s)| T::of(-m / s)).collect();
        let mut h = g.channel_affine(x, &scale, &shift);
        for (w, b, pool) in &self.layers {
            let (w, b) = (g.input(w.cast()), g.input(b.cast()));
            let y = g.conv2d(h, w, b, 1, 1);
            h = g.relu(y);
            if *pool {
                h = g.maxpool2(h);
            }
        }
        h
    }
}
