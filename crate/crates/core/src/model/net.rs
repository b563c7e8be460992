use std::collections::BTreeMap;

use super::ModelConfig;
use crate::tensor::{Graph, Scalar, Var};

/// Parameters placed on a graph, looked up by name.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub(crate) fn new(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    /// Panics on an unknown name; layouts are validated when a state is built.
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter {name} is not bound"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

fn conv<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var, pad: usize) -> Var {
    g.conv2d(x, p.get(&format!("{name}.weight")), p.get(&format!("{name}.bias")), 1, pad)
}

/// Conv3×3 then PReLU, with the slope looked up under `act`.
fn conv_act<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, act: &str, x: Var) -> Var {
    let y = conv(g, p, name, x, 1);
    g.prelu(y, p.get(&format!("{act}.prelu")))
}

/// `(I_low, I_high)`: sigmoid head for the low band, linear head for the high band.
pub fn decompose_graph<T: Scalar>(g: &mut Graph<T>, p: &Bound, x: Var) -> (Var, Var) {
    let mut h = x;
    for i in 1..=5 {
        let name = format!("decomp.trunk{i}");
        h = conv_act(g, p, &name, &name, h);
    }
    let low = conv(g, p, "decomp.low_head", h, 1);
    let low = g.sigmoid(low);
    let high = conv(g, p, "decomp.high_head", h, 1);
    (low, high)
}

/// `I_enh` from an image in `[0, 1]`.
pub fn light_adapt_graph<T: Scalar>(g: &mut Graph<T>, p: &Bound, _config: &ModelConfig, x: Var) -> Var {
    let sigma = g.softplus(p.get("light.nr.sigma_raw"));
    let exponent = g.softplus(p.get("light.nr.exponent_raw"));
    let responses = g.nr_bank(x, sigma, exponent);

    let pair = |g: &mut Graph<T>, a: &str, b: &str, x: Var| {
        let a = format!("light.unet.{a}");
        let b = format!("light.unet.{b}");
        let y = conv_act(g, p, &a, &a, x);
        conv_act(g, p, &b, &b, y)
    };
    let e1 = pair(g, "l1a", "l1b", responses);
    let x2 = g.maxpool2(e1);
    let e2 = pair(g, "l2a", "l2b", x2);
    let x3 = g.maxpool2(e2);
    let e3 = pair(g, "l3a", "l3b", x3);

    let u2 = g.conv_transpose2x2(e3, p.get("light.unet.up2.weight"), p.get("light.unet.up2.bias"));
    let c2 = g.concat_channels(&[u2, e2]);
    let d2 = pair(g, "d2a", "d2b", c2);
    let u1 = g.conv_transpose2x2(d2, p.get("light.unet.up1.weight"), p.get("light.unet.up1.bias"));
    let c1 = g.concat_channels(&[u1, e1]);
    let d1 = pair(g, "d1a", "d1b", c1);

    let out = conv(g, p, "light.out", d1, 0);
    g.sigmoid(out)
}

/// `I_detail` from the high-frequency band.
pub fn detail_graph<T: Scalar>(g: &mut Graph<T>, p: &Bound, config: &ModelConfig, x: Var) -> Var {
    let own = ModelConfig {
        share_weights: false,
        ..config.clone()
    };
    let layer = |g: &mut Graph<T>, slot: usize, x: Var| {
        conv_act(g, p, &config.detail_conv_name(slot), &own.detail_conv_name(slot), x)
    };
    let mut h = layer(g, 0, x);
    for b in 0..config.detail_blocks {
        let y = layer(g, 2 * b + 1, h);
        let y = layer(g, 2 * b + 2, y);
        h = g.add(h, y);
    }
    conv(g, p, "detail.out", h, 1)
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub output: Var,
    /// Colour-recovered light-pathway output.
    pub light: Var,
    /// Light-pathway output before colour recovery.
    pub enhanced: Var,
    pub detail: Option<Var>,
    pub low: Option<Var>,
    pub high: Option<Var>,
}

pub fn forward_graph<T: Scalar>(g: &mut Graph<T>, p: &Bound, config: &ModelConfig, x: Var) -> ForwardVars {
    if !config.use_high_pathway {
        let enhanced = light_adapt_graph(g, p, config, x);
        let light = g.color_recover(enhanced, x, config.color_recovery);
        return ForwardVars {
            output: light,
            light,
            enhanced,
            detail: None,
            low: None,
            high: None,
        };
    }
    let (low, high) = decompose_graph(g, p, x);
    let enhanced = light_adapt_graph(g, p, config, low);
    let light = g.color_recover(enhanced, low, config.color_recovery);
    let detail = detail_graph(g, p, config, high);
    let output = g.add(light, detail);
    ForwardVars {
        output,
        light,
        enhanced,
        detail: Some(detail),
        low: Some(low),
        high: Some(high),
    }
}
