//! Finite-difference oracle for the full objective, shared by the gradient
//! and acceptance suites.
#![allow(dead_code)]

use lanet::losses::{total_loss_graph, LossVars, LossWeights, PerceptualExtractor};
use lanet::model::{decompose_graph, forward_graph, init_state, ModelConfig, ModelState};
use lanet::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REL: f64 = 1e-3;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL * analytic.abs().max(numeric.abs()) + 1e-9
}

pub fn small_model(high: bool) -> ModelConfig {
    ModelConfig {
        nr_curves: 4,
        base_channels: 8,
        detail_blocks: 1,
        use_high_pathway: high,
        ..ModelConfig::default()
    }
}

/// Builds the objective. Returns the graph, the total, the bound parameters
/// and, for the two-pathway model, the light and detail outputs together
/// with the target bands they regress onto.
fn objective(state: &ModelState, input: &Tensor<f64>, target: &Tensor<f64>) -> Objective {
    let mut g = Graph::new();
    let p = state.bind(&mut g, true);
    let x = g.input(input.clone());
    let t = g.input(target.clone());
    let f = forward_graph(&mut g, &p, state.config(), x);
    let (tl, th) = if state.config().use_high_pathway {
        let (a, b) = decompose_graph(&mut g, &p, t);
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let vars = LossVars {
        input: x,
        target: t,
        output: f.output,
        light: f.light,
        detail: f.detail,
        low: f.low,
        high: f.high,
        target_low: tl,
        target_high: th,
    };
    let terms = total_loss_graph(&mut g, &vars, &LossWeights::default(), &PerceptualExtractor::Null);
    let named = p.iter().map(|(n, v)| (n.to_string(), v)).collect();
    Objective {
        total: terms.total,
        named,
        regress: tl.map(|tl| (f.light, f.detail.unwrap(), tl, th.unwrap())),
        g,
    }
}

struct Objective {
    g: Graph<f64>,
    total: Var,
    named: Vec<(String, Var)>,
    regress: Option<(Var, Var, Var, Var)>,
}

fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// The total with the light and detail regression targets held at
/// `frozen`, which is what the stop-gradient differentiates.
fn frozen_total(o: &Objective, frozen: Option<&(Tensor<f64>, Tensor<f64>)>) -> f64 {
    let w = LossWeights::default();
    let mut total = o.g.value(o.total).item();
    if let (Some((light, detail, tl, th)), Some((fl, fh))) = (o.regress, frozen) {
        let v = |x: Var| o.g.value(x);
        total += w.light * (mse(v(light), fl) - mse(v(light), v(tl)));
        total += w.detail * (mse(v(detail), fh) - mse(v(detail), v(th)));
    }
    total
}

/// Compares analytic and numeric derivatives of the total for the picked
/// parameters (or ten random scalars) and returns how many were checked.
pub fn total_loss_check(high: bool, seed: u64, picks: &[(&str, Option<usize>)]) -> usize {
    let state = init_state(&small_model(high), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let input = rand_tensor(&mut rng, &[1, 3, 16, 16], 0.0, 0.4);
    let target = rand_tensor(&mut rng, &[1, 3, 16, 16], 0.2, 0.9);
    let base = objective(&state, &input, &target);
    let grads = base.g.backward(base.total);
    let frozen = base
        .regress
        .map(|(_, _, tl, th)| (base.g.value(tl).clone(), base.g.value(th).clone()));

    let eval = |s: &ModelState| frozen_total(&objective(s, &input, &target), frozen.as_ref());
    // Without explicit picks: ten random scalars, drawn across all tensors by size.
    let names: Vec<(String, usize)> = state.params().iter().map(|(k, t)| (k.clone(), t.len())).collect();
    let total: usize = names.iter().map(|n| n.1).sum();
    let mut chosen: Vec<(String, usize)> = Vec::new();
    for (name, idx) in picks {
        let len = state.param(name).unwrap().len();
        match idx {
            Some(i) => chosen.push((name.to_string(), *i)),
            None => chosen.extend((0..len).map(|i| (name.to_string(), i))),
        }
    }
    while picks.is_empty() && chosen.len() < 10 {
        let mut flat = rng.gen_range(0..total);
        let pick = names
            .iter()
            .find_map(|(n, len)| {
                if flat < *len {
                    Some((n.clone(), flat))
                } else {
                    flat -= len;
                    None
                }
            })
            .unwrap();
        chosen.push(pick);
    }
    let checked = chosen.len();
    for (name, idx) in chosen {
        let var = base.named.iter().find(|(n, _)| *n == name).unwrap().1;
        let analytic = grads.get(var).map_or(0.0, |t| t.data()[idx]);
        let shift = |d: f64| {
            let mut params = state.params().clone();
            params.get_mut(&name).unwrap().data_mut()[idx] += d;
            ModelState::from_params(state.config().clone(), params).unwrap()
        };
        // A larger step here: the total is O(10) while some gradients are
        // O(1e-6), so roundoff dominates at 1e-6.
        let h = 1e-5;
        let numeric = (eval(&shift(h)) - eval(&shift(-h))) / (2.0 * h);
        assert!(
            close(analytic, numeric),
            "total loss wrt {name}[{idx}]: analytic {analytic:e} vs numeric {numeric:e}"
        );
    }
    checked
}
