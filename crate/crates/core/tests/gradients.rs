//! Analytic adjoints against central finite differences, in f64.

mod common;

use common::{close, rand_tensor, total_loss_check};
use lanet::model::nr::{partials, response};
use lanet::tensor::{ColorMode, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

/// Checks d loss / d leaf for every (or up to `max_per_leaf` sampled)
/// element of every leaf. `build` receives the leaves as trainable vars
/// and must return a scalar.
fn check<F>(name: &str, leaves: &[Tensor<f64>], max_per_leaf: usize, build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |values: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (li, leaf) in leaves.iter().enumerate() {
        let ga = grads.get(vars[li]).expect("leaf gradient");
        let idxs: Vec<usize> = if leaf.len() <= max_per_leaf {
            (0..leaf.len()).collect()
        } else {
            (0..max_per_leaf).map(|_| rng.gen_range(0..leaf.len())).collect()
        };
        for i in idxs {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[i] += H;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let analytic = ga.data()[i];
            assert!(
                close(analytic, numeric),
                "{name}: leaf {li} element {i}: analytic {analytic:e} vs numeric {numeric:e}"
            );
        }
    }
}

/// Reduces a tensor output to a scalar with non-uniform upstream gradient.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(y).shape().to_vec();
    let r = g.input(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    g.mse(y, r)
}

#[test]
fn nr_partials_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let i: f64 = rng.gen_range(0.01..1.0);
        let s: f64 = rng.gen_range(0.1..2.0);
        let n: f64 = rng.gen_range(0.3..8.0);
        let p = partials(i, s, n);
        let h = 1e-7;
        let di = (response(i + h, s, n) - response(i - h, s, n)) / (2.0 * h);
        let ds = (response(i, s + h, n) - response(i, s - h, n)) / (2.0 * h);
        let dn = (response(i, s, n + h) - response(i, s, n - h)) / (2.0 * h);
        for (a, b) in [(p.d_input, di), (p.d_sigma, ds), (p.d_exponent, dn)] {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()) + 1e-9, "{a} vs {b} at I={i} σ={s} n={n}");
        }
    }
}

#[test]
fn conv2d_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (3, 1, 0)] {
        let x = rand_tensor(&mut rng, &[2, 3, 6, 7], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[4, 3, k, k], -0.5, 0.5);
        let b = rand_tensor(&mut rng, &[4], -0.5, 0.5);
        check(&format!("conv k{k} s{stride} p{pad}"), &[x, w, b], 40, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad);
            probe(g, y, 3)
        });
    }
}

#[test]
fn transposed_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[2, 3, 3, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 5, 2, 2], -0.5, 0.5);
    let b = rand_tensor(&mut rng, &[5], -0.5, 0.5);
    check("conv_t2", &[x, w, b], 40, |g, v| {
        let y = g.conv_transpose2x2(v[0], v[1], v[2]);
        probe(g, y, 5)
    });
}

/// Values bounded away from 0 so kinks are not straddled.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| {
                let m = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

#[test]
fn pointwise_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = off_zero(&mut rng, &[1, 2, 4, 4]);
    let a = Tensor::scalar(0.25);
    check("prelu", &[x.clone(), a], 64, |g, v| {
        let y = g.prelu(v[0], v[1]);
        probe(g, y, 7)
    });
    check("relu", &[x.clone()], 64, |g, v| {
        let y = g.relu(v[0]);
        probe(g, y, 8)
    });
    check("sigmoid", &[x.clone()], 64, |g, v| {
        let y = g.sigmoid(v[0]);
        probe(g, y, 9)
    });
    check("softplus", &[x.clone()], 64, |g, v| {
        let y = g.softplus(v[0]);
        probe(g, y, 10)
    });
    check("scale/sub/add", &[x.clone(), off_zero(&mut rng, &[1, 2, 4, 4])], 64, |g, v| {
        let s = g.scale(v[0], -1.7);
        let d = g.sub(s, v[1]);
        let y = g.add(d, v[0]);
        probe(g, y, 11)
    });
    check("channel_affine", &[x], 64, |g, v| {
        let y = g.channel_affine(v[0], &[2.0, -0.5], &[0.1, 0.3]);
        probe(g, y, 12)
    });
}

#[test]
fn pooling_and_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    // Distinct values so the argmax is unambiguous under perturbation.
    let mut vals: Vec<f64> = (0..2 * 2 * 4 * 6).map(|i| i as f64 * 0.01).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(&mut rng);
    let x = Tensor::from_vec(&[2, 2, 4, 6], vals);
    check("maxpool2", &[x], 96, |g, v| {
        let y = g.maxpool2(v[0]);
        probe(g, y, 14)
    });
    let a = rand_tensor(&mut rng, &[2, 1, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
    check("concat", &[a, b], 54, |g, v| {
        let y = g.concat_channels(&[v[0], v[1]]);
        probe(g, y, 15)
    });
}

#[test]
fn nr_bank_wrt_input_sigma_and_exponent() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = rand_tensor(&mut rng, &[2, 3, 16, 16], 0.01, 1.0);
    let sig = rand_tensor(&mut rng, &[4], 0.2, 1.0);
    let n = rand_tensor(&mut rng, &[4], 0.5, 8.0);
    check("nr_bank", &[x, sig, n], 64, |g, v| {
        let y = g.nr_bank(v[0], v[1], v[2]);
        probe(g, y, 17)
    });
}

#[test]
fn nr_bank_through_softplus_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = rand_tensor(&mut rng, &[1, 3, 8, 8], 0.01, 1.0);
    let sig_raw = rand_tensor(&mut rng, &[3], -1.0, 0.5);
    let n_raw = rand_tensor(&mut rng, &[3], 0.0, 5.0);
    check("softplus nr_bank", &[x, sig_raw, n_raw], 32, |g, v| {
        let s = g.softplus(v[1]);
        let n = g.softplus(v[2]);
        let y = g.nr_bank(v[0], s, n);
        probe(g, y, 19)
    });
}

#[test]
fn colour_recovery_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for mode in [ColorMode::LiteralEq5, ColorMode::InputColor] {
        let e = rand_tensor(&mut rng, &[2, 3, 4, 4], 0.05, 1.0);
        let l = rand_tensor(&mut rng, &[2, 3, 4, 4], 0.05, 1.0);
        check(&format!("{mode:?}"), &[e, l], 96, |g, v| {
            let y = g.color_recover(v[0], v[1], mode);
            probe(g, y, 21)
        });
    }
}

#[test]
fn scalar_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let a = rand_tensor(&mut rng, &[2, 3, 5, 6], 0.0, 1.0);
    let b = rand_tensor(&mut rng, &[2, 3, 5, 6], 0.0, 1.0);
    check("mse", &[a.clone(), b], 90, |g, v| g.mse(v[0], v[1]));
    check("tv", &[a.clone()], 180, |g, v| g.tv(v[0]));
    check("weighted_sum", &[a], 90, |g, v| {
        let t = g.tv(v[0]);
        let s = g.sigmoid(v[0]);
        let m = g.mse(s, v[0]);
        g.weighted_sum(&[(t, 3.0), (m, -0.5)])
    });
}

#[test]
fn total_loss_two_pathway() {
    total_loss_check(true, 31, &[]);
}

#[test]
fn total_loss_one_pathway() {
    total_loss_check(false, 32, &[]);
}

#[test]
fn total_loss_curve_parameters() {
    // The curve bank is a tiny fraction of all parameters; check it directly.
    total_loss_check(true, 5, &[("light.nr.sigma_raw", None), ("light.nr.exponent_raw", None)]);
}
