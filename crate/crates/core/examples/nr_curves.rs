//! Prints the initial curve bank and a few responses of each curve.
//!
//! ```text
//! cargo run --example nr_curves -- [K]
//! ```

use lanet::model::nr::response;
use lanet::model::{init_state, ModelConfig};

fn main() -> lanet::Result<()> {
    let k = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let state = init_state(
        &ModelConfig {
            nr_curves: k,
            ..ModelConfig::default()
        },
        0,
    )?;
    let bank = state.curve_bank();
    let probes = [0.05, 0.25, 0.5, 0.75, 1.0];
    print!("{:>3} {:>6} {:>8}", "k", "sigma", "exponent");
    for p in probes {
        print!("  f({p:.2})");
    }
    println!();
    for (i, (&s, &n)) in bank.sigmas.iter().zip(&bank.exponents).enumerate() {
        print!("{i:>3} {s:>6.3} {n:>8.4}");
        for p in probes {
            print!("  {:>7.4}", response(p, s, n));
        }
        println!();
    }
    // Every curve passes through one half at its own sigma.
    assert!(bank.sigmas.iter().zip(&bank.exponents).all(|(&s, &n)| response(s, s, n) == 0.5));
    Ok(())
}
