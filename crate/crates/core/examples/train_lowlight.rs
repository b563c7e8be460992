//! Train on a handful of synthetic low/normal-light pairs and compare the
//! result with the untouched inputs.
//!
//! ```text
//! cargo run --release --example train_lowlight -- [pairs] [size] [steps]
//! ```

use std::time::Instant;

use lanet::config::RunConfig;
use lanet::imaging::synthetic;
use lanet::model::ModelConfig;
use lanet::training::{evaluate, train, Identity, TrainConfig};

fn main() -> lanet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let pairs = args.first().copied().unwrap_or(5);
    let size = args.get(1).copied().unwrap_or(64);
    let steps = args.get(2).copied().unwrap_or(100) as u64;

    let dir = tempfile::tempdir().expect("temp dir");
    let spec = synthetic::write_lowlight_pairs(dir.path(), pairs, size, size, 0.003, 42)?;
    let mut cfg = RunConfig::new(spec.clone());
    cfg.model = ModelConfig {
        nr_curves: 8,
        base_channels: 16,
        ..ModelConfig::default()
    };
    cfg.train = TrainConfig {
        epochs: 10_000,
        batch: 1,
        lr_decomp: 1e-3,
        lr_pathways: 1e-3,
        max_steps: Some(steps),
        checkpoint_every: 0,
        ..TrainConfig::default()
    };

    let before = evaluate(&Identity, &spec)?;
    let t = Instant::now();
    let out = train(&cfg, Some(&dir.path().join("run")))?;
    let secs = t.elapsed().as_secs_f64();
    let after = evaluate(&out.state, &spec)?;
    let losses: Vec<f64> = out.log.step_losses().map(|r| r.total).collect();
    println!(
        "{} steps in {secs:.1}s ({:.3}s/step); loss {:.4} -> {:.4}",
        losses.len(),
        secs / losses.len() as f64,
        losses[0],
        losses[losses.len() - 1]
    );
    println!("inputs:  {:.2} dB, SSIM {:.3}", before.mean_psnr, before.mean_ssim);
    println!("trained: {:.2} dB, SSIM {:.3}", after.mean_psnr, after.mean_ssim);
    Ok(())
}
