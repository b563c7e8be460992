//! Tone-maps synthetic HDR scenes: writes RGBE files, trains briefly on the
//! tone-mapping task with β augmentation, and saves the results as PNG.
//!
//! ```text
//! cargo run --release --example hdr_tonemap -- [steps] [out dir]
//! ```

use lanet::config::RunConfig;
use lanet::imaging::{augment_hdr, load_hdr, save_png, synthetic, Task};
use lanet::model::{Enhancer, ModelConfig};
use lanet::training::{train, TrainConfig};

fn main() -> lanet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps = args.first().and_then(|a| a.parse().ok()).unwrap_or(60);
    let out_dir = std::path::PathBuf::from(args.get(1).map_or("hdr-out", |s| s.as_str()));
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut spec = synthetic::write_hdr_set(tmp.path(), 4, 48, 48, 5)?;
    spec.task = Task::Tm;
    spec.augmentation = Some((0.7, 2.0));

    let mut cfg = RunConfig::new(spec);
    cfg.model = ModelConfig {
        nr_curves: 8,
        base_channels: 16,
        ..ModelConfig::default()
    };
    cfg.train = TrainConfig {
        epochs: 10_000,
        batch: 2,
        lr_decomp: 1e-3,
        lr_pathways: 1e-3,
        max_steps: Some(steps),
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let out = train(&cfg, None)?;
    let losses: Vec<f64> = out.log.step_losses().map(|r| r.total).collect();
    println!("{steps} steps, loss {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);

    std::fs::create_dir_all(&out_dir).expect("create output dir");
    for entry in lanet::imaging::list_inputs(&tmp.path().join("input"))? {
        let radiance = load_hdr(&entry)?;
        let ldr = out.state.enhance(&augment_hdr(&radiance, 1.0)?)?;
        let name = entry.file_stem().unwrap().to_string_lossy().to_string();
        save_png(&ldr, out_dir.join(format!("{name}.png")))?;
        println!(
            "{name}: dynamic range {:.0}:1 -> output in [{:.3}, {:.3}]",
            radiance.max() / radiance.data().iter().cloned().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min),
            ldr.min(),
            ldr.max()
        );
    }
    Ok(())
}
