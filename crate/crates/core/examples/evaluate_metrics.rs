//! Scores the untouched inputs of a paired folder, or of a synthetic set.
//!
//! ```text
//! cargo run --example evaluate_metrics -- [dataset root with input/ and target/]
//! ```

use lanet::imaging::{synthetic, DatasetSpec, Task};
use lanet::training::{evaluate, Identity};

fn main() -> lanet::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let spec = match std::env::args().nth(1) {
        Some(root) => DatasetSpec::from_root(root, Task::Lle),
        None => synthetic::write_lowlight_pairs(tmp.path(), 4, 48, 64, 0.01, 9)?,
    };
    let report = evaluate(&Identity, &spec)?;
    print!("{}", report.to_csv());
    println!("mean psnr {:.3} dB, mean ssim {:.4}", report.mean_psnr, report.mean_ssim);
    Ok(())
}
