//! Splits an image into low- and high-frequency bands with an untrained or
//! checkpointed model, and reports how well the bands reconstruct it.
//!
//! ```text
//! cargo run --example decompose_image -- [image.png] [model.ckpt]
//! ```

use lanet::imaging::{load_any, synthetic};
use lanet::model::{decompose, init_state, load_checkpoint, ModelConfig, SIZE_MULTIPLE};
use rand::SeedableRng;

fn main() -> lanet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let img = match args.first() {
        Some(p) => load_any(p)?,
        None => synthetic::scene(64, 64, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3)),
    };
    let state = match args.get(1) {
        Some(p) => load_checkpoint(p)?.state,
        None => init_state(&ModelConfig::default(), 0)?,
    };
    let padded = img.pad_to_multiple(SIZE_MULTIPLE);
    let bands = decompose(&padded, &state)?;
    let n = padded.data().len() as f64;
    let residual: f64 = padded
        .data()
        .iter()
        .zip(bands.low.data().iter().zip(bands.high.data()))
        .map(|(x, (l, h))| (x - l - h).abs())
        .sum::<f64>()
        / n;
    println!("image {}x{}", img.height(), img.width());
    println!("low band:  min {:.4} max {:.4}", bands.low.min(), bands.low.max());
    println!("high band: min {:.4} max {:.4}", bands.high.min(), bands.high.max());
    println!("mean |I - (low + high)| = {residual:.5}");
    Ok(())
}
