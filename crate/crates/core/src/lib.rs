//! Unified light adaptation for low-light enhancement, exposure correction
//! and HDR tone mapping.
//!
//! An input image is split by a small convolutional network into a smooth
//! low-frequency component and a signed high-frequency residual. The
//! low-frequency pathway maps its input through a bank of learnable
//! Naka-Rushton curves `I^n / (I^n + σ^n)`, fuses the responses with a
//! small U-Net and restores chroma; the high-frequency pathway runs a short
//! residual stack that suppresses noise or preserves detail. The two are
//! added to form the output.
//!
//! Module map:
//!
//! * [`imaging`]: [`ImagePlane`], PNG/JPEG and Radiance RGBE I/O, resizing,
//!   HDR augmentation and paired dataset iteration.
//! * [`model`]: the three sub-networks, the curve bank, colour recovery,
//!   parameter state and checkpoints.
//! * [`losses`]: decomposition, pathway, combined and perceptual objectives.
//! * [`metrics`]: PSNR and SSIM.
//! * [`training`]: Adam with the staged learning-rate schedule, the training
//!   loop and evaluation.
//! * [`config`] / [`cli`]: the run configuration file and the `lanet`
//!   command line.
//! * [`tensor`]: the reverse-mode autodiff tape everything runs on.

pub mod cli;
pub mod config;
mod error;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use imaging::{ImagePlane, PlaneKind};
pub use model::{ModelConfig, ModelState};
