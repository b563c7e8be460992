//! Optimisation loop, learning-rate schedule and evaluation.
//!
//! Training runs in `f32` on the tape while master parameters and Adam
//! moments stay in `f64`. Everything random (initialisation, shuffling,
//! augmentation draws) derives from `TrainConfig::seed`, and all kernels are
//! single-threaded, so equal seeds give bit-identical logs.

mod optim;

pub use optim::{make_optimizer, Adam, ParamGroup};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::imaging::{ImagePlane, PairedDataset, PairedSample, PlaneKind};
use crate::losses::{total_loss_graph, LossReport, LossVars, PerceptualExtractor};
use crate::metrics::{psnr, ssim, MetricReport, MetricRow};
use crate::model::{
    decompose_graph, forward_graph, init_state, save_checkpoint, Checkpoint, Enhancer, ModelState, SIZE_MULTIPLE,
};
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr_decomp: f64,
    pub lr_pathways: f64,
    /// Multiplier applied to the decomposition rate every `decay_every` epochs...
    pub decay_factor: f64,
    pub decay_every: usize,
    /// ...until this epoch, after which the rate holds.
    pub decay_until: usize,
    /// Apply the same step decay to the pathway rate.
    pub decay_pathways: bool,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Stop after this many optimiser steps, mid-epoch if needed.
    pub max_steps: Option<u64>,
    /// Write `epoch_NNNN.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 2,
            lr_decomp: 2e-4,
            lr_pathways: 1e-4,
            decay_factor: 0.5,
            decay_every: 50,
            decay_until: 100,
            decay_pathways: false,
            weight_decay: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            shuffle: true,
            max_steps: None,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs < 1 {
            return fail("train.epochs must be at least 1".into());
        }
        if self.batch < 1 {
            return fail("train.batch must be at least 1".into());
        }
        for (name, v) in [("lr_decomp", self.lr_decomp), ("lr_pathways", self.lr_pathways)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("train.{name} must be positive, got {v}"));
            }
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail(format!("train.decay_factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if self.decay_every < 1 {
            return fail("train.decay_every must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) {
            return fail("train.weight_decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return fail("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.max_steps == Some(0) {
            return fail("train.max_steps must be positive when set".into());
        }
        Ok(())
    }

    /// `(decomposition, pathways)` learning rates in effect during `epoch`.
    pub fn lrs_at(&self, epoch: usize) -> (f64, f64) {
        let decays = epoch.min(self.decay_until) / self.decay_every;
        let f = self.decay_factor.powi(decays as i32);
        (self.lr_decomp * f, if self.decay_pathways { self.lr_pathways * f } else { self.lr_pathways })
    }
}

/// One line of `train_log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: u64,
        epoch: usize,
        lr_decomp: f64,
        lr_pathways: f64,
        loss: LossReport,
    },
    Epoch {
        epoch: usize,
        steps: u64,
        mean_total: f64,
        validation_psnr: Option<f64>,
        validation_ssim: Option<f64>,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn step_losses(&self) -> impl Iterator<Item = &LossReport> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step { loss, .. } => Some(loss),
            _ => None,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step_losses().count() as u64
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub log: TrainLog,
    pub epochs_completed: usize,
}

/// Fixed pieces of one run.
struct Trainer<'a> {
    cfg: &'a RunConfig,
    extractor: PerceptualExtractor,
    run_dir: Option<PathBuf>,
    log_file: Option<fs::File>,
    log: TrainLog,
}

impl Trainer<'_> {
    fn record(&mut self, rec: LogRecord) -> Result<()> {
        if let (Some(f), Some(dir)) = (self.log_file.as_mut(), self.run_dir.as_ref()) {
            let line = serde_json::to_string(&rec).expect("log record serialises");
            writeln!(f, "{line}").map_err(|e| Error::io(dir.join("train_log.jsonl"), e))?;
        }
        self.log.records.push(rec);
        Ok(())
    }

    fn checkpoint(&self, state: &ModelState, epoch: usize, file: &str) -> Result<()> {
        if let Some(dir) = &self.run_dir {
            let ckpt = Checkpoint {
                state: state.clone(),
                seed: self.cfg.train.seed,
                epoch,
                config_echo: self.cfg.echo_json(),
            };
            save_checkpoint(&ckpt, dir.join(file))?;
        }
        Ok(())
    }
}

/// Stacks a batch into `[B, 3, H, W]` tensors, reflect-padding to a
/// multiple of 4 when needed.
fn stack(batch: &[PairedSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let dims = batch[0].input.dims();
    if let Some(bad) = batch.iter().find(|s| s.input.dims() != dims) {
        return Err(Error::Dataset(format!(
            "pair {} is {:?} but the batch is {:?}; set dataset.resize or use batch 1",
            bad.name,
            bad.input.dims(),
            dims
        )));
    }
    let prep = |p: &ImagePlane| p.pad_to_multiple(SIZE_MULTIPLE).to_tensor::<f32>();
    let inputs: Vec<_> = batch.iter().map(|s| prep(&s.input)).collect();
    let targets: Vec<_> = batch.iter().map(|s| prep(&s.target)).collect();
    Ok((Tensor::concat_batch(&inputs), Tensor::concat_batch(&targets)))
}

/// Forward, objective and backward for one batch. Returns the loss report
/// and the gradient of every parameter.
pub fn batch_gradients(
    state: &ModelState,
    input: Tensor<f32>,
    target: Tensor<f32>,
    cfg: &RunConfig,
    extractor: &PerceptualExtractor,
) -> (LossReport, BTreeMap<String, Tensor<f64>>) {
    let mut g = Graph::<f32>::new();
    let p = state.bind(&mut g, true);
    let x = g.input(input);
    let t = g.input(target);
    let f = forward_graph(&mut g, &p, state.config(), x);
    let (target_low, target_high) = if state.config().use_high_pathway {
        let (tl, th) = decompose_graph(&mut g, &p, t);
        (Some(tl), Some(th))
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
        target_low,
        target_high,
    };
    let terms = total_loss_graph(&mut g, &vars, &cfg.loss, extractor);
    let report = terms.report(&g);
    if !report.total.is_finite() {
        return (report, BTreeMap::new());
    }
    let grads = g.backward(terms.total);
    let out = p
        .iter()
        .filter_map(|(name, v)| grads.get(v).map(|t| (name.to_string(), t.cast::<f64>())))
        .collect();
    (report, out)
}

/// Trains a freshly initialised model.
pub fn train(cfg: &RunConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    let state = init_state(&cfg.model, cfg.train.seed)?;
    train_from(cfg, state, run_dir)
}

/// Trains starting from `state`. With a run directory, writes `init.ckpt`,
/// periodic `epoch_NNNN.ckpt`, `final.ckpt` and `train_log.jsonl` into it.
pub fn train_from(cfg: &RunConfig, mut state: ModelState, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if state.config() != &cfg.model {
        return Err(Error::Config("starting state was built for a different model configuration".into()));
    }
    let dataset = PairedDataset::open(&cfg.dataset)?;
    let validation = cfg.validation.as_ref().map(PairedDataset::open).transpose()?;
    let extractor = PerceptualExtractor::from_config(&cfg.perceptual)?;
    let mut opt = make_optimizer(&state, &cfg.train)?;

    let log_file = match run_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("train_log.jsonl");
            Some(fs::File::create(&p).map_err(|e| Error::io(&p, e))?)
        }
        None => None,
    };
    let mut tr = Trainer {
        cfg,
        extractor,
        run_dir: run_dir.map(Path::to_path_buf),
        log_file,
        log: TrainLog::default(),
    };
    tr.checkpoint(&state, 0, "init.ckpt")?;

    let tc = &cfg.train;
    let mut epochs_completed = 0;
    'epochs: for epoch in 0..tc.epochs {
        let (lr_d, lr_p) = tc.lrs_at(epoch);
        let started = Instant::now();
        let mut sum = 0.0;
        let mut count = 0u64;
        for batch in dataset.epoch(epoch, tc.batch, tc.shuffle, tc.seed) {
            let batch = batch?;
            let (x, t) = stack(&batch)?;
            let (report, grads) = batch_gradients(&state, x, t, cfg, &tr.extractor);
            let step = opt.steps() + 1;
            tr.record(LogRecord::Step {
                step,
                epoch,
                lr_decomp: lr_d,
                lr_pathways: lr_p,
                loss: report.clone(),
            })?;
            if !report.is_finite() {
                log::error!("non-finite loss at step {step} (epoch {epoch})");
                return Err(Error::NonFiniteLoss { step, epoch });
            }
            opt.step(&mut state, &grads, |g| match g {
                ParamGroup::Decomposition => lr_d,
                ParamGroup::Pathways => lr_p,
            });
            sum += report.total;
            count += 1;
            log::debug!("step {step} epoch {epoch} loss {:.6}", report.total);
            if tc.max_steps.is_some_and(|m| opt.steps() >= m) {
                epochs_completed = epoch + 1;
                break 'epochs;
            }
        }
        assert!(
            state.curve_bank().all_positive(),
            "curve parameters left the positive range after epoch {epoch}"
        );
        let (vp, vs) = match &validation {
            Some(v) => {
                let r = evaluate_dataset(&state, v)?;
                (Some(r.mean_psnr), Some(r.mean_ssim))
            }
            None => (None, None),
        };
        let mean_total = sum / count.max(1) as f64;
        log::info!(
            "epoch {}/{} mean loss {mean_total:.5} ({} steps, {:.1}s)",
            epoch + 1,
            tc.epochs,
            count,
            started.elapsed().as_secs_f64()
        );
        tr.record(LogRecord::Epoch {
            epoch,
            steps: opt.steps(),
            mean_total,
            validation_psnr: vp,
            validation_ssim: vs,
        })?;
        epochs_completed = epoch + 1;
        if tc.checkpoint_every > 0 && epochs_completed % tc.checkpoint_every == 0 {
            tr.checkpoint(&state, epochs_completed, &format!("epoch_{epochs_completed:04}.ckpt"))?;
        }
    }
    tr.checkpoint(&state, epochs_completed, "final.ckpt")?;
    Ok(TrainOutcome {
        state,
        log: tr.log,
        epochs_completed,
    })
}

/// Passes inputs through unchanged (clamped); the "do nothing" baseline.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Enhancer for Identity {
    fn enhance(&self, img: &ImagePlane) -> Result<ImagePlane> {
        Ok(img.map(PlaneKind::Ldr, |v| v.clamp(0.0, 1.0)))
    }
}

fn evaluate_dataset<E: Enhancer>(enhancer: &E, ds: &PairedDataset) -> Result<MetricReport> {
    let mut rows = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let s = ds.load(i, None, None)?;
        let out = enhancer.enhance(&s.input)?;
        let target = s.target.clamp01();
        rows.push(MetricRow {
            name: s.name,
            psnr: psnr(&out, &target, 1.0)?,
            ssim: ssim(&out, &target)?,
        });
    }
    Ok(MetricReport::from_rows(rows))
}

/// Scores `enhancer` on every pair of `spec` at native resolution.
pub fn evaluate<E: Enhancer>(enhancer: &E, spec: &crate::imaging::DatasetSpec) -> Result<MetricReport> {
    let spec = crate::imaging::DatasetSpec {
        resize: None,
        augmentation: None,
        ..spec.clone()
    };
    evaluate_dataset(enhancer, &PairedDataset::open(&spec)?)
}
