//! The `lanet` command line.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors (bad
//! flags, missing files or directories, invalid values), 2 when a run
//! aborts (non-finite loss, I/O failure mid-run, corrupt checkpoint).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::imaging::{augment_hdr, is_hdr_path, list_inputs, load_any, save_png, DatasetSpec, ImagePlane, PlaneKind, Task};
use crate::model::{self, init_state, load_checkpoint, save_checkpoint, Checkpoint, Enhancer, ModelConfig, ModelState};
use crate::training::{evaluate, train, Identity};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lanet", version, about = "Unified light adaptation: low-light enhancement, exposure correction, tone mapping")]
pub struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides train.seed and seeds fresh initialisation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "lanet-out")]
    out: PathBuf,
    /// Compute device; only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    device: String,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes checkpoints and train_log.jsonl to --out.
    Train(TrainArgs),
    /// Enhance an image or every image in a directory.
    Infer(InferArgs),
    /// Score a checkpoint on paired data; writes metrics.csv.
    Eval(EvalArgs),
    /// Write the low/high-frequency split of an image. The signed high band
    /// is saved as 0.5 + value, clamped to [0, 1].
    Decompose(DecomposeArgs),
    /// Export the curve bank as CSV and a plot.
    Curves(CurvesArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset root with input/ and target/ (instead of [dataset] in --config).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// Number of Naka-Rushton curves.
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Any config key, e.g. `--set loss.light=5 --set model.share_weights=false`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image file or directory.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Required unless --baseline is given.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Paired test root with input/ and target/.
    #[arg(long)]
    data: PathBuf,
    /// Score the unmodified inputs instead of a model.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    /// Checkpoint to read; omit with --fresh.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use a freshly initialised model instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    fresh: bool,
    /// Curve count for --fresh.
    #[arg(long = "K", default_value_t = 16)]
    k: usize,
    /// Intensities sampled on [0, 1].
    #[arg(long, default_value_t = 256)]
    samples: usize,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    match s.to_ascii_uppercase().as_str() {
        "LLE" => Ok(Task::Lle),
        "EC" => Ok(Task::Ec),
        "TM" => Ok(Task::Tm),
        _ => Err(format!("unknown task {s:?}; expected LLE, EC or TM")),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    if cli.device != "cpu" {
        return Err(Error::InvalidArgument(format!("device {:?} is not available; use cpu", cli.device)));
    }
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a),
        Command::Infer(a) => cmd_infer(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Decompose(a) => cmd_decompose(cli, a),
        Command::Curves(a) => cmd_curves(cli, a),
    }
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, contents).map_err(|e| Error::io(p, e))
}

/// A missing checkpoint is a usage error; a corrupt one is a runtime error.
fn open_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!("checkpoint {} not found", path.display())));
    }
    load_checkpoint(path)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut overrides = Vec::new();
    if let Some(root) = &a.data {
        overrides.push(format!("dataset.root={:?}", root.display().to_string()));
    }
    if let Some(t) = a.task {
        let name = match t {
            Task::Lle => "LLE",
            Task::Ec => "EC",
            Task::Tm => "TM",
        };
        overrides.push(format!("dataset.task=\"{name}\""));
    }
    if let Some(k) = a.k {
        overrides.push(format!("model.nr_curves={k}"));
    }
    if let Some(v) = a.epochs {
        overrides.push(format!("train.epochs={v}"));
    }
    if let Some(v) = a.batch {
        overrides.push(format!("train.batch={v}"));
    }
    if let Some(v) = a.max_steps {
        overrides.push(format!("train.max_steps={v}"));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("train.seed={s}"));
    }
    overrides.extend(a.overrides.iter().cloned());
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p, &overrides)?,
        None if a.data.is_some() => RunConfig::from_toml_str("", &overrides)?,
        None => return Err(Error::Config("train needs --config or --data".into())),
    };
    cfg.validate()?;
    let echo = cfg.echo_toml();
    println!("{echo}");
    ensure_dir(&cli.out)?;
    write_file(&cli.out.join("config.toml"), &echo)?;
    let outcome = train(&cfg, Some(&cli.out))?;
    println!(
        "trained {} epochs, {} steps; final checkpoint {}",
        outcome.epochs_completed,
        outcome.log.steps(),
        cli.out.join("final.ckpt").display()
    );
    Ok(())
}

/// Loads an inference input; HDR radiance is normalised by its maximum.
fn load_for_inference(path: &Path) -> Result<ImagePlane> {
    let img = load_any(path)?;
    if is_hdr_path(path) {
        augment_hdr(&img, 1.0)
    } else {
        Ok(img)
    }
}

fn cmd_infer(cli: &Cli, a: &InferArgs) -> Result<()> {
    let ckpt = open_checkpoint(&a.checkpoint)?;
    let files = if a.input.is_dir() {
        list_inputs(&a.input)?
    } else if a.input.is_file() {
        vec![a.input.clone()]
    } else {
        return Err(Error::InvalidArgument(format!("input {} does not exist", a.input.display())));
    };
    ensure_dir(&cli.out)?;
    for f in &files {
        let img = load_for_inference(f)?;
        let out = ckpt.state.enhance(&img)?;
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let dest = cli.out.join(format!("{stem}.png"));
        save_png(&out, &dest)?;
        println!("{} -> {}", f.display(), dest.display());
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let mut spec = DatasetSpec::from_root(&a.data, Task::Lle);
    spec.resize = None;
    spec.validate()?;
    let report = if a.baseline {
        evaluate(&Identity, &spec)?
    } else {
        let path = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("eval needs --checkpoint or --baseline".into()))?;
        evaluate(&open_checkpoint(path)?.state, &spec)?
    };
    ensure_dir(&cli.out)?;
    report.write_csv(cli.out.join("metrics.csv"))?;
    print!("{}", report.to_csv());
    println!("# SSIM on luminance (channel mean), 11x11 Gaussian window sigma 1.5, C1=(0.01)^2, C2=(0.03)^2");
    println!("mean psnr {:.4} dB, mean ssim {:.4} over {} images", report.mean_psnr, report.mean_ssim, report.rows.len());
    Ok(())
}

fn cmd_decompose(cli: &Cli, a: &DecomposeArgs) -> Result<()> {
    let ckpt = open_checkpoint(&a.checkpoint)?;
    if !a.image.is_file() {
        return Err(Error::InvalidArgument(format!("image {} does not exist", a.image.display())));
    }
    let img = load_for_inference(&a.image)?;
    let padded = img.pad_to_multiple(model::SIZE_MULTIPLE);
    let d = model::decompose(&padded, &ckpt.state)?;
    let (h, w) = (img.height(), img.width());
    let low = d.low.crop(h, w)?;
    let high = d.high.crop(h, w)?.map(PlaneKind::Ldr, |v| (0.5 + v).clamp(0.0, 1.0));
    ensure_dir(&cli.out)?;
    save_png(&low, cli.out.join("low.png"))?;
    save_png(&high, cli.out.join("high.png"))?;
    println!("wrote {} and {}", cli.out.join("low.png").display(), cli.out.join("high.png").display());
    Ok(())
}

fn cmd_curves(cli: &Cli, a: &CurvesArgs) -> Result<()> {
    let state: ModelState = match (&a.checkpoint, a.fresh) {
        (Some(p), _) => open_checkpoint(p)?.state,
        (None, true) => {
            let cfg = ModelConfig {
                nr_curves: a.k,
                ..ModelConfig::default()
            };
            let state = init_state(&cfg, cli.seed.unwrap_or(0)).map_err(|e| match e {
                Error::Config(m) => Error::InvalidArgument(m),
                other => other,
            })?;
            ensure_dir(&cli.out)?;
            save_checkpoint(
                &Checkpoint {
                    state: state.clone(),
                    seed: cli.seed.unwrap_or(0),
                    epoch: 0,
                    config_echo: serde_json::Value::Null,
                },
                cli.out.join("fresh.ckpt"),
            )?;
            state
        }
        (None, false) => return Err(Error::InvalidArgument("curves needs --checkpoint or --fresh".into())),
    };
    let bank = state.curve_bank();
    ensure_dir(&cli.out)?;

    let mut params = String::from("k,sigma,exponent\n");
    for (k, (s, n)) in bank.sigmas.iter().zip(&bank.exponents).enumerate() {
        let _ = writeln!(params, "{k},{s:?},{n:?}");
    }
    write_file(&cli.out.join("curve_params.csv"), &params)?;

    let rows = bank.sample(a.samples);
    let mut samples = String::from("intensity");
    for k in 0..bank.len() {
        let _ = write!(samples, ",f{k}");
    }
    samples.push('\n');
    for r in &rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        samples.push_str(&line.join(","));
        samples.push('\n');
    }
    write_file(&cli.out.join("curve_samples.csv"), &samples)?;
    save_png(&plot_curves(&rows, 400), cli.out.join("curves.png"))?;
    print!("{params}");
    Ok(())
}

/// Square plot of every sampled curve on `[0, 1]²` with a light grid.
fn plot_curves(rows: &[Vec<f64>], size: usize) -> ImagePlane {
    let margin = size / 16;
    let span = (size - 2 * margin - 1) as f64;
    let mut px = vec![1.0; size * size * 3];
    let mut dot = |x: f64, y: f64, rgb: [f64; 3]| {
        let cx = margin as f64 + x.clamp(0.0, 1.0) * span;
        let cy = margin as f64 + (1.0 - y.clamp(0.0, 1.0)) * span;
        let (i, j) = (cy.round() as usize, cx.round() as usize);
        let o = (i * size + j) * 3;
        px[o..o + 3].copy_from_slice(&rgb);
    };
    for t in 0..=4 {
        let g = t as f64 / 4.0;
        for s in 0..=400 {
            let u = s as f64 / 400.0;
            dot(g, u, [0.85; 3]);
            dot(u, g, [0.85; 3]);
        }
    }
    let k = rows.first().map_or(0, |r| r.len() - 1);
    for c in 0..k {
        let hue = c as f64 / k.max(1) as f64;
        let rgb = [
            0.5 + 0.45 * (std::f64::consts::TAU * hue).cos(),
            0.5 + 0.45 * (std::f64::consts::TAU * (hue + 1.0 / 3.0)).cos(),
            0.5 + 0.45 * (std::f64::consts::TAU * (hue + 2.0 / 3.0)).cos(),
        ]
        .map(|v| v * 0.8);
        for w in rows.windows(2) {
            for s in 0..=8 {
                let t = s as f64 / 8.0;
                dot(w[0][0] + t * (w[1][0] - w[0][0]), w[0][c + 1] + t * (w[1][c + 1] - w[0][c + 1]), rgb);
            }
        }
    }
    ImagePlane::new(size, size, 3, px, PlaneKind::Ldr).expect("plot values lie in [0, 1]")
}
