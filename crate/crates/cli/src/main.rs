use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use scgan_core::metrics::{analyze_hue_dirs, evaluate_pairs, HueConfig};
use scgan_core::{AblationSetting, RunConfig};

mod colorize;
mod train;

/// Saliency-guided GAN colorization: training, inference and evaluation.
#[derive(Parser, Debug)]
#[command(name = "scgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the generator and critics.
    Train(TrainArgs),
    /// Colorize grayscale images with a trained generator.
    Colorize(ColorizeArgs),
    /// Compute PSNR, SSIM and CCI over paired prediction and ground-truth directories.
    Evaluate(EvaluateArgs),
    /// Hue statistics of salient, unsalient and random patches.
    AnalyzeHue(AnalyzeHueArgs),
    /// Write a synthetic dataset of saturated shapes on gray backgrounds.
    MakeToyData(ToyArgs),
    /// Print the effective configuration as TOML.
    PrintConfig(PrintConfigArgs),
}

/// Settings shared by commands that read a run configuration. Flags win over
/// the file, the file wins over built-in defaults.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the desk-scale toy preset instead of the full-size defaults.
    #[arg(long)]
    toy: bool,
    /// Random seed; overrides the configured `train.seed`.
    #[arg(long, env = "SCGAN_SEED")]
    seed: Option<u64>,
    /// Apply one of the component ablations (1-7).
    #[arg(long)]
    ablation: Option<AblationSetting>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Color training images; overrides `data.color_dir`.
    #[arg(long)]
    color_dir: Option<PathBuf>,
    /// Saliency maps; overrides `data.saliency_dir`.
    #[arg(long)]
    saliency_dir: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.toy) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, true) => RunConfig::toy(),
            (None, false) => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(setting) = self.ablation {
            setting.apply(&mut cfg);
        }
        if let Some(dir) = &self.output {
            cfg.output.dir = dir.clone();
        }
        if let Some(dir) = &self.color_dir {
            cfg.data.color_dir = Some(dir.clone());
        }
        if let Some(dir) = &self.saliency_dir {
            cfg.data.saliency_dir = Some(dir.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "all")]
    stage: StageArg,
    /// Continue from this checkpoint directory.
    #[arg(long, conflicts_with = "from_scratch")]
    resume: Option<PathBuf>,
    /// Allow stage 2 to start from freshly initialized models.
    #[arg(long)]
    from_scratch: bool,
}

#[derive(Args, Debug)]
pub struct ColorizeArgs {
    /// Checkpoint directory holding `generator.safetensors`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also write the predicted saliency map to `<output>/saliency/`.
    #[arg(long)]
    save_saliency: bool,
    /// Also write the saliency-weighted color image to `<output>/weighted/`.
    #[arg(long)]
    save_weighted: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Directory receiving `report.csv` and `report.json`.
    #[arg(long)]
    out: PathBuf,
    /// Configuration snapshot to embed in the report.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeHueArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    saliency: PathBuf,
    /// Directory receiving `hue_report.json` and `hue_histogram.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Patch side length in pixels.
    #[arg(long, default_value_t = HueConfig::default().patch)]
    patch: usize,
    /// Saliency above this value counts as high.
    #[arg(long, default_value_t = HueConfig::default().high_thresh)]
    high_thresh: f64,
    /// Fraction of high-saliency pixels that makes a patch salient.
    #[arg(long, default_value_t = HueConfig::default().coverage)]
    coverage: f64,
    /// Seed for the random patch positions.
    #[arg(long, env = "SCGAN_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Side length, a multiple of 32.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, env = "SCGAN_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PrintConfigArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train::run(&args),
        Command::Colorize(args) => colorize::run(&args),
        Command::Evaluate(args) => {
            let config = args.config.as_deref().map(RunConfig::load).transpose()?;
            let report = evaluate_pairs(&args.pred, &args.gt, config)?;
            report.write(&args.out)?;
            println!(
                "{} images: mean PSNR {:.3} dB, mean SSIM {:.4}, mean CCI {:.3}, CCI ratio {} ({:.4})",
                report.images, report.mean_psnr, report.mean_ssim, report.mean_cci, report.cci_in_range, report.cci_ratio
            );
            Ok(())
        }
        Command::AnalyzeHue(args) => {
            let cfg = HueConfig {
                patch: args.patch,
                high_thresh: args.high_thresh,
                coverage: args.coverage,
                seed: args.seed,
            };
            let report = analyze_hue_dirs(&args.images, &args.saliency, &cfg)?;
            report.write(&args.out)?;
            for (class, r) in [("salient", &report.salient), ("unsalient", &report.unsalient), ("random", &report.random)] {
                let fraction = r.green_blue_fraction.map_or_else(|| "n/a".to_string(), |f| format!("{f:.4}"));
                println!(
                    "{class}: {} patches, {} chromatic pixels, green-blue fraction {fraction}",
                    r.patches, r.chromatic_pixels
                );
            }
            Ok(())
        }
        Command::MakeToyData(args) => {
            scgan_core::dataset::make_toy_dataset(args.count, args.size, args.seed, Some(&args.out))
                .with_context(|| format!("writing toy data to {}", args.out.display()))?;
            println!(
                "wrote {} samples to {} and {}",
                args.count,
                args.out.join("color").display(),
                args.out.join("saliency").display()
            );
            Ok(())
        }
        Command::PrintConfig(args) => {
            print!("{}", args.config.resolve()?.to_toml_string()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
