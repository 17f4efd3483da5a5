//! `mdgan`: batch front end for the text-SR pipeline.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use mdgan_core::evalsuite;
use mdgan_core::imaging;
use mdgan_core::matting;
use mdgan_core::metrics::MetricsReport;
use mdgan_core::model::{self, Net};
use mdgan_core::tensorgrad::Tensor;
use mdgan_core::textgen::{self, GenConfig};
use mdgan_core::trainer::{self, Dataset, TrainConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mdgan", version, about = "Matting-based dual-GAN text image super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic text dataset.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long, default_value_t = 64)]
        hr_size: usize,
        #[arg(long, default_value_t = 10)]
        glyph_cell: usize,
    },
    /// Train the character classifier and save it to the configured path.
    TrainClassifier {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the matting net and save it to the configured path.
    TrainMatting {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the full pretrain/gan/refine schedule.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Continue an interrupted run from its checkpoint.
    Resume {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Super-resolve one image (or dataset sample directory).
    Sr {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// A plain image file (learned backend) or a dataset sample
        /// directory with ground-truth layers (oracle backend).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured decomposition backend.
        #[arg(long)]
        backend: Option<String>,
        /// Also write the predicted HR layers next to the output.
        #[arg(long, default_value_t = false)]
        dump_layers: bool,
    },
    /// Decompose an image into alpha/foreground/background layers.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Matting net checkpoint; without it a luma heuristic supplies
        /// the alpha matte.
        #[arg(long)]
        matting: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against the bicubic baseline.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the four ablation variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic gradients against finite differences.
    GradCheck,
}

fn load_config(path: &Path) -> anyhow::Result<TrainConfig> {
    TrainConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn load_classifier_from(cfg: &TrainConfig) -> anyhow::Result<model::CharClassifier> {
    if cfg.classifier_path.is_empty() {
        bail!("config has no classifier_path; run `mdgan train-classifier` first");
    }
    Ok(trainer::load_classifier(&cfg.classifier_path)?)
}

fn write_report(report: &MetricsReport, out: Option<&Path>) -> anyhow::Result<()> {
    print!("{}", report.render_table());
    if let Some(path) = out {
        std::fs::write(path, report.render_csv())
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Load the ground-truth layer files of a generated sample directory.
fn load_sample_layers(dir: &Path) -> anyhow::Result<(Tensor, matting::LayerDecomposition)> {
    let lr = imaging::to_float(&imaging::load_image(dir.join("lr.ppm"))?);
    let alpha = imaging::to_float(&imaging::load_image(dir.join("alpha.pgm"))?);
    let fg = imaging::to_float(&imaging::load_image(dir.join("fg.ppm"))?);
    let bg = imaging::to_float(&imaging::load_image(dir.join("bg.ppm"))?);
    let hs = alpha.shape();
    let ls = lr.shape();
    if ls[2] == 0 || hs[2] % ls[2] != 0 {
        bail!("lr.ppm and alpha.pgm sizes are not an integer scale apart");
    }
    // The stored layers are HR ground truth; the oracle LR decomposition is
    // their bicubic downsample, matching training.
    let (lh, lw) = (ls[2], ls[3]);
    let clamp01 = |t: &Tensor| -> anyhow::Result<Tensor> {
        let d: Vec<_> = t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Tensor::new(&t.shape(), d)?)
    };
    let layers = matting::LayerDecomposition::new(
        clamp01(&imaging::bicubic_resize(&alpha, lh, lw)?)?,
        imaging::bicubic_resize(&fg, lh, lw)?,
        imaging::bicubic_resize(&bg, lh, lw)?,
    )?;
    Ok((lr, layers))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData {
            n,
            seed,
            out,
            scale,
            hr_size,
            glyph_cell,
        } => {
            let cfg = GenConfig {
                hr_size,
                scale,
                glyph_cell,
                ..GenConfig::default()
            };
            let manifest = textgen::dataset_generate(n, seed, &out, &cfg)?;
            println!("wrote {} samples to {}", manifest.len(), out.display());
        }
        Command::TrainClassifier { config } => {
            let cfg = load_config(&config)?;
            if cfg.classifier_path.is_empty() {
                bail!("config needs classifier_path to know where to save the net");
            }
            let (classifier, acc) = trainer::train_classifier(&cfg)?;
            trainer::save_net_checkpoint(&cfg.classifier_path, &classifier.params())?;
            println!(
                "held-out accuracy {:.2}%, saved to {}",
                acc * 100.0,
                cfg.classifier_path
            );
        }
        Command::TrainMatting { config } => {
            let cfg = load_config(&config)?;
            if cfg.matting_path.is_empty() {
                bail!("config needs matting_path to know where to save the net");
            }
            let (net, mae) = trainer::train_matting(&cfg)?;
            trainer::save_net_checkpoint(&cfg.matting_path, &net.params())?;
            println!(
                "held-out alpha MAE {:.4}, saved to {}",
                mae, cfg.matting_path
            );
        }
        Command::Train { config } => {
            let cfg = load_config(&config)?;
            let outcome = trainer::train(&cfg)?;
            println!(
                "finished at step {}, checkpoint {}",
                outcome.final_step,
                outcome.checkpoint_path.display()
            );
        }
        Command::Resume { config, checkpoint } => {
            let cfg = load_config(&config)?;
            let outcome = trainer::resume(&cfg, &checkpoint)?;
            println!(
                "finished at step {}, checkpoint {}",
                outcome.final_step,
                outcome.checkpoint_path.display()
            );
        }
        Command::Sr {
            config,
            checkpoint,
            input,
            out,
            backend,
            dump_layers,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(b) = backend {
                cfg.backend = b;
            }
            let t = trainer::load_checkpoint(&checkpoint, &cfg)?;
            let lr_layers = if input.is_dir() {
                load_sample_layers(&input)?.1
            } else {
                match cfg.backend_enum()? {
                    trainer::Backend::Learned => {
                        if cfg.matting_path.is_empty() {
                            bail!("learned backend needs matting_path in the config");
                        }
                        let net = trainer::load_matting(&cfg.matting_path)?;
                        let img = imaging::to_float(&imaging::load_image(&input)?);
                        trainer::decompose_learned(&net, &img)?
                    }
                    trainer::Backend::Oracle => bail!(
                        "oracle backend needs a dataset sample directory as --input"
                    ),
                }
            };
            let (hr_layers, composed) = model::sr_forward(&t.models, &lr_layers)?;
            imaging::save_image(&imaging::to_u8(&composed)?, &out)?;
            println!("wrote {}", out.display());
            if dump_layers {
                let stem = out.with_extension("");
                let stem = stem.to_string_lossy();
                for (suffix, tensor) in [
                    ("alpha.pgm", &hr_layers.alpha),
                    ("fg.ppm", &hr_layers.fg),
                    ("bg.ppm", &hr_layers.bg),
                ] {
                    let path = PathBuf::from(format!("{stem}.{suffix}"));
                    imaging::save_image(&imaging::to_u8(tensor)?, &path)?;
                    println!("wrote {}", path.display());
                }
            }
        }
        Command::Decompose { input, out, matting } => {
            let img = imaging::to_float(&imaging::load_image(&input)?);
            let layers = match matting {
                Some(path) => {
                    let net = trainer::load_matting(&path)?;
                    trainer::decompose_learned(&net, &img)?
                }
                None => trainer::decompose_heuristic(&img)?,
            };
            std::fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            for (name, tensor) in [
                ("alpha.pgm", &layers.alpha),
                ("fg.ppm", &layers.fg),
                ("bg.ppm", &layers.bg),
            ] {
                let path = out.join(name);
                imaging::save_image(&imaging::to_u8(tensor)?, &path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Eval {
            config,
            checkpoint,
            dataset,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            let t = trainer::load_checkpoint(&checkpoint, &cfg)?;
            let classifier = load_classifier_from(&cfg)?;
            cfg.holdout_dir = dataset.to_string_lossy().into_owned();
            let ds = Dataset::load(&dataset)?;
            let mut report = MetricsReport::default();
            report.push(evalsuite::baseline_bicubic(&ds, cfg.scale, &classifier)?);
            report.push(evalsuite::evaluate(
                &t.models,
                &ds,
                &cfg,
                &classifier,
                t.matting_net.as_ref(),
            )?);
            write_report(&report, out.as_deref())?;
        }
        Command::Ablate { config, out } => {
            let cfg = load_config(&config)?;
            let classifier = load_classifier_from(&cfg)?;
            let ablation = evalsuite::ablation_run(&cfg, &classifier)?;
            println!(
                "dataset {:016x} config {:016x}",
                ablation.dataset_hash, ablation.config_hash
            );
            write_report(&ablation.report, out.as_deref())?;
        }
        Command::GradCheck => {
            let mut worst: f64 = 0.0;
            for (name, err) in mdgan_core::gradsuite::run()? {
                println!("{name:<28} max relative error {err:.3e}");
                worst = worst.max(err as f64);
            }
            let tol = mdgan_core::gradsuite::tolerance() as f64;
            if worst > tol {
                bail!("gradient check failed: worst error {worst:.3e} > {tol:.0e}");
            }
            println!("all gradients within {tol:.0e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
