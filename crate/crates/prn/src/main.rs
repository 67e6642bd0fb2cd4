//! Thin operator surface over the library: synthesize a dataset,
//! align a face, train a model variant, evaluate a checkpoint.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prn::checkpoint;
use prn::config::RunConfig;
use prn::data::{generate_dataset, load_png, save_png, write_dataset, DatasetConfig};
use prn::error::Error;
use prn::eval::evaluate;
use prn::geometry::{align_face, AlignmentConfig, LandmarkSet};
use prn::relation::ModelVariant;
use prn::train::{assemble, log_header, prepare, prepare_data, TrainedModel};

#[derive(Parser)]
#[command(name = "prn", version, about = "Pairwise relational face embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration overrides as key=value (repeatable).
    #[arg(short = 'c', long = "config", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> prn::Result<RunConfig> {
        let mut cfg = RunConfig::from_overrides(&self.overrides)?;
        cfg.apply_seed_env_from_process()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic identity dataset to disk.
    Synth {
        /// Output directory for images, landmarks, and the manifest.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Align one face image from its landmark file.
    Align {
        /// Input image (PNG).
        #[arg(long)]
        image: PathBuf,
        /// Landmark file: one "x y" pair per line.
        #[arg(long)]
        landmarks: PathBuf,
        /// Aligned output image (PNG).
        #[arg(long)]
        out: PathBuf,
        /// Output side length in pixels.
        #[arg(long, default_value_t = 140)]
        size: usize,
        /// Landmark convention: 68 (standard) or 15 (synthetic).
        #[arg(long, default_value_t = 68)]
        convention: usize,
    },
    /// Train a model variant end to end and write a checkpoint.
    Train {
        /// Model variant: a, b, c, prn, or prn_plus.
        #[arg(long)]
        variant: String,
        /// Output directory for the checkpoint and training log.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a trained checkpoint on the held-out split.
    Eval {
        /// Model variant the checkpoint was trained for.
        #[arg(long)]
        variant: String,
        /// Checkpoint written by `prn train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for metrics.csv and roc.csv.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> prn::Result<()> {
    match cli.command {
        Command::Synth { out, config } => {
            let cfg = config.resolve()?;
            println!("{}", cfg.echo());
            let mut ds = DatasetConfig::desk(cfg.identities, cfg.samples_per_identity, cfg.seed);
            ds.image_size = cfg.image_size;
            let samples = generate_dataset(&ds)?;
            let manifest = write_dataset(&samples, &out)?;
            println!("wrote {} samples under {}", manifest.len(), out.display());
            Ok(())
        }
        Command::Align {
            image,
            landmarks,
            out,
            size,
            convention,
        } => {
            let grid = load_png(&image)?;
            let lmk = LandmarkSet::read_from(&landmarks)?;
            let align = match convention {
                68 => AlignmentConfig::standard_68(size),
                15 => AlignmentConfig::synthetic_15(size),
                other => {
                    return Err(Error::Config(format!(
                        "unsupported landmark convention {other}; use 68 or 15"
                    )))
                }
            };
            let (face, aligned_lmk, transform) = align_face(&grid, &lmk, &align)?;
            save_png(&face.pixels, &out)?;
            aligned_lmk.write_to(&out.with_extension("landmarks.txt"))?;
            println!(
                "aligned {} -> {} (rotation {:.4} rad, scale {:.4})",
                image.display(),
                out.display(),
                transform.rotation,
                transform.scale
            );
            Ok(())
        }
        Command::Train {
            variant,
            out_dir,
            config,
        } => {
            let cfg = config.resolve()?;
            let variant = ModelVariant::parse(&variant)?;
            println!("{}", cfg.echo());
            std::fs::create_dir_all(&out_dir)?;
            let pipe = prepare(&cfg)?;
            println!(
                "backbone validation accuracy: {:.4}",
                pipe.backbone_val_accuracy
            );
            let model = pipe.train_variant(variant)?;
            let ckpt = out_dir.join(format!("{}.prnc", variant.name()));
            checkpoint::save(&model.store, &ckpt)?;
            let mut log = pipe.log.clone();
            log.extend(model.log.iter().skip(1).cloned());
            std::fs::write(out_dir.join("train_log.csv"), log.join("\n") + "\n")?;
            println!("checkpoint: {}", ckpt.display());
            println!("log: {}", out_dir.join("train_log.csv").display());
            Ok(())
        }
        Command::Eval {
            variant,
            checkpoint: ckpt_path,
            out_dir,
            config,
        } => {
            let cfg = config.resolve()?;
            let variant = ModelVariant::parse(&variant)?;
            println!("{}", cfg.echo());
            std::fs::create_dir_all(&out_dir)?;
            let store = checkpoint::load(&ckpt_path)?;
            let data = prepare_data(&cfg)?;
            let backbone_cfg = data.backbone_cfg.clone();
            let prn_cfg = data.prn_cfg.clone();
            let pipe = assemble(data, store.clone(), vec![log_header().to_string()])?;
            let mut model = TrainedModel {
                variant,
                store,
                backbone_cfg,
                prn_cfg,
                log: Vec::new(),
            };
            let report = evaluate(&pipe, &mut model)?;
            std::fs::write(out_dir.join("metrics.csv"), report.csv())?;
            std::fs::write(out_dir.join("roc.csv"), report.roc_csv())?;
            print!("{}", report.csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // clap exits with 2 on usage errors
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
