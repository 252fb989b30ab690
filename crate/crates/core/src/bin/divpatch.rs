use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use divpatch::data::PatchSet;
use divpatch::gradcheck::run_suite;
use divpatch::metrics::{profile, write_dump};
use divpatch::mixing::mix_batch;
use divpatch::train::{ablate, ablation_csv, evaluate, train, Component, TrainConfig, SEED_ENV};
use divpatch::vit::{checkpoint, ViTParams};
use divpatch::{rng, Error, Result};

const PREVIEW_TAG: u64 = 0x5052_4556;

#[derive(Parser)]
#[command(name = "divpatch", version, about = "Patch-diversity ViT lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write logs and checkpoints to `output_dir`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Top-1 accuracy of a checkpoint on the eval split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-layer patch similarity of a checkpoint on the eval split.
    Profile {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the activation stack of the first eval example.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Finite-difference gradient suite; exits nonzero on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        seeds: u64,
    },
    /// Train every on/off combination of the chosen regularizers.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated subset of cos, contrastive, mixing.
        #[arg(long, value_delimiter = ',', default_value = "cos,contrastive,mixing")]
        components: Vec<Component>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mix the first training examples and print the masks as CSV.
    MixPreview {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 8)]
        examples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(args: &ConfigArgs) -> Result<TrainConfig> {
    let text = match &args.config {
        Some(p) => Some(
            fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let env = std::env::var(SEED_ENV).ok();
    TrainConfig::resolve(text.as_deref(), env.as_deref(), &args.overrides)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Load a checkpoint and the eval split shaped for its model.
fn checkpoint_and_eval(path: &Path, args: &ConfigArgs) -> Result<(ViTParams<f32>, PatchSet)> {
    if !path.is_file() {
        return Err(Error::Config(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    let params = checkpoint::load(path)?;
    let mut cfg = resolve(args)?;
    let m = &params.config;
    cfg.data.image_size = m.image_size;
    cfg.data.channels = m.channels;
    cfg.data.num_classes = m.num_classes;
    let (_, eval) = cfg.data.load(cfg.seed)?;
    let patches = eval.to_patches(m.patch_size)?;
    Ok((params, patches))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { cfg } => {
            let cfg = resolve(&cfg)?;
            let outcome = train(&cfg)?;
            for e in &outcome.log.epochs {
                let p = |s: Option<&divpatch::metrics::LayerStat>| s.map_or(f64::NAN, |s| s.mean);
                println!(
                    "epoch {:>3}  loss {:.4}  top1 {:.4}  P[0] {:.4}  P[L] {:.4}",
                    e.epoch,
                    e.train_loss,
                    e.eval_top1,
                    p(e.profile.layers.first()),
                    p(e.profile.last())
                );
            }
            println!("best top1 {:.4}  config {}", outcome.best_top1, cfg.hash());
        }
        Command::Eval { checkpoint, cfg } => {
            let (params, eval) = checkpoint_and_eval(&checkpoint, &cfg)?;
            println!(
                "top1 {:.4} on {} examples",
                evaluate(&params, &eval)?,
                eval.len()
            );
        }
        Command::Profile {
            checkpoint,
            cfg,
            out,
            dump,
        } => {
            let (params, eval) = checkpoint_and_eval(&checkpoint, &cfg)?;
            let resolved = resolve(&cfg)?;
            let prof = profile(&params, &eval.patches, resolved.profile_examples)?;
            emit(&prof.to_csv()?, out.as_deref())?;
            if let Some(path) = dump {
                let first = eval.gather(&[0])?;
                let inf = params.infer(&first.patches)?;
                let layers = inf
                    .layers
                    .iter()
                    .map(|l| l.index0(0))
                    .collect::<Result<Vec<_>>>()?;
                write_dump(&divpatch::vit::ActivationStack { layers }, path)?;
            }
        }
        Command::Gradcheck { seeds } => {
            let results = run_suite(seeds)?;
            let mut ok = true;
            for r in &results {
                ok &= r.passed;
                let verdict = if r.passed { "ok" } else { "FAIL" };
                println!("{verdict:<4} {:.3e}  {}", r.rel_err, r.name);
            }
            println!(
                "{} checks, {}",
                results.len(),
                if ok { "all passed" } else { "FAILED" }
            );
            return Ok(ok);
        }
        Command::Ablate {
            cfg,
            components,
            out,
        } => {
            let cfg = resolve(&cfg)?;
            let rows = ablate(&cfg, &components)?;
            emit(&ablation_csv(&rows)?, out.as_deref())?;
        }
        Command::MixPreview { cfg, examples, out } => {
            let cfg = resolve(&cfg)?;
            let mut data = cfg.data.clone();
            data.train_size = data.train_size.min(examples);
            let (train, _) = data.load(cfg.seed)?;
            let set = train.to_patches(cfg.model.patch_size)?;
            let batch = set.gather(&(0..set.len()).collect::<Vec<_>>())?;
            let mut stream = rng::stream(cfg.seed, &[PREVIEW_TAG]);
            let mixed = mix_batch(
                &batch.patches,
                &batch.labels,
                set.num_classes,
                &cfg.mix_spec,
                &mut stream,
            )?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["example", "lambda_sampled", "lambda_eff", "mode", "mask"])?;
            for i in 0..mixed.len() {
                let mask: String = mixed.masks[i]
                    .iter()
                    .map(|&m| if m { '1' } else { '0' })
                    .collect();
                w.write_record(&[
                    i.to_string(),
                    mixed.lambda_sampled[i].to_string(),
                    mixed.lambda_eff[i].to_string(),
                    cfg.mix_spec.mode.to_string(),
                    mask,
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            emit(&String::from_utf8_lossy(&bytes), out.as_deref())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
