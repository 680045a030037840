use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use budgetnet::data::{load_cifar10, synthetic, write_cifar10_dir, Split};
use budgetnet::gradcheck::{self, OPS, TOLERANCE};
use budgetnet::model::SePlacement;
use budgetnet::train::{evaluate, Checkpoint, TrainConfig, Trainer, PARAM_BUDGET};
use budgetnet::{count_params, ResNetConfig};
use clap::{Parser, Subcommand};
use log::info;

/// Published total for the budget architecture.
const PUBLISHED_BUDGET_TOTAL: usize = 4_697_742;

#[derive(Parser)]
#[command(name = "budgetnet", version, about = "Budget-constrained residual networks for CIFAR-10")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count trainable parameters and check them against the budget.
    CountParams {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare every backward pass against central finite differences.
    GradCheck {
        /// Check a single op (default: all).
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(OPS))]
        op: Option<String>,
        /// Random shapes per op.
        #[arg(long, default_value_t = 6)]
        cases: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Train a model, writing metrics.csv and checkpoints to the output directory.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        epochs: Option<u64>,
        /// Use only the first N records of each split.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory holding data_batch_1..5.bin and test_batch.bin.
        #[arg(long, env = "BUDGETNET_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Continue from a checkpoint, using the configuration stored in it.
        #[arg(long, conflicts_with_all = ["config", "seed"])]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, env = "BUDGETNET_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Write a synthetic dataset in the CIFAR-10 binary layout.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        train: usize,
        #[arg(long, default_value_t = 1000)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    TrainConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn is_budget_architecture(m: &ResNetConfig) -> bool {
    let b = ResNetConfig::budget_model();
    m.se_enabled
        && (&m.blocks, &m.channels, &m.conv_kernels, &m.skip_kernels, m.num_classes)
            == (&b.blocks, &b.channels, &b.conv_kernels, &b.skip_kernels, b.num_classes)
}

fn count_params_cmd(config: &Path) -> Result<()> {
    let cfg = read_config(config)?;
    let total = count_params(&cfg.model)?;
    let budget = cfg.param_budget.unwrap_or(PARAM_BUDGET);
    println!("parameters: {total}");
    let verdict = if total < budget { "within budget" } else { "over budget" };
    println!("budget: {budget} ({verdict})");
    if is_budget_architecture(&cfg.model) {
        let plain = count_params(&ResNetConfig {
            se_enabled: false,
            ..cfg.model.clone()
        })?;
        let diff = total as i64 - PUBLISHED_BUDGET_TOTAL as i64;
        println!("published total: {PUBLISHED_BUDGET_TOTAL} (difference {diff:+})");
        println!("without squeeze-and-excitation: {plain}");
        if cfg.model.se_placement == SePlacement::EveryBlock {
            println!(
                "note: the published total leaves {} parameters for squeeze-and-excitation, \
                 which fits one unit at 64 channels with ratio 16 (se_placement = first_block), \
                 not one per block",
                PUBLISHED_BUDGET_TOTAL - plain
            );
        }
    }
    Ok(())
}

fn grad_check_cmd(op: Option<String>, cases: usize, seed: u64) -> Result<bool> {
    let reports = match op {
        Some(op) => vec![gradcheck::check_op(&op, cases, seed)?],
        None => gradcheck::check_all(cases, seed)?,
    };
    let mut ok = true;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<14} cases={} max_rel_error={:.3e} {status}", r.op, r.shapes.len(), r.max_rel_error);
        ok &= r.passed();
    }
    println!("tolerance {TOLERANCE:e}: {}", if ok { "all passed" } else { "failures" });
    Ok(ok)
}

fn data_dir(flag: Option<PathBuf>, cfg: &TrainConfig) -> Result<PathBuf> {
    match flag.or_else(|| cfg.data_dir.clone()) {
        Some(d) => Ok(d),
        None => bail!("no data directory: pass --data-dir, set BUDGETNET_DATA_DIR or add data_dir to the config"),
    }
}

struct TrainArgs {
    config: Option<PathBuf>,
    epochs: Option<u64>,
    subset: Option<usize>,
    seed: Option<u64>,
    data_dir: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    resume: Option<PathBuf>,
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let checkpoint = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let mut cfg = match (&checkpoint, &args.config) {
        (Some(ckpt), _) => ckpt.config.clone(),
        (None, Some(path)) => read_config(path)?,
        (None, None) => bail!("train needs --config or --resume"),
    };
    if let Some(e) = args.epochs {
        cfg.epochs = e as usize;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.output_dir {
        cfg.output_dir = o;
    }
    let dir = data_dir(args.data_dir, &cfg)?;
    cfg.data_dir = Some(dir.clone());
    cfg.validate()?;
    let (mut train, mut test) =
        load_cifar10(&dir).with_context(|| format!("cannot load CIFAR-10 from {}", dir.display()))?;
    if let Some(n) = args.subset {
        train = train.subset(n);
        test = test.subset(n);
    }
    info!("{} training and {} test images", train.len(), test.len());

    let mut trainer = match checkpoint {
        Some(ckpt) => Trainer::from_checkpoint(&Checkpoint {
            config: cfg.clone(),
            ..ckpt
        })?,
        None => Trainer::new(cfg.clone(), &train)?,
    };
    let rows = trainer.fit(&train, &test, &cfg.output_dir)?;
    for r in &rows {
        println!(
            "epoch {:>3}  train_loss {:.4}  train_acc {:.4}  test_loss {:.4}  test_acc {:.4}  lr {:.5}",
            r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.lr
        );
    }
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn eval_cmd(checkpoint: &Path, data_flag: Option<PathBuf>, subset: Option<usize>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let dir = data_dir(data_flag, &ckpt.config)?;
    let (_, mut test) = load_cifar10(&dir).with_context(|| format!("cannot load CIFAR-10 from {}", dir.display()))?;
    if let Some(n) = subset {
        test = test.subset(n);
    }
    let mut trainer = Trainer::from_checkpoint(&ckpt)?;
    let stats = *trainer.stats();
    let batch = ckpt.config.batch_size;
    let (loss, acc) = evaluate(trainer.model_mut(), &test, &stats, batch)?;
    println!("epoch {}  test_loss {loss:.6}  test_acc {acc:.4}", ckpt.state.epoch);
    Ok(())
}

fn synth_cmd(out: &Path, train: usize, test: usize, seed: u64) -> Result<()> {
    let tr = synthetic(train, Split::Train, seed);
    let te = synthetic(test, Split::Test, seed);
    write_cifar10_dir(out, &tr, &te)?;
    println!("wrote {train} training and {test} test images to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::CountParams { config } => count_params_cmd(&config)?,
        Command::GradCheck { op, cases, seed } => return grad_check_cmd(op, cases, seed),
        Command::Train {
            config,
            epochs,
            subset,
            seed,
            data_dir,
            output_dir,
            resume,
        } => train_cmd(TrainArgs {
            config,
            epochs,
            subset,
            seed,
            data_dir,
            output_dir,
            resume,
        })?,
        Command::Eval {
            checkpoint,
            data_dir,
            subset,
        } => eval_cmd(&checkpoint, data_dir, subset)?,
        Command::SynthData { out, train, test, seed } => synth_cmd(&out, train, test, seed)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
