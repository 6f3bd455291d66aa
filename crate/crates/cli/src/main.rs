use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use ircnn::harness::{
    cmd_eval, cmd_gradcheck, cmd_params, cmd_train, load_model_config, EvalSplit, GradcheckOptions, RunConfig,
    TrainOptions, CHECKPOINT_FILE,
};
use ircnn::models::{ModelConfig, Variant};
use ircnn::{Error, Result};

#[derive(Parser)]
#[command(name = "ircnn", version, about = "Inception-recurrent CNN trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation or test split.
    Eval(EvalArgs),
    /// Compare backprop against finite differences on a small model.
    Gradcheck(GradcheckArgs),
    /// Print the parameter table of a model.
    Params(ParamsArgs),
}

#[derive(Args)]
struct ModelSource {
    /// Model or run config (JSON). Defaults to the tiny preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset, "tiny" or "paper", used when --config is absent.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    variant: Option<Variant>,
}

impl ModelSource {
    fn load(&self) -> Result<ModelConfig> {
        let mut model = match (&self.config, &self.preset) {
            (Some(path), _) => load_model_config(path)?,
            (None, Some(p)) => ModelConfig::preset(p)?,
            (None, None) => ModelConfig::tiny(),
        };
        if let Some(v) = self.variant {
            model.variant = v;
        }
        model.validate()?;
        Ok(model)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "IRCNN_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// A checkpoint file, or a run's output directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, env = "IRCNN_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    model: ModelSource,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negate one tensor's analytic gradient (checks the checker).
    #[arg(long)]
    negate_grad_of: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    model: ModelSource,
    /// Also count every variant and check IRCNN/EIN parity.
    #[arg(long)]
    compare_variants: bool,
    #[arg(long)]
    json: bool,
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(v) = args.variant {
        cfg.set_variant(v);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(o) = args.out_dir {
        cfg.out_dir = o;
    }
    cfg.validate()?;

    let interrupt = Arc::new(AtomicBool::new(false));
    let flag = interrupt.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst))
        .map_err(|e| Error::Internal(format!("installing the interrupt handler: {e}")))?;

    let opts = TrainOptions { data_dir: args.data_dir, resume: args.resume, interrupt: Some(interrupt), stop_after_epoch: None };
    println!("training {} / {} -> {}", cfg.model().preset, cfg.model().variant, cfg.out_dir.display());
    let summary = cmd_train(&cfg, &opts, &mut |row| {
        println!(
            "epoch {:>3}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}{}",
            row.epoch,
            row.train_loss,
            row.train_acc,
            row.val_loss,
            row.val_acc,
            row.epoch_time_s.map(|t| format!("  {t:.1}s")).unwrap_or_default()
        )
    })?;
    println!("{} after {} epochs", summary.status, summary.epochs_completed);
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let split = match args.split.as_str() {
        "val" => EvalSplit::Val,
        "test" => EvalSplit::Test,
        other => return Err(Error::Config(format!("unknown split '{other}' (expected val or test)"))),
    };
    let path = if args.checkpoint.is_dir() { args.checkpoint.join(CHECKPOINT_FILE) } else { args.checkpoint };
    let r = cmd_eval(&path, split, args.data_dir.as_deref())?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    println!("epoch {}  {:?} samples {}", r.epoch, r.split, r.stats.samples);
    println!("loss {:.6}  accuracy {:.6}  error {:.3}%", r.stats.loss, r.stats.accuracy, r.error_pct);
    for (class, (total, correct)) in r.stats.per_class.iter().enumerate() {
        if *total > 0 {
            println!("  class {class:>3}  {correct:>6}/{total:<6} {:.4}", *correct as f64 / *total as f64);
        }
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<bool> {
    let model = args.model.load()?;
    let opts = GradcheckOptions { seed: args.seed, negate_grad_of: args.negate_grad_of, ..Default::default() };
    let r = cmd_gradcheck(&model, &opts)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        print!("{}", r.render());
    }
    Ok(r.pass)
}

fn params(args: ParamsArgs) -> Result<bool> {
    let model = args.model.load()?;
    let r = cmd_params(&model, args.compare_variants)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        print!("{}", r.render());
    }
    Ok(r.parity_ok())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Params(a) => params(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        // A report was printed, and it says fail.
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&e.to_string()));
            ExitCode::from(2)
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
