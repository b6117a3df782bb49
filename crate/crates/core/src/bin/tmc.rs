use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::json;

use tmc::data::{self, MultiViewDataset, NoiseSpec, SynthConfig};
use tmc::experiments::report::{density_csv, sweep_csv, threshold_csv};
use tmc::experiments::{
    self, Checkpoint, CheckpointConfig, ModelKind, TrainConfig, LEARNING_RATE_GRID,
};
use tmc::network::OutputActivation;
use tmc::opinion::{combine_many, dirichlet_from_opinion, Opinion};
use tmc::{Result, TmcError};

#[derive(Parser, Debug)]
#[command(name = "tmc", version, about = "Trusted multi-view classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic Gaussian-blob multi-view dataset.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus loss trace.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its held-out split.
    Eval(EvalArgs),
    /// Accuracy of one or two checkpoints over a range of noise levels.
    Sweep(SweepArgs),
    /// Fuse a JSON list of opinions with Dempster's rule.
    Fuse(FuseArgs),
    /// Pick a learning rate by stratified k-fold cross-validation.
    Tune(TuneArgs),
    /// Convert the UCI "Multiple Features" files to a manifest.
    ImportMfeat(ImportArgs),
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    views: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 8)]
    feature_dim: usize,
    #[arg(long, default_value_t = 5.0)]
    separation: f64,
    /// Views that carry label information (default: all).
    #[arg(long, value_delimiter = ',')]
    informative_views: Option<Vec<usize>>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModelArg {
    Tmc,
    Baseline,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum ActivationArg {
    Relu,
    Softplus,
}

#[derive(Args, Debug, Serialize)]
struct HyperArgs {
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    /// 0 trains on the full batch.
    #[arg(long, default_value_t = 0)]
    batch_size: usize,
    #[arg(long, default_value_t = 50)]
    annealing_epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ActivationArg::Relu)]
    activation: ActivationArg,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Use only these manifest views.
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<usize>>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl HyperArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            annealing_epochs: self.annealing_epochs,
            weight_decay: self.weight_decay,
            seed: self.seed,
            hidden_dims: self.hidden.clone(),
            evidence_activation: match self.activation {
                ActivationArg::Relu => OutputActivation::Relu,
                ActivationArg::Softplus => OutputActivation::Softplus,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(TmcError::InvalidConfig(format!(
                "--test-fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        self.train_config().validate()
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Tmc)]
    model: ModelArg,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV (default: checkpoint path with `.loss.csv`).
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct NoiseArgs {
    #[arg(long, value_delimiter = ',')]
    noise_views: Option<Vec<usize>>,
    /// Seed for noise placement and values.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_fraction: f64,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Evaluate every sample instead of the held-out split.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Directory for report.json, threshold.csv and density.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional concat-softmax checkpoint trained on the same split.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,5,10")]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    noise_fraction: f64,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct FuseArgs {
    /// JSON file holding a list of opinions, or `-` for stdin.
    input: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TuneArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ImportArgs {
    /// Directory with mfeat-fou, mfeat-fac, ... files.
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> TmcError {
    TmcError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn echo(command: &str, args: &impl Serialize) -> serde_json::Value {
    json!({ "command": command, "args": args })
}

fn load_views(manifest: &Path, views: Option<&[usize]>) -> Result<MultiViewDataset> {
    let ds = data::load_manifest(manifest)?;
    match views {
        Some(v) => ds.select_views(v),
        None => Ok(ds),
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut config = SynthConfig::new(args.classes, args.views, args.samples, args.seed);
    config.feature_dim = args.feature_dim;
    config.separation = args.separation;
    if let Some(v) = &args.informative_views {
        config.informative_views = v.clone();
    }
    let ds = data::synthesize(&config)?;
    let path = data::save_dataset(&ds, &args.out, Some(echo("synth", args)))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    args.hyper.validate()?;
    let ds = load_views(&args.manifest, args.hyper.views.as_deref())?;
    let prep = experiments::prepare(&ds, args.hyper.test_fraction, args.hyper.seed)?;
    let config = args.hyper.train_config();
    let meta = CheckpointConfig {
        kind: ModelKind::Tmc,
        dataset: ds.name().to_string(),
        class_count: ds.class_count(),
        input_dims: ds.view_dims(),
        selected_views: args.hyper.views.clone(),
        test_fraction: args.hyper.test_fraction,
        train: config.clone(),
    };
    info!(
        "training {:?} on {} samples ({} held out)",
        args.model,
        prep.train.len(),
        prep.test.len()
    );
    let (checkpoint, trace) = match args.model {
        ModelArg::Tmc => {
            let (model, trace) = experiments::train(&prep.train, &config)?;
            (Checkpoint::from_tmc(&model, meta, prep.standardizer), trace)
        }
        ModelArg::Baseline => {
            let (model, trace) = experiments::train_baseline(&prep.train, &config)?;
            (Checkpoint::from_baseline(&model, meta, prep.standardizer), trace)
        }
    };
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        info!("loss {first:.6} -> {last:.6}");
    }
    checkpoint.save(&args.out)?;
    let loss_path = args
        .loss_out
        .clone()
        .unwrap_or_else(|| args.out.with_extension("loss.csv"));
    let mut csv = format!("# config: {}\n", echo("train", args));
    for (epoch, loss) in trace.iter().enumerate() {
        csv.push_str(&format!("{epoch},{loss:?}\n"));
    }
    write_file(&loss_path, &csv)?;
    info!("wrote {} and {}", args.out.display(), loss_path.display());
    Ok(())
}

/// Rebuilds the evaluation data a checkpoint was trained against: the same
/// view subset, the same seeded split and the stored feature scaling.
fn checkpoint_data(ckpt: &Checkpoint, manifest: &Path, all: bool) -> Result<MultiViewDataset> {
    let ds = load_views(manifest, ckpt.config.selected_views.as_deref())?;
    if ds.class_count() != ckpt.config.class_count {
        return Err(TmcError::ClassMismatch {
            expected: ckpt.config.class_count,
            found: ds.class_count(),
        });
    }
    let scaled = ckpt.standardizer.transform(&ds)?;
    if all {
        return Ok(scaled);
    }
    let split = data::split(&ds, ckpt.config.test_fraction, ckpt.seed)?;
    scaled.subset(&split.test)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model = ckpt.tmc_model()?;
    let test = checkpoint_data(&ckpt, &args.manifest, args.all)?;
    let noise = NoiseSpec {
        sigma: args.noise_sigma,
        affected_views: args.noise.noise_views.clone(),
        affected_fraction: args.noise_fraction,
        seed: args.noise.seed,
    };
    noise.validate(test.view_count())?;
    if args.bins == 0 {
        return Err(TmcError::InvalidConfig("--bins must be >= 1".into()));
    }
    let mut report = experiments::evaluate(&model, &test, (noise.sigma > 0.0).then_some(&noise))?;
    report.config = json!({
        "command": "eval",
        "args": args,
        "checkpoint": ckpt.config,
        "seed": ckpt.seed,
        "noise": noise,
    });
    let a = &report.aggregates;
    info!(
        "accuracy {:.4}, auroc {:?}, mean u {:.4}",
        a.accuracy, a.auroc, a.mean_uncertainty
    );
    fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    report.save(args.out_dir.join("report.json"))?;
    write_file(
        &args.out_dir.join("threshold.csv"),
        &threshold_csv(&report.threshold_curve, &report.config),
    )?;
    write_file(
        &args.out_dir.join("density.csv"),
        &density_csv(&report.density(args.bins)?, &report.config),
    )?;
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model = ckpt.tmc_model()?;
    let test = checkpoint_data(&ckpt, &args.manifest, false)?;
    let baseline = match &args.baseline {
        Some(path) => {
            let b = Checkpoint::load(path)?;
            let same_split = b.seed == ckpt.seed
                && b.config.test_fraction == ckpt.config.test_fraction
                && b.config.selected_views == ckpt.config.selected_views
                && b.standardizer == ckpt.standardizer;
            if !same_split {
                return Err(TmcError::InvalidConfig(
                    "baseline checkpoint was trained on a different split".into(),
                ));
            }
            Some(b.baseline_model()?)
        }
        None => None,
    };
    let template = NoiseSpec {
        sigma: 0.0,
        affected_views: args.noise.noise_views.clone(),
        affected_fraction: args.noise_fraction,
        seed: args.noise.seed,
    };
    let rows = experiments::noise_sweep(&model, baseline.as_ref(), &test, &args.sigmas, &template)?;
    for r in &rows {
        info!("sigma {}: tmc {:.4} baseline {:?}", r.sigma, r.tmc_accuracy, r.baseline_accuracy);
    }
    let config = json!({"command": "sweep", "args": args, "seed": ckpt.seed});
    write_file(&args.out, &sweep_csv(&rows, &config))
}

fn cmd_fuse(args: &FuseArgs) -> Result<()> {
    let text = if args.input.as_os_str() == "-" {
        let mut buf = String::new();
        std::io::stdin()
            .read_to_string(&mut buf)
            .map_err(|e| io_error(Path::new("-"), e))?;
        buf
    } else {
        fs::read_to_string(&args.input).map_err(|e| io_error(&args.input, e))?
    };
    let opinions: Vec<Opinion> = serde_json::from_str(&text)
        .map_err(|e| TmcError::Parse {
            path: args.input.clone(),
            message: e.to_string(),
        })?;
    for op in &opinions {
        op.validate()?;
    }
    let joint = combine_many(&opinions)?;
    let alpha = dirichlet_from_opinion(&joint.opinion).ok().map(|d| d.into_inner());
    let out = json!({
        "opinion": joint.opinion,
        "conflict": joint.conflict,
        "alpha": alpha,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_tune(args: &TuneArgs) -> Result<()> {
    args.hyper.validate()?;
    let ds = load_views(&args.manifest, args.hyper.views.as_deref())?;
    let prep = experiments::prepare(&ds, args.hyper.test_fraction, args.hyper.seed)?;
    let candidates = args.candidates.clone().unwrap_or_else(|| LEARNING_RATE_GRID.to_vec());
    let result =
        experiments::tune_learning_rate(&prep.train, &args.hyper.train_config(), &candidates, args.folds)?;
    info!("best learning rate {}", result.best);
    let out = json!({"config": echo("tune", args), "result": result});
    write_file(&args.out, &(serde_json::to_string_pretty(&out)? + "\n"))
}

fn cmd_import(args: &ImportArgs) -> Result<()> {
    let ds = data::import_mfeat(&args.source)?;
    let path = data::save_dataset(&ds, &args.out, Some(echo("import-mfeat", args)))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Tune(a) => cmd_tune(a),
        Command::ImportMfeat(a) => cmd_import(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
