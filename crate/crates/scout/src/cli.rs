//! The `scout` command line.

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use scout_core::attribution::ScoreKind;
use scout_core::dataset::Split;
use scout_core::micronet::{train_with_progress, Architecture, ModelBundle, TrainConfig};
use scout_core::synthgen::{generate_dataset, DatasetConfig, Dissimilarity, GeneratedDataset, UserKind};

use crate::checkpoint;
use crate::dataset_dir::{read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate, EvalConfig, Method, ThresholdMode, DEFAULT_AREAS};
use crate::explain::{Contrast, Engine, ExplainRequest};
use crate::fsutil::{build_dir, write_json};
use crate::heatmap::write_heatmap;

#[derive(Debug, Parser)]
#[command(name = "scout", version, about = "Discriminant and counterfactual explanations for a small CNN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic part/attribute dataset directory.
    Gen(GenArgs),
    /// Train a classifier with its hardness head and write a checkpoint.
    Train(TrainArgs),
    /// Explain one test image against a counter class.
    Explain(ExplainArgs),
    /// Evaluate explanation methods and write report.json and report.csv.
    Eval(EvalArgs),
    /// Serve the JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Class-specific bill colours with a mild shared attribute.
    Planted,
    /// Same layout with a strongly shared attribute between two classes.
    Ambiguous,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "planted")]
    pub preset: Preset,
    #[arg(long, default_value_t = 200)]
    pub images_per_class: usize,
    /// kl or occurrence.
    #[arg(long)]
    pub dissimilarity: Option<Dissimilarity>,
    /// Fraction of (part, class, class) triplets kept as ground truth.
    #[arg(long)]
    pub keep_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Train the smaller architecture used as the advanced user's model.
    #[arg(long)]
    pub weak: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Feature layer explanations are computed on, e.g. block2.
    #[arg(long)]
    pub tap: Option<String>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: u32,
    /// Class index or name.
    #[arg(long)]
    pub counter_class: String,
    #[arg(long, default_value = "easiness")]
    pub score: ScoreKind,
    #[arg(long, default_value_t = 0.1)]
    pub area: f64,
    #[arg(long, value_enum, default_value = "scout")]
    pub contrast: ContrastArg,
    /// Seeds the counter image choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ContrastArg {
    Scout,
    Random,
    Full,
}

impl From<ContrastArg> for Contrast {
    fn from(c: ContrastArg) -> Self {
        match c {
            ContrastArg::Scout => Contrast::Scout,
            ContrastArg::Random => Contrast::Random,
            ContrastArg::Full => Contrast::Full,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Model simulating the advanced user; required when that user is evaluated.
    #[arg(long)]
    pub weak_model: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "discriminant,attributive,random")]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "softmax,certainty,easiness")]
    pub scores: Vec<ScoreKind>,
    #[arg(long, value_delimiter = ',', default_value = "beginner,advanced")]
    pub users: Vec<UserKind>,
    #[arg(long, value_delimiter = ',')]
    pub areas: Option<Vec<f64>>,
    #[arg(long, default_value = "per-image")]
    pub threshold_mode: ThresholdMode,
    /// Write 0 for images/second so reports compare byte for byte.
    #[arg(long)]
    pub mask_timing: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, env = "SCOUT_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Explain(a) => explain(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let mut config = match a.preset {
        Preset::Planted => DatasetConfig::planted(a.images_per_class),
        Preset::Ambiguous => DatasetConfig::ambiguous(a.images_per_class),
    };
    if let Some(d) = a.dissimilarity {
        config.dissimilarity = d;
    }
    if let Some(k) = a.keep_fraction {
        config.keep_fraction = k;
    }
    let data = generate_dataset(&config, a.seed)?;
    write_dataset(&a.out, &data)?;
    eprintln!("wrote {} images to {}", data.scenes.len(), a.out.display());
    Ok(())
}

fn load_pair(data: &Path, model: &Path) -> Result<(GeneratedDataset, ModelBundle)> {
    let data = read_dataset(data)?;
    if !model.is_file() {
        return Err(Error::Usage(format!("model checkpoint {} does not exist", model.display())));
    }
    let model = checkpoint::load(model)?;
    checkpoint::check_classes(&model, &data.config.classes)?;
    Ok((data, model))
}

fn train(a: TrainArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let train_set = data.labeled(Split::Train)?;
    let test_set = data.labeled(Split::Test)?;
    let classes = data.config.classes.len();
    let arch = if a.weak {
        Architecture::weak(classes)
    } else {
        Architecture::standard(classes)
    };
    let mut config = TrainConfig::default();
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        config.learning_rate = lr;
    }
    let quiet = a.quiet;
    let mut model = train_with_progress(&train_set, &arch, &config, a.seed, &mut |s| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  hardness {:.4}  accuracy {:.3}",
                s.epoch, s.loss, s.hardness_loss, s.accuracy
            );
        }
    })?;
    if let Some(tap) = &a.tap {
        let index = model.arch.tap_index(tap)?;
        model = model.with_tap(index)?;
    }
    let correct = (0..test_set.len())
        .map(|i| model.predict(&test_set.image(i)).map(|p| p == test_set.label(i)))
        .collect::<std::result::Result<Vec<bool>, _>>()?
        .into_iter()
        .filter(|&c| c)
        .count();
    checkpoint::save(&model, &a.out)?;
    eprintln!(
        "test accuracy {:.3} ({correct}/{}); wrote {}",
        correct as f64 / test_set.len() as f64,
        test_set.len(),
        a.out.display()
    );
    Ok(())
}

fn class_index(spec: &str, names: &[String]) -> Result<usize> {
    if let Ok(i) = spec.parse::<usize>() {
        return Ok(i);
    }
    names
        .iter()
        .position(|n| n == spec)
        .ok_or_else(|| Error::Usage(format!("unknown class `{spec}`")))
}

fn explain(a: ExplainArgs) -> Result<()> {
    let (data, model) = load_pair(&a.data, &a.model)?;
    let counter_class = class_index(&a.counter_class, &data.config.classes)?;
    let engine = Engine {
        model,
        data,
        seed: a.seed,
    };
    let request = ExplainRequest {
        image_id: a.image,
        counter_class,
        score_kind: a.score,
        area: a.area,
    };
    let raw = engine.explain(&request, a.contrast.into())?;
    build_dir(&a.out, |dir| {
        write_json(&dir.join("explanation.json"), &raw.record)?;
        write_heatmap(&dir.join("query_heatmap"), &raw.query_map.grid)?;
        write_heatmap(&dir.join("counter_heatmap"), &raw.counter_map.grid)
    })?;
    let r = &raw.record;
    eprintln!(
        "{} ({:.3}) vs {}: query parts {:?}, counter image {} parts {:?}",
        r.class_names[0], r.confidence, r.class_names[1], r.query.parts, r.counter_image_id, r.counter.parts
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (data, model) = load_pair(&a.data, &a.model)?;
    let weak = match &a.weak_model {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::Usage(format!("weak model {} does not exist", path.display())));
            }
            let weak = checkpoint::load(path)?;
            checkpoint::check_classes(&weak, &data.config.classes)?;
            Some(weak)
        }
        None if a.users.contains(&UserKind::Advanced) => {
            return Err(Error::Usage("--weak-model is required for the advanced user".into()));
        }
        None => None,
    };
    let gt = data.ground_truth()?;
    let config = EvalConfig {
        methods: a.methods,
        scores: a.scores,
        users: a.users,
        areas: a.areas.unwrap_or_else(|| DEFAULT_AREAS.to_vec()),
        seed: a.seed,
        threshold_mode: a.threshold_mode,
        combine: Default::default(),
    };
    let mut report = evaluate(&model, weak.as_ref(), &data, &gt, &config)?;
    if a.mask_timing {
        report.mask_timing();
    }
    emit_report(&report, &a.out)?;
    for row in &report.auc {
        let score = row.score.map_or("-".to_string(), |s| s.to_string());
        eprintln!(
            "{:<13} {:<10} {:<9} AUC {:.3} ± {:.3} (n={})",
            row.method, score, row.user, row.auc, row.auc_std, row.n
        );
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let (data, model) = load_pair(&a.data, &a.model)?;
    let engine = Arc::new(Engine {
        model,
        data,
        seed: a.seed,
    });
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    runtime.block_on(crate::service::serve(engine, SocketAddr::new(a.host, a.port)))
}
