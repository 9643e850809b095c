use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{self, scan_dataset, stratified_split, FileSource, MemorySource};
use crate::metrics::MetricsReport;
use crate::model::{load_model, save_model, Profile};
use crate::preproc::io::load_rgb;
use crate::preproc::run_pipeline;
use crate::train::{self, export_history, History};

use super::config::AppConfig;
use super::{service, AppError, Result, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "isl", version, about = "Sign-gesture classifier: train, evaluate, predict and serve")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Table1,
    Desk,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Table1 => Profile::Table1,
            ProfileArg::Desk => Profile::Desk,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print layer output shapes and parameter counts.
    Inspect {
        #[arg(long, value_enum, default_value = "table1")]
        profile: ProfileArg,
        #[arg(long, default_value_t = 35, value_parser = clap::value_parser!(u16).range(2..))]
        classes: u16,
    },
    /// Train a model as described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Evaluate a model on a dataset directory.
    Eval(EvalArgs),
    /// Classify one image and print the three most likely labels.
    Predict {
        #[arg(long)]
        model: PathBuf,
        image: PathBuf,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u16).range(1..))]
        top: u16,
    },
    /// Generate a synthetic glyph dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u16).range(2..=35))]
        classes: u16,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        per_class: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the HTTP inference service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
}

/// Command-line values that replace the config file's.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Evaluate every sample instead of the held-out split.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[arg(long, default_value_t = 3)]
    pub split_seed: u64,
    /// Write the JSON report here ("-" for stdout).
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn cmd_inspect(profile: Profile, classes: usize, out: &mut dyn Write) -> Result<()> {
    let manifest = profile.manifest(classes);
    let rows = manifest.summary()?;
    let count = manifest.count_params()?;
    let w = |e| AppError::Io { path: "<stdout>".into(), source: e };
    writeln!(out, "Model: {profile} (input {:?}, {classes} classes)", manifest.input_shape).map_err(w)?;
    writeln!(out, "{:<28}{:<28}{:>14}", "Layer (type)", "Output Shape", "Param #").map_err(w)?;
    for r in rows {
        let shape: Vec<String> = r.output_shape.iter().map(usize::to_string).collect();
        writeln!(
            out,
            "{:<28}{:<28}{:>14}",
            format!("{} ({})", r.name, r.kind),
            format!("(None, {})", shape.join(", ")),
            group_thousands(r.params.total())
        )
        .map_err(w)?;
    }
    writeln!(out, "Total params: {}", group_thousands(count.total())).map_err(w)?;
    writeln!(out, "Trainable params: {}", group_thousands(count.trainable)).map_err(w)?;
    writeln!(out, "Non-trainable params: {}", group_thousands(count.non_trainable)).map_err(w)?;
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(AppError::Config(format!("{what} {} does not exist or is not a directory", path.display())))
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|source| AppError::Io { path: dir.to_path_buf(), source })
        }
        _ => Ok(()),
    }
}

/// Trains per the config file, writes the model and history, and returns
/// the history.
pub fn cmd_train(config_path: &Path, overrides: &TrainOverrides, out: &mut dyn Write) -> Result<History> {
    let mut cfg = AppConfig::load(config_path)?;
    if let Some(d) = &overrides.dataset {
        cfg.dataset_root = d.clone();
    }
    if let Some(m) = &overrides.model {
        cfg.model_path = m.clone();
    }
    if let Some(h) = &overrides.history {
        cfg.history_path = h.clone();
    }
    if let Some(e) = overrides.epochs {
        cfg.train.epochs = e as usize;
    }
    if let Some(lr) = overrides.learning_rate {
        cfg.train.learning_rate = lr;
    }
    cfg.validate()?;
    require_dir(&cfg.dataset_root, "dataset root")?;
    create_parent(&cfg.model_path)?;
    create_parent(&cfg.history_path)?;

    let (model, history, split) = train::train_from_dir(&cfg.dataset_root, cfg.pipeline(), &cfg.train)?;
    save_model(&model, &cfg.model_path)?;
    export_history(&history, &cfg.history_path)?;

    let w = |e| AppError::Io { path: "<stdout>".into(), source: e };
    let best = history.best().expect("training ran at least one epoch");
    let last = history.records.last().expect("training ran at least one epoch");
    writeln!(
        out,
        "trained {} epochs{} on {} samples ({} held out)",
        history.records.len(),
        if history.stopped_early { " (stopped early)" } else { "" },
        split.train.len(),
        split.test.len()
    )
    .map_err(w)?;
    writeln!(out, "best epoch {}: val_loss {:.4} val_accuracy {:.4}", best.epoch, best.val_loss, best.val_accuracy).map_err(w)?;
    writeln!(out, "final epoch {}: loss {:.4} accuracy {:.4}", last.epoch, last.loss, last.accuracy).map_err(w)?;
    writeln!(out, "model {} -> {}", model.id(), cfg.model_path.display()).map_err(w)?;
    writeln!(out, "history -> {}", cfg.history_path.display()).map_err(w)?;
    Ok(history)
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<MetricsReport> {
    let model = load_model(&args.model)?;
    require_dir(&args.dataset, "dataset root")?;
    let index = scan_dataset(&args.dataset)?;
    if index.classes != model.labels() {
        return Err(AppError::Mismatch(format!(
            "dataset classes {:?} do not match the model's labels {:?}",
            index.classes,
            model.labels()
        )));
    }
    let samples = if args.all {
        index.samples.clone()
    } else {
        stratified_split(&index, args.ratio, args.split_seed)?.test
    };
    let source = MemorySource::preload(&FileSource::new(samples, model.pipeline().clone()))?;
    let report = train::evaluate(&model, &source, 64)?;

    let w = |e| AppError::Io { path: "<stdout>".into(), source: e };
    let json = report.to_json();
    let to_stdout = args.json.as_deref() == Some(Path::new("-"));
    if to_stdout {
        writeln!(out, "{json}").map_err(w)?;
    } else {
        writeln!(out, "samples: {}", report.total).map_err(w)?;
        writeln!(out, "accuracy: {:.4}", report.accuracy.unwrap_or(0.0)).map_err(w)?;
        for (name, m) in [("precision", &report.macro_precision), ("recall", &report.macro_recall), ("f1", &report.macro_f1)] {
            let note = if m.excluded > 0 { format!(" ({} undefined classes excluded)", m.excluded) } else { String::new() };
            writeln!(out, "macro {name}: {:.4}{note}", m.value).map_err(w)?;
        }
        for c in &report.per_class {
            writeln!(
                out,
                "  {:<4} support {:>5}  precision {:.4}  recall {:.4}  f1 {:.4}",
                c.label.as_deref().unwrap_or("?"),
                c.support,
                c.precision.value,
                c.recall.value,
                c.f1.value
            )
            .map_err(w)?;
        }
        if let Some(path) = &args.json {
            std::fs::write(path, &json).map_err(|source| AppError::Io { path: path.clone(), source })?;
        }
    }
    Ok(report)
}

pub fn cmd_predict(model_path: &Path, image: &Path, top: usize, out: &mut dyn Write) -> Result<Vec<(String, f64)>> {
    let model = load_model(model_path)?;
    let img = load_rgb(image)?;
    let input = run_pipeline(&img, model.pipeline())?;
    let prediction = model.predict(&input)?;
    let ranked: Vec<(String, f64)> = prediction
        .top_k(top.min(model.classes()))
        .into_iter()
        .map(|(c, p)| (model.labels()[c].clone(), p))
        .collect();
    for (label, p) in &ranked {
        writeln!(out, "{label}\t{p:.6}").map_err(|e| AppError::Io { path: "<stdout>".into(), source: e })?;
    }
    Ok(ranked)
}

pub fn cmd_synth(out_dir: &Path, classes: usize, per_class: usize, seed: u64, out: &mut dyn Write) -> Result<data::SynthSummary> {
    let summary = data::synth_generate(out_dir, classes, per_class, seed)?;
    writeln!(out, "wrote {} images in {} classes to {}", summary.files, classes, out_dir.display())
        .map_err(|e| AppError::Io { path: "<stdout>".into(), source: e })?;
    Ok(summary)
}

fn cmd_serve(config: &Path, model: Option<PathBuf>, host: Option<String>, port: Option<u16>) -> Result<()> {
    let mut cfg = AppConfig::load(config)?;
    if let Some(m) = model {
        cfg.model_path = m;
    }
    if let Some(h) = host {
        cfg.service.host = h;
    }
    if let Some(p) = port {
        cfg.service.port = p;
    }
    cfg.validate()?;
    let model = Arc::new(load_model(&cfg.model_path)?);
    let addr = format!("{}:{}", cfg.service.host, cfg.service.port);
    let io = |source| AppError::Io { path: PathBuf::from(&addr), source };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(io)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(io)?;
        log::info!("serving model {} on http://{}", model.id(), listener.local_addr().map_err(io)?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        service::serve(listener, model, &cfg.service, shutdown).await.map_err(io)
    })
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn log_level_of(command: &Command) -> String {
    let config = match command {
        Command::Train { config, .. } | Command::Serve { config, .. } => Some(config),
        _ => None,
    };
    config
        .and_then(|c| std::fs::read_to_string(c).ok())
        .and_then(|t| toml::from_str::<AppConfig>(&t).ok())
        .map(|c| c.log_level)
        .unwrap_or_else(|| "warn".into())
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Inspect { profile, classes } => cmd_inspect(profile.into(), classes as usize, out),
        Command::Train { config, overrides } => cmd_train(&config, &overrides, out).map(drop),
        Command::Eval(args) => cmd_eval(&args, out).map(drop),
        Command::Predict { model, image, top } => cmd_predict(&model, &image, top as usize, out).map(drop),
        Command::Synth { out: dir, classes, per_class, seed } => {
            cmd_synth(&dir, classes as usize, per_class as usize, seed, out).map(drop)
        }
        Command::Serve { config, model, host, port } => cmd_serve(&config, model, host, port),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 success, 1 usage error, 2 runtime failure.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(&log_level_of(&cli.command));
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = writeln!(err, "  caused by: {s}");
                source = s.source();
            }
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("isl").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn thousands() {
        assert_eq!(group_thousands(0), "0");
        assert_eq!(group_thousands(999), "999");
        assert_eq!(group_thousands(30_155_955), "30,155,955");
    }

    #[test]
    fn inspect_table1_totals() {
        let (code, out, _) = run_capture(&["inspect", "--profile", "table1"]);
        assert_eq!(code, 0);
        assert!(out.contains("Total params: 30,155,955"), "{out}");
        assert!(out.contains("(None, 7, 7, 256)"));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_capture(&["inspect", "--profile", "huge"]).0, 1);
        assert_eq!(run_capture(&["synth", "--out", "/tmp/x", "--classes", "40", "--per-class", "1"]).0, 1);
        assert_eq!(run_capture(&["frobnicate"]).0, 1);
        assert_eq!(run_capture(&["--help"]).0, 0);
    }

    #[test]
    fn runtime_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "dataset_root = \"missing-data\"\n").unwrap();
        let (code, _, err) = run_capture(&["train", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(err.contains("missing-data"), "{err}");
    }
}
