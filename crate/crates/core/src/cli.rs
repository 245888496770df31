//! `sdjn` command line: train, eval, predict and synth.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{parse_pairs, ConfigError, Settings};
use crate::data::{parse_corpus, synth_corpus, DataError, Example, SynthConfig};
use crate::metrics::MetricsError;
use crate::model::{InteractionMode, ModelError};
use crate::trainer::{self, predict_frames, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(c) => c.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Config(format!("cannot use checkpoint: {e}"))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => c.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Metrics(m) => m.into(),
            abort @ TrainError::NumericAbort { .. } => CliError::Numeric(abort.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sdjn", version, about = "Joint multi-intent detection and slot filling")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write the best dev checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled corpus.
    Eval(EvalArgs),
    /// Tag pre-tokenized utterances, one per line.
    Predict(PredictArgs),
    /// Write a synthetic multi-intent corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override, applied after the file and before other flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// none, hint, soft2 or soft4.
    #[arg(long)]
    distill: Option<String>,
    #[arg(long)]
    interaction: Option<InteractionMode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Also append the per-epoch log lines to this file.
    #[arg(long)]
    log_file: Option<PathBuf>,
    /// Checkpoint destination.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labelled corpus in the training file format.
    #[arg(long)]
    data: PathBuf,
    /// Accepted for uniformity; evaluation does not sample.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One whitespace-tokenized utterance per line; stdin when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Accepted for uniformity; prediction does not sample.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 80)]
    examples: usize,
    #[arg(long, default_value_t = 5)]
    intents: usize,
    #[arg(long, default_value_t = 6)]
    slot_types: usize,
    /// Fractions of utterances with 1, 2 and 3 intents.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.3, 0.5, 0.2])]
    ratio: Vec<f64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SDJN_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("sdjn: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train(a) => run_train(a, out),
        Command::Eval(a) => run_eval(a, out),
        Command::Predict(a) => run_predict(a, out),
        Command::Synth(a) => run_synth(a, out),
    }
}

fn io_error(what: &str, path: &Path, e: io::Error) -> CliError {
    CliError::Other(format!("cannot {what} {}: {e}", path.display()))
}

fn read_corpus(path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let corpus = parse_corpus(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if corpus.is_empty() {
        return Err(CliError::Data(format!("{}: corpus is empty", path.display())));
    }
    Ok(corpus)
}

fn settings_for(a: &TrainArgs) -> Result<Settings> {
    let mut settings = Settings::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let pairs = parse_pairs(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        settings.apply_pairs(&pairs)?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        settings.set(k.trim(), v.trim())?;
    }
    let flags = [
        ("seed", a.seed.map(|v| v.to_string())),
        ("distill", a.distill.clone()),
        ("interaction", a.interaction.map(|v| v.to_string())),
        ("alpha", a.alpha.map(|v| v.to_string())),
        ("beta", a.beta.map(|v| v.to_string())),
        ("lambda", a.lambda.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("train_path", a.train.as_ref().map(|p| p.display().to_string())),
        ("dev_path", a.dev.as_ref().map(|p| p.display().to_string())),
        ("test_path", a.test.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            settings.set(k, &v)?;
        }
    }
    Ok(settings)
}

fn run_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let settings = settings_for(&a)?;
    if settings.train.train_path.is_empty() {
        return Err(CliError::Config("no training data: pass --train or set train_path".into()));
    }
    // Catch model/train settings errors before touching the data.
    settings.train.validate()?;
    let train_set = read_corpus(Path::new(&settings.train.train_path))?;
    let dev_set = if settings.train.dev_path.is_empty() {
        log::warn!("no dev set given, selecting the checkpoint on the training set");
        train_set.clone()
    } else {
        read_corpus(Path::new(&settings.train.dev_path))?
    };
    let test_set = if settings.train.test_path.is_empty() {
        None
    } else {
        Some(read_corpus(Path::new(&settings.train.test_path))?)
    };

    let mut log_file = match &a.log_file {
        Some(path) => Some(fs::File::create(path).map_err(|e| io_error("create", path, e))?),
        None => None,
    };
    let mut write_err: Option<io::Error> = None;
    let outcome = trainer::train(&settings, &train_set, &dev_set, |entry, _| {
        let line = format!("{entry}\n");
        let mut res = out.write_all(line.as_bytes());
        if let Some(f) = log_file.as_mut() {
            res = res.and_then(|_| f.write_all(line.as_bytes()));
        }
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(CliError::Other(format!("cannot write the epoch log: {e}")));
    }
    let best = &outcome.best;
    best.save(&a.out).map_err(|e| match e {
        CheckpointError::Io { path, source } => io_error("write", Path::new(&path), source),
        other => other.into(),
    })?;
    let w = |out: &mut dyn Write, s: String| out.write_all(s.as_bytes()).map_err(|e| CliError::Other(e.to_string()));
    w(
        out,
        format!(
            "best_epoch={} best_dev_overall={:.4} checkpoint={}\n",
            best.epoch,
            best.best_dev,
            a.out.display()
        ),
    )?;
    if let Some(test) = test_set {
        let report = trainer::evaluate_checkpoint(best, &test)?;
        w(out, format!("test:\n{}", report.to_key_values()))?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::load(path)?)
}

fn run_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cp = load_checkpoint(&a.checkpoint)?;
    let corpus = read_corpus(&a.data)?;
    let report = trainer::evaluate_checkpoint(&cp, &corpus)?;
    write!(out, "{}\n{}", report.to_table(), report.to_key_values()).map_err(|e| CliError::Other(e.to_string()))
}

fn run_predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let cp = load_checkpoint(&a.checkpoint)?;
    let lines: Vec<String> = match &a.input {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?
            .lines()
            .map(str::to_string)
            .collect(),
        None => io::stdin()
            .lock()
            .lines()
            .collect::<io::Result<_>>()
            .map_err(|e| CliError::Data(format!("cannot read stdin: {e}")))?,
    };
    for (no, line) in lines.iter().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            log::warn!("line {}: empty utterance skipped", no + 1);
            continue;
        }
        let frame = predict_frames(&cp.model, &cp.vocabs, &[tokens])?.remove(0);
        writeln!(out, "{}", frame.to_line()).map_err(|e| CliError::Other(e.to_string()))?;
    }
    Ok(())
}

fn run_synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        n_examples: a.examples,
        n_intents: a.intents,
        n_slot_types: a.slot_types,
        intent_ratio: [a.ratio[0], a.ratio[1], a.ratio[2]],
    };
    let text = synth_corpus(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    match &a.out {
        Some(path) => fs::write(path, text).map_err(|e| io_error("write", path, e)),
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::Other(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("sdjn").chain(args.iter().copied())).unwrap()
    }

    fn train_args(args: &[&str]) -> TrainArgs {
        match parse(args).command {
            Command::Train(a) => a,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flags_override_config_file_and_set() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "alpha = 0.3\ndistill = none\nepochs = 9\n").unwrap();
        let a = train_args(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "epochs=4",
            "--set",
            "beta = 0.25",
            "--alpha",
            "2",
            "--distill",
            "soft4",
            "--interaction",
            "implicit",
            "--out",
            "x.ckpt",
        ]);
        let s = settings_for(&a).unwrap();
        assert_eq!(s.train.alpha, 2.0);
        assert_eq!(s.train.beta, 0.25);
        assert_eq!(s.train.epochs, 4);
        assert_eq!(s.model.distill, "soft4");
        assert_eq!(s.model.interaction, InteractionMode::Implicit);
    }

    #[test]
    fn bad_override_is_a_config_error() {
        let a = train_args(&["train", "--set", "no_such_key=1", "--out", "x"]);
        assert_eq!(settings_for(&a).unwrap_err().exit_code(), 2);
        let a = train_args(&["train", "--set", "alpha", "--out", "x"]);
        assert_eq!(settings_for(&a).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn unknown_flag_is_rejected() {
        assert!(Cli::try_parse_from(["sdjn", "train", "--out", "x", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["sdjn", "train", "--out", "x", "--interaction", "sideways"]).is_err());
    }

    #[test]
    fn numeric_abort_maps_to_four() {
        let e: CliError = TrainError::NumericAbort {
            epoch: 1,
            batch: 0,
            losses: Default::default(),
        }
        .into();
        assert_eq!(e.exit_code(), 4);
        let e: CliError = DataError::EmptyCorpus.into();
        assert_eq!(e.exit_code(), 3);
    }
}
