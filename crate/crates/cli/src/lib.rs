//! Subcommands of the `toxspan` binary, callable as plain functions.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use toxspan::biaffine_model::{train_biaffine, BiaffineModel, SpanExample};
use toxspan::dataio::{self, ReadMode, SynthConfig, SynthMode};
use toxspan::eval::{AnalysisReport, BucketMode, EvalPost, Lexicon};
use toxspan::neural::{gradient_check, GradCheckConfig, GradCheckReport, Gradients, ModelParams};
use toxspan::tagger::{build_vocab, TaggedExample};
use toxspan::training::log_to_csv;
use toxspan::{Architecture, Error, Model, Overrides, RawPost, Result, RunConfig, TagScheme, TaggerModel, TrainStatus};

#[derive(Debug, Parser)]
#[command(name = "toxspan", version, about = "Toxic span detection: train, predict and evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the tokens (with original character offsets) of every post.
    Preprocess(PreprocessArgs),
    /// Train a model and write its best checkpoint and training log.
    Train(TrainArgs),
    /// Predict toxic offsets for every post of a CSV file.
    Predict(PredictArgs),
    /// Score a prediction file against gold, optionally with length and lexicon analyses.
    Evaluate(EvaluateArgs),
    /// Corpus statistics of a gold file: record count and span length counts.
    Analyze(AnalyzeArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic corpus with planted spans.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Tagger,
    Biaffine,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Tagger => Architecture::Tagger,
            ArchArg::Biaffine => Architecture::Biaffine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Io,
    Bio,
}

impl From<SchemeArg> for TagScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Io => TagScheme::Io,
            SchemeArg::Bio => TagScheme::Bio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BucketArg {
    /// Each post counts once, under its longest gold span.
    PostLongest,
    /// Each gold span is scored on its own.
    PerSpan,
}

impl From<BucketArg> for BucketMode {
    fn from(b: BucketArg) -> Self {
        match b {
            BucketArg::PostLongest => BucketMode::PostLongest,
            BucketArg::PerSpan => BucketMode::PerSpan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthModeArg {
    Recoverable,
    ContextDependent,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Tagger only: per-token softmax instead of a CRF.
    #[arg(long)]
    pub no_crf: bool,
    /// Drop the sentence-level BiLSTM.
    #[arg(long)]
    pub no_lstm: bool,
    /// Tokenize on whitespace only.
    #[arg(long)]
    pub no_preprocess: bool,
}

impl ModelFlags {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        config.apply(&Overrides {
            architecture: self.arch.map(Into::into),
            seed: self.seed,
            scheme: self.scheme.map(Into::into),
            no_crf: self.no_crf,
            no_lstm: self.no_lstm,
            no_preprocess: self.no_preprocess,
        })?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub no_preprocess: bool,
    #[command(flatten)]
    pub read: ReadFlags,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model_flags: ModelFlags,
    /// Training CSV; overrides `[data] train`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Development CSV; overrides `[data] dev`.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Where to write the best checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Training log CSV; defaults to `<model>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub read: ReadFlags,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub read: ReadFlags,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Prediction CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Gold CSV, aligned with the predictions by row order.
    #[arg(long)]
    pub gold: PathBuf,
    /// Add span-length bucketed F1.
    #[arg(long, value_enum, num_args = 0..=1, default_missing_value = "post-longest")]
    pub buckets: Option<BucketArg>,
    /// Add the lexicon split; `builtin` selects the bundled word list.
    #[arg(long)]
    pub lexicon: Option<String>,
    /// Write the analysis as CSV here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Token boundaries for the analyses come from whitespace splitting.
    #[arg(long)]
    pub no_preprocess: bool,
    #[command(flatten)]
    pub read: ReadFlags,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub no_preprocess: bool,
    #[command(flatten)]
    pub read: ReadFlags,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub model_flags: ModelFlags,
    /// Entries sampled per parameter tensor; 0 checks every entry.
    #[arg(long, default_value_t = 20)]
    pub max_entries: usize,
    /// Debugging aid: perturb one analytic gradient entry before checking.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of posts.
    #[arg(long, default_value_t = 1000)]
    pub size: usize,
    /// Shares of span lengths 1, 2-4 and >=5 words, comma separated.
    #[arg(long, value_parser = parse_mix)]
    pub mix: Option<[f64; 3]>,
    #[arg(long, value_enum, default_value = "recoverable")]
    pub mode: SynthModeArg,
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub empty_fraction: f64,
    /// Lexicon file for single-word spans; the bundled list when omitted.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

fn parse_mix(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated numbers".to_string())
}

/// Malformed CSV records abort the command unless `--lenient` is given.
#[derive(Debug, Clone, Copy, Default, Args)]
pub struct ReadFlags {
    /// Abort on the first malformed record (the default).
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Skip malformed records with a warning instead of aborting.
    #[arg(long)]
    pub lenient: bool,
}

impl ReadFlags {
    pub fn mode(self) -> ReadMode {
        if self.lenient && !self.strict {
            ReadMode::Lenient
        } else {
            ReadMode::Strict
        }
    }
}

fn read_posts(path: &Path, read: ReadFlags) -> Result<Vec<RawPost>> {
    let data = dataio::read_tsd_csv(path, read.mode())?;
    if !data.skipped.is_empty() {
        log::warn!("{}: skipped {} malformed record(s)", path.display(), data.skipped.len());
    }
    Ok(data.records)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Text written to standard output on success.
pub type Report = String;

pub fn run(cli: Cli) -> Result<Report> {
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<Report> {
    let posts = read_posts(&args.input, args.read)?;
    let mut wtr = String::from("post,token,start,end\n");
    for (i, post) in posts.iter().enumerate() {
        for t in toxspan::prepare(&post.text, !args.no_preprocess) {
            let _ = writeln!(wtr, "{i},{},{},{}", csv_field(&t.surface), t.orig_start, t.orig_end);
        }
    }
    match &args.output {
        Some(path) => {
            write_text(path, &wtr)?;
            Ok(format!("wrote tokens of {} posts to {}\n", posts.len(), path.display()))
        }
        None => Ok(wtr),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<Report> {
    let config = args.model_flags.run_config()?;
    let train_path = args
        .input
        .clone()
        .or_else(|| config.data.train.clone())
        .ok_or_else(|| Error::Config("no training file: pass --input or set [data] train".into()))?;
    let dev_path = args
        .dev
        .clone()
        .or_else(|| config.data.dev.clone())
        .ok_or_else(|| Error::Config("no development file: pass --dev or set [data] dev".into()))?;
    let train_posts = read_posts(&train_path, args.read)?;
    let dev_posts = read_posts(&dev_path, args.read)?;

    let (model, log, status, best) = match config.run.architecture {
        Architecture::Tagger => {
            let out = toxspan::train(&train_posts, &dev_posts, config.tagger.clone(), &config.tagger_schedule)?;
            (Model::Tagger(out.model), out.log, out.status, out.best_dev_f1)
        }
        Architecture::Biaffine => {
            let out = train_biaffine(&train_posts, &dev_posts, config.biaffine.clone(), &config.biaffine_schedule)?;
            (Model::Biaffine(out.model), out.log, out.status, out.best_dev_f1)
        }
    };
    let log_path = args.log.clone().unwrap_or_else(|| default_log_path(&args.model));
    write_text(&log_path, &log_to_csv(&log))?;
    if log.is_empty() {
        if let TrainStatus::Aborted(msg) = status {
            return Err(Error::Numeric(msg));
        }
    }
    model.save(&args.model)?;
    let mut report = format!(
        "trained {} on {} posts: {} log rows, best dev F1 {best:.4}\ncheckpoint: {}\nlog: {}\n",
        config.run.architecture,
        train_posts.len(),
        log.len(),
        args.model.display(),
        log_path.display()
    );
    match status {
        TrainStatus::Completed => report.push_str("status: completed\n"),
        TrainStatus::EarlyStopped => report.push_str("status: stopped early\n"),
        TrainStatus::Aborted(msg) => {
            log::error!("training aborted: {msg}");
            return Err(Error::Numeric(format!("{msg}; best checkpoint saved to {}", args.model.display())));
        }
    }
    Ok(report)
}

pub fn default_log_path(model: &Path) -> PathBuf {
    let mut name = model.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.csv");
    model.with_file_name(name)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<Report> {
    let model = Model::load(&args.model)?;
    let posts = read_posts(&args.input, args.read)?;
    let texts: Vec<&str> = posts.iter().map(|p| p.text.as_str()).collect();
    let predictions = model.predict_all(&texts);
    dataio::write_predictions(&args.output, &posts, &predictions)?;
    Ok(format!("wrote {} predictions to {}\n", predictions.len(), args.output.display()))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Report> {
    let preds = read_posts(&args.input, args.read)?;
    let gold = read_posts(&args.gold, args.read)?;
    if preds.len() != gold.len() {
        return Err(Error::Invalid(format!(
            "{} predictions but {} gold records; files are aligned by row order",
            preds.len(),
            gold.len()
        )));
    }
    let lexicon = match args.lexicon.as_deref() {
        None => None,
        Some("builtin") => Some(Lexicon::builtin()),
        Some(path) => Some(Lexicon::load(Path::new(path))?),
    };
    let posts: Vec<EvalPost> = preds
        .into_iter()
        .zip(&gold)
        .map(|(p, g)| EvalPost::new(&g.text, p.gold, g.gold.clone(), !args.no_preprocess))
        .collect();
    let mode = args.buckets.map_or(BucketMode::PostLongest, Into::into);
    let report = AnalysisReport::build(&posts, mode, lexicon.as_ref())?;
    if let Some(path) = &args.output {
        write_text(path, &report.to_csv())?;
    }
    if args.buckets.is_some() || lexicon.is_some() {
        Ok(report.to_string())
    } else {
        Ok(format!("corpus F1: {:.4} over {} posts\n", report.corpus_f1, report.posts))
    }
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Report> {
    let data = dataio::read_tsd_csv(&args.input, args.read.mode())?;
    let posts: Vec<EvalPost> = data
        .records
        .iter()
        .map(|p| EvalPost::new(&p.text, BTreeSet::new(), p.gold.clone(), !args.no_preprocess))
        .collect();
    let counts = toxspan::eval::span_length_counts(&posts);
    let with_spans = posts.iter().filter(|p| !p.gold.is_empty()).count();
    let mut out = String::new();
    let _ = writeln!(out, "records: {}", data.records.len());
    let _ = writeln!(out, "skipped: {}", data.skipped.len());
    let _ = writeln!(out, "posts with spans: {with_spans}");
    let _ = writeln!(out, "spans: 1 = {}, 2-4 = {}, >=5 = {}", counts[0], counts[1], counts[2]);
    Ok(out)
}

/// The three-token sentence used for gradient checks.
pub const GRADCHECK_TEXT: &str = "you idiot !";

pub fn gradcheck_report(config: &RunConfig, max_entries: usize, corrupt: bool) -> Result<GradCheckReport> {
    let post = RawPost::new(GRADCHECK_TEXT, 4..=8)?;
    let posts = std::slice::from_ref(&post);
    let check = GradCheckConfig {
        max_entries_per_param: (max_entries > 0).then_some(max_entries),
        seed: config.seed(),
        ..Default::default()
    };
    let run = |params: &ModelParams, mut grads: Gradients, loss: &dyn Fn(&ModelParams) -> f64| {
        if corrupt {
            let id = params.iter().map(|(_, id, _)| id).last().expect("parameters");
            grads.get_mut(id).data_mut()[0] += 1.0;
        }
        let mut probe = params.clone();
        gradient_check(&mut probe, &grads, loss, &check)
    };
    match config.run.architecture {
        Architecture::Tagger => {
            let m = TaggerModel::new(config.tagger.clone(), build_vocab(posts, config.tagger.use_preprocessing))?;
            let ex: TaggedExample = m.example(&post).ok_or_else(|| Error::Invalid("no tokens".into()))?;
            let (_, grads) = m.loss_and_grad(&m.params, &ex, None);
            Ok(run(&m.params, grads, &|p| m.loss(p, &ex)))
        }
        Architecture::Biaffine => {
            let m = BiaffineModel::new(config.biaffine.clone(), build_vocab(posts, config.biaffine.use_preprocessing))?;
            let ex: SpanExample = m.example(&post).ok_or_else(|| Error::Invalid("no tokens".into()))?;
            let (_, grads) = m.loss_and_grad(&m.params, &ex, None);
            Ok(run(&m.params, grads, &|p| m.loss(p, &ex)))
        }
    }
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<Report> {
    let config = args.model_flags.run_config()?;
    let report = gradcheck_report(&config, args.max_entries, args.corrupt_gradient)?;
    if report.passed() {
        Ok(format!("{report}\n"))
    } else {
        Err(Error::Numeric(format!("gradient check failed\n{report}")))
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Report> {
    let mut config = SynthConfig {
        seed: args.seed,
        n_posts: args.size,
        vocab_size: args.vocab_size,
        mode: match args.mode {
            SynthModeArg::Recoverable => SynthMode::Recoverable,
            SynthModeArg::ContextDependent => SynthMode::ContextDependent,
        },
        empty_fraction: args.empty_fraction,
        ..Default::default()
    };
    if let Some(mix) = args.mix {
        config.span_length_mix = mix;
    }
    if let Some(path) = &args.lexicon {
        config.lexicon = Lexicon::load(path)?.words().map(str::to_string).collect();
    }
    let posts = dataio::gen_synthetic(&config)?;
    dataio::write_tsd_csv(&args.output, &posts)?;
    Ok(format!("wrote {} posts to {}\n", posts.len(), args.output.display()))
}
