use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use chatgate::classifiers::{fit_classifier, ClassifierKind, ClassifierSpec, Example, TrainOptions};
use chatgate::corpus::{load_corpus, load_text_lines, save_corpus, synth_corpus, Format, SynthSpec};
use chatgate::embeddings::{save_table, train_skipgram, SkipGramConfig};
use chatgate::eval::{run_experiment, stratified_subsample, validate_experiment, ExperimentConfig, LmSource, Report, ResourcePaths, Resources};
use chatgate::lm::{lm_score, train_gru_lm, train_ngram_lm, GruTrainConfig, LanguageModel};
use chatgate::meta::ArtifactMeta;
use chatgate::par;

#[derive(Parser)]
#[command(name = "chatgate", version, about = "Chat vs NonChat utterance detection")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Suppress progress output on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus with seven noisy votes per utterance.
    Synth(SynthArgs),
    /// Train skip-gram word embeddings on a plain-text corpus.
    TrainEmbeddings(EmbeddingArgs),
    /// Train a character language model.
    TrainLm(TrainLmArgs),
    /// Print the per-character log-probability of a text under a model.
    ScoreLm(ScoreLmArgs),
    /// Train one classifier on a labeled corpus.
    Train(TrainArgs),
    /// Run a cross-validation experiment described by a JSON config.
    Evaluate(EvaluateArgs),
    /// Render a saved evaluation report.
    Report(ReportArgs),
}

#[derive(Args)]
struct Seed {
    #[arg(long, env = "CHATGATE_SEED", default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n_chat: usize,
    #[arg(long)]
    n_nonchat: usize,
    /// Per-worker probability of voting against the true label.
    #[arg(long, default_value_t = 0.1)]
    vote_noise: f64,
    /// Fraction of utterances drawn from a mixed source.
    #[arg(long, default_value_t = 0.0)]
    ambiguity: f64,
    /// Vote noise for the ambiguous utterances.
    #[arg(long, default_value_t = 0.35)]
    ambiguous_noise: f64,
    #[command(flatten)]
    seed: Seed,
    #[arg(short, long)]
    output: PathBuf,
    /// Output format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Args)]
struct EmbeddingArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 300)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    min_count: u32,
    /// Shards trained independently per epoch; 1 = plain SGD.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Clone, Copy, ValueEnum)]
enum LmKind {
    Gru,
    Ngram,
}

#[derive(Args)]
struct TrainLmArgs {
    #[arg(long, value_enum)]
    kind: LmKind,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// n-gram order.
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long, default_value_t = 256)]
    embed_dim: usize,
    #[arg(long, default_value_t = 256)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    /// Characters rarer than this map to UNK.
    #[arg(long, default_value_t = 2)]
    min_char_count: u32,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct ScoreLmArgs {
    #[arg(short, long)]
    model: PathBuf,
    #[arg(short, long)]
    text: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClfKind {
    Svm,
    Cnn,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    clf: ClfKind,
    #[arg(long)]
    corpus: PathBuf,
    /// Embedding table; required for the CNN, adds averaged embeddings to the SVM.
    #[arg(long)]
    emb: Option<PathBuf>,
    #[arg(long, requires_all = ["query_lm", "queries"])]
    tweet_lm: Option<PathBuf>,
    /// n-gram model interpolated with --tweet-lm (a GRU model).
    #[arg(long, requires = "tweet_lm")]
    tweet_ngram: Option<PathBuf>,
    #[arg(long, requires_all = ["tweet_lm", "queries"])]
    query_lm: Option<PathBuf>,
    #[arg(long, requires = "query_lm")]
    query_ngram: Option<PathBuf>,
    /// Weight of the GRU score when an n-gram model is interpolated.
    #[arg(long, default_value_t = 0.5)]
    lm_weight: f64,
    #[arg(long, requires_all = ["tweet_lm", "query_lm"])]
    queries: Option<PathBuf>,
    /// JSON file with training options (grids, feature config, optimizer settings).
    #[arg(long)]
    options: Option<PathBuf>,
    /// Share of the corpus held out (stratified) for grid selection.
    #[arg(long, default_value_t = 0.1)]
    dev_fraction: f64,
    #[command(flatten)]
    seed: Seed,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Corpus to use instead of the one named in the config.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Validate inputs and exit without training.
    #[arg(long)]
    dry_run: bool,
    /// JSON report path; the text table and learning-curve TSV are written next to it.
    #[arg(short, long, default_value = "report.json")]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Print the learning curve as TSV instead of the tables.
    #[arg(long)]
    tsv: bool,
}

/// An argument problem found after parsing.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn progress(quiet: bool, msg: impl fmt::Display) {
    if !quiet {
        eprintln!("{msg}");
    }
}

fn synth(a: &SynthArgs, quiet: bool) -> Result<()> {
    let spec = SynthSpec::new(a.n_chat, a.n_nonchat, a.vote_noise, a.seed.seed).with_ambiguity(a.ambiguity, a.ambiguous_noise);
    let mut corpus = synth_corpus(&spec)?;
    corpus.meta = Some(ArtifactMeta::new(
        &json!({
            "command": "synth",
            "n_chat": a.n_chat,
            "n_nonchat": a.n_nonchat,
            "vote_noise": a.vote_noise,
            "ambiguity": a.ambiguity,
            "ambiguous_noise": a.ambiguous_noise,
        }),
        a.seed.seed,
    ));
    let format = a.format.unwrap_or_else(|| Format::from_path(&a.output));
    save_corpus(&corpus, &a.output, format).with_context(|| format!("writing {}", a.output.display()))?;
    progress(
        quiet,
        format_args!("wrote {} utterances ({} Chat) to {}", corpus.len(), corpus.n_chat(), a.output.display()),
    );
    Ok(())
}

fn train_embeddings(a: &EmbeddingArgs, quiet: bool) -> Result<()> {
    let lines = load_text_lines(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let config = SkipGramConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        epochs: a.epochs,
        lr: a.lr,
        min_count: a.min_count,
        seed: a.seed.seed,
        workers: a.workers,
        ..SkipGramConfig::default()
    };
    let (table, report) = train_skipgram(&lines, &config)?;
    save_table(&table, &a.output, Some(&ArtifactMeta::new(&config, config.seed)))?;
    progress(
        quiet,
        format_args!("{} words, dim {}, final-epoch loss {:.4}", table.len(), table.dim(), report.final_loss()),
    );
    Ok(())
}

fn train_lm(a: &TrainLmArgs, quiet: bool) -> Result<()> {
    let lines = load_text_lines(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let seed = a.seed.seed;
    let (model, meta) = match a.kind {
        LmKind::Gru => {
            let config = GruTrainConfig {
                embed_dim: a.embed_dim,
                hidden_dim: a.hidden_dim,
                epochs: a.epochs,
                lr: a.lr,
                batch: a.batch,
                clip: a.clip,
                seed,
                min_char_count: a.min_char_count,
                ..GruTrainConfig::default()
            };
            let (lm, log) = train_gru_lm(&lines, &config)?;
            for (epoch, (tr, ho)) in log.train_perplexity.iter().zip(&log.held_out_perplexity).enumerate() {
                progress(quiet, format_args!("epoch {epoch}: train ppl {tr:.4}, held-out ppl {ho:.4}"));
            }
            (LanguageModel::Gru(lm), ArtifactMeta::new(&config, seed))
        }
        LmKind::Ngram => {
            let lm = train_ngram_lm(&lines, a.order, None, a.min_char_count)?;
            let config = json!({"kind": "ngram", "order": a.order, "min_char_count": a.min_char_count});
            (LanguageModel::Ngram(lm), ArtifactMeta::new(&config, seed))
        }
    };
    model.save(&a.output, Some(meta))?;
    progress(quiet, format_args!("wrote {} model to {}", model.kind(), a.output.display()));
    Ok(())
}

fn score_lm(a: &ScoreLmArgs) -> Result<()> {
    let model = LanguageModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    println!("{:.6}", lm_score(&a.text, &model)?);
    Ok(())
}

fn lm_source(main: &Path, ngram: Option<&PathBuf>, weight: f64) -> LmSource {
    match ngram {
        Some(n) => LmSource::Combined {
            gru: main.to_path_buf(),
            ngram: n.clone(),
            weight,
        },
        None => LmSource::Single(main.to_path_buf()),
    }
}

fn train(a: &TrainArgs, quiet: bool) -> Result<()> {
    let kind = match a.clf {
        ClfKind::Svm => ClassifierKind::Svm,
        ClfKind::Cnn => ClassifierKind::Cnn,
    };
    if kind == ClassifierKind::Cnn && a.emb.is_none() {
        return Err(usage("--clf cnn needs --emb"));
    }
    if !(a.dev_fraction > 0.0 && a.dev_fraction < 1.0) {
        return Err(usage(format!("--dev-fraction must lie in (0, 1), got {}", a.dev_fraction)));
    }
    let mut opts = match &a.options {
        Some(p) => serde_json::from_str::<TrainOptions>(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainOptions::default(),
    };
    opts.svm.seed = a.seed.seed;
    opts.cnn.seed = a.seed.seed;

    let paths = ResourcePaths {
        corpus: None,
        embeddings: a.emb.clone(),
        tweet_lm: a.tweet_lm.as_deref().map(|p| lm_source(p, a.tweet_ngram.as_ref(), a.lm_weight)),
        query_lm: a.query_lm.as_deref().map(|p| lm_source(p, a.query_ngram.as_ref(), a.lm_weight)),
        queries: a.queries.clone(),
    };
    let resources = Resources::load(&paths, Path::new(""))?;
    if let Some(table) = &resources.embeddings {
        opts.features.embedding_dim = table.dim();
    }
    let spec = ClassifierSpec {
        kind,
        embeddings: a.emb.is_some(),
        externals: resources.externals.is_some(),
    };

    let corpus = load_corpus(&a.corpus, Format::from_path(&a.corpus)).with_context(|| format!("reading {}", a.corpus.display()))?;
    let labels = corpus.labels();
    let all: Vec<usize> = (0..corpus.len()).collect();
    let train_idx = stratified_subsample(&all, &labels, 1.0 - a.dev_fraction, a.seed.seed)?;
    let mut in_train = vec![false; corpus.len()];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let dev_idx: Vec<usize> = all.iter().copied().filter(|&i| !in_train[i]).collect();
    if dev_idx.is_empty() {
        return Err(usage("corpus too small to hold out a dev split"));
    }

    let externals: Vec<_> = match &resources.externals {
        Some(ext) => par::map(corpus.utterances(), |u| ext.features(&u.text))
            .into_iter()
            .collect::<chatgate::Result<_>>()?,
        None => vec![Default::default(); corpus.len()],
    };
    let examples = |idx: &[usize]| -> Vec<Example<'_>> {
        idx.iter()
            .map(|&i| {
                let u = &corpus.utterances()[i];
                Example {
                    text: &u.text,
                    external: externals[i],
                    label: u.label,
                }
            })
            .collect()
    };
    progress(
        quiet,
        format_args!("training {} on {} utterances, {} held out", spec.name(), train_idx.len(), dev_idx.len()),
    );
    let fitted = fit_classifier(spec, &examples(&train_idx), &examples(&dev_idx), resources.embeddings.as_ref(), &opts)?;
    let meta = ArtifactMeta::new(
        &json!({
            "command": "train",
            "classifier": spec,
            "options": opts,
            "dev_fraction": a.dev_fraction,
            "corpus_meta": corpus.meta,
        }),
        a.seed.seed,
    );
    fitted.classifier.save(&a.output, Some(meta))?;
    progress(
        quiet,
        format_args!("selected {} (dev F1 {:.2}), wrote {}", fitted.selected, fitted.dev_f1, a.output.display()),
    );
    Ok(())
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn evaluate(a: &EvaluateArgs, quiet: bool) -> Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let config = ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    let base = a.config.parent().unwrap_or(Path::new("")).to_path_buf();
    let corpus_path = match (&a.corpus, &config.resources.corpus) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => base.join(p),
        (None, None) => return Err(usage("no corpus: set resources.corpus in the config or pass --corpus")),
    };
    let corpus = load_corpus(&corpus_path, Format::from_path(&corpus_path)).with_context(|| format!("reading {}", corpus_path.display()))?;
    let resources = Resources::load(&config.resources, &base)?;
    validate_experiment(&corpus, &resources, &config)?;
    if a.dry_run {
        println!(
            "ok: {} utterances, {}-fold, {} method(s){}",
            corpus.len(),
            config.k,
            config.methods.len(),
            if config.learning_curve.is_some() { ", learning curve" } else { "" }
        );
        return Ok(());
    }
    progress(
        quiet,
        format_args!("evaluating {} method(s) on {} utterances, {}-fold", config.methods.len(), corpus.len(), config.k),
    );
    let report = run_experiment(&corpus, &resources, &config)?;
    fs::write(&a.output, report.to_json()?).with_context(|| format!("writing {}", a.output.display()))?;
    let table = report.to_text();
    fs::write(sibling(&a.output, "txt"), &table)?;
    if let Some(lc) = &report.learning_curve {
        fs::write(sibling(&a.output, "curve.tsv"), lc.to_tsv())?;
    }
    print!("{table}");
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report = Report::from_json(&text).with_context(|| format!("parsing {}", a.input.display()))?;
    if a.tsv {
        match &report.learning_curve {
            Some(lc) => print!("{}", lc.to_tsv()),
            None => return Err(usage("report has no learning curve")),
        }
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        par::init_threads(jobs);
    }
    match &cli.command {
        Command::Synth(a) => synth(a, cli.quiet),
        Command::TrainEmbeddings(a) => train_embeddings(a, cli.quiet),
        Command::TrainLm(a) => train_lm(a, cli.quiet),
        Command::ScoreLm(a) => score_lm(a),
        Command::Train(a) => train(a, cli.quiet),
        Command::Evaluate(a) => evaluate(a, cli.quiet),
        Command::Report(a) => report(a),
    }
}

/// 1 usage, 2 data, 3 numeric divergence.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<chatgate::Error>() {
        Some(e) if e.is_divergence() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
