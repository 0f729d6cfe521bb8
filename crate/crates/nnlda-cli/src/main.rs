//! Command-line front end: corpus synthesis, training (single K or a
//! sweep), evaluation tasks, and top-word inspection. Log verbosity comes
//! from the RUST_LOG environment variable.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nnlda::corpus::{
    generate_synthetic, ingest_csv_bound, Corpus, CsvColumns, SyntheticConfig,
};
use nnlda::evaluation::{
    classify_ratings, elbo_ratio_report, generate_comment, grouping_metrics, log_perplexity,
    write_metrics_csv, EvalReport, MetricRow,
};
use nnlda::inference::{load_model, save_model, train, PriorKind, TopicModel, TrainConfig};

#[derive(Parser)]
#[command(
    name = "nnlda",
    version,
    about = "Topic models with document-specific priors driven by side information"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic review corpus as CSV.
    Synth(SynthArgs),
    /// Train a model (or a K-sweep of models) from a CSV corpus.
    Train(TrainArgs),
    /// Evaluate trained models.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Print the highest-probability words of each topic.
    Topwords(TopwordsArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of documents to generate.
    #[arg(long)]
    docs: usize,
    /// RNG seed (required: every run is reproducible by construction).
    #[arg(long)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Shortest document length in words.
    #[arg(long, default_value_t = 1)]
    min_len: u32,
    /// Longest document length in words.
    #[arg(long, default_value_t = 5)]
    max_len: u32,
}

#[derive(Args)]
struct TrainArgs {
    /// Prior family: lda, lda-opt, dmr, or nnlda.
    #[arg(long)]
    model: String,
    /// Topic count, either a single K ("4") or an inclusive sweep ("4..30").
    #[arg(long)]
    topics: String,
    /// Training corpus CSV.
    #[arg(long)]
    corpus: PathBuf,
    /// Column holding the document text.
    #[arg(long, default_value = "text")]
    text_col: String,
    /// Comma-separated categorical side columns (required for dmr/nnlda).
    #[arg(long, value_delimiter = ',')]
    side_cols: Vec<String>,
    /// Column holding a class label to carry through (used by eval classify).
    #[arg(long)]
    label_col: Option<String>,
    /// Column holding a group annotation to carry through (used by eval grouping).
    #[arg(long)]
    group_col: Option<String>,
    /// RNG seed (required: every run is reproducible by construction).
    #[arg(long)]
    seed: u64,
    /// Output model path; sweeps write one file per K next to it.
    #[arg(long)]
    out: PathBuf,
    /// Relative ELBO change below which training stops.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Maximum EM rounds.
    #[arg(long, default_value_t = 200)]
    max_rounds: u32,
    /// Hidden width of the nnlda prior network.
    #[arg(long, default_value_t = 20)]
    hidden_dim: usize,
    /// Minibatch size for the nnlda prior updates.
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Per-token negative variational bound on a held-out corpus (lower is
    /// better).
    Perplexity(PerplexityArgs),
    /// Match topics to annotated groups and score the agreement.
    Grouping(GroupingArgs),
    /// Cross-validated label prediction from inferred topic mixtures.
    Classify(ClassifyArgs),
    /// Generate the most likely words for a side-information setting.
    Gencomment(GencommentArgs),
    /// Compare two models' per-word bounds on the same corpus.
    Compare(CompareArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus CSV; must use the model's vocabulary and side columns.
    #[arg(long)]
    corpus: PathBuf,
    /// Column holding the document text.
    #[arg(long, default_value = "text")]
    text_col: String,
}

#[derive(Args)]
struct PerplexityArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Append metric rows to this CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GroupingArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Column holding the ground-truth group of each document.
    #[arg(long, default_value = "group")]
    group_col: String,
    /// Append metric rows to this CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Trained model file, reused as the per-fold training recipe.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Column holding the label to predict.
    #[arg(long, default_value = "label")]
    label_col: String,
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Seed for the fold shuffle and per-fold retraining; defaults to the
    /// model's training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Append metric rows to this CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GencommentArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Side configuration as comma-separated feature=value pairs, e.g.
    /// "product=TV,description=price".
    #[arg(long, value_delimiter = ',')]
    side: Vec<String>,
    /// How many words to generate.
    #[arg(long, default_value_t = 5)]
    len: usize,
    /// Write the generated words to this CSV (position,term).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// First model file (the sign convention favors this one).
    #[arg(long)]
    a: PathBuf,
    /// Second model file.
    #[arg(long)]
    b: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Append metric rows to this CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TopwordsArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Words per topic.
    #[arg(long, default_value_t = 5)]
    n: usize,
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(cmd) => cmd_eval(cmd),
        Command::Topwords(args) => cmd_topwords(args),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut config = SyntheticConfig::with_default_bags(args.docs, args.seed);
    config.min_len = args.min_len;
    config.max_len = args.max_len;
    let corpus = generate_synthetic(&config)?;
    ensure_parent(&args.out)?;
    nnlda::corpus::write_csv(&corpus, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {}: {} documents, mean length {:.2}, vocabulary size {}",
        args.out.display(),
        corpus.num_docs(),
        corpus.total_tokens() as f64 / corpus.num_docs() as f64,
        corpus.vocab_size()
    );
    Ok(())
}

/// "4" -> [4]; "4..30" -> 4..=30.
fn parse_topics(spec: &str) -> Result<Vec<usize>> {
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: usize = lo.trim().parse().context("sweep start is not a number")?;
        let hi: usize = hi.trim().parse().context("sweep end is not a number")?;
        if lo > hi {
            bail!("topic sweep {spec:?} is empty (start exceeds end)");
        }
        Ok((lo..=hi).collect())
    } else {
        Ok(vec![spec.trim().parse().context("topic count is not a number")?])
    }
}

fn sweep_path(out: &Path, k: usize) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string());
    let ext = out
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.k{k}{ext}"))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let kind: PriorKind = args.model.parse()?;
    if kind.is_side_conditioned() && args.side_cols.is_empty() {
        bail!("--model {kind} needs --side-cols naming the categorical columns");
    }
    let topics = parse_topics(&args.topics)?;

    let cols = CsvColumns {
        text: args.text_col.clone(),
        side: args.side_cols.clone(),
        label: args.label_col.clone(),
        group: args.group_col.clone(),
    };
    let ingested = nnlda::corpus::ingest_csv(&args.corpus, &cols)
        .with_context(|| format!("reading {}", args.corpus.display()))?;
    if ingested.skipped_rows > 0 {
        eprintln!("note: skipped {} rows with no usable tokens", ingested.skipped_rows);
    }
    let corpus = ingested.corpus;

    let mut config = TrainConfig::default();
    config.elbo_rel_tol = args.tol;
    config.max_rounds = args.max_rounds;
    config.hidden_dim = args.hidden_dim;
    config.batch_size = args.batch_size;

    let sweep = topics.len() > 1;
    let mut summary: Vec<MetricRow> = Vec::new();
    for &k in &topics {
        let model = train(&corpus, k, kind, args.seed, &config)
            .with_context(|| format!("training {kind} with {k} topics"))?;
        let path = if sweep { sweep_path(&args.out, k) } else { args.out.clone() };
        ensure_parent(&path)?;
        save_model(&model, &path).with_context(|| format!("writing {}", path.display()))?;
        let last = model.training_log.last().expect("training always logs");
        println!(
            "wrote {}: {kind}, {k} topics, stopped after round {} with bound {:.4}",
            path.display(),
            last.round,
            last.elbo
        );
        summary.push(MetricRow {
            model: kind.to_string(),
            k,
            seed: args.seed,
            metric: "final_elbo".to_string(),
            value: last.elbo,
        });
    }
    if sweep {
        let summary_path = args.out.with_file_name(format!(
            "{}_sweep.csv",
            args.out
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".to_string())
        ));
        write_metrics_csv(&summary_path, &summary)
            .with_context(|| format!("writing {}", summary_path.display()))?;
        println!("wrote {}", summary_path.display());
    }
    Ok(())
}

/// Reads an evaluation corpus bound to a model's vocabulary, deriving the
/// side columns from the model's own schema.
fn load_eval_corpus(
    model: &TopicModel,
    args: &CorpusArgs,
    label_col: Option<&str>,
    group_col: Option<&str>,
) -> Result<Corpus> {
    let cols = CsvColumns {
        text: args.text_col.clone(),
        side: model
            .side_schema
            .features
            .iter()
            .map(|f| f.name.clone())
            .collect(),
        label: label_col.map(str::to_string),
        group: group_col.map(str::to_string),
    };
    let ingested = ingest_csv_bound(&args.corpus, &cols, &model.vocabulary, &model.side_schema)
        .with_context(|| format!("reading {}", args.corpus.display()))?;
    if ingested.skipped_rows > 0 {
        eprintln!("note: skipped {} rows with no usable tokens", ingested.skipped_rows);
    }
    Ok(ingested.corpus)
}

fn load(path: &Path) -> Result<TopicModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn emit(report: &EvalReport, model: &TopicModel, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        ensure_parent(path)?;
        let rows = report.rows(model.prior_kind.as_str(), model.num_topics(), model.seed);
        write_metrics_csv(path, &rows)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Perplexity(args) => {
            let model = load(&args.model)?;
            let corpus = load_eval_corpus(&model, &args.corpus, None, None)?;
            let value = log_perplexity(&model, &corpus)?;
            println!(
                "log-perplexity of {} ({} topics) on {} documents: {value:.4} nats/token",
                model.prior_kind,
                model.num_topics(),
                corpus.num_docs()
            );
            let report = EvalReport {
                log_perplexity: Some(value),
                ..EvalReport::default()
            };
            emit(&report, &model, args.out.as_deref())
        }
        EvalCommand::Grouping(args) => {
            let model = load(&args.model)?;
            let corpus =
                load_eval_corpus(&model, &args.corpus, None, Some(&args.group_col))?;
            let grouping = grouping_metrics(&model, &corpus)?;
            println!(
                "grouping of {} ({} topics) over {} groups:",
                model.prior_kind,
                model.num_topics(),
                grouping.groups.len()
            );
            println!("  macro-precision {:.4}", grouping.macro_precision);
            println!("  macro-recall    {:.4}", grouping.macro_recall);
            println!("  macro-F1        {:.4}", grouping.macro_f1);
            println!("  micro-F1        {:.4}", grouping.micro_f1);
            let report = EvalReport {
                grouping: Some(grouping),
                ..EvalReport::default()
            };
            emit(&report, &model, args.out.as_deref())
        }
        EvalCommand::Classify(args) => {
            let model = load(&args.model)?;
            let corpus =
                load_eval_corpus(&model, &args.corpus, Some(&args.label_col), None)?;
            let seed = args.seed.unwrap_or(model.seed);
            let classification = classify_ratings(&model, &corpus, args.folds, seed)?;
            println!(
                "{}-fold classification with {} features over {} classes:",
                classification.num_folds,
                model.prior_kind,
                classification.classes.len()
            );
            for (i, f1) in classification.per_fold_macro_f1.iter().enumerate() {
                println!("  fold {i}: macro-F1 {f1:.4}");
            }
            println!("  mean macro-F1 {:.4}", classification.mean_macro_f1);
            let report = EvalReport {
                classification: Some(classification),
                ..EvalReport::default()
            };
            emit(&report, &model, args.out.as_deref())
        }
        EvalCommand::Gencomment(args) => {
            let model = load(&args.model)?;
            let side: Vec<(String, String)> = args
                .side
                .iter()
                .map(|pair| {
                    pair.split_once('=')
                        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                        .with_context(|| format!("--side entry {pair:?} is not feature=value"))
                })
                .collect::<Result<_>>()?;
            let words = generate_comment(&model, &side, args.len)?;
            println!("{}", words.join(" "));
            if let Some(path) = &args.out {
                ensure_parent(path)?;
                let mut writer = csv::Writer::from_path(path)
                    .with_context(|| format!("writing {}", path.display()))?;
                writer.write_record(["position", "term"])?;
                for (i, w) in words.iter().enumerate() {
                    writer.write_record([&(i + 1).to_string(), w])?;
                }
                writer.flush()?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        EvalCommand::Compare(args) => {
            let a = load(&args.a)?;
            let b = load(&args.b)?;
            let corpus = load_eval_corpus(&a, &args.corpus, None, None)?;
            let value = elbo_ratio_report(&a, &b, &corpus)?;
            println!(
                "per-word bound advantage of {} over {}: {value:+.6} nats",
                a.prior_kind, b.prior_kind
            );
            if let Some(path) = &args.out {
                ensure_parent(path)?;
                let rows = vec![MetricRow {
                    model: format!("{}_vs_{}", a.prior_kind, b.prior_kind),
                    k: a.num_topics(),
                    seed: a.seed,
                    metric: "elbo_ratio".to_string(),
                    value,
                }];
                write_metrics_csv(path, &rows)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn cmd_topwords(args: TopwordsArgs) -> Result<()> {
    let model = load(&args.model)?;
    for (i, words) in model.top_words(args.n).iter().enumerate() {
        let terms: Vec<&str> = words.iter().map(|(w, _)| w.as_str()).collect();
        println!("topic {i}: {}", terms.join(" "));
    }
    Ok(())
}
