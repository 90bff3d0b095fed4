//! Command-line front end. Every command resolves and validates its full
//! configuration and inputs before it touches the output directory.

mod config;
mod output;

pub use config::{parse_override, PipelineConfig};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use toml::Value;

use crate::corpus::{
    self, fixtures, load_checkpoint, load_corpus, load_labeled_dataset, load_unlabeled_tsv, save_checkpoint,
    Checkpoint, SplitTag, TaskSchema,
};
use crate::error::{Error, Result};
use crate::evalx::{compare, EvaluationReport, Precision};
use crate::langid::{filter_corpus, load_langid_docs, train_langid, LangIdModel};
use crate::tokenize::{train_tokenizer, TokenizerModel};
use crate::train::{adapt_mlm, evaluate_checkpoint, finetune, predict_labels};
use config::{existing, path_value, required};
use output::{log, OutputDir};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
/// `compare --expect-winner` named a system that did not win.
pub const EXIT_WINNER_MISMATCH: i32 = 3;

const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Parser, Debug)]
#[command(name = "hopespeech", version, about = "Hope speech classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set adapt.epochs=3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Master seed (same as `--set seed=N`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a byte-level BPE vocabulary from a corpus.
    TokenizerTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Train or apply the character n-gram language identifier.
    Langid {
        #[command(subcommand)]
        command: LangidCommand,
    },
    /// Build a randomly initialized baseline checkpoint.
    Init {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tokenizer: Option<PathBuf>,
    },
    /// Continue masked-language-model training on an in-domain corpus.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// `baseline`, `adapted`, or a checkpoint directory.
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Fine-tune a classification head and encoder on a labeled task.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        task: Task,
        /// `baseline`, `adapted`, or a checkpoint directory.
        #[arg(long)]
        from: String,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// Score a fine-tuned checkpoint on a labeled dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Digits::Four)]
        precision: Digits,
    },
    /// Label an `id<TAB>text` file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Tabulate evaluation reports and flag the macro-F1 winner.
    Compare {
        /// `NAME=report.json` or a report path (named by its file stem).
        #[arg(required = true, num_args = 2..)]
        reports: Vec<String>,
        /// Exit with status 3 unless this system wins.
        #[arg(long)]
        expect_winner: Option<String>,
        #[arg(long, value_enum, default_value_t = Digits::Four)]
        precision: Digits,
        /// Print TSV instead of an aligned table.
        #[arg(long)]
        tsv: bool,
    },
    /// Write synthetic demo datasets.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Documents in the unlabeled corpus.
        #[arg(long, default_value_t = 400)]
        corpus_docs: usize,
        /// Examples per class in the small train/dev/test sets.
        #[arg(long, default_value_t = 24)]
        per_class: usize,
    },
}

#[derive(Subcommand, Debug)]
enum LangidCommand {
    /// Train from a `lang<TAB>text` file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Keep corpus documents identified as the target language.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Task {
    Coarse,
    Fine,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Digits {
    Four,
    Two,
}

impl From<Digits> for Precision {
    fn from(d: Digits) -> Self {
        match d {
            Digits::Four => Precision::Four,
            Digits::Two => Precision::Two,
        }
    }
}

/// Parses `args` (including the program name), runs the command, and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let code = if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
            log("error", "failed", json!({ "message": e.to_string(), "exit_code": code }));
            code
        }
    }
}

struct Flags(Vec<(String, Value)>);

impl Flags {
    fn new() -> Self {
        Flags(Vec::new())
    }

    fn path(mut self, key: &str, v: &Option<PathBuf>) -> Self {
        if let Some(p) = v {
            self.0.push((key.into(), path_value(p)));
        }
        self
    }

    fn value(mut self, key: &str, v: Option<Value>) -> Self {
        if let Some(v) = v {
            self.0.push((key.into(), v));
        }
        self
    }
}

/// flag > `--set` > file > default.
fn resolve(common: &Common, flags: Flags) -> Result<PipelineConfig> {
    let mut overrides = common
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), Value::Integer(seed as i64)));
    }
    if let Some(out) = &common.out {
        overrides.push(("paths.output".into(), path_value(out)));
    }
    overrides.extend(flags.0);
    PipelineConfig::resolve(common.config.as_deref(), &overrides)
}

fn output_dir(cfg: &PipelineConfig) -> Result<&Path> {
    required(&cfg.paths.output, "output")
}

/// Resolves `baseline` / `adapted` through the config, anything else as a
/// directory path.
fn checkpoint_source(cfg: &PipelineConfig, from: &str) -> Result<PathBuf> {
    match from {
        "baseline" => required(&cfg.paths.baseline, "baseline").map(Path::to_path_buf),
        "adapted" => required(&cfg.paths.adapted, "adapted").map(Path::to_path_buf),
        other => Ok(PathBuf::from(other)),
    }
}

fn max_len_for(ckpt: &Checkpoint, cfg: &PipelineConfig) -> Result<usize> {
    match ckpt.manifest.get("max_len") {
        Some(v) => v
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("checkpoint manifest max_len {v:?} is not an integer"))),
        None => Ok(cfg.tokenizer.max_len),
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::TokenizerTrain {
            common,
            corpus,
            vocab_size,
        } => {
            let cfg = resolve(
                &common,
                Flags::new()
                    .path("paths.corpus", &corpus)
                    .value("tokenizer.vocab_size", vocab_size.map(|v| Value::Integer(v as i64))),
            )?;
            let out = output_dir(&cfg)?;
            let docs = load_corpus(existing(&cfg.paths.corpus, "corpus")?)?;
            let dir = OutputDir::acquire(out)?;
            let tok = train_tokenizer(&docs, cfg.tokenizer.vocab_size)?;
            log(
                "info",
                "tokenizer_trained",
                json!({ "vocab_size": tok.vocab_size(), "merges": tok.merges().len(), "docs": docs.len() }),
            );
            dir.write("tokenizer.json", tok.to_json()?.as_bytes())?;
            dir.finish(&cfg)?;
        }
        Command::Langid { command } => langid(command)?,
        Command::Init { common, tokenizer } => {
            let cfg = resolve(&common, Flags::new().path("paths.tokenizer", &tokenizer))?;
            let out = output_dir(&cfg)?;
            let seed = cfg.seed()?;
            let tok = TokenizerModel::load(existing(&cfg.paths.tokenizer, "tokenizer")?)?;
            let model = cfg.model.to_model_config(tok.vocab_size())?;
            let dir = OutputDir::acquire(out)?;
            let ckpt = Checkpoint::init(tok, &model, seed)?;
            log(
                "info",
                "initialized",
                json!({ "parameters": ckpt.encoder.n_params(), "seed": seed }),
            );
            save_checkpoint(&ckpt, &dir.path().join(CHECKPOINT_DIR))?;
            dir.finish(&cfg)?;
        }
        Command::Adapt { common, from, corpus } => {
            let cfg = resolve(&common, Flags::new().path("paths.corpus", &corpus))?;
            let out = output_dir(&cfg)?;
            let plan = cfg.adapt_plan()?;
            let src = checkpoint_source(&cfg, from.as_deref().unwrap_or("baseline"))?;
            let ckpt = load_checkpoint(&src)?;
            let docs = load_corpus(existing(&cfg.paths.corpus, "corpus")?)?;
            let dir = OutputDir::acquire(out)?;
            let (adapted, epochs) = adapt_mlm(&ckpt, &docs, &plan)?;
            let mut lines = String::new();
            for e in &epochs {
                log("info", "epoch", serde_json::to_value(e)?);
                lines.push_str(&e.to_json_line());
                lines.push('\n');
            }
            save_checkpoint(&adapted, &dir.path().join(CHECKPOINT_DIR))?;
            dir.write("adapt_log.jsonl", lines.as_bytes())?;
            dir.finish(&cfg)?;
        }
        Command::Finetune {
            common,
            task,
            from,
            train,
            dev,
        } => {
            let cfg = resolve(&common, Flags::new().path("paths.train", &train).path("paths.dev", &dev))?;
            let out = output_dir(&cfg)?;
            let plan = cfg.finetune_plan()?;
            let schema = match task {
                Task::Coarse => TaskSchema::coarse(),
                Task::Fine => TaskSchema::fine(),
            };
            let ckpt = load_checkpoint(&checkpoint_source(&cfg, &from)?)?;
            let train = load_labeled_dataset(existing(&cfg.paths.train, "train")?, &schema, SplitTag::Train)?;
            let dev = load_labeled_dataset(existing(&cfg.paths.dev, "dev")?, &schema, SplitTag::Dev)?;
            let dir = OutputDir::acquire(out)?;
            log(
                "info",
                "finetune_start",
                json!({ "task": schema.name, "from_stage": ckpt.manifest.stage.as_str(), "train": train.len(), "dev": dev.len() }),
            );
            let outcome = finetune(&ckpt, &train, &dev, &plan)?;
            let mut log_lines = String::new();
            for e in &outcome.log {
                log("info", "epoch", serde_json::to_value(e)?);
                log_lines.push_str(&e.to_json_line());
                log_lines.push('\n');
            }
            let mut report_lines = String::new();
            for r in &outcome.reports {
                report_lines.push_str(&serde_json::to_string(r)?);
                report_lines.push('\n');
            }
            let best = &outcome.reports[outcome.best_epoch - 1];
            save_checkpoint(&outcome.checkpoint, &dir.path().join(CHECKPOINT_DIR))?;
            dir.write("finetune_log.jsonl", log_lines.as_bytes())?;
            dir.write("dev_reports.jsonl", report_lines.as_bytes())?;
            dir.write("dev_report.json", best.to_json()?.as_bytes())?;
            dir.finish(&cfg)?;
        }
        Command::Evaluate {
            common,
            checkpoint,
            data,
            precision,
        } => {
            let cfg = resolve(
                &common,
                Flags::new().path("paths.checkpoint", &checkpoint).path("paths.data", &data),
            )?;
            let ckpt = load_checkpoint(existing(&cfg.paths.checkpoint, "checkpoint")?)?;
            let schema = ckpt
                .head
                .as_ref()
                .map(|h| h.schema.clone())
                .ok_or_else(|| Error::InvalidArgument("paths.checkpoint: checkpoint has no classification head".into()))?;
            let ds = load_labeled_dataset(existing(&cfg.paths.data, "data")?, &schema, SplitTag::Test)?;
            let max_len = max_len_for(&ckpt, &cfg)?;
            let dir = cfg.paths.output.as_deref().map(OutputDir::acquire).transpose()?;
            let report = evaluate_checkpoint(&ckpt, &ds, max_len)?;
            let rendered = report.render(precision.into());
            print!("{rendered}");
            if let Some(dir) = dir {
                dir.write("report.json", report.to_json()?.as_bytes())?;
                dir.write("report.txt", rendered.as_bytes())?;
                dir.finish(&cfg)?;
            }
        }
        Command::Predict {
            common,
            checkpoint,
            input,
        } => {
            let cfg = resolve(
                &common,
                Flags::new().path("paths.checkpoint", &checkpoint).path("paths.input", &input),
            )?;
            let out = output_dir(&cfg)?;
            let ckpt = load_checkpoint(existing(&cfg.paths.checkpoint, "checkpoint")?)?;
            if ckpt.head.is_none() {
                return Err(Error::InvalidArgument(
                    "paths.checkpoint: checkpoint has no classification head".into(),
                ));
            }
            let docs = load_unlabeled_tsv(existing(&cfg.paths.input, "input")?)?;
            let max_len = max_len_for(&ckpt, &cfg)?;
            let dir = OutputDir::acquire(out)?;
            let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
            let labels = predict_labels(&ckpt, &texts, max_len)?;
            let mut tsv = String::from("id\tlabel\n");
            for (d, l) in docs.iter().zip(&labels) {
                tsv.push_str(&d.id);
                tsv.push('\t');
                tsv.push_str(l);
                tsv.push('\n');
            }
            log("info", "predicted", json!({ "rows": docs.len() }));
            dir.write("predictions.tsv", tsv.as_bytes())?;
            dir.finish(&cfg)?;
        }
        Command::Compare {
            reports,
            expect_winner,
            precision,
            tsv,
        } => {
            let mut systems = Vec::with_capacity(reports.len());
            for spec in &reports {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(spec);
                        let stem = p
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| spec.clone());
                        (stem, p)
                    }
                };
                let report = EvaluationReport::from_json(&corpus::read_utf8(&path)?)?;
                systems.push((name, report));
            }
            let table = compare(&systems)?;
            let p = precision.into();
            print!("{}", if tsv { table.render_tsv(p) } else { table.render_text(p) });
            println!("winner: {}", table.winner_name());
            if let Some(expected) = expect_winner {
                if expected != table.winner_name() {
                    log(
                        "warn",
                        "winner_mismatch",
                        json!({ "expected": expected, "winner": table.winner_name() }),
                    );
                    return Ok(EXIT_WINNER_MISMATCH);
                }
            }
        }
        Command::Fixtures {
            out,
            seed,
            corpus_docs,
            per_class,
        } => write_fixtures(&out, seed, corpus_docs, per_class)?,
    }
    Ok(EXIT_OK)
}

fn langid(command: LangidCommand) -> Result<()> {
    match command {
        LangidCommand::Train { common, data } => {
            let cfg = resolve(&common, Flags::new().path("paths.langid_data", &data))?;
            let out = output_dir(&cfg)?;
            let docs = load_langid_docs(existing(&cfg.paths.langid_data, "langid_data")?)?;
            let dir = OutputDir::acquire(out)?;
            let model = train_langid(&docs, cfg.langid.n_max, cfg.langid.alpha)?;
            log(
                "info",
                "langid_trained",
                json!({ "languages": model.languages, "docs": docs.len() }),
            );
            dir.write("langid.json", model.to_json()?.as_bytes())?;
            dir.finish(&cfg)
        }
        LangidCommand::Filter {
            common,
            model,
            corpus,
            target,
            threshold,
        } => {
            let cfg = resolve(
                &common,
                Flags::new()
                    .path("paths.langid_model", &model)
                    .path("paths.corpus", &corpus)
                    .value("langid.target", target.map(Value::String))
                    .value("langid.threshold", threshold.map(Value::Float)),
            )?;
            let out = output_dir(&cfg)?;
            let target = cfg
                .langid
                .target
                .clone()
                .ok_or_else(|| Error::InvalidArgument("langid.target: required".into()))?;
            let model = LangIdModel::load(existing(&cfg.paths.langid_model, "langid_model")?)?;
            let docs = load_corpus(existing(&cfg.paths.corpus, "corpus")?)?;
            let dir = OutputDir::acquire(out)?;
            let (kept, report) = filter_corpus(&model, &docs, &target, cfg.langid.threshold)?;
            log("info", "filtered", serde_json::to_value(&report)?);
            dir.write("filtered.txt", kept.to_text()?.as_bytes())?;
            dir.write("filter_report.json", format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes())?;
            dir.finish(&cfg)
        }
    }
}

fn write_fixtures(out: &Path, seed: u64, corpus_docs: usize, per_class: usize) -> Result<()> {
    let dir = OutputDir::acquire(out)?;
    for schema in [TaskSchema::coarse(), TaskSchema::fine()] {
        for (split, offset) in [(SplitTag::Train, 0), (SplitTag::Dev, 1), (SplitTag::Test, 2)] {
            let ds = fixtures::balanced(&schema, per_class, split, seed.wrapping_add(offset))?;
            dir.write(&format!("{}_{split}.tsv", schema.name), ds.to_tsv()?.as_bytes())?;
        }
    }
    dir.write("coarse_full_train.tsv", fixtures::coarse_train(seed)?.to_tsv()?.as_bytes())?;
    dir.write("fine_full_train.tsv", fixtures::fine_train(seed)?.to_tsv()?.as_bytes())?;

    let mut corpus = fixtures::unlabeled_corpus(corpus_docs, seed);
    let lid = fixtures::two_language_docs(corpus_docs / 4 + 1, seed.wrapping_add(7));
    corpus.docs.extend(
        lid.iter()
            .filter(|(_, l)| l == fixtures::KANNADA_LANG)
            .map(|(t, _)| corpus::Document {
                id: String::new(),
                text: t.clone(),
            }),
    );
    dir.write("corpus.txt", corpus.to_text()?.as_bytes())?;

    let mut lid_tsv = String::from("lang\ttext\n");
    let mut lat = fixtures::unlabeled_corpus(200, seed.wrapping_add(11));
    lat.docs.truncate(200);
    for d in &lat.docs {
        lid_tsv.push_str(&format!("{}\t{}\n", fixtures::LATIN_LANG, d.text));
    }
    for (t, l) in fixtures::two_language_docs(200, seed.wrapping_add(13)) {
        if l == fixtures::KANNADA_LANG {
            lid_tsv.push_str(&format!("{l}\t{t}\n"));
        }
    }
    dir.write("langid.tsv", lid_tsv.as_bytes())?;

    let test = fixtures::balanced(&TaskSchema::coarse(), per_class, SplitTag::Test, seed.wrapping_add(2))?;
    let mut input = String::from("id\ttext\n");
    for ex in &test.examples {
        input.push_str(&format!("{}\t{}\n", ex.id, ex.text));
    }
    dir.write("predict_input.tsv", input.as_bytes())?;
    dir.commit();
    Ok(())
}
