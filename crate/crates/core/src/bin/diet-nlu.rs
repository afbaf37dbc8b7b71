use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use diet_nlu::corpus::{class_distribution, compute_stats, load_dataset};
use diet_nlu::error::{Error, Result};
use diet_nlu::eval::{format_score, render_error_table, shift_report, DEFAULT_OOS_LABEL};
use diet_nlu::featurizer::{parse_provider_spec, write_dense_file, write_hash_table, DenseProvider, SparseConfig};
use diet_nlu::model::ModelKind;
use diet_nlu::pipeline::TrainedModel;
use diet_nlu::synth::{generate, generate_shifted, shaped_corpus, CorpusShape, ShiftConfig, SynthConfig};
use diet_nlu::trainer::{cross_validate, train, TrainConfig};

#[derive(Parser)]
#[command(name = "diet-nlu", version, about = "Intent/entity recognition: train, cross-validate, evaluate, predict")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics and class distribution
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Train one model and write it to a file
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated stratified k-fold cross-validation
    Crossval {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model on a dataset
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print mispredicted utterances as a table
        #[arg(long)]
        errors: bool,
        /// Dense provider to use instead of the one recorded in the model
        #[arg(long)]
        dense: Option<String>,
    },
    /// Rank intents for one utterance
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        dense: Option<String>,
    },
    /// Compare two corpora: OOS share, vocabulary, lengths, vanished intents
    Shift {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = DEFAULT_OOS_LABEL)]
        oos: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus as JSONL
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        per_intent: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Produce the shifted (deployment-like) counterpart
        #[arg(long)]
        shifted: bool,
        /// Pseudo-word corpus with fixed statistics: planting-poc,
        /// planting-deployment, watering-poc or watering-deployment
        #[arg(long, conflicts_with = "shifted")]
        shape: Option<String>,
    },
    /// Write a hash-embedding token table for newline-separated keys
    ExportHash {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "model", default_value = "diet")]
    kind: String,
    /// hash:DIM:SEED, file:PATH or none
    #[arg(long, default_value = "none")]
    dense: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON training config; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<(TrainConfig, Option<DenseProvider>)> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => TrainConfig::default(),
        };
        cfg.model_kind = self.kind.parse::<ModelKind>()?;
        cfg.seed = self.seed;
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        cfg.validate()?;
        let provider = parse_provider_spec(&self.dense)?;
        if cfg.model_kind == ModelKind::TfBaseline && provider.is_none() {
            return Err(Error::Config("tf_baseline requires --dense other than none".into()));
        }
        Ok((cfg, provider))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn provider_override(spec: &Option<String>) -> Result<Option<DenseProvider>> {
    match spec {
        Some(s) => parse_provider_spec(s),
        None => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { data, json } => {
            let ds = load_dataset(&data)?;
            let stats = compute_stats(&ds)?;
            let dist = class_distribution(&ds);
            if json {
                let v = serde_json::json!({ "stats": stats, "class_distribution": dist });
                println!("{}", serde_json::to_string_pretty(&v).expect("stats serialize"));
            } else {
                println!("dataset                  {}", ds.name);
                println!("n_intents                {}", stats.n_intents);
                println!("n_samples                {}", stats.n_samples);
                println!("min/max per intent       {} / {}", stats.min_samples_per_intent, stats.max_samples_per_intent);
                println!("avg per intent           {:.1}", stats.avg_samples_per_intent);
                println!("vocab_size               {}", stats.vocab_size);
                println!("total_words              {}", stats.total_words);
                println!("min/max words per sample {} / {}", stats.min_words_per_sample, stats.max_words_per_sample);
                println!("avg words per sample     {:.2}", stats.avg_words_per_sample);
                println!();
                for (intent, n) in dist {
                    println!("{intent:<24} {n}");
                }
            }
        }
        Command::Train { data, train: args, out } => {
            let (cfg, provider) = args.resolve()?;
            let ds = load_dataset(&data)?;
            let (model, history) = train(&ds, &cfg, &SparseConfig::default(), provider.as_ref())?;
            model.save(&out)?;
            let last = history.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!("trained {} on {} utterances, {} epochs, final loss {last:.4}", cfg.model_kind, ds.len(), history.epoch_losses.len());
        }
        Command::Crossval { data, train: args, folds, runs, out } => {
            let (cfg, provider) = args.resolve()?;
            let ds = load_dataset(&data)?;
            let report = cross_validate(&ds, folds, runs, &cfg, &SparseConfig::default(), provider.as_ref())?;
            write_json(&out, &report)?;
            println!(
                "{} {}: {} ({runs} runs x {folds}-fold CV)",
                ds.name,
                cfg.model_kind,
                format_score(report.mean_micro_f1, report.std_micro_f1)
            );
        }
        Command::Eval { model, data, out, errors, dense } => {
            let m = TrainedModel::load(&model, provider_override(&dense)?)?;
            let ds = load_dataset(&data)?;
            let report = m.evaluate(&ds)?;
            write_json(&out, &report)?;
            print!("{}", report.render());
            if errors {
                println!();
                print!("{}", render_error_table(&report.errors));
            }
        }
        Command::Predict { model, text, dense } => {
            let m = TrainedModel::load(&model, provider_override(&dense)?)?;
            let p = m.predict_text(&text)?;
            let v = serde_json::json!({
                "text": text,
                "intent": p.intent(),
                "ranking": p.ranking,
                "entities": p.entities,
            });
            println!("{}", serde_json::to_string_pretty(&v).expect("prediction serializes"));
        }
        Command::Shift { a, b, oos, out } => {
            let (da, db) = (load_dataset(&a)?, load_dataset(&b)?);
            let report = shift_report(&da, &db, &oos)?;
            write_json(&out, &report)?;
            println!(
                "{}: oos {:.4}, vocab {}, avg words {:.2}",
                report.a.name, report.a.oos_share, report.a.vocab_size, report.a.avg_words
            );
            println!(
                "{}: oos {:.4}, vocab {}, avg words {:.2}",
                report.b.name, report.b.oos_share, report.b.vocab_size, report.b.avg_words
            );
            println!("only in {}: {:?}", report.a.name, report.unseen_a_to_b);
            println!("only in {}: {:?}", report.b.name, report.unseen_b_to_a);
            println!("class distribution TV distance: {:.4}", report.class_divergence);
        }
        Command::Generate { out, per_intent, seed, shifted, shape } => {
            let cfg = SynthConfig { per_intent, seed, ..SynthConfig::default() };
            let ds = match shape {
                Some(name) => {
                    let shape = CorpusShape::by_name(&name).ok_or_else(|| Error::Config(format!("unknown shape {name:?}")))?;
                    shaped_corpus(&shape, seed)?
                }
                None if shifted => generate_shifted(&cfg, &ShiftConfig::default())?,
                None => generate(&cfg)?,
            };
            ds.write_jsonl(&out)?;
            println!("wrote {} utterances to {}", ds.len(), out.display());
        }
        Command::ExportHash { keys, dim, seed, out } => {
            if dim == 0 {
                return Err(Error::Config("--dim must be positive".into()));
            }
            let text = fs::read_to_string(&keys).map_err(|e| Error::Io { path: keys.clone(), source: e })?;
            let table = write_hash_table(text.lines().filter(|l| !l.trim().is_empty()), dim, seed)?;
            write_dense_file(&table, &out)?;
            println!("{}", serde_json::to_string(&table.descriptor()).expect("descriptor serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
