//! `latfill`: corpus generation, training, evaluation, augmentation and
//! gradient verification from the command line.
//!
//! Exit codes: 0 on success, 1 when a file, config or contract check fails,
//! 2 on usage errors (reported by the argument parser).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latfill::corpus::{generate_corpus, load_corpus, save_corpus, CorpusConfig};
use latfill::eval::{compare_runs, coverage_stats, eval_encoder, secs_eval, CoverageConfig};
use latfill::latent_fill::augment_records;
use latfill::train::{train, TrainConfig};
use latfill::verify::verify_all;
use latfill::{read_records, write_records, Error, FillMode, LatentFillConfig, ModelParams, Result, Rng};

#[derive(Parser)]
#[command(
    name = "latfill",
    version,
    about = "Latent filling for a toy zero-shot speaker-conditioned generator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-speaker corpus.
    GenData {
        /// Corpus config (`key = value`); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output corpus file.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a corpus.
    Train {
        /// Training config (`key = value`); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        out_log: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Zero-shot speaker similarity of a trained model on the holdout speakers.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Seed of the evaluation encoder and of the evaluation scripts.
        #[arg(long, default_value_t = 1000)]
        eval_seed: u64,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train baseline and latent-filling systems over several seeds and compare.
    Compare {
        /// Baseline config; defaults with tau = 0 when omitted.
        #[arg(long)]
        config_base: Option<PathBuf>,
        /// Latent-filling config; defaults (tau = 0.25) when omitted.
        #[arg(long)]
        config_lf: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        #[arg(long, default_value_t = 1000)]
        eval_seed: u64,
        /// Write the per-seed table here.
        #[arg(long)]
        out_table: Option<PathBuf>,
    },
    /// Apply latent filling to an embedding-record file.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Audit file, one line per augmentation [default: <out>.audit]
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Noise-adding probability, in [0, 1].
        #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
        epsilon: f64,
        /// Beta shape parameter, > 0.
        #[arg(long, default_value_t = 0.5, value_parser = positive)]
        beta: f64,
        /// Noise standard deviation, > 0.
        #[arg(long, default_value_t = 1e-4, value_parser = positive)]
        sigma: f64,
        /// full, no_noise or no_interpolation.
        #[arg(long, default_value_t = FillMode::Full)]
        mode: FillMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of augmented records.
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Coverage statistics of latent filling over an embedding-record file.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        /// Keys: epsilon, beta, sigma, lf_mode, draws, seed. Defaults: 0.5, 0.5, 0.0001, full, 10000, 0.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and the consistency-loss graphs.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, 1], got {v}"))
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be > 0, got {v}"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_config(path: Option<&Path>) -> Result<TrainConfig> {
    path.map_or_else(|| Ok(TrainConfig::default()), TrainConfig::load)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { config, out, seed } => {
            let mut cfg = config
                .as_deref()
                .map_or_else(|| Ok(CorpusConfig::default()), CorpusConfig::load)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let corpus = generate_corpus(&cfg)?;
            save_corpus(&out, &corpus)?;
            println!(
                "wrote {} ({} train, {} holdout utterances, {} speakers)",
                out.display(),
                corpus.train.len(),
                corpus.holdout.len(),
                corpus.speakers.len()
            );
        }
        Command::Train {
            config,
            corpus,
            out_model,
            out_log,
            seed,
        } => {
            let mut cfg = train_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let corpus = load_corpus(&corpus)?;
            let out = train(&cfg, &corpus)?;
            out.model.save(&out_model)?;
            out.log.save(&out_log)?;
            println!(
                "trained {} steps, lf fraction {:.4}; wrote {} and {}",
                cfg.steps,
                out.log.lf_fraction(),
                out_model.display(),
                out_log.display()
            );
        }
        Command::Eval {
            model,
            corpus,
            eval_seed,
            out,
        } => {
            let model_path = model;
            let model = ModelParams::load(&model_path)?;
            let corpus = load_corpus(&corpus)?;
            if model.phi.seed() != corpus.config.encoder_seed {
                return Err(Error::Config(format!(
                    "{} was trained with encoder seed {}, corpus uses {}",
                    model_path.display(),
                    model.phi.seed(),
                    corpus.config.encoder_seed
                )));
            }
            let report = secs_eval(&model, &corpus, &eval_encoder(&corpus, eval_seed), eval_seed)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(p) = out {
                write_text(&p, &text)?;
            }
        }
        Command::Compare {
            config_base,
            config_lf,
            corpus,
            seeds,
            eval_seed,
            out_table,
        } => {
            let base = match config_base {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig {
                    tau: 0.0,
                    ..Default::default()
                },
            };
            let lf = train_config(config_lf.as_deref())?;
            let corpus = load_corpus(&corpus)?;
            let report = compare_runs(&base, &lf, &corpus, seeds as usize, eval_seed)?;
            print!("{}", report.to_table());
            print!("{}", report.summary());
            if let Some(p) = out_table {
                write_text(&p, &report.to_table())?;
            }
        }
        Command::Augment {
            input,
            out,
            audit,
            epsilon,
            beta,
            sigma,
            mode,
            seed,
            n,
        } => {
            let cfg = LatentFillConfig {
                epsilon,
                beta,
                sigma,
                mode,
            };
            let records = read_records(&input)?;
            let augmented = augment_records(&records, &cfg, n, &mut Rng::seed(seed))?;
            let recs: Vec<_> = augmented.iter().map(|a| a.record.clone()).collect();
            write_records(&out, &recs)?;
            let audit = audit.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".audit");
                PathBuf::from(p)
            });
            let mut text = String::from("# branch\tlambda\tsource\tpartner\n");
            for a in &augmented {
                text.push_str(&a.audit_line());
                text.push('\n');
            }
            write_text(&audit, &text)?;
            println!(
                "wrote {} records to {} and audit to {}",
                recs.len(),
                out.display(),
                audit.display()
            );
        }
        Command::Stats { input, config, out } => {
            let cfg = config
                .as_deref()
                .map_or_else(|| Ok(CoverageConfig::default()), CoverageConfig::load)?;
            let records = read_records(&input)?;
            let report = coverage_stats(&records, &cfg.lf, cfg.draws, &mut Rng::seed(cfg.seed))?;
            let text = report.to_text();
            print!("{text}");
            if let Some(p) = out {
                write_text(&p, &text)?;
            }
        }
        Command::Gradcheck { trials, seed } => {
            let report = verify_all(trials, seed)?;
            print!("{}", report.to_table());
            if !report.all_passed() {
                return Err(Error::Verification("gradient check failed; see the table above".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
