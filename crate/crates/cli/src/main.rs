//! Command-line driver for the scoring pipeline.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use utterscore::config::RunConfig;
use utterscore::corpus::{Corpus, Dimension, Protocol};
use utterscore::features::FeatureMode;
use utterscore::render::HeatmapSpec;
use utterscore::synth::SynthConfig;
use utterscore::workflow::{Outputs, Workspace};

#[derive(Debug, Parser)]
#[command(name = "utterscore", version, about = "Estimate classroom observation scores from utterance-level judgments")]
struct Cli {
    /// TOML run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (folds, mock backend). Overrides `cv.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Working directory for all artifacts. Overrides `paths.workdir`.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Overrides {
    /// Feature family: bow, llm_all, llm_dim:<dim>, concat, baseline_words,
    /// baseline_questions or baseline_both.
    #[arg(long)]
    feature_mode: Option<String>,
    /// L1 strength.
    #[arg(long)]
    lambda: Option<f64>,
    /// Constrain weights to be non-negative.
    #[arg(long)]
    non_negative: bool,
    /// prek or toddler.
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Import transcripts and labels into the workdir.
    Ingest {
        /// Manifest CSV (`session_id,teacher_id,transcript`).
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Build the whole-corpus n-gram vocabulary.
    BuildVocab {
        /// Vocabulary size.
        #[arg(long = "K")]
        k: Option<usize>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Write per-utterance and per-session feature matrices.
    Featurize {
        #[command(flatten)]
        o: Overrides,
    },
    /// Fit a model on every labeled session.
    Train {
        #[arg(long, default_value = "domain")]
        dimension: Dimension,
        #[command(flatten)]
        o: Overrides,
    },
    /// Teacher-disjoint cross-validation.
    Cv {
        /// Dimensions to evaluate (repeatable); all four by default.
        #[arg(long)]
        dimension: Vec<Dimension>,
        /// Number of folds. Overrides `cv.k`.
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Leave-one-labeler-out agreement among human labelers.
    Irr {
        #[arg(long)]
        dimension: Vec<Dimension>,
    },
    /// Predict every session with a trained model.
    Score {
        #[arg(long, default_value = "domain")]
        dimension: Dimension,
        #[command(flatten)]
        o: Overrides,
    },
    /// Per-utterance marginal scores for one session.
    Explain {
        #[arg(long)]
        session: String,
        #[arg(long, default_value_t = 4)]
        top: usize,
        #[arg(long, default_value = "domain")]
        dimension: Dimension,
        #[command(flatten)]
        o: Overrides,
    },
    /// Render temporal heatmaps (all sessions unless --session is given).
    Heatmap {
        #[arg(long)]
        session: Vec<String>,
        #[arg(long, default_value_t = 4)]
        top: usize,
        #[arg(long, default_value = "domain")]
        dimension: Dimension,
        #[command(flatten)]
        o: Overrides,
    },
    /// Generate a synthetic corpus with a planted linear signal.
    Synth {
        #[arg(long, default_value_t = 50)]
        sessions: usize,
        #[arg(long, default_value_t = 10)]
        teachers: usize,
        /// Labels ignore the planted phrases.
        #[arg(long)]
        noise: bool,
        #[arg(long, default_value = "prek")]
        protocol: Protocol,
        /// Output directory; defaults to the workdir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_against(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            if let Some(p) = cfg.paths.transcripts.as_mut() {
                resolve_against(&base, p);
            }
            if let Some(p) = cfg.paths.labels.as_mut() {
                resolve_against(&base, p);
            }
            resolve_against(&base, &mut cfg.paths.workdir);
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(w) = &cli.workdir {
        cfg.paths.workdir = w.clone();
    }
    if let Some(s) = cli.seed {
        cfg.cv.seed = s;
    }
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, o: &Overrides) {
    if let Some(m) = &o.feature_mode {
        cfg.feature_mode = m.clone();
    }
    if let Some(l) = o.lambda {
        cfg.lasso.lambda = l;
    }
    if o.non_negative {
        cfg.lasso.non_negative = true;
    }
    if let Some(p) = &o.protocol {
        cfg.protocol = p.clone();
    }
}

fn workspace(cfg: RunConfig) -> Result<Workspace> {
    let resolved = cfg.validate()?;
    let workdir = resolved.raw.paths.workdir.clone();
    let seed = resolved.raw.cv.seed;
    Ok(Workspace::new(resolved, workdir, seed))
}

fn commit(out: Outputs) -> Result<()> {
    for p in out.commit()? {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn corpus_and_mode(ws: &Workspace) -> Result<(Corpus, FeatureMode)> {
    let corpus = ws
        .load_corpus()
        .context("no ingested corpus in the workdir; run `ingest` first")?;
    Ok((corpus, ws.config.feature_mode))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest { transcripts, labels, o } => {
            apply(&mut cfg, &o);
            if transcripts.is_some() {
                cfg.paths.transcripts = transcripts;
            }
            if labels.is_some() {
                cfg.paths.labels = labels;
            }
            let ws = workspace(cfg)?;
            let (summary, out) = ws.ingest()?;
            commit(out)?;
            println!(
                "{} sessions, {} utterances, {} teachers",
                summary.sessions, summary.utterances, summary.teachers
            );
            for id in &summary.empty_sessions {
                println!("dropped {id}: no detected speech");
            }
            for id in &summary.orphan_labels {
                println!("labels for unknown session {id} ignored");
            }
        }
        Command::BuildVocab { k, o } => {
            apply(&mut cfg, &o);
            if let Some(k) = k {
                cfg.bow.k = k;
            }
            let ws = workspace(cfg)?;
            let (corpus, _) = corpus_and_mode(&ws)?;
            let (vocab, out) = ws.build_vocab(&corpus)?;
            commit(out)?;
            println!("{} n-grams (+2 pseudo-tokens)", vocab.entries().len());
        }
        Command::Featurize { o } => {
            apply(&mut cfg, &o);
            let ws = workspace(cfg)?;
            let (corpus, mode) = corpus_and_mode(&ws)?;
            let out = ws.featurize(&corpus, mode)?;
            for p in out.paths() {
                println!("{}", p.display());
            }
            commit(out)?;
        }
        Command::Train { dimension, o } => {
            apply(&mut cfg, &o);
            let ws = workspace(cfg)?;
            let (corpus, mode) = corpus_and_mode(&ws)?;
            let (model, out) = ws.train(&corpus, mode, dimension)?;
            commit(out)?;
            println!(
                "{mode} {dimension}: {} of {} weights nonzero, converged: {}",
                model.model.nonzero(),
                model.model.dim(),
                model.model.converged
            );
        }
        Command::Cv { dimension, folds, o } => {
            apply(&mut cfg, &o);
            if let Some(k) = folds {
                cfg.cv.k = k;
            }
            let ws = workspace(cfg)?;
            let (corpus, mode) = corpus_and_mode(&ws)?;
            let dims = if dimension.is_empty() {
                Dimension::ALL.to_vec()
            } else {
                dimension
            };
            let (_, text, out) = ws.cv(&corpus, mode, &dims)?;
            commit(out)?;
            print!("{text}");
        }
        Command::Irr { dimension } => {
            let ws = workspace(cfg)?;
            let (corpus, _) = corpus_and_mode(&ws)?;
            let dims = if dimension.is_empty() {
                Dimension::ALL.to_vec()
            } else {
                dimension
            };
            let (_, text, out) = ws.irr(&corpus, &dims)?;
            commit(out)?;
            print!("{text}");
        }
        Command::Score { dimension, o } => {
            apply(&mut cfg, &o);
            let ws = workspace(cfg)?;
            let (corpus, mode) = corpus_and_mode(&ws)?;
            let (csv, out) = ws.score(&corpus, mode, dimension)?;
            commit(out)?;
            print!("{csv}");
        }
        Command::Explain { session, top, dimension, o } => {
            apply(&mut cfg, &o);
            let ws = workspace(cfg)?;
            let (corpus, mode) = corpus_and_mode(&ws)?;
            let report = ws.explain(&corpus, mode, dimension, &session)?;
            let (digest, out) = ws.explain_outputs(&report, mode, dimension, top);
            commit(out)?;
            print!("{digest}");
        }
        Command::Heatmap { session, top, dimension, o } => {
            apply(&mut cfg, &o);
            let ws = workspace(cfg)?;
            let (corpus, mode) = corpus_and_mode(&ws)?;
            let ids: Vec<String> = if session.is_empty() {
                corpus.sessions.iter().map(|s| s.session_id.clone()).collect()
            } else {
                session
            };
            let spec = HeatmapSpec {
                k_callouts: top,
                ..HeatmapSpec::default()
            };
            let mut all = Outputs::default();
            for id in &ids {
                let out = ws.heatmap(&corpus, mode, dimension, id, &spec)?;
                for p in out.paths() {
                    println!("{}", p.display());
                }
                all.extend(out);
            }
            commit(all)?;
        }
        Command::Synth { sessions, teachers, noise, protocol, out } => {
            if teachers < 1 {
                bail!("--teachers must be at least 1");
            }
            let dir = out.unwrap_or_else(|| cfg.paths.workdir.clone());
            let sc = SynthConfig {
                seed: cfg.cv.seed,
                sessions,
                teachers,
                planted: !noise,
                protocol,
                ..SynthConfig::default()
            };
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let config_path = utterscore::workflow::synth(&dir, &sc)?;
            println!("{}", config_path.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
