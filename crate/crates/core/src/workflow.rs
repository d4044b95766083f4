//! Workdir-based commands behind the CLI. Every command computes its full
//! result before writing anything, so a failure leaves no partial outputs.
//!
//! Layout under the workdir:
//!
//! ```text
//! corpus.json  labels.csv  ingest.json
//! vocab.tsv
//! cache/llm-<key>.csv
//! features/<mode>/{utterances,sessions}.csv
//! models/<mode>-<dim>.json  models/<mode>-<dim>.vocab.tsv
//! reports/cv-<mode>-<dim>.json  reports/cv-<mode>.txt  reports/irr-<dim>.json
//! predictions/<mode>-<dim>.csv
//! explain/<session>-<mode>-<dim>.{json,txt}
//! heatmaps/<session>-<mode>-<dim>.svg
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{session_matrix_csv, utterance_matrix_csv, SessionFeatures};
use crate::bow::{build_vocabulary, Vocabulary};
use crate::config::{Backend, Resolved};
use crate::corpus::{
    ingest, labels_to_csv, load_labels, load_manifest, parse_labels, Corpus, Dimension,
    ImportOptions, LabelTable,
};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, irr, render_folds, render_table, CvReport, IrrReport};
use crate::explain::{explanation_report, ExplanationReport};
use crate::features::{train, FeatureMode, FeaturePlan, LlmFeatures, TrainedModel};
use crate::lasso::{LassoConfig, ModelFile};
use crate::llm::{
    featurize_llm_cached, ChatBackend, IndicatorSet, LlmCache, LlmOptions, MockBackend,
    RemoteBackend, RetryPolicy,
};
use crate::render::{heatmap_svg, HeatmapSpec};
use crate::synth::{generate, SynthConfig};

pub struct Workspace {
    pub config: Resolved,
    pub workdir: PathBuf,
    pub seed: u64,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

/// Files staged in memory and written together.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: PathBuf, content: impl Into<Vec<u8>>) {
        self.files.push((path, content.into()));
    }

    pub fn extend(&mut self, other: Outputs) {
        self.files.extend(other.files);
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSummary {
    pub sessions: usize,
    pub utterances: usize,
    pub teachers: usize,
    pub empty_sessions: Vec<String>,
    pub orphan_labels: Vec<String>,
    pub unlabeled_sessions: Vec<String>,
}

fn mode_slug(mode: FeatureMode) -> String {
    mode.to_string().replace(':', "-")
}

impl Workspace {
    pub fn new(config: Resolved, workdir: PathBuf, seed: u64) -> Self {
        Workspace {
            config,
            workdir,
            seed,
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.workdir.join(rel)
    }

    fn lasso(&self) -> LassoConfig {
        LassoConfig {
            lambda: self.config.raw.lasso.lambda,
            non_negative: self.config.raw.lasso.non_negative,
            ..LassoConfig::default()
        }
    }

    pub fn ingest(&self) -> Result<(IngestSummary, Outputs)> {
        let raw = &self.config.raw;
        let manifest = raw
            .paths
            .transcripts
            .as_ref()
            .ok_or_else(|| Error::Config(vec!["paths.transcripts: required by ingest".into()]))?;
        if !manifest.exists() {
            return Err(Error::MissingInput(manifest.clone()));
        }
        let labels = match &raw.paths.labels {
            Some(p) if !p.exists() => return Err(Error::MissingInput(p.clone())),
            Some(p) => load_labels(p)?,
            None => LabelTable::new(),
        };
        let entries = load_manifest(manifest)?;
        for e in &entries {
            if !e.transcript.exists() {
                return Err(Error::MissingInput(e.transcript.clone()));
            }
        }
        let outcome = ingest(self.config.protocol, &entries, &labels, ImportOptions::default())?;
        let corpus = outcome.corpus;
        let summary = IngestSummary {
            sessions: corpus.sessions.len(),
            utterances: corpus.sessions.iter().map(|s| s.utterances.len()).sum(),
            teachers: corpus.by_teacher().len(),
            empty_sessions: outcome.empty_sessions,
            orphan_labels: outcome.orphan_labels,
            unlabeled_sessions: corpus
                .sessions
                .iter()
                .filter(|s| s.labels.is_empty())
                .map(|s| s.session_id.clone())
                .collect(),
        };
        let mut out = Outputs::default();
        let mut doc = serde_json::to_string_pretty(&corpus)?;
        doc.push('\n');
        out.add(self.path("corpus.json"), doc);
        out.add(self.path("labels.csv"), labels_to_csv(&corpus.label_table()));
        let mut s = serde_json::to_string_pretty(&summary)?;
        s.push('\n');
        out.add(self.path("ingest.json"), s);
        Ok((summary, out))
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        let corpus_path = self.path("corpus.json");
        let corpus: Corpus = serde_json::from_str(&read(&corpus_path)?)?;
        if corpus.protocol != self.config.protocol {
            return Err(Error::InvalidInput(format!(
                "workdir corpus is {} but the configuration says {}",
                corpus.protocol, self.config.protocol
            )));
        }
        let mut corpus = Corpus::new(corpus.protocol, corpus.sessions)?;
        let labels_path = self.path("labels.csv");
        if labels_path.exists() {
            corpus.attach_labels(&parse_labels(read(&labels_path)?.as_bytes())?);
        }
        Ok(corpus)
    }

    fn corpus_bytes_hash(&self) -> Result<String> {
        let bytes = read(&self.path("corpus.json"))?;
        Ok(hex(&Sha256::digest(bytes.as_bytes())))
    }

    pub fn build_vocab(&self, corpus: &Corpus) -> Result<(Vocabulary, Outputs)> {
        let vocab = build_vocabulary(
            corpus.sessions.iter().flat_map(|s| s.texts()),
            self.config.raw.bow.k,
        )?;
        let mut out = Outputs::default();
        out.add(self.path("vocab.tsv"), vocab.to_tsv());
        Ok((vocab, out))
    }

    /// Whole-corpus vocabulary: `vocab.tsv` if present, otherwise built.
    pub fn corpus_vocab(&self, corpus: &Corpus) -> Result<Vocabulary> {
        let p = self.path("vocab.tsv");
        if p.exists() {
            Vocabulary::from_tsv(&read(&p)?)
        } else {
            Ok(self.build_vocab(corpus)?.0)
        }
    }

    fn backend(&self) -> Result<Box<dyn ChatBackend>> {
        let llm = &self.config.raw.llm;
        Ok(match self.config.backend {
            Backend::Mock(policy) => Box::new(MockBackend::new(self.seed, policy)),
            Backend::Remote => {
                let key = match &llm.credential_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        Error::Config(vec![format!(
                            "llm.credential_env: environment variable {var} is not set"
                        )])
                    })?),
                    None => None,
                };
                Box::new(RemoteBackend::new(
                    llm.endpoint_url.as_deref().unwrap_or_default(),
                    &llm.model,
                    key,
                    Duration::from_secs(llm.timeout_s),
                ))
            }
        })
    }

    /// Content key for LLM features: corpus bytes plus every setting that
    /// changes the values.
    pub fn llm_cache_key(&self) -> Result<String> {
        let llm = &self.config.raw.llm;
        let backend = match self.config.backend {
            Backend::Mock(p) => format!("mock:{p:?}:{}", self.seed),
            Backend::Remote => format!(
                "remote:{}:{}",
                llm.endpoint_url.as_deref().unwrap_or_default(),
                llm.model
            ),
        };
        let mut h = Sha256::new();
        for part in [
            self.config.protocol.to_string(),
            format!("{:?}", self.config.llm_mode),
            llm.context.to_string(),
            backend,
            self.corpus_bytes_hash()?,
        ] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        Ok(hex(&h.finalize())[..16].to_string())
    }

    /// LLM values for every session, reusing and extending the cache.
    pub fn llm_features(&self, corpus: &Corpus) -> Result<LlmFeatures> {
        let indicators = IndicatorSet::for_protocol(corpus.protocol);
        let llm = &self.config.raw.llm;
        let options = LlmOptions {
            mode: self.config.llm_mode,
            context: llm.context,
            max_concurrency: llm.max_concurrency,
            retry: RetryPolicy::default(),
        };
        let cache_path = self.path(&format!("cache/llm-{}.csv", self.llm_cache_key()?));
        let mut cache = LlmCache::load(&cache_path)?;
        let backend = self.backend()?;
        let mut rows = BTreeMap::new();
        for s in &corpus.sessions {
            let fresh = cache.get(&s.session_id).is_none();
            let v = featurize_llm_cached(backend.as_ref(), s, &indicators, &options, &mut cache)?;
            if fresh {
                // the cache is resumable state rather than a command output
                if let Some(dir) = cache_path.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                fs::write(&cache_path, cache.to_csv()).map_err(|e| Error::io(&cache_path, e))?;
            }
            rows.insert(s.session_id.clone(), v.into_iter().map(|x| x.0).collect());
        }
        Ok(LlmFeatures { indicators, rows })
    }

    pub fn feature_plan(&self, corpus: &Corpus, mode: FeatureMode) -> Result<FeaturePlan> {
        let mut plan = FeaturePlan::new(mode);
        plan.vocab_size = self.config.raw.bow.k;
        plan.vocab_scope = self.config.vocab_scope;
        if mode.uses_bow() && plan.vocab_scope == crate::features::VocabScope::Corpus {
            plan.corpus_vocab = Some(self.corpus_vocab(corpus)?);
        }
        if mode.uses_llm() {
            plan.llm = Some(self.llm_features(corpus)?);
        }
        Ok(plan)
    }

    /// Per-utterance and per-session feature matrices over the whole corpus.
    pub fn featurize(&self, corpus: &Corpus, mode: FeatureMode) -> Result<Outputs> {
        let mut plan = self.feature_plan(corpus, mode)?;
        if mode.uses_bow() && plan.corpus_vocab.is_none() {
            plan.corpus_vocab = Some(self.corpus_vocab(corpus)?);
            plan.vocab_scope = crate::features::VocabScope::Corpus;
        }
        let all: Vec<&crate::corpus::Session> = corpus.sessions.iter().collect();
        let fitted = plan.fit(&all)?;
        let feats: Vec<SessionFeatures> = corpus
            .sessions
            .iter()
            .map(|s| fitted.features(s))
            .collect::<Result<_>>()?;
        let dir = format!("features/{}", mode_slug(mode));
        let mut out = Outputs::default();
        out.add(self.path(&format!("{dir}/utterances.csv")), utterance_matrix_csv(&feats)?);
        out.add(self.path(&format!("{dir}/sessions.csv")), session_matrix_csv(&feats)?);
        Ok(out)
    }

    fn model_paths(&self, mode: FeatureMode, dim: Dimension) -> (PathBuf, PathBuf) {
        let stem = format!("models/{}-{dim}", mode_slug(mode));
        (
            self.path(&format!("{stem}.json")),
            self.path(&format!("{stem}.vocab.tsv")),
        )
    }

    pub fn train(&self, corpus: &Corpus, mode: FeatureMode, dim: Dimension) -> Result<(TrainedModel, Outputs)> {
        let plan = self.feature_plan(corpus, mode)?;
        let (sessions, excluded) = corpus.labeled(dim);
        if excluded > 0 {
            log::info!("{excluded} session(s) without a {dim} label left out of training");
        }
        let model = train(&plan, &sessions, dim, &self.lasso())?;
        let (mpath, vpath) = self.model_paths(mode, dim);
        let mut out = Outputs::default();
        out.add(mpath, model.model_file(Some(corpus.protocol.to_string())).to_json());
        if let Some(v) = &model.vocab {
            out.add(vpath, v.to_tsv());
        }
        Ok((model, out))
    }

    pub fn load_model(&self, mode: FeatureMode, dim: Dimension) -> Result<TrainedModel> {
        let (mpath, vpath) = self.model_paths(mode, dim);
        let file = ModelFile::from_json(&read(&mpath)?)?;
        let vocab = if mode.uses_bow() {
            Some(Vocabulary::from_tsv(&read(&vpath)?)?)
        } else {
            None
        };
        Ok(TrainedModel {
            mode,
            model: file.into_model()?,
            vocab,
        })
    }

    pub fn cv(&self, corpus: &Corpus, mode: FeatureMode, dims: &[Dimension]) -> Result<(Vec<CvReport>, String, Outputs)> {
        let plan = self.feature_plan(corpus, mode)?;
        let lasso = self.lasso();
        let k = self.config.raw.cv.k;
        let reports: Vec<CvReport> = dims
            .par_iter()
            .map(|&d| cross_validate(corpus, &plan, d, &lasso, k, self.seed).map(|o| o.report))
            .collect::<Result<_>>()?;
        let mut text = render_table(corpus.protocol, &reports);
        for r in &reports {
            text.push_str(&render_folds(r));
            text.push('\n');
        }
        let mut out = Outputs::default();
        for r in &reports {
            out.add(
                self.path(&format!("reports/cv-{}-{}.json", mode_slug(mode), r.dimension)),
                r.to_json(),
            );
        }
        out.add(self.path(&format!("reports/cv-{}.txt", mode_slug(mode))), text.clone());
        Ok((reports, text, out))
    }

    pub fn irr(&self, corpus: &Corpus, dims: &[Dimension]) -> Result<(Vec<IrrReport>, String, Outputs)> {
        let reports: Vec<IrrReport> = dims.iter().map(|&d| irr(corpus, d)).collect::<Result<_>>()?;
        let mut text = String::new();
        let mut out = Outputs::default();
        for r in &reports {
            let _ = writeln!(
                text,
                "{:<28} R {:<14} RMSE {}",
                r.dimension.title(corpus.protocol),
                r.summary.r.cell(),
                r.summary.rmse.cell()
            );
            for n in &r.notes {
                let _ = writeln!(text, "  note: {n}");
            }
            let mut doc = serde_json::to_string_pretty(r)?;
            doc.push('\n');
            out.add(self.path(&format!("reports/irr-{}.json", r.dimension)), doc);
        }
        out.add(self.path("reports/irr.txt"), text.clone());
        Ok((reports, text, out))
    }

    fn llm_for(&self, corpus: &Corpus, mode: FeatureMode) -> Result<Option<LlmFeatures>> {
        if mode.uses_llm() {
            Ok(Some(self.llm_features(corpus)?))
        } else {
            Ok(None)
        }
    }

    /// Predictions for every session from the trained model.
    pub fn score(&self, corpus: &Corpus, mode: FeatureMode, dim: Dimension) -> Result<(String, Outputs)> {
        let model = self.load_model(mode, dim)?;
        let llm = self.llm_for(corpus, mode)?;
        let fitted = model.features(llm.as_ref());
        let mut csv = String::from("session_id,teacher_id,y_hat,y\n");
        for s in &corpus.sessions {
            let y_hat = model.model.predict(&fitted.features(s)?.g)?;
            let y = s.mean_target(dim).map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{y_hat},{y}", s.session_id, s.teacher_id);
        }
        let mut out = Outputs::default();
        out.add(
            self.path(&format!("predictions/{}-{dim}.csv", mode_slug(mode))),
            csv.clone(),
        );
        Ok((csv, out))
    }

    pub fn explain(
        &self,
        corpus: &Corpus,
        mode: FeatureMode,
        dim: Dimension,
        session_id: &str,
    ) -> Result<ExplanationReport> {
        let session = corpus
            .session(session_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown session {session_id}")))?;
        let model = self.load_model(mode, dim)?;
        let llm = self.llm_for(corpus, mode)?;
        let feats = model.features(llm.as_ref()).features(session)?;
        explanation_report(session, &model.model, &feats)
    }

    pub fn explain_outputs(
        &self,
        report: &ExplanationReport,
        mode: FeatureMode,
        dim: Dimension,
        top: usize,
    ) -> (String, Outputs) {
        let digest = report.digest(top);
        let stem = format!("explain/{}-{}-{dim}", report.session_id, mode_slug(mode));
        let mut out = Outputs::default();
        out.add(self.path(&format!("{stem}.json")), report.to_json());
        out.add(self.path(&format!("{stem}.txt")), digest.clone());
        (digest, out)
    }

    pub fn heatmap(
        &self,
        corpus: &Corpus,
        mode: FeatureMode,
        dim: Dimension,
        session_id: &str,
        spec: &HeatmapSpec,
    ) -> Result<Outputs> {
        let report = self.explain(corpus, mode, dim, session_id)?;
        let session = corpus.session(session_id).expect("checked by explain");
        let svg = heatmap_svg(session, &report.marginals(), spec)?;
        let mut out = Outputs::default();
        out.add(
            self.path(&format!("heatmaps/{session_id}-{}-{dim}.svg", mode_slug(mode))),
            svg,
        );
        Ok(out)
    }
}

/// Write a synthetic corpus plus a ready-to-use config under `dir`.
pub fn synth(dir: &Path, config: &SynthConfig) -> Result<PathBuf> {
    let syn = generate(config)?;
    syn.write(dir)?;
    let run = crate::config::RunConfig {
        protocol: config.protocol.to_string(),
        paths: crate::config::PathsConfig {
            transcripts: Some(PathBuf::from("manifest.csv")),
            labels: Some(PathBuf::from("labels.csv")),
            workdir: PathBuf::from("work"),
        },
        cv: crate::config::CvSection {
            k: crate::eval::DEFAULT_FOLDS,
            seed: config.seed,
        },
        ..Default::default()
    };
    let path = dir.join("config.toml");
    fs::write(&path, run.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
