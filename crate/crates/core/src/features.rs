//! Feature families and the fit/transform plumbing shared by training,
//! cross-validation and scoring.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::{concat, SessionFeatures};
use crate::bow::{baseline_features, build_vocabulary, BaselineMode, Vocabulary, DEFAULT_VOCAB_SIZE};
use crate::corpus::{Dimension, Session};
use crate::error::{Error, Result};
use crate::lasso::{LassoConfig, ModelFile, RegressionModel};
use crate::llm::IndicatorSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Bow,
    LlmAll,
    LlmDim(Dimension),
    /// LLM(All) followed by BoW.
    Concat,
    Baseline(BaselineMode),
}

impl FeatureMode {
    pub fn uses_llm(self) -> bool {
        matches!(self, FeatureMode::LlmAll | FeatureMode::LlmDim(_) | FeatureMode::Concat)
    }

    pub fn uses_bow(self) -> bool {
        matches!(self, FeatureMode::Bow | FeatureMode::Concat)
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMode::Bow => f.write_str("bow"),
            FeatureMode::LlmAll => f.write_str("llm_all"),
            FeatureMode::LlmDim(d) => write!(f, "llm_dim:{d}"),
            FeatureMode::Concat => f.write_str("concat"),
            FeatureMode::Baseline(BaselineMode::Words) => f.write_str("baseline_words"),
            FeatureMode::Baseline(BaselineMode::Questions) => f.write_str("baseline_questions"),
            FeatureMode::Baseline(BaselineMode::Both) => f.write_str("baseline_both"),
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bow" => FeatureMode::Bow,
            "llm_all" => FeatureMode::LlmAll,
            "concat" => FeatureMode::Concat,
            "baseline_words" => FeatureMode::Baseline(BaselineMode::Words),
            "baseline_questions" => FeatureMode::Baseline(BaselineMode::Questions),
            "baseline_both" => FeatureMode::Baseline(BaselineMode::Both),
            other => match other.strip_prefix("llm_dim:") {
                Some(d) => FeatureMode::LlmDim(d.parse()?),
                None => {
                    return Err(Error::InvalidInput(format!("unknown feature mode {other:?}")))
                }
            },
        })
    }
}

impl Serialize for FeatureMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VocabScope {
    /// Vocabulary from each training fold only.
    #[default]
    Fold,
    /// One vocabulary from the whole corpus.
    Corpus,
}

/// Precomputed per-utterance LLM values for every session, over the full
/// indicator set.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmFeatures {
    pub indicators: IndicatorSet,
    pub rows: BTreeMap<String, Vec<Vec<f64>>>,
}

impl LlmFeatures {
    fn columns(&self, mode: FeatureMode) -> Result<Vec<usize>> {
        match mode {
            FeatureMode::LlmDim(d) if d != Dimension::Domain => {
                let r = self.indicators.range(d).ok_or_else(|| {
                    Error::InvalidInput(format!("no indicators grouped under {d}"))
                })?;
                Ok(r.collect())
            }
            _ => Ok((0..self.indicators.len()).collect()),
        }
    }

    fn session(&self, session: &Session, mode: FeatureMode) -> Result<SessionFeatures> {
        let rows = self.rows.get(&session.session_id).ok_or_else(|| {
            Error::InvalidInput(format!("no LLM features for session {}", session.session_id))
        })?;
        if rows.len() != session.utterances.len() {
            return Err(Error::DimensionMismatch {
                expected: session.utterances.len(),
                actual: rows.len(),
            });
        }
        let full = SessionFeatures::new(
            &session.session_id,
            self.indicators.feature_names(),
            rows.clone(),
        )?;
        full.select(&self.columns(mode)?)
    }
}

#[derive(Debug, Clone)]
pub struct FeaturePlan {
    pub mode: FeatureMode,
    pub vocab_size: usize,
    pub vocab_scope: VocabScope,
    /// Required when `vocab_scope` is `Corpus` and the mode uses BoW.
    pub corpus_vocab: Option<Vocabulary>,
    /// Required when the mode uses LLM features.
    pub llm: Option<LlmFeatures>,
}

impl FeaturePlan {
    pub fn new(mode: FeatureMode) -> Self {
        FeaturePlan {
            mode,
            vocab_size: DEFAULT_VOCAB_SIZE,
            vocab_scope: VocabScope::Fold,
            corpus_vocab: None,
            llm: None,
        }
    }

    /// Fit anything data-dependent (the vocabulary) on `train`.
    pub fn fit(&self, train: &[&Session]) -> Result<FittedFeatures<'_>> {
        let vocab = if self.mode.uses_bow() {
            Some(match (self.vocab_scope, &self.corpus_vocab) {
                (VocabScope::Corpus, Some(v)) => v.clone(),
                (VocabScope::Corpus, None) => {
                    return Err(Error::InvalidInput(
                        "corpus-scope vocabulary requested but none supplied".into(),
                    ))
                }
                (VocabScope::Fold, _) => build_vocabulary(
                    train.iter().flat_map(|s| s.texts()),
                    self.vocab_size,
                )?,
            })
        } else {
            None
        };
        let llm = if self.mode.uses_llm() {
            Some(self.llm.as_ref().ok_or_else(|| {
                Error::InvalidInput(format!("feature mode {} needs LLM features", self.mode))
            })?)
        } else {
            None
        };
        Ok(FittedFeatures {
            mode: self.mode,
            vocab,
            llm,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FittedFeatures<'a> {
    pub mode: FeatureMode,
    pub vocab: Option<Vocabulary>,
    llm: Option<&'a LlmFeatures>,
}

impl FittedFeatures<'_> {
    pub fn standalone(mode: FeatureMode, vocab: Option<Vocabulary>) -> FittedFeatures<'static> {
        FittedFeatures { mode, vocab, llm: None }
    }

    pub fn with_llm(self, llm: &LlmFeatures) -> FittedFeatures<'_> {
        FittedFeatures {
            mode: self.mode,
            vocab: self.vocab,
            llm: Some(llm),
        }
    }

    fn bow(&self, session: &Session) -> Result<SessionFeatures> {
        let vocab = self
            .vocab
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("BoW features need a vocabulary".into()))?;
        let rows = session.texts().map(|t| vocab.featurize(t).to_f64()).collect();
        SessionFeatures::new(&session.session_id, vocab.feature_names(), rows)
    }

    fn llm(&self, session: &Session) -> Result<SessionFeatures> {
        self.llm
            .ok_or_else(|| Error::InvalidInput(format!("feature mode {} needs LLM features", self.mode)))?
            .session(session, self.mode)
    }

    pub fn features(&self, session: &Session) -> Result<SessionFeatures> {
        if session.utterances.is_empty() {
            return Err(Error::EmptySession(session.session_id.clone()));
        }
        match self.mode {
            FeatureMode::Bow => self.bow(session),
            FeatureMode::LlmAll | FeatureMode::LlmDim(_) => self.llm(session),
            FeatureMode::Concat => concat(&self.llm(session)?, &self.bow(session)?),
            FeatureMode::Baseline(b) => {
                let rows = session.texts().map(|t| baseline_features(t, b)).collect();
                SessionFeatures::new(&session.session_id, b.feature_names(), rows)
            }
        }
    }
}

/// A regression model plus the vocabulary its features were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub mode: FeatureMode,
    pub model: RegressionModel,
    pub vocab: Option<Vocabulary>,
}

impl TrainedModel {
    pub fn model_file(&self, protocol: Option<String>) -> ModelFile {
        self.model.to_file(protocol, Some(self.mode.to_string()))
    }

    /// Model JSON followed by the vocabulary TSV, for byte comparisons.
    pub fn fingerprint(&self) -> String {
        let mut s = self.model_file(None).to_json();
        if let Some(v) = &self.vocab {
            s.push_str(&v.to_tsv());
        }
        s
    }

    pub fn features<'a>(&self, llm: Option<&'a LlmFeatures>) -> FittedFeatures<'a> {
        FittedFeatures {
            mode: self.mode,
            vocab: self.vocab.clone(),
            llm,
        }
    }
}

/// Sessions lacking a label for `dimension` must be filtered out beforehand.
pub fn train(
    plan: &FeaturePlan,
    sessions: &[&Session],
    dimension: Dimension,
    lasso: &LassoConfig,
) -> Result<TrainedModel> {
    let fitted = plan.fit(sessions)?;
    let feats: Vec<SessionFeatures> = sessions
        .iter()
        .map(|s| fitted.features(s))
        .collect::<Result<_>>()?;
    let y: Vec<f64> = sessions
        .iter()
        .map(|s| s.mean_target(dimension))
        .collect::<Result<_>>()?;
    let names = feats
        .first()
        .map(|f| f.feature_names.clone())
        .unwrap_or_default();
    let g: Vec<Vec<f64>> = feats.into_iter().map(|f| f.g).collect();
    let model = RegressionModel::fit(names, &g, &y, lasso)?;
    Ok(TrainedModel {
        mode: plan.mode,
        model,
        vocab: fitted.vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_mode_tokens() {
        for m in [
            "bow",
            "llm_all",
            "llm_dim:dim1",
            "llm_dim:dim3",
            "concat",
            "baseline_words",
            "baseline_questions",
            "baseline_both",
        ] {
            assert_eq!(m.parse::<FeatureMode>().unwrap().to_string(), m);
        }
        assert!("llm_dim:dim9".parse::<FeatureMode>().is_err());
        assert!("tfidf".parse::<FeatureMode>().is_err());
    }
}
