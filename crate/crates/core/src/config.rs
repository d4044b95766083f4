//! Run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Protocol;
use crate::error::{Error, Result};
use crate::features::{FeatureMode, VocabScope};
use crate::llm::{FeatureMode as LlmMode, MockPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: String,
    pub feature_mode: String,
    pub paths: PathsConfig,
    pub llm: LlmConfig,
    pub lasso: LassoSection,
    pub cv: CvSection,
    pub bow: BowSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Manifest CSV listing `session_id,teacher_id,transcript`.
    pub transcripts: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: String,
    pub endpoint_url: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: Option<String>,
    pub mode: String,
    pub context: usize,
    pub max_concurrency: usize,
    pub timeout_s: u64,
    pub mock_policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoSection {
    pub lambda: f64,
    pub non_negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BowSection {
    #[serde(rename = "K")]
    pub k: usize,
    pub vocab_scope: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            protocol: "prek".into(),
            feature_mode: "bow".into(),
            paths: PathsConfig::default(),
            llm: LlmConfig::default(),
            lasso: LassoSection::default(),
            cv: CvSection::default(),
            bow: BowSection::default(),
        }
    }
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            transcripts: None,
            labels: None,
            workdir: PathBuf::from("work"),
        }
    }
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            backend: "mock".into(),
            endpoint_url: None,
            model: "llama-2-7b-chat".into(),
            credential_env: None,
            mode: "prob".into(),
            context: 1,
            max_concurrency: 8,
            timeout_s: 60,
            mock_policy: "hash".into(),
        }
    }
}

impl Default for LassoSection {
    fn default() -> Self {
        LassoSection {
            lambda: 0.1,
            non_negative: false,
        }
    }
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { k: 5, seed: 0 }
    }
}

impl Default for BowSection {
    fn default() -> Self {
        BowSection {
            k: crate::bow::DEFAULT_VOCAB_SIZE,
            vocab_scope: "fold".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Mock(MockPolicy),
    Remote,
}

/// A validated configuration with parsed enumerations.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub raw: RunConfig,
    pub protocol: Protocol,
    pub feature_mode: FeatureMode,
    pub backend: Backend,
    pub llm_mode: LlmMode,
    pub vocab_scope: VocabScope,
}

fn parse_token<T: for<'de> Deserialize<'de>>(s: &str) -> Option<T> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s)).ok()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check every field, reporting all violations at once.
    pub fn validate(&self) -> Result<Resolved> {
        let mut errs = Vec::new();
        let protocol = self.protocol.parse::<Protocol>().ok();
        if protocol.is_none() {
            errs.push(format!("protocol: expected toddler or prek, got {:?}", self.protocol));
        }
        let feature_mode = self.feature_mode.parse::<FeatureMode>().ok();
        if feature_mode.is_none() {
            errs.push(format!(
                "feature_mode: expected bow, llm_all, llm_dim:<dimension>, concat, baseline_words, baseline_questions or baseline_both, got {:?}",
                self.feature_mode
            ));
        }
        let backend = match self.llm.backend.as_str() {
            "mock" => match parse_token::<MockPolicy>(&self.llm.mock_policy) {
                Some(p) => Some(Backend::Mock(p)),
                None => {
                    errs.push(format!(
                        "llm.mock_policy: expected hash or rule, got {:?}",
                        self.llm.mock_policy
                    ));
                    None
                }
            },
            "remote" => {
                if self.llm.endpoint_url.as_deref().is_none_or(str::is_empty) {
                    errs.push("llm.endpoint_url: required when llm.backend = \"remote\"".into());
                }
                if self.llm.credential_env.as_deref().is_some_and(str::is_empty) {
                    errs.push("llm.credential_env: must name an environment variable".into());
                }
                Some(Backend::Remote)
            }
            other => {
                errs.push(format!("llm.backend: expected mock or remote, got {other:?}"));
                None
            }
        };
        let llm_mode = parse_token::<LlmMode>(&self.llm.mode);
        if llm_mode.is_none() {
            errs.push(format!("llm.mode: expected prob or binary, got {:?}", self.llm.mode));
        }
        if self.llm.context != 1 && self.llm.context != 3 {
            errs.push(format!("llm.context: expected 1 or 3, got {}", self.llm.context));
        }
        if self.llm.max_concurrency == 0 {
            errs.push("llm.max_concurrency: must be at least 1".into());
        }
        if self.llm.timeout_s == 0 {
            errs.push("llm.timeout_s: must be at least 1".into());
        }
        if !(self.lasso.lambda.is_finite() && self.lasso.lambda >= 0.0) {
            errs.push(format!("lasso.lambda: must be finite and >= 0, got {}", self.lasso.lambda));
        }
        if self.cv.k < 2 {
            errs.push(format!("cv.k: must be at least 2, got {}", self.cv.k));
        }
        if self.bow.k == 0 {
            errs.push("bow.K: must be at least 1".into());
        }
        let vocab_scope = parse_token::<VocabScope>(&self.bow.vocab_scope);
        if vocab_scope.is_none() {
            errs.push(format!(
                "bow.vocab_scope: expected fold or corpus, got {:?}",
                self.bow.vocab_scope
            ));
        }
        if self.paths.workdir.as_os_str().is_empty() {
            errs.push("paths.workdir: must not be empty".into());
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(Resolved {
            raw: self.clone(),
            protocol: protocol.expect("validated"),
            feature_mode: feature_mode.expect("validated"),
            backend: backend.expect("validated"),
            llm_mode: llm_mode.expect("validated"),
            vocab_scope: vocab_scope.expect("validated"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.lasso.lambda, 0.1);
        assert_eq!(c.cv.k, 5);
        assert_eq!(c.bow.k, 300);
        let r = c.validate().unwrap();
        assert_eq!(r.feature_mode, FeatureMode::Bow);
        assert_eq!(r.vocab_scope, VocabScope::Fold);
    }

    #[test]
    fn every_violation_is_listed() {
        let c = RunConfig::from_toml(
            "protocol = \"infant\"\nfeature_mode = \"tfidf\"\n[lasso]\nlambda = -1.0\n[cv]\nk = 1\n[llm]\nbackend = \"remote\"\ncontext = 2\n",
        )
        .unwrap();
        let Err(Error::Config(errs)) = c.validate() else {
            panic!("expected config error")
        };
        for field in ["protocol", "feature_mode", "lasso.lambda", "cv.k", "llm.endpoint_url", "llm.context"] {
            assert!(errs.iter().any(|e| e.starts_with(field)), "{field} missing from {errs:?}");
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_toml("[lasso]\nalpha = 1.0\n").is_err());
    }

    #[test]
    fn round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
