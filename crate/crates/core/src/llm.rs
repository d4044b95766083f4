//! Zero-shot behavioral-indicator judgments from a chat-completion model.
//!
//! Each utterance is asked about each indicator with a YES/NO prompt. When
//! the first generated token is YES the feature is its probability (or 1 in
//! binary mode); any other first token yields 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{Dimension, Protocol, Session};
use crate::error::{Error, Result};

pub const FEATURE_SYSTEM_MESSAGE: &str = "Answer YES or NO.";
pub const EXPLAIN_SYSTEM_MESSAGE: &str = "Answer YES or NO and explain the reasoning.";
pub const TEMPERATURE: f64 = 0.6;
pub const TOP_P: f64 = 0.9;
pub const FEATURE_MAX_TOKENS: u32 = 4;
pub const EXPLAIN_MAX_TOKENS: u32 = 256;

pub const PREK_INDICATORS: [&str; 11] = [
    "promote analysis and reasoning",
    "facilitate creativity by brainstorming and/or planning",
    "help students to make connections",
    "provide scaffolding",
    "provide information",
    "ask students to explain their reasoning",
    "encourage and affirms",
    "ask open-ended questions",
    "repeat and extend students' language",
    "perform self- and parallel talk",
    "use advanced language",
];

pub const TODDLER_INDICATORS: [&str; 10] = [
    "provide active facilitation of children's learning",
    "expand children's cognition",
    "promote children's active engagement",
    "provide scaffolding",
    "provide information",
    "encourage and affirms",
    "ask open-ended questions",
    "repeat and extend students' language",
    "perform self- and parallel talk",
    "use advanced language",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSet {
    pub protocol: Protocol,
    pub indicators: Vec<String>,
    /// Half-open index ranges into `indicators`, one per scored dimension.
    pub grouping: Vec<(Dimension, Range<usize>)>,
}

impl IndicatorSet {
    pub fn for_protocol(protocol: Protocol) -> Self {
        let (list, grouping): (&[&str], _) = match protocol {
            Protocol::PreK => (
                &PREK_INDICATORS,
                vec![
                    (Dimension::Dim1, 0..3),
                    (Dimension::Dim2, 3..7),
                    (Dimension::Dim3, 7..11),
                ],
            ),
            Protocol::Toddler => (
                &TODDLER_INDICATORS,
                vec![
                    (Dimension::Dim1, 0..3),
                    (Dimension::Dim2, 3..6),
                    (Dimension::Dim3, 6..10),
                ],
            ),
        };
        IndicatorSet {
            protocol,
            indicators: list.iter().map(|s| s.to_string()).collect(),
            grouping,
        }
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    pub fn range(&self, dimension: Dimension) -> Option<Range<usize>> {
        self.grouping
            .iter()
            .find(|(d, _)| *d == dimension)
            .map(|(_, r)| r.clone())
    }

    /// Restrict to one dimension's indicators, order preserved. `Domain`
    /// keeps the full set.
    pub fn subset(&self, dimension: Dimension) -> Result<IndicatorSet> {
        if dimension == Dimension::Domain {
            return Ok(self.clone());
        }
        let range = self.range(dimension).ok_or_else(|| {
            Error::InvalidInput(format!("no indicators grouped under {dimension}"))
        })?;
        Ok(IndicatorSet {
            protocol: self.protocol,
            indicators: self.indicators[range.clone()].to_vec(),
            grouping: vec![(dimension, 0..range.len())],
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.indicators.iter().map(|i| format!("llm:{i}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub want_first_token_logprob: bool,
    #[serde(skip)]
    pub indicator: String,
    #[serde(skip)]
    pub input_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub first_token: String,
    pub first_token_logprob: Option<f64>,
}

pub fn user_message(indicator: &str, input_text: &str) -> String {
    format!(
        "In the context of a preschool classroom in which a teacher is talking to their students, \
         does the following sentence '{indicator}' and help students to grow cognitively?\n\"{input_text}\""
    )
}

pub fn render_prompt(indicator: &str, input_text: &str, protocol: Protocol) -> Result<ChatRequest> {
    if !IndicatorSet::for_protocol(protocol)
        .indicators
        .iter()
        .any(|i| i == indicator)
    {
        return Err(Error::UnknownIndicator(indicator.to_string()));
    }
    Ok(ChatRequest {
        system: FEATURE_SYSTEM_MESSAGE.to_string(),
        user: user_message(indicator, input_text),
        temperature: TEMPERATURE,
        top_p: TOP_P,
        max_tokens: FEATURE_MAX_TOKENS,
        want_first_token_logprob: true,
        indicator: indicator.to_string(),
        input_text: input_text.to_string(),
    })
}

pub fn render_explain_prompt(
    indicator: &str,
    input_text: &str,
    protocol: Protocol,
) -> Result<ChatRequest> {
    let mut req = render_prompt(indicator, input_text, protocol)?;
    req.system = EXPLAIN_SYSTEM_MESSAGE.to_string();
    req.max_tokens = EXPLAIN_MAX_TOKENS;
    req.want_first_token_logprob = false;
    Ok(req)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    #[default]
    Prob,
    Binary,
}

fn is_yes(token: &str) -> bool {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .eq_ignore_ascii_case("yes")
}

pub fn parse_yes_feature(response: &ChatResponse, mode: FeatureMode) -> Result<f64> {
    if !is_yes(&response.first_token) {
        return Ok(0.0);
    }
    match mode {
        FeatureMode::Binary => Ok(1.0),
        FeatureMode::Prob => {
            let lp = response.first_token_logprob.ok_or_else(|| {
                Error::BackendContract("response carries no first-token logprob".into())
            })?;
            if lp.is_nan() || lp > 0.0 {
                return Err(Error::BackendContract(format!("invalid logprob {lp}")));
            }
            Ok(lp.exp())
        }
    }
}

/// A chat-completion service. Implementations must tolerate concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MockPolicy {
    #[default]
    Hash,
    Rule,
}

pub const MOCK_EXPLANATION: &str =
    "NO. (mock backend) This canned explanation stands in for model reasoning.";

#[derive(Debug, Clone)]
pub struct MockBackend {
    pub seed: u64,
    pub policy: MockPolicy,
}

impl MockBackend {
    pub fn new(seed: u64, policy: MockPolicy) -> Self {
        MockBackend { seed, policy }
    }

    pub fn stable_hash(indicator: &str, text: &str, seed: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(indicator.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.update([0u8]);
        h.update(seed.to_le_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    fn judge(&self, indicator: &str, text: &str) -> (bool, f64) {
        match self.policy {
            MockPolicy::Hash => {
                let h = Self::stable_hash(indicator, text, self.seed);
                (h % 2 == 0, -((h % 1000) as f64) / 1000.0)
            }
            MockPolicy::Rule => {
                let lower = text.to_lowercase();
                let yes = lower.contains('?')
                    && ["why", "how", "what"].iter().any(|w| lower.contains(w));
                (yes, -0.1)
            }
        }
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        if request.system == EXPLAIN_SYSTEM_MESSAGE {
            return Ok(ChatResponse {
                text: MOCK_EXPLANATION.to_string(),
                first_token: "NO".into(),
                first_token_logprob: None,
            });
        }
        let (yes, logprob) = self.judge(&request.indicator, &request.input_text);
        let token = if yes { "YES" } else { "NO" };
        Ok(ChatResponse {
            text: token.to_string(),
            first_token: token.to_string(),
            first_token_logprob: Some(logprob),
        })
    }
}

/// Client for an OpenAI-style `chat/completions` endpoint.
pub struct RemoteBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        RemoteBackend {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            agent,
        }
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
            "logprobs": request.want_first_token_logprob,
        })
    }
}

/// Extract text and first-token logprob from a chat-completions (or legacy
/// completions) response body.
pub fn parse_completion_body(body: &Value) -> Result<ChatResponse> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::BackendContract("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let logprobs = choice.get("logprobs").filter(|v| !v.is_null());
    let (token, logprob) = match logprobs {
        Some(lp) if lp.get("content").is_some() => {
            let first = lp.pointer("/content/0");
            (
                first.and_then(|f| f.get("token")).and_then(Value::as_str),
                first.and_then(|f| f.get("logprob")).and_then(Value::as_f64),
            )
        }
        Some(lp) => (
            lp.pointer("/tokens/0").and_then(Value::as_str),
            lp.pointer("/token_logprobs/0").and_then(Value::as_f64),
        ),
        None => (None, None),
    };
    let first_token = match token {
        Some(t) => t.to_string(),
        None => text.split_whitespace().next().unwrap_or_default().to_string(),
    };
    Ok(ChatResponse {
        text,
        first_token,
        first_token_logprob: logprob,
    })
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.request_body(request))
            .map_err(|e| Error::Transport(e.to_string()))?;
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::BackendContract(format!("unreadable response: {e}")))?;
        parse_completion_body(&body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Retry transport failures with exponential backoff. Contract violations
/// are returned immediately.
pub fn complete_with_retry(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    policy: RetryPolicy,
) -> Result<ChatResponse> {
    let mut delay = policy.initial_backoff;
    let mut attempt = 1;
    loop {
        match backend.complete(request) {
            Err(Error::Transport(msg)) if attempt < policy.attempts.max(1) => {
                log::warn!("transport failure (attempt {attempt}): {msg}; retrying in {delay:?}");
                std::thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
            other => return other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmVector(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlmOptions {
    pub mode: FeatureMode,
    /// 1 for the utterance alone, 3 to include both neighbors.
    pub context: usize,
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for LlmOptions {
    fn default() -> Self {
        LlmOptions {
            mode: FeatureMode::Prob,
            context: 1,
            max_concurrency: 8,
            retry: RetryPolicy::default(),
        }
    }
}

/// Text queried for utterance `i`; empty neighbors drop out of the join.
pub fn context_text(session: &Session, i: usize, context: usize) -> String {
    let utts = &session.utterances;
    if context <= 1 {
        return utts[i].text.clone();
    }
    let prev = if i > 0 { utts[i - 1].text.as_str() } else { "" };
    let next = utts.get(i + 1).map_or("", |u| u.text.as_str());
    [prev, utts[i].text.as_str(), next]
        .into_iter()
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// One vector per utterance, entries in indicator order. Fails as a whole if
/// any request fails after retries.
pub fn featurize_llm(
    backend: &dyn ChatBackend,
    session: &Session,
    indicators: &IndicatorSet,
    options: &LlmOptions,
) -> Result<Vec<LlmVector>> {
    if options.context != 1 && options.context != 3 {
        return Err(Error::InvalidInput(format!(
            "context must be 1 or 3, got {}",
            options.context
        )));
    }
    let n_utt = session.utterances.len();
    let n_ind = indicators.len();
    let texts: Vec<String> = (0..n_utt)
        .map(|i| context_text(session, i, options.context))
        .collect();
    let jobs = n_utt * n_ind;
    let results: Mutex<Vec<Option<Result<f64>>>> = Mutex::new((0..jobs).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let workers = options.max_concurrency.max(1).min(jobs.max(1));

    let run = |job: usize| -> Result<f64> {
        let (u, k) = (job / n_ind, job % n_ind);
        let request = render_prompt(&indicators.indicators[k], &texts[u], indicators.protocol)?;
        let response =
            complete_with_retry(backend, &request, options.retry).map_err(|e| match e {
                Error::Transport(message) => Error::RequestFailed {
                    session_id: session.session_id.clone(),
                    utterance_index: u,
                    indicator: indicators.indicators[k].clone(),
                    message,
                },
                other => other,
            })?;
        parse_yes_feature(&response, options.mode)
    };

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let job = next.fetch_add(1, Ordering::Relaxed);
                if job >= jobs {
                    break;
                }
                let out = run(job);
                if out.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                results.lock().expect("results lock")[job] = Some(out);
            });
        }
    });

    let results = results.into_inner().expect("results lock");
    if failed.load(Ordering::Relaxed) {
        // lowest failing job, for a stable error across schedules
        let err = results
            .into_iter()
            .flatten()
            .find_map(Result::err)
            .expect("a failure was recorded");
        return Err(err);
    }
    let values: Vec<f64> = results
        .into_iter()
        .map(|r| r.expect("every job ran").expect("no failures"))
        .collect();
    Ok(values
        .chunks(n_ind.max(1))
        .take(n_utt)
        .map(|c| LlmVector(if n_ind == 0 { Vec::new() } else { c.to_vec() }))
        .collect())
}

pub fn explain_indicator(
    backend: &dyn ChatBackend,
    indicator: &str,
    text: &str,
    protocol: Protocol,
    retry: RetryPolicy,
) -> Result<String> {
    let request = render_explain_prompt(indicator, text, protocol)?;
    Ok(complete_with_retry(backend, &request, retry)?.text)
}

/// Resumable per-(session, utterance, indicator) feature values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LlmCache {
    values: BTreeMap<String, Vec<Vec<f64>>>,
}

impl LlmCache {
    pub fn get(&self, session_id: &str) -> Option<&Vec<Vec<f64>>> {
        self.values.get(session_id)
    }

    pub fn insert(&mut self, session_id: &str, rows: Vec<Vec<f64>>) {
        self.values.insert(session_id.to_string(), rows);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("session_id,utterance_index,indicator_index,value\n");
        for (sid, rows) in &self.values {
            for (u, row) in rows.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    let _ = writeln!(out, "{sid},{u},{k},{v}");
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            session_id: String,
            utterance_index: usize,
            indicator_index: usize,
            value: f64,
        }
        let mut values: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            let rows = values.entry(row.session_id).or_default();
            if rows.len() <= row.utterance_index {
                rows.resize(row.utterance_index + 1, Vec::new());
            }
            let r = &mut rows[row.utterance_index];
            if r.len() <= row.indicator_index {
                r.resize(row.indicator_index + 1, f64::NAN);
            }
            r[row.indicator_index] = row.value;
        }
        // partially written sessions are dropped and re-queried
        values.retain(|_, rows| {
            let width = rows.first().map_or(0, Vec::len);
            rows.iter()
                .all(|r| r.len() == width && r.iter().all(|v| !v.is_nan()))
        });
        Ok(LlmCache { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::from_csv(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

/// Like [`featurize_llm`] but reuses cached sessions and stores new ones.
pub fn featurize_llm_cached(
    backend: &dyn ChatBackend,
    session: &Session,
    indicators: &IndicatorSet,
    options: &LlmOptions,
    cache: &mut LlmCache,
) -> Result<Vec<LlmVector>> {
    if let Some(rows) = cache.get(&session.session_id) {
        if rows.len() == session.utterances.len()
            && rows.iter().all(|r| r.len() == indicators.len())
        {
            return Ok(rows.iter().cloned().map(LlmVector).collect());
        }
    }
    let vectors = featurize_llm(backend, session, indicators, options)?;
    cache.insert(
        &session.session_id,
        vectors.iter().map(|v| v.0.clone()).collect(),
    );
    Ok(vectors)
}
