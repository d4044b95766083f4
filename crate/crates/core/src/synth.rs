//! Deterministic synthetic corpora with a planted linear signal.
//!
//! Each session mixes filler utterances with two planted phrases repeated
//! `c1` and `c2` times (uniform in 0..=9). Per dimension the target is
//! `base + β1·c1 + β2·c2 + ε`, where the noise sd is chosen from the realized
//! signal so that corr(target, signal) is about `target_r`. Two labelers
//! score each session symmetrically around the target, so the mean label
//! equals it up to rounding. With `planted = false` targets ignore the
//! counts entirely.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    export_whisper, labels_to_csv, Corpus, Dimension, LabelRecord, LabelTable, Protocol, Session,
    Utterance,
};
use crate::error::{Error, Result};
use crate::eval::pearson;

pub const PLANTED: [&str; 2] = ["why do you think", "tell me more"];

const FILLER: &[&str] = &[
    "blocks", "paint", "circle", "table", "outside", "lunch", "puzzle", "water", "sand", "green",
    "yellow", "purple", "tower", "build", "draw", "color", "count", "jump", "listen", "look",
    "carpet", "chair", "truck", "train", "book", "story", "page", "finger", "hands", "shoes",
    "jacket", "snack", "apple", "banana", "cracker", "milk", "cup", "spoon", "bowl", "clean",
    "sticky", "glue", "paper", "scissors", "crayon", "marker", "line", "square", "triangle",
    "big", "small", "tall", "short", "heavy", "light", "soft", "loud", "quiet", "careful",
    "gentle", "friend", "turn", "share", "wait", "sit", "stand", "walk", "run", "slow", "fast",
    "window", "door", "shelf", "basket", "doll", "ball", "rope", "slide", "swing", "bucket",
    "shovel", "leaf", "tree", "flower", "bug", "worm", "bird", "dog", "cat", "fish", "rain",
    "sun", "cloud", "cold", "warm", "wet", "dry", "first", "next", "last", "again", "good",
    "nice", "great", "okay", "yes", "wow", "here", "over", "under", "behind", "inside", "top",
    "bottom", "open", "close", "push", "pull", "stack", "roll", "pour", "mix", "sing", "song",
];

const QUESTIONS: &[&str] = &["what color is it?", "where does it go?", "who has the ball?", "is it big?"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub sessions: usize,
    pub teachers: usize,
    pub planted: bool,
    pub target_r: f64,
    pub utterances: (usize, usize),
    pub protocol: Protocol,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            sessions: 50,
            teachers: 10,
            planted: true,
            target_r: 0.95,
            utterances: (30, 50),
            protocol: Protocol::PreK,
        }
    }
}

/// Planted-signal weights for the dimension targets.
pub fn weights(dimension: Dimension) -> (f64, f64, f64) {
    match dimension {
        Dimension::Dim1 => (1.5, 0.30, 0.20),
        Dimension::Dim2 => (1.5, 0.20, 0.30),
        Dimension::Dim3 => (1.2, 0.25, 0.10),
        Dimension::Domain => unreachable!("domain targets are sums of the parts"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTruth {
    pub session_id: String,
    pub c1: u32,
    pub c2: u32,
    pub targets: BTreeMap<Dimension, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthReport {
    pub config: SynthConfig,
    pub planted_phrases: Vec<String>,
    pub weights: BTreeMap<Dimension, (f64, f64, f64)>,
    pub noise_sd: BTreeMap<Dimension, f64>,
    /// Correlation between the mean labels and the noiseless signal.
    pub oracle_r: BTreeMap<Dimension, Option<f64>>,
    pub truth: Vec<SessionTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub labels: LabelTable,
    pub report: SynthReport,
}

fn filler_sentence(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.1) {
        return QUESTIONS.choose(rng).expect("non-empty").to_string();
    }
    let n = rng.random_range(3..=9);
    let words: Vec<&str> = (0..n).map(|_| *FILLER.choose(rng).expect("non-empty")).collect();
    let mut s = words.join(" ");
    s.push(if rng.random_bool(0.5) { '.' } else { ',' });
    s
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn pop_sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.sessions == 0 || config.teachers == 0 || config.teachers > config.sessions {
        return Err(Error::InvalidInput(format!(
            "need 0 < teachers <= sessions, got {} teachers for {} sessions",
            config.teachers, config.sessions
        )));
    }
    if !(config.target_r > 0.0 && config.target_r <= 1.0) {
        return Err(Error::InvalidInput(format!("target_r {} outside (0, 1]", config.target_r)));
    }
    let (lo, hi) = config.utterances;
    if lo == 0 || hi < lo {
        return Err(Error::InvalidInput(format!("bad utterance range {lo}..={hi}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = (config.sessions - 1).to_string().len().max(2);
    let mut sessions = Vec::with_capacity(config.sessions);
    let mut counts = Vec::with_capacity(config.sessions);
    for i in 0..config.sessions {
        let c1 = rng.random_range(0..10u32);
        let c2 = rng.random_range(0..10u32);
        let n_filler = rng.random_range(lo..=hi);
        let mut texts: Vec<String> = (0..n_filler).map(|_| filler_sentence(&mut rng)).collect();
        for (phrase, c) in PLANTED.iter().zip([c1, c2]) {
            for _ in 0..c {
                let at = rng.random_range(0..=texts.len());
                let text = if *phrase == PLANTED[0] {
                    format!("{phrase} the {}?", FILLER.choose(&mut rng).expect("non-empty"))
                } else {
                    format!("{phrase} about the {}.", FILLER.choose(&mut rng).expect("non-empty"))
                };
                texts.insert(at, text);
            }
        }
        let slot = 900.0 / texts.len() as f64;
        let utterances = texts
            .into_iter()
            .enumerate()
            .map(|(index, text)| {
                let start = round2(index as f64 * slot + rng.random_range(0.0..slot * 0.2));
                let end = round2(start + slot * rng.random_range(0.4..0.75));
                Utterance {
                    index,
                    start_s: start,
                    end_s: end,
                    text,
                }
            })
            .collect();
        sessions.push(Session {
            session_id: format!("s{i:0width$}"),
            teacher_id: format!("t{:02}", i % config.teachers),
            utterances,
            labels: Vec::new(),
        });
        counts.push((c1, c2));
    }

    let mut truth: Vec<SessionTruth> = sessions
        .iter()
        .zip(&counts)
        .map(|(s, &(c1, c2))| SessionTruth {
            session_id: s.session_id.clone(),
            c1,
            c2,
            targets: BTreeMap::new(),
        })
        .collect();
    let mut weight_map = BTreeMap::new();
    let mut noise_sd = BTreeMap::new();
    let mut signals: BTreeMap<Dimension, Vec<f64>> = BTreeMap::new();
    let mut labels = LabelTable::new();
    for dim in Dimension::PARTS {
        let (base, b1, b2) = weights(dim);
        weight_map.insert(dim, (base, b1, b2));
        let signal: Vec<f64> = counts
            .iter()
            .map(|&(c1, c2)| base + b1 * c1 as f64 + b2 * c2 as f64)
            .collect();
        let r = config.target_r;
        let sd = pop_sd(&signal) * (1.0 / (r * r) - 1.0).sqrt();
        noise_sd.insert(dim, sd);
        let normal = Normal::new(0.0, if config.planted { sd } else { pop_sd(&signal).max(1.0) })
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let center = signal.iter().sum::<f64>() / signal.len() as f64;
        for (i, t) in truth.iter_mut().enumerate() {
            let mean = if config.planted { signal[i] } else { center };
            // keep both labelers inside [1, 7]
            let y = (mean + normal.sample(&mut rng)).clamp(1.5, 6.5);
            let e = rng.random_range(-0.5..0.5);
            let (a, b) = (round2(y + e), round2(y - e));
            t.targets.insert(dim, (a + b) / 2.0);
            let recs = labels.entry(t.session_id.clone()).or_default();
            recs.push(LabelRecord {
                labeler_id: "L1".into(),
                dimension: dim,
                score: a,
            });
            recs.push(LabelRecord {
                labeler_id: "L2".into(),
                dimension: dim,
                score: b,
            });
        }
        signals.insert(dim, signal);
    }
    // domain rows exactly as the label parser would synthesize them
    let labels = crate::corpus::parse_labels(labels_to_csv(&labels).as_bytes())?;
    signals.insert(
        Dimension::Domain,
        (0..config.sessions)
            .map(|i| Dimension::PARTS.iter().map(|d| signals[d][i]).sum())
            .collect(),
    );
    let mut corpus = Corpus::new(config.protocol, sessions)?;
    corpus.attach_labels(&labels);
    let mut oracle_r = BTreeMap::new();
    for dim in Dimension::ALL {
        let y: Vec<f64> = corpus
            .sessions
            .iter()
            .map(|s| s.mean_target(dim))
            .collect::<Result<_>>()?;
        oracle_r.insert(dim, pearson(&y, &signals[&dim])?);
        for (t, v) in truth.iter_mut().zip(&y) {
            t.targets.insert(dim, *v);
        }
    }
    Ok(SynthCorpus {
        corpus,
        labels,
        report: SynthReport {
            config: config.clone(),
            planted_phrases: PLANTED.iter().map(|s| s.to_string()).collect(),
            weights: weight_map,
            noise_sd,
            oracle_r,
            truth,
        },
    })
}

impl SynthCorpus {
    /// Write `transcripts/<id>.json`, `manifest.csv`, `labels.csv` and
    /// `synth.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let tdir = dir.join("transcripts");
        fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        let mut manifest = csv::Writer::from_writer(Vec::new());
        manifest.write_record(["session_id", "teacher_id", "transcript"])?;
        for s in &self.corpus.sessions {
            let rel = format!("transcripts/{}.json", s.session_id);
            let path = dir.join(&rel);
            fs::write(&path, export_whisper(s)).map_err(|e| Error::io(&path, e))?;
            manifest.write_record([s.session_id.as_str(), s.teacher_id.as_str(), rel.as_str()])?;
        }
        let bytes = manifest
            .into_inner()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        for (name, content) in [
            ("manifest.csv", bytes),
            ("labels.csv", labels_to_csv(&self.labels).into_bytes()),
            ("synth.json", {
                let mut s = serde_json::to_string_pretty(&self.report)?;
                s.push('\n');
                s.into_bytes()
            }),
        ] {
            let path = dir.join(name);
            fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
