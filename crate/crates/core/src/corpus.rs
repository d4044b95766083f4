//! Transcripts, multi-rater labels and the in-memory corpus.
//!
//! Transcripts arrive as transcriber output (a flat list of segments or an
//! object carrying a `segments` list); only `start`, `end` and `text` are
//! read. Labels are a CSV table with one row per (session, labeler,
//! dimension).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal session length in seconds.
pub const SESSION_SECONDS: f64 = 900.0;

pub const LABELS_HEADER: [&str; 4] = ["session_id", "labeler_id", "dimension", "score"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Toddler,
    #[serde(rename = "prek")]
    PreK,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Toddler => f.write_str("toddler"),
            Protocol::PreK => f.write_str("prek"),
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toddler" => Ok(Protocol::Toddler),
            "prek" => Ok(Protocol::PreK),
            other => Err(Error::InvalidInput(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Scored construct. `Dim1` is Facilitation of Learning and Development
/// (Toddler) or Concept Development (PreK), `Dim2` Quality of Feedback,
/// `Dim3` Language Modeling, and `Domain` their sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Dim1,
    Dim2,
    Dim3,
    Domain,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Dim1,
        Dimension::Dim2,
        Dimension::Dim3,
        Dimension::Domain,
    ];
    pub const PARTS: [Dimension; 3] = [Dimension::Dim1, Dimension::Dim2, Dimension::Dim3];

    pub fn score_range(self) -> (f64, f64) {
        match self {
            Dimension::Domain => (3.0, 21.0),
            _ => (1.0, 7.0),
        }
    }

    /// Integer category range used by the weighted kappa.
    pub fn kappa_range(self) -> (i64, i64) {
        match self {
            Dimension::Domain => (1, 21),
            _ => (1, 7),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Dimension::Dim1 => "dim1",
            Dimension::Dim2 => "dim2",
            Dimension::Dim3 => "dim3",
            Dimension::Domain => "domain",
        }
    }

    pub fn title(self, protocol: Protocol) -> &'static str {
        match (self, protocol) {
            (Dimension::Dim1, Protocol::Toddler) => "Fac Learn & Dev",
            (Dimension::Dim1, Protocol::PreK) => "Con Dev",
            (Dimension::Dim2, _) => "Qual Fdbk",
            (Dimension::Dim3, _) => "Lang Modeling",
            (Dimension::Domain, _) => "Inst Support",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dim1" => Ok(Dimension::Dim1),
            "dim2" => Ok(Dimension::Dim2),
            "dim3" => Ok(Dimension::Dim3),
            "domain" => Ok(Dimension::Domain),
            other => Err(Error::InvalidInput(format!("unknown dimension {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub labeler_id: String,
    pub dimension: Dimension,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub teacher_id: String,
    pub utterances: Vec<Utterance>,
    #[serde(skip)]
    pub labels: Vec<LabelRecord>,
}

impl Session {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.utterances.iter().map(|u| u.text.as_str())
    }

    /// Mean score over labelers for one dimension.
    pub fn mean_target(&self, dimension: Dimension) -> Result<f64> {
        let scores: Vec<f64> = self
            .labels
            .iter()
            .filter(|l| l.dimension == dimension)
            .map(|l| l.score)
            .collect();
        if scores.is_empty() {
            return Err(Error::MissingLabel {
                session_id: self.session_id.clone(),
                dimension,
            });
        }
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    pub fn score_by(&self, labeler_id: &str, dimension: Dimension) -> Option<f64> {
        self.labels
            .iter()
            .find(|l| l.labeler_id == labeler_id && l.dimension == dimension)
            .map(|l| l.score)
    }

    /// Native JSON document (labels are carried separately).
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("session serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let session: Session = serde_json::from_str(text)?;
        for (i, u) in session.utterances.iter().enumerate() {
            if u.index != i {
                return Err(Error::InvalidInput(format!(
                    "session {}: utterance indices must be contiguous from 0 (found {} at position {i})",
                    session.session_id, u.index
                )));
            }
        }
        Ok(session)
    }
}

/// Timing conditions that are reported but not enforced.
pub fn timing_warnings(session: &Session) -> Vec<String> {
    let mut out = Vec::new();
    for u in &session.utterances {
        if u.start_s > u.end_s {
            out.push(format!(
                "{} utterance {}: start {} after end {}",
                session.session_id, u.index, u.start_s, u.end_s
            ));
        }
        if u.start_s < 0.0 || u.end_s > SESSION_SECONDS {
            out.push(format!(
                "{} utterance {}: span [{}, {}] outside [0, {SESSION_SECONDS}]",
                session.session_id, u.index, u.start_s, u.end_s
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ImportOptions {
    /// Keep segments whose text is blank instead of dropping them.
    pub keep_empty_text: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

#[derive(Deserialize)]
struct NestedTranscript {
    segments: Vec<Segment>,
}

fn byte_offset(text: &str, err: &serde_json::Error) -> usize {
    let line = err.line();
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + err.column().saturating_sub(1)).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

/// Parse transcriber output into segments, in file order.
pub fn parse_segments(text: &str) -> Result<Vec<Segment>> {
    let trimmed = text.trim_start();
    let to_err = |e: serde_json::Error| Error::TranscriptParse {
        offset: byte_offset(text, &e),
        message: e.to_string(),
    };
    if trimmed.starts_with('[') {
        serde_json::from_str::<Vec<Segment>>(text).map_err(to_err)
    } else {
        serde_json::from_str::<NestedTranscript>(text)
            .map(|doc| doc.segments)
            .map_err(to_err)
    }
}

pub fn session_from_segments(
    segments: Vec<Segment>,
    session_id: &str,
    teacher_id: &str,
    options: ImportOptions,
) -> Result<Session> {
    let utterances: Vec<Utterance> = segments
        .into_iter()
        .filter(|s| options.keep_empty_text || !s.text.trim().is_empty())
        .enumerate()
        .map(|(index, s)| Utterance {
            index,
            start_s: s.start,
            end_s: s.end,
            text: s.text,
        })
        .collect();
    if utterances.iter().all(|u| u.text.trim().is_empty()) {
        return Err(Error::EmptySession(session_id.to_string()));
    }
    let session = Session {
        session_id: session_id.to_string(),
        teacher_id: teacher_id.to_string(),
        utterances,
        labels: Vec::new(),
    };
    for w in timing_warnings(&session) {
        log::warn!("{w}");
    }
    Ok(session)
}

pub fn import_whisper_str(
    text: &str,
    session_id: &str,
    teacher_id: &str,
    options: ImportOptions,
) -> Result<Session> {
    session_from_segments(parse_segments(text)?, session_id, teacher_id, options)
}

pub fn import_whisper(
    path: &Path,
    session_id: &str,
    teacher_id: &str,
    options: ImportOptions,
) -> Result<Session> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    import_whisper_str(&text, session_id, teacher_id, options)
}

/// Flat segments document for a session.
pub fn export_whisper(session: &Session) -> String {
    let segments: Vec<Segment> = session
        .utterances
        .iter()
        .map(|u| Segment {
            start: u.start_s,
            end: u.end_s,
            text: u.text.clone(),
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&segments).expect("segments serialize");
    out.push('\n');
    out
}

/// Labels keyed by session id.
pub type LabelTable = BTreeMap<String, Vec<LabelRecord>>;

#[derive(Debug, Deserialize)]
struct LabelRow {
    session_id: String,
    labeler_id: String,
    dimension: String,
    score: f64,
}

pub fn parse_labels<R: std::io::Read>(reader: R) -> Result<LabelTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != LABELS_HEADER {
        return Err(Error::LabelValidation {
            line: 1,
            message: format!("header must be exactly {}", LABELS_HEADER.join(",")),
        });
    }
    let mut table = LabelTable::new();
    let mut seen = BTreeSet::new();
    for row in rdr.deserialize::<LabelRow>() {
        let row = row?;
        // header is line 1; records follow in order
        let line = seen.len() as u64 + 2;
        let dimension: Dimension = row
            .dimension
            .parse()
            .map_err(|e: Error| Error::LabelValidation {
                line,
                message: e.to_string(),
            })?;
        let (lo, hi) = dimension.score_range();
        if !(row.score.is_finite() && (lo..=hi).contains(&row.score)) {
            return Err(Error::LabelValidation {
                line,
                message: format!(
                    "{} score {} outside [{lo}, {hi}]",
                    dimension, row.score
                ),
            });
        }
        let key = (row.session_id.clone(), row.labeler_id.clone(), dimension);
        if !seen.insert(key) {
            return Err(Error::LabelValidation {
                line,
                message: format!(
                    "duplicate ({}, {}, {})",
                    row.session_id, row.labeler_id, dimension
                ),
            });
        }
        table.entry(row.session_id).or_default().push(LabelRecord {
            labeler_id: row.labeler_id,
            dimension,
            score: row.score,
        });
    }
    for (session_id, records) in table.iter_mut() {
        synthesize_domain(session_id, records)?;
    }
    Ok(table)
}

fn synthesize_domain(session_id: &str, records: &mut Vec<LabelRecord>) -> Result<()> {
    let labelers: BTreeSet<String> = records.iter().map(|r| r.labeler_id.clone()).collect();
    for labeler in labelers {
        let score = |d: Dimension| {
            records
                .iter()
                .find(|r| r.labeler_id == labeler && r.dimension == d)
                .map(|r| r.score)
        };
        let parts: Option<Vec<f64>> = Dimension::PARTS.iter().map(|&d| score(d)).collect();
        let Some(parts) = parts else { continue };
        let sum = parts[0] + parts[1] + parts[2];
        match score(Dimension::Domain) {
            Some(explicit) if explicit != sum => {
                return Err(Error::LabelValidation {
                    line: 0,
                    message: format!(
                        "session {session_id} labeler {labeler}: domain {explicit} != dim1+dim2+dim3 = {sum}"
                    ),
                });
            }
            Some(_) => {}
            None => records.push(LabelRecord {
                labeler_id: labeler,
                dimension: Dimension::Domain,
                score: sum,
            }),
        }
    }
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<LabelTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_labels(file)
}

/// Serialize a label table (rows sorted by session, labeler, dimension).
pub fn labels_to_csv(table: &LabelTable) -> String {
    let mut rows: Vec<(&str, &LabelRecord)> = table
        .iter()
        .flat_map(|(s, recs)| recs.iter().map(move |r| (s.as_str(), r)))
        .collect();
    rows.sort_by(|a, b| {
        (a.0, a.1.labeler_id.as_str(), a.1.dimension).cmp(&(
            b.0,
            b.1.labeler_id.as_str(),
            b.1.dimension,
        ))
    });
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(LABELS_HEADER).expect("in-memory write");
    for (s, r) in rows {
        wtr.write_record([s, &r.labeler_id, r.dimension.token(), &r.score.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("flush")).expect("utf8")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub protocol: Protocol,
    pub sessions: Vec<Session>,
}

impl Corpus {
    pub fn new(protocol: Protocol, mut sessions: Vec<Session>) -> Result<Self> {
        sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        for pair in sessions.windows(2) {
            if pair[0].session_id == pair[1].session_id {
                return Err(Error::DuplicateSession(pair[0].session_id.clone()));
            }
        }
        if let Some(s) = sessions.iter().find(|s| s.teacher_id.is_empty()) {
            return Err(Error::InvalidInput(format!(
                "session {} has no teacher id",
                s.session_id
            )));
        }
        Ok(Corpus { protocol, sessions })
    }

    /// Attach labels; returns ids of labeled sessions absent from the corpus.
    pub fn attach_labels(&mut self, table: &LabelTable) -> Vec<String> {
        let ids: BTreeSet<&str> = self.sessions.iter().map(|s| s.session_id.as_str()).collect();
        let orphans = table
            .keys()
            .filter(|k| !ids.contains(k.as_str()))
            .cloned()
            .collect();
        for s in &mut self.sessions {
            s.labels = table.get(&s.session_id).cloned().unwrap_or_default();
        }
        orphans
    }

    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.sessions.iter().find(|s| s.session_id == session_id)
    }

    pub fn by_teacher(&self) -> BTreeMap<&str, Vec<&Session>> {
        let mut out: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
        for s in &self.sessions {
            out.entry(s.teacher_id.as_str()).or_default().push(s);
        }
        out
    }

    /// Sessions with a label for `dimension`, plus the number excluded.
    pub fn labeled(&self, dimension: Dimension) -> (Vec<&Session>, usize) {
        let (with, without): (Vec<&Session>, Vec<&Session>) = self
            .sessions
            .iter()
            .partition(|s| s.labels.iter().any(|l| l.dimension == dimension));
        (with, without.len())
    }

    pub fn label_table(&self) -> LabelTable {
        self.sessions
            .iter()
            .filter(|s| !s.labels.is_empty())
            .map(|s| (s.session_id.clone(), s.labels.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub session_id: String,
    pub teacher_id: String,
    pub transcript: PathBuf,
}

/// Read `session_id,teacher_id,transcript` rows; transcript paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for row in rdr.deserialize::<ManifestEntry>() {
        let mut row = row?;
        if row.transcript.is_relative() {
            row.transcript = base.join(&row.transcript);
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct IngestOutcome {
    pub corpus: Corpus,
    pub empty_sessions: Vec<String>,
    pub orphan_labels: Vec<String>,
}

pub fn ingest(
    protocol: Protocol,
    manifest: &[ManifestEntry],
    labels: &LabelTable,
    options: ImportOptions,
) -> Result<IngestOutcome> {
    let mut sessions = Vec::new();
    let mut empty_sessions = Vec::new();
    for entry in manifest {
        match import_whisper(&entry.transcript, &entry.session_id, &entry.teacher_id, options) {
            Ok(s) => sessions.push(s),
            Err(Error::EmptySession(id)) => {
                log::info!("dropping session {id}: no detected speech");
                empty_sessions.push(id);
            }
            Err(e) => return Err(e),
        }
    }
    let mut corpus = Corpus::new(protocol, sessions)?;
    let orphan_labels = corpus.attach_labels(labels);
    Ok(IngestOutcome {
        corpus,
        empty_sessions,
        orphan_labels,
    })
}

pub fn session_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("{session_id}.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(csv: &str) -> Result<LabelTable> {
        parse_labels(csv.as_bytes())
    }

    #[test]
    fn imports_flat_segments() {
        let doc = r#"[{"start":0.0,"end":2.1,"text":"What animal roars?"},{"start":2.5,"end":3.0,"text":"Yes"}]"#;
        let s = import_whisper_str(doc, "s1", "t1", ImportOptions::default()).unwrap();
        assert_eq!(s.utterances.len(), 2);
        assert_eq!(s.utterances[0].index, 0);
        assert_eq!(s.utterances[1].index, 1);
        assert_eq!(s.utterances[0].text, "What animal roars?");
        assert_eq!(s.utterances[1].start_s, 2.5);
    }

    #[test]
    fn imports_nested_verbose_form() {
        let doc = r#"{"text":" hi there","language":"en","segments":[
            {"id":0,"seek":0,"start":0.0,"end":1.0,"text":" hi","tokens":[1,2],"avg_logprob":-0.2},
            {"id":1,"seek":0,"start":1.0,"end":2.0,"text":" there","tokens":[3]}]}"#;
        let s = import_whisper_str(doc, "s1", "t1", ImportOptions::default()).unwrap();
        assert_eq!(s.texts().collect::<Vec<_>>(), vec![" hi", " there"]);
    }

    #[test]
    fn blank_only_session_is_empty() {
        let doc = r#"[{"start":0.0,"end":1.0,"text":"   "}]"#;
        let err = import_whisper_str(doc, "s1", "t1", ImportOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptySession(id) if id == "s1"));
    }

    #[test]
    fn blank_segments_dropped_and_reindexed() {
        let doc = r#"[{"start":0,"end":1,"text":"a"},{"start":1,"end":2,"text":" "},{"start":2,"end":3,"text":"b"}]"#;
        let s = import_whisper_str(doc, "s", "t", ImportOptions::default()).unwrap();
        assert_eq!(s.utterances.len(), 2);
        assert_eq!(s.utterances[1].index, 1);
        assert_eq!(s.utterances[1].text, "b");
        let kept = import_whisper_str(
            doc,
            "s",
            "t",
            ImportOptions {
                keep_empty_text: true,
            },
        )
        .unwrap();
        assert_eq!(kept.utterances.len(), 3);
    }

    #[test]
    fn reversed_timing_is_accepted_with_warning() {
        let doc = r#"[{"start":5.0,"end":4.0,"text":"hm"},{"start":6.0,"end":7.0,"text":"ok"}]"#;
        let s = import_whisper_str(doc, "s", "t", ImportOptions::default()).unwrap();
        assert_eq!(s.utterances[0].start_s, 5.0);
        assert_eq!(s.utterances[1].text, "ok");
        let w = timing_warnings(&s);
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("after end"));
    }

    #[test]
    fn malformed_document_reports_offset() {
        let doc = "[{\"start\":0.0,\"end\":1.0,\"text\":\"a\"},\n {\"start\": oops}]";
        match import_whisper_str(doc, "s", "t", ImportOptions::default()) {
            Err(Error::TranscriptParse { offset, .. }) => {
                assert!(offset > 35 && offset <= doc.len(), "offset {offset}");
                assert_eq!(&doc[offset..offset + 1], "o");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_parse_error() {
        let doc = r#"[{"start":0.0,"text":"a"}]"#;
        assert!(matches!(
            import_whisper_str(doc, "s", "t", ImportOptions::default()),
            Err(Error::TranscriptParse { .. })
        ));
    }

    #[test]
    fn export_import_round_trip() {
        let doc = r#"[{"start":0.1,"end":2.123456789,"text":"  What, animal?  "},{"start":3.3,"end":3.0,"text":"ok."}]"#;
        let s = import_whisper_str(doc, "s", "t", ImportOptions::default()).unwrap();
        let again = import_whisper_str(&export_whisper(&s), "s", "t", ImportOptions::default()).unwrap();
        assert_eq!(s.utterances, again.utterances);
    }

    #[test]
    fn native_format_round_trip() {
        let doc = r#"[{"start":0.0,"end":1.5,"text":"Why?"}]"#;
        let s = import_whisper_str(doc, "s9", "t2", ImportOptions::default()).unwrap();
        let back = Session::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(v["utterances"][0]["start_s"], 0.0);
        assert_eq!(v["teacher_id"], "t2");
    }

    #[test]
    fn domain_synthesized_from_three_dimensions() {
        let t = labels("session_id,labeler_id,dimension,score\ns1,a,dim1,4\ns1,a,dim2,3\ns1,a,dim3,5\n")
            .unwrap();
        let domain = t["s1"]
            .iter()
            .find(|r| r.dimension == Dimension::Domain)
            .unwrap();
        assert_eq!(domain.labeler_id, "a");
        assert_eq!(domain.score, 12.0);
    }

    #[test]
    fn partial_labeler_gets_no_domain() {
        let t = labels("session_id,labeler_id,dimension,score\ns1,a,dim1,4\ns1,a,dim2,3\n").unwrap();
        assert!(t["s1"].iter().all(|r| r.dimension != Dimension::Domain));
    }

    #[test]
    fn explicit_domain_must_match_sum() {
        let ok = labels("session_id,labeler_id,dimension,score\ns1,a,dim1,4\ns1,a,dim2,3\ns1,a,dim3,5\ns1,a,domain,12\n").unwrap();
        assert_eq!(ok["s1"].len(), 4);
        assert!(labels("session_id,labeler_id,dimension,score\ns1,a,dim1,4\ns1,a,dim2,3\ns1,a,dim3,5\ns1,a,domain,13\n").is_err());
    }

    #[test]
    fn out_of_range_score_rejected() {
        let err = labels("session_id,labeler_id,dimension,score\ns1,a,dim1,9\n").unwrap_err();
        assert!(matches!(err, Error::LabelValidation { line: 2, .. }), "{err}");
        assert!(labels("session_id,labeler_id,dimension,score\ns1,a,domain,2\n").is_err());
    }

    #[test]
    fn duplicate_label_rejected() {
        let err = labels("session_id,labeler_id,dimension,score\ns1,a,dim1,3\ns1,a,dim1,4\n").unwrap_err();
        assert!(matches!(err, Error::LabelValidation { line: 3, .. }), "{err}");
    }

    #[test]
    fn header_must_match() {
        assert!(labels("session,labeler,dimension,score\ns1,a,dim1,3\n").is_err());
    }

    #[test]
    fn mean_target_over_labelers() {
        let t = labels("session_id,labeler_id,dimension,score\ns1,a,dim1,3\ns1,b,dim1,5\ns2,a,dim1,4\n").unwrap();
        let mut c = Corpus::new(
            Protocol::PreK,
            ["s1", "s2", "s3"]
                .iter()
                .map(|id| Session {
                    session_id: id.to_string(),
                    teacher_id: "t".into(),
                    utterances: vec![],
                    labels: vec![],
                })
                .collect(),
        )
        .unwrap();
        c.attach_labels(&t);
        assert_eq!(c.session("s1").unwrap().mean_target(Dimension::Dim1).unwrap(), 4.0);
        assert_eq!(c.session("s2").unwrap().mean_target(Dimension::Dim1).unwrap(), 4.0);
        assert!(matches!(
            c.session("s3").unwrap().mean_target(Dimension::Dim1),
            Err(Error::MissingLabel { .. })
        ));
        let (labeled, excluded) = c.labeled(Dimension::Dim1);
        assert_eq!(labeled.len(), 2);
        assert_eq!(excluded, 1);
    }

    #[test]
    fn labels_csv_round_trip() {
        let t = labels("session_id,labeler_id,dimension,score\ns1,b,dim2,2.5\ns1,a,dim1,3\n").unwrap();
        let back = labels(&labels_to_csv(&t)).unwrap();
        let sorted = |t: &LabelTable| {
            let mut v: Vec<_> = t["s1"].clone();
            v.sort_by(|a, b| (&a.labeler_id, a.dimension).cmp(&(&b.labeler_id, b.dimension)));
            v
        };
        assert_eq!(sorted(&t), sorted(&back));
    }

    #[test]
    fn duplicate_session_ids_rejected() {
        let s = Session {
            session_id: "x".into(),
            teacher_id: "t".into(),
            utterances: vec![],
            labels: vec![],
        };
        assert!(matches!(
            Corpus::new(Protocol::Toddler, vec![s.clone(), s]),
            Err(Error::DuplicateSession(_))
        ));
    }
}
