//! Bag-of-words features over shingled n-grams.
//!
//! Text is lowercased and stripped of `,` and `.`, then split on whitespace.
//! Stop-words stay in the token stream so that multi-word entries such as
//! "in the" can form; only candidates that *are* a stop-word are rejected.
//! Two pseudo-tokens follow the n-gram entries: `?` counts question marks
//! and ` ` counts spaces in the raw utterance.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 300;
pub const DEFAULT_MAX_N: usize = 4;
pub const PSEUDO_TOKENS: [&str; 2] = ["?", " "];

static STOP_WORDS_TXT: &str = include_str!("../data/stopwords.txt");

pub fn stop_words() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOP_WORDS_TXT.lines().filter(|l| !l.is_empty()).collect())
}

pub fn is_stop_word(s: &str) -> bool {
    stop_words().contains(s)
}

pub fn normalize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace([',', '.'], "")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Count every contiguous window of each length in `ns`, joined by spaces.
pub fn extract_ngrams<S: AsRef<str>>(tokens: &[S], ns: &[usize]) -> HashMap<String, u64> {
    let mut out = HashMap::new();
    for &n in ns {
        if n == 0 || n > tokens.len() {
            continue;
        }
        for window in tokens.windows(n) {
            let gram = window
                .iter()
                .map(AsRef::as_ref)
                .collect::<Vec<_>>()
                .join(" ");
            *out.entry(gram).or_insert(0) += 1;
        }
    }
    out
}

fn n_range(max_n: usize) -> Vec<usize> {
    (1..=max_n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    entries: Vec<String>,
    frequencies: Vec<u64>,
    max_n: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(entries: Vec<String>, frequencies: Vec<u64>, max_n: usize) -> Result<Self> {
        if entries.len() != frequencies.len() {
            return Err(Error::DimensionMismatch {
                expected: entries.len(),
                actual: frequencies.len(),
            });
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if is_stop_word(e) {
                return Err(Error::InvalidInput(format!(
                    "vocabulary entry {e:?} is a stop-word"
                )));
            }
            if index.insert(e.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary entry {e:?}")));
            }
        }
        Ok(Vocabulary {
            entries,
            frequencies,
            max_n,
            index,
        })
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }

    /// Feature dimensionality: entries plus the two pseudo-tokens.
    pub fn dim(&self) -> usize {
        self.entries.len() + PSEUDO_TOKENS.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .cloned()
            .chain(PSEUDO_TOKENS.iter().map(|s| s.to_string()))
            .collect()
    }

    pub fn position(&self, gram: &str) -> Option<usize> {
        self.index.get(gram).copied()
    }

    /// `<ngram>\t<frequency>` per line; pseudo-tokens last with frequency 0.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (e, f) in self.entries.iter().zip(&self.frequencies) {
            let _ = writeln!(out, "{e}\t{f}");
        }
        for p in PSEUDO_TOKENS {
            let _ = writeln!(out, "{p}\t0");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < PSEUDO_TOKENS.len() {
            return Err(Error::VocabularyFormat {
                line: lines.len(),
                message: "missing pseudo-token lines".into(),
            });
        }
        let split = lines.len() - PSEUDO_TOKENS.len();
        for (i, (line, p)) in lines[split..].iter().zip(PSEUDO_TOKENS).enumerate() {
            if *line != format!("{p}\t0") {
                return Err(Error::VocabularyFormat {
                    line: split + i + 1,
                    message: format!("expected pseudo-token {p:?} with frequency 0"),
                });
            }
        }
        let mut entries = Vec::with_capacity(split);
        let mut frequencies = Vec::with_capacity(split);
        let mut max_n = 1;
        for (i, line) in lines[..split].iter().enumerate() {
            let (gram, freq) = line.rsplit_once('\t').ok_or_else(|| Error::VocabularyFormat {
                line: i + 1,
                message: "expected <ngram>\\t<frequency>".into(),
            })?;
            let freq = freq.parse().map_err(|_| Error::VocabularyFormat {
                line: i + 1,
                message: format!("bad frequency {freq:?}"),
            })?;
            max_n = max_n.max(gram.split(' ').count());
            entries.push(gram.to_string());
            frequencies.push(freq);
        }
        Vocabulary::new(entries, frequencies, max_n.max(DEFAULT_MAX_N))
    }

    pub fn featurize(&self, text: &str) -> BowVector {
        let mut counts = vec![0u32; self.dim()];
        let tokens = normalize(text);
        for (gram, c) in extract_ngrams(&tokens, &n_range(self.max_n)) {
            if let Some(i) = self.position(&gram) {
                counts[i] += c as u32;
            }
        }
        let n = self.entries.len();
        counts[n] = text.matches('?').count() as u32;
        counts[n + 1] = text.matches(' ').count() as u32;
        BowVector(counts)
    }
}

/// Count candidates over all texts and keep the `k` most frequent
/// non-stop-word n-grams (ties lexicographically ascending).
pub fn build_vocabulary<'a, I>(texts: I, k: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    build_vocabulary_with(texts, k, DEFAULT_MAX_N)
}

pub fn build_vocabulary_with<'a, I>(texts: I, k: usize, max_n: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let ns = n_range(max_n);
    let mut totals: HashMap<String, u64> = HashMap::new();
    for text in texts {
        for (gram, c) in extract_ngrams(&normalize(text), &ns) {
            *totals.entry(gram).or_insert(0) += c;
        }
    }
    let mut candidates: Vec<(String, u64)> = totals
        .into_iter()
        .filter(|(g, _)| !is_stop_word(g))
        .collect();
    if candidates.len() < k {
        return Err(Error::UnderfullVocabulary {
            requested: k,
            available: candidates.len(),
        });
    }
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    candidates.truncate(k);
    let (entries, frequencies) = candidates.into_iter().unzip();
    Vocabulary::new(entries, frequencies, max_n)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BowVector(pub Vec<u32>);

impl BowVector {
    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Words,
    Questions,
    Both,
}

impl BaselineMode {
    pub fn feature_names(self) -> Vec<String> {
        match self {
            BaselineMode::Words => vec!["#words".into()],
            BaselineMode::Questions => vec!["#questions".into()],
            BaselineMode::Both => vec!["#words".into(), "#questions".into()],
        }
    }
}

/// Word count is approximated by the number of spaces in the raw text.
pub fn baseline_features(text: &str, mode: BaselineMode) -> Vec<f64> {
    let words = text.matches(' ').count() as f64;
    let questions = text.matches('?').count() as f64;
    match mode {
        BaselineMode::Words => vec![words],
        BaselineMode::Questions => vec![questions],
        BaselineMode::Both => vec![words, questions],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, u64)]) -> HashMap<String, u64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn stop_word_list_has_33_entries() {
        assert_eq!(stop_words().len(), 33);
        assert!(is_stop_word("the"));
        assert!(is_stop_word("with"));
        assert!(!is_stop_word("you"));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("The dog, is BIG."), vec!["the", "dog", "is", "big"]);
        assert_eq!(normalize("What animal roars?"), vec!["what", "animal", "roars?"]);
        assert!(normalize("").is_empty());
        assert_eq!(normalize("  a\t b\n"), vec!["a", "b"]);
    }

    #[test]
    fn ngram_examples() {
        let toks = ["a", "b", "c"];
        assert_eq!(
            extract_ngrams(&toks, &[1, 2]),
            counts(&[("a", 1), ("b", 1), ("c", 1), ("a b", 1), ("b c", 1)])
        );
        assert_eq!(extract_ngrams(&["go", "go", "go"], &[2]), counts(&[("go go", 2)]));
        assert!(extract_ngrams(&["dog"], &[4]).is_empty());
        assert_eq!(extract_ngrams(&["dog"], &[1]), counts(&[("dog", 1)]));
    }

    #[test]
    fn stop_words_excluded_but_embedded_allowed() {
        let texts = ["the you go in the", "you go in the park", "the"];
        let v = build_vocabulary(texts, 3).unwrap();
        assert!(!v.entries().iter().any(|e| e == "the" || e == "in"));
        let all = build_vocabulary(texts, 10).unwrap();
        assert!(all.entries().iter().any(|e| e == "in the"));
    }

    #[test]
    fn frequency_ranking_skips_stop_words() {
        let mut texts = Vec::new();
        texts.extend(std::iter::repeat_n("you", 50));
        texts.extend(std::iter::repeat_n("the", 80));
        texts.extend(std::iter::repeat_n("go", 40));
        let v = build_vocabulary(texts.iter().copied(), 2).unwrap();
        assert_eq!(v.entries(), ["you", "go"]);
        assert_eq!(v.frequencies(), [50, 40]);
        let names = v.feature_names();
        assert_eq!(&names[names.len() - 2..], ["?", " "]);
    }

    #[test]
    fn tie_broken_lexicographically() {
        let v = build_vocabulary(["dog cat zebra zebra"], 2).unwrap();
        // zebra=2; cat, dog and every bigram tie at 1
        assert_eq!(v.entries(), ["zebra", "cat"]);
    }

    #[test]
    fn underfull_vocabulary_reports_available() {
        match build_vocabulary(["a b"], 10) {
            Err(Error::UnderfullVocabulary { requested, available }) => {
                assert_eq!(requested, 10);
                // "b" and "a b"
                assert_eq!(available, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn featurize_counts_pseudo_tokens_on_raw_text() {
        let v = Vocabulary::new(vec!["what".into(), "go go".into()], vec![1, 1], 4).unwrap();
        let x = v.featurize("What animal roars?");
        assert_eq!(x.0, vec![1, 0, 1, 2]);
        assert_eq!(v.featurize("").0, vec![0, 0, 0, 0]);
        assert_eq!(v.featurize("go go go").0, vec![0, 2, 0, 2]);
    }

    #[test]
    fn default_dimensionality_is_302() {
        let words: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let v = build_vocabulary([text.as_str()], DEFAULT_VOCAB_SIZE).unwrap();
        assert_eq!(v.dim(), 302);
        assert_eq!(v.feature_names().len(), 302);
    }

    #[test]
    fn tsv_round_trip() {
        let v = build_vocabulary(["you go in the park ok?", "you go"], 5).unwrap();
        let text = v.to_tsv();
        assert!(text.ends_with("?\t0\n \t0\n"));
        let back = Vocabulary::from_tsv(&text).unwrap();
        assert_eq!(back.entries(), v.entries());
        assert_eq!(back.frequencies(), v.frequencies());
        assert_eq!(back.to_tsv(), text);
    }

    #[test]
    fn tsv_rejects_stop_word_and_missing_pseudo() {
        assert!(Vocabulary::from_tsv("the\t3\n?\t0\n \t0\n").is_err());
        assert!(Vocabulary::from_tsv("you\t3\n").is_err());
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(baseline_features("Why is it blue?", BaselineMode::Both), vec![3.0, 1.0]);
        assert_eq!(baseline_features("", BaselineMode::Both), vec![0.0, 0.0]);
        assert_eq!(baseline_features("Go.", BaselineMode::Words), vec![0.0]);
        assert_eq!(baseline_features("Go?", BaselineMode::Questions), vec![1.0]);
    }

    #[test]
    fn junction_grams_only_add() {
        let v = build_vocabulary(["x y z x y", "y z"], 6).unwrap();
        let left = v.featurize("x y");
        let right = v.featurize("z");
        let joined = v.featurize("x y z");
        let n = v.entries().len();
        for i in 0..n {
            assert!(joined.0[i] >= left.0[i] + right.0[i]);
        }
        // unigram-only vocabulary: no n-gram spans the junction
        let uni = Vocabulary::new(vec!["x".into(), "y".into(), "z".into()], vec![1, 1, 1], 1).unwrap();
        let sum: Vec<u32> = uni.featurize("x y").0[..3]
            .iter()
            .zip(&uni.featurize("z").0[..3])
            .map(|(x, y)| x + y)
            .collect();
        assert_eq!(&uni.featurize("x y z").0[..3], &sum[..]);
    }
}
