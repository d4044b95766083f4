//! Session-level aggregation: per-utterance rows are summed, then z-scored
//! against training-set statistics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFeatures {
    pub session_id: String,
    pub feature_names: Vec<String>,
    /// One row per utterance, in utterance order.
    pub per_utterance: Vec<Vec<f64>>,
    /// Column sums of `per_utterance`.
    pub g: Vec<f64>,
}

impl SessionFeatures {
    pub fn new(
        session_id: &str,
        feature_names: Vec<String>,
        per_utterance: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let g = sum_features_with_dim(&per_utterance, feature_names.len())?;
        Ok(SessionFeatures {
            session_id: session_id.to_string(),
            feature_names,
            per_utterance,
            g,
        })
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn standardized(&self, standardizer: &Standardizer) -> Result<Vec<f64>> {
        standardizer.standardize(&self.g)
    }

    /// Keep only the listed columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> Result<SessionFeatures> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.dim()) {
            return Err(Error::InvalidInput(format!(
                "column {bad} out of range for {} features",
                self.dim()
            )));
        }
        let rows = self
            .per_utterance
            .iter()
            .map(|r| columns.iter().map(|&c| r[c]).collect())
            .collect();
        let names = columns.iter().map(|&c| self.feature_names[c].clone()).collect();
        SessionFeatures::new(&self.session_id, names, rows)
    }
}

fn sum_features_with_dim(rows: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    let mut g = vec![0.0; dim];
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        for (acc, x) in g.iter_mut().zip(row) {
            *acc += x;
        }
    }
    Ok(g)
}

/// Elementwise sum in row order.
pub fn sum_features(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or_else(|| {
        Error::InvalidInput("cannot sum features of a session without utterances".into())
    })?;
    sum_features_with_dim(rows, first.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub m: Vec<f64>,
    /// Population standard deviations; zero entries are stored as 1.
    pub s: Vec<f64>,
    /// True where the training column had zero variance.
    pub mask: Vec<bool>,
    pub n_train: usize,
}

impl Standardizer {
    pub fn fit(gs: &[Vec<f64>]) -> Result<Self> {
        if gs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "standardizer needs at least 2 training sessions, got {}",
                gs.len()
            )));
        }
        let d = gs[0].len();
        let n = gs.len() as f64;
        let mut m = vec![0.0; d];
        for g in gs {
            if g.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: g.len(),
                });
            }
            for (acc, x) in m.iter_mut().zip(g) {
                *acc += x;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; d];
        for g in gs {
            for j in 0..d {
                let dev = g[j] - m[j];
                var[j] += dev * dev;
            }
        }
        let mut s = Vec::with_capacity(d);
        let mut mask = Vec::with_capacity(d);
        for (v, mean) in var.into_iter().zip(&m) {
            let sd = (v / n).sqrt();
            // relative guard so float noise on a constant column does not count as spread
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                s.push(1.0);
                mask.push(true);
            } else {
                s.push(sd);
                mask.push(false);
            }
        }
        Ok(Standardizer {
            m,
            s,
            mask,
            n_train: gs.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn standardize(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: g.len(),
            });
        }
        Ok(g.iter()
            .zip(self.m.iter().zip(&self.s))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }
}

/// Column-wise concatenation; `a`'s block comes first.
pub fn concat(a: &SessionFeatures, b: &SessionFeatures) -> Result<SessionFeatures> {
    if a.dim() == 0 {
        return Ok(b.clone());
    }
    if b.dim() == 0 {
        return Ok(a.clone());
    }
    if a.session_id != b.session_id {
        return Err(Error::InvalidInput(format!(
            "cannot concatenate features of sessions {} and {}",
            a.session_id, b.session_id
        )));
    }
    if a.per_utterance.len() != b.per_utterance.len() {
        return Err(Error::DimensionMismatch {
            expected: a.per_utterance.len(),
            actual: b.per_utterance.len(),
        });
    }
    let rows = a
        .per_utterance
        .iter()
        .zip(&b.per_utterance)
        .map(|(x, y)| x.iter().chain(y).copied().collect())
        .collect();
    let names = a
        .feature_names
        .iter()
        .chain(&b.feature_names)
        .cloned()
        .collect();
    SessionFeatures::new(&a.session_id, names, rows)
}

fn header(first: &[&str], names: &[String]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let cols: Vec<&str> = first
        .iter()
        .copied()
        .chain(names.iter().map(String::as_str))
        .collect();
    wtr.write_record(&cols).expect("in-memory write");
    String::from_utf8(wtr.into_inner().expect("flush")).expect("utf8")
}

/// `session_id,utterance_index,<features...>`; all sessions must share names.
pub fn utterance_matrix_csv(features: &[SessionFeatures]) -> Result<String> {
    let names = features.first().map(|f| f.feature_names.clone()).unwrap_or_default();
    let mut out = header(&["session_id", "utterance_index"], &names);
    for f in features {
        if f.feature_names != names {
            return Err(Error::InvalidInput(format!(
                "session {} has a different feature space",
                f.session_id
            )));
        }
        for (i, row) in f.per_utterance.iter().enumerate() {
            let _ = write!(out, "{},{i}", f.session_id);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// `session_id,<features...>` with raw sums.
pub fn session_matrix_csv(features: &[SessionFeatures]) -> Result<String> {
    let names = features.first().map(|f| f.feature_names.clone()).unwrap_or_default();
    let mut out = header(&["session_id"], &names);
    for f in features {
        if f.feature_names != names {
            return Err(Error::InvalidInput(format!(
                "session {} has a different feature space",
                f.session_id
            )));
        }
        out.push_str(&f.session_id);
        for v in &f.g {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}
