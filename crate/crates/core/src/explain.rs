//! Per-utterance marginal scores and the selections built on them.
//!
//! Because the prediction is linear in the summed features, each utterance
//! adds `(w/s)ᵀx` to the session estimate, and the estimate is the sum of
//! those marginals plus a session-independent offset `b − (w/s)ᵀm`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aggregate::SessionFeatures;
use crate::corpus::Session;
use crate::error::{Error, Result};
use crate::lasso::RegressionModel;

pub const DEFAULT_TOP_K: usize = 4;
pub const DEFAULT_SAMPLE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalScore {
    pub utterance_index: usize,
    pub delta_y: f64,
    /// `(feature, (w/s)_j * x_j)` for nonzero-weight features with `x_j != 0`.
    pub contributions: Vec<(String, f64)>,
}

fn check_space(model: &RegressionModel, features: &SessionFeatures) -> Result<()> {
    if model.dim() != features.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: features.dim(),
        });
    }
    Ok(())
}

pub fn marginal_scores(model: &RegressionModel, features: &SessionFeatures) -> Result<Vec<MarginalScore>> {
    check_space(model, features)?;
    let ws = model.standardized_weights();
    let active: Vec<usize> = (0..ws.len()).filter(|&j| ws[j] != 0.0).collect();
    features
        .per_utterance
        .iter()
        .enumerate()
        .map(|(i, x)| {
            if x.len() != ws.len() {
                return Err(Error::DimensionMismatch {
                    expected: ws.len(),
                    actual: x.len(),
                });
            }
            let mut delta_y = 0.0;
            let mut contributions = Vec::new();
            for &j in &active {
                if x[j] != 0.0 {
                    let v = ws[j] * x[j];
                    delta_y += v;
                    contributions.push((features.feature_names[j].clone(), v));
                }
            }
            Ok(MarginalScore {
                utterance_index: i,
                delta_y,
                contributions,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub sum_of_deltas: f64,
    pub offset: f64,
    pub y_hat: f64,
}

pub fn offset(model: &RegressionModel) -> f64 {
    let ws = model.standardized_weights();
    model.b - ws.iter().zip(&model.standardizer.m).map(|(a, m)| a * m).sum::<f64>()
}

pub fn decompose(model: &RegressionModel, marginals: &[MarginalScore]) -> Decomposition {
    let sum_of_deltas: f64 = marginals.iter().map(|m| m.delta_y).sum();
    let offset = offset(model);
    Decomposition {
        sum_of_deltas,
        offset,
        y_hat: sum_of_deltas + offset,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopBottom {
    pub top: Vec<usize>,
    pub bottom: Vec<usize>,
    pub note: Option<String>,
}

fn order_by_delta(marginals: &[MarginalScore]) -> Vec<&MarginalScore> {
    let mut sorted: Vec<&MarginalScore> = marginals.iter().collect();
    sorted.sort_by(|a, b| {
        a.delta_y
            .total_cmp(&b.delta_y)
            .then(a.utterance_index.cmp(&b.utterance_index))
    });
    sorted
}

/// Highest `k` (descending) and lowest `k` (ascending) utterance indices.
/// Equal deltas are ordered by utterance index on both lists; the lists
/// never share an utterance.
pub fn top_bottom(marginals: &[MarginalScore], k: usize) -> TopBottom {
    let n = marginals.len();
    let n_top = k.min(n.div_ceil(2));
    let n_bottom = k.min(n - n_top);
    let mut top_order: Vec<&MarginalScore> = marginals.iter().collect();
    top_order.sort_by(|a, b| {
        b.delta_y
            .total_cmp(&a.delta_y)
            .then(a.utterance_index.cmp(&b.utterance_index))
    });
    let top: Vec<usize> = top_order[..n_top].iter().map(|m| m.utterance_index).collect();
    let bottom: Vec<usize> = order_by_delta(marginals)
        .into_iter()
        .map(|m| m.utterance_index)
        .filter(|i| !top.contains(i))
        .take(n_bottom)
        .collect();
    let note = (n_top < k || n_bottom < k).then(|| {
        format!("{n} utterance(s): showing {n_top} highest and {n_bottom} lowest instead of {k} each")
    });
    TopBottom { top, bottom, note }
}

/// `count` utterances evenly spaced through the delta-sorted order, at
/// positions `floor(i * n / count)`. The last pick is pinned to the top of
/// the order so both extremes are always included.
pub fn sample_spanning(marginals: &[MarginalScore], count: usize) -> Result<Vec<usize>> {
    let n = marginals.len();
    if count == 0 || n < count {
        return Err(Error::InvalidInput(format!(
            "cannot sample {count} utterances from {n}; use a count between 1 and {n}"
        )));
    }
    let sorted = order_by_delta(marginals);
    Ok((0..count)
        .map(|i| {
            let pos = if i + 1 == count { n - 1 } else { i * n / count };
            sorted[pos].utterance_index
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceExplanation {
    pub index: usize,
    pub text: String,
    pub start_s: f64,
    pub delta_y: f64,
    pub contributions: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub session_id: String,
    pub y_hat: f64,
    pub offset: f64,
    pub utterances: Vec<UtteranceExplanation>,
}

pub fn explanation_report(
    session: &Session,
    model: &RegressionModel,
    features: &SessionFeatures,
) -> Result<ExplanationReport> {
    let marginals = marginal_scores(model, features)?;
    if marginals.len() != session.utterances.len() {
        return Err(Error::DimensionMismatch {
            expected: session.utterances.len(),
            actual: marginals.len(),
        });
    }
    let d = decompose(model, &marginals);
    let utterances = session
        .utterances
        .iter()
        .zip(marginals)
        .map(|(u, m)| UtteranceExplanation {
            index: u.index,
            text: u.text.clone(),
            start_s: u.start_s,
            delta_y: m.delta_y,
            contributions: m.contributions,
        })
        .collect();
    Ok(ExplanationReport {
        session_id: session.session_id.clone(),
        y_hat: d.y_hat,
        offset: d.offset,
        utterances,
    })
}

impl ExplanationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn marginals(&self) -> Vec<MarginalScore> {
        self.utterances
            .iter()
            .map(|u| MarginalScore {
                utterance_index: u.index,
                delta_y: u.delta_y,
                contributions: u.contributions.clone(),
            })
            .collect()
    }

    /// Plain-text listing of the `k` highest and lowest utterances.
    pub fn digest(&self, k: usize) -> String {
        let tb = top_bottom(&self.marginals(), k);
        let mut out = format!(
            "session {}: predicted {:.3} (offset {:.3})\n",
            self.session_id, self.y_hat, self.offset
        );
        for (title, list) in [("highest", &tb.top), ("lowest", &tb.bottom)] {
            let _ = writeln!(out, "{title}:");
            for &i in list {
                let u = &self.utterances[i];
                let _ = writeln!(out, "  [{:>4}] {:>8.1}s {:+.4}  {}", u.index, u.start_s, u.delta_y, u.text);
            }
        }
        if let Some(n) = tb.note {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::Standardizer;
    use proptest::prelude::*;

    fn model(w: Vec<f64>, s: Vec<f64>, m: Vec<f64>, b: f64) -> RegressionModel {
        let d = w.len();
        RegressionModel {
            feature_names: (0..d).map(|j| format!("f{j}")).collect(),
            w,
            b,
            lambda: 0.1,
            non_negative: false,
            standardizer: Standardizer {
                m,
                s,
                mask: vec![false; d],
                n_train: 10,
            },
            objective_trace: vec![],
            converged: true,
        }
    }

    fn feats(rows: Vec<Vec<f64>>) -> SessionFeatures {
        let d = rows[0].len();
        SessionFeatures::new("s", (0..d).map(|j| format!("f{j}")).collect(), rows).unwrap()
    }

    fn marg(deltas: &[f64]) -> Vec<MarginalScore> {
        deltas
            .iter()
            .enumerate()
            .map(|(i, d)| MarginalScore {
                utterance_index: i,
                delta_y: *d,
                contributions: vec![],
            })
            .collect()
    }

    #[test]
    fn dot_product_cases() {
        let m = model(vec![1.0, -2.0], vec![1.0, 1.0], vec![0.0, 0.0], 0.0);
        let ms = marginal_scores(&m, &feats(vec![vec![3.0, 1.0], vec![0.0, 0.0]])).unwrap();
        assert_eq!(ms[0].delta_y, 1.0);
        assert_eq!(ms[1].delta_y, 0.0);
        assert!(ms[1].contributions.is_empty());
    }

    #[test]
    fn two_ngram_example() {
        // standardized weights -0.030 ("please") and -0.072 ("put your")
        let m = model(vec![-0.030, -0.072, 0.5], vec![1.0, 1.0, 1.0], vec![0.0; 3], 4.0);
        let ms = marginal_scores(&m, &feats(vec![vec![1.0, 1.0, 0.0]])).unwrap();
        assert!((ms[0].delta_y + 0.102).abs() < 1e-12);
        assert_eq!(ms[0].contributions.len(), 2);
    }

    #[test]
    fn zero_weight_model() {
        let m = model(vec![0.0, 0.0], vec![2.0, 3.0], vec![1.0, 5.0], 3.5);
        let ms = marginal_scores(&m, &feats(vec![vec![1.0, 2.0]])).unwrap();
        let d = decompose(&m, &ms);
        assert_eq!((d.sum_of_deltas, d.y_hat), (0.0, 3.5));
    }

    #[test]
    fn dimension_mismatch() {
        let m = model(vec![1.0], vec![1.0], vec![0.0], 0.0);
        assert!(marginal_scores(&m, &feats(vec![vec![1.0, 2.0]])).is_err());
    }

    #[test]
    fn top_bottom_cases() {
        let tb = top_bottom(&marg(&[5.0, 1.0, 3.0]), 1);
        assert_eq!((tb.top, tb.bottom), (vec![0], vec![1]));
        let tb = top_bottom(&marg(&[2.0; 6]), 2);
        assert_eq!((tb.top, tb.bottom), (vec![0, 1], vec![2, 3]));
        let tb = top_bottom(&marg(&[1.0, 2.0, 3.0]), 4);
        assert_eq!((tb.top.len(), tb.bottom.len()), (2, 1));
        assert!(tb.note.is_some());
    }

    #[test]
    fn spanning_sampler_cases() {
        let d: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let s = sample_spanning(&marg(&d), 100).unwrap();
        let sorted: Vec<f64> = s.iter().map(|&i| d[i]).collect();
        assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        let d: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let s = sample_spanning(&marg(&d), 100).unwrap();
        let mut every_second: Vec<usize> = (0..99).map(|i| 2 * i).collect();
        every_second.push(199);
        assert_eq!(s, every_second);
        assert!(sample_spanning(&marg(&[1.0; 10]), 100).is_err());
    }

    proptest! {
        #[test]
        fn decomposition_identity(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = rng.random_range(1..6);
            let n = rng.random_range(1..20);
            let w: Vec<f64> = (0..d).map(|_| if rng.random::<bool>() { rng.random_range(-2.0..2.0) } else { 0.0 }).collect();
            let s: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
            let m: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..10.0)).collect();
            let mdl = model(w, s, m, rng.random_range(-3.0..3.0));
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(0..4) as f64).collect()).collect();
            let f = feats(rows);
            let ms = marginal_scores(&mdl, &f).unwrap();
            for x in &ms {
                prop_assert!(x.contributions.len() <= mdl.nonzero());
            }
            let dec = decompose(&mdl, &ms);
            prop_assert!((dec.y_hat - mdl.predict(&f.g).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn sampler_spans_extremes(deltas in prop::collection::vec(-100.0f64..100.0, 100..300)) {
            let ms = marg(&deltas);
            let s = sample_spanning(&ms, 100).unwrap();
            let sorted = order_by_delta(&ms);
            prop_assert_eq!(s[0], sorted[0].utterance_index);
            prop_assert_eq!(*s.last().unwrap(), sorted[sorted.len() - 1].utterance_index);
            prop_assert_eq!(s, sample_spanning(&ms, 100).unwrap());
        }
    }
}
