//! Cross-validation, accuracy metrics and inter-rater reliability.

pub mod folds;
pub mod irr;
pub mod metrics;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use folds::{make_folds, make_folds_for, serpentine, teacher_means, FoldPlan, DEFAULT_FOLDS};
pub use irr::{irr, IrrReport, IrrSummary, LabelerAgreement};
pub use metrics::{average_ranks, pearson, qwk, rmse, scale_to_categories, spearman, Kappa, Stat};

use crate::corpus::{Corpus, Dimension, Protocol};
use crate::error::Result;
use crate::features::{train, FeatureMode, FeaturePlan, TrainedModel};
use crate::lasso::LassoConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub r: Option<f64>,
    pub rmse: f64,
    pub spearman: Option<f64>,
    pub qwk: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub r: Stat,
    pub rmse: Stat,
    pub spearman: Stat,
    pub qwk: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub dimension: Dimension,
    pub feature_mode: FeatureMode,
    pub k: usize,
    pub seed: u64,
    pub lambda: f64,
    pub non_negative: bool,
    pub per_fold: Vec<FoldMetrics>,
    pub summary: CvSummary,
    /// Sessions skipped for lacking a label on `dimension`.
    pub excluded_sessions: usize,
    pub notes: Vec<String>,
}

impl CvReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub session_id: String,
    pub teacher_id: String,
    pub fold: usize,
    pub y: f64,
    pub y_hat: f64,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub plan: FoldPlan,
    pub report: CvReport,
    pub models: Vec<TrainedModel>,
    pub predictions: Vec<Prediction>,
}

struct FoldResult {
    metrics: FoldMetrics,
    model: TrainedModel,
    predictions: Vec<Prediction>,
}

fn run_fold(
    features: &FeaturePlan,
    plan: &FoldPlan,
    sessions: &[&crate::corpus::Session],
    fold: usize,
    dimension: Dimension,
    lasso: &LassoConfig,
) -> Result<FoldResult> {
    let (train_set, test_set) = plan.split(sessions, fold);
    let model = train(features, &train_set, dimension, lasso)?;
    let fitted = model.features(features.llm.as_ref());
    let mut predictions = Vec::with_capacity(test_set.len());
    for s in &test_set {
        let f = fitted.features(s)?;
        predictions.push(Prediction {
            session_id: s.session_id.clone(),
            teacher_id: s.teacher_id.clone(),
            fold,
            y: s.mean_target(dimension)?,
            y_hat: model.model.predict(&f.g)?,
        });
    }
    let y: Vec<f64> = predictions.iter().map(|p| p.y).collect();
    let y_hat: Vec<f64> = predictions.iter().map(|p| p.y_hat).collect();
    let mut notes = Vec::new();
    let (r, rho, kappa) = if y.len() >= 2 {
        let k = qwk(&y_hat, &y, dimension.kappa_range())?;
        if k.degenerate {
            notes.push("constant predictions: kappa computed at range midpoint".to_string());
        }
        (pearson(&y_hat, &y)?, spearman(&y_hat, &y)?, k.kappa)
    } else {
        notes.push(format!("only {} test session(s)", y.len()));
        (None, None, None)
    };
    if r.is_none() {
        notes.push("correlation undefined (zero variance)".to_string());
    }
    Ok(FoldResult {
        metrics: FoldMetrics {
            fold,
            n_train: train_set.len(),
            n_test: test_set.len(),
            r,
            rmse: rmse(&y_hat, &y)?,
            spearman: rho,
            qwk: kappa,
            notes,
        },
        model,
        predictions,
    })
}

/// Teacher-disjoint cross-validation of one feature configuration.
pub fn cross_validate(
    corpus: &Corpus,
    features: &FeaturePlan,
    dimension: Dimension,
    lasso: &LassoConfig,
    k: usize,
    seed: u64,
) -> Result<CvOutcome> {
    let (sessions, excluded) = corpus.labeled(dimension);
    let plan = make_folds(&teacher_means(&sessions, dimension), k, seed)?;
    let results: Vec<FoldResult> = (0..k)
        .into_par_iter()
        .map(|fold| run_fold(features, &plan, &sessions, fold, dimension, lasso))
        .collect::<Result<_>>()?;

    let mut notes = Vec::new();
    if excluded > 0 {
        notes.push(format!("{excluded} session(s) without a {dimension} label excluded"));
    }
    for r in &results {
        for n in &r.metrics.notes {
            notes.push(format!("fold {}: {n}", r.metrics.fold));
        }
    }
    let per_fold: Vec<FoldMetrics> = results.iter().map(|r| r.metrics.clone()).collect();
    let summary = CvSummary {
        r: Stat::of(&per_fold.iter().map(|f| f.r).collect::<Vec<_>>()),
        rmse: Stat::of(&per_fold.iter().map(|f| Some(f.rmse)).collect::<Vec<_>>()),
        spearman: Stat::of(&per_fold.iter().map(|f| f.spearman).collect::<Vec<_>>()),
        qwk: Stat::of(&per_fold.iter().map(|f| f.qwk).collect::<Vec<_>>()),
    };
    if summary.r.n_undefined > 0 {
        notes.push(format!(
            "{} fold(s) with undefined R excluded from the mean",
            summary.r.n_undefined
        ));
    }
    let report = CvReport {
        dimension,
        feature_mode: features.mode,
        k,
        seed,
        lambda: lasso.lambda,
        non_negative: lasso.non_negative,
        per_fold,
        summary,
        excluded_sessions: excluded,
        notes,
    };
    let mut models = Vec::with_capacity(k);
    let mut predictions = Vec::new();
    for r in results {
        models.push(r.model);
        predictions.extend(r.predictions);
    }
    Ok(CvOutcome {
        plan,
        report,
        models,
        predictions,
    })
}

/// Plain-text table: one row per feature mode, one `mean (se)` column per
/// dimension for each metric.
pub fn render_table(protocol: Protocol, reports: &[CvReport]) -> String {
    let mut dims: Vec<Dimension> = Vec::new();
    let mut modes: Vec<FeatureMode> = Vec::new();
    for r in reports {
        if !dims.contains(&r.dimension) {
            dims.push(r.dimension);
        }
        if !modes.contains(&r.feature_mode) {
            modes.push(r.feature_mode);
        }
    }
    let mut out = String::new();
    for (metric, pick) in [
        ("R", (|s: &CvSummary| s.r) as fn(&CvSummary) -> Stat),
        ("RMSE", |s: &CvSummary| s.rmse),
        ("Spearman", |s: &CvSummary| s.spearman),
        ("QWK", |s: &CvSummary| s.qwk),
    ] {
        let _ = writeln!(out, "{protocol} {metric}");
        let _ = write!(out, "{:<20}", "features");
        for d in &dims {
            let _ = write!(out, " {:>24}", d.title(protocol));
        }
        out.push('\n');
        for m in &modes {
            let _ = write!(out, "{:<20}", m.to_string());
            for d in &dims {
                let cell = reports
                    .iter()
                    .find(|r| r.dimension == *d && r.feature_mode == *m)
                    .map(|r| pick(&r.summary).cell())
                    .unwrap_or_else(|| "-".to_string());
                let _ = write!(out, " {cell:>24}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Per-fold rows followed by the summary line, for a single report.
pub fn render_folds(report: &CvReport) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
    let mut out = format!(
        "dimension={} features={} k={} lambda={}\n{:>4} {:>7} {:>6} {:>8} {:>8} {:>8} {:>8}\n",
        report.dimension,
        report.feature_mode,
        report.k,
        report.lambda,
        "fold",
        "n_train",
        "n_test",
        "R",
        "RMSE",
        "Spearman",
        "QWK"
    );
    for f in &report.per_fold {
        let _ = writeln!(
            out,
            "{:>4} {:>7} {:>6} {:>8} {:>8.3} {:>8} {:>8}",
            f.fold,
            f.n_train,
            f.n_test,
            fmt(f.r),
            f.rmse,
            fmt(f.spearman),
            fmt(f.qwk)
        );
    }
    let s = &report.summary;
    let _ = writeln!(
        out,
        "mean (se): R {}  RMSE {}  Spearman {}  QWK {}",
        s.r.cell(),
        s.rmse.cell(),
        s.spearman.cell(),
        s.qwk.cell()
    );
    for n in &report.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}
