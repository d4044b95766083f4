//! L1-regularized least squares by cyclic coordinate descent.
//!
//! Minimizes `(1/(2N)) * ||y - Xw - b||^2 + lambda * ||w||_1` with an
//! unpenalized intercept. In non-negative mode every coordinate update is
//! projected onto `w_j >= 0`.

use serde::{Deserialize, Serialize};

use crate::aggregate::Standardizer;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub lambda: f64,
    pub non_negative: bool,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            lambda: DEFAULT_LAMBDA,
            non_negative: false,
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub w: Vec<f64>,
    pub b: f64,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

pub fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        rho + lambda
    } else {
        0.0
    }
}

/// Objective value for rows `x` (N x d).
pub fn objective(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let pred: f64 = row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
            (yi - pred).powi(2)
        })
        .sum();
    rss / (2.0 * n) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

fn validate(x: &[Vec<f64>], y: &[f64], config: &LassoConfig) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            actual: x.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "regression needs at least 2 samples, got {}",
            y.len()
        )));
    }
    let d = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: row.len(),
        });
    }
    let finite = y.iter().chain(x.iter().flatten()).all(|v| v.is_finite());
    if !finite {
        return Err(Error::InvalidInput("non-finite regression input".into()));
    }
    if !(config.lambda.is_finite() && config.lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("invalid lambda {}", config.lambda)));
    }
    Ok(d)
}

pub fn fit_lasso(x: &[Vec<f64>], y: &[f64], config: &LassoConfig) -> Result<LassoFit> {
    let d = validate(x, y, config)?;
    let n = y.len();
    let nf = n as f64;
    let lambda = config.lambda;

    // column-major copy for the inner loop
    let cols: Vec<Vec<f64>> = (0..d).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let z: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf)
        .collect();

    let mut w = vec![0.0; d];
    let mut b = y.iter().sum::<f64>() / nf;
    let mut r: Vec<f64> = y.iter().map(|yi| yi - b).collect();
    let penalty = |w: &[f64]| lambda * w.iter().map(|v| v.abs()).sum::<f64>();
    let objective_of = |r: &[f64], w: &[f64]| {
        r.iter().map(|v| v * v).sum::<f64>() / (2.0 * nf) + penalty(w)
    };

    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            if z[j] == 0.0 {
                continue;
            }
            let col = &cols[j];
            let old = w[j];
            let rho = col.iter().zip(&r).map(|(a, ri)| a * ri).sum::<f64>() / nf + z[j] * old;
            let new = if config.non_negative {
                ((rho - lambda) / z[j]).max(0.0)
            } else {
                soft_threshold(rho, lambda) / z[j]
            };
            let delta = new - old;
            if delta != 0.0 {
                for (ri, a) in r.iter_mut().zip(col) {
                    *ri -= a * delta;
                }
                w[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        let shift = r.iter().sum::<f64>() / nf;
        if shift != 0.0 {
            b += shift;
            r.iter_mut().for_each(|ri| *ri -= shift);
        }
        max_change = max_change.max(shift.abs());
        trace.push(objective_of(&r, &w));
        if max_change < config.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "coordinate descent did not converge within {} sweeps",
            config.max_sweeps
        );
    }
    Ok(LassoFit {
        w,
        b,
        objective_trace: trace,
        converged,
    })
}

/// A fitted model together with the standardization it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub feature_names: Vec<String>,
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
    pub non_negative: bool,
    pub standardizer: Standardizer,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl RegressionModel {
    /// Fit on raw session sums: standardizer first, then the Lasso.
    pub fn fit(
        feature_names: Vec<String>,
        g_train: &[Vec<f64>],
        y: &[f64],
        config: &LassoConfig,
    ) -> Result<Self> {
        let standardizer = Standardizer::fit(g_train)?;
        if standardizer.dim() != feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_names.len(),
                actual: standardizer.dim(),
            });
        }
        let x: Vec<Vec<f64>> = g_train
            .iter()
            .map(|g| standardizer.standardize(g))
            .collect::<Result<_>>()?;
        let fit = fit_lasso(&x, y, config)?;
        Ok(RegressionModel {
            feature_names,
            w: fit.w,
            b: fit.b,
            lambda: config.lambda,
            non_negative: config.non_negative,
            standardizer,
            objective_trace: fit.objective_trace,
            converged: fit.converged,
        })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn predict(&self, g_raw: &[f64]) -> Result<f64> {
        let z = self.standardizer.standardize(g_raw)?;
        Ok(z.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b)
    }

    /// `w / s` elementwise, using the masked standard deviations.
    pub fn standardized_weights(&self) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.standardizer.s)
            .map(|(w, s)| w / s)
            .collect()
    }

    pub fn nonzero(&self) -> usize {
        self.w.iter().filter(|v| **v != 0.0).count()
    }

    pub fn to_file(&self, protocol: Option<String>, feature_mode: Option<String>) -> ModelFile {
        let tail_start = self.objective_trace.len().saturating_sub(10);
        ModelFile {
            feature_names: self.feature_names.clone(),
            w: self.w.clone(),
            b: self.b,
            lambda: self.lambda,
            non_negative: self.non_negative,
            m: self.standardizer.m.clone(),
            s: self.standardizer.s.clone(),
            mask: self.standardizer.mask.clone(),
            n_train: self.standardizer.n_train,
            converged: self.converged,
            protocol,
            feature_mode,
            objective_trace_tail: self.objective_trace[tail_start..].to_vec(),
        }
    }
}

/// Serialized model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub feature_names: Vec<String>,
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
    pub non_negative: bool,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub mask: Vec<bool>,
    pub n_train: usize,
    pub converged: bool,
    pub protocol: Option<String>,
    pub feature_mode: Option<String>,
    pub objective_trace_tail: Vec<f64>,
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_model(self) -> Result<RegressionModel> {
        let d = self.feature_names.len();
        for (what, len) in [
            ("w", self.w.len()),
            ("m", self.m.len()),
            ("s", self.s.len()),
            ("mask", self.mask.len()),
        ] {
            if len != d {
                return Err(Error::InvalidInput(format!(
                    "model field {what} has length {len}, expected {d}"
                )));
            }
        }
        Ok(RegressionModel {
            feature_names: self.feature_names,
            w: self.w,
            b: self.b,
            lambda: self.lambda,
            non_negative: self.non_negative,
            standardizer: Standardizer {
                m: self.m,
                s: self.s,
                mask: self.mask,
                n_train: self.n_train,
            },
            objective_trace: self.objective_trace_tail,
            converged: self.converged,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn standardized_column(raw: &[f64]) -> Vec<f64> {
        let n = raw.len() as f64;
        let m = raw.iter().sum::<f64>() / n;
        let sd = (raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        raw.iter().map(|v| (v - m) / sd).collect()
    }

    fn gradient(x: &[Vec<f64>], y: &[f64], fit: &LassoFit) -> Vec<f64> {
        // (1/N) X^T r
        let n = y.len() as f64;
        let d = fit.w.len();
        let r: Vec<f64> = x
            .iter()
            .zip(y)
            .map(|(row, yi)| yi - row.iter().zip(&fit.w).map(|(a, b)| a * b).sum::<f64>() - fit.b)
            .collect();
        (0..d)
            .map(|j| x.iter().zip(&r).map(|(row, ri)| row[j] * ri).sum::<f64>() / n)
            .collect()
    }

    #[test]
    fn single_column_closed_form() {
        let x = standardized_column(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let fit = fit_lasso(&rows, &y, &LassoConfig::default()).unwrap();
        assert!((fit.w[0] - 1.9).abs() < 1e-8, "{}", fit.w[0]);
        assert!(fit.b.abs() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn huge_lambda_zeroes_weights() {
        let x = standardized_column(&[1.0, 5.0, 2.0, 8.0]);
        let y = vec![3.0, 1.0, 4.0, 2.0];
        let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let fit = fit_lasso(&rows, &y, &LassoConfig { lambda: 1e6, ..Default::default() }).unwrap();
        assert_eq!(fit.w, vec![0.0]);
        assert!((fit.b - 2.5).abs() < 1e-12);
    }

    #[test]
    fn non_negative_clamps_negative_optimum() {
        let x = standardized_column(&[1.0, 2.0, 3.0, 4.0]);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v).collect();
        let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let cfg = LassoConfig { non_negative: true, ..Default::default() };
        let fit = fit_lasso(&rows, &y, &cfg).unwrap();
        assert_eq!(fit.w, vec![0.0]);
        let unconstrained = fit_lasso(&rows, &y, &LassoConfig::default()).unwrap();
        assert!((unconstrained.w[0] + 1.9).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let rows = vec![vec![1.0], vec![f64::NAN]];
        assert!(fit_lasso(&rows, &[1.0, 2.0], &LassoConfig::default()).is_err());
        assert!(fit_lasso(&[vec![1.0]], &[1.0], &LassoConfig::default()).is_err());
        assert!(fit_lasso(&[vec![1.0], vec![2.0]], &[1.0], &LassoConfig::default()).is_err());
    }

    #[test]
    fn sweep_cap_sets_flag() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let fit = fit_lasso(&rows, &y, &LassoConfig { max_sweeps: 1, lambda: 0.001, ..Default::default() }).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.objective_trace.len(), 1);
    }

    #[test]
    fn predict_and_weights_by_hand() {
        let model = RegressionModel {
            feature_names: vec!["f".into()],
            w: vec![1.0],
            b: 3.0,
            lambda: 0.1,
            non_negative: false,
            standardizer: Standardizer { m: vec![1.0], s: vec![2.0], mask: vec![false], n_train: 2 },
            objective_trace: vec![],
            converged: true,
        };
        assert_eq!(model.predict(&[5.0]).unwrap(), 5.0);
        assert_eq!(model.predict(&[1.0]).unwrap(), 3.0);
        assert_eq!(model.standardized_weights(), vec![0.5]);
        assert!(model.predict(&[1.0, 2.0]).is_err());

        let masked = RegressionModel {
            w: vec![2.0],
            standardizer: Standardizer { m: vec![0.0], s: vec![1.0], mask: vec![true], n_train: 2 },
            ..model.clone()
        };
        assert_eq!(masked.standardized_weights(), vec![2.0]);
        let zero = RegressionModel { w: vec![0.0], ..model };
        assert_eq!(zero.standardized_weights(), vec![0.0]);
        assert_eq!(zero.predict(&[123.0]).unwrap(), 3.0);
    }

    #[test]
    fn model_file_round_trip() {
        let g = vec![vec![0.0, 1.0], vec![2.0, 1.0], vec![4.0, 1.0]];
        let model = RegressionModel::fit(vec!["a".into(), "b".into()], &g, &[1.0, 2.0, 3.0], &LassoConfig::default()).unwrap();
        let file = model.to_file(Some("prek".into()), Some("bow".into()));
        let back = ModelFile::from_json(&file.to_json()).unwrap();
        assert_eq!(back, file);
        let m2 = back.into_model().unwrap();
        assert_eq!(m2.predict(&[3.0, 1.0]).unwrap(), model.predict(&[3.0, 1.0]).unwrap());
        assert!(model.standardizer.mask[1]);
        assert_eq!(model.w[1], 0.0);
    }

    fn random_problem(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let cols: Vec<Vec<f64>> = (0..d)
            .map(|j| standardized_column(&raw.iter().map(|r| r[j]).collect::<Vec<_>>()))
            .collect();
        let x: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|j| cols[j][i]).collect()).collect();
        let truth: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = x
            .iter()
            .map(|r| r.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + 4.0 + rng.random_range(-1.0..1.0))
            .collect();
        (x, y)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn trace_is_monotone_and_kkt_holds(seed in 0u64..10_000, n in 5usize..30, d in 1usize..8, nn in any::<bool>()) {
            let (x, y) = random_problem(seed, n, d);
            let cfg = LassoConfig { non_negative: nn, ..Default::default() };
            let fit = fit_lasso(&x, &y, &cfg).unwrap();
            for pair in fit.objective_trace.windows(2) {
                prop_assert!(pair[1] <= pair[0] + 1e-12);
            }
            let grad = gradient(&x, &y, &fit);
            for (wj, gj) in fit.w.iter().zip(&grad) {
                if nn {
                    prop_assert!(*wj >= 0.0);
                    if *wj > 0.0 { prop_assert!((gj - cfg.lambda).abs() <= 1e-6); }
                    else { prop_assert!(*gj <= cfg.lambda + 1e-6); }
                } else if *wj != 0.0 {
                    prop_assert!((gj - cfg.lambda * wj.signum()).abs() <= 1e-6);
                } else {
                    prop_assert!(gj.abs() <= cfg.lambda + 1e-6);
                }
            }
        }

        #[test]
        fn sparsity_grows_with_lambda(seed in 0u64..10_000) {
            let (x, y) = random_problem(seed, 25, 7);
            let nnz = |lambda: f64| {
                fit_lasso(&x, &y, &LassoConfig { lambda, ..Default::default() })
                    .unwrap().w.iter().filter(|v| **v != 0.0).count()
            };
            let (a, b, c) = (nnz(1.0), nnz(0.1), nnz(0.001));
            prop_assert!(a <= b && b <= c, "{a} {b} {c}");
        }
    }
}
