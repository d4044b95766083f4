//! Agreement metrics between predictions and human targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < min {
        return Err(Error::InvalidInput(format!(
            "metric needs at least {min} pairs, got {}",
            a.len()
        )));
    }
    Ok(())
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    check_lengths(a, b, 2)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    check_lengths(a, b, 2)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b, 1)?;
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(mse.sqrt())
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    /// `None` when expected disagreement is zero.
    pub kappa: Option<f64>,
    /// Predictions were constant and mapped to the range midpoint.
    pub degenerate: bool,
}

/// Map predictions affinely from their own [min, max] onto `range`.
pub fn scale_to_categories(pred: &[f64], range: (i64, i64)) -> (Vec<i64>, bool) {
    let (lo, hi) = (range.0 as f64, range.1 as f64);
    let min = pred.iter().copied().fold(f64::INFINITY, f64::min);
    let max = pred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        let mid = round_half_up((lo + hi) / 2.0);
        return (vec![mid; pred.len()], true);
    }
    let cats = pred
        .iter()
        .map(|p| round_half_up(lo + (p - min) / (max - min) * (hi - lo)).clamp(range.0, range.1))
        .collect();
    (cats, false)
}

/// Quadratic-weighted Cohen's kappa after scaling predictions onto the
/// integer categories of `range` and rounding the targets.
pub fn qwk(pred: &[f64], truth: &[f64], range: (i64, i64)) -> Result<Kappa> {
    check_lengths(pred, truth, 2)?;
    if range.1 <= range.0 {
        return Err(Error::InvalidInput(format!("empty category range {range:?}")));
    }
    let (p, degenerate) = scale_to_categories(pred, range);
    let t: Vec<i64> = truth
        .iter()
        .map(|v| round_half_up(*v).clamp(range.0, range.1))
        .collect();
    let k = (range.1 - range.0 + 1) as usize;
    let n = pred.len() as f64;
    let mut observed = vec![vec![0.0; k]; k];
    let mut hist_p = vec![0.0; k];
    let mut hist_t = vec![0.0; k];
    for (a, b) in p.iter().zip(&t) {
        let (i, j) = ((a - range.0) as usize, (b - range.0) as usize);
        observed[i][j] += 1.0;
        hist_p[i] += 1.0;
        hist_t[j] += 1.0;
    }
    let denom_w = ((k - 1) * (k - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64) - (j as f64)).powi(2) / denom_w;
            num += w * observed[i][j];
            den += w * hist_p[i] * hist_t[j] / n;
        }
    }
    let kappa = if den == 0.0 { None } else { Some(1.0 - num / den) };
    Ok(Kappa { kappa, degenerate })
}

/// Mean and standard error (sample sd over sqrt(count)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub n_defined: usize,
    pub n_undefined: usize,
}

impl Stat {
    pub fn of(values: &[Option<f64>]) -> Stat {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let n = defined.len();
        let mean = (n > 0).then(|| defined.iter().sum::<f64>() / n as f64);
        let se = match mean {
            Some(m) if n > 1 => {
                let var = defined.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                Some(var.sqrt() / (n as f64).sqrt())
            }
            _ => None,
        };
        Stat {
            mean,
            se,
            n_defined: n,
            n_undefined: values.len() - n,
        }
    }

    /// `0.48 (0.04)` style cell; `n/a` for undefined.
    pub fn cell(&self) -> String {
        match (self.mean, self.se) {
            (Some(m), Some(s)) => format!("{m:.2} ({s:.2})"),
            (Some(m), None) => format!("{m:.2} (-)"),
            _ => "n/a".to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap().unwrap() + 1.0).abs() < 1e-15);
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 2.0, 4.0]).unwrap().unwrap();
        assert!((r - 0.866025).abs() < 1e-6);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), None);
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 - 4.5).collect();
        let cube: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        assert!((spearman(&x, &cube).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert!((spearman(&x, &rev).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.535534).abs() < 1e-6);
        assert!((rmse(&[1.0, 5.0, 2.0], &[1.5, 5.5, 2.5]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn qwk_perfect_after_scaling() {
        let truth = [1.0, 4.0, 7.0, 4.0];
        let pred = [0.0, 0.5, 1.0, 0.5];
        let k = qwk(&pred, &truth, (1, 7)).unwrap();
        assert_eq!(k.kappa, Some(1.0));
        assert!(!k.degenerate);
    }

    #[test]
    fn qwk_constant_prediction_is_degenerate() {
        let k = qwk(&[2.0, 2.0, 2.0], &[1.0, 4.0, 7.0], (1, 7)).unwrap();
        assert!(k.degenerate);
        assert_eq!(k.kappa, Some(0.0));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(3.5), 4);
        assert_eq!(round_half_up(-0.5), 0);
        let (cats, _) = scale_to_categories(&[0.0, 0.25, 1.0], (1, 3));
        assert_eq!(cats, vec![1, 2, 3]);
    }

    #[test]
    fn stat_uses_sample_sd_over_root_k() {
        let s = Stat::of(&[Some(0.2), Some(0.4), None, Some(0.6)]);
        assert!((s.mean.unwrap() - 0.4).abs() < 1e-15);
        assert!((s.se.unwrap() - 0.2 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!((s.n_defined, s.n_undefined), (3, 1));
        assert_eq!(s.cell(), "0.40 (0.12)");
        assert_eq!(Stat::of(&[None]).cell(), "n/a");
    }
}
