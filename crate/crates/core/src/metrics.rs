//! Error curves, correlation curves and distribution summaries.
//!
//! Prediction and truth sets are `N x T` arrays (realizations by time steps).

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(preds: &Array2<f64>, truths: &Array2<f64>) -> Result<()> {
    if preds.dim() != truths.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs truths {:?}",
            preds.dim(),
            truths.dim()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("prediction set".into()));
    }
    Ok(())
}

/// Normalised RMSE per step, `sqrt(mean_a (pred - true)^2) / normalizer`.
/// With `literal` set the mean becomes a plain sum over realizations.
pub fn rmse_curve(preds: &Array2<f64>, truths: &Array2<f64>, normalizer: f64, literal: bool) -> Result<Vec<f64>> {
    check_pair(preds, truths)?;
    if normalizer == 0.0 || !normalizer.is_finite() {
        return Err(Error::ZeroMaximum("RMSE normalizer".into()));
    }
    let n = preds.nrows() as f64;
    let d = preds - truths;
    Ok(d.axis_iter(Axis(1))
        .map(|col| {
            let ss: f64 = col.iter().map(|e| e * e).sum();
            let ms = if literal { ss } else { ss / n };
            ms.sqrt() / normalizer.abs()
        })
        .collect())
}

/// Pearson correlation per step; `None` marks a step where either series has
/// zero variance.
pub fn correlation_curve(preds: &Array2<f64>, truths: &Array2<f64>) -> Result<Vec<Option<f64>>> {
    check_pair(preds, truths)?;
    if preds.nrows() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two realizations".into()));
    }
    Ok(preds
        .axis_iter(Axis(1))
        .zip(truths.axis_iter(Axis(1)))
        .map(|(p, t)| pearson(&p.to_vec(), &t.to_vec()))
        .collect())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
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
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Per-realization RMSE over time, normalised.
pub fn per_sample_rmse(preds: &Array2<f64>, truths: &Array2<f64>, normalizer: f64) -> Result<Vec<f64>> {
    check_pair(preds, truths)?;
    if normalizer == 0.0 {
        return Err(Error::ZeroMaximum("RMSE normalizer".into()));
    }
    let d = preds - truths;
    Ok(d.axis_iter(Axis(0))
        .map(|r| (r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64).sqrt() / normalizer.abs())
        .collect())
}

/// Empirical CDF as sorted support points and cumulative fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cdf {
    pub values: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl Cdf {
    /// Right-continuous evaluation `F(x) = #{v <= x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.values.partition_point(|&v| v <= x);
        if k == 0 {
            0.0
        } else {
            self.fractions[k - 1]
        }
    }
}

pub fn error_cdf(errors: &[f64]) -> Result<Cdf> {
    if errors.is_empty() {
        return Err(Error::Empty("error sample".into()));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("error sample".into()));
    }
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut values = Vec::new();
    let mut fractions = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        if i + 1 < v.len() && v[i + 1] == x {
            continue;
        }
        values.push(x);
        fractions.push((i + 1) as f64 / n);
    }
    Ok(Cdf { values, fractions })
}

/// CDF of `|pred - true| / normalizer` across realizations at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfSlice {
    pub step: usize,
    pub strain: f64,
    pub cdf: Cdf,
}

pub fn error_cdf_slices(
    preds: &Array2<f64>,
    truths: &Array2<f64>,
    normalizer: f64,
    strain: &[f64],
    steps: &[usize],
) -> Result<Vec<CdfSlice>> {
    check_pair(preds, truths)?;
    steps
        .iter()
        .map(|&t| {
            if t >= preds.ncols() {
                return Err(Error::InvalidArgument(format!("step {t} beyond series")));
            }
            let errs: Vec<f64> = (0..preds.nrows())
                .map(|a| (preds[[a, t]] - truths[[a, t]]).abs() / normalizer.abs())
                .collect();
            Ok(CdfSlice {
                step: t,
                strain: strain.get(t).copied().unwrap_or(f64::NAN),
                cdf: error_cdf(&errs)?,
            })
        })
        .collect()
}

/// Equal-bin histograms of true and predicted values on a shared range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramPair {
    pub step: usize,
    pub edges: Vec<f64>,
    pub truth_counts: Vec<usize>,
    pub pred_counts: Vec<usize>,
}

pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let k = if width > 0.0 {
            (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize
        } else {
            0
        };
        counts[k] += 1;
    }
    counts
}

pub fn pred_pdf(preds: &Array2<f64>, truths: &Array2<f64>, steps: &[usize], bins: usize) -> Result<Vec<HistogramPair>> {
    check_pair(preds, truths)?;
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    steps
        .iter()
        .map(|&t| {
            if t >= preds.ncols() {
                return Err(Error::InvalidArgument(format!("step {t} beyond series")));
            }
            let p: Vec<f64> = preds.column(t).to_vec();
            let q: Vec<f64> = truths.column(t).to_vec();
            let lo = p.iter().chain(&q).copied().fold(f64::INFINITY, f64::min);
            let hi = p.iter().chain(&q).copied().fold(f64::NEG_INFINITY, f64::max);
            let edges = (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();
            Ok(HistogramPair {
                step: t,
                edges,
                truth_counts: histogram(&q, lo, hi, bins),
                pred_counts: histogram(&p, lo, hi, bins),
            })
        })
        .collect()
}

/// Plot-ready evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strain: Vec<f64>,
    pub rmse: Vec<f64>,
    pub correlation: Vec<Option<f64>>,
    pub per_sample_rmse: Vec<f64>,
    pub cdf: Vec<CdfSlice>,
    pub histograms: Vec<HistogramPair>,
    pub normalizer: f64,
}

impl EvalReport {
    /// Curves, per-sample errors, CDFs at the quarter points of the program
    /// and 20-bin histograms at the same steps.
    pub fn compute(preds: &Array2<f64>, truths: &Array2<f64>, strain: &[f64], normalizer: f64) -> Result<Self> {
        let t = preds.ncols();
        let mut steps: Vec<usize> = [1, 2, 3, 4].iter().map(|q| (q * t / 4).saturating_sub(1)).collect();
        steps.dedup();
        Ok(Self {
            strain: strain.to_vec(),
            rmse: rmse_curve(preds, truths, normalizer, false)?,
            correlation: if preds.nrows() >= 2 {
                correlation_curve(preds, truths)?
            } else {
                vec![None; t]
            },
            per_sample_rmse: per_sample_rmse(preds, truths, normalizer)?,
            cdf: error_cdf_slices(preds, truths, normalizer, strain, &steps)?,
            histograms: pred_pdf(preds, truths, &steps, 20)?,
            normalizer,
        })
    }

    pub fn mean_rmse(&self) -> f64 {
        self.rmse.iter().sum::<f64>() / self.rmse.len() as f64
    }

    /// Mean of the defined correlation values.
    pub fn mean_correlation(&self) -> Option<f64> {
        let v: Vec<f64> = self.correlation.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Smallest correlation, `None` if any step is undefined.
    pub fn min_correlation(&self) -> Option<f64> {
        self.correlation
            .iter()
            .try_fold(f64::INFINITY, |m, c| c.map(|c| m.min(c)))
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("step,strain,rmse,correlation\n");
        for (t, r) in self.rmse.iter().enumerate() {
            let c = self.correlation[t].map_or(String::from("nan"), |c| format!("{c}"));
            let e = self.strain.get(t).copied().unwrap_or(f64::NAN);
            s.push_str(&format!("{t},{e},{r},{c}\n"));
        }
        s
    }

    pub fn per_sample_csv(&self) -> String {
        let mut s = String::from("sample,rmse\n");
        for (a, r) in self.per_sample_rmse.iter().enumerate() {
            s.push_str(&format!("{a},{r}\n"));
        }
        s
    }

    pub fn cdf_csv(&self) -> String {
        let mut s = String::from("step,strain,error,fraction\n");
        for sl in &self.cdf {
            for (v, f) in sl.cdf.values.iter().zip(&sl.cdf.fractions) {
                s.push_str(&format!("{},{},{v},{f}\n", sl.step, sl.strain));
            }
        }
        s
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("step,bin_lo,bin_hi,truth_count,pred_count\n");
        for h in &self.histograms {
            for k in 0..h.truth_counts.len() {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    h.step,
                    h.edges[k],
                    h.edges[k + 1],
                    h.truth_counts[k],
                    h.pred_counts[k]
                ));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rmse_examples() {
        let t = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(rmse_curve(&t, &t, 5.0, false).unwrap(), vec![0.0, 0.0]);
        let p = array![[1.5, 2.5]];
        let q = array![[1.0, 2.0]];
        assert_eq!(rmse_curve(&p, &q, 2.0, false).unwrap(), vec![0.25, 0.25]);
        let p = array![[1.0], [3.0]];
        let q = array![[0.0], [0.0]];
        let r = rmse_curve(&p, &q, 10.0, false).unwrap();
        assert!((r[0] - 5f64.sqrt() / 10.0).abs() < 1e-15);
        let lit = rmse_curve(&p, &q, 10.0, true).unwrap();
        assert!((lit[0] - 10f64.sqrt() / 10.0).abs() < 1e-15);
        assert!(rmse_curve(&p, &q, 0.0, false).is_err());
        assert!(rmse_curve(&p, &array![[0.0]], 1.0, false).is_err());
    }

    #[test]
    fn correlation_examples() {
        let t = array![[1.0, 5.0], [2.0, 3.0], [4.0, 1.0]];
        assert!(correlation_curve(&t, &t).unwrap().iter().all(|c| (c.unwrap() - 1.0).abs() < 1e-15));
        let n = t.mapv(|v| -v);
        assert!(correlation_curve(&n, &t).unwrap().iter().all(|c| (c.unwrap() + 1.0).abs() < 1e-15));
        let flat = array![[1.0, 1.0], [1.0, 2.0], [1.0, 3.0]];
        let c = correlation_curve(&flat, &t).unwrap();
        assert!(c[0].is_none());
        assert!(correlation_curve(&array![[1.0]], &array![[1.0]]).is_err());
    }

    #[test]
    fn cdf_examples() {
        let c = error_cdf(&[0.5]).unwrap();
        assert_eq!(c.eval(0.4), 0.0);
        assert_eq!(c.eval(0.5), 1.0);
        let d = error_cdf(&[0.1, 0.3, 0.2]).unwrap();
        assert_eq!(d.values, vec![0.1, 0.2, 0.3]);
        assert_eq!(d.eval(0.25), 2.0 / 3.0);
        let dup = error_cdf(&[0.1, 0.3, 0.2, 0.1, 0.3, 0.2]).unwrap();
        assert_eq!(dup, d);
        assert!(error_cdf(&[]).is_err());
    }

    #[test]
    fn histogram_examples() {
        let t = array![[0.0], [1.0], [2.0], [3.0]];
        let h = pred_pdf(&t, &t, &[0], 2).unwrap();
        assert_eq!(h[0].truth_counts, h[0].pred_counts);
        assert_eq!(h[0].truth_counts, vec![2, 2]);
        assert_eq!(h[0].truth_counts.iter().sum::<usize>(), 4);
    }
}
