//! Binary classification metrics.

use crate::error::{Error, Result};
use crate::rng::Rng;

fn check(scores: &[f64], labels: &[usize]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidShape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidLabel {
            value: bad.to_string(),
            context: "binary metric".into(),
        });
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("both classes must be present"));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the Mann–Whitney statistic with midranks.
///
/// Equals the probability that a random positive outscores a random
/// negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParam("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, so midranks stay integral.
    let mut rank2_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j; twice their mean is i + j + 1.
        let twice_mid = (i + j + 1) as u64;
        let p = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank2_sum += p * twice_mid;
        i = j;
    }
    let (p, n) = (pos as u64, neg as u64);
    // U = R - P(P+1)/2, so 2U = 2R - P(P+1).
    let u2 = rank2_sum - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// `(TPR + TNR) / 2`, predicting positive iff `score >= threshold`.
pub fn balanced_accuracy(scores: &[f64], labels: &[usize], threshold: f64) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut tp = 0;
    let mut tn = 0;
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= threshold;
        match (pred, l) {
            (true, 1) => tp += 1,
            (false, 0) => tn += 1,
            _ => {}
        }
    }
    Ok((tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

pub fn mean_metric_over_pathologies(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("no per-pathology values"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean and sample standard deviation (n − 1); std is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap interval for `metric` at level `1 - alpha`.
///
/// Resamples that lose one of the classes are redrawn.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[usize],
    metric: impl Fn(&[f64], &[usize]) -> Result<f64>,
    resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<ConfidenceInterval> {
    let estimate = metric(scores, labels)?;
    if resamples == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParam(
            "bootstrap needs resamples >= 1 and alpha in (0, 1)".into(),
        ));
    }
    let n = scores.len();
    let mut rng = Rng::new(seed);
    let mut stats = Vec::with_capacity(resamples);
    let (mut s, mut l) = (vec![0.0; n], vec![0; n]);
    while stats.len() < resamples {
        for k in 0..n {
            let i = rng.below(n as u64) as usize;
            s[k] = scores[i];
            l[k] = labels[i];
        }
        match metric(&s, &l) {
            Ok(v) => stats.push(v),
            Err(Error::UndefinedMetric(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    stats.sort_by(f64::total_cmp);
    let at = |q: f64| stats[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Ok(ConfidenceInterval {
        estimate,
        lo: at(alpha / 2.0),
        hi: at(1.0 - alpha / 2.0),
    })
}
