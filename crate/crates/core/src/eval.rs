//! Detection metrics.

use std::cmp::Ordering;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrials {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredTrials {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::InvalidArgument("no trials".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidArgument("NaN score".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn num_targets(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    pub fn num_nontargets(&self) -> usize {
        self.labels.len() - self.num_targets()
    }
}

/// Operating points `(p_miss, p_fa)` of the threshold sweep: the first
/// point accepts everything, and each later point additionally rejects
/// all trials sharing the next distinct score.
pub fn sweep_operating_points(trials: &ScoredTrials) -> Result<Vec<(f64, f64)>> {
    let nt = trials.num_targets();
    let nn = trials.num_nontargets();
    if nt == 0 {
        return Err(Error::MissingClass("no target trials"));
    }
    if nn == 0 {
        return Err(Error::MissingClass("no nontarget trials"));
    }
    let mut order: Vec<usize> = (0..trials.scores.len()).collect();
    order.sort_by(|&a, &b| {
        trials.scores[a]
            .partial_cmp(&trials.scores[b])
            .unwrap_or(Ordering::Equal)
    });

    let mut points = Vec::with_capacity(order.len() + 1);
    let (mut misses, mut false_alarms) = (0usize, nn);
    points.push((0.0, 1.0));
    let mut i = 0;
    while i < order.len() {
        let s = trials.scores[order[i]];
        while i < order.len() && trials.scores[order[i]] == s {
            if trials.labels[order[i]] {
                misses += 1;
            } else {
                false_alarms -= 1;
            }
            i += 1;
        }
        points.push((misses as f64 / nt as f64, false_alarms as f64 / nn as f64));
    }
    Ok(points)
}

/// Equal-error rate from an ordered list of operating points, linearly
/// interpolated between the two points where `p_miss - p_fa` changes sign.
pub fn eer_from_points(points: &[(f64, f64)]) -> f64 {
    let k = points
        .iter()
        .position(|(m, f)| m - f >= 0.0)
        .expect("sweep ends at p_miss = 1, p_fa = 0");
    if k == 0 {
        return points[0].0;
    }
    let (m0, f0) = points[k - 1];
    let (m1, f1) = points[k];
    let d0 = m0 - f0;
    let d1 = m1 - f1;
    let alpha = -d0 / (d1 - d0);
    m0 + alpha * (m1 - m0)
}

pub fn eer(trials: &ScoredTrials) -> Result<f64> {
    Ok(eer_from_points(&sweep_operating_points(trials)?))
}

/// Mean of `exp(score)` over nontarget trials; converges to 1 when the
/// scores are the true log-likelihood ratios.
pub fn calibration_identity(trials: &ScoredTrials) -> Result<f64> {
    let (sum, n) = trials
        .scores
        .iter()
        .zip(&trials.labels)
        .filter(|(_, &t)| !t)
        .fold((0.0, 0usize), |(s, n), (x, _)| (s + x.exp(), n + 1));
    if n == 0 {
        return Err(Error::MissingClass("no nontarget trials"));
    }
    Ok(sum / n as f64)
}
