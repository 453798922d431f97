//! Hypothesis space over speaker and nuisance-condition tying.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// One overall hypothesis: whether the speaker latent is shared between the
/// two sides of a trial, and whether each condition latent is shared.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HypothesisVector {
    pub speaker_tied: bool,
    pub condition_tied: Vec<bool>,
}

impl HypothesisVector {
    pub fn new(speaker_tied: bool, condition_tied: Vec<bool>) -> Self {
        Self {
            speaker_tied,
            condition_tied,
        }
    }

    /// Position of the condition assignment in [`enumerate_condition_hypotheses`].
    pub fn condition_index(&self) -> usize {
        self.condition_tied
            .iter()
            .fold(0, |acc, &tied| (acc << 1) | usize::from(!tied))
    }
}

impl fmt::Display for HypothesisVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "spk={}", if self.speaker_tied { 'S' } else { 'D' })?;
        if !self.condition_tied.is_empty() {
            write!(f, " cond=(")?;
            for (j, &t) in self.condition_tied.iter().enumerate() {
                if j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{}", if t { 'S' } else { 'D' })?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// All `2^N` same/different assignments of the conditions, in binary
/// counting order with condition 1 as the most significant position and
/// "same" before "different".
pub fn enumerate_condition_hypotheses(n: usize) -> Vec<Vec<bool>> {
    (0..1usize << n)
        .map(|k| (0..n).map(|j| (k >> (n - 1 - j)) & 1 == 0).collect())
        .collect()
}

/// Per-condition probabilities that the condition is shared, one column for
/// target (same speaker) trials and one for nontarget trials. The joint
/// prior over condition hypotheses is the product across conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    p_same_given_ss: Vec<f64>,
    p_same_given_ds: Vec<f64>,
}

impl PriorConfig {
    pub fn new(p_same_given_ss: Vec<f64>, p_same_given_ds: Vec<f64>) -> Result<Self> {
        if p_same_given_ss.len() != p_same_given_ds.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} same-speaker priors vs {} different-speaker priors",
                p_same_given_ss.len(),
                p_same_given_ds.len()
            )));
        }
        for &p in p_same_given_ss.iter().chain(&p_same_given_ds) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "condition prior {p} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            p_same_given_ss,
            p_same_given_ds,
        })
    }

    /// Every condition equally likely to be same or different, in both branches.
    pub fn uniform(n: usize) -> Self {
        Self {
            p_same_given_ss: vec![0.5; n],
            p_same_given_ds: vec![0.5; n],
        }
    }

    pub fn num_conditions(&self) -> usize {
        self.p_same_given_ss.len()
    }

    pub fn p_same_given_ss(&self) -> &[f64] {
        &self.p_same_given_ss
    }

    pub fn p_same_given_ds(&self) -> &[f64] {
        &self.p_same_given_ds
    }

    /// Column of same-condition probabilities for the given speaker branch.
    pub fn branch(&self, speaker_tied: bool) -> &[f64] {
        if speaker_tied {
            &self.p_same_given_ss
        } else {
            &self.p_same_given_ds
        }
    }
}

/// `log P(h | speaker branch)`; `-inf` if any factor is zero.
pub fn hypothesis_log_prior(h: &HypothesisVector, priors: &PriorConfig) -> f64 {
    let column = priors.branch(h.speaker_tied);
    assert_eq!(
        column.len(),
        h.condition_tied.len(),
        "prior config and hypothesis disagree on the number of conditions"
    );
    column
        .iter()
        .zip(&h.condition_tied)
        .map(|(&p, &tied)| if tied { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

/// Which latent block a column range of `W_S` or `W_D` belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSlot {
    Speaker,
    /// Zero-based condition index.
    Condition(usize),
}

/// Split of the stacked factors into tied (`W_S`) and untied (`W_D`) blocks.
/// On each side the order is speaker first, then conditions ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub w_s: DMatrix<f64>,
    pub w_d: DMatrix<f64>,
    pub n_s: usize,
    pub n_d: usize,
    pub tied_slots: Vec<LatentSlot>,
    pub untied_slots: Vec<LatentSlot>,
    /// Column indices into the stacked `W` making up `W_S`, in order.
    pub tied_cols: Vec<usize>,
    /// Column indices into the stacked `W` making up `W_D`, in order.
    pub untied_cols: Vec<usize>,
}

pub fn partition_factors(model: &ModelParams, h: &HypothesisVector) -> Partition {
    assert_eq!(h.condition_tied.len(), model.num_conditions());
    let mut tied_slots = Vec::new();
    let mut untied_slots = Vec::new();
    let mut tied_cols = Vec::new();
    let mut untied_cols = Vec::new();

    let blocks = std::iter::once((LatentSlot::Speaker, h.speaker_tied, model.v()))
        .chain(
            model
                .u()
                .iter()
                .enumerate()
                .map(|(j, u)| (LatentSlot::Condition(j), h.condition_tied[j], u)),
        );
    let mut offset = 0;
    for (slot, tied, block) in blocks {
        let cols = offset..offset + block.ncols();
        offset += block.ncols();
        if tied {
            tied_slots.push(slot);
            tied_cols.extend(cols);
        } else {
            untied_slots.push(slot);
            untied_cols.extend(cols);
        }
    }

    let w = model.stack_w().w;
    let w_s = w.select_columns(&tied_cols);
    let w_d = w.select_columns(&untied_cols);
    Partition {
        n_s: tied_cols.len(),
        n_d: untied_cols.len(),
        w_s,
        w_d,
        tied_slots,
        untied_slots,
        tied_cols,
        untied_cols,
    }
}

/// `diag(1/2 I_{n_s}, I_{n_d})`: per-sample share of the latent prior precision.
pub fn build_p_matrix(n_s: usize, n_d: usize) -> DMatrix<f64> {
    let diag = DVector::from_fn(n_s + n_d, |i, _| if i < n_s { 0.5 } else { 1.0 });
    DMatrix::from_diagonal(&diag)
}
