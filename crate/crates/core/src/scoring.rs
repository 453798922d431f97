//! Closed-form LLR scoring for single-enrollment / single-test trials.
//!
//! For every overall hypothesis (speaker tied or not, each condition tied or
//! not) the latent vector of the trial is `Z = [Z_S; Z_E; Z_T]`, where `Z_S`
//! holds the latents shared by both sides and `Z_E`, `Z_T` the per-side ones.
//! Its posterior given the pair is Gaussian with precision `K_E + K_T` and
//! linear term `Phi`, and each hypothesis contributes
//!
//! `Q = 1/2 log|Sigma| + 1/2 Phi^T Sigma Phi + log P(h | speaker branch)`
//!
//! with `Sigma = (K_E + K_T)^-1`. The LLR is the difference of the
//! log-sum-exp of `Q` over the same-speaker and different-speaker branches.
//! Terms common to every hypothesis are dropped.
//!
//! All `2^(N+1)` factorizations of `K_E + K_T` are computed once in
//! [`ScoringSession::new`]; per trial only projections and triangular
//! solves remain.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypothesis::{
    enumerate_condition_hypotheses, hypothesis_log_prior, partition_factors, HypothesisVector,
    Partition, PriorConfig,
};
use crate::io::{EmbeddingTable, Trial};
use crate::model::{ModelParams, StackedModel};

static CHOLESKY_FACTORIZATIONS: AtomicUsize = AtomicUsize::new(0);

/// Process-wide number of `K_E + K_T` Cholesky factorizations performed.
pub fn cholesky_factorization_count() -> usize {
    CHOLESKY_FACTORIZATIONS.load(Ordering::Relaxed)
}

fn counted_cholesky(k: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    CHOLESKY_FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
    Cholesky::new(k)
}

/// `log(sum(exp(x)))` with max subtraction; `-inf` entries are skipped and
/// an all-`-inf` (or empty) input yields `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values
        .iter()
        .filter(|v| **v != f64::NEG_INFINITY)
        .map(|v| (v - max).exp())
        .sum();
    max + sum.ln()
}

/// The precision `K_E + K_T` of the trial latent posterior:
///
/// ```text
/// [ 2 Ws'DWs + I   Ws'DWd        Ws'DWd      ]
/// [ Wd'DWs         Wd'DWd + I    0           ]
/// [ Wd'DWs         0             Wd'DWd + I  ]
/// ```
pub fn build_k_sum(model: &ModelParams, partition: &Partition) -> DMatrix<f64> {
    let (ns, nd) = (partition.n_s, partition.n_d);
    let dws = model.apply_precision_mat(&partition.w_s);
    let dwd = model.apply_precision_mat(&partition.w_d);
    let ss = partition.w_s.tr_mul(&dws);
    let sd = partition.w_s.tr_mul(&dwd);
    let dd = partition.w_d.tr_mul(&dwd);

    let n = ns + 2 * nd;
    let mut k = DMatrix::zeros(n, n);
    k.view_mut((0, 0), (ns, ns))
        .copy_from(&(ss * 2.0 + DMatrix::identity(ns, ns)));
    let dd_i = dd + DMatrix::identity(nd, nd);
    let ds = sd.transpose();
    for off in [ns, ns + nd] {
        k.view_mut((0, off), (ns, nd)).copy_from(&sd);
        k.view_mut((off, 0), (nd, ns)).copy_from(&ds);
        k.view_mut((off, off), (nd, nd)).copy_from(&dd_i);
    }
    // Exact symmetry; WᵀDW products can differ in the last bit.
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = avg;
            k[(j, i)] = avg;
        }
    }
    k
}

/// Cached factorization for one overall hypothesis.
#[derive(Debug, Clone)]
pub struct HypothesisFactorization {
    pub hypothesis: HypothesisVector,
    pub partition: Partition,
    /// Lower Cholesky factor `L` of `K_E + K_T`.
    pub chol: DMatrix<f64>,
    /// `1/2 log|Sigma| = -sum_i log L_ii`.
    pub half_log_det_sigma: f64,
    pub log_prior_ss: f64,
    pub log_prior_ds: f64,
}

impl HypothesisFactorization {
    pub fn size(&self) -> usize {
        self.partition.n_s + 2 * self.partition.n_d
    }

    /// Log prior for the speaker branch this hypothesis belongs to.
    pub fn log_prior(&self) -> f64 {
        if self.hypothesis.speaker_tied {
            self.log_prior_ss
        } else {
            self.log_prior_ds
        }
    }
}

/// Posterior of the trial latents `Z` under one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub z_hat: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Projections `W^T D m` of one centered embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection(DVector<f64>);

/// Immutable scoring state: the model plus every hypothesis factorization.
#[derive(Debug, Clone)]
pub struct ScoringSession {
    model: ModelParams,
    stacked: StackedModel,
    /// `D W`, columns ordered as in the stacked `W` (`[DV | DU_1 | ...]`).
    dw: DMatrix<f64>,
    /// Indexed by `(!speaker_tied) * 2^N + condition_index`.
    factorizations: Vec<HypothesisFactorization>,
    factorization_count: usize,
}

impl ScoringSession {
    /// Session with per-condition factorized hypothesis priors.
    pub fn new(model: &ModelParams, priors: &PriorConfig) -> Result<Self> {
        let n = model.num_conditions();
        if priors.num_conditions() != n {
            return Err(Error::DimensionMismatch(format!(
                "priors cover {} conditions, model has {n}",
                priors.num_conditions()
            )));
        }
        let (ss, ds) = enumerate_condition_hypotheses(n)
            .into_iter()
            .map(|c| {
                (
                    hypothesis_log_prior(&HypothesisVector::new(true, c.clone()), priors),
                    hypothesis_log_prior(&HypothesisVector::new(false, c), priors),
                )
            })
            .unzip::<_, _, Vec<_>, Vec<_>>();
        Self::with_log_priors(model, &ss, &ds)
    }

    /// Session with arbitrary log priors `log P(h | H_SS)` and
    /// `log P(h | H_DS)`, listed in [`enumerate_condition_hypotheses`] order.
    /// The priors need not factorize across conditions or be normalized.
    pub fn with_log_priors(model: &ModelParams, log_prior_ss: &[f64], log_prior_ds: &[f64]) -> Result<Self> {
        model.validate()?;
        let conditions = enumerate_condition_hypotheses(model.num_conditions());
        if log_prior_ss.len() != conditions.len() || log_prior_ds.len() != conditions.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} log priors per branch, got {} / {}",
                conditions.len(),
                log_prior_ss.len(),
                log_prior_ds.len()
            )));
        }
        if log_prior_ss.iter().chain(log_prior_ds).any(|p| p.is_nan() || *p == f64::INFINITY) {
            return Err(Error::InvalidArgument("log priors must be finite or -inf".into()));
        }
        let stacked = model.stack_w();
        let dw = model.apply_precision_mat(&stacked.w);

        let mut factorizations = Vec::with_capacity(2 * conditions.len());
        for speaker_tied in [true, false] {
            for (k, c) in conditions.iter().enumerate() {
                let h = HypothesisVector::new(speaker_tied, c.clone());
                let partition = partition_factors(model, &h);
                let k_sum = build_k_sum(model, &partition);
                let chol = counted_cholesky(k_sum)
                    .ok_or_else(|| Error::FactorizationFailed(h.to_string()))?
                    .unpack();
                let half_log_det_sigma = -chol.diagonal().iter().map(|x| x.ln()).sum::<f64>();
                if !half_log_det_sigma.is_finite() {
                    return Err(Error::FactorizationFailed(h.to_string()));
                }
                factorizations.push(HypothesisFactorization {
                    hypothesis: h,
                    partition,
                    chol,
                    half_log_det_sigma,
                    log_prior_ss: log_prior_ss[k],
                    log_prior_ds: log_prior_ds[k],
                });
            }
        }
        let factorization_count = factorizations.len();
        Ok(Self {
            model: model.clone(),
            stacked,
            dw,
            factorizations,
            factorization_count,
        })
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn stacked(&self) -> &StackedModel {
        &self.stacked
    }

    pub fn factorizations(&self) -> &[HypothesisFactorization] {
        &self.factorizations
    }

    /// Number of Cholesky factorizations performed while building this session.
    pub fn factorization_count(&self) -> usize {
        self.factorization_count
    }

    pub fn factorization(&self, speaker_tied: bool, condition_tied: &[bool]) -> &HypothesisFactorization {
        assert_eq!(condition_tied.len(), self.model.num_conditions());
        let base = if speaker_tied { 0 } else { 1 << condition_tied.len() };
        let idx = base + HypothesisVector::new(speaker_tied, condition_tied.to_vec()).condition_index();
        &self.factorizations[idx]
    }

    /// `W^T D m` for a centered embedding.
    pub fn project(&self, centered: &DVector<f64>) -> Projection {
        assert_eq!(centered.len(), self.model.dim(), "embedding dimension");
        Projection(self.dw.tr_mul(centered))
    }

    fn center(&self, m: &DVector<f64>) -> DVector<f64> {
        assert_eq!(m.len(), self.model.dim(), "embedding dimension");
        m - self.model.mu()
    }

    /// `Phi = [Ws'D(mE + mT); Wd'D mE; Wd'D mT]` for centered inputs.
    pub fn compute_phi(
        &self,
        h: &HypothesisVector,
        m_e: &DVector<f64>,
        m_t: &DVector<f64>,
    ) -> DVector<f64> {
        let f = self.factorization(h.speaker_tied, &h.condition_tied);
        gather_phi(&f.partition, &self.project(m_e), &self.project(m_t))
    }

    /// `Q(H_{l_S S}, h)` for centered inputs; `-inf` when the prior is zero.
    pub fn q_term(
        &self,
        speaker_tied: bool,
        condition_tied: &[bool],
        m_e: &DVector<f64>,
        m_t: &DVector<f64>,
    ) -> f64 {
        let f = self.factorization(speaker_tied, condition_tied);
        q_from_projections(f, &self.project(m_e), &self.project(m_t))
    }

    /// Log-likelihood ratio of same vs different speaker for raw
    /// (uncentered) embeddings; the model mean is subtracted here.
    pub fn llr(&self, m_e: &DVector<f64>, m_t: &DVector<f64>) -> Result<f64> {
        let pe = self.project(&self.center(m_e));
        let pt = self.project(&self.center(m_t));
        self.llr_from_projections(&pe, &pt)
    }

    pub fn llr_from_projections(&self, pe: &Projection, pt: &Projection) -> Result<f64> {
        let half = self.factorizations.len() / 2;
        let mut q = vec![0.0; half];
        let mut branch = |fs: &[HypothesisFactorization], name| {
            for (slot, f) in q.iter_mut().zip(fs) {
                *slot = q_from_projections(f, pe, pt);
            }
            let lse = log_sum_exp(&q);
            if lse == f64::NEG_INFINITY {
                Err(Error::AllHypothesesExcluded(name))
            } else {
                Ok(lse)
            }
        };
        let same = branch(&self.factorizations[..half], "same-speaker")?;
        let diff = branch(&self.factorizations[half..], "different-speaker")?;
        Ok(same - diff)
    }

    /// Posterior mean and covariance of `Z` for centered inputs.
    pub fn posterior_moments(
        &self,
        speaker_tied: bool,
        condition_tied: &[bool],
        m_e: &DVector<f64>,
        m_t: &DVector<f64>,
    ) -> PosteriorMoments {
        let f = self.factorization(speaker_tied, condition_tied);
        let phi = gather_phi(&f.partition, &self.project(m_e), &self.project(m_t));
        let y = f
            .chol
            .solve_lower_triangular(&phi)
            .expect("Cholesky factor has positive diagonal");
        let z_hat = f
            .chol
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has positive diagonal");
        let n = f.size();
        let l_inv = f
            .chol
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Cholesky factor has positive diagonal");
        let sigma = l_inv.tr_mul(&l_inv);
        PosteriorMoments { z_hat, sigma }
    }

    /// Scores every trial, preserving order. Embeddings are projected once
    /// per id; the factorizations are reused as-is.
    pub fn score_trials(
        &self,
        enroll: &EmbeddingTable,
        test: &EmbeddingTable,
        trials: &[Trial],
    ) -> Result<Vec<f64>> {
        let pairs = trials
            .iter()
            .map(|t| {
                let e = enroll
                    .index_of(&t.enroll_id)
                    .ok_or_else(|| Error::UnknownId(t.enroll_id.clone()))?;
                let s = test
                    .index_of(&t.test_id)
                    .ok_or_else(|| Error::UnknownId(t.test_id.clone()))?;
                Ok((e, s))
            })
            .collect::<Result<Vec<_>>>()?;
        if enroll.dim() != self.model.dim() || test.dim() != self.model.dim() {
            if !pairs.is_empty() {
                return Err(Error::DimensionMismatch(format!(
                    "embedding tables have dims {} / {}, model has {}",
                    enroll.dim(),
                    test.dim(),
                    self.model.dim()
                )));
            }
        }

        let needed = |which: fn(&(usize, usize)) -> usize| {
            let mut used: HashMap<usize, ()> = HashMap::new();
            for p in &pairs {
                used.insert(which(p), ());
            }
            used
        };
        let project_table = |table: &EmbeddingTable, used: HashMap<usize, ()>| {
            let keys: Vec<usize> = used.into_keys().collect();
            keys.par_iter()
                .map(|&i| (i, self.project(&self.center(&table.vector(i)))))
                .collect::<HashMap<_, _>>()
        };
        let pe = project_table(enroll, needed(|p| p.0));
        let pt = project_table(test, needed(|p| p.1));

        pairs
            .par_iter()
            .map(|(e, t)| self.llr_from_projections(&pe[e], &pt[t]))
            .collect()
    }
}

fn gather_phi(partition: &Partition, pe: &Projection, pt: &Projection) -> DVector<f64> {
    let (ns, nd) = (partition.n_s, partition.n_d);
    let mut phi = DVector::zeros(ns + 2 * nd);
    for (k, &c) in partition.tied_cols.iter().enumerate() {
        phi[k] = pe.0[c] + pt.0[c];
    }
    for (k, &c) in partition.untied_cols.iter().enumerate() {
        phi[ns + k] = pe.0[c];
        phi[ns + nd + k] = pt.0[c];
    }
    phi
}

fn q_from_projections(f: &HypothesisFactorization, pe: &Projection, pt: &Projection) -> f64 {
    let log_prior = f.log_prior();
    if log_prior == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut y = gather_phi(&f.partition, pe, pt);
    // Forward substitution L y = Phi; the factor has a positive diagonal.
    let l = &f.chol;
    for i in 0..y.len() {
        let mut acc = y[i];
        for k in 0..i {
            acc -= l[(i, k)] * y[k];
        }
        y[i] = acc / l[(i, i)];
    }
    f.half_log_det_sigma + 0.5 * y.norm_squared() + log_prior
}
