//! Brute-force reference computations.
//!
//! Everything here works directly with full Gaussian densities over the
//! observed pair or the complete `(latents, data)` vector, with a local
//! Cholesky routine, so it shares no factorization code with
//! [`crate::scoring`]. It is slow (cubic in `2d` per hypothesis per trial)
//! and meant for verification only.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hypothesis::{enumerate_condition_hypotheses, hypothesis_log_prior, HypothesisVector, PriorConfig};
use crate::model::ModelParams;
use crate::scoring::log_sum_exp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower Cholesky factor by the textbook column recurrence.
fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

fn forward_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut y = b.clone();
    for i in 0..y.len() {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    y
}

fn backward_solve_transposed(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= l[(k, i)] * x[k];
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// `A^-1 B` for SPD `A`.
fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let l = cholesky_lower(a)?;
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    for c in 0..b.ncols() {
        let col = backward_solve_transposed(&l, &forward_solve(&l, &b.column(c).into_owned()));
        out.set_column(c, &col);
    }
    Some(out)
}

/// `log N(x; mean, cov)` with all constants.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky_lower(cov)
        .ok_or_else(|| Error::NotPositiveDefinite("oracle covariance".into()))?;
    let r = forward_solve(&l, &(x - mean));
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (x.len() as f64 * LN_2PI + log_det + r.norm_squared()))
}

fn noise_cov(model: &ModelParams) -> DMatrix<f64> {
    let dim = model.dim();
    spd_solve(model.precision(), &DMatrix::identity(dim, dim)).expect("validated precision")
}

/// Factor blocks `(matrix, tied)` in model order: speaker, then conditions.
fn blocks<'a>(model: &'a ModelParams, h: &HypothesisVector) -> Vec<(&'a DMatrix<f64>, bool)> {
    std::iter::once((model.v(), h.speaker_tied))
        .chain(model.u().iter().zip(h.condition_tied.iter().copied()))
        .collect()
}

/// Covariance of the stacked pair `[m_E; m_T]` under hypothesis `h`:
/// each diagonal block is the total single-sample covariance and the
/// cross block is `W_S W_S^T` over the tied factors.
pub fn marginal_cov(model: &ModelParams, h: &HypothesisVector) -> DMatrix<f64> {
    assert_eq!(h.condition_tied.len(), model.num_conditions());
    let dim = model.dim();
    let mut single = noise_cov(model);
    let mut cross = DMatrix::zeros(dim, dim);
    for (w, tied) in blocks(model, h) {
        let ww = w * w.transpose();
        single += &ww;
        if tied {
            cross += ww;
        }
    }
    let mut cov = DMatrix::zeros(2 * dim, 2 * dim);
    cov.view_mut((0, 0), (dim, dim)).copy_from(&single);
    cov.view_mut((dim, dim), (dim, dim)).copy_from(&single);
    cov.view_mut((0, dim), (dim, dim)).copy_from(&cross);
    cov.view_mut((dim, 0), (dim, dim)).copy_from(&cross.transpose());
    cov
}

/// `log p(m_E, m_T | h)` with full constants.
pub fn pair_log_density(
    model: &ModelParams,
    h: &HypothesisVector,
    m_e: &DVector<f64>,
    m_t: &DVector<f64>,
) -> Result<f64> {
    let dim = model.dim();
    let mut x = DVector::zeros(2 * dim);
    x.rows_mut(0, dim).copy_from(&(m_e - model.mu()));
    x.rows_mut(dim, dim).copy_from(&(m_t - model.mu()));
    mvn_logpdf(&x, &DVector::zeros(2 * dim), &marginal_cov(model, h))
}

/// Reference LLR: hypothesis-weighted mixtures of exact pair densities.
pub fn gaussian_llr_oracle(
    model: &ModelParams,
    priors: &PriorConfig,
    m_e: &DVector<f64>,
    m_t: &DVector<f64>,
) -> Result<f64> {
    let branch = |speaker_tied: bool| -> Result<f64> {
        let mut terms = Vec::new();
        for c in enumerate_condition_hypotheses(model.num_conditions()) {
            let h = HypothesisVector::new(speaker_tied, c);
            let lp = hypothesis_log_prior(&h, priors);
            if lp == f64::NEG_INFINITY {
                continue;
            }
            terms.push(pair_log_density(model, &h, m_e, m_t)? + lp);
        }
        Ok(log_sum_exp(&terms))
    };
    let same = branch(true)?;
    let diff = branch(false)?;
    if same == f64::NEG_INFINITY {
        return Err(Error::AllHypothesesExcluded("same-speaker"));
    }
    if diff == f64::NEG_INFINITY {
        return Err(Error::AllHypothesesExcluded("different-speaker"));
    }
    Ok(same - diff)
}

/// Posterior mean of the trial latents `[Z_S; Z_E; Z_T]` (speaker first,
/// then conditions, within each part) from the joint Gaussian of latents
/// and observations: `E[Z | M] = B^T (B B^T + blkdiag(D^-1, D^-1))^-1 M`.
pub fn conditional_latent_mean(
    model: &ModelParams,
    h: &HypothesisVector,
    m_e: &DVector<f64>,
    m_t: &DVector<f64>,
) -> DVector<f64> {
    let dim = model.dim();
    let bl = blocks(model, h);
    let n_s: usize = bl.iter().filter(|b| b.1).map(|b| b.0.ncols()).sum();
    let n_d: usize = bl.iter().filter(|b| !b.1).map(|b| b.0.ncols()).sum();
    let mut b = DMatrix::zeros(2 * dim, n_s + 2 * n_d);
    let (mut cs, mut cd) = (0, n_s);
    for (w, tied) in bl {
        let r = w.ncols();
        if tied {
            b.view_mut((0, cs), (dim, r)).copy_from(w);
            b.view_mut((dim, cs), (dim, r)).copy_from(w);
            cs += r;
        } else {
            b.view_mut((0, cd), (dim, r)).copy_from(w);
            b.view_mut((dim, cd + n_d), (dim, r)).copy_from(w);
            cd += r;
        }
    }
    let noise = noise_cov(model);
    let mut cov_m = &b * b.transpose();
    let mut nb = cov_m.view_mut((0, 0), (dim, dim));
    nb += &noise;
    let mut nb = cov_m.view_mut((dim, dim), (dim, dim));
    nb += &noise;
    let mut m = DMatrix::zeros(2 * dim, 1);
    m.view_mut((0, 0), (dim, 1)).copy_from(&(m_e - model.mu()));
    m.view_mut((dim, 0), (dim, 1)).copy_from(&(m_t - model.mu()));
    let alpha = spd_solve(&cov_m, &m).expect("pair covariance is SPD");
    (b.transpose() * alpha).column(0).into_owned()
}

/// Latent variables of a labeled dataset together with the per-sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLatents {
    /// Speaker latents `y_s`, each of length `R_y`.
    pub y: Vec<DVector<f64>>,
    /// `x[j][c]`: latent of label `c` of condition `j`, length `R_xj`.
    pub x: Vec<Vec<DVector<f64>>>,
    /// Speaker label of each sample.
    pub speaker_of: Vec<usize>,
    /// `condition_of[i][j]`: label of condition `j` for sample `i`.
    pub condition_of: Vec<Vec<usize>>,
}

impl LabeledLatents {
    pub fn num_samples(&self) -> usize {
        self.speaker_of.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.condition_of.len() != self.speaker_of.len() {
            return Err(Error::DimensionMismatch(
                "condition labels and speaker labels differ in length".into(),
            ));
        }
        for (i, (&s, cs)) in self.speaker_of.iter().zip(&self.condition_of).enumerate() {
            if s >= self.y.len() {
                return Err(Error::InvalidArgument(format!("sample {i}: unknown speaker {s}")));
            }
            if cs.len() != self.x.len() {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} has {} condition labels, expected {}",
                    cs.len(),
                    self.x.len()
                )));
            }
            for (j, &c) in cs.iter().enumerate() {
                if c >= self.x[j].len() {
                    return Err(Error::InvalidArgument(format!(
                        "sample {i}: unknown label {c} for condition {}",
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }

    fn speaker_counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.y.len()];
        for &s in &self.speaker_of {
            n[s] += 1;
        }
        n
    }

    fn condition_counts(&self) -> Vec<Vec<usize>> {
        let mut n: Vec<Vec<usize>> = self.x.iter().map(|xs| vec![0; xs.len()]).collect();
        for cs in &self.condition_of {
            for (j, &c) in cs.iter().enumerate() {
                n[j][c] += 1;
            }
        }
        n
    }

    /// `z_i = [y_{s_i}; x^1_{c_1i}; ...; x^N_{c_Ni}]`.
    pub fn stacked_latent(&self, i: usize) -> DVector<f64> {
        let parts: Vec<&DVector<f64>> = std::iter::once(&self.y[self.speaker_of[i]])
            .chain(self.condition_of[i].iter().enumerate().map(|(j, &c)| &self.x[j][c]))
            .collect();
        let len = parts.iter().map(|p| p.len()).sum();
        let mut z = DVector::zeros(len);
        let mut off = 0;
        for p in parts {
            z.rows_mut(off, p.len()).copy_from(p);
            off += p.len();
        }
        z
    }

    fn all_latents(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.y.iter().chain(self.x.iter().flatten())
    }

    fn total_latent_dim(&self) -> usize {
        self.all_latents().map(|v| v.len()).sum()
    }
}

/// Sum of standard-normal log densities of every latent, constants included.
pub fn joint_prior_logpdf(latents: &LabeledLatents) -> f64 {
    latents
        .all_latents()
        .map(|v| -0.5 * (v.len() as f64 * LN_2PI + v.norm_squared()))
        .sum()
}

/// The same prior written as a sum over samples: each sample carries
/// `-1/2 z_i^T P_i z_i` with `P_i` dividing every latent block by the number
/// of samples that share it.
pub fn per_sample_prior_logpdf(latents: &LabeledLatents) -> Result<f64> {
    latents.validate()?;
    let ns = latents.speaker_counts();
    let nc = latents.condition_counts();
    if let Some(s) = ns.iter().position(|&n| n == 0) {
        return Err(Error::OrphanLatent(format!("speaker {s}")));
    }
    for (j, counts) in nc.iter().enumerate() {
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::OrphanLatent(format!("condition {} label {c}", j + 1)));
        }
    }

    let mut quad = 0.0;
    for i in 0..latents.num_samples() {
        let z = latents.stacked_latent(i);
        let mut weights = Vec::with_capacity(z.len());
        let s = latents.speaker_of[i];
        weights.extend(std::iter::repeat(1.0 / ns[s] as f64).take(latents.y[s].len()));
        for (j, &c) in latents.condition_of[i].iter().enumerate() {
            weights.extend(std::iter::repeat(1.0 / nc[j][c] as f64).take(latents.x[j][c].len()));
        }
        let p_i = DMatrix::from_diagonal(&DVector::from_vec(weights));
        quad += z.dot(&(&p_i * &z));
    }
    Ok(-0.5 * (latents.total_latent_dim() as f64 * LN_2PI + quad))
}

/// `sum_i log N(m_i; mu + W z_i, D^-1)` with constants.
pub fn data_loglik(samples: &[DVector<f64>], latents: &LabeledLatents, model: &ModelParams) -> Result<f64> {
    latents.validate()?;
    if samples.len() != latents.num_samples() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples, {} label rows",
            samples.len(),
            latents.num_samples()
        )));
    }
    let w = model.stack_w().w;
    let l = cholesky_lower(model.precision())
        .ok_or_else(|| Error::NotPositiveDefinite("noise precision D".into()))?;
    let half_log_det_d: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
    let dim = model.dim() as f64;
    let mut total = 0.0;
    for (i, m) in samples.iter().enumerate() {
        let r = m - model.mu() - &w * latents.stacked_latent(i);
        // r' D r = |L' r|^2
        let quad = (l.transpose() * &r).norm_squared();
        total += -0.5 * dim * LN_2PI + half_log_det_d - 0.5 * quad;
    }
    Ok(total)
}

/// Log density of the complete vector `[all latents; all samples]` under
/// the generative model, built as one joint Gaussian.
pub fn full_joint_logpdf(
    samples: &[DVector<f64>],
    latents: &LabeledLatents,
    model: &ModelParams,
) -> Result<f64> {
    latents.validate()?;
    let dim = model.dim();
    let n_lat = latents.total_latent_dim();
    let n_obs = samples.len() * dim;

    // Offsets of each latent in the stacked latent vector.
    let mut off_y = Vec::new();
    let mut off = 0;
    for y in &latents.y {
        off_y.push(off);
        off += y.len();
    }
    let mut off_x = Vec::new();
    for xs in &latents.x {
        let mut row = Vec::new();
        for x in xs {
            row.push(off);
            off += x.len();
        }
        off_x.push(row);
    }

    // Observations are A * latents + noise.
    let mut a = DMatrix::zeros(n_obs, n_lat);
    for i in 0..samples.len() {
        let s = latents.speaker_of[i];
        a.view_mut((i * dim, off_y[s]), (dim, model.speaker_rank()))
            .copy_from(model.v());
        for (j, &c) in latents.condition_of[i].iter().enumerate() {
            a.view_mut((i * dim, off_x[j][c]), (dim, model.u()[j].ncols()))
                .copy_from(&model.u()[j]);
        }
    }
    let noise = noise_cov(model);
    let mut cov = DMatrix::zeros(n_lat + n_obs, n_lat + n_obs);
    cov.view_mut((0, 0), (n_lat, n_lat))
        .copy_from(&DMatrix::identity(n_lat, n_lat));
    cov.view_mut((n_lat, 0), (n_obs, n_lat)).copy_from(&a);
    cov.view_mut((0, n_lat), (n_lat, n_obs)).copy_from(&a.transpose());
    let mut obs = &a * a.transpose();
    for i in 0..samples.len() {
        let mut blk = obs.view_mut((i * dim, i * dim), (dim, dim));
        blk += &noise;
    }
    cov.view_mut((n_lat, n_lat), (n_obs, n_obs)).copy_from(&obs);

    let mut x = DVector::zeros(n_lat + n_obs);
    let mut mean = DVector::zeros(n_lat + n_obs);
    let mut o = 0;
    for v in latents.all_latents() {
        x.rows_mut(o, v.len()).copy_from(v);
        o += v.len();
    }
    for (i, m) in samples.iter().enumerate() {
        x.rows_mut(n_lat + i * dim, dim).copy_from(m);
        mean.rows_mut(n_lat + i * dim, dim).copy_from(model.mu());
    }
    mvn_logpdf(&x, &mean, &cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn local_cholesky_matches_definition() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]);
        let l = cholesky_lower(&a).unwrap();
        assert!((&l * l.transpose() - &a).amax() < 1e-14);
        assert!(cholesky_lower(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_none());
    }

    #[test]
    fn mvn_logpdf_standard() {
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let v = mvn_logpdf(&x, &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(v, -LN_2PI - 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(LN_2PI, (2.0 * PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn marginal_cov_scalar() {
        let m = ModelParams::new(
            scalar(0.0),
            DMatrix::from_element(1, 1, 1.0),
            vec![DMatrix::from_element(1, 1, 2.0)],
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let c = marginal_cov(&m, &HypothesisVector::new(true, vec![false]));
        assert!((c - DMatrix::from_row_slice(2, 2, &[6.0, 1.0, 1.0, 6.0])).amax() < 1e-14);
        let c = marginal_cov(&m, &HypothesisVector::new(false, vec![false]));
        assert_eq!(c[(0, 1)], 0.0);
        let c = marginal_cov(&m, &HypothesisVector::new(true, vec![true]));
        assert!((c[(0, 1)] - 5.0).abs() < 1e-14);
    }

    fn one_speaker(y: f64) -> LabeledLatents {
        LabeledLatents {
            y: vec![scalar(y)],
            x: vec![],
            speaker_of: vec![0],
            condition_of: vec![vec![]],
        }
    }

    #[test]
    fn prior_zero_latent() {
        assert_abs_diff_eq!(joint_prior_logpdf(&one_speaker(0.0)), -0.5 * LN_2PI, epsilon = 1e-15);
    }

    #[test]
    fn prior_two_speakers() {
        let l = LabeledLatents {
            y: vec![scalar(1.0), scalar(-1.0)],
            x: vec![],
            speaker_of: vec![0, 1],
            condition_of: vec![vec![], vec![]],
        };
        assert_abs_diff_eq!(joint_prior_logpdf(&l), -LN_2PI - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn per_sample_prior_single_sample() {
        let l = one_speaker(0.7);
        assert_abs_diff_eq!(
            per_sample_prior_logpdf(&l).unwrap(),
            joint_prior_logpdf(&l),
            epsilon = 1e-15
        );
    }

    #[test]
    fn per_sample_prior_shared_speaker() {
        let l = LabeledLatents {
            y: vec![scalar(2.0)],
            x: vec![],
            speaker_of: vec![0, 0],
            condition_of: vec![vec![], vec![]],
        };
        let quad = per_sample_prior_logpdf(&l).unwrap() + 0.5 * LN_2PI;
        assert_abs_diff_eq!(quad, -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(joint_prior_logpdf(&l) + 0.5 * LN_2PI, -2.0, epsilon = 1e-14);
    }

    #[test]
    fn per_sample_prior_orphan() {
        let l = LabeledLatents {
            y: vec![scalar(2.0), scalar(1.0)],
            x: vec![],
            speaker_of: vec![0],
            condition_of: vec![vec![]],
        };
        assert!(matches!(per_sample_prior_logpdf(&l), Err(Error::OrphanLatent(_))));
    }

    #[test]
    fn data_loglik_constants() {
        let dim = 3;
        let m = ModelParams::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DMatrix::from_element(dim, 1, 1.0),
            vec![],
            DMatrix::identity(dim, dim),
        )
        .unwrap();
        let l = LabeledLatents {
            y: vec![scalar(0.0)],
            x: vec![],
            speaker_of: vec![0, 0],
            condition_of: vec![vec![], vec![]],
        };
        let samples = vec![m.mu().clone(), m.mu().clone()];
        assert_abs_diff_eq!(
            data_loglik(&samples, &l, &m).unwrap(),
            2.0 * (-1.5 * LN_2PI),
            epsilon = 1e-13
        );

        let m1 = ModelParams::new(
            scalar(0.0),
            DMatrix::from_element(1, 1, 1.0),
            vec![],
            DMatrix::from_element(1, 1, 4.0),
        )
        .unwrap();
        assert_abs_diff_eq!(
            data_loglik(&[scalar(0.0)], &one_speaker(0.0), &m1).unwrap(),
            0.5 * 4f64.ln() - 0.5 * LN_2PI,
            epsilon = 1e-14
        );
    }

    #[test]
    fn llr_oracle_zero_speaker_factor() {
        let dim = 2;
        let m = ModelParams::new(
            DVector::zeros(dim),
            DMatrix::zeros(dim, 1),
            vec![DMatrix::from_row_slice(dim, 1, &[1.0, 0.5])],
            DMatrix::identity(dim, dim),
        )
        .unwrap();
        let priors = PriorConfig::new(vec![0.2], vec![0.2]).unwrap();
        let a = DVector::from_vec(vec![0.3, 1.0]);
        let b = DVector::from_vec(vec![-0.2, 2.0]);
        let v = gaussian_llr_oracle(&m, &priors, &a, &b).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        let w = gaussian_llr_oracle(&m, &priors, &b, &a).unwrap();
        assert_abs_diff_eq!(v, w, epsilon = 1e-12);
    }
}
