//! Sampling from the generative model.
//!
//! Randomness comes from `ChaCha20Rng` seeded with a `u64`; Gaussian draws
//! use `rand_distr::StandardNormal` (ziggurat). Outputs are reproducible
//! bit-for-bit for a given seed and build of this crate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hypothesis::{HypothesisVector, PriorConfig};
use crate::io::{EmbeddingTable, Trial};
use crate::model::ModelParams;
use crate::oracle::LabeledLatents;

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draws `eps ~ N(0, D^-1)` as `L^-T g` with `D = L L^T`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    chol: Option<DMatrix<f64>>,
    inv_sqrt_diag: DVector<f64>,
}

impl NoiseSampler {
    pub fn new(model: &ModelParams) -> Self {
        if model.has_diagonal_precision() {
            Self {
                chol: None,
                inv_sqrt_diag: model.precision().diagonal().map(|x| 1.0 / x.sqrt()),
            }
        } else {
            let l = model
                .precision()
                .clone()
                .cholesky()
                .expect("validated precision")
                .unpack();
            Self {
                chol: Some(l),
                inv_sqrt_diag: DVector::zeros(0),
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.chol {
            None => standard_normal_vec(rng, self.inv_sqrt_diag.len()).component_mul(&self.inv_sqrt_diag),
            Some(l) => {
                let g = standard_normal_vec(rng, l.nrows());
                l.tr_solve_lower_triangular(&g).expect("positive diagonal")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    /// Each sample draws every condition label uniformly at random.
    UniformRandom,
    /// Sample `i` gets label `i mod C_j` for condition `j`.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub speakers: usize,
    pub condition_cardinalities: Vec<usize>,
    pub samples_per_speaker: usize,
    pub assignment: Assignment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// One row per sample (`I x d`).
    pub embeddings: DMatrix<f64>,
    pub speaker_labels: Vec<usize>,
    /// `condition_labels[j][i]`: label of condition `j` for sample `i`.
    pub condition_labels: Vec<Vec<usize>>,
    pub ids: Vec<String>,
    pub seed: u64,
    /// The latents the samples were generated from.
    pub latents: LabeledLatents,
}

impl SyntheticDataset {
    pub fn num_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.embeddings.row(i).transpose()
    }

    pub fn samples(&self) -> Vec<DVector<f64>> {
        (0..self.num_samples()).map(|i| self.sample(i)).collect()
    }

    pub fn to_table(&self) -> EmbeddingTable {
        EmbeddingTable::new(self.ids.clone(), self.samples()).expect("ids are unique")
    }
}

pub fn sample_dataset(model: &ModelParams, spec: &DatasetSpec, seed: u64) -> Result<SyntheticDataset> {
    if spec.speakers == 0 {
        return Err(Error::InvalidArgument("at least one speaker is required".into()));
    }
    if spec.samples_per_speaker == 0 {
        return Err(Error::InvalidArgument("at least one sample per speaker is required".into()));
    }
    if spec.condition_cardinalities.len() != model.num_conditions() {
        return Err(Error::DimensionMismatch(format!(
            "{} condition cardinalities for a model with {} conditions",
            spec.condition_cardinalities.len(),
            model.num_conditions()
        )));
    }
    if spec.condition_cardinalities.contains(&0) {
        return Err(Error::InvalidArgument("condition cardinalities must be >= 1".into()));
    }

    let mut rng = rng_from_seed(seed);
    let noise = NoiseSampler::new(model);
    let y: Vec<DVector<f64>> = (0..spec.speakers)
        .map(|_| standard_normal_vec(&mut rng, model.speaker_rank()))
        .collect();
    let x: Vec<Vec<DVector<f64>>> = spec
        .condition_cardinalities
        .iter()
        .zip(model.u())
        .map(|(&c, u)| (0..c).map(|_| standard_normal_vec(&mut rng, u.ncols())).collect())
        .collect();

    let n_samples = spec.speakers * spec.samples_per_speaker;
    let dim = model.dim();
    let mut embeddings = DMatrix::zeros(n_samples, dim);
    let mut speaker_labels = Vec::with_capacity(n_samples);
    let mut condition_labels = vec![Vec::with_capacity(n_samples); model.num_conditions()];
    let mut ids = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let s = i / spec.samples_per_speaker;
        let mut m = model.mu() + model.v() * &y[s];
        for (j, &card) in spec.condition_cardinalities.iter().enumerate() {
            let c = match spec.assignment {
                Assignment::UniformRandom => rng.random_range(0..card),
                Assignment::RoundRobin => i % card,
            };
            m += &model.u()[j] * &x[j][c];
            condition_labels[j].push(c);
        }
        m += noise.sample(&mut rng);
        embeddings.set_row(i, &m.transpose());
        speaker_labels.push(s);
        ids.push(format!("spk{s:04}-utt{:04}", i % spec.samples_per_speaker));
    }

    let condition_of = (0..n_samples)
        .map(|i| condition_labels.iter().map(|c| c[i]).collect())
        .collect();
    Ok(SyntheticDataset {
        embeddings,
        latents: LabeledLatents {
            y,
            x,
            speaker_of: speaker_labels.clone(),
            condition_of,
        },
        speaker_labels,
        condition_labels,
        ids,
        seed,
    })
}

/// One enrollment/test pair: tied latents drawn once and shared, untied
/// latents and noise drawn per side.
pub fn sample_trial_pair_with<R: Rng + ?Sized>(
    model: &ModelParams,
    h: &HypothesisVector,
    noise: &NoiseSampler,
    rng: &mut R,
) -> (DVector<f64>, DVector<f64>) {
    assert_eq!(h.condition_tied.len(), model.num_conditions());
    let mut m_e = model.mu().clone();
    let mut m_t = model.mu().clone();
    let factors = std::iter::once((model.v(), h.speaker_tied))
        .chain(model.u().iter().zip(h.condition_tied.iter().copied()));
    for (w, tied) in factors {
        let a = standard_normal_vec(rng, w.ncols());
        m_e += w * &a;
        if tied {
            m_t += w * &a;
        } else {
            m_t += w * standard_normal_vec(rng, w.ncols());
        }
    }
    m_e += noise.sample(rng);
    m_t += noise.sample(rng);
    (m_e, m_t)
}

pub fn sample_trial_pair(model: &ModelParams, h: &HypothesisVector, seed: u64) -> (DVector<f64>, DVector<f64>) {
    let mut rng = rng_from_seed(seed);
    sample_trial_pair_with(model, h, &NoiseSampler::new(model), &mut rng)
}

/// Condition hypothesis drawn from the per-condition priors of one branch.
pub fn sample_condition_hypothesis<R: Rng + ?Sized>(
    priors: &PriorConfig,
    speaker_tied: bool,
    rng: &mut R,
) -> Vec<bool> {
    priors
        .branch(speaker_tied)
        .iter()
        .map(|&p| rng.random::<f64>() < p)
        .collect()
}

/// Labeled trials with one fresh enrollment and test embedding per trial.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub enroll: EmbeddingTable,
    pub test: EmbeddingTable,
    /// Every trial carries its target/nontarget label.
    pub trials: Vec<Trial>,
    /// The hypothesis each trial was generated under.
    pub hypotheses: Vec<HypothesisVector>,
}

impl Benchmark {
    pub fn key(&self) -> Vec<bool> {
        self.trials.iter().map(|t| t.target == Some(true)).collect()
    }
}

/// Targets first (speaker tied, conditions from the same-speaker priors),
/// then nontargets (speaker untied, different-speaker priors).
pub fn make_benchmark(
    model: &ModelParams,
    priors: &PriorConfig,
    n_target: usize,
    n_nontarget: usize,
    seed: u64,
) -> Result<Benchmark> {
    if priors.num_conditions() != model.num_conditions() {
        return Err(Error::DimensionMismatch(format!(
            "priors cover {} conditions, model has {}",
            priors.num_conditions(),
            model.num_conditions()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let noise = NoiseSampler::new(model);
    let total = n_target + n_nontarget;
    let (mut e_ids, mut e_vecs) = (Vec::with_capacity(total), Vec::with_capacity(total));
    let (mut t_ids, mut t_vecs) = (Vec::with_capacity(total), Vec::with_capacity(total));
    let mut trials = Vec::with_capacity(total);
    let mut hypotheses = Vec::with_capacity(total);
    for k in 0..total {
        let target = k < n_target;
        let h = HypothesisVector::new(target, sample_condition_hypothesis(priors, target, &mut rng));
        let (m_e, m_t) = sample_trial_pair_with(model, &h, &noise, &mut rng);
        let (e, t) = (format!("e{k:06}"), format!("t{k:06}"));
        trials.push(Trial::labeled(e.clone(), t.clone(), target));
        e_ids.push(e);
        t_ids.push(t);
        e_vecs.push(m_e);
        t_vecs.push(m_t);
        hypotheses.push(h);
    }
    Ok(Benchmark {
        enroll: EmbeddingTable::new(e_ids, e_vecs)?,
        test: EmbeddingTable::new(t_ids, t_vecs)?,
        trials,
        hypotheses,
    })
}

/// Random valid model for tests and demos: entries of `V` and `U_j` are
/// `N(0, scale^2)`, `D = A A^T / dim + I` (or a random diagonal when
/// `diagonal` is set) and `mu ~ N(0, I)`.
pub fn random_model(
    dim: usize,
    speaker_rank: usize,
    condition_ranks: &[usize],
    scale: f64,
    diagonal: bool,
    seed: u64,
) -> Result<ModelParams> {
    let mut rng = rng_from_seed(seed);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mu = gauss(dim, 1).column(0).into_owned();
    let v = gauss(dim, speaker_rank) * scale;
    let u = condition_ranks.iter().map(|&r| gauss(dim, r) * scale).collect();
    let d = if diagonal {
        let g = gauss(dim, 1);
        DMatrix::from_diagonal(&g.column(0).map(|x| 0.5 + x * x))
    } else {
        let a = gauss(dim, dim);
        let mut d = &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim);
        let t = d.transpose();
        d = (d + t) * 0.5;
        d
    };
    ModelParams::new(mu, v, u, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams {
        random_model(3, 1, &[2, 1], 1.0, false, 7).unwrap()
    }

    fn spec(assignment: Assignment) -> DatasetSpec {
        DatasetSpec {
            speakers: 3,
            condition_cardinalities: vec![2, 4],
            samples_per_speaker: 2,
            assignment,
        }
    }

    #[test]
    fn dataset_shapes() {
        let ds = sample_dataset(&model(), &spec(Assignment::UniformRandom), 1).unwrap();
        assert_eq!(ds.num_samples(), 6);
        assert_eq!(ds.embeddings.shape(), (6, 3));
        assert_eq!(ds.speaker_labels, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(ds.condition_labels.len(), 2);
        assert!(ds.condition_labels[0].iter().all(|&c| c < 2));
        assert!(ds.condition_labels[1].iter().all(|&c| c < 4));
        assert!(ds.latents.validate().is_ok());
    }

    #[test]
    fn dataset_round_robin() {
        let ds = sample_dataset(&model(), &spec(Assignment::RoundRobin), 1).unwrap();
        assert_eq!(ds.condition_labels[0], vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(ds.condition_labels[1], vec![0, 1, 2, 3, 0, 1]);
    }

    #[test]
    fn dataset_deterministic() {
        let a = sample_dataset(&model(), &spec(Assignment::UniformRandom), 99).unwrap();
        let b = sample_dataset(&model(), &spec(Assignment::UniformRandom), 99).unwrap();
        assert_eq!(a, b);
        let c = sample_dataset(&model(), &spec(Assignment::UniformRandom), 100).unwrap();
        assert_ne!(a.embeddings, c.embeddings);
    }

    #[test]
    fn dataset_rejects_bad_counts() {
        let mut s = spec(Assignment::RoundRobin);
        s.speakers = 0;
        assert!(sample_dataset(&model(), &s, 0).is_err());
        let mut s = spec(Assignment::RoundRobin);
        s.condition_cardinalities = vec![2, 0];
        assert!(sample_dataset(&model(), &s, 0).is_err());
        let mut s = spec(Assignment::RoundRobin);
        s.condition_cardinalities = vec![2];
        assert!(sample_dataset(&model(), &s, 0).is_err());
    }

    #[test]
    fn embeddings_follow_latents() {
        let m = model();
        let ds = sample_dataset(&m, &spec(Assignment::UniformRandom), 3).unwrap();
        let w = m.stack_w().w;
        // residual is pure noise; with D = A A^T/d + I its variance is below 1
        for i in 0..ds.num_samples() {
            let r = ds.sample(i) - m.mu() - &w * ds.latents.stacked_latent(i);
            assert!(r.amax() < 6.0);
        }
    }

    #[test]
    fn tied_pair_noise_free_limit() {
        let mut m = random_model(4, 2, &[1, 1], 1.0, true, 5).unwrap();
        m = ModelParams::new(
            m.mu().clone(),
            m.v().clone(),
            m.u().to_vec(),
            DMatrix::identity(4, 4) * 1e12,
        )
        .unwrap();
        let (a, b) = sample_trial_pair(&m, &HypothesisVector::new(true, vec![true, true]), 11);
        assert!((a - b).amax() < 1e-4);
    }

    #[test]
    fn benchmark_counts() {
        let m = model();
        let priors = PriorConfig::uniform(2);
        let b = make_benchmark(&m, &priors, 0, 5, 1).unwrap();
        assert_eq!(b.trials.len(), 5);
        assert!(b.key().iter().all(|t| !t));
        let b = make_benchmark(&m, &priors, 3, 4, 1).unwrap();
        assert_eq!(b.key().iter().filter(|t| **t).count(), 3);
        assert_eq!(b.key().iter().filter(|t| !**t).count(), 4);
        assert_eq!(b.enroll.len(), 7);
        assert!(b.hypotheses[..3].iter().all(|h| h.speaker_tied));
        assert!(b.hypotheses[3..].iter().all(|h| !h.speaker_tied));
    }

    #[test]
    fn benchmark_respects_degenerate_priors() {
        let m = model();
        let priors = PriorConfig::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let b = make_benchmark(&m, &priors, 10, 10, 4).unwrap();
        for h in &b.hypotheses {
            if h.speaker_tied {
                assert_eq!(h.condition_tied, vec![true, false]);
            } else {
                assert_eq!(h.condition_tied, vec![false, true]);
            }
        }
    }
}
