//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use jplda::hypothesis::PriorConfig;
use jplda::model::ModelParams;
use jplda::synth::{rng_from_seed, standard_normal_vec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// One randomly drawn model, prior configuration and trial pair.
pub struct Instance {
    pub model: ModelParams,
    pub priors: PriorConfig,
    pub m_e: DVector<f64>,
    pub m_t: DVector<f64>,
}

pub fn random_spd(rng: &mut ChaCha20Rng, dim: usize) -> DMatrix<f64> {
    if rng.random_bool(0.3) {
        DMatrix::from_diagonal(&DVector::from_fn(dim, |_, _| rng.random_range(0.3..3.0)))
    } else {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let d = &a * a.transpose() + DMatrix::identity(dim, dim) * rng.random_range(0.2..1.5);
        (&d + d.transpose()) * 0.5
    }
}

pub fn random_model(rng: &mut ChaCha20Rng, dim: usize, r_y: usize, r_x: &[usize]) -> ModelParams {
    let mut gauss = |r: usize, c: usize, scale: f64| {
        DMatrix::from_fn(r, c, |_, _| scale * standard_normal_vec(rng, 1)[0])
    };
    let v = gauss(dim, r_y, 1.0);
    let u: Vec<_> = r_x.iter().map(|&r| gauss(dim, r, 0.8)).collect();
    let mu = gauss(dim, 1, 0.5).column(0).into_owned();
    let d = random_spd(rng, dim);
    ModelParams::new(mu, v, u, d).expect("random model is valid")
}

pub fn random_priors(rng: &mut ChaCha20Rng, n: usize) -> PriorConfig {
    let mut draw = || match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..=1.0),
    };
    let ss = (0..n).map(|_| draw()).collect();
    let ds = (0..n).map(|_| draw()).collect();
    PriorConfig::new(ss, ds).unwrap()
}

/// d in 1..=8, N in 0..=3, R_y in 0..=3, R_xj in 1..=3.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = rng_from_seed(seed);
    let dim = rng.random_range(1..=8);
    let n = rng.random_range(0..=3);
    let r_y = rng.random_range(0..=3);
    let r_x: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
    let model = random_model(&mut rng, dim, r_y, &r_x);
    let priors = random_priors(&mut rng, n);
    let scale = rng.random_range(0.1..2.5);
    let m_e = model.mu() + standard_normal_vec(&mut rng, dim) * scale;
    let m_t = if rng.random_bool(0.3) {
        &m_e + standard_normal_vec(&mut rng, dim) * 0.1
    } else {
        model.mu() + standard_normal_vec(&mut rng, dim) * scale
    };
    Instance {
        model,
        priors,
        m_e,
        m_t,
    }
}
