//! Monte Carlo checks of the samplers against closed-form covariances.


use jplda::hypothesis::HypothesisVector;
use jplda::oracle::marginal_cov;
use jplda::synth::{random_model, rng_from_seed, sample_dataset, sample_trial_pair_with, Assignment, DatasetSpec, NoiseSampler};
use nalgebra::{DMatrix, DVector};

fn empirical_cov(rows: &[DVector<f64>]) -> DMatrix<f64> {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mean = rows.iter().fold(DVector::zeros(dim), |acc, r| acc + r) / n;
    let mut cov = DMatrix::zeros(dim, dim);
    for r in rows {
        let c = r - &mean;
        cov += &c * c.transpose();
    }
    cov / (n - 1.0)
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn dataset_covariance_converges() {
    let model = random_model(3, 1, &[1, 2], 1.0, false, 21).unwrap();
    // Each sample needs fresh latents for the covariance to be the marginal
    // one, so use one sample per speaker and as many labels as samples.
    let n = 200_000;
    let spec = DatasetSpec {
        speakers: n,
        condition_cardinalities: vec![n, n],
        samples_per_speaker: 1,
        assignment: Assignment::RoundRobin,
    };
    let ds = sample_dataset(&model, &spec, 5).unwrap();
    let cov = empirical_cov(&ds.samples());
    let err = rel_frobenius(&cov, &model.total_covariance());
    assert!(err <= 0.03, "relative error {err}");
}

#[test]
fn untied_pairs_are_uncorrelated() {
    let model = random_model(2, 1, &[1], 1.0, true, 4).unwrap();
    let h = HypothesisVector::new(false, vec![false]);
    let noise = NoiseSampler::new(&model);
    let mut rng = rng_from_seed(6);
    let draws = 100_000;
    let (mut se, mut st, mut see, mut stt, mut set) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let (e, t) = sample_trial_pair_with(&model, &h, &noise, &mut rng);
        let (x, y) = (e[0], t[0]);
        se += x;
        st += y;
        see += x * x;
        stt += y * y;
        set += x * y;
    }
    let n = draws as f64;
    let cov = set / n - (se / n) * (st / n);
    let corr = cov / ((see / n - (se / n).powi(2)) * (stt / n - (st / n).powi(2))).sqrt();
    assert!(corr.abs() <= 0.01, "correlation {corr}");
}

#[test]
fn pair_covariance_matches_marginal_cov() {
    let model = random_model(3, 2, &[1, 1], 1.0, false, 13).unwrap();
    let noise = NoiseSampler::new(&model);
    let mut rng = rng_from_seed(7);
    for h in [
        HypothesisVector::new(true, vec![false, true]),
        HypothesisVector::new(false, vec![true, false]),
        HypothesisVector::new(true, vec![true, true]),
    ] {
        let stacked: Vec<DVector<f64>> = (0..200_000)
            .map(|_| {
                let (e, t) = sample_trial_pair_with(&model, &h, &noise, &mut rng);
                DVector::from_iterator(6, e.iter().chain(t.iter()).copied())
            })
            .collect();
        let err = rel_frobenius(&empirical_cov(&stacked), &marginal_cov(&model, &h));
        assert!(err <= 0.03, "{h}: relative error {err}");
    }
}
