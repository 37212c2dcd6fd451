//! The componentwise Lipschitz envelope of the mixture loss, box-sampled and
//! checked against direct loss evaluations at random parameter pairs.

use chaining_lab::losses::{build_envelope, EnvelopeMethod, LossModel, Observation};
use chaining_lab::rng::replication_rng;
use chaining_lab::sample::{gaussian_design, Generator, MixtureParams};

#[test]
fn box_sampled_mixture_envelope_bounds_loss_increments() {
    let (n, blocks) = (30, vec![2, 2]);
    let model = LossModel::mixture_fixed(blocks, vec![0.5, 0.5], vec![1.0, 1.0], 2.0).unwrap();
    let params = MixtureParams {
        pi: vec![0.5, 0.5],
        sigma: vec![1.0, 1.0],
        beta: vec![vec![0.5, 0.0], vec![-0.5, 0.0]],
    };
    let z = gaussian_design(n, 4, 9, true);
    let sample = Generator::MixtureRegression { params }
        .sample(&z, &mut replication_rng(9, 0))
        .unwrap();
    let env = build_envelope(&model, &sample, EnvelopeMethod::box_sampling(4)).unwrap();
    assert!(env.k_n() > 0.0 && env.k_n().is_finite());
    let psi = env.psi();
    let mut rng = replication_rng(9, 1);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..400 {
        let a = model.sample_parameter(&mut rng, 1.0);
        let b = model.sample_parameter(&mut rng, 1.0);
        for i in 0..n {
            let x = Observation::from_sample(&sample, i);
            let diff = (model.eval_loss(&a, x, i).unwrap() - model.eval_loss(&b, x, i).unwrap()).abs();
            let allowed: f64 = (0..4).map(|j| psi[[i, j]] * (a[j] - b[j]).abs()).sum();
            worst = worst.max(diff - allowed);
        }
    }
    assert!(worst <= 1e-12, "envelope violated by {worst}");
}
