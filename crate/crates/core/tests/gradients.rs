mod common;

use common::{
    check_network, gradient_oracle, normal, reference_forward, rng, tape_gradients, within_tolerance, GradCheckStats,
    Objective,
};
use fairaudit::nn::{Architecture, ModelSpec, Network, TrainedModel};
use rand::Rng;

#[test]
fn small_networks_match_finite_differences() {
    let stats = gradient_oracle(200, 11);
    assert_eq!(stats.failures, 0, "{stats:?}");
    assert!(stats.components > 10_000);
}

/// The default-size conv model has too many weights for a full sweep, so
/// only its input gradient is compared.
#[test]
fn full_size_models_input_gradients() {
    let mut r = rng(5);
    for spec in [ModelSpec::linear(12, 3), ModelSpec::conv(12, 4)] {
        let net = TrainedModel::build(spec).unwrap().network;
        let arch = net.architecture().clone();
        let params: Vec<Vec<f64>> = net.params().iter().map(|p| p.tensor.data().to_vec()).collect();
        let x: Vec<f64> = (0..12).map(|_| normal(&mut r)).collect();
        let (_, gx, _) = tape_gradients(&net, &x, Objective::Output);
        for i in 0..12 {
            let h = 1e-6;
            let probe = |d: f64| {
                let mut xp = x.clone();
                xp[i] += d;
                reference_forward(&arch, &params, &xp, Objective::Output).0
            };
            let n = (probe(h) - probe(-h)) / (2.0 * h);
            assert!(within_tolerance(gx[i], n), "{} input {i}: {} vs {n}", spec.kind, gx[i]);
        }
    }
}

#[test]
fn adversary_shapes_are_checked_too() {
    let mut stats = GradCheckStats::default();
    let mut r = rng(9);
    for seed in 0..5 {
        let net = Network::init(
            Architecture::Dense {
                hidden: vec![32, 32, 32],
                outputs: 1,
                dropout: 0.0,
            },
            1,
            seed,
        )
        .unwrap();
        check_network(&net, &[r.random_range(0.0..1.0)], Objective::Bce(1.0), &mut stats);
    }
    assert_eq!(stats.failures, 0, "{stats:?}");
}
