use super::*;
use crate::rng::rng_from;
use proptest::prelude::*;

fn tiny_net() -> ModelParams {
    ModelParams {
        layers: vec![
            Layer {
                inputs: 2,
                outputs: 2,
                weights: vec![1.0, -1.0, 0.5, 2.0],
                bias: vec![0.0, -1.0],
            },
            Layer {
                inputs: 2,
                outputs: 2,
                weights: vec![1.0, 1.0, -1.0, 2.0],
                bias: vec![0.5, 0.0],
            },
        ],
    }
}

fn random_params(sizes: &[usize], seed: u64) -> ModelParams {
    let mut p = ModelParams::zeros(sizes);
    let mut rng = rng_from(seed);
    p.values_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    p
}

fn random_batch(f: usize, labels: usize, rows: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut rng = rng_from(seed);
    (0..rows)
        .map(|_| {
            let x = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
            (x, rng.random_range(0..labels))
        })
        .collect()
}

fn as_refs(batch: &[(Vec<f64>, usize)]) -> Vec<(&[f64], usize)> {
    batch.iter().map(|(x, y)| (x.as_slice(), *y)).collect()
}

/// Mean cross-entropy computed straight from `forward`, independent of the backprop path.
fn reference_loss(params: &ModelParams, batch: &[(&[f64], usize)]) -> f64 {
    batch
        .iter()
        .map(|(x, y)| -softmax(&forward(params, x).unwrap())[*y].ln())
        .sum::<f64>()
        / batch.len() as f64
}

#[test]
fn glorot_bounds_and_shapes() {
    let cfg = ModelConfig::new(vec![4, 3], 1).unwrap();
    let p = init_params(&cfg).unwrap();
    assert_eq!(p.layers[0].weights.len(), 12);
    assert_eq!(p.layers[0].bias, vec![0.0; 3]);
    let s = (6.0f64 / 7.0).sqrt();
    assert!(p.layers[0].weights.iter().all(|w| w.abs() <= s));
}

#[test]
fn init_is_seeded() {
    let cfg = ModelConfig::new(vec![5, 4, 3], 42).unwrap();
    assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
    assert_ne!(init_params(&cfg).unwrap(), init_params(&cfg.with_seed(43)).unwrap());
}

#[test]
fn bad_configs_rejected() {
    assert!(ModelConfig::new(vec![4], 0).is_err());
    assert!(ModelConfig::new(vec![4, 0, 2], 0).is_err());
}

#[test]
fn zero_model_gives_zero_logits() {
    let p = ModelParams::zeros(&[3, 5, 4]);
    assert_eq!(forward(&p, &[0.3, -1.0, 2.0]).unwrap(), vec![0.0; 4]);
}

#[test]
fn identity_layer_passes_input_through() {
    let mut p = ModelParams::zeros(&[3, 3]);
    for i in 0..3 {
        p.layers[0].weights[i * 3 + i] = 1.0;
    }
    assert_eq!(forward(&p, &[0.25, -2.0, 7.0]).unwrap(), vec![0.25, -2.0, 7.0]);
}

#[test]
fn tiny_net_matches_hand_computation() {
    // x = (1, 2): hidden pre-activations (-1, 3.5) -> (0, 3.5); logits (4, 7)
    let p = tiny_net();
    assert_eq!(forward(&p, &[1.0, 2.0]).unwrap(), vec![4.0, 7.0]);
    assert_eq!(predict(&p, &[1.0, 2.0]).unwrap(), 1);
    // x = (2, 0): hidden (2, 0); logits (2.5, -2)
    assert_eq!(forward(&p, &[2.0, 0.0]).unwrap(), vec![2.5, -2.0]);
    assert_eq!(predict(&p, &[2.0, 0.0]).unwrap(), 0);
}

#[test]
fn shape_mismatch_is_reported() {
    let p = tiny_net();
    assert!(matches!(forward(&p, &[1.0]), Err(Error::Shape(_))));
    assert!(matches!(loss_and_grad(&p, &[(&[1.0][..], 0)]), Err(Error::Shape(_))));
    assert!(loss_and_grad(&p, &[]).is_err());
}

#[test]
fn argmax_rules() {
    assert_eq!(argmax_first(&[0.1, 0.9, 0.3]), 1);
    assert_eq!(argmax_first(&[0.5, 0.5, 0.5]), 0);
    assert_eq!(argmax_first(&[1.0, 3.0, 3.0]), 1);
}

#[test]
#[allow(clippy::approx_constant)]
fn uniform_logits_give_ln_l() {
    let p = ModelParams::zeros(&[3, 10]);
    let x = [0.1, 0.2, 0.3];
    let (loss, _) = loss_and_grad(&p, &[(&x[..], 4)]).unwrap();
    assert!((loss - 10f64.ln()).abs() < 1e-12);
    assert!((loss - 2.302585).abs() < 1e-6);
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-4;
    for seed in 0..5u64 {
        let p = random_params(&[6, 5, 4, 3], seed);
        let batch = random_batch(6, 3, 1, 100 + seed);
        let refs = as_refs(&batch);
        let (_, grad) = loss_and_grad(&p, &refs).unwrap();
        let analytic: Vec<f64> = grad.values().collect();
        for i in 0..p.num_params() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            *plus.values_mut().nth(i).unwrap() += h;
            *minus.values_mut().nth(i).unwrap() -= h;
            let numeric = (reference_loss(&plus, &refs) - reference_loss(&minus, &refs)) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-7);
            let rel = (analytic[i] - numeric).abs() / denom;
            assert!(rel <= 1e-4, "seed {seed} coord {i}: {} vs {numeric}", analytic[i]);
        }
    }
}

#[test]
fn duplicating_batch_keeps_mean() {
    let p = random_params(&[4, 3, 3], 9);
    let batch = random_batch(4, 3, 5, 10);
    let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
    let (l1, g1) = loss_and_grad(&p, &as_refs(&batch)).unwrap();
    let (l2, g2) = loss_and_grad(&p, &as_refs(&doubled)).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    assert!(g1.max_abs_diff(&g2) < 1e-12);
}

#[test]
fn sgd_algebra() {
    let p = random_params(&[3, 2], 1);
    let g1 = random_params(&[3, 2], 2);
    let g2 = random_params(&[3, 2], 3);
    assert_eq!(sgd_step(&p, &g1, 0.0).unwrap(), p);
    assert!(sgd_step(&p, &p, 1.0).unwrap().values().all(|v| v == 0.0));
    let two = sgd_step(&sgd_step(&p, &g1, 0.1).unwrap(), &g2, 0.1).unwrap();
    let mut sum = g1.clone();
    sum.add_scaled(1.0, &g2).unwrap();
    let one = sgd_step(&p, &sum, 0.1).unwrap();
    assert!(two.max_abs_diff(&one) < 1e-12);
    assert!(sgd_step(&p, &ModelParams::zeros(&[2, 2]), 0.1).is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let p = random_params(&[5, 4, 3], 77);
    let text = checkpoint_string(&p);
    assert!(text.starts_with("layers=5,4,3\n"));
    assert_eq!(parse_checkpoint(&text).unwrap(), p);
    assert!(parse_checkpoint("layers=2,2\n1 2\n").is_err());
    assert!(parse_checkpoint("nonsense").is_err());
}

#[test]
fn training_reduces_loss() {
    let p0 = random_params(&[4, 8, 3], 5);
    let batch = random_batch(4, 3, 16, 6);
    let refs = as_refs(&batch);
    let mut p = p0.clone();
    let (start, _) = loss_and_grad(&p, &refs).unwrap();
    for _ in 0..50 {
        let (_, g) = loss_and_grad(&p, &refs).unwrap();
        p = sgd_step(&p, &g, 0.1).unwrap();
    }
    let (end, _) = loss_and_grad(&p, &refs).unwrap();
    assert!(end < start);
}

proptest! {
    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let s: f64 = softmax(&logits).iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn argmax_shift_invariant(logits in prop::collection::vec(-10.0f64..10.0, 1..12), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
        // only compare when the shift cannot merge near-ties through rounding
        let mut sorted = logits.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assume!(sorted.len() < 2 || sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(argmax_first(&logits), argmax_first(&shifted));
    }
}
