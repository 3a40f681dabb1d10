use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smd::datasets::make_spirals;
use smd::nn::{
    forward_params, init_network, loss_and_gradient, read_checkpoint, train_model, write_checkpoint, Activation,
    Network, NetworkSpec, ParamVector, TrainConfig,
};
use smd::Matrix;

/// Direct forward pass: weights stored per layer as (out, in) row-major then biases.
fn oracle_logits(sizes: &[usize], act: Activation, p: &[f64], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut off = 0;
    for l in 0..sizes.len() - 1 {
        let (din, dout) = (sizes[l], sizes[l + 1]);
        let (w, b) = (&p[off..off + din * dout], &p[off + din * dout..off + din * dout + dout]);
        off += din * dout + dout;
        let mut z: Vec<f64> = (0..dout)
            .map(|o| b[o] + (0..din).map(|i| w[o * din + i] * h[i]).sum::<f64>())
            .collect();
        if l + 2 < sizes.len() {
            for v in &mut z {
                *v = match act {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                };
            }
        }
        h = z;
    }
    h
}

fn oracle_loss(sizes: &[usize], act: Activation, p: &[f64], xs: &Matrix, ys: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter_rows().zip(ys) {
        let z = oracle_logits(sizes, act, p, x);
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / ys.len() as f64
}

fn random_case(seed: u64, sizes: &[usize], act: Activation) -> (NetworkSpec, Vec<f64>, Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = NetworkSpec::new(sizes.to_vec(), act, seed);
    let p: Vec<f64> = (0..spec.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = 6;
    let xs = Matrix::from_vec(
        n,
        sizes[0],
        (0..n * sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    let ys = (0..n).map(|_| rng.random_range(0..*sizes.last().unwrap())).collect();
    (spec, p, xs, ys)
}

#[test]
fn forward_matches_direct_summation() {
    for seed in 0..20 {
        for act in [Activation::Relu, Activation::Tanh] {
            let sizes = [3, 5, 4, 3];
            let (spec, p, xs, _) = random_case(seed, &sizes, act);
            let logits = forward_params(&spec, &p, &xs).unwrap();
            for r in 0..xs.rows() {
                let expected = oracle_logits(&sizes, act, &p, xs.row(r));
                for (a, b) in logits.row(r).iter().zip(&expected) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..10 {
        for act in [Activation::Relu, Activation::Tanh] {
            let sizes = [2, 4, 2];
            let (spec, p, xs, ys) = random_case(seed, &sizes, act);
            let (loss, grad) = loss_and_gradient(&spec, &p, &xs, &ys).unwrap();
            assert!((loss - oracle_loss(&sizes, act, &p, &xs, &ys)).abs() < 1e-12);
            let h = 1e-6;
            for i in 0..p.len() {
                let (mut up, mut down) = (p.clone(), p.clone());
                up[i] += h;
                down[i] -= h;
                let numeric =
                    (oracle_loss(&sizes, act, &up, &xs, &ys) - oracle_loss(&sizes, act, &down, &xs, &ys)) / (2.0 * h);
                let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "seed {seed} {act:?} coordinate {i}: analytic {} numeric {numeric}",
                    grad[i]
                );
            }
        }
    }
}

#[test]
fn training_is_reproducible_and_checkpoints_round_trip() {
    let data = make_spirals(200, 0.05, 1.75, 3).unwrap();
    let spec = NetworkSpec::new(vec![2, 16, 16, 2], Activation::Relu, 5);
    let cfg = TrainConfig {
        epochs: 3,
        ..Default::default()
    };
    let a = train_model(&init_network(&spec).unwrap(), &data, &cfg).unwrap();
    let b = train_model(&init_network(&spec).unwrap(), &data, &cfg).unwrap();
    assert_eq!(a.network.params(), b.network.params());
    assert!(a.network.params().is_f32_valued());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.smd");
    write_checkpoint(&a.network, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back.params(), a.network.params());
    assert_eq!(
        back.forward(data.inputs()).unwrap(),
        a.network.forward(data.inputs()).unwrap()
    );
    write_checkpoint(&b.network, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn with_params_rejects_wrong_length() {
    let net = init_network(&NetworkSpec::new(vec![2, 3, 2], Activation::Relu, 0)).unwrap();
    assert!(net.with_params(ParamVector::zeros(3)).is_err());
    assert!(Network::new(net.spec().clone(), ParamVector::zeros(net.params().len())).is_ok());
}
