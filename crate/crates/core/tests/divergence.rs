use smd::datasets::make_spirals;
use smd::divergence::{grid_search, output_kl, output_mse, sweep_csv, GridSearchConfig, SWEEP_CSV_HEADER};
use smd::mutation::{mutate, MutationParams};
use smd::nn::{init_network, Activation, NetworkSpec};

#[test]
fn kl_grows_with_sigma_on_average() {
    let parent = init_network(&NetworkSpec::new(vec![2, 16, 16, 2], Activation::Tanh, 4)).unwrap();
    let probe = make_spirals(200, 0.05, 1.75, 9).unwrap();
    let mean_kl = |sigma: f64| {
        (0..8)
            .map(|s| {
                let child = parent
                    .with_params(mutate(parent.params(), &MutationParams::new(sigma, 0.0), s).unwrap())
                    .unwrap();
                output_kl(&parent, &child, probe.inputs()).unwrap()
            })
            .sum::<f64>()
            / 8.0
    };
    assert!(mean_kl(0.01) < mean_kl(0.1));
    assert_eq!(output_kl(&parent, &parent, probe.inputs()).unwrap(), 0.0);
    assert_eq!(output_mse(&parent, &parent, probe.inputs()).unwrap(), 0.0);
}

#[test]
fn search_over_one_cell_returns_it() {
    let parent = init_network(&NetworkSpec::new(vec![2, 8, 2], Activation::Relu, 1)).unwrap();
    let probe = make_spirals(100, 0.05, 1.75, 2).unwrap();
    let cfg = GridSearchConfig::new(vec![0.1], vec![0.5]);
    let r = grid_search(&parent, &probe, &cfg, 0).unwrap();
    assert_eq!((r.sigma, r.rho), (0.1, 0.5));
    assert_eq!(r.cells.len(), 1);

    let cfg = GridSearchConfig::new(vec![0.05, 0.1, 0.2], vec![0.0, 0.9]);
    let r = grid_search(&parent, &probe, &cfg, 0).unwrap();
    let csv = sweep_csv(&r.cells);
    assert_eq!(csv.lines().next().unwrap(), SWEEP_CSV_HEADER);
    assert_eq!(csv.lines().count(), 1 + 6);
    assert_eq!(grid_search(&parent, &probe, &cfg, 0).unwrap(), r);
}
