//! Sweep (σ, ρ) on a freshly trained spiral parent and pick the cell nearest
//! a KL budget of 0.05.

use smd::datasets::{split, SpiralParams, SplitSpec};
use smd::divergence::{grid_search, GridSearchConfig};
use smd::nn::{init_network, train_model, Activation, NetworkSpec, TrainConfig};

fn main() -> smd::Result<()> {
    let train = SpiralParams::new(2500, 1).generate()?;
    let holdout = SpiralParams::new(250, 2).generate()?;
    let val = split(
        &holdout,
        &SplitSpec {
            fractions: vec![0.5, 0.5],
            seed: 3,
        },
    )?
    .remove(0);
    let spec = NetworkSpec::new(vec![2, 64, 64, 64, 2], Activation::Relu, 7);
    let parent = train_model(&init_network(&spec)?, &train, &TrainConfig::default())?.network;

    let mut cfg = GridSearchConfig::new(vec![0.02, 0.05, 0.1, 0.15, 0.2, 0.25], vec![0.0, 0.5, 0.9]);
    cfg.samples_per_cell = 8;
    let result = grid_search(&parent, &val, &cfg, 0)?;

    println!("{:>6} {:>5} {:>9} {:>9}", "sigma", "rho", "mean_kl", "child_acc");
    for c in &result.cells {
        println!(
            "{:>6} {:>5} {:>9.5} {:>9.4}",
            c.sigma, c.rho, c.mean_kl, c.mean_child_acc
        );
    }
    println!(
        "chosen sigma={} rho={} (KL {:.4}, {})",
        result.sigma,
        result.rho,
        result.report.kl,
        if result.in_band {
            "in band"
        } else {
            "closest cell, out of band"
        }
    );
    Ok(())
}
