//! Static versus dynamic subspaces across σ and ρ, written as CSV to stdout.

use smd::datasets::{split, SpiralParams, SplitSpec};
use smd::evolution::{ablation_csv, run_ablation, AblationConfig};
use smd::nn::{init_network, train_model, Activation, NetworkSpec, TrainConfig};

fn main() -> smd::Result<()> {
    let train = SpiralParams::new(2500, 1).generate()?;
    let holdout = SpiralParams::new(250, 2).generate()?;
    let parts = split(
        &holdout,
        &SplitSpec {
            fractions: vec![0.5, 0.5],
            seed: 3,
        },
    )?;
    let spec = NetworkSpec::new(vec![2, 64, 64, 64, 2], Activation::Relu, 7);
    let parent = train_model(&init_network(&spec)?, &train, &TrainConfig::default())?.network;

    let cfg = AblationConfig::new(vec![0.05, 0.15, 0.25], vec![0.0, 0.5, 0.9], vec![0, 1, 2]);
    let rows = run_ablation(&parent, &cfg, &parts[0], &parts[1])?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
