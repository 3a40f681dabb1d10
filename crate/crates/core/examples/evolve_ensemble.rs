//! One generation: 16 mirrored children, top 8 by validation accuracy,
//! combined both by weight averaging and as a softmax ensemble.

use smd::datasets::{split, SpiralParams, SplitSpec};
use smd::evolution::{run_generation, GenerationConfig};
use smd::mutation::MutationParams;
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

    let cfg = GenerationConfig::new(16, 8, MutationParams::new(0.1, 0.7));
    for seed in 0..5 {
        let report = run_generation(&parent, &cfg, &parts[0], &parts[1], seed)?;
        let avg = report.averaged.expect("both combinations requested");
        println!(
            "seed {seed}: {}  avgAcc={:.2}",
            report.summary_line(),
            100.0 * avg.accuracy
        );
    }
    Ok(())
}
