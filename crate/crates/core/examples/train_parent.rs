//! Train the three-layer spiral MLP and save it as a checkpoint.
//!
//! cargo run --release --example train_parent -- [out.smd]

use smd::datasets::{split, SpiralParams, SplitSpec};
use smd::metrics::metric_triple;
use smd::nn::{init_network, train_model, write_checkpoint, Activation, NetworkSpec, TrainConfig};

fn main() -> smd::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "parent.smd".into());
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
    let outcome = train_model(&init_network(&spec)?, &train, &TrainConfig::default())?;
    for e in &outcome.history {
        println!("epoch {:>2}  loss {:.4}  train acc {:.4}", e.epoch, e.loss, e.accuracy);
    }
    let val = metric_triple(&outcome.network.predict_proba(parts[0].inputs())?, parts[0].labels())?;
    println!(
        "validation: acc {:.4}  nll {:.4}  ece {:.4}",
        val.accuracy, val.nll, val.ece
    );
    write_checkpoint(&outcome.network, &out)?;
    println!("wrote {out} ({} parameters)", outcome.network.params().len());
    Ok(())
}
