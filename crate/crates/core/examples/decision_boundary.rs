//! Decision regions of mutated spiral classifiers as PGM images.
//!
//! cargo run --release --example decision_boundary -- [out_dir]

use std::path::PathBuf;

use smd::datasets::SpiralParams;
use smd::harness::{boundary_stem, lattice, pgm};
use smd::metrics::argmax;
use smd::mutation::{mutate, MutationParams};
use smd::nn::{init_network, train_model, Activation, NetworkSpec, TrainConfig};

fn main() -> smd::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "boundaries".into()));
    std::fs::create_dir_all(&out).map_err(|e| smd::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let train = SpiralParams::new(2500, 1).generate()?;
    let spec = NetworkSpec::new(vec![2, 64, 64, 64, 2], Activation::Relu, 7);
    let parent = train_model(&init_network(&spec)?, &train, &TrainConfig::default())?.network;

    let res = 200;
    let grid = lattice(&[train.inputs()], res, 0.1)?;
    for rho in [0.0, 0.9] {
        for sigma in [0.05, 0.25] {
            let child = parent.with_params(mutate(parent.params(), &MutationParams::new(sigma, rho), 1)?)?;
            let classes: Vec<usize> = child.predict_proba(&grid)?.iter_rows().map(argmax).collect();
            let path = out.join(format!("{}.pgm", boundary_stem(sigma, rho)));
            std::fs::write(&path, pgm(&classes, res, 2)).map_err(|e| smd::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let flipped = classes
                .iter()
                .zip(parent.predict_proba(&grid)?.iter_rows())
                .filter(|(c, p)| **c != argmax(p))
                .count();
            println!(
                "{}: {:.1}% of the lattice changed class",
                path.display(),
                100.0 * flipped as f64 / classes.len() as f64
            );
        }
    }
    Ok(())
}
