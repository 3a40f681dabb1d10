//! Masks, their complements and the mirrored quad on a toy genome.

use smd::evolution::average_weights;
use smd::mutation::{apply, compose, mirrored_quad, partition_masks, sample_mask, sample_noise, Sign};
use smd::nn::ParamVector;

fn main() -> smd::Result<()> {
    let theta = ParamVector::new(vec![0.5, -1.0, 2.0, 0.0, 0.25, -0.75, 1.5, 3.0])?;
    let mask = sample_mask(theta.len(), 0.5, 11)?;
    let noise = sample_noise(theta.len(), 0.0, 0.1, 12)?;
    println!("mask        {}", mask.to_rle());
    println!("complement  {}", mask.complement().to_rle());

    let gamma = compose(&noise, &mask)?;
    let child = apply(&theta, &gamma, Sign::Plus)?;
    for (i, (t, c)) in theta.as_slice().iter().zip(child.as_slice()).enumerate() {
        println!(
            "  θ[{i}] = {t:>6.3} -> {c:>8.5}{}",
            if mask.get(i) { "" } else { "  (frozen)" }
        );
    }

    let quad = mirrored_quad(&theta, &noise, &mask)?;
    let mean = average_weights(&quad.iter().collect::<Vec<_>>())?;
    println!("mean of the mirrored quad equals the parent: {}", mean == theta);

    for (k, m) in partition_masks(theta.len(), 3, 5)?.iter().enumerate() {
        println!("partition {k}: {}", m.to_rle());
    }
    Ok(())
}
