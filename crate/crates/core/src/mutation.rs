//! Sparse mutation algebra.
//!
//! A sparse mutation is `γ = N ∘ M`: Gaussian noise `N` restricted by a binary
//! mask `M`. Children are `θ + γ` and, with mirrored sampling, `θ − γ`. With
//! anti-random sampling the same noise is also applied through the
//! complement mask `1 − M`, giving the quad
//!
//! ```text
//! C1 = θ + N∘M    C2 = θ + N∘(1−M)    C3 = θ − N∘M    C4 = θ − N∘(1−M)
//! ```
//!
//! `rho` is always the probability that a coordinate is frozen, so `rho = 0.9`
//! mutates about a tenth of the genome.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::rng::{derive_seed, rng_from, stream};

/// Binary mask over the genome; `true` marks a mutable coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn ones(w: usize) -> Self {
        Self(vec![true; w])
    }

    pub fn zeros(w: usize) -> Self {
        Self(vec![false; w])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn popcount(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Mask {
        Mask(self.0.iter().map(|b| !b).collect())
    }

    /// Run-length text such as `w=6:1x2,0x3,1x1`, for debugging dumps.
    pub fn to_rle(&self) -> String {
        let mut out = format!("w={}:", self.len());
        let mut runs = Vec::new();
        let mut iter = self.0.iter().peekable();
        while let Some(&bit) = iter.next() {
            let mut n = 1;
            while iter.peek() == Some(&&bit) {
                iter.next();
                n += 1;
            }
            runs.push(format!("{}x{n}", u8::from(bit)));
        }
        out.push_str(&runs.join(","));
        out
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::config(format!("rho must lie in [0, 1), got {rho}")));
    }
    Ok(())
}

/// Each bit is independently 1 with probability `1 - rho`.
pub fn sample_mask(w: usize, rho: f64, seed: u64) -> Result<Mask> {
    check_rho(rho)?;
    let mut rng = rng_from(seed);
    Ok(Mask((0..w).map(|_| rng.random::<f64>() >= rho).collect()))
}

pub fn complement(m: &Mask) -> Mask {
    m.complement()
}

/// Assigns every coordinate uniformly at random to exactly one of `n_parts`
/// masks.
pub fn partition_masks(w: usize, n_parts: usize, seed: u64) -> Result<Vec<Mask>> {
    if n_parts == 0 || n_parts > w {
        return Err(Error::config(format!(
            "cannot partition {w} parameters into {n_parts} parts"
        )));
    }
    let mut rng = rng_from(seed);
    let owner: Vec<usize> = (0..w).map(|_| rng.random_range(0..n_parts)).collect();
    Ok((0..n_parts)
        .map(|p| Mask(owner.iter().map(|&o| o == p).collect()))
        .collect())
}

/// Gaussian noise. Entries are drawn in `f64` and rounded to `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    values: Vec<f64>,
    seed: u64,
}

impl NoiseVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("noise entries must be finite"));
        }
        Ok(Self { values, seed: 0 })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

pub fn sample_noise(w: usize, mu: f64, sigma: f64, seed: u64) -> Result<NoiseVector> {
    if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return Err(Error::config(format!(
            "noise needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
        )));
    }
    let normal = Normal::new(mu, sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = rng_from(seed);
    let values = (0..w).map(|_| f64::from(normal.sample(&mut rng) as f32)).collect();
    Ok(NoiseVector { values, seed })
}

/// `γ = N ∘ M`; exactly zero wherever the mask is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMutation {
    gamma: Vec<f64>,
    mask: Mask,
    seed: u64,
}

impl SparseMutation {
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Seed of the noise the mutation was built from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn squared_norm(&self) -> f64 {
        self.gamma.iter().map(|g| g * g).sum()
    }
}

pub fn compose(noise: &NoiseVector, mask: &Mask) -> Result<SparseMutation> {
    if noise.len() != mask.len() {
        return Err(Error::shape(format!(
            "noise has {} entries, mask has {}",
            noise.len(),
            mask.len()
        )));
    }
    let gamma = noise
        .values
        .iter()
        .zip(&mask.0)
        .map(|(&n, &m)| if m { n } else { 0.0 })
        .collect();
    Ok(SparseMutation {
        gamma,
        mask: mask.clone(),
        seed: noise.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// `θ + sign·γ`. Masked-out coordinates are copied from the parent untouched.
pub fn apply(theta: &ParamVector, mutation: &SparseMutation, sign: Sign) -> Result<ParamVector> {
    if theta.len() != mutation.gamma.len() {
        return Err(Error::shape(format!(
            "genome has {} parameters, mutation has {}",
            theta.len(),
            mutation.gamma.len()
        )));
    }
    let s = sign.as_f64();
    let values = theta
        .as_slice()
        .iter()
        .zip(&mutation.gamma)
        .zip(&mutation.mask.0)
        .map(|((&t, &g), &m)| if m { t + s * g } else { t })
        .collect();
    Ok(ParamVector::from_raw(values))
}

/// `[θ + N∘M, θ + N∘(1−M), θ − N∘M, θ − N∘(1−M)]`.
pub fn mirrored_quad(theta: &ParamVector, noise: &NoiseVector, mask: &Mask) -> Result<[ParamVector; 4]> {
    let direct = compose(noise, mask)?;
    let anti = compose(noise, &mask.complement())?;
    Ok([
        apply(theta, &direct, Sign::Plus)?,
        apply(theta, &anti, Sign::Plus)?,
        apply(theta, &direct, Sign::Minus)?,
        apply(theta, &anti, Sign::Minus)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SubspaceMode {
    /// One mask shared by every child of the generation.
    Static,
    /// A fresh mask per noise draw.
    #[default]
    Dynamic,
}

impl std::fmt::Display for SubspaceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SubspaceMode::Static => "static",
            SubspaceMode::Dynamic => "dynamic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationParams {
    #[serde(default)]
    pub mu: f64,
    pub sigma: f64,
    pub rho: f64,
    #[serde(default)]
    pub subspace_mode: SubspaceMode,
    #[serde(default = "default_true")]
    pub mirrored: bool,
    #[serde(default)]
    pub anti_random: bool,
}

fn default_true() -> bool {
    true
}

impl MutationParams {
    pub fn new(sigma: f64, rho: f64) -> Self {
        Self {
            mu: 0.0,
            sigma,
            rho,
            subspace_mode: SubspaceMode::Dynamic,
            mirrored: true,
            anti_random: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !self.mu.is_finite() {
            return Err(Error::config("mu must be finite"));
        }
        check_rho(self.rho)
    }

    /// Children produced per noise draw.
    pub fn group_size(&self) -> usize {
        match (self.mirrored, self.anti_random) {
            (true, true) => 4,
            (true, false) | (false, true) => 2,
            (false, false) => 1,
        }
    }
}

/// Provenance of one child: which draw it came from and how it was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub index: usize,
    pub group: usize,
    pub noise_seed: u64,
    pub mask_seed: u64,
    pub complemented: bool,
    pub sign: Sign,
}

#[derive(Debug, Clone)]
pub struct Child {
    pub params: ParamVector,
    pub record: ChildRecord,
}

pub(crate) fn mask_seed(params: &MutationParams, master_seed: u64, group: usize) -> u64 {
    match params.subspace_mode {
        SubspaceMode::Static => derive_seed(master_seed, &[stream::MASK]),
        SubspaceMode::Dynamic => derive_seed(master_seed, &[stream::MASK, group as u64]),
    }
}

/// Draws a population of `pop_size` children around `theta`.
///
/// Children come in groups sharing one noise draw (see
/// [`MutationParams::group_size`]). Group `g` takes its noise seed from
/// `(master_seed, g)` and, in dynamic mode, its mask seed too; static mode
/// uses one mask seed for the whole population. Output is independent of
/// thread scheduling.
pub fn spawn_mutations(
    theta: &ParamVector,
    params: &MutationParams,
    pop_size: usize,
    master_seed: u64,
) -> Result<Vec<Child>> {
    params.validate()?;
    if pop_size == 0 {
        return Err(Error::config("population size must be positive"));
    }
    let group = params.group_size();
    if !pop_size.is_multiple_of(group) {
        return Err(Error::config(format!(
            "population size {pop_size} is not a multiple of {group} (mirrored={}, anti_random={})",
            params.mirrored, params.anti_random
        )));
    }
    let w = theta.len();
    let groups: Vec<Vec<Child>> = (0..pop_size / group)
        .into_par_iter()
        .map(|g| -> Result<Vec<Child>> {
            let noise_seed = derive_seed(master_seed, &[stream::NOISE, g as u64]);
            let mask_seed = mask_seed(params, master_seed, g);
            let noise = sample_noise(w, params.mu, params.sigma, noise_seed)?;
            let mask = sample_mask(w, params.rho, mask_seed)?;
            let direct = compose(&noise, &mask)?;
            let plan: &[(bool, Sign)] = match (params.mirrored, params.anti_random) {
                (true, true) => &[
                    (false, Sign::Plus),
                    (true, Sign::Plus),
                    (false, Sign::Minus),
                    (true, Sign::Minus),
                ],
                (true, false) => &[(false, Sign::Plus), (false, Sign::Minus)],
                (false, true) => &[(false, Sign::Plus), (true, Sign::Plus)],
                (false, false) => &[(false, Sign::Plus)],
            };
            let anti = if params.anti_random {
                Some(compose(&noise, &mask.complement())?)
            } else {
                None
            };
            plan.iter()
                .enumerate()
                .map(|(k, &(complemented, sign))| {
                    let m = if complemented {
                        anti.as_ref().expect("anti mutation built")
                    } else {
                        &direct
                    };
                    Ok(Child {
                        params: apply(theta, m, sign)?,
                        record: ChildRecord {
                            index: g * group + k,
                            group: g,
                            noise_seed,
                            mask_seed,
                            complemented,
                            sign,
                        },
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(groups.into_iter().flatten().collect())
}

/// A single unmirrored child `θ + N∘M` drawn from `seed`.
pub fn mutate(theta: &ParamVector, params: &MutationParams, seed: u64) -> Result<ParamVector> {
    let single = MutationParams {
        mirrored: false,
        anti_random: false,
        ..*params
    };
    let mut kids = spawn_mutations(theta, &single, 1, seed)?;
    Ok(kids.remove(0).params)
}

/// Mask used by a recorded child.
pub fn child_mask(theta_len: usize, params: &MutationParams, record: &ChildRecord) -> Result<Mask> {
    let m = sample_mask(theta_len, params.rho, record.mask_seed)?;
    Ok(if record.complemented { m.complement() } else { m })
}
