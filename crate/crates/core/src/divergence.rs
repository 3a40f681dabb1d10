//! Output-divergence probes between a parent and a mutated child, and the
//! `(sigma, rho)` grid search that targets a KL budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::accuracy;
use crate::mutation::{spawn_mutations, MutationParams, SubspaceMode};
use crate::nn::{forward_params, softmax, Network, PROB_EPS};
use crate::rng::derive_seed;

fn same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "output shapes differ: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::config("divergence over an empty probe set"));
    }
    Ok(())
}

/// Mean over samples of the summed squared logit difference.
pub fn mse_from_logits(parent: &Matrix, child: &Matrix) -> Result<f64> {
    same_shape(parent, child)?;
    let total: f64 = parent
        .iter_rows()
        .zip(child.iter_rows())
        .map(|(p, c)| p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(total / parent.rows() as f64)
}

fn clamped_distribution(logits: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(logits);
    crate::nn::softmax_in_place(out);
    let mut sum = 0.0;
    for v in out.iter_mut() {
        *v = v.max(PROB_EPS);
        sum += *v;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

/// Mean over samples of `KL(softmax(parent) ‖ softmax(child))`, both sides
/// floored at `1e-12` and renormalized.
pub fn kl_from_logits(parent: &Matrix, child: &Matrix) -> Result<f64> {
    same_shape(parent, child)?;
    let mut p = Vec::with_capacity(parent.cols());
    let mut q = Vec::with_capacity(parent.cols());
    let mut total = 0.0;
    for (pr, cr) in parent.iter_rows().zip(child.iter_rows()) {
        clamped_distribution(pr, &mut p);
        clamped_distribution(cr, &mut q);
        total += p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
    }
    Ok((total / parent.rows() as f64).max(0.0))
}

fn check_pair(parent: &Network, child: &Network) -> Result<()> {
    if !parent.spec().same_architecture(child.spec()) {
        return Err(Error::shape("parent and child architectures differ"));
    }
    Ok(())
}

pub fn output_mse(parent: &Network, child: &Network, probe: &Matrix) -> Result<f64> {
    check_pair(parent, child)?;
    mse_from_logits(&parent.forward(probe)?, &child.forward(probe)?)
}

pub fn output_kl(parent: &Network, child: &Network, probe: &Matrix) -> Result<f64> {
    check_pair(parent, child)?;
    kl_from_logits(&parent.forward(probe)?, &child.forward(probe)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub mse: f64,
    pub kl: f64,
    pub probe_size: usize,
    pub child_accuracy: f64,
}

/// How children are drawn in each grid cell; `sigma` and `rho` come from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellSampling {
    pub mu: f64,
    pub subspace_mode: SubspaceMode,
    pub mirrored: bool,
    pub anti_random: bool,
}

impl Default for CellSampling {
    fn default() -> Self {
        Self {
            mu: 0.0,
            subspace_mode: SubspaceMode::Dynamic,
            mirrored: true,
            anti_random: false,
        }
    }
}

impl CellSampling {
    pub fn params(&self, sigma: f64, rho: f64) -> MutationParams {
        MutationParams {
            mu: self.mu,
            sigma,
            rho,
            subspace_mode: self.subspace_mode,
            mirrored: self.mirrored,
            anti_random: self.anti_random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchConfig {
    pub sigma_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    #[serde(default = "GridSearchConfig::default_target")]
    pub kl_target: f64,
    /// Relative half-width of the accepted KL band.
    #[serde(default = "GridSearchConfig::default_tolerance")]
    pub kl_tolerance: f64,
    #[serde(default = "GridSearchConfig::default_samples")]
    pub samples_per_cell: usize,
    #[serde(default = "GridSearchConfig::default_probe")]
    pub probe_size: usize,
    #[serde(default)]
    pub sampling: CellSampling,
}

impl GridSearchConfig {
    fn default_target() -> f64 {
        0.05
    }
    fn default_tolerance() -> f64 {
        0.5
    }
    fn default_samples() -> usize {
        4
    }
    fn default_probe() -> usize {
        1000
    }

    pub fn new(sigma_grid: Vec<f64>, rho_grid: Vec<f64>) -> Self {
        Self {
            sigma_grid,
            rho_grid,
            kl_target: Self::default_target(),
            kl_tolerance: Self::default_tolerance(),
            samples_per_cell: Self::default_samples(),
            probe_size: Self::default_probe(),
            sampling: CellSampling::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_grids(&self.sigma_grid, &self.rho_grid)?;
        if !(self.kl_target > 0.0) {
            return Err(Error::config("kl_target must be positive"));
        }
        if !(self.kl_tolerance > 0.0) {
            return Err(Error::config("kl_tolerance must be positive"));
        }
        if self.samples_per_cell == 0 || self.probe_size == 0 {
            return Err(Error::config("samples_per_cell and probe_size must be positive"));
        }
        Ok(())
    }

    pub fn in_band(&self, kl: f64) -> bool {
        (kl - self.kl_target).abs() <= self.kl_target * self.kl_tolerance
    }
}

pub(crate) fn validate_grids(sigma_grid: &[f64], rho_grid: &[f64]) -> Result<()> {
    if sigma_grid.is_empty() || rho_grid.is_empty() {
        return Err(Error::config("sigma and rho grids must be nonempty"));
    }
    if sigma_grid.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::config("sigma grid values must be positive"));
    }
    if rho_grid.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(Error::config("rho grid values must lie in [0, 1)"));
    }
    let ascending = |g: &[f64]| g.windows(2).all(|w| w[0] < w[1]);
    if !ascending(sigma_grid) || !ascending(rho_grid) {
        return Err(Error::config("grids must be strictly ascending"));
    }
    Ok(())
}

/// Averages over the children of one `(sigma, rho)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub sigma: f64,
    pub rho: f64,
    pub mean_kl: f64,
    pub mean_mse: f64,
    pub mean_child_acc: f64,
    pub n_children: usize,
}

impl CellSummary {
    pub fn report(&self, probe_size: usize) -> DivergenceReport {
        DivergenceReport {
            mse: self.mean_mse,
            kl: self.mean_kl,
            probe_size,
            child_accuracy: self.mean_child_acc,
        }
    }
}

fn probe_subset(probe: &Dataset, probe_size: usize) -> Result<Dataset> {
    if probe.len() <= probe_size {
        return Ok(probe.clone());
    }
    probe.subset(&(0..probe_size).collect::<Vec<_>>())
}

/// Evaluates every cell, ordered by `(rho, sigma)`. Cell `k` in that order
/// draws its children from `derive_seed(master_seed, [k])`.
pub fn sweep(
    parent: &Network,
    probe: &Dataset,
    sigma_grid: &[f64],
    rho_grid: &[f64],
    samples_per_cell: usize,
    sampling: &CellSampling,
    master_seed: u64,
) -> Result<Vec<CellSummary>> {
    validate_grids(sigma_grid, rho_grid)?;
    if samples_per_cell == 0 {
        return Err(Error::config("samples_per_cell must be positive"));
    }
    let spec = parent.spec();
    let parent_logits = parent.forward(probe.inputs())?;
    let cells: Vec<(f64, f64)> = rho_grid
        .iter()
        .flat_map(|&r| sigma_grid.iter().map(move |&s| (s, r)))
        .collect();

    cells
        .par_iter()
        .enumerate()
        .map(|(k, &(sigma, rho))| {
            let params = sampling.params(sigma, rho);
            let children = spawn_mutations(
                parent.params(),
                &params,
                samples_per_cell,
                derive_seed(master_seed, &[k as u64]),
            )?;
            let per_child = children
                .par_iter()
                .map(|c| {
                    let logits = forward_params(spec, c.params.as_slice(), probe.inputs())?;
                    Ok((
                        kl_from_logits(&parent_logits, &logits)?,
                        mse_from_logits(&parent_logits, &logits)?,
                        accuracy(&softmax(&logits), probe.labels())?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = per_child.len() as f64;
            Ok(CellSummary {
                sigma,
                rho,
                mean_kl: per_child.iter().map(|c| c.0).sum::<f64>() / n,
                mean_mse: per_child.iter().map(|c| c.1).sum::<f64>() / n,
                mean_child_acc: per_child.iter().map(|c| c.2).sum::<f64>() / n,
                n_children: per_child.len(),
            })
        })
        .collect()
}

/// Full `(sigma, rho)` sweep of mean KL and child accuracy.
pub fn kl_accuracy_curve(
    parent: &Network,
    probe: &Dataset,
    sigma_grid: &[f64],
    rho_grid: &[f64],
    samples_per_cell: usize,
    master_seed: u64,
) -> Result<Vec<CellSummary>> {
    sweep(
        parent,
        probe,
        sigma_grid,
        rho_grid,
        samples_per_cell,
        &CellSampling::default(),
        master_seed,
    )
}

pub const SWEEP_CSV_HEADER: &str = "sigma,rho,mean_kl,mean_mse,mean_child_acc,n_children";

pub fn sweep_csv(cells: &[CellSummary]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.sigma, c.rho, c.mean_kl, c.mean_mse, c.mean_child_acc, c.n_children
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub sigma: f64,
    pub rho: f64,
    pub report: DivergenceReport,
    /// False when no cell reached the KL band and the closest cell was taken.
    pub in_band: bool,
    pub cells: Vec<CellSummary>,
}

/// Picks the in-band cell with the best mean child accuracy, or the cell
/// closest to the target when none is in band. Ties prefer larger sigma,
/// then larger rho.
pub fn select_cell(cells: &[CellSummary], cfg: &GridSearchConfig) -> Result<(usize, bool)> {
    if cells.is_empty() {
        return Err(Error::config("empty grid"));
    }
    let tie = |a: &CellSummary, b: &CellSummary| a.sigma.total_cmp(&b.sigma).then(a.rho.total_cmp(&b.rho));
    let in_band: Vec<usize> = (0..cells.len()).filter(|&i| cfg.in_band(cells[i].mean_kl)).collect();
    if !in_band.is_empty() {
        let best = in_band
            .into_iter()
            .max_by(|&a, &b| {
                cells[a]
                    .mean_child_acc
                    .total_cmp(&cells[b].mean_child_acc)
                    .then_with(|| tie(&cells[a], &cells[b]))
            })
            .expect("nonempty");
        return Ok((best, true));
    }
    let dist = |c: &CellSummary| (c.mean_kl - cfg.kl_target).abs();
    let best = (0..cells.len())
        .max_by(|&a, &b| {
            dist(&cells[b])
                .total_cmp(&dist(&cells[a]))
                .then_with(|| tie(&cells[a], &cells[b]))
        })
        .expect("nonempty");
    Ok((best, false))
}

pub fn grid_search(
    parent: &Network,
    probe: &Dataset,
    cfg: &GridSearchConfig,
    master_seed: u64,
) -> Result<GridSearchResult> {
    cfg.validate()?;
    let probe = probe_subset(probe, cfg.probe_size)?;
    let cells = sweep(
        parent,
        &probe,
        &cfg.sigma_grid,
        &cfg.rho_grid,
        cfg.samples_per_cell,
        &cfg.sampling,
        master_seed,
    )?;
    let (best, in_band) = select_cell(&cells, cfg)?;
    Ok(GridSearchResult {
        sigma: cells[best].sigma,
        rho: cells[best].rho,
        report: cells[best].report(probe.len()),
        in_band,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = m(&[[1.0, 0.0]]);
        assert_eq!(mse_from_logits(&a, &a).unwrap(), 0.0);
        let b = m(&[[1.0, 2.0]]);
        assert_eq!(mse_from_logits(&a, &b).unwrap(), 4.0);
        assert_eq!(mse_from_logits(&b, &a).unwrap(), 4.0);
        assert!(mse_from_logits(&a, &m(&[[1.0, 0.0], [0.0, 0.0]])).is_err());
    }

    #[test]
    fn kl_examples() {
        let a = m(&[[0.3, -1.0], [2.0, 0.5]]);
        assert_eq!(kl_from_logits(&a, &a).unwrap(), 0.0);
        // logits whose softmax is [0.5, 0.5] and [0.9, 0.1]
        let p = m(&[[0.0, 0.0]]);
        let q = m(&[[9f64.ln(), 0.0]]);
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl_from_logits(&p, &q).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn kl_stays_finite_for_saturated_outputs() {
        let p = m(&[[1000.0, -1000.0]]);
        let q = m(&[[-1000.0, 1000.0]]);
        let kl = kl_from_logits(&p, &q).unwrap();
        assert!(kl.is_finite() && kl > 0.0);
    }

    fn cell(sigma: f64, rho: f64, kl: f64, acc: f64) -> CellSummary {
        CellSummary {
            sigma,
            rho,
            mean_kl: kl,
            mean_mse: 0.0,
            mean_child_acc: acc,
            n_children: 4,
        }
    }

    #[test]
    fn selection_prefers_accuracy_in_band() {
        let cfg = GridSearchConfig::new(vec![0.1], vec![0.5]);
        let cells = [
            cell(0.1, 0.0, 0.2, 0.99),
            cell(0.05, 0.5, 0.05, 0.9),
            cell(0.1, 0.5, 0.04, 0.8),
        ];
        assert_eq!(select_cell(&cells, &cfg).unwrap(), (1, true));
    }

    #[test]
    fn selection_falls_back_to_closest_kl() {
        let cfg = GridSearchConfig::new(vec![0.1], vec![0.5]);
        let cells = [
            cell(0.01, 0.0, 1e-4, 0.9),
            cell(0.02, 0.0, 2e-3, 0.8),
            cell(0.01, 0.5, 1e-5, 0.95),
        ];
        assert_eq!(select_cell(&cells, &cfg).unwrap(), (1, false));
    }

    #[test]
    fn selection_tie_breaks() {
        let cfg = GridSearchConfig::new(vec![0.1], vec![0.5]);
        let cells = [
            cell(0.1, 0.5, 0.05, 0.9),
            cell(0.2, 0.5, 0.05, 0.9),
            cell(0.2, 0.9, 0.05, 0.9),
        ];
        assert_eq!(select_cell(&cells, &cfg).unwrap(), (2, true));
        assert!(select_cell(&[], &cfg).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grids(&[], &[0.5]).is_err());
        assert!(validate_grids(&[0.2, 0.1], &[0.5]).is_err());
        assert!(validate_grids(&[0.1], &[1.0]).is_err());
        assert!(validate_grids(&[0.1, 0.2], &[0.0, 0.5]).is_ok());
    }
}
