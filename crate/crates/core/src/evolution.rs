//! One-generation evolutionary fine tuning: spawn a mutated population,
//! score it on a validation split, keep the top candidates and combine them
//! by weight averaging or by softmax ensembling.
//!
//! Model selection only ever reads the validation split. The test split is
//! read once, after selection, to produce the final report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Samples;
use crate::divergence::{kl_from_logits, validate_grids};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{accuracy, metric_triple, MetricTriple, ECE_BINS};
use crate::mutation::{spawn_mutations, Child, ChildRecord, MutationParams, SubspaceMode};
use crate::nn::{forward_params, nll_loss, softmax, Network, NetworkSpec, ParamVector};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Ensemble,
    WeightAverage,
    #[default]
    Both,
}

impl Combine {
    fn ensemble(self) -> bool {
        matches!(self, Combine::Ensemble | Combine::Both)
    }
    fn average(self) -> bool {
        matches!(self, Combine::WeightAverage | Combine::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub pop_size: usize,
    pub top_k: usize,
    #[serde(default)]
    pub combine: Combine,
    #[serde(default = "one")]
    pub generations: usize,
    pub mutation: MutationParams,
}

fn one() -> usize {
    1
}

impl GenerationConfig {
    pub fn new(pop_size: usize, top_k: usize, mutation: MutationParams) -> Self {
        Self {
            pop_size,
            top_k,
            combine: Combine::Both,
            generations: 1,
            mutation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pop_size == 0 {
            return Err(Error::config("pop_size must be positive"));
        }
        if self.top_k == 0 || self.top_k > self.pop_size {
            return Err(Error::config(format!(
                "top_k must lie in 1..={}, got {}",
                self.pop_size, self.top_k
            )));
        }
        if self.generations == 0 {
            return Err(Error::config("generations must be at least 1"));
        }
        self.mutation.validate()
    }
}

/// Validation scores of one child.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChildScore {
    pub fitness: f64,
    pub val_nll: f64,
    pub kl_to_parent: f64,
}

/// A parent together with its mutated children and, once evaluated, their
/// validation scores.
#[derive(Debug, Clone)]
pub struct Population {
    pub parent: Network,
    pub children: Vec<Child>,
    pub scores: Option<Vec<ChildScore>>,
}

impl Population {
    pub fn spawn(parent: &Network, params: &MutationParams, pop_size: usize, master_seed: u64) -> Result<Self> {
        let children = spawn_mutations(parent.params(), params, pop_size, master_seed)?;
        Ok(Self {
            parent: parent.clone(),
            children,
            scores: None,
        })
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    /// Scores every child on `val` and stores the result.
    pub fn evaluate(&mut self, val: &dyn Samples) -> Result<&[ChildScore]> {
        let scores = score_children(&self.parent, &self.children, val)?;
        Ok(self.scores.insert(scores))
    }

    pub fn fitness(&self) -> Option<Vec<f64>> {
        self.scores.as_ref().map(|s| s.iter().map(|c| c.fitness).collect())
    }

    pub fn select_top_k(&self, k: usize) -> Result<Vec<usize>> {
        let scores = self
            .scores
            .as_ref()
            .ok_or_else(|| Error::State("population has not been evaluated".into()))?;
        let fitness: Vec<f64> = scores.iter().map(|s| s.fitness).collect();
        let nll: Vec<f64> = scores.iter().map(|s| s.val_nll).collect();
        select_top_k(&fitness, &nll, k)
    }
}

fn check_samples(spec: &NetworkSpec, data: &dyn Samples, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::config(format!("{what} set is empty")));
    }
    if data.inputs().cols() != spec.input_dim() {
        return Err(Error::shape(format!(
            "{what} set has {} features, network expects {}",
            data.inputs().cols(),
            spec.input_dim()
        )));
    }
    Ok(())
}

/// Accuracy, NLL and KL-to-parent of each child on `val`. The parent itself
/// is never scored.
pub fn score_children(parent: &Network, children: &[Child], val: &dyn Samples) -> Result<Vec<ChildScore>> {
    let spec = parent.spec();
    check_samples(spec, val, "validation")?;
    let parent_logits = parent.forward(val.inputs())?;
    children
        .par_iter()
        .map(|c| {
            let logits = forward_params(spec, c.params.as_slice(), val.inputs())?;
            let probs = softmax(&logits);
            Ok(ChildScore {
                fitness: accuracy(&probs, val.labels())?,
                val_nll: nll_loss(&probs, val.labels())?,
                kl_to_parent: kl_from_logits(&parent_logits, &logits)?,
            })
        })
        .collect()
}

/// Validation accuracy of every child.
pub fn evaluate_fitness(pop: &Population, val: &dyn Samples) -> Result<Vec<f64>> {
    Ok(score_children(&pop.parent, &pop.children, val)?
        .into_iter()
        .map(|s| s.fitness)
        .collect())
}

/// Indices of the `k` best children: highest fitness, then lowest validation
/// NLL, then lowest index.
pub fn select_top_k(fitness: &[f64], val_nll: &[f64], k: usize) -> Result<Vec<usize>> {
    if fitness.len() != val_nll.len() {
        return Err(Error::shape("fitness and nll lengths differ"));
    }
    if k == 0 || k > fitness.len() {
        return Err(Error::config(format!(
            "cannot select {k} of {} children",
            fitness.len()
        )));
    }
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| {
        fitness[b]
            .total_cmp(&fitness[a])
            .then(val_nll[a].total_cmp(&val_nll[b]))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// Coordinatewise mean, computed as `x₀ + Σ(xᵢ − x₀)/n` so identical
/// candidates and mirrored pairs come back exactly.
pub fn average_weights(candidates: &[&ParamVector]) -> Result<ParamVector> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::config("cannot average an empty candidate list"))?;
    let w = first.len();
    if let Some(c) = candidates.iter().find(|c| c.len() != w) {
        return Err(Error::shape(format!("candidate lengths differ: {} vs {w}", c.len())));
    }
    let n = candidates.len() as f64;
    let base = first.as_slice();
    let mut offset = vec![0.0f64; w];
    for c in &candidates[1..] {
        for ((o, &v), &b) in offset.iter_mut().zip(c.as_slice()).zip(base) {
            *o += v - b;
        }
    }
    ParamVector::new(base.iter().zip(&offset).map(|(&b, &o)| b + o / n).collect())
}

/// Unweighted mean of the members' softmax outputs.
pub fn ensemble_predict(members: &[Network], inputs: &Matrix) -> Result<Matrix> {
    let first = members
        .first()
        .ok_or_else(|| Error::config("an ensemble needs at least one member"))?;
    if members.iter().any(|m| !m.spec().same_architecture(first.spec())) {
        return Err(Error::shape("ensemble members have different architectures"));
    }
    let params: Vec<&ParamVector> = members.iter().map(Network::params).collect();
    ensemble_predict_params(first.spec(), &params, inputs)
}

pub(crate) fn ensemble_predict_params(spec: &NetworkSpec, members: &[&ParamVector], inputs: &Matrix) -> Result<Matrix> {
    if members.is_empty() {
        return Err(Error::config("an ensemble needs at least one member"));
    }
    let probs: Vec<Matrix> = members
        .par_iter()
        .map(|p| forward_params(spec, p.as_slice(), inputs).map(|l| softmax(&l)))
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; probs[0].as_slice().len()];
    for p in &probs {
        for (s, v) in sum.iter_mut().zip(p.as_slice()) {
            *s += v;
        }
    }
    let s = members.len() as f64;
    Matrix::from_vec(
        inputs.rows(),
        spec.output_dim(),
        sum.into_iter().map(|v| v / s).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChildReport {
    pub index: usize,
    pub fitness: f64,
    pub val_nll: f64,
    pub kl_to_parent: f64,
    pub record: ChildRecord,
}

/// Validation-side summary of one generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub mean_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub parent: MetricTriple,
    pub averaged: Option<MetricTriple>,
    pub ensemble: Option<MetricTriple>,
    /// Ensemble accuracy minus parent accuracy (averaged model when no ensemble is reported).
    pub delta_acc: f64,
    pub per_child: Vec<ChildReport>,
    pub selected: Vec<usize>,
    /// Mean KL to the parent over all children of the last generation.
    pub mean_kl_all: f64,
    /// Mean KL to the parent over the selected children.
    pub mean_kl_selected: f64,
    pub history: Vec<GenerationSummary>,
    pub ece_bins: usize,
    pub config: GenerationConfig,
    pub seed: u64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Runs `cfg.generations` rounds. Each round draws children from
/// `derive_seed(master_seed, [round])`, selects on `val` and passes the
/// averaged model on as the next parent. Metrics of the original parent and
/// of the last round's combinations are then computed on `test`.
pub fn run_generation(
    parent: &Network,
    cfg: &GenerationConfig,
    val: &dyn Samples,
    test: &dyn Samples,
    master_seed: u64,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_samples(parent.spec(), val, "validation")?;

    let mut current = parent.clone();
    let mut history = Vec::with_capacity(cfg.generations);
    let mut last: Option<(Population, Vec<usize>, ParamVector)> = None;
    for g in 0..cfg.generations {
        let mut pop = Population::spawn(
            &current,
            &cfg.mutation,
            cfg.pop_size,
            derive_seed(master_seed, &[g as u64]),
        )?;
        let scores = pop.evaluate(val)?.to_vec();
        let selected = pop.select_top_k(cfg.top_k)?;
        let chosen: Vec<&ParamVector> = selected.iter().map(|&i| &pop.children[i].params).collect();
        let averaged = average_weights(&chosen)?;
        history.push(GenerationSummary {
            generation: g + 1,
            best_fitness: scores.iter().map(|s| s.fitness).fold(f64::NEG_INFINITY, f64::max),
            mean_fitness: mean(scores.iter().map(|s| s.fitness)),
            mean_kl: mean(scores.iter().map(|s| s.kl_to_parent)),
        });
        current = current.with_params(averaged.clone())?;
        last = Some((pop, selected, averaged));
    }
    let (pop, selected, averaged) = last.expect("at least one generation");
    let scores = pop.scores.as_ref().expect("evaluated");

    // Selection is finished; the test split is read from here on only.
    check_samples(parent.spec(), test, "test")?;
    let test_inputs = test.inputs();
    let labels = test.labels();
    let spec = parent.spec();
    let parent_metrics = metric_triple(&parent.predict_proba(test_inputs)?, labels)?;
    let averaged_metrics = if cfg.combine.average() {
        Some(metric_triple(
            &softmax(&forward_params(spec, averaged.as_slice(), test_inputs)?),
            labels,
        )?)
    } else {
        None
    };
    let ensemble_metrics = if cfg.combine.ensemble() {
        let members: Vec<&ParamVector> = selected.iter().map(|&i| &pop.children[i].params).collect();
        Some(metric_triple(
            &ensemble_predict_params(spec, &members, test_inputs)?,
            labels,
        )?)
    } else {
        None
    };
    let combined = ensemble_metrics
        .or(averaged_metrics)
        .expect("combine reports at least one model");

    Ok(EvalReport {
        parent: parent_metrics,
        averaged: averaged_metrics,
        ensemble: ensemble_metrics,
        delta_acc: combined.accuracy - parent_metrics.accuracy,
        per_child: pop
            .children
            .iter()
            .zip(scores)
            .map(|(c, s)| ChildReport {
                index: c.record.index,
                fitness: s.fitness,
                val_nll: s.val_nll,
                kl_to_parent: s.kl_to_parent,
                record: c.record,
            })
            .collect(),
        mean_kl_all: mean(scores.iter().map(|s| s.kl_to_parent)),
        mean_kl_selected: mean(selected.iter().map(|&i| scores[i].kl_to_parent)),
        selected,
        history,
        ece_bins: ECE_BINS,
        config: *cfg,
        seed: master_seed,
    })
}

pub const REPORT_CSV_HEADER: &str = "seed,sigma,rho,mode,pop_size,top_k,generations,acc,nll,ece,avg_acc,avg_nll,avg_ece,ens_acc,ens_nll,ens_ece,delta_acc,mean_kl_all,mean_kl_selected";

impl EvalReport {
    /// One CSV row matching [`REPORT_CSV_HEADER`]; absent combinations are empty fields.
    pub fn csv_row(&self) -> String {
        let opt = |m: Option<MetricTriple>| match m {
            Some(m) => format!("{},{},{}", m.accuracy, m.nll, m.ece),
            None => ",,".to_string(),
        };
        let mutation = &self.config.mutation;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            mutation.sigma,
            mutation.rho,
            mutation.subspace_mode,
            self.config.pop_size,
            self.config.top_k,
            self.config.generations,
            self.parent.accuracy,
            self.parent.nll,
            self.parent.ece,
            opt(self.averaged),
            opt(self.ensemble),
            self.delta_acc,
            self.mean_kl_all,
            self.mean_kl_selected,
        )
    }

    /// Table-style line: Acc NLL ECE eAcc eNLL eECE ΔAcc σ ρ KL. Accuracies in percent.
    pub fn summary_line(&self) -> String {
        let e = self.ensemble.or(self.averaged).unwrap_or(self.parent);
        format!(
            "Acc={:.2} NLL={:.4} ECE={:.4} eAcc={:.2} eNLL={:.4} eECE={:.4} ΔAcc={:.2} σ={} ρ={} KL={:.4}",
            100.0 * self.parent.accuracy,
            self.parent.nll,
            self.parent.ece,
            100.0 * e.accuracy,
            e.nll,
            e.ece,
            100.0 * self.delta_acc,
            self.config.mutation.sigma,
            self.config.mutation.rho,
            self.mean_kl_all
        )
    }
}

/// One row of an ablation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sigma: f64,
    pub rho: f64,
    pub mode: SubspaceMode,
    pub seed: u64,
    pub mean_kl: f64,
    pub avg_acc: f64,
    pub ens_acc: f64,
}

pub const ABLATION_CSV_HEADER: &str = "sigma,rho,mode,seed,mean_kl,avg_acc,ens_acc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub sigma_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    #[serde(default = "AblationConfig::default_modes")]
    pub modes: Vec<SubspaceMode>,
    pub seeds: Vec<u64>,
    #[serde(default = "AblationConfig::default_pop")]
    pub pop_size: usize,
    #[serde(default = "AblationConfig::default_top")]
    pub top_k: usize,
    #[serde(default = "default_mirrored")]
    pub mirrored: bool,
    #[serde(default)]
    pub anti_random: bool,
}

fn default_mirrored() -> bool {
    true
}

impl AblationConfig {
    fn default_modes() -> Vec<SubspaceMode> {
        vec![SubspaceMode::Static, SubspaceMode::Dynamic]
    }
    fn default_pop() -> usize {
        16
    }
    fn default_top() -> usize {
        4
    }

    pub fn new(sigma_grid: Vec<f64>, rho_grid: Vec<f64>, seeds: Vec<u64>) -> Self {
        Self {
            sigma_grid,
            rho_grid,
            modes: Self::default_modes(),
            seeds,
            pop_size: Self::default_pop(),
            top_k: Self::default_top(),
            mirrored: true,
            anti_random: false,
        }
    }
}

/// One [`run_generation`] per `(rho, sigma, mode, seed)`, rows in that nesting
/// order. Every cell with the same seed reuses it as master seed, so cells
/// differ only in `sigma`, `rho` and mode.
pub fn run_ablation(
    parent: &Network,
    cfg: &AblationConfig,
    val: &dyn Samples,
    test: &dyn Samples,
) -> Result<Vec<AblationRow>> {
    validate_grids(&cfg.sigma_grid, &cfg.rho_grid)?;
    if cfg.modes.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::config("ablation needs at least one mode and one seed"));
    }
    let mut jobs = Vec::new();
    for &rho in &cfg.rho_grid {
        for &sigma in &cfg.sigma_grid {
            for &mode in &cfg.modes {
                for &seed in &cfg.seeds {
                    jobs.push((sigma, rho, mode, seed));
                }
            }
        }
    }
    jobs.par_iter()
        .map(|&(sigma, rho, mode, seed)| {
            let mutation = MutationParams {
                mu: 0.0,
                sigma,
                rho,
                subspace_mode: mode,
                mirrored: cfg.mirrored,
                anti_random: cfg.anti_random,
            };
            let gen = GenerationConfig {
                pop_size: cfg.pop_size,
                top_k: cfg.top_k,
                combine: Combine::Both,
                generations: 1,
                mutation,
            };
            let report = run_generation(parent, &gen, val, test, seed)?;
            Ok(AblationRow {
                sigma,
                rho,
                mode,
                seed,
                mean_kl: report.mean_kl_all,
                avg_acc: report.averaged.expect("both").accuracy,
                ens_acc: report.ensemble.expect("both").accuracy,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.sigma, r.rho, r.mode, r.seed, r.mean_kl, r.avg_acc, r.ens_acc
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};

    #[test]
    fn top_k_tie_breaks() {
        let f = [0.5, 0.5, 0.5, 0.5];
        let nll = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(select_top_k(&f, &nll, 2).unwrap(), vec![0, 1]);
        let nll = [1.0, 0.5, 1.0, 0.2];
        assert_eq!(select_top_k(&f, &nll, 2).unwrap(), vec![3, 1]);
        let f = [0.1, 0.9, 0.5, 0.7];
        assert_eq!(select_top_k(&f, &[0.0; 4], 4).unwrap(), vec![1, 3, 2, 0]);
        assert!(select_top_k(&f, &[0.0; 4], 5).is_err());
        assert!(select_top_k(&f, &[0.0; 4], 0).is_err());
    }

    #[test]
    fn unevaluated_population_cannot_select() {
        let net = crate::nn::init_network(&NetworkSpec::new(vec![2, 3, 2], Activation::Relu, 1)).unwrap();
        let pop = Population::spawn(&net, &MutationParams::new(0.1, 0.5), 4, 0).unwrap();
        assert!(matches!(pop.select_top_k(2), Err(Error::State(_))));
    }

    #[test]
    fn averaging_examples() {
        let a = ParamVector::new(vec![0.1, -0.3, 7.0]).unwrap();
        assert_eq!(average_weights(&[&a, &a, &a]).unwrap(), a);
        let plus = ParamVector::new(vec![1.25, 0.5]).unwrap();
        let minus = ParamVector::new(vec![0.75, -0.5]).unwrap();
        assert_eq!(average_weights(&[&plus, &minus]).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(average_weights(&[]).is_err());
        let short = ParamVector::new(vec![1.0]).unwrap();
        assert!(matches!(average_weights(&[&plus, &short]), Err(Error::Shape(_))));
    }

    #[test]
    fn ensemble_of_fixed_distributions() {
        // one-weight, one-bias networks with zero input weight emit their biases as logits
        let spec = NetworkSpec::new(vec![1, 2], Activation::Relu, 0);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let a = Network::new(spec.clone(), ParamVector::new(vec![0.0, 0.0, logit(0.6), 0.0]).unwrap()).unwrap();
        let b = Network::new(spec, ParamVector::new(vec![0.0, 0.0, logit(0.2), 0.0]).unwrap()).unwrap();
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let p = ensemble_predict(&[a.clone(), b], &x).unwrap();
        assert!((p.get(0, 0) - 0.4).abs() < 1e-12);
        assert!((p.get(0, 1) - 0.6).abs() < 1e-12);
        assert_eq!(crate::metrics::argmax(p.row(0)), 1);
        assert_eq!(
            ensemble_predict(std::slice::from_ref(&a), &x).unwrap(),
            a.predict_proba(&x).unwrap()
        );
        assert!(ensemble_predict(&[], &x).is_err());
    }
}
