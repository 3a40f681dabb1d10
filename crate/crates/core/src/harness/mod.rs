//! The pipeline behind the `smd` binary: config loading, parent
//! preparation and the five commands. Each command writes its artifacts into
//! an output directory and returns the paths it wrote.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{
    BoundaryConfig, DataSource, EvolutionConfig, ModelConfig, ModelSource, MutationConfig, MutationSource,
    OutputConfig, RunConfig, TaskConfig,
};

use crate::datasets::{split, Dataset};
use crate::divergence::{grid_search, sweep_csv, GridSearchResult};
use crate::error::{Error, Result};
use crate::evolution::{ablation_csv, run_ablation, run_generation, EvalReport, REPORT_CSV_HEADER};
use crate::matrix::Matrix;
use crate::metrics::{accuracy, argmax};
use crate::mutation::{child_mask, mutate, spawn_mutations, MutationParams};
use crate::nn::{read_checkpoint, train_model, write_checkpoint, Network, TrainOutcome};
use crate::rng::derive_seed;

/// Environment variable that overrides `--out` and the config's output dir.
pub const OUT_ENV: &str = "SMD_OUT";

const SEARCH_STREAM: u64 = 0x7365_6172;
const BOUNDARY_STREAM: u64 = 0x626f_756e;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Search,
    Evolve,
    Boundary,
    Ablate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Options {
    /// Worker threads; `None` uses the default pool.
    pub workers: Option<usize>,
    /// Independent evolve runs; the one with the best validation fitness is reported.
    pub repeats: usize,
    pub out: Option<PathBuf>,
    /// Write the mask of every child as run-length text (evolve only).
    pub dump_masks: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            workers: None,
            repeats: 1,
            out: None,
            dump_masks: false,
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Lines meant for standard output.
    pub lines: Vec<String>,
}

/// Output directory: `SMD_OUT`, then `--out`, then the config.
pub fn output_dir(cfg: &RunConfig, opts: &Options) -> PathBuf {
    if let Some(dir) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

/// Loads the config at `path` and runs `cmd` inside a pool of `opts.workers` threads.
pub fn run(cmd: Command, path: &Path, opts: &Options) -> Result<Outcome> {
    let cfg = RunConfig::load(path)?;
    run_config(cmd, &cfg, opts)
}

pub fn run_config(cmd: Command, cfg: &RunConfig, opts: &Options) -> Result<Outcome> {
    if opts.repeats == 0 {
        return Err(Error::config("--repeats must be at least 1"));
    }
    let out = output_dir(cfg, opts);
    let job = || match cmd {
        Command::Train => cmd_train(cfg, &out),
        Command::Search => cmd_search(cfg, &out),
        Command::Evolve => cmd_evolve(cfg, &out, opts),
        Command::Boundary => cmd_boundary(cfg, &out),
        Command::Ablate => cmd_ablate(cfg, &out),
    };
    match opts.workers {
        None => job(),
        Some(0) => Err(Error::config("--workers must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("cannot start {n} workers: {e}")))?
            .install(job),
    }
}

/// Validation and test halves of the holdout source.
#[derive(Debug, Clone)]
pub struct Splits {
    pub val: Dataset,
    pub test: Dataset,
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    if cfg.task.split.fractions.len() != 2 {
        return Err(Error::config(
            "task.split must have exactly two fractions (validation, test)",
        ));
    }
    let holdout = cfg.task.holdout.load(&cfg.base_dir, cfg.task.class_count)?;
    let mut parts = split(&holdout, &cfg.task.split)?.into_iter();
    let val = parts.next().expect("two parts");
    let test = parts.next().expect("two parts");
    Ok(Splits { val, test })
}

pub fn load_train(cfg: &RunConfig) -> Result<Dataset> {
    cfg.task
        .train
        .as_ref()
        .ok_or_else(|| Error::config("task.train is required to train a model"))?
        .load(&cfg.base_dir, cfg.task.class_count)
}

/// Trains the configured parent from scratch.
pub fn train_parent(cfg: &RunConfig) -> Result<TrainOutcome> {
    match cfg.model.source()? {
        ModelSource::Train { network, train } => {
            let data = load_train(cfg)?;
            let net = crate::nn::init_network(&network)?;
            train_model(&net, &data, &train)
        }
        ModelSource::Checkpoint(_) => Err(Error::config("model.train is required for this command")),
    }
}

/// Parent network: trained in process or read from the checkpoint.
pub fn load_parent(cfg: &RunConfig) -> Result<Network> {
    match cfg.model.source()? {
        ModelSource::Train { .. } => Ok(train_parent(cfg)?.network),
        ModelSource::Checkpoint(path) => read_checkpoint(cfg.resolve(&path)),
    }
}

fn check_task(parent: &Network, data: &Dataset, what: &str) -> Result<()> {
    if data.dim() != parent.spec().input_dim() {
        return Err(Error::TaskMismatch(format!(
            "{what} data has {} features but the network expects {}",
            data.dim(),
            parent.spec().input_dim()
        )));
    }
    if data.class_count() > parent.spec().output_dim() {
        return Err(Error::TaskMismatch(format!(
            "{what} data has {} classes but the network has {} outputs",
            data.class_count(),
            parent.spec().output_dim()
        )));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: PathBuf, bytes: impl AsRef<[u8]>, outcome: &mut Outcome) -> Result<()> {
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    outcome.files.push(path);
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    param_count: usize,
    initial_loss: f64,
    final_loss: Option<f64>,
    train_accuracy: Option<f64>,
    val_accuracy: f64,
}

/// Trains the parent and writes `parent.smd`, `train_log.csv` and `train.json`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let trained = train_parent(cfg)?;
    let splits = load_splits(cfg)?;
    check_task(&trained.network, &splits.val, "validation")?;
    let val_accuracy = accuracy(
        &trained.network.predict_proba(splits.val.inputs())?,
        splits.val.labels(),
    )?;

    create_dir(out)?;
    let mut outcome = Outcome::default();
    let ckpt = out.join("parent.smd");
    write_checkpoint(&trained.network, &ckpt)?;
    outcome.files.push(ckpt);

    let mut log = String::from("epoch,loss,train_accuracy\n");
    for e in &trained.history {
        writeln!(log, "{},{},{}", e.epoch, e.loss, e.accuracy).expect("string write");
    }
    write_file(out.join("train_log.csv"), log, &mut outcome)?;
    let summary = TrainSummary {
        param_count: trained.network.params().len(),
        initial_loss: trained.initial_loss,
        final_loss: trained.history.last().map(|e| e.loss),
        train_accuracy: trained.final_accuracy(),
        val_accuracy,
    };
    write_file(out.join("train.json"), to_json(&summary), &mut outcome)?;
    outcome.lines.push(format!(
        "trained {} parameters: train accuracy {:.4}, validation accuracy {:.4}",
        summary.param_count,
        summary.train_accuracy.unwrap_or(f64::NAN),
        val_accuracy
    ));
    Ok(outcome)
}

fn search_with(cfg: &RunConfig, parent: &Network, val: &Dataset) -> Result<GridSearchResult> {
    match cfg.mutation.as_ref().map(MutationConfig::source).transpose()? {
        Some(MutationSource::Search(search)) => {
            check_task(parent, val, "validation")?;
            grid_search(parent, val, &search, derive_seed(cfg.seed, &[SEARCH_STREAM]))
        }
        _ => Err(Error::config("mutation.search is required for this command")),
    }
}

fn write_search(result: &GridSearchResult, out: &Path, outcome: &mut Outcome) -> Result<()> {
    write_file(out.join("search.json"), to_json(result), outcome)?;
    write_file(out.join("sweep.csv"), sweep_csv(&result.cells), outcome)
}

fn out_of_band(result: &GridSearchResult) -> Error {
    Error::OutOfBand {
        sigma: result.sigma,
        rho: result.rho,
        mean_kl: result.report.kl,
    }
}

/// KL-targeted grid search on the validation split. Writes `search.json` and
/// `sweep.csv`; fails with an out-of-band error after writing when no cell
/// reached the band.
pub fn cmd_search(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let parent = load_parent(cfg)?;
    let splits = load_splits(cfg)?;
    let result = search_with(cfg, &parent, &splits.val)?;
    create_dir(out)?;
    let mut outcome = Outcome::default();
    write_search(&result, out, &mut outcome)?;
    if !result.in_band {
        return Err(out_of_band(&result));
    }
    outcome.lines.push(format!(
        "selected sigma={} rho={} mean_kl={:.5} child accuracy {:.4}",
        result.sigma, result.rho, result.report.kl, result.report.child_accuracy
    ));
    Ok(outcome)
}

/// Master seed of repeat `r`.
pub fn repeat_seed(master: u64, r: usize) -> u64 {
    if r == 0 {
        master
    } else {
        derive_seed(master, &[r as u64])
    }
}

fn selected_val_fitness(report: &EvalReport) -> f64 {
    let sum: f64 = report.selected.iter().map(|&i| report.per_child[i].fitness).sum();
    sum / report.selected.len() as f64
}

/// One or more generations of evolution. Writes `report.json` (the chosen
/// repeat), `reports.csv` (every repeat) and, with several repeats,
/// `repeats.json`.
pub fn cmd_evolve(cfg: &RunConfig, out: &Path, opts: &Options) -> Result<Outcome> {
    let splits = load_splits(cfg)?;
    if splits.val.overlaps(&splits.test) {
        return Err(Error::DataHygiene("validation and test splits share samples".into()));
    }
    let parent = load_parent(cfg)?;
    check_task(&parent, &splits.val, "validation")?;
    check_task(&parent, &splits.test, "test")?;

    let mut outcome = Outcome::default();
    let mutation = match cfg
        .mutation
        .as_ref()
        .ok_or_else(|| Error::config("mutation section is required for evolve"))?
        .source()?
    {
        MutationSource::Explicit(p) => p,
        MutationSource::Search(search) => {
            let result = search_with(cfg, &parent, &splits.val)?;
            create_dir(out)?;
            write_search(&result, out, &mut outcome)?;
            if !result.in_band {
                outcome
                    .lines
                    .push(format!("warning: {}; continuing with it", out_of_band(&result)));
            }
            search.sampling.params(result.sigma, result.rho)
        }
    };
    let gen = cfg.evolution.with_mutation(mutation);
    gen.validate()?;

    let mut reports = Vec::with_capacity(opts.repeats);
    for r in 0..opts.repeats {
        reports.push(run_generation(
            &parent,
            &gen,
            &splits.val,
            &splits.test,
            repeat_seed(cfg.seed, r),
        )?);
    }
    // best validation fitness of the selected children, first repeat on ties
    let best = (0..reports.len())
        .rev()
        .max_by(|&a, &b| selected_val_fitness(&reports[a]).total_cmp(&selected_val_fitness(&reports[b])))
        .expect("at least one repeat");

    create_dir(out)?;
    write_file(out.join("report.json"), to_json(&reports[best]), &mut outcome)?;
    let mut csv = format!("{REPORT_CSV_HEADER}\n");
    for report in &reports {
        csv.push_str(&report.csv_row());
        csv.push('\n');
    }
    write_file(out.join("reports.csv"), csv, &mut outcome)?;
    if reports.len() > 1 {
        write_file(out.join("repeats.json"), to_json(&reports), &mut outcome)?;
    }
    if opts.dump_masks {
        write_file(
            out.join("masks.txt"),
            mask_dump(&parent, &gen.mutation, cfg.seed, gen.pop_size)?,
            &mut outcome,
        )?;
    }
    outcome.lines.push(reports[best].summary_line());
    Ok(outcome)
}

/// Run-length text of each first-generation child's mask.
fn mask_dump(parent: &Network, params: &MutationParams, master: u64, pop_size: usize) -> Result<String> {
    let children = spawn_mutations(parent.params(), params, pop_size, derive_seed(master, &[0]))?;
    let mut text = String::new();
    for c in &children {
        let mask = child_mask(parent.params().len(), params, &c.record)?;
        writeln!(
            text,
            "child={} group={} {}",
            c.record.index,
            c.record.group,
            mask.to_rle()
        )
        .expect("string write");
    }
    Ok(text)
}

/// Evenly spaced lattice over the padded bounding box of `points`, row 0 at
/// the top (largest y) so it maps directly onto image rows.
pub fn lattice(points: &[&Matrix], resolution: usize, padding: f64) -> Result<Matrix> {
    if resolution < 2 {
        return Err(Error::config("boundary resolution must be at least 2"));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for m in points {
        for row in m.iter_rows() {
            for d in 0..2 {
                lo[d] = lo[d].min(row[d]);
                hi[d] = hi[d].max(row[d]);
            }
        }
    }
    if !lo[0].is_finite() {
        return Err(Error::config("no data to bound the boundary lattice"));
    }
    for d in 0..2 {
        let pad = padding * (hi[d] - lo[d]);
        lo[d] -= pad;
        hi[d] += pad;
    }
    let step = |d: usize| (hi[d] - lo[d]) / (resolution - 1) as f64;
    let mut data = Vec::with_capacity(resolution * resolution * 2);
    for j in 0..resolution {
        let y = hi[1] - j as f64 * step(1);
        for i in 0..resolution {
            data.push(lo[0] + i as f64 * step(0));
            data.push(y);
        }
    }
    Matrix::from_vec(resolution * resolution, 2, data)
}

/// Portable graymap of the predicted classes, spread over 0..=255.
pub fn pgm(classes: &[usize], resolution: usize, class_count: usize) -> Vec<u8> {
    let mut bytes = format!("P5 {resolution} {resolution} 255\n").into_bytes();
    let top = class_count.saturating_sub(1).max(1);
    bytes.extend(classes.iter().map(|&c| (c.min(top) * 255 / top) as u8));
    bytes
}

/// File stem for one boundary cell.
pub fn boundary_stem(sigma: f64, rho: f64) -> String {
    format!("boundary_sigma{sigma}_rho{rho}")
}

/// Decision regions of one mutated child per `(sigma, rho)` cell; `sigma = 0`
/// is the parent itself.
pub fn cmd_boundary(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let bcfg = cfg
        .boundary
        .as_ref()
        .ok_or_else(|| Error::config("boundary section is required"))?;
    if bcfg.sigma_grid.is_empty() || bcfg.rho_grid.is_empty() {
        return Err(Error::config("boundary grids must be nonempty"));
    }
    if bcfg.sigma_grid.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::config("boundary sigmas must be finite and nonnegative"));
    }
    let splits = load_splits(cfg)?;
    if splits.val.dim() != 2 {
        return Err(Error::TaskMismatch(format!(
            "boundary needs 2-D inputs, data has {}",
            splits.val.dim()
        )));
    }
    let parent = load_parent(cfg)?;
    if parent.spec().input_dim() != 2 {
        return Err(Error::TaskMismatch(format!(
            "boundary needs a 2-input network, got {}",
            parent.spec().input_dim()
        )));
    }
    let train = match &cfg.task.train {
        Some(src) => Some(src.load(&cfg.base_dir, cfg.task.class_count)?),
        None => None,
    };
    let mut bounds = vec![splits.val.inputs(), splits.test.inputs()];
    bounds.extend(train.as_ref().map(Dataset::inputs));
    let grid = lattice(&bounds, bcfg.resolution, bcfg.padding)?;

    create_dir(out)?;
    let mut outcome = Outcome::default();
    let mut cell = 0u64;
    for &rho in &bcfg.rho_grid {
        for &sigma in &bcfg.sigma_grid {
            let net = if sigma == 0.0 {
                parent.clone()
            } else {
                let params = MutationParams {
                    subspace_mode: bcfg.subspace_mode,
                    ..MutationParams::new(sigma, rho)
                };
                parent.with_params(mutate(
                    parent.params(),
                    &params,
                    derive_seed(cfg.seed, &[BOUNDARY_STREAM, cell]),
                )?)?
            };
            cell += 1;
            let probs = net.predict_proba(&grid)?;
            let mut classes = Vec::with_capacity(grid.rows());
            let mut csv = String::from("x,y,class,confidence\n");
            for (point, p) in grid.iter_rows().zip(probs.iter_rows()) {
                let c = argmax(p);
                classes.push(c);
                writeln!(csv, "{},{},{},{}", point[0], point[1], c, p[c]).expect("string write");
            }
            let stem = boundary_stem(sigma, rho);
            write_file(out.join(format!("{stem}.csv")), csv, &mut outcome)?;
            write_file(
                out.join(format!("{stem}.pgm")),
                pgm(&classes, bcfg.resolution, parent.spec().output_dim()),
                &mut outcome,
            )?;
        }
    }
    outcome.lines.push(format!("wrote {} boundary cells", cell));
    Ok(outcome)
}

/// Ablation sweep over the configured grids; writes `ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let acfg = cfg
        .ablation
        .as_ref()
        .ok_or_else(|| Error::config("ablation section is required"))?;
    let splits = load_splits(cfg)?;
    if splits.val.overlaps(&splits.test) {
        return Err(Error::DataHygiene("validation and test splits share samples".into()));
    }
    let parent = load_parent(cfg)?;
    check_task(&parent, &splits.val, "validation")?;
    let rows = run_ablation(&parent, acfg, &splits.val, &splits.test)?;
    create_dir(out)?;
    let mut outcome = Outcome::default();
    write_file(out.join("ablation.csv"), ablation_csv(&rows), &mut outcome)?;
    outcome.lines.push(format!("wrote {} ablation rows", rows.len()));
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_spans_padded_box() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0]]).unwrap();
        let g = lattice(&[&pts], 3, 0.1).unwrap();
        assert_eq!(g.rows(), 9);
        assert_eq!(g.row(0), &[-0.1, 2.2]);
        assert!((g.row(8)[0] - 1.1).abs() < 1e-12 && (g.row(8)[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn pgm_header_and_pixels() {
        let bytes = pgm(&[0, 1, 1, 0], 2, 2);
        assert!(bytes.starts_with(b"P5 2 2 255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 255, 0]);
    }

    #[test]
    fn stems_encode_sigma_and_rho() {
        assert_eq!(boundary_stem(0.05, 0.9), "boundary_sigma0.05_rho0.9");
        assert_eq!(boundary_stem(0.25, 0.0), "boundary_sigma0.25_rho0");
    }

    #[test]
    fn first_repeat_uses_master_seed() {
        assert_eq!(repeat_seed(9, 0), 9);
        assert_ne!(repeat_seed(9, 1), 9);
    }
}
