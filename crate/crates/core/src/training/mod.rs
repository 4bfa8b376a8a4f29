//! Minibatch training and the convergence study.
//!
//! Randomness is derived from `TrainConfig::seed`: the split, the weight
//! initialisation, the per-epoch shuffle and the per-path dropout masks each
//! get their own derived stream. Batch gradients are reduced sequentially in
//! batch order, so results are bitwise identical for any worker count.

mod study;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::njode::{forward_path, record_forward, ForwardTrace, NjodeConfig, NjodeModel};
use crate::objective::{
    evaluation_metric, oracle_grid, oracle_terms, path_loss_terms, record_path_loss, stable_mean,
    LossReport,
};
use crate::rng::{derive_seed, rng_for, tag};
use crate::sde::{split_dataset, Dataset, Path, SdeModel, TimeGrid};
use crate::tensor::{AdamConfig, AdamState, DropoutSource, Mode, Tape};
use crate::{Error, Result};

pub use study::{convergence_study, summarize_study, CellSummary, StudyGrid, StudyRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    Full,
    Masked,
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(InputMode::Full),
            "masked" => Ok(InputMode::Masked),
            other => Err(Error::InvalidParameter(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Hidden width `M` of every net.
    pub hidden: usize,
    /// Latent dimension `d_H`.
    pub latent: usize,
    pub dropout: f64,
    pub seed: u64,
    pub mode: InputMode,
    /// Evaluate on the test split every this many epochs; 0 disables it.
    pub eval_every: usize,
    pub train_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 200,
            lr: 0.001,
            weight_decay: 0.0005,
            hidden: 50,
            latent: 10,
            dropout: 0.1,
            seed: 0,
            mode: InputMode::Full,
            eval_every: 1,
            train_frac: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr < 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter("learning rate and weight decay must be >= 0".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::InvalidParameter(format!("train fraction {} not in (0, 1)", self.train_frac)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }

    pub fn model_config(&self, dim: usize, grid: &TimeGrid) -> NjodeConfig {
        NjodeConfig {
            dim_x: dim,
            dim_y: dim,
            latent_dim: self.latent,
            hidden: self.hidden,
            dropout: self.dropout,
            masked: self.mode == InputMode::Masked,
            residual_jump: true,
            residual_readout: true,
            dt: grid.mesh(),
        }
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, &[tag::SPLIT])
    }

    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        derive_seed(self.seed, &[tag::EPOCH, epoch as u64])
    }
}

/// Loss and summed-then-averaged gradients of a batch.
pub struct BatchGradients {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

fn path_gradient(
    model: &NjodeModel,
    path: &Path,
    grid: &TimeGrid,
    dropout_seed: Option<u64>,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape, true);
    let mut dropout = match dropout_seed {
        Some(seed) => DropoutSource::train(derive_seed(seed, &[tag::DROPOUT, path.path_id as u64])),
        None => DropoutSource::eval(),
    };
    let rec = record_forward(model, &mut tape, &params, path, grid, &mut dropout)?;
    let Some(loss) = record_path_loss(&mut tape, path, &rec, model.config.masked)? else {
        return Ok((0.0, None));
    };
    let value = tape.scalar(loss);
    let mut grads = tape.backward(loss, &[1.0])?;
    let lens = model.param_lens();
    let g = params.ids().into_iter().zip(lens).map(|(id, n)| grads.take(id, n)).collect();
    Ok((value, Some(g)))
}

/// Gradient of the mean loss over `paths`. With `dropout_seed` set the
/// forward passes run in training mode.
pub fn batch_gradients(
    model: &NjodeModel,
    paths: &[&Path],
    grid: &TimeGrid,
    dropout_seed: Option<u64>,
) -> Result<BatchGradients> {
    if paths.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let per_path: Vec<(f64, Option<Vec<Vec<f64>>>)> = paths
        .par_iter()
        .map(|p| path_gradient(model, p, grid, dropout_seed))
        .collect::<Result<_>>()?;
    let mut grads: Vec<Vec<f64>> = model.param_lens().into_iter().map(|n| vec![0.0; n]).collect();
    for g in per_path.iter().filter_map(|(_, g)| g.as_ref()) {
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
        }
    }
    let scale = 1.0 / paths.len() as f64;
    grads.iter_mut().flatten().for_each(|v| *v *= scale);
    let terms: Vec<f64> = per_path.iter().map(|(l, _)| *l).collect();
    Ok(BatchGradients { loss: stable_mean(&terms), grads })
}

/// One pass over `train` in a shuffled order with one Adam step per batch.
/// Returns the batch losses averaged with batch-size weights.
pub fn train_epoch(
    model: &mut NjodeModel,
    adam: &mut AdamState,
    train: &[Path],
    grid: &TimeGrid,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::Precondition("empty training set".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng_for(epoch_seed, &[tag::EPOCH]));
    let dropout_seed = (model.config.dropout > 0.0).then_some(epoch_seed);
    let mut weighted = 0.0;
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        let batch: Vec<&Path> = chunk.iter().map(|&i| &train[i]).collect();
        let BatchGradients { loss, grads } =
            batch_gradients(model, &batch, grid, dropout_seed.map(|s| derive_seed(s, &[b as u64])))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss of batch {b} (first path id {})",
                batch[0].path_id
            )));
        }
        adam.step(&mut model.params_mut(), &grads)?;
        weighted += loss * batch.len() as f64;
    }
    Ok(weighted / train.len() as f64)
}

/// Eval-mode traces for every path, in input order.
pub fn predict(model: &NjodeModel, paths: &[Path], grid: &TimeGrid) -> Result<Vec<ForwardTrace>> {
    paths.par_iter().map(|p| forward_path(model, p, grid, Mode::Eval)).collect()
}

/// Test-split statistics of a model.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub loss_terms: Vec<f64>,
    pub oracle_loss: Option<f64>,
    pub oracle_terms: Option<Vec<f64>>,
    pub eval_metric: Option<f64>,
    pub paired_se: Option<f64>,
    pub traces: Vec<ForwardTrace>,
}

impl Evaluation {
    pub fn relative_difference(&self) -> Option<f64> {
        self.oracle_loss.map(|o| (self.loss - o) / o)
    }
}

/// Evaluates the model on `paths`. Oracle quantities are `None` when the
/// schedules are not fully observed.
pub fn evaluate(model: &NjodeModel, paths: &[Path], grid: &TimeGrid, sde: &SdeModel) -> Result<Evaluation> {
    let traces = predict(model, paths, grid)?;
    let loss_terms = path_loss_terms(paths, &traces, model.config.masked)?;
    let loss = stable_mean(&loss_terms);
    let fully_observed = paths.iter().all(|p| p.schedule.is_fully_observed());
    let (oracle_loss, oracle_terms, eval_metric, paired_se) = if fully_observed {
        let o_terms = oracle_terms(paths, grid, sde)?;
        let grids = paths
            .par_iter()
            .map(|p| oracle_grid(sde, p, grid))
            .collect::<Result<Vec<_>>>()?;
        let metric = evaluation_metric(&grids, &traces)?;
        let diffs: Vec<f64> = loss_terms.iter().zip(&o_terms).map(|(a, b)| a - b).collect();
        let se = crate::objective::sample_std(&diffs) / (diffs.len() as f64).sqrt();
        (Some(stable_mean(&o_terms)), Some(o_terms), Some(metric), Some(se))
    } else {
        (None, None, None, None)
    };
    Ok(Evaluation { loss, loss_terms, oracle_loss, oracle_terms, eval_metric, paired_se, traces })
}

pub struct TrainOutcome {
    pub model: NjodeModel,
    pub reports: Vec<LossReport>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Trains on a given split. `on_epoch` sees every logged report.
pub fn train_on_split(
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&LossReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Precondition("empty training set".into()));
    }
    if cfg.batch_size > train.len() {
        return Err(Error::InvalidParameter(format!(
            "batch size {} exceeds training set size {}",
            cfg.batch_size,
            train.len()
        )));
    }
    let train_ids = train.ids();
    let test_ids = test.ids();
    if test_ids.iter().any(|id| train_ids.binary_search(id).is_ok()) {
        return Err(Error::Precondition("test path also present in the training set".into()));
    }
    let grid = train.grid;
    let mut model = NjodeModel::new(cfg.model_config(train.dim(), &grid), cfg.seed)?;
    let mut adam = AdamState::new(cfg.adam(), &model.param_lens());
    let mut reports = Vec::new();
    for epoch in 1..=cfg.epochs {
        let train_loss = train_epoch(&mut model, &mut adam, &train.paths, &grid, cfg.batch_size, cfg.epoch_seed(epoch))?;
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        if due && !test.is_empty() {
            let ev = evaluate(&model, &test.paths, &grid, &test.model)?;
            let report = LossReport {
                epoch,
                train_loss,
                test_loss: ev.loss,
                oracle_loss: ev.oracle_loss,
                relative_difference: ev.relative_difference(),
                eval_metric: ev.eval_metric,
                paired_se: ev.paired_se,
            };
            on_epoch(&report);
            reports.push(report);
        }
    }
    Ok(TrainOutcome { model, reports, train_ids, test_ids })
}

/// Splits `dataset` by `cfg.train_frac` and trains.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, on_epoch: impl FnMut(&LossReport)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (tr, te) = split_dataset(dataset, cfg.train_frac, cfg.split_seed())?;
    train_on_split(&tr, &te, cfg, on_epoch)
}

/// Runs `f` on a dedicated pool of `workers` threads (all cores if `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}
