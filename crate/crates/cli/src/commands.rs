use std::fs;
use std::path::Path;

use njode::objective::LossReport;
use njode::run::{self, RunConfig, Split};
use njode::sde::{generate_dataset, read_dataset, write_dataset, Dataset, GenerateOptions, SdeModel, TimeGrid};
use njode::training::{self, convergence_study, evaluate, summarize_study, InputMode, StudyGrid, TrainConfig};
use njode::{Error, Result};

use crate::{EvalArgs, ExportArgs, GenerateArgs, HyperArgs, StudyArgs, TrainArgs};

fn parse_param(s: &str) -> Result<(&str, f64)> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidParameter(format!("--param '{s}' is not NAME=VALUE")))?;
    let value = value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("--param {name}: '{value}' is not a number")))?;
    Ok((name.trim(), value))
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let mut model = SdeModel::preset(&a.model, a.dim)?;
    for p in &a.params {
        let (name, value) = parse_param(p)?;
        model.set_param(name, value)?;
    }
    let grid = TimeGrid::new(a.t, a.grid)?;
    let opts = GenerateOptions {
        n_paths: a.n,
        obs_prob: a.obs_prob,
        mask_mode: a.mask_mode.parse()?,
        master_seed: a.seed,
    };
    let ds = generate_dataset(model, grid, opts)?;
    write_dataset(&ds, &a.out)?;
    eprintln!("wrote {} {} paths to {}", ds.len(), ds.model.kind_name(), a.out.display());
    Ok(())
}

fn train_config(h: &HyperArgs, hidden: usize) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        epochs: h.epochs,
        batch_size: h.batch,
        lr: h.lr,
        weight_decay: h.weight_decay,
        hidden,
        latent: h.latent,
        dropout: h.dropout,
        seed: h.seed,
        mode: h.mode.parse()?,
        eval_every: h.eval_every,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn check_mode(ds: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if cfg.mode == InputMode::Full && !ds.fully_observed() {
        return Err(Error::InvalidParameter(
            "dataset has partially observed coordinates; train with --mode masked".into(),
        ));
    }
    Ok(())
}

fn progress(r: &LossReport) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    eprintln!(
        "epoch {:>4}  train {:.6}  test {:.6}  oracle {}  rel {}  metric {}",
        r.epoch,
        r.train_loss,
        r.test_loss,
        opt(r.oracle_loss),
        opt(r.relative_difference),
        opt(r.eval_metric)
    );
}

pub fn train(a: TrainArgs, workers: Option<usize>) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let cfg = train_config(&a.hyper, a.hidden)?;
    check_mode(&ds, &cfg)?;
    fs::create_dir_all(&a.out)?;
    let config = RunConfig {
        command: "train".into(),
        data: a.data.display().to_string(),
        train: cfg,
        model: cfg.model_config(ds.dim(), &ds.grid),
        sde: ds.model,
        grid: ds.grid,
        workers,
        study: None,
        conventions: run::conventions(),
    };
    run::write_config(&a.out, &config)?;
    let out = training::train(&ds, &cfg, progress)?;
    run::write_split(&a.out, &Split { train_ids: out.train_ids, test_ids: out.test_ids.clone() })?;
    run::write_curves(&a.out.join(run::CURVES_FILE), &out.reports)?;
    run::save_checkpoint(&a.out, &out.model, cfg.seed)?;
    let test = ds.subset(&out.test_ids)?;
    let traces = training::predict(&out.model, &test.paths, &test.grid)?;
    let oracle = test.fully_observed().then_some(&test.model);
    run::write_predictions(&a.out.join(run::PREDICTIONS_FILE), &test, &traces, oracle)?;
    eprintln!("wrote run to {}", a.out.display());
    Ok(())
}

fn eval_subset(run_dir: &Path, ds: &Dataset, all: bool) -> Result<Dataset> {
    if all {
        return Ok(ds.clone());
    }
    let split = run::read_split(run_dir)?;
    ds.subset(&split.test_ids).map_err(|e| {
        Error::Data(format!("run's test split does not match the dataset: {e}"))
    })
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (model, _) = run::load_checkpoint(&a.run)?;
    let ds = read_dataset(&a.data)?;
    if ds.dim() != model.config.dim_x {
        return Err(Error::Data(format!(
            "dataset has dimension {}, model expects {}",
            ds.dim(),
            model.config.dim_x
        )));
    }
    let data = eval_subset(&a.run, &ds, a.all)?;
    if a.metric && !data.fully_observed() {
        return Err(Error::NoOracle(
            "the evaluation metric needs the true conditional expectation, which is only \
             available for fully observed paths"
                .into(),
        ));
    }
    let ev = evaluate(&model, &data.paths, &data.grid, &data.model)?;
    let epoch = run::read_curves(&a.run.join(run::CURVES_FILE))
        .ok()
        .and_then(|c| c.last().map(|r| r.epoch));
    let report = serde_json::json!({
        "epoch": epoch,
        "n_paths": data.len(),
        "test_loss": ev.loss,
        "oracle_loss": ev.oracle_loss,
        "relative_difference": ev.relative_difference(),
        "eval_metric": ev.eval_metric,
        "paired_se": ev.paired_se,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    let out = a.out.unwrap_or_else(|| a.run.join(run::PREDICTIONS_FILE));
    let oracle = ev.oracle_loss.is_some().then_some(&data.model);
    run::write_predictions(&out, &data, &ev.traces, oracle)
}

pub fn study(a: StudyArgs, workers: Option<usize>) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let cfg = train_config(&a.hyper, a.m.first().copied().unwrap_or(1))?;
    check_mode(&ds, &cfg)?;
    let grid = StudyGrid { n1_values: a.n1, m_values: a.m, repeats: a.repeats, test_size: a.test_size };
    grid.validate(ds.len())?;
    fs::create_dir_all(&a.out)?;
    let config = RunConfig {
        command: "study".into(),
        data: a.data.display().to_string(),
        train: cfg,
        model: cfg.model_config(ds.dim(), &ds.grid),
        sde: ds.model,
        grid: ds.grid,
        workers,
        study: Some(grid.clone()),
        conventions: run::conventions(),
    };
    run::write_config(&a.out, &config)?;
    let rows = convergence_study(&ds, &grid, &cfg)?;
    run::write_study(&a.out.join(run::STUDY_FILE), &rows)?;
    for c in summarize_study(&rows) {
        eprintln!(
            "N1 {:>6}  M {:>4}  min {:.6} ± {:.6}  last {:.6} ± {:.6}",
            c.n1, c.m, c.min_mean, c.min_std, c.last_mean, c.last_std
        );
    }
    Ok(())
}

pub fn export(a: ExportArgs) -> Result<()> {
    if let Some(study) = &a.study {
        let rows = run::read_study(study)?;
        return run::write_study_summary(&a.out, &summarize_study(&rows));
    }
    let (Some(run_dir), Some(data)) = (&a.run, &a.data) else {
        return Err(Error::InvalidParameter("export needs --study, or --run with --data".into()));
    };
    let (model, _) = run::load_checkpoint(run_dir)?;
    let ds = read_dataset(data)?;
    let mut test = eval_subset(run_dir, &ds, false)?;
    if let Some(n) = a.limit {
        test.paths.truncate(n);
    }
    let traces = training::predict(&model, &test.paths, &test.grid)?;
    let oracle = test.fully_observed().then_some(&test.model);
    run::write_predictions(&a.out, &test, &traces, oracle)
}
