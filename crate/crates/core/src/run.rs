//! Run directory files: resolved config, training curves, checkpoint,
//! predictions, study table and the train/test split.
//!
//! Floating-point values are written with 17 significant digits, which
//! round-trips every `f64` exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::njode::{ForwardTrace, NjodeConfig, NjodeModel};
use crate::objective::{oracle_grid, LossReport};
use crate::sde::{fmt_f64, Dataset, SdeModel, TimeGrid};
use crate::training::{CellSummary, StudyGrid, StudyRow, TrainConfig};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const CHECKPOINT_META_FILE: &str = "checkpoint.json";
pub const CHECKPOINT_PARAMS_FILE: &str = "checkpoint.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const STUDY_FILE: &str = "study.csv";
pub const SPLIT_FILE: &str = "split.json";

pub const CHECKPOINT_FORMAT: &str = "njode-checkpoint/1 decimal-17";

pub const CURVES_HEADER: [&str; 6] =
    ["epoch", "train_loss", "test_loss", "oracle_loss", "relative_difference", "eval_metric"];
pub const STUDY_HEADER: [&str; 6] = ["n1", "m", "repeat", "min_metric", "last_metric", "mean_metric"];
pub const PREDICTIONS_HEADER: [&str; 6] = ["path_id", "t", "coord", "y", "xhat_oracle", "observed"];

/// Modelling conventions the training code commits to, written into every
/// run config so a run can be replayed or compared against other choices.
pub fn conventions() -> BTreeMap<String, String> {
    [
        ("dropout", "inverted (scaled by 1/(1-rate) in training, identity in eval), active inside ODE steps"),
        ("weight_decay", "decoupled (p -= lr*wd*p before the Adam update)"),
        ("init", "weights uniform(+-1/sqrt(fan_in)), biases zero"),
        ("readout_residual", "first d_Y latent coordinates added to the readout output"),
        ("jump_residual", "observation added to the first d_X latent coordinates of the jump output"),
        ("multi_dim_metric", "squared errors summed over coordinates, averaged over grid points and paths"),
        ("relative_difference", "(test_loss - oracle_loss) / oracle_loss on the test split"),
        ("loss_index_zero", "the observation at t=0 is excluded from the loss"),
        ("batching", "per-epoch shuffle, last partial batch kept"),
        ("study_subsets", "nested prefixes of one fixed permutation of the non-test pool"),
        ("study_repeats", "repeats vary initialisation, shuffle and dropout seeds; data fixed"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Everything needed to replay a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub data: String,
    pub train: TrainConfig,
    pub model: NjodeConfig,
    pub sde: SdeModel,
    pub grid: TimeGrid,
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyGrid>,
    pub conventions: BTreeMap<String, String>,
}

pub fn write_json<T: Serialize>(path: &FsPath, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &FsPath) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_config(dir: &FsPath, config: &RunConfig) -> Result<()> {
    write_json(&dir.join(CONFIG_FILE), config)
}

pub fn read_config(dir: &FsPath) -> Result<RunConfig> {
    read_json(&dir.join(CONFIG_FILE))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Data(format!("bad {what} value '{s}'")))
}

fn check_header(rdr: &mut csv::Reader<fs::File>, expected: &[&str], file: &str) -> Result<()> {
    let header = rdr.headers()?.clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Data(format!("{file}: unexpected header {header:?}")));
    }
    Ok(())
}

/// One row per logged epoch; cells of unavailable oracle quantities are empty.
pub fn write_curves(path: &FsPath, reports: &[LossReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVES_HEADER)?;
    for r in reports {
        w.write_record([
            r.epoch.to_string(),
            fmt_f64(r.train_loss),
            fmt_f64(r.test_loss),
            opt(r.oracle_loss),
            opt(r.relative_difference),
            opt(r.eval_metric),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a curves table. `paired_se` is not part of the table and comes back `None`.
pub fn read_curves(path: &FsPath) -> Result<Vec<LossReport>> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(&mut rdr, &CURVES_HEADER, CURVES_FILE)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            parse_opt(&rec[i], CURVES_HEADER[i])?
                .ok_or_else(|| Error::Data(format!("missing {} value", CURVES_HEADER[i])))
        };
        out.push(LossReport {
            epoch: rec[0].parse().map_err(|_| Error::Data(format!("bad epoch '{}'", &rec[0])))?,
            train_loss: f(1)?,
            test_loss: f(2)?,
            oracle_loss: parse_opt(&rec[3], CURVES_HEADER[3])?,
            relative_difference: parse_opt(&rec[4], CURVES_HEADER[4])?,
            eval_metric: parse_opt(&rec[5], CURVES_HEADER[5])?,
            paired_se: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetMeta {
    pub name: String,
    pub widths: Vec<usize>,
    pub residual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: String,
    pub seed: u64,
    pub dropout: f64,
    pub config: NjodeConfig,
    pub nets: Vec<NetMeta>,
    pub param_order: Vec<String>,
}

/// Writes `checkpoint.json` and `checkpoint.csv` (`name,index,value`, values
/// in row-major order within each array).
pub fn save_checkpoint(dir: &FsPath, model: &NjodeModel, seed: u64) -> Result<()> {
    let named = model.named_params();
    let nets = [("field", &model.field), ("jump", &model.jump), ("readout", &model.readout)]
        .into_iter()
        .map(|(name, net)| NetMeta {
            name: name.to_string(),
            widths: net.spec().widths.clone(),
            residual: net.spec().residual,
        })
        .collect();
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT.to_string(),
        seed,
        dropout: model.config.dropout,
        config: model.config,
        nets,
        param_order: named.iter().map(|(n, _)| n.clone()).collect(),
    };
    write_json(&dir.join(CHECKPOINT_META_FILE), &meta)?;
    let mut w = csv::Writer::from_path(dir.join(CHECKPOINT_PARAMS_FILE))?;
    w.write_record(["name", "index", "value"])?;
    for (name, arr) in &named {
        for (i, v) in arr.as_slice().iter().enumerate() {
            w.write_record([name.as_str(), &i.to_string(), &fmt_f64(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(dir: &FsPath) -> Result<(NjodeModel, CheckpointMeta)> {
    let meta: CheckpointMeta = read_json(&dir.join(CHECKPOINT_META_FILE))?;
    if meta.format_version != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!("unsupported checkpoint format '{}'", meta.format_version)));
    }
    let mut model = NjodeModel::new(meta.config, meta.seed)?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if names != meta.param_order {
        return Err(Error::Data("checkpoint parameter order does not match its config".into()));
    }
    let mut rdr = csv::Reader::from_path(dir.join(CHECKPOINT_PARAMS_FILE))?;
    check_header(&mut rdr, &["name", "index", "value"], CHECKPOINT_PARAMS_FILE)?;
    let mut records = rdr.records();
    for (name, arr) in names.iter().zip(model.params_mut()) {
        for (i, slot) in arr.as_mut_slice().iter_mut().enumerate() {
            let rec = records
                .next()
                .ok_or_else(|| Error::Data(format!("checkpoint ends before {name}[{i}]")))??;
            if &rec[0] != name || rec[1] != *i.to_string() {
                return Err(Error::Data(format!(
                    "expected {name}[{i}], found {}[{}]",
                    &rec[0], &rec[1]
                )));
            }
            let v: f64 = rec[2].parse().map_err(|_| Error::Data(format!("bad value for {name}[{i}]")))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite value for {name}[{i}]")));
            }
            *slot = v;
        }
    }
    if records.next().is_some() {
        return Err(Error::Data("checkpoint has trailing parameter rows".into()));
    }
    Ok((model, meta))
}

/// One row per path, grid point and coordinate. `xhat_oracle` is empty when
/// `oracle` is `None`; `observed` is 1 where that coordinate was observed.
pub fn write_predictions(
    path: &FsPath,
    data: &Dataset,
    traces: &[ForwardTrace],
    oracle: Option<&SdeModel>,
) -> Result<()> {
    if traces.len() != data.len() {
        return Err(Error::ShapeMismatch(format!("{} traces for {} paths", traces.len(), data.len())));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PREDICTIONS_HEADER)?;
    for (p, tr) in data.paths.iter().zip(traces) {
        let xhat = oracle.map(|m| oracle_grid(m, p, &data.grid)).transpose()?;
        let mut observed = vec![vec![false; p.dim]; data.grid.len()];
        for (i, _, mask) in p.observations() {
            observed[i].copy_from_slice(mask);
        }
        let id = p.path_id.to_string();
        for (i, y) in tr.y_grid.iter().enumerate() {
            let t = fmt_f64(data.grid.time(i));
            for (c, yc) in y.iter().enumerate() {
                let xh = xhat.as_ref().map(|g| fmt_f64(g[i][c])).unwrap_or_default();
                let obs = if observed[i][c] { "1" } else { "0" };
                w.write_record([id.as_str(), &t, &c.to_string(), &fmt_f64(*yc), &xh, obs])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_study(path: &FsPath, rows: &[StudyRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(STUDY_HEADER)?;
    for r in rows {
        w.write_record([
            r.n1.to_string(),
            r.m.to_string(),
            r.repeat.to_string(),
            fmt_f64(r.min_metric),
            fmt_f64(r.last_metric),
            fmt_f64(r.mean_metric),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_study(path: &FsPath) -> Result<Vec<StudyRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(&mut rdr, &STUDY_HEADER, STUDY_FILE)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let u = |i: usize| rec[i].parse::<usize>().map_err(|_| Error::Data(format!("bad {} '{}'", STUDY_HEADER[i], &rec[i])));
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| Error::Data(format!("bad {} '{}'", STUDY_HEADER[i], &rec[i])));
        rows.push(StudyRow {
            n1: u(0)?,
            m: u(1)?,
            repeat: u(2)?,
            min_metric: f(3)?,
            last_metric: f(4)?,
            mean_metric: f(5)?,
        });
    }
    Ok(rows)
}

pub const SUMMARY_HEADER: [&str; 7] = ["n1", "m", "repeats", "min_mean", "min_std", "last_mean", "last_std"];

/// Mean and sample std over repeats per study cell.
pub fn write_study_summary(path: &FsPath, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for c in cells {
        w.write_record([
            c.n1.to_string(),
            c.m.to_string(),
            c.repeats.to_string(),
            fmt_f64(c.min_mean),
            fmt_f64(c.min_std),
            fmt_f64(c.last_mean),
            fmt_f64(c.last_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

pub fn write_split(dir: &FsPath, split: &Split) -> Result<()> {
    write_json(&dir.join(SPLIT_FILE), split)
}

pub fn read_split(dir: &FsPath) -> Result<Split> {
    read_json(&dir.join(SPLIT_FILE))
}
