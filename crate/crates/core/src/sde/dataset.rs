use std::collections::BTreeMap;
use std::fs;
use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::SdeModel;
use super::schedule::{MaskMode, ObservationSchedule, TimeGrid};
use crate::rng::{rng_for, tag};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const META_FILE: &str = "meta.json";
const VALUES_FILE: &str = "values.csv";
const OBSERVATIONS_FILE: &str = "observations.csv";
const VALUES_HEADER: [&str; 4] = ["path_id", "grid_index", "coord", "value"];
const OBSERVATIONS_HEADER: [&str; 3] = ["path_id", "grid_index", "mask"];

/// One realisation on the grid together with its observation schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub path_id: usize,
    pub dim: usize,
    /// Grid-point-major values, `values[i * dim + c]`.
    pub values: Vec<f64>,
    pub schedule: ObservationSchedule,
}

impl Path {
    pub fn value(&self, grid_index: usize) -> &[f64] {
        &self.values[grid_index * self.dim..(grid_index + 1) * self.dim]
    }

    pub fn n_points(&self) -> usize {
        self.values.len() / self.dim
    }

    /// Observations as `(grid index, value, mask)`.
    pub fn observations(&self) -> impl Iterator<Item = (usize, &[f64], &[bool])> + '_ {
        self.schedule
            .indices
            .iter()
            .zip(&self.schedule.masks)
            .map(move |(&i, m)| (i, self.value(i), m.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub model: SdeModel,
    pub grid: TimeGrid,
    pub paths: Vec<Path>,
    pub master_seed: u64,
    pub obs_prob: f64,
    pub mask_mode: MaskMode,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Whether every observation in the set observes all coordinates.
    pub fn fully_observed(&self) -> bool {
        self.paths.iter().all(|p| p.schedule.is_fully_observed())
    }

    /// Checks shapes, schedules and id uniqueness. Subsets produced by
    /// [`split_dataset`] keep the original ids, so ids need only be strictly
    /// ascending, not contiguous.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.grid.validate()?;
        let dim = self.dim();
        let mut previous: Option<usize> = None;
        for p in &self.paths {
            if previous.is_some_and(|q| p.path_id <= q) {
                return Err(Error::Data(format!("path ids not strictly ascending at {}", p.path_id)));
            }
            previous = Some(p.path_id);
            if p.dim != dim || p.values.len() != dim * self.grid.len() {
                return Err(Error::Data(format!(
                    "path {} has {} values, expected {}",
                    p.path_id,
                    p.values.len(),
                    dim * self.grid.len()
                )));
            }
            if p.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("path {} has non-finite values", p.path_id)));
            }
            p.schedule
                .validate(&self.grid, dim)
                .map_err(|e| Error::Data(format!("path {}: {e}", p.path_id)))?;
        }
        Ok(())
    }

    /// Paths in the order of the given ids. Fails on unknown ids.
    pub fn subset(&self, ids: &[usize]) -> Result<Dataset> {
        let by_id: BTreeMap<usize, &Path> = self.paths.iter().map(|p| (p.path_id, p)).collect();
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let paths = sorted
            .iter()
            .map(|id| {
                by_id
                    .get(id)
                    .map(|p| (*p).clone())
                    .ok_or_else(|| Error::Data(format!("unknown path id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { paths, ..self.clone_header() })
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            model: self.model,
            grid: self.grid,
            paths: Vec::new(),
            master_seed: self.master_seed,
            obs_prob: self.obs_prob,
            mask_mode: self.mask_mode,
        }
    }

    pub fn ids(&self) -> Vec<usize> {
        self.paths.iter().map(|p| p.path_id).collect()
    }
}

/// Partitions by path id into `⌊N · train_frac⌋` training paths and the
/// remainder. Both halves keep ascending id order.
pub fn split_dataset(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidParameter(format!("train fraction {train_frac} not in (0, 1)")));
    }
    let mut ids = ds.ids();
    ids.shuffle(&mut rng_for(seed, &[tag::SPLIT]));
    let n_train = (ds.len() as f64 * train_frac).floor() as usize;
    let (train, test) = ids.split_at(n_train);
    Ok((ds.subset(train)?, ds.subset(test)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    format_version: u32,
    model: SdeModel,
    horizon: f64,
    steps: usize,
    n_paths: usize,
    obs_prob: f64,
    master_seed: u64,
    dim: usize,
    mask_mode: MaskMode,
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
/// Shortest-round-trip-safe decimal with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn mask_to_bits(mask: &[bool]) -> String {
    mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn bits_to_mask(bits: &str) -> Option<Vec<bool>> {
    bits.chars()
        .map(|c| match c {
            '1' => Some(true),
            '0' => Some(false),
            _ => None,
        })
        .collect()
}

pub fn write_dataset(ds: &Dataset, dir: &FsPath) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        model: ds.model,
        horizon: ds.grid.horizon,
        steps: ds.grid.steps,
        n_paths: ds.len(),
        obs_prob: ds.obs_prob,
        master_seed: ds.master_seed,
        dim: ds.dim(),
        mask_mode: ds.mask_mode,
    };
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;

    let mut values = csv::Writer::from_path(dir.join(VALUES_FILE))?;
    values.write_record(VALUES_HEADER)?;
    let mut obs = csv::Writer::from_path(dir.join(OBSERVATIONS_FILE))?;
    obs.write_record(OBSERVATIONS_HEADER)?;
    for p in &ds.paths {
        let id = p.path_id.to_string();
        for i in 0..p.n_points() {
            let gi = i.to_string();
            for (c, v) in p.value(i).iter().enumerate() {
                values.write_record([id.as_str(), gi.as_str(), &c.to_string(), &fmt_f64(*v)])?;
            }
        }
        for (i, _, mask) in p.observations() {
            obs.write_record([id.as_str(), &i.to_string(), &mask_to_bits(mask)])?;
        }
    }
    values.flush()?;
    obs.flush()?;
    Ok(())
}

fn check_header(reader: &mut csv::Reader<fs::File>, expected: &[&str], file: &str) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Data(format!(
            "{file}: expected header {}, found {}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str, file: &str, row: usize) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Data(format!("{file} row {row}: invalid {what}")))
}

pub fn read_dataset(dir: &FsPath) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", meta_path.display())))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Data(format!("{META_FILE}: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported format_version {}", meta.format_version)));
    }
    let grid = TimeGrid { horizon: meta.horizon, steps: meta.steps };
    grid.validate()?;
    meta.model.validate()?;
    let dim = meta.model.dim();
    if dim != meta.dim {
        return Err(Error::Data(format!("meta dim {} disagrees with model dim {dim}", meta.dim)));
    }
    let n_points = grid.len();
    let mut paths: Vec<Path> = (0..meta.n_paths)
        .map(|j| Path {
            path_id: j,
            dim,
            values: Vec::with_capacity(n_points * dim),
            schedule: ObservationSchedule { indices: Vec::new(), masks: Vec::new() },
        })
        .collect();

    let open = |name: &str| {
        csv::Reader::from_path(dir.join(name))
            .map_err(|e| Error::Data(format!("cannot open {name}: {e}")))
    };

    let mut values = open(VALUES_FILE)?;
    check_header(&mut values, &VALUES_HEADER, VALUES_FILE)?;
    for (row, rec) in values.records().enumerate() {
        let rec = rec?;
        let id: usize = parse(rec.get(0), "path_id", VALUES_FILE, row)?;
        let gi: usize = parse(rec.get(1), "grid_index", VALUES_FILE, row)?;
        let coord: usize = parse(rec.get(2), "coord", VALUES_FILE, row)?;
        let value: f64 = parse(rec.get(3), "value", VALUES_FILE, row)?;
        let path = paths
            .get_mut(id)
            .ok_or_else(|| Error::Data(format!("{VALUES_FILE} row {row}: unknown path_id {id}")))?;
        let expected = path.values.len();
        if gi * dim + coord != expected || coord >= dim {
            return Err(Error::Data(format!(
                "{VALUES_FILE}: path_id {id} rows out of order at grid_index {gi}, coord {coord}"
            )));
        }
        path.values.push(value);
    }

    let mut obs = open(OBSERVATIONS_FILE)?;
    check_header(&mut obs, &OBSERVATIONS_HEADER, OBSERVATIONS_FILE)?;
    for (row, rec) in obs.records().enumerate() {
        let rec = rec?;
        let id: usize = parse(rec.get(0), "path_id", OBSERVATIONS_FILE, row)?;
        let gi: usize = parse(rec.get(1), "grid_index", OBSERVATIONS_FILE, row)?;
        let mask = rec
            .get(2)
            .and_then(bits_to_mask)
            .ok_or_else(|| Error::Data(format!("{OBSERVATIONS_FILE} row {row}: invalid mask")))?;
        let path = paths.get_mut(id).ok_or_else(|| {
            Error::Data(format!("{OBSERVATIONS_FILE} row {row}: unknown path_id {id}"))
        })?;
        path.schedule.indices.push(gi);
        path.schedule.masks.push(mask);
    }

    for p in &paths {
        if p.values.len() != n_points * dim {
            return Err(Error::Data(format!(
                "path_id {}: {} values, expected {}",
                p.path_id,
                p.values.len(),
                n_points * dim
            )));
        }
        p.schedule
            .validate(&grid, dim)
            .map_err(|e| Error::Data(format!("path_id {}: {e}", p.path_id)))?;
    }

    let ds = Dataset {
        model: meta.model,
        grid,
        paths,
        master_seed: meta.master_seed,
        obs_prob: meta.obs_prob,
        mask_mode: meta.mask_mode,
    };
    ds.validate()?;
    Ok(ds)
}
