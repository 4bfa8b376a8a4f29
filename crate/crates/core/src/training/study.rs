//! Convergence study over training-set size `N1` and hidden width `M`.
//!
//! One permutation of the base dataset fixes the test set (its first `N2`
//! paths); training sets are nested prefixes of the remaining pool, so a
//! larger `N1` always contains every smaller one.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_on_split, TrainConfig};
use crate::objective::{sample_std, stable_mean};
use crate::rng::{derive_seed, rng_for, tag};
use crate::sde::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyGrid {
    pub n1_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub repeats: usize,
    /// Size `N2` of the shared test set.
    pub test_size: usize,
}

impl StudyGrid {
    pub fn validate(&self, available: usize) -> Result<()> {
        if self.n1_values.is_empty() || self.m_values.is_empty() || self.repeats == 0 {
            return Err(Error::InvalidParameter("study grid must not be empty".into()));
        }
        if self.test_size == 0 {
            return Err(Error::InvalidParameter("test size must be at least 1".into()));
        }
        let ascending = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !ascending(&self.n1_values) || !ascending(&self.m_values) {
            return Err(Error::InvalidParameter("N1 and M values must be strictly ascending".into()));
        }
        if self.m_values.contains(&0) || self.n1_values.contains(&0) {
            return Err(Error::InvalidParameter("N1 and M must be positive".into()));
        }
        let max_n1 = self.n1_values.iter().copied().max().unwrap_or(0);
        if max_n1 + self.test_size > available {
            return Err(Error::Precondition(format!(
                "study needs {} paths (N1 {max_n1} + N2 {}), dataset has {available}",
                max_n1 + self.test_size,
                self.test_size
            )));
        }
        Ok(())
    }
}

/// Metrics of one trained model, summarised over its logged epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n1: usize,
    pub m: usize,
    pub repeat: usize,
    pub min_metric: f64,
    pub last_metric: f64,
    pub mean_metric: f64,
}

/// Mean and sample standard deviation over repeats of one `(N1, M)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n1: usize,
    pub m: usize,
    pub repeats: usize,
    pub min_mean: f64,
    pub min_std: f64,
    pub last_mean: f64,
    pub last_std: f64,
}

/// Trains one model per `(N1, M, repeat)` and records its metric trajectory.
/// Repeat `r` uses seed `derive(cfg.seed, REPEAT, r)` for initialisation and
/// shuffling; the split does not depend on the repeat.
pub fn convergence_study(base: &Dataset, grid: &StudyGrid, cfg: &TrainConfig) -> Result<Vec<StudyRow>> {
    grid.validate(base.len())?;
    if !base.fully_observed() {
        return Err(Error::NoOracle("the study needs fully observed paths".into()));
    }
    if cfg.eval_every == 0 {
        return Err(Error::InvalidParameter("the study needs eval_every >= 1".into()));
    }
    let mut ids = base.ids();
    ids.shuffle(&mut rng_for(cfg.seed, &[tag::STUDY]));
    let mut test_ids = ids[..grid.test_size].to_vec();
    test_ids.sort_unstable();
    let test = base.subset(&test_ids)?;
    let pool = &ids[grid.test_size..];

    let mut jobs = Vec::new();
    for &n1 in &grid.n1_values {
        for &m in &grid.m_values {
            for r in 0..grid.repeats {
                jobs.push((n1, m, r));
            }
        }
    }
    jobs.par_iter()
        .map(|&(n1, m, r)| {
            let mut train_ids = pool[..n1].to_vec();
            train_ids.sort_unstable();
            let train = base.subset(&train_ids)?;
            let run_cfg = TrainConfig {
                hidden: m,
                seed: derive_seed(cfg.seed, &[tag::REPEAT, r as u64]),
                batch_size: cfg.batch_size.min(n1),
                ..*cfg
            };
            let out = train_on_split(&train, &test, &run_cfg, |_| {})?;
            let metrics: Vec<f64> = out.reports.iter().filter_map(|r| r.eval_metric).collect();
            let last_metric = *metrics
                .last()
                .ok_or_else(|| Error::Precondition("the study needs at least one epoch".into()))?;
            Ok(StudyRow {
                n1,
                m,
                repeat: r,
                min_metric: metrics.iter().copied().fold(f64::INFINITY, f64::min),
                last_metric,
                mean_metric: stable_mean(&metrics),
            })
        })
        .collect()
}

/// Groups rows by `(N1, M)` in first-appearance order.
pub fn summarize_study(rows: &[StudyRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.n1, r.m)) {
            keys.push((r.n1, r.m));
        }
    }
    keys.into_iter()
        .map(|(n1, m)| {
            let cell: Vec<&StudyRow> = rows.iter().filter(|r| r.n1 == n1 && r.m == m).collect();
            let mins: Vec<f64> = cell.iter().map(|r| r.min_metric).collect();
            let lasts: Vec<f64> = cell.iter().map(|r| r.last_metric).collect();
            CellSummary {
                n1,
                m,
                repeats: cell.len(),
                min_mean: stable_mean(&mins),
                min_std: sample_std(&mins),
                last_mean: stable_mean(&lasts),
                last_std: sample_std(&lasts),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{generate_dataset, GenerateOptions, SdeModel, TimeGrid};

    #[test]
    fn rows_cover_the_grid_and_are_reproducible() {
        let ds = generate_dataset(
            SdeModel::ornstein_uhlenbeck(),
            TimeGrid::new(1.0, 10).unwrap(),
            GenerateOptions { n_paths: 30, obs_prob: 0.3, master_seed: 2, ..Default::default() },
        )
        .unwrap();
        let grid = StudyGrid { n1_values: vec![5, 20], m_values: vec![4, 6], repeats: 2, test_size: 10 };
        let cfg = TrainConfig { epochs: 2, batch_size: 5, latent: 3, ..Default::default() };
        let a = convergence_study(&ds, &grid, &cfg).unwrap();
        assert_eq!(a.len(), 8);
        assert!(a.iter().all(|r| r.min_metric <= r.last_metric && r.min_metric <= r.mean_metric));
        assert_eq!(a, convergence_study(&ds, &grid, &cfg).unwrap());
        let s = summarize_study(&a);
        assert_eq!(s.len(), 4);
        assert_eq!(s[0].repeats, 2);
    }

    #[test]
    fn oversized_grid_is_rejected() {
        let grid = StudyGrid { n1_values: vec![25], m_values: vec![4], repeats: 1, test_size: 10 };
        assert!(grid.validate(30).is_err());
    }
}
