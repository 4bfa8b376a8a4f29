use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream_rng;
use crate::{Error, Result};

/// Equidistant grid `t_i = i T / K`, `i = 0..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 100 }
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        let grid = Self { horizon, steps };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("grid needs at least one step".into()));
        }
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(Error::InvalidParameter(format!("invalid horizon {}", self.horizon)));
        }
        Ok(())
    }

    pub fn mesh(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Number of grid points, `K + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, index: usize) -> f64 {
        self.horizon * index as f64 / self.steps as f64
    }
}

/// How observation masks are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MaskMode {
    /// Every coordinate is observed at every observation time.
    #[default]
    Full,
    /// Each coordinate is observed independently with probability `p`,
    /// redrawn until at least one coordinate is observed.
    Bernoulli { p: f64 },
}

impl MaskMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskMode::Full => Ok(()),
            MaskMode::Bernoulli { p } if p > 0.0 && p <= 1.0 => Ok(()),
            MaskMode::Bernoulli { p } => {
                Err(Error::InvalidParameter(format!("coordinate probability {p} not in (0, 1]")))
            }
        }
    }
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    /// Parses `full` or `bernoulli:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let mode = match s.split_once(':') {
            None if s == "full" => MaskMode::Full,
            Some(("bernoulli", p)) => MaskMode::Bernoulli {
                p: p.parse().map_err(|_| Error::InvalidParameter(format!("bad probability '{p}'")))?,
            },
            _ => return Err(Error::InvalidParameter(format!("unknown mask mode '{s}'"))),
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// Sorted grid indices at which a path is observed, with one coordinate
/// mask per observation. Index 0 is always present and fully observed.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSchedule {
    pub indices: Vec<usize>,
    pub masks: Vec<Vec<bool>>,
}

impl ObservationSchedule {
    /// Fully observed schedule at the given indices.
    pub fn full(indices: Vec<usize>, dim: usize) -> Self {
        let masks = vec![vec![true; dim]; indices.len()];
        Self { indices, masks }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.masks.iter().all(|m| m.iter().all(|&b| b))
    }

    pub fn validate(&self, grid: &TimeGrid, dim: usize) -> Result<()> {
        if self.indices.first() != Some(&0) {
            return Err(Error::Data("schedule does not start at grid index 0".into()));
        }
        if self.masks.len() != self.indices.len() {
            return Err(Error::Data("one mask per observation required".into()));
        }
        if let Some(w) = self.indices.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "observation indices not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(&last) = self.indices.last() {
            if last > grid.steps {
                return Err(Error::Data(format!("observation index {last} beyond grid")));
            }
        }
        for mask in &self.masks {
            if mask.len() != dim {
                return Err(Error::Data(format!("mask of length {} for dim {dim}", mask.len())));
            }
            if !mask.iter().any(|&b| b) {
                return Err(Error::Data("mask without any observed coordinate".into()));
            }
        }
        Ok(())
    }
}

/// Draws a schedule: index 0, then every later grid index independently with
/// probability `obs_prob`.
pub fn sample_observation_times<R: Rng>(
    grid: &TimeGrid,
    obs_prob: f64,
    dim: usize,
    mask_mode: MaskMode,
    rng: &mut R,
) -> Result<ObservationSchedule> {
    if !(obs_prob > 0.0 && obs_prob <= 1.0) {
        return Err(Error::InvalidParameter(format!("observation probability {obs_prob} not in (0, 1]")));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    mask_mode.validate()?;
    let mut indices = vec![0];
    for i in 1..=grid.steps {
        if rng.random_bool(obs_prob) {
            indices.push(i);
        }
    }
    let masks = indices
        .iter()
        .map(|&i| match mask_mode {
            MaskMode::Bernoulli { p } if i > 0 => loop {
                let mask: Vec<bool> = (0..dim).map(|_| rng.random_bool(p)).collect();
                if mask.iter().any(|&b| b) {
                    break mask;
                }
            },
            _ => vec![true; dim],
        })
        .collect();
    Ok(ObservationSchedule { indices, masks })
}

/// Seeded convenience wrapper around [`sample_observation_times`].
pub fn sample_observation_times_seeded(
    grid: &TimeGrid,
    obs_prob: f64,
    dim: usize,
    mask_mode: MaskMode,
    seed: u64,
) -> Result<ObservationSchedule> {
    sample_observation_times(grid, obs_prob, dim, mask_mode, &mut stream_rng(seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points() {
        let g = TimeGrid::default();
        assert_eq!(g.len(), 101);
        assert!((g.mesh() * g.steps as f64 - g.horizon).abs() < 1e-12);
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(100), 1.0);
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn certain_inclusion_observes_everything() {
        let g = TimeGrid::default();
        let s = sample_observation_times_seeded(&g, 1.0, 1, MaskMode::Full, 3).unwrap();
        assert_eq!(s.indices, (0..=100).collect::<Vec<_>>());
    }

    #[test]
    fn full_masks_are_all_ones() {
        let g = TimeGrid::default();
        let s = sample_observation_times_seeded(&g, 0.3, 2, MaskMode::Full, 5).unwrap();
        assert!(s.masks.iter().all(|m| m == &vec![true, true]));
        s.validate(&g, 2).unwrap();
    }

    #[test]
    fn mean_observation_count() {
        let g = TimeGrid::default();
        let total: usize = (0..10_000)
            .map(|seed| sample_observation_times_seeded(&g, 0.1, 1, MaskMode::Full, seed).unwrap().len())
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!((10.7..=11.3).contains(&mean), "mean count {mean}");
    }

    #[test]
    fn bernoulli_masks_are_never_empty() {
        let g = TimeGrid::default();
        for seed in 0..200 {
            let s = sample_observation_times_seeded(&g, 0.5, 3, MaskMode::Bernoulli { p: 0.2 }, seed)
                .unwrap();
            s.validate(&g, 3).unwrap();
            assert_eq!(s.masks[0], vec![true; 3]);
        }
    }

    #[test]
    fn rejects_bad_probability() {
        let g = TimeGrid::default();
        for p in [0.0, 1.5, f64::NAN] {
            assert!(sample_observation_times_seeded(&g, p, 1, MaskMode::Full, 0).is_err());
        }
        assert!("bernoulli:0".parse::<MaskMode>().is_err());
        assert_eq!("bernoulli:0.5".parse::<MaskMode>().unwrap(), MaskMode::Bernoulli { p: 0.5 });
    }

    #[test]
    fn validate_catches_decreasing_indices() {
        let g = TimeGrid::default();
        let s = ObservationSchedule::full(vec![0, 5, 3], 1);
        assert!(s.validate(&g, 1).is_err());
        let s = ObservationSchedule::full(vec![1, 5], 1);
        assert!(s.validate(&g, 1).is_err());
    }
}
