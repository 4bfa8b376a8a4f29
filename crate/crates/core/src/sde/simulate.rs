use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::dataset::{Dataset, Path};
use super::model::{euler_maruyama_step, SdeModel};
use super::schedule::{sample_observation_times, MaskMode, TimeGrid};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::{Error, Result};

/// Brownian increments over one step of length `dt`. For two-factor models
/// the second increment is `ρ dW + √(1 - ρ²) dB`.
fn draw_increments<R: Rng>(model: &SdeModel, dt: f64, rng: &mut R) -> Vec<f64> {
    let scale = dt.sqrt();
    let z1: f64 = rng.sample(StandardNormal);
    match model.correlation() {
        None => vec![scale * z1],
        Some(rho) => {
            let z2: f64 = rng.sample(StandardNormal);
            vec![scale * z1, scale * (rho * z1 + (1.0 - rho * rho).sqrt() * z2)]
        }
    }
}

/// Simulates the full state from grid index `start_index` (with state
/// `start_state`) up to the end of the grid. Returns one state per grid
/// point from `start_index` to `K` inclusive.
pub fn simulate_states_from<R: Rng>(
    model: &SdeModel,
    grid: &TimeGrid,
    start_index: usize,
    start_state: &[f64],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if start_index > grid.steps {
        return Err(Error::Precondition(format!("start index {start_index} beyond grid")));
    }
    let dt = grid.mesh();
    let mut states = Vec::with_capacity(grid.len() - start_index);
    states.push(start_state.to_vec());
    for i in start_index..grid.steps {
        let dw = draw_increments(model, dt, rng);
        let next = euler_maruyama_step(model, grid.time(i), &states[states.len() - 1], dt, &dw)?;
        states.push(next);
    }
    Ok(states)
}

fn noise_key(master_seed: u64) -> u64 {
    derive_seed(master_seed, &[tag::PATH_NOISE])
}

fn observation_key(master_seed: u64) -> u64 {
    derive_seed(master_seed, &[tag::OBSERVATIONS])
}

fn simulate_one(model: &SdeModel, grid: &TimeGrid, path_id: usize, master_seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream_rng(noise_key(master_seed), path_id as u64);
    let dt = grid.mesh();
    let dim = model.dim();
    let mut values = Vec::with_capacity(grid.len() * dim);
    let mut state = model.initial_state();
    values.extend_from_slice(model.observe(&state));
    for i in 0..grid.steps {
        let dw = draw_increments(model, dt, &mut rng);
        state = euler_maruyama_step(model, grid.time(i), &state, dt, &dw)
            .map_err(|_| Error::NumericBlowUp { path_id, step: i })?;
        values.extend_from_slice(model.observe(&state));
    }
    Ok(values)
}

/// Simulates `n_paths` paths started at the model's initial state. Each path
/// is flattened grid-point-major: `values[i * dim + c]`.
///
/// Path `j` draws its noise from its own stream keyed on `(master_seed, j)`,
/// so any subset of paths is reproducible in any order and on any number of
/// threads.
pub fn simulate_paths(
    model: &SdeModel,
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    grid.validate()?;
    if n_paths == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    (0..n_paths)
        .into_par_iter()
        .map(|j| simulate_one(model, grid, j, master_seed))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub n_paths: usize,
    pub obs_prob: f64,
    pub mask_mode: MaskMode,
    pub master_seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { n_paths: 20_000, obs_prob: 0.1, mask_mode: MaskMode::Full, master_seed: 0 }
    }
}

/// Simulates paths and draws an observation schedule for each of them.
pub fn generate_dataset(model: SdeModel, grid: TimeGrid, opts: GenerateOptions) -> Result<Dataset> {
    model.validate()?;
    grid.validate()?;
    opts.mask_mode.validate()?;
    if !(opts.obs_prob > 0.0 && opts.obs_prob <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "observation probability {} not in (0, 1]",
            opts.obs_prob
        )));
    }
    let dim = model.dim();
    let paths = (0..opts.n_paths)
        .into_par_iter()
        .map(|j| {
            let values = simulate_one(&model, &grid, j, opts.master_seed)?;
            let mut rng = stream_rng(observation_key(opts.master_seed), j as u64);
            let schedule = sample_observation_times(&grid, opts.obs_prob, dim, opts.mask_mode, &mut rng)?;
            Ok(Path { path_id: j, dim, values, schedule })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        model,
        grid,
        paths,
        master_seed: opts.master_seed,
        obs_prob: opts.obs_prob,
        mask_mode: opts.mask_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_diffusion_follows_euler_recursion() {
        let model = SdeModel::OrnsteinUhlenbeck { k: 2.0, m: 4.0, sigma: 0.0, x0: 1.0 };
        let grid = TimeGrid::default();
        let paths = simulate_paths(&model, &grid, 5, 11).unwrap();
        let mut x = 1.0;
        let mut expected = vec![x];
        for _ in 0..100 {
            x += -2.0 * (x - 4.0) * 0.01;
            expected.push(x);
        }
        for p in &paths {
            assert_eq!(p, &expected);
        }
    }

    #[test]
    fn ou_terminal_mean() {
        let model = SdeModel::ornstein_uhlenbeck();
        let grid = TimeGrid::default();
        let paths = simulate_paths(&model, &grid, 10_000, 1).unwrap();
        let finals: Vec<f64> = paths.iter().map(|p| p[100]).collect();
        let n = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let exact = (-2.0f64).exp() + 4.0 * (1.0 - (-2.0f64).exp());
        assert!((exact - 3.5940).abs() < 1e-4);
        assert!((mean - exact).abs() < 3.0 * (var / n).sqrt(), "mean {mean} vs {exact}");
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let model = SdeModel::heston(2);
        let grid = TimeGrid::default();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_paths(&model, &grid, 64, 5).unwrap())
        };
        let a = run(1);
        let b = run(8);
        assert!(a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn subsets_are_reproducible() {
        let model = SdeModel::black_scholes();
        let grid = TimeGrid::default();
        let ten = simulate_paths(&model, &grid, 10, 3).unwrap();
        let four = simulate_paths(&model, &grid, 4, 3).unwrap();
        assert_eq!(&ten[..4], &four[..]);
    }

    #[test]
    fn no_feller_variance_stays_non_negative() {
        let model = SdeModel::heston_no_feller(2);
        let grid = TimeGrid::default();
        let paths = simulate_paths(&model, &grid, 500, 9).unwrap();
        let mut hit_zero = false;
        for p in &paths {
            for i in 0..grid.len() {
                assert!(p[2 * i + 1] >= 0.0);
                hit_zero |= p[2 * i + 1] == 0.0;
            }
        }
        assert!(hit_zero, "parameters violate Feller; some variance should touch 0");
    }

    #[test]
    fn blow_up_names_path_and_step() {
        let model = SdeModel::BlackScholes { mu: 1e306, sigma: 0.1, x0: 1e10 };
        let grid = TimeGrid::default();
        match simulate_paths(&model, &grid, 1, 0) {
            Err(Error::NumericBlowUp { path_id: 0, step }) => assert!(step < 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generated_dataset_is_consistent() {
        let ds = generate_dataset(
            SdeModel::ornstein_uhlenbeck(),
            TimeGrid::default(),
            GenerateOptions { n_paths: 20, master_seed: 4, ..Default::default() },
        )
        .unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.paths.len(), 20);
        assert!(ds.paths.iter().all(|p| p.value(0) == [1.0]));
    }
}
