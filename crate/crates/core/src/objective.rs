//! Training objective, oracle loss and evaluation metric.
//!
//! The per-path term is
//! `(1/n') Σ_{i≥1} (|x_i − y_i|₂ + |y_i − y_{i−}|₂)²` over the observations
//! after the initial one; the initial observation only enters through the
//! latent state it sets. Path means are summed in ascending order of the
//! terms, which makes every reported loss exactly invariant to path order.

use serde::{Deserialize, Serialize};

use crate::njode::{ForwardTrace, RecordedTrace};
use crate::sde::{true_conditional_expectation, Path, SdeModel, TimeGrid};
use crate::tensor::{NodeId, Tape};
use crate::{Error, Result};

/// One row of a training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// Loss of the model on the test split (eval mode).
    pub test_loss: f64,
    /// Loss of the true conditional expectation on the test split.
    pub oracle_loss: Option<f64>,
    /// `(test_loss − oracle_loss) / oracle_loss`.
    pub relative_difference: Option<f64>,
    pub eval_metric: Option<f64>,
    /// Standard error of the mean of the per-path differences
    /// `model term − oracle term` on the test split.
    pub paired_se: Option<f64>,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Order-independent mean: terms are summed in ascending order.
pub fn stable_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (`n − 1` denominator); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = stable_mean(values);
    let ss: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    (stable_mean(&ss) * values.len() as f64 / (values.len() - 1) as f64).sqrt()
}

fn check_trace(path: &Path, trace: &ForwardTrace) -> Result<()> {
    let n = path.schedule.len();
    if trace.y_jump.len() != n || trace.y_left.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "trace with {} jumps for path {} with {n} observations",
            trace.y_jump.len(),
            path.path_id
        )));
    }
    if trace.y_jump.iter().any(|y| y.len() != path.dim) {
        return Err(Error::ShapeMismatch(format!(
            "output dimension differs from observation dimension {}",
            path.dim
        )));
    }
    Ok(())
}

fn term(path: &Path, trace: &ForwardTrace, masked: bool) -> Result<f64> {
    check_trace(path, trace)?;
    let n_prime = path.schedule.len() - 1;
    if n_prime == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, (_, x, mask)) in path.observations().enumerate().skip(1) {
        let (y, y_left) = (&trace.y_jump[i], &trace.y_left[i]);
        let w = |c: usize| if !masked || mask[c] { 1.0 } else { 0.0 };
        let jump_part = norm((0..x.len()).map(|c| w(c) * (x[c] - y[c])));
        let continuous_part = norm((0..x.len()).map(|c| w(c) * (y[c] - y_left[c])));
        total += (jump_part + continuous_part).powi(2);
    }
    Ok(total / n_prime as f64)
}

pub fn path_loss_term(path: &Path, trace: &ForwardTrace) -> Result<f64> {
    term(path, trace, false)
}

/// Per-path term with the mask applied inside both norms.
pub fn masked_path_loss_term(path: &Path, trace: &ForwardTrace) -> Result<f64> {
    term(path, trace, true)
}

pub fn path_loss_terms(paths: &[Path], traces: &[ForwardTrace], masked: bool) -> Result<Vec<f64>> {
    if paths.is_empty() {
        return Err(Error::Precondition("loss over an empty set of paths".into()));
    }
    if paths.len() != traces.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} paths but {} traces",
            paths.len(),
            traces.len()
        )));
    }
    paths.iter().zip(traces).map(|(p, t)| term(p, t, masked)).collect()
}

pub fn empirical_loss(paths: &[Path], traces: &[ForwardTrace]) -> Result<f64> {
    Ok(stable_mean(&path_loss_terms(paths, traces, false)?))
}

pub fn masked_loss(paths: &[Path], traces: &[ForwardTrace]) -> Result<f64> {
    Ok(stable_mean(&path_loss_terms(paths, traces, true)?))
}

/// Records the per-path term on the tape of `rec`. Returns `None` when the
/// path has no observation after the initial one.
pub fn record_path_loss(
    tape: &mut Tape,
    path: &Path,
    rec: &RecordedTrace,
    masked: bool,
) -> Result<Option<NodeId>> {
    check_trace(path, &rec.trace)?;
    let n_prime = path.schedule.len() - 1;
    if n_prime == 0 {
        return Ok(None);
    }
    let mut squares = Vec::with_capacity(n_prime);
    for (i, (_, x, mask)) in path.observations().enumerate().skip(1) {
        let x = tape.constant(x.to_vec());
        let mut err = tape.sub(x, rec.y_jump[i])?;
        let mut jump = tape.sub(rec.y_jump[i], rec.y_left[i])?;
        if masked {
            let m: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            err = tape.mul_const(err, m.clone())?;
            jump = tape.mul_const(jump, m)?;
        }
        let a = tape.norm(err);
        let b = tape.norm(jump);
        let s = tape.add(a, b)?;
        squares.push(tape.square(s));
    }
    let total = tape.sum_all(&squares);
    Ok(Some(tape.scale(total, 1.0 / n_prime as f64)))
}

/// The true conditional expectation on every grid point, given the
/// observations of `path`. Requires fully observed schedules.
pub fn oracle_grid(model: &SdeModel, path: &Path, grid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    if !path.schedule.is_fully_observed() {
        return Err(Error::NoOracle(format!(
            "path {} has partially observed coordinates",
            path.path_id
        )));
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut obs = path.observations().peekable();
    let (mut t_obs, mut x_obs) = (0.0, path.value(0));
    for k in 0..grid.len() {
        if let Some(&(i, x, _)) = obs.peek() {
            if i == k {
                t_obs = grid.time(k);
                x_obs = x;
                obs.next();
            }
        }
        out.push(true_conditional_expectation(model, x_obs, t_obs, grid.time(k))?);
    }
    Ok(out)
}

/// Loss term of the oracle process: the post-jump value is the observation
/// itself, the left limit the conditional expectation from the previous
/// observation.
pub fn oracle_path_term(model: &SdeModel, path: &Path, grid: &TimeGrid) -> Result<f64> {
    if !path.schedule.is_fully_observed() {
        return Err(Error::NoOracle(format!(
            "path {} has partially observed coordinates",
            path.path_id
        )));
    }
    let obs: Vec<_> = path.observations().collect();
    if obs.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for w in obs.windows(2) {
        let (i0, x0, _) = w[0];
        let (i1, x1, _) = w[1];
        let pred = true_conditional_expectation(model, x0, grid.time(i0), grid.time(i1))?;
        total += norm(x1.iter().zip(&pred).map(|(a, b)| a - b)).powi(2);
    }
    Ok(total / (obs.len() - 1) as f64)
}

pub fn oracle_terms(paths: &[Path], grid: &TimeGrid, model: &SdeModel) -> Result<Vec<f64>> {
    if paths.is_empty() {
        return Err(Error::Precondition("oracle loss over an empty set of paths".into()));
    }
    paths.iter().map(|p| oracle_path_term(model, p, grid)).collect()
}

pub fn oracle_loss(paths: &[Path], grid: &TimeGrid, model: &SdeModel) -> Result<f64> {
    Ok(stable_mean(&oracle_terms(paths, grid, model)?))
}

/// `(1/(K+1)) Σ_k |x̂_k − y_k|²` for one path.
pub fn path_metric(oracle: &[Vec<f64>], trace: &ForwardTrace) -> Result<f64> {
    if oracle.len() != trace.y_grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "oracle on {} points, trace on {}",
            oracle.len(),
            trace.y_grid.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in oracle.iter().zip(&trace.y_grid) {
        if x.len() != y.len() {
            return Err(Error::ShapeMismatch(format!("oracle dim {} vs output dim {}", x.len(), y.len())));
        }
        total += x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / oracle.len() as f64)
}

/// Grid-averaged squared distance to the true conditional expectation,
/// averaged over paths. Coordinates are summed.
pub fn evaluation_metric(oracles: &[Vec<Vec<f64>>], traces: &[ForwardTrace]) -> Result<f64> {
    if oracles.is_empty() || oracles.len() != traces.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} oracle paths and {} traces",
            oracles.len(),
            traces.len()
        )));
    }
    let per_path = oracles
        .iter()
        .zip(traces)
        .map(|(o, t)| path_metric(o, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(stable_mean(&per_path))
}

/// One restarted sample of the ergodic objective: the stretch of a long path
/// between two consecutive observations, shifted to start at time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub path: Path,
    pub grid: TimeGrid,
}

/// Cuts a single long path into one segment per pair of consecutive
/// observations.
pub fn ergodic_segments(path: &Path, grid: &TimeGrid) -> Result<Vec<Segment>> {
    let idx = &path.schedule.indices;
    if idx.len() < 2 {
        return Err(Error::Precondition("ergodic loss needs at least two observations".into()));
    }
    let mesh = grid.mesh();
    idx.windows(2)
        .enumerate()
        .map(|(j, w)| {
            let (a, b) = (w[0], w[1]);
            let steps = b - a;
            let values = path.values[a * path.dim..(b + 1) * path.dim].to_vec();
            let masks = vec![path.schedule.masks[j].clone(), path.schedule.masks[j + 1].clone()];
            Ok(Segment {
                path: Path {
                    path_id: j,
                    dim: path.dim,
                    values,
                    schedule: crate::sde::ObservationSchedule { indices: vec![0, steps], masks },
                },
                grid: TimeGrid::new(mesh * steps as f64, steps)?,
            })
        })
        .collect()
}

/// Mean of the single-observation terms over all segments.
pub fn ergodic_loss(segments: &[Segment], traces: &[ForwardTrace]) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::Precondition("ergodic loss needs at least two observations".into()));
    }
    let paths: Vec<Path> = segments.iter().map(|s| s.path.clone()).collect();
    empirical_loss(&paths, traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::ObservationSchedule;

    fn one_dim_path(values: Vec<f64>, indices: Vec<usize>) -> Path {
        Path { path_id: 0, dim: 1, values, schedule: ObservationSchedule::full(indices, 1) }
    }

    fn trace(y_jump: Vec<f64>, y_left: Vec<f64>, k: usize) -> ForwardTrace {
        ForwardTrace {
            y_grid: vec![vec![0.0]; k + 1],
            y_left: y_left.into_iter().map(|v| vec![v]).collect(),
            y_jump: y_jump.into_iter().map(|v| vec![v]).collect(),
            jump_inputs: Vec::new(),
            h_final: Vec::new(),
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let p = one_dim_path(vec![1.0, 2.0, 3.0], vec![0, 1, 2]);
        let t = trace(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], 2);
        assert_eq!(path_loss_term(&p, &t).unwrap(), 0.0);
    }

    #[test]
    fn single_term_arithmetic() {
        let p = one_dim_path(vec![0.0, 1.0], vec![0, 1]);
        let t = trace(vec![0.0, 0.8], vec![0.0, 0.5], 1);
        assert!((path_loss_term(&p, &t).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn terms_are_averaged_over_observations() {
        // Second observation: (0.2 + 0.3)² = 0.25; third: (0.05 + 0.05)² = 0.01.
        let p = one_dim_path(vec![0.0, 1.0, 2.0], vec![0, 1, 2]);
        let t = trace(vec![0.0, 0.8, 1.95], vec![0.0, 0.5, 1.9], 2);
        assert!((path_loss_term(&p, &t).unwrap() - 0.13).abs() < 1e-12);
    }

    #[test]
    fn only_initial_observation_gives_zero() {
        let p = one_dim_path(vec![0.0, 1.0], vec![0]);
        let t = trace(vec![5.0], vec![5.0], 1);
        assert_eq!(path_loss_term(&p, &t).unwrap(), 0.0);
    }

    #[test]
    fn empirical_loss_means_paths() {
        let p1 = one_dim_path(vec![0.0, 1.0], vec![0, 1]);
        let t1 = trace(vec![0.0, 0.8], vec![0.0, 0.5], 1);
        let p2 = one_dim_path(vec![0.0, 1.0, 2.0], vec![0, 1, 2]);
        let t2 = trace(vec![0.0, 0.8, 1.95], vec![0.0, 0.5, 1.9], 2);
        let l = empirical_loss(&[p1.clone(), p2], &[t1.clone(), t2]).unwrap();
        assert!((l - 0.19).abs() < 1e-12);
        let same = empirical_loss(&[p1.clone(), p1.clone(), p1.clone()], &[t1.clone(), t1.clone(), t1.clone()]).unwrap();
        assert_eq!(same, path_loss_term(&p1, &t1).unwrap());
        assert!(empirical_loss(&[], &[]).is_err());
    }

    #[test]
    fn masked_loss_ignores_unobserved_coordinates() {
        let mut schedule = ObservationSchedule::full(vec![0, 1], 2);
        schedule.masks[1] = vec![true, false];
        let p = Path { path_id: 0, dim: 2, values: vec![0.0, 0.0, 1.0, 100.0], schedule };
        let t = ForwardTrace {
            y_grid: vec![vec![0.0; 2]; 2],
            y_left: vec![vec![0.0, 0.0], vec![0.5, 1.0]],
            y_jump: vec![vec![0.0, 0.0], vec![0.8, 99.0]],
            jump_inputs: Vec::new(),
            h_final: Vec::new(),
        };
        assert!((masked_path_loss_term(&p, &t).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn masked_equals_unmasked_under_full_masks() {
        let p = one_dim_path(vec![0.0, 1.0, 2.0], vec![0, 1, 2]);
        let t = trace(vec![0.0, 0.7, 2.2], vec![0.0, 0.5, 1.9], 2);
        assert_eq!(
            masked_loss(std::slice::from_ref(&p), std::slice::from_ref(&t)).unwrap().to_bits(),
            empirical_loss(&[p], &[t]).unwrap().to_bits()
        );
    }

    #[test]
    fn metric_examples() {
        let t = trace(vec![0.0], vec![0.0], 3);
        let oracle = vec![vec![0.0]; 4];
        assert_eq!(evaluation_metric(&[oracle], std::slice::from_ref(&t)).unwrap(), 0.0);
        let shifted = vec![vec![0.1]; 4];
        assert!((evaluation_metric(&[shifted], std::slice::from_ref(&t)).unwrap() - 0.01).abs() < 1e-15);
        let a = vec![vec![0.02f64.sqrt()]; 4];
        let b = vec![vec![0.04f64.sqrt()]; 4];
        assert!((evaluation_metric(&[a, b], &[t.clone(), t]).unwrap() - 0.03).abs() < 1e-15);
    }

    #[test]
    fn oracle_term_for_ou() {
        let model = SdeModel::ornstein_uhlenbeck();
        let grid = TimeGrid::default();
        let mut values = vec![1.0; 101];
        values[50] = 3.0;
        let p = one_dim_path(values, vec![0, 50]);
        let pred = (-1.0f64).exp() + 4.0 * (1.0 - (-1.0f64).exp());
        let v = oracle_path_term(&model, &p, &grid).unwrap();
        assert!((v - (3.0 - pred).powi(2)).abs() < 1e-14);
        assert!((v - 0.010741).abs() < 1e-6);
    }

    #[test]
    fn oracle_grid_restarts_at_observations() {
        let model = SdeModel::black_scholes();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let p = one_dim_path(vec![1.0, 9.0, 2.0, 9.0, 9.0], vec![0, 2]);
        let o = oracle_grid(&model, &p, &grid).unwrap();
        assert_eq!(o[0], vec![1.0]);
        assert!((o[1][0] - (2.0f64 * 0.25).exp()).abs() < 1e-15);
        assert_eq!(o[2], vec![2.0]);
        assert!((o[4][0] - 2.0 * (2.0f64 * 0.5).exp()).abs() < 1e-14);
    }

    #[test]
    fn oracle_needs_full_masks() {
        let model = SdeModel::heston(2);
        let mut schedule = ObservationSchedule::full(vec![0, 1], 2);
        schedule.masks[1] = vec![false, true];
        let p = Path { path_id: 3, dim: 2, values: vec![1.0; 4], schedule };
        let grid = TimeGrid::new(1.0, 1).unwrap();
        assert!(matches!(oracle_path_term(&model, &p, &grid), Err(Error::NoOracle(_))));
    }

    #[test]
    fn ergodic_single_segment() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let p = one_dim_path((0..=10).map(|i| i as f64 * 0.1).collect(), vec![0, 4, 10]);
        let segs = ergodic_segments(&p, &grid).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].grid.steps, 6);
        assert!((segs[1].grid.horizon - 0.6).abs() < 1e-12);
        assert_eq!(segs[1].path.value(6), &[1.0]);

        let one = &segs[..1];
        let x1 = one[0].path.value(4)[0];
        let t = trace(vec![0.0, x1 - 0.2], vec![0.0, x1 - 0.5], 4);
        assert!((ergodic_loss(one, &[t]).unwrap() - 0.25).abs() < 1e-12);
        assert!(ergodic_segments(&one_dim_path(vec![0.0; 11], vec![0]), &grid).is_err());
    }

    #[test]
    fn stable_mean_is_order_free() {
        let v = [0.1, 1e-17, 3.3, 1e16, -1e16, 0.7];
        let mut w = v;
        w.reverse();
        assert_eq!(stable_mean(&v).to_bits(), stable_mean(&w).to_bits());
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
