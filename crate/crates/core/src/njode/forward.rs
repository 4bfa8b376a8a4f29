use super::model::{ModelParams, NjodeModel};
use crate::sde::{Path, TimeGrid};
use crate::tensor::{DropoutSource, Mode, NodeId, Tape};
use crate::{Error, Result};

/// Relative tolerance for placing times on the Euler lattice.
const LATTICE_TOL: f64 = 1e-9;

/// Outputs of one forward pass over a path.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Right-continuous outputs at every grid point (`K + 1` rows).
    pub y_grid: Vec<Vec<f64>>,
    /// Output just before each observation's jump. For the observation at
    /// `t₀` this equals the post-jump value.
    pub y_left: Vec<Vec<f64>>,
    /// Output right after each observation's jump.
    pub y_jump: Vec<Vec<f64>>,
    /// Observation vector fed to the jump net (the imputed `x̃` in masked mode).
    pub jump_inputs: Vec<Vec<f64>>,
    pub h_final: Vec<f64>,
}

/// A trace together with the tape nodes the loss differentiates through.
#[derive(Debug, Clone)]
pub struct RecordedTrace {
    pub trace: ForwardTrace,
    pub y_left: Vec<NodeId>,
    pub y_jump: Vec<NodeId>,
}

/// Latent state between observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCarry {
    pub h: Vec<f64>,
    /// Last observation, or the post-jump output in masked mode.
    pub x_last: Vec<f64>,
    /// Time of the last observation.
    pub tau: f64,
}

struct Recorder<'a> {
    model: &'a NjodeModel,
    tape: &'a mut Tape,
    params: &'a ModelParams,
    dropout: &'a mut DropoutSource,
}

impl Recorder<'_> {
    /// `y = g(tanh h) (+ leading latent coordinates)`.
    fn readout(&mut self, h: NodeId) -> Result<NodeId> {
        let squashed = self.tape.tanh(h);
        let y = self.model.readout.record(self.tape, &self.params.readout, squashed, self.dropout)?;
        if !self.model.config.residual_readout {
            return Ok(y);
        }
        let (d_h, d_y) = (self.model.config.latent_dim, self.model.config.dim_y);
        if d_h >= d_y {
            let head = self.tape.slice(h, 0, d_y)?;
            self.tape.add(y, head)
        } else {
            self.tape.add_prefix(y, h)
        }
    }

    /// `h = ρ(tanh x (⧺ mask)) (+ x on the leading latent coordinates)`.
    fn jump(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let cfg = &self.model.config;
        let width = self.tape.value(x).len();
        if width != cfg.dim_x {
            return Err(Error::ShapeMismatch(format!(
                "observation of width {width} for a model with d_X = {}",
                cfg.dim_x
            )));
        }
        let squashed = self.tape.tanh(x);
        let input = match (cfg.masked, mask) {
            (true, Some(mask)) => {
                if mask.len() != cfg.dim_x {
                    return Err(Error::ShapeMismatch(format!("mask of length {}", mask.len())));
                }
                let bits = self.tape.constant(mask.iter().map(|&b| f64::from(u8::from(b))).collect());
                self.tape.concat(&[squashed, bits])
            }
            (true, None) => return Err(Error::Precondition("masked model needs a mask".into())),
            (false, _) => squashed,
        };
        let h = self.model.jump.record(self.tape, &self.params.jump, input, self.dropout)?;
        if !cfg.residual_jump {
            return Ok(h);
        }
        if cfg.latent_dim >= cfg.dim_x {
            self.tape.add_prefix(h, x)
        } else {
            let head = self.tape.slice(x, 0, cfg.latent_dim)?;
            self.tape.add(h, head)
        }
    }

    /// One explicit Euler step `h + dt · f(tanh h, tanh x_last, τ, s − τ)`.
    fn euler_step(&mut self, h: NodeId, x_last: NodeId, tau: f64, s: f64, dt: f64) -> Result<NodeId> {
        let hs = self.tape.tanh(h);
        let xs = self.tape.tanh(x_last);
        let times = self.tape.constant(vec![tau, s - tau]);
        let input = self.tape.concat(&[hs, xs, times]);
        let f = self.model.field.record(self.tape, &self.params.field, input, self.dropout)?;
        let inc = self.tape.scale(f, dt);
        let next = self.tape.add(h, inc)?;
        if self.tape.value(next).iter().any(|v| !v.is_finite()) {
            return Err(Error::LatentBlowUp { time: s + dt });
        }
        Ok(next)
    }

    fn evolve(&mut self, mut h: NodeId, x_last: NodeId, tau: f64, t_from: f64, n_steps: usize, dt: f64) -> Result<NodeId> {
        for j in 0..n_steps {
            h = self.euler_step(h, x_last, tau, t_from + j as f64 * dt, dt)?;
        }
        Ok(h)
    }
}

fn lattice_steps(span: f64, dt: f64) -> Result<usize> {
    if span < -LATTICE_TOL * dt {
        return Err(Error::Precondition(format!("negative integration span {span}")));
    }
    let n = (span / dt).round();
    if (n * dt - span).abs() > LATTICE_TOL * dt.max(span) {
        return Err(Error::Precondition(format!(
            "span {span} is not a multiple of the integration step {dt}"
        )));
    }
    Ok(n as usize)
}

fn check_path(model: &NjodeModel, path: &Path, grid: &TimeGrid) -> Result<()> {
    let sched = &path.schedule;
    if sched.indices.first() != Some(&0) {
        return Err(Error::Precondition(format!(
            "path {} must be observed at grid index 0",
            path.path_id
        )));
    }
    if sched.indices.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(format!(
            "path {} has duplicate or decreasing observation indices",
            path.path_id
        )));
    }
    if path.dim != model.config.dim_x || path.n_points() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "path {} has dim {} and {} points; model expects dim {} on {} points",
            path.path_id,
            path.dim,
            path.n_points(),
            model.config.dim_x,
            grid.len()
        )));
    }
    if sched.indices.last().is_some_and(|&i| i > grid.steps) {
        return Err(Error::Precondition(format!("path {} observed beyond the grid", path.path_id)));
    }
    Ok(())
}

/// Records a full forward pass over `path` on `tape`.
///
/// At every grid point the latent is advanced from the previous grid point
/// and read out; at observation times the read-out value is the left limit,
/// then the jump is applied and the post-jump output recorded.
pub fn record_forward(
    model: &NjodeModel,
    tape: &mut Tape,
    params: &ModelParams,
    path: &Path,
    grid: &TimeGrid,
    dropout: &mut DropoutSource,
) -> Result<RecordedTrace> {
    check_path(model, path, grid)?;
    let cfg = model.config;
    let substeps = lattice_steps(grid.mesh(), cfg.dt)?.max(1);
    let dt = grid.mesh() / substeps as f64;
    let n_obs = path.schedule.len();

    let mut rec = Recorder { model, tape, params, dropout };
    let mut h = rec.tape.constant(vec![0.0; cfg.latent_dim]);
    let mut x_last = h;
    let mut tau = 0.0;
    let mut next_obs = 0;

    let mut y_grid = Vec::with_capacity(grid.len());
    let mut left_nodes = Vec::with_capacity(n_obs);
    let mut jump_nodes = Vec::with_capacity(n_obs);
    let mut jump_inputs = Vec::with_capacity(n_obs);

    for k in 0..grid.len() {
        if k > 0 {
            h = rec.evolve(h, x_last, tau, grid.time(k - 1), substeps, dt)?;
        }
        let observed = path.schedule.indices.get(next_obs) == Some(&k);
        if !observed {
            let y = rec.readout(h)?;
            y_grid.push(rec.tape.value(y).to_vec());
            continue;
        }
        let x = path.value(k);
        let mask = &path.schedule.masks[next_obs];
        let (x_in, y_before) = if cfg.masked {
            // x̃ = m ⊙ x + (1 − m) ⊙ y₋
            let y_before = rec.readout(h)?;
            let observed_part: Vec<f64> =
                x.iter().zip(mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
            let keep: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
            let c = rec.tape.constant(observed_part);
            let imputed = rec.tape.mul_const(y_before, keep)?;
            (rec.tape.add(c, imputed)?, Some(y_before))
        } else {
            let y_before = if k > 0 { Some(rec.readout(h)?) } else { None };
            (rec.tape.constant(x.to_vec()), y_before)
        };
        jump_inputs.push(rec.tape.value(x_in).to_vec());
        h = rec.jump(x_in, cfg.masked.then_some(mask.as_slice()))?;
        let y_after = rec.readout(h)?;
        left_nodes.push(if k == 0 { y_after } else { y_before.expect("left limit recorded") });
        jump_nodes.push(y_after);
        y_grid.push(rec.tape.value(y_after).to_vec());
        x_last = if cfg.masked { y_after } else { x_in };
        tau = grid.time(k);
        next_obs += 1;
    }

    let tape = &*rec.tape;
    let trace = ForwardTrace {
        y_grid,
        y_left: left_nodes.iter().map(|&n| tape.value(n).to_vec()).collect(),
        y_jump: jump_nodes.iter().map(|&n| tape.value(n).to_vec()).collect(),
        jump_inputs,
        h_final: tape.value(h).to_vec(),
    };
    Ok(RecordedTrace { trace, y_left: left_nodes, y_jump: jump_nodes })
}

/// Forward pass without gradients.
pub fn forward_path(model: &NjodeModel, path: &Path, grid: &TimeGrid, mode: Mode) -> Result<ForwardTrace> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape, false);
    let mut dropout = DropoutSource::from_mode(mode);
    Ok(record_forward(model, &mut tape, &params, path, grid, &mut dropout)?.trace)
}

fn with_recorder<T>(
    model: &NjodeModel,
    mode: Mode,
    f: impl FnOnce(&mut Recorder<'_>) -> Result<T>,
) -> Result<T> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape, false);
    let mut dropout = DropoutSource::from_mode(mode);
    let mut rec = Recorder { model, tape: &mut tape, params: &params, dropout: &mut dropout };
    f(&mut rec)
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

/// New latent state from an observation. In masked mode `x` is the imputed
/// vector and `mask` is required.
pub fn jump_update(model: &NjodeModel, x: &[f64], mask: Option<&[bool]>, mode: Mode) -> Result<Vec<f64>> {
    check_finite(x, "observation")?;
    with_recorder(model, mode, |rec| {
        let x = rec.tape.constant(x.to_vec());
        let h = rec.jump(x, mask)?;
        Ok(rec.tape.value(h).to_vec())
    })
}

/// Integrates the latent from `t_from` to `t_to` with the model's Euler step.
pub fn evolve_latent(
    model: &NjodeModel,
    carry: &LatentCarry,
    t_from: f64,
    t_to: f64,
    mode: Mode,
) -> Result<LatentCarry> {
    if t_to < t_from || carry.tau > t_from + LATTICE_TOL {
        return Err(Error::Precondition(format!(
            "cannot integrate from {t_from} to {t_to} with last observation at {}",
            carry.tau
        )));
    }
    check_finite(&carry.h, "latent state")?;
    let dt = model.config.dt;
    let n = lattice_steps(t_to - t_from, dt)?;
    with_recorder(model, mode, |rec| {
        let h = rec.tape.constant(carry.h.clone());
        let x = rec.tape.constant(carry.x_last.clone());
        let h = rec.evolve(h, x, carry.tau, t_from, n, dt)?;
        Ok(LatentCarry { h: rec.tape.value(h).to_vec(), x_last: carry.x_last.clone(), tau: carry.tau })
    })
}

pub fn readout(model: &NjodeModel, h: &[f64]) -> Result<Vec<f64>> {
    check_finite(h, "latent state")?;
    if h.len() != model.config.latent_dim {
        return Err(Error::ShapeMismatch(format!("latent of width {}", h.len())));
    }
    with_recorder(model, Mode::Eval, |rec| {
        let h = rec.tape.constant(h.to_vec());
        let y = rec.readout(h)?;
        Ok(rec.tape.value(y).to_vec())
    })
}
