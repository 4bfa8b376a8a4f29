use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{rng_for, tag};
use crate::tensor::{DenseArray, FeedForwardNet, NetParams, NetSpec, NodeId, Tape};
use crate::{Error, Result};

/// Architecture and integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NjodeConfig {
    /// Observation dimension `d_X`.
    pub dim_x: usize,
    /// Output dimension `d_Y`; the loss needs `d_Y == d_X`.
    pub dim_y: usize,
    /// Latent dimension `d_H`.
    pub latent_dim: usize,
    /// Width `M` of both hidden layers of every net.
    pub hidden: usize,
    pub dropout: f64,
    /// Self-imputation: the jump net sees `(x̃, mask)` and the field sees
    /// the post-jump output instead of the raw observation.
    pub masked: bool,
    /// Adds the raw observation onto the leading latent coordinates after
    /// the jump net.
    pub residual_jump: bool,
    /// Adds the leading `d_Y` latent coordinates onto the readout.
    pub residual_readout: bool,
    /// Euler step of the latent ODE; must divide the data grid mesh.
    pub dt: f64,
}

impl Default for NjodeConfig {
    fn default() -> Self {
        Self {
            dim_x: 1,
            dim_y: 1,
            latent_dim: 10,
            hidden: 50,
            dropout: 0.1,
            masked: false,
            residual_jump: true,
            residual_readout: true,
            dt: 0.01,
        }
    }
}

impl NjodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_x == 0 || self.dim_y == 0 || self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidParameter("all widths must be positive".into()));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::InvalidParameter(format!("integration step {} must be positive", self.dt)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter(format!("dropout rate {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn jump_input_width(&self) -> usize {
        if self.masked {
            2 * self.dim_x
        } else {
            self.dim_x
        }
    }

    /// `tanh(h) ⧺ tanh(x_last) ⧺ (τ, t − τ)`.
    pub fn field_input_width(&self) -> usize {
        self.latent_dim + self.dim_x + 2
    }

    fn spec(&self, input: usize, output: usize) -> NetSpec {
        NetSpec { widths: vec![input, self.hidden, self.hidden, output], dropout: self.dropout, residual: false }
    }

    pub fn field_spec(&self) -> NetSpec {
        self.spec(self.field_input_width(), self.latent_dim)
    }

    pub fn jump_spec(&self) -> NetSpec {
        self.spec(self.jump_input_width(), self.latent_dim)
    }

    pub fn readout_spec(&self) -> NetSpec {
        self.spec(self.latent_dim, self.dim_y)
    }
}

/// The three nets: ODE field `f`, jump `ρ` and readout `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct NjodeModel {
    pub config: NjodeConfig,
    pub field: FeedForwardNet,
    pub jump: FeedForwardNet,
    pub readout: FeedForwardNet,
}

/// Tape handles of all parameters of a model.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub field: NetParams,
    pub jump: NetParams,
    pub readout: NetParams,
}

impl ModelParams {
    /// Handles in the order of [`NjodeModel::params`].
    pub fn ids(&self) -> Vec<NodeId> {
        self.field.ids().chain(self.jump.ids()).chain(self.readout.ids()).collect()
    }
}

impl NjodeModel {
    pub fn init<R: Rng>(config: NjodeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            field: FeedForwardNet::init(config.field_spec(), rng)?,
            jump: FeedForwardNet::init(config.jump_spec(), rng)?,
            readout: FeedForwardNet::init(config.readout_spec(), rng)?,
        })
    }

    pub fn new(config: NjodeConfig, seed: u64) -> Result<Self> {
        Self::init(config, &mut rng_for(seed, &[tag::INIT]))
    }

    pub fn from_nets(
        config: NjodeConfig,
        field: FeedForwardNet,
        jump: FeedForwardNet,
        readout: FeedForwardNet,
    ) -> Result<Self> {
        config.validate()?;
        for (net, spec, name) in [
            (&field, config.field_spec(), "field"),
            (&jump, config.jump_spec(), "jump"),
            (&readout, config.readout_spec(), "readout"),
        ] {
            if net.spec().widths.first() != spec.widths.first() || net.spec().widths.last() != spec.widths.last() {
                return Err(Error::ShapeMismatch(format!(
                    "{name} net widths {:?} do not fit the model configuration",
                    net.spec().widths
                )));
            }
        }
        Ok(Self { config, field, jump, readout })
    }

    pub fn params(&self) -> Vec<&DenseArray> {
        let mut p = self.field.params();
        p.extend(self.jump.params());
        p.extend(self.readout.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseArray> {
        let mut p = self.field.params_mut();
        p.extend(self.jump.params_mut());
        p.extend(self.readout.params_mut());
        p
    }

    /// Named parameters in serialization order.
    pub fn named_params(&self) -> Vec<(String, &DenseArray)> {
        let mut out = Vec::new();
        for (name, net) in [("field", &self.field), ("jump", &self.jump), ("readout", &self.readout)] {
            for (i, l) in net.layers().iter().enumerate() {
                out.push((format!("{name}.{i}.weight"), &l.weight));
                out.push((format!("{name}.{i}.bias"), &l.bias));
            }
        }
        out
    }

    pub fn param_lens(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.param_lens().iter().sum()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ModelParams {
        ModelParams {
            field: self.field.register(tape, trainable),
            jump: self.jump.register(tape, trainable),
            readout: self.readout.register(tape, trainable),
        }
    }
}
