use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::array::DenseArray;
use super::tape::{NodeId, Tape};
use crate::rng::{rng_for, tag};
use crate::{Error, Result};

/// Architecture of a feed-forward net: tanh on hidden layers, identity on
/// the output, optional dropout after each hidden nonlinearity and an
/// optional identity shortcut (requires equal input and output width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub widths: Vec<usize>,
    pub dropout: f64,
    pub residual: bool,
}

impl NetSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        Self { widths, dropout: 0.1, residual: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::InvalidParameter(format!("invalid layer widths {:?}", self.widths)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter(format!("dropout rate {} not in [0, 1)", self.dropout)));
        }
        if self.residual && self.widths[0] != self.widths[self.widths.len() - 1] {
            return Err(Error::InvalidParameter(
                "residual shortcut needs equal input and output widths".into(),
            ));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub weight: DenseArray,
    pub bias: DenseArray,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    spec: NetSpec,
    layers: Vec<Linear>,
}

/// Training-time randomness for dropout. `Eval` disables dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct DropoutSource {
    rng: Option<ChaCha8Rng>,
}

impl DropoutSource {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(seed: u64) -> Self {
        Self { rng: Some(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn from_mode(mode: Mode) -> Self {
        match mode {
            Mode::Eval => Self::eval(),
            Mode::Train { seed } => Self::train(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted-dropout mask: kept units are scaled by `1 / (1 - rate)`.
    fn mask(&mut self, len: usize, rate: f64) -> Option<Vec<f64>> {
        let rng = self.rng.as_mut()?;
        if rate == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - rate);
        Some((0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect())
    }
}

/// Parameter handles of one net registered on a tape.
#[derive(Debug, Clone)]
pub struct NetParams {
    layers: Vec<(NodeId, NodeId)>,
}

impl NetParams {
    /// Handles in the same order as [`FeedForwardNet::params`].
    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

impl FeedForwardNet {
    /// Weights uniform on `±1/√fan_in`, biases zero.
    pub fn init<R: Rng>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                Linear {
                    weight: DenseArray::from_vec(fan_out, fan_in, data).expect("shape by construction"),
                    bias: DenseArray::zeros(fan_out, 1),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Builds a net from explicit layers, checking that shapes compose.
    pub fn from_layers(spec: NetSpec, layers: Vec<Linear>) -> Result<Self> {
        spec.validate()?;
        if layers.len() + 1 != spec.widths.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} layers for widths {:?}",
                layers.len(),
                spec.widths
            )));
        }
        for (l, w) in layers.iter().zip(spec.widths.windows(2)) {
            if l.weight.shape() != (w[1], w[0]) || l.bias.shape() != (w[1], 1) {
                return Err(Error::ShapeMismatch(format!(
                    "layer {:?}/{:?} does not map {} -> {}",
                    l.weight.shape(),
                    l.bias.shape(),
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&DenseArray> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseArray> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Sets every weight and bias to zero.
    pub fn zero(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.fill(0.0));
    }

    /// Registers the parameters as variables (or constants, when no
    /// gradient is wanted) on `tape`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> NetParams {
        let mut leaf = |a: &DenseArray| {
            if trainable {
                tape.variable(a.as_slice().to_vec())
            } else {
                tape.constant(a.as_slice().to_vec())
            }
        };
        let layers = self.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        NetParams { layers }
    }

    /// Records a forward pass of input node `x` on `tape`.
    pub fn record(
        &self,
        tape: &mut Tape,
        params: &NetParams,
        x: NodeId,
        dropout: &mut DropoutSource,
    ) -> Result<NodeId> {
        let width = tape.value(x).len();
        if width != self.spec.input_width() {
            return Err(Error::ShapeMismatch(format!(
                "input of width {width} for a net expecting {}",
                self.spec.input_width()
            )));
        }
        let last = params.layers.len() - 1;
        let mut a = x;
        for (i, &(w, b)) in params.layers.iter().enumerate() {
            a = tape.affine(w, b, a)?;
            if i < last {
                a = tape.tanh(a);
                if let Some(mask) = dropout.mask(tape.value(a).len(), self.spec.dropout) {
                    a = tape.mul_const(a, mask)?;
                }
            }
        }
        if self.spec.residual {
            a = tape.add(a, x)?;
        }
        Ok(a)
    }
}

/// Uniform-initialised net with default dropout and no shortcut.
pub fn init_weights(widths: &[usize], seed: u64) -> Result<FeedForwardNet> {
    FeedForwardNet::init(NetSpec::new(widths.to_vec()), &mut rng_for(seed, &[tag::INIT]))
}

/// A single-net forward pass with its tape, ready for [`net_backward`].
#[derive(Debug)]
pub struct NetTape {
    tape: Tape,
    params: NetParams,
    input: NodeId,
    output: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    /// Same layout as the net's layers.
    pub layers: Vec<Linear>,
    pub input: Vec<f64>,
}

pub fn net_forward(net: &FeedForwardNet, x: &[f64], mode: Mode) -> Result<(Vec<f64>, NetTape)> {
    let mut tape = Tape::new();
    let params = net.register(&mut tape, true);
    let input = tape.variable(x.to_vec());
    let output = net.record(&mut tape, &params, input, &mut DropoutSource::from_mode(mode))?;
    let y = tape.value(output).to_vec();
    Ok((y, NetTape { tape, params, input, output }))
}

pub fn net_backward(net_tape: &mut NetTape, upstream: &[f64]) -> Result<NetGradients> {
    let mut grads = net_tape.tape.backward(net_tape.output, upstream)?;
    let layers = net_tape
        .params
        .layers
        .iter()
        .map(|&(w, b)| {
            let (rows, cols) = (net_tape.tape.value(b).len(), net_tape.tape.value(w).len() / net_tape.tape.value(b).len());
            Linear {
                weight: DenseArray::from_vec(rows, cols, grads.take(w, rows * cols))
                    .expect("gradient shape matches parameter"),
                bias: DenseArray::column(grads.take(b, rows)),
            }
        })
        .collect();
    let input = grads.take(net_tape.input, net_tape.tape.value(net_tape.input).len());
    Ok(NetGradients { layers, input })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_chain() -> FeedForwardNet {
        let layer = || Linear {
            weight: DenseArray::from_vec(1, 1, vec![1.0]).unwrap(),
            bias: DenseArray::zeros(1, 1),
        };
        FeedForwardNet::from_layers(NetSpec::new(vec![1, 1, 1, 1]), vec![layer(), layer(), layer()])
            .unwrap()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut net = init_weights(&[2, 5, 5, 2], 1).unwrap();
        net.zero();
        let (y, _) = net_forward(&net, &[0.3, -0.1], Mode::Eval).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_residual_net_is_identity() {
        let spec = NetSpec { residual: true, ..NetSpec::new(vec![2, 5, 5, 2]) };
        let mut net = FeedForwardNet::init(spec, &mut rng_for(0, &[])).unwrap();
        net.zero();
        let (y, _) = net_forward(&net, &[0.3, -0.1], Mode::Train { seed: 4 }).unwrap();
        assert_eq!(y, vec![0.3, -0.1]);
    }

    #[test]
    fn double_tanh() {
        let (y, _) = net_forward(&ones_chain(), &[0.5], Mode::Eval).unwrap();
        assert!((y[0] - 0.5f64.tanh().tanh()).abs() < 1e-15);
        assert!((y[0] - 0.4318).abs() < 1e-4);
    }

    #[test]
    fn eval_is_deterministic_and_train_varies_with_seed() {
        let net = init_weights(&[3, 16, 16, 2], 2).unwrap();
        let x = [0.1, 0.2, -0.3];
        let (a, _) = net_forward(&net, &x, Mode::Eval).unwrap();
        let (b, _) = net_forward(&net, &x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        let (c, _) = net_forward(&net, &x, Mode::Train { seed: 1 }).unwrap();
        let (d, _) = net_forward(&net, &x, Mode::Train { seed: 1 }).unwrap();
        let (e, _) = net_forward(&net, &x, Mode::Train { seed: 2 }).unwrap();
        assert_eq!(c, d);
        assert_ne!(c, e);
    }

    #[test]
    fn init_respects_bounds_and_seed() {
        let a = init_weights(&[100, 100, 1], 7).unwrap();
        let b = init_weights(&[100, 100, 1], 7).unwrap();
        assert_eq!(a, b);
        let w = a.layers()[0].weight.as_slice();
        assert!(w.iter().all(|v| v.abs() <= 0.1));
        // Uniform(-0.1, 0.1) has standard deviation 0.1/√3.
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let se = 0.1 / 3f64.sqrt() / (w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
        assert!(a.layers().iter().all(|l| l.bias.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let net = init_weights(&[3, 4, 1], 0).unwrap();
        assert!(matches!(net_forward(&net, &[1.0], Mode::Eval), Err(Error::ShapeMismatch(_))));
        let spec = NetSpec { residual: true, ..NetSpec::new(vec![3, 4, 1]) };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn scalar_linear_gradient() {
        let net = FeedForwardNet::from_layers(
            NetSpec::new(vec![1, 1]),
            vec![Linear { weight: DenseArray::from_vec(1, 1, vec![2.5]).unwrap(), bias: DenseArray::zeros(1, 1) }],
        )
        .unwrap();
        let (y, mut tape) = net_forward(&net, &[0.4], Mode::Eval).unwrap();
        assert_eq!(y, vec![2.5 * 0.4]);
        let g = net_backward(&mut tape, &[1.0]).unwrap();
        assert_eq!(g.layers[0].weight.as_slice(), &[0.4]);
        assert_eq!(g.input, vec![2.5]);
        assert!(matches!(net_backward(&mut tape, &[1.0]), Err(Error::TapeConsumed)));
    }
}
