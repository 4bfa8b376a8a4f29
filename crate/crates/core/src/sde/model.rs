use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Parameters shared by both Heston variants.
///
/// The price follows `dX = μ X dt + √v X dW`, the variance
/// `dv = -k (v - m) dt + σ √v dZ` with `Corr(W, Z) = ρ`. With `dim == 2`
/// the variance is also a prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub mu: f64,
    pub sigma: f64,
    pub x0: f64,
    pub k: f64,
    pub m: f64,
    pub v0: f64,
    pub rho: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum SdeModel {
    BlackScholes {
        mu: f64,
        sigma: f64,
        x0: f64,
    },
    OrnsteinUhlenbeck {
        k: f64,
        m: f64,
        sigma: f64,
        x0: f64,
    },
    Heston(HestonParams),
    /// Heston with the variance clamped at zero after every Euler step.
    HestonNoFeller(HestonParams),
    /// Ornstein-Uhlenbeck on `[0, t_switch]`, Black-Scholes afterwards,
    /// started from the OU endpoint.
    RegimeSwitch {
        ou_k: f64,
        ou_m: f64,
        ou_sigma: f64,
        x0: f64,
        bs_mu: f64,
        bs_sigma: f64,
        t_switch: f64,
    },
    /// Black-Scholes with drift `(α/2)(sin(βt) + 1)`.
    SineDriftBs {
        alpha: f64,
        beta: f64,
        sigma: f64,
        x0: f64,
    },
}

/// Tolerance used when comparing grid times with the regime switch time.
const SWITCH_EPS: f64 = 1e-12;

impl SdeModel {
    pub fn black_scholes() -> Self {
        SdeModel::BlackScholes { mu: 2.0, sigma: 0.3, x0: 1.0 }
    }

    pub fn ornstein_uhlenbeck() -> Self {
        SdeModel::OrnsteinUhlenbeck { k: 2.0, m: 4.0, sigma: 0.3, x0: 1.0 }
    }

    pub fn heston(dim: usize) -> Self {
        SdeModel::Heston(HestonParams {
            mu: 2.0,
            sigma: 0.3,
            x0: 1.0,
            k: 2.0,
            m: 4.0,
            v0: 4.0,
            rho: 0.5,
            dim,
        })
    }

    pub fn heston_no_feller(dim: usize) -> Self {
        SdeModel::HestonNoFeller(HestonParams {
            mu: 2.0,
            sigma: 3.0,
            x0: 1.0,
            k: 2.0,
            m: 1.0,
            v0: 0.5,
            rho: 0.5,
            dim,
        })
    }

    pub fn regime_switch() -> Self {
        SdeModel::RegimeSwitch {
            ou_k: 2.0,
            ou_m: 10.0,
            ou_sigma: 0.3,
            x0: 1.0,
            bs_mu: 2.0,
            bs_sigma: 0.3,
            t_switch: 0.5,
        }
    }

    pub fn sine_drift(beta: f64) -> Self {
        SdeModel::SineDriftBs { alpha: 2.0, beta, sigma: 0.3, x0: 1.0 }
    }

    /// Looks up a preset by its command-line name.
    pub fn preset(name: &str, dim: usize) -> Result<Self> {
        let model = match name {
            "bs" | "black_scholes" => Self::black_scholes(),
            "ou" | "ornstein_uhlenbeck" => Self::ornstein_uhlenbeck(),
            "heston" => Self::heston(dim),
            "heston_nofeller" | "heston_no_feller" => Self::heston_no_feller(dim),
            "regime" | "regime_switch" => Self::regime_switch(),
            "sine" | "sine_drift" => Self::sine_drift(2.0 * std::f64::consts::PI),
            other => {
                return Err(Error::InvalidParameter(format!("unknown model '{other}'")));
            }
        };
        if dim != 1 && !matches!(model, SdeModel::Heston(_) | SdeModel::HestonNoFeller(_)) {
            return Err(Error::InvalidParameter(format!(
                "model '{name}' is one-dimensional, got dim {dim}"
            )));
        }
        model.validate()?;
        Ok(model)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SdeModel::BlackScholes { .. } => "black_scholes",
            SdeModel::OrnsteinUhlenbeck { .. } => "ornstein_uhlenbeck",
            SdeModel::Heston(_) => "heston",
            SdeModel::HestonNoFeller(_) => "heston_no_feller",
            SdeModel::RegimeSwitch { .. } => "regime_switch",
            SdeModel::SineDriftBs { .. } => "sine_drift_bs",
        }
    }

    /// Overrides one named parameter, e.g. `beta` of the sine-drift model.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let slot: Option<&mut f64> = match (self, name) {
            (SdeModel::BlackScholes { mu, .. }, "mu") => Some(mu),
            (SdeModel::BlackScholes { sigma, .. }, "sigma") => Some(sigma),
            (SdeModel::BlackScholes { x0, .. }, "x0") => Some(x0),
            (SdeModel::OrnsteinUhlenbeck { k, .. }, "k") => Some(k),
            (SdeModel::OrnsteinUhlenbeck { m, .. }, "m") => Some(m),
            (SdeModel::OrnsteinUhlenbeck { sigma, .. }, "sigma") => Some(sigma),
            (SdeModel::OrnsteinUhlenbeck { x0, .. }, "x0") => Some(x0),
            (SdeModel::Heston(p) | SdeModel::HestonNoFeller(p), n) => match n {
                "mu" => Some(&mut p.mu),
                "sigma" => Some(&mut p.sigma),
                "x0" => Some(&mut p.x0),
                "k" => Some(&mut p.k),
                "m" => Some(&mut p.m),
                "v0" => Some(&mut p.v0),
                "rho" => Some(&mut p.rho),
                _ => None,
            },
            (SdeModel::RegimeSwitch { ou_k, ou_m, ou_sigma, x0, bs_mu, bs_sigma, t_switch }, n) => {
                match n {
                    "ou_k" => Some(ou_k),
                    "ou_m" => Some(ou_m),
                    "ou_sigma" => Some(ou_sigma),
                    "x0" => Some(x0),
                    "bs_mu" => Some(bs_mu),
                    "bs_sigma" => Some(bs_sigma),
                    "t_switch" => Some(t_switch),
                    _ => None,
                }
            }
            (SdeModel::SineDriftBs { alpha, beta, sigma, x0 }, n) => match n {
                "alpha" => Some(alpha),
                "beta" => Some(beta),
                "sigma" => Some(sigma),
                "x0" => Some(x0),
                _ => None,
            },
            _ => None,
        };
        match slot {
            Some(s) => {
                *s = value;
                Ok(())
            }
            None => Err(Error::InvalidParameter(format!("unknown model parameter '{name}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("{}: {msg}", self.kind_name())));
        let all_finite = match *self {
            SdeModel::BlackScholes { mu, sigma, x0 } => [mu, sigma, x0].iter().all(|v| v.is_finite()),
            SdeModel::OrnsteinUhlenbeck { k, m, sigma, x0 } => {
                [k, m, sigma, x0].iter().all(|v| v.is_finite())
            }
            SdeModel::Heston(p) | SdeModel::HestonNoFeller(p) => {
                [p.mu, p.sigma, p.x0, p.k, p.m, p.v0, p.rho].iter().all(|v| v.is_finite())
            }
            SdeModel::RegimeSwitch { ou_k, ou_m, ou_sigma, x0, bs_mu, bs_sigma, t_switch } => {
                [ou_k, ou_m, ou_sigma, x0, bs_mu, bs_sigma, t_switch].iter().all(|v| v.is_finite())
            }
            SdeModel::SineDriftBs { alpha, beta, sigma, x0 } => {
                [alpha, beta, sigma, x0].iter().all(|v| v.is_finite())
            }
        };
        if !all_finite {
            return bad("parameters must be finite");
        }
        // σ = 0 is accepted as a degenerate deterministic model.
        match *self {
            SdeModel::BlackScholes { sigma, .. }
            | SdeModel::OrnsteinUhlenbeck { sigma, .. }
            | SdeModel::SineDriftBs { sigma, .. }
                if sigma < 0.0 =>
            {
                bad("sigma must be non-negative")
            }
            SdeModel::SineDriftBs { alpha, beta, .. } if alpha <= 0.0 || beta <= 0.0 => {
                bad("alpha and beta must be positive")
            }
            SdeModel::RegimeSwitch { ou_sigma, bs_sigma, .. } if ou_sigma < 0.0 || bs_sigma < 0.0 => {
                bad("sigma must be non-negative")
            }
            SdeModel::RegimeSwitch { t_switch, .. } if t_switch < 0.0 => bad("t_switch must be >= 0"),
            SdeModel::Heston(p) | SdeModel::HestonNoFeller(p) => {
                if p.sigma < 0.0 {
                    bad("sigma must be non-negative")
                } else if p.k <= 0.0 || p.m <= 0.0 || p.v0 <= 0.0 {
                    bad("k, m and v0 must be positive")
                } else if p.rho.abs() > 1.0 {
                    bad("|rho| must be at most 1")
                } else if p.dim != 1 && p.dim != 2 {
                    bad("dim must be 1 or 2")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Dimension of the observed (and predicted) process.
    pub fn dim(&self) -> usize {
        match self {
            SdeModel::Heston(p) | SdeModel::HestonNoFeller(p) => p.dim,
            _ => 1,
        }
    }

    /// Dimension of the simulated state; Heston always carries the variance.
    pub fn state_dim(&self) -> usize {
        match self {
            SdeModel::Heston(_) | SdeModel::HestonNoFeller(_) => 2,
            _ => 1,
        }
    }

    /// Number of Brownian drivers per step.
    pub fn noise_dim(&self) -> usize {
        self.state_dim()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match *self {
            SdeModel::BlackScholes { x0, .. }
            | SdeModel::OrnsteinUhlenbeck { x0, .. }
            | SdeModel::RegimeSwitch { x0, .. }
            | SdeModel::SineDriftBs { x0, .. } => vec![x0],
            SdeModel::Heston(p) | SdeModel::HestonNoFeller(p) => vec![p.x0, p.v0],
        }
    }

    /// Projects a simulated state onto the observed coordinates.
    pub fn observe<'a>(&self, state: &'a [f64]) -> &'a [f64] {
        &state[..self.dim()]
    }

    /// Correlation between the two Brownian drivers, if any.
    pub fn correlation(&self) -> Option<f64> {
        match self {
            SdeModel::Heston(p) | SdeModel::HestonNoFeller(p) => Some(p.rho),
            _ => None,
        }
    }

    pub fn has_oracle(&self) -> bool {
        true
    }
}

/// One Euler-Maruyama step `x + μ(t, x) Δ + σ(t, x) dW`.
///
/// `dw` holds the Brownian increments over the step, already scaled by `√Δ`
/// and, for Heston, already correlated. The no-Feller Heston variant clamps
/// the variance at zero after the step.
pub fn euler_maruyama_step(
    model: &SdeModel,
    t: f64,
    x: &[f64],
    dt: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::Precondition(format!("step size must be positive, got {dt}")));
    }
    if x.len() != model.state_dim() || dw.len() != model.noise_dim() {
        return Err(Error::ShapeMismatch(format!(
            "state/noise of length {}/{} for a model with state dim {}",
            x.len(),
            dw.len(),
            model.state_dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SDE state".into()));
    }
    let next = match *model {
        SdeModel::BlackScholes { mu, sigma, .. } => {
            vec![x[0] + mu * x[0] * dt + sigma * x[0] * dw[0]]
        }
        SdeModel::OrnsteinUhlenbeck { k, m, sigma, .. } => {
            vec![x[0] - k * (x[0] - m) * dt + sigma * dw[0]]
        }
        SdeModel::Heston(p) | SdeModel::HestonNoFeller(p) => {
            let (price, var) = (x[0], x[1]);
            let vol = var.max(0.0).sqrt();
            let price_next = price + p.mu * price * dt + vol * price * dw[0];
            let mut var_next = var - p.k * (var - p.m) * dt + p.sigma * vol * dw[1];
            if matches!(model, SdeModel::HestonNoFeller(_)) && var_next < 0.0 {
                var_next = 0.0;
            }
            vec![price_next, var_next]
        }
        SdeModel::RegimeSwitch { ou_k, ou_m, ou_sigma, bs_mu, bs_sigma, t_switch, .. } => {
            if t + SWITCH_EPS < t_switch {
                vec![x[0] - ou_k * (x[0] - ou_m) * dt + ou_sigma * dw[0]]
            } else {
                vec![x[0] + bs_mu * x[0] * dt + bs_sigma * x[0] * dw[0]]
            }
        }
        SdeModel::SineDriftBs { alpha, beta, sigma, .. } => {
            let mu = 0.5 * alpha * ((beta * t).sin() + 1.0);
            vec![x[0] + mu * x[0] * dt + sigma * x[0] * dw[0]]
        }
    };
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SDE state after step".into()));
    }
    Ok(next)
}

fn ou_mean(x: f64, k: f64, m: f64, s: f64) -> f64 {
    let decay = (-k * s).exp();
    x * decay + m * (1.0 - decay)
}

/// `E[X_t | X_{t_obs} = x_obs]`, i.e. the prediction given the last
/// observation `(x_obs, t_obs)`. `x_obs` has the observed dimension.
pub fn true_conditional_expectation(
    model: &SdeModel,
    x_obs: &[f64],
    t_obs: f64,
    t: f64,
) -> Result<Vec<f64>> {
    if t < t_obs {
        return Err(Error::Precondition(format!(
            "prediction time {t} precedes observation time {t_obs}"
        )));
    }
    if x_obs.len() != model.dim() {
        return Err(Error::ShapeMismatch(format!(
            "observation of length {} for a {}-dimensional model",
            x_obs.len(),
            model.dim()
        )));
    }
    let s = t - t_obs;
    let out = match *model {
        SdeModel::BlackScholes { mu, .. } => vec![x_obs[0] * (mu * s).exp()],
        SdeModel::OrnsteinUhlenbeck { k, m, .. } => vec![ou_mean(x_obs[0], k, m, s)],
        SdeModel::Heston(p) | SdeModel::HestonNoFeller(p) => {
            let mut out = vec![x_obs[0] * (p.mu * s).exp()];
            if p.dim == 2 {
                out.push(ou_mean(x_obs[1], p.k, p.m, s));
            }
            out
        }
        SdeModel::RegimeSwitch { ou_k, ou_m, bs_mu, t_switch, .. } => {
            let x = x_obs[0];
            if t <= t_switch + SWITCH_EPS {
                vec![ou_mean(x, ou_k, ou_m, s)]
            } else if t_obs < t_switch - SWITCH_EPS {
                let at_switch = ou_mean(x, ou_k, ou_m, t_switch - t_obs);
                vec![at_switch * (bs_mu * (t - t_switch)).exp()]
            } else {
                vec![x * (bs_mu * s).exp()]
            }
        }
        SdeModel::SineDriftBs { alpha, beta, .. } => {
            let integral = 0.5 * alpha * (((beta * t_obs).cos() - (beta * t).cos()) / beta + s);
            vec![x_obs[0] * integral.exp()]
        }
    };
    Ok(out)
}
