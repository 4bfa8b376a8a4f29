#![allow(dead_code)]

use njode::njode::{forward_path, NjodeConfig, NjodeModel};
use njode::objective::{path_loss_terms, stable_mean};
use njode::sde::{generate_dataset, Dataset, GenerateOptions, MaskMode, SdeModel, TimeGrid};
use njode::tensor::Mode;

/// Elementwise relative error with the denominator floored at 1e-8.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn toy_dataset(model: SdeModel, n: usize, steps: usize, mask_mode: MaskMode, seed: u64) -> Dataset {
    generate_dataset(
        model,
        TimeGrid::new(1.0, steps).unwrap(),
        GenerateOptions { n_paths: n, obs_prob: 0.5, mask_mode, master_seed: seed },
    )
    .unwrap()
}

pub fn toy_model(ds: &Dataset, latent: usize, hidden: usize, masked: bool, seed: u64) -> NjodeModel {
    let cfg = NjodeConfig {
        dim_x: ds.dim(),
        dim_y: ds.dim(),
        latent_dim: latent,
        hidden,
        dropout: 0.0,
        masked,
        dt: ds.grid.mesh(),
        ..NjodeConfig::default()
    };
    NjodeModel::new(cfg, seed).unwrap()
}

/// Eval-mode empirical (or masked) loss of `model` on every path of `ds`.
pub fn eval_loss(model: &NjodeModel, ds: &Dataset) -> f64 {
    let traces: Vec<_> = ds
        .paths
        .iter()
        .map(|p| forward_path(model, p, &ds.grid, Mode::Eval).unwrap())
        .collect();
    stable_mean(&path_loss_terms(&ds.paths, &traces, model.config.masked).unwrap())
}
