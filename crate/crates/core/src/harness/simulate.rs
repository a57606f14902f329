use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{clip_to_unit_ball, fourier_basis, ClipMode, Dataset, Grid};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFunction {
    #[default]
    Zero,
}

impl MeanFunction {
    pub fn eval(&self, _t: f64) -> f64 {
        match self {
            MeanFunction::Zero => 0.0,
        }
    }
}

/// Curves `X_i(t_k) = μ(t_k) + Σ_j w_j U_ij u_j(t_k) + e_ik` on a uniform
/// grid over `[0, 1]`, where `u_j` is the `j`-th Fourier function,
/// `w_j = 1/j²` (times `fourth_term_boost` for `j = 4`),
/// `U_ij ~ N(0, score_sd²)` and `e_ik ~ N(0, noise_sd²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub n: usize,
    pub grid_size: usize,
    pub p: usize,
    pub score_sd: f64,
    pub noise_sd: f64,
    pub fourth_term_boost: f64,
    pub mean: MeanFunction,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            n: 100,
            grid_size: 100,
            p: 21,
            score_sd: 0.1f64.sqrt(),
            noise_sd: 1.0,
            fourth_term_boost: 3.0,
            mean: MeanFunction::Zero,
            seed: 0,
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.grid_size < 2 || self.p == 0 {
            return Err(Error::InvalidArgument(format!(
                "need n >= 1, grid_size >= 2, p >= 1; got n={}, grid_size={}, p={}",
                self.n, self.grid_size, self.p
            )));
        }
        if self.p > self.grid_size {
            return Err(Error::InvalidArgument(format!(
                "p = {} exceeds the {} Fourier terms a grid of {} points supports",
                self.p, self.grid_size, self.grid_size
            )));
        }
        for (name, v) in [
            ("score_sd", self.score_sd),
            ("noise_sd", self.noise_sd),
            ("fourth_term_boost", self.fourth_term_boost),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.fourth_term_boost == 0.0 {
            return Err(Error::InvalidArgument("fourth_term_boost must be positive".into()));
        }
        Ok(())
    }

    /// `w_j` for `j = 1..=p`.
    pub fn weights(&self) -> Vec<f64> {
        (1..=self.p)
            .map(|j| {
                let w = 1.0 / (j * j) as f64;
                if j == 4 {
                    w * self.fourth_term_boost
                } else {
                    w
                }
            })
            .collect()
    }
}

/// Simulated curves, rescaled jointly so every norm is below one.
pub fn generate_kl_dataset(spec: &SimulationSpec) -> Result<Dataset> {
    spec.validate()?;
    let grid = Arc::new(Grid::uniform(spec.grid_size)?);
    let basis = fourier_basis(spec.p, grid.clone())?;
    let weights = spec.weights();
    let mut rng = stream(spec.seed, &[]);
    let pts = grid.points();
    let rows: Vec<Vec<f64>> = (0..spec.n)
        .map(|_| {
            let scores: Vec<f64> =
                weights.iter().map(|w| w * spec.score_sd * rng.sample::<f64, _>(StandardNormal)).collect();
            pts.iter()
                .enumerate()
                .map(|(k, &t)| {
                    let signal: f64 = scores.iter().enumerate().map(|(j, s)| s * basis.function(j)[k]).sum();
                    let noise: f64 = rng.sample(StandardNormal);
                    spec.mean.eval(t) + signal + spec.noise_sd * noise
                })
                .collect()
        })
        .collect();
    clip_to_unit_ball(&Dataset::from_rows(grid, rows)?, ClipMode::Global)
}
