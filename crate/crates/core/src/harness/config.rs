//! TOML configuration with one section per subcommand. Every omitted key
//! takes the default of the simulation study (G=100, p=21, score variance
//! 0.1, m=40, burn-in 20000, 10 replicates, k=1).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bingham::DEFAULT_BURN_IN;
use crate::clt::CltScenario;
use crate::error::{Error, Result};
use crate::hilbert::ClipMode;

use super::grid::ScenarioGrid;
use super::simulate::SimulationSpec;

/// Covariance of the Gaussian-span base measure, in basis coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    /// `diag(i^{-exponent})`.
    PowerLaw { exponent: f64 },
    /// Gaussian kernel `exp(−(s−t)²/h²)`. Without an explicit bandwidth, `h`
    /// is chosen so that `target_m` eigenvalues exceed `var_threshold` of the
    /// spectrum.
    GaussianKernel {
        #[serde(default)]
        bandwidth: Option<f64>,
        #[serde(default = "default_target_m")]
        target_m: usize,
        #[serde(default = "default_var_threshold")]
        var_threshold: f64,
    },
}

fn default_target_m() -> usize {
    5
}

fn default_var_threshold() -> f64 {
    0.99
}

impl Default for SigmaSpec {
    fn default() -> Self {
        SigmaSpec::PowerLaw { exponent: 3.0 }
    }
}

impl SigmaSpec {
    pub fn describe(&self) -> String {
        match self {
            SigmaSpec::PowerLaw { exponent } => format!("power_law(exponent={exponent})"),
            SigmaSpec::GaussianKernel { bandwidth, target_m, var_threshold } => match bandwidth {
                Some(h) => format!("gaussian_kernel(bandwidth={h})"),
                None => format!("gaussian_kernel(target_m={target_m}, var_threshold={var_threshold})"),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSpec {
    #[default]
    Fourier,
    /// Eigenfunctions of the Gaussian kernel in the `sigma` section; the
    /// basis size is then set by the kernel spectrum.
    KernelEigen,
}

/// Settings of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub k: usize,
    pub epsilon: f64,
    pub m: usize,
    pub burn_in: usize,
    pub clip: ClipMode,
    /// Subtract the sample mean before clipping. Not a private operation.
    pub center: bool,
    /// The first CSV row holds the grid abscissae.
    pub header: bool,
    /// Map the grid affinely onto `[0, 1]`.
    pub rescale_grid: bool,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self {
            k: 1,
            epsilon: 1.0,
            m: 40,
            burn_in: DEFAULT_BURN_IN,
            clip: ClipMode::PerRecord,
            center: false,
            header: true,
            rescale_grid: true,
        }
    }
}

/// Settings of `sample-bmvmf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub k: usize,
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self { k: 1, burn_in: DEFAULT_BURN_IN, keep: 100, thin: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveId {
    #[default]
    Fpca,
    PenalizedMean,
}

/// Settings of `verify-dp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub objective: ObjectiveId,
    pub epsilon: f64,
    pub m: usize,
    pub k: usize,
    pub lambda: f64,
    pub trials: usize,
    pub probes: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { objective: ObjectiveId::Fpca, epsilon: 1.0, m: 5, k: 1, lambda: 0.1, trials: 1000, probes: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub simulation: SimulationSpec,
    pub grid: ScenarioGrid,
    pub sigma: SigmaSpec,
    pub basis: BasisSpec,
    pub fit: FitSpec,
    pub sampler: SamplerSpec,
    pub verify: VerifySpec,
    pub clt: Option<CltScenario>,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// The `grid` section completed with the `simulation`, `sigma` and `basis` sections.
    pub fn scenario_grid(&self) -> ScenarioGrid {
        ScenarioGrid {
            simulation: self.simulation.clone(),
            sigma: self.sigma.clone(),
            basis: self.basis,
            ..self.grid.clone()
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_study_defaults() {
        let c = Config::from_toml_str("").unwrap();
        assert_eq!(c.simulation.grid_size, 100);
        assert_eq!(c.simulation.p, 21);
        assert!((c.simulation.score_sd - 0.1f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.simulation.noise_sd, 1.0);
        assert_eq!(c.simulation.fourth_term_boost, 3.0);
        assert_eq!(c.grid.m, 40);
        assert_eq!(c.grid.burn_in, 20_000);
        assert_eq!(c.grid.replicates, 10);
        assert_eq!(c.grid.k, 1);
        assert_eq!(c.sigma, SigmaSpec::PowerLaw { exponent: 3.0 });
        assert_eq!(c.basis, BasisSpec::Fourier);
    }

    #[test]
    fn sections_parse() {
        let c = Config::from_toml_str(
            r#"
            seed = 9
            [grid]
            n_values = [50]
            epsilon_values = [0.5, 1.0]
            [sigma]
            kind = "gaussian_kernel"
            target_m = 4
            [fit]
            clip = "global"
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.grid.n_values, vec![50]);
        assert_eq!(c.sigma, SigmaSpec::GaussianKernel { bandwidth: None, target_m: 4, var_threshold: 0.99 });
        assert_eq!(c.fit.clip, ClipMode::Global);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::from_toml_str("[fit]\nepsilom = 1.0"), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip() {
        let c = Config::default();
        let back = Config::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
