use std::sync::Arc;

use crate::covariance::{power_law_sigma, sigma_from_kernel, CovarianceOperator};
use crate::error::{Error, Result};
use crate::hilbert::{bandwidth_for_components, fourier_basis, gaussian_kernel_eigenbasis, BasisSet, Grid};

use super::config::{BasisSpec, SigmaSpec};

/// Working basis and base-measure covariance for one grid.
#[derive(Debug, Clone)]
pub struct Model {
    pub basis: BasisSet,
    pub sigma: CovarianceOperator,
    pub bandwidth: Option<f64>,
    pub sigma_spec: SigmaSpec,
}

impl Model {
    pub fn m(&self) -> usize {
        self.basis.len()
    }

    pub fn describe(&self) -> String {
        match self.bandwidth {
            Some(h) => format!("{} [bandwidth={h}]", self.sigma_spec.describe()),
            None => self.sigma_spec.describe(),
        }
    }
}

/// Builds the basis and `Σ`. With [`BasisSpec::KernelEigen`] the basis size
/// comes from the kernel spectrum and `m` is ignored.
pub fn resolve_model(grid: Arc<Grid>, m: usize, basis: BasisSpec, sigma: &SigmaSpec) -> Result<Model> {
    let bandwidth = match sigma {
        SigmaSpec::PowerLaw { .. } => None,
        SigmaSpec::GaussianKernel { bandwidth: Some(h), .. } => Some(*h),
        SigmaSpec::GaussianKernel { bandwidth: None, target_m, var_threshold } => {
            Some(bandwidth_for_components(&grid, *target_m, *var_threshold)?)
        }
    };
    let basis_set = match basis {
        BasisSpec::Fourier => fourier_basis(m, grid.clone())?,
        BasisSpec::KernelEigen => {
            let (SigmaSpec::GaussianKernel { var_threshold, .. }, Some(h)) = (sigma, bandwidth) else {
                return Err(Error::Config("kernel_eigen basis needs a gaussian_kernel sigma".into()));
            };
            gaussian_kernel_eigenbasis(grid.clone(), h, *var_threshold)?.basis
        }
    };
    let sigma_op = match (sigma, bandwidth) {
        (SigmaSpec::PowerLaw { exponent }, _) => power_law_sigma(basis_set.len(), *exponent)?,
        (_, Some(h)) => sigma_from_kernel(&basis_set, h)?,
        _ => unreachable!("kernel sigma always has a bandwidth"),
    };
    Ok(Model { basis: basis_set, sigma: sigma_op, bandwidth, sigma_spec: sigma.clone() })
}
