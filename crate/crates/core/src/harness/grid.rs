use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::mpsc;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bingham::{ChainSchedule, DEFAULT_BURN_IN};
use crate::error::{Error, Result};
use crate::fpca::{private_fpca, PrivateFpcaConfig, UtilityReport};
use crate::hilbert::Grid;
use crate::rng::derive_seed;

use super::config::{BasisSpec, SigmaSpec};
use super::model::{resolve_model, Model};
use super::simulate::{generate_kl_dataset, SimulationSpec};

/// Simulation scenarios over `(n, ε)` with replicates. The simulation
/// template, `Σ` and basis come from their own config sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioGrid {
    pub n_values: Vec<usize>,
    pub epsilon_values: Vec<f64>,
    pub replicates: usize,
    pub k: usize,
    pub m: usize,
    pub burn_in: usize,
    /// Worker threads; `None` uses every available core.
    pub parallelism: Option<usize>,
    #[serde(skip)]
    pub simulation: SimulationSpec,
    #[serde(skip)]
    pub sigma: SigmaSpec,
    #[serde(skip)]
    pub basis: BasisSpec,
}

impl Default for ScenarioGrid {
    fn default() -> Self {
        Self {
            n_values: vec![100, 250, 500, 750, 1000],
            epsilon_values: vec![0.125, 0.25, 0.5, 1.0, 2.0],
            replicates: 10,
            k: 1,
            m: 40,
            burn_in: DEFAULT_BURN_IN,
            parallelism: None,
            simulation: SimulationSpec::default(),
            sigma: SigmaSpec::default(),
            basis: BasisSpec::default(),
        }
    }
}

impl ScenarioGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.epsilon_values.is_empty() {
            return Err(Error::InvalidArgument("n_values and epsilon_values must be nonempty".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be at least 1".into()));
        }
        if self.epsilon_values.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument(format!("epsilon values must be positive: {:?}", self.epsilon_values)));
        }
        if self.n_values.iter().any(|&n| n <= self.k) {
            return Err(Error::InvalidArgument(format!("every n must exceed k = {}", self.k)));
        }
        if self.parallelism == Some(0) {
            return Err(Error::InvalidArgument("parallelism must be at least 1".into()));
        }
        self.simulation.validate()
    }

    fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut cells = Vec::new();
        for ni in 0..self.n_values.len() {
            for ei in 0..self.epsilon_values.len() {
                for r in 0..self.replicates {
                    cells.push((ni, ei, r));
                }
            }
        }
        cells
    }
}

/// One metrics row; failed cells carry the error code and NaN metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub report: UtilityReport,
    pub status: String,
}

impl GridRow {
    pub const CSV_HEADER: &'static str = "n,epsilon,k,m,replicate,variance_ratio,subspace_norm,seed,status";

    pub fn csv_row(&self) -> String {
        format!("{},{}", self.report.csv_row(), self.status)
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub epsilon: f64,
    pub k: usize,
    pub m: usize,
    pub replicates: usize,
    pub failed: usize,
    pub mean_variance_ratio: f64,
    pub se_variance_ratio: f64,
    pub mean_subspace_norm: f64,
    pub se_subspace_norm: f64,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str =
        "n,epsilon,k,m,replicates,failed,mean_variance_ratio,se_variance_ratio,mean_subspace_norm,se_subspace_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.epsilon,
            self.k,
            self.m,
            self.replicates,
            self.failed,
            self.mean_variance_ratio,
            self.se_variance_ratio,
            self.mean_subspace_norm,
            self.se_subspace_norm
        )
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    pub summary: Vec<SummaryRow>,
}

/// Sample mean and standard error `sd/√count` (sd with `count − 1`).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_cell(grid: &ScenarioGrid, model: &Model, master: u64, (ni, ei, r): (usize, usize, usize)) -> GridRow {
    let n = grid.n_values[ni];
    let epsilon = grid.epsilon_values[ei];
    let seed = derive_seed(master, &[ni as u64, ei as u64, r as u64]);
    let attempt = || -> Result<UtilityReport> {
        let sim = SimulationSpec { n, seed: derive_seed(seed, &[0]), ..grid.simulation.clone() };
        let data = generate_kl_dataset(&sim)?;
        let cfg = PrivateFpcaConfig {
            k: grid.k,
            epsilon,
            schedule: ChainSchedule { burn_in: grid.burn_in, keep: 1, thin: 1 },
            seed,
            stream_id: 1,
            replicate: r,
        };
        Ok(private_fpca(&data, &model.basis, &model.sigma, &cfg)?.report)
    };
    match attempt() {
        Ok(report) => GridRow { report, status: "ok".into() },
        Err(e) => GridRow {
            report: UtilityReport {
                n,
                epsilon,
                k: grid.k,
                m: model.m(),
                replicate: r,
                variance_ratio: f64::NAN,
                subspace_norm: f64::NAN,
                seed,
            },
            status: e.code().into(),
        },
    }
}

fn summarize(grid: &ScenarioGrid, rows: &[GridRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &n in &grid.n_values {
        for &epsilon in &grid.epsilon_values {
            let cell: Vec<&GridRow> = rows.iter().filter(|r| r.report.n == n && r.report.epsilon == epsilon).collect();
            let good: Vec<&&GridRow> = cell.iter().filter(|r| r.ok()).collect();
            let vr: Vec<f64> = good.iter().map(|r| r.report.variance_ratio).collect();
            let sn: Vec<f64> = good.iter().map(|r| r.report.subspace_norm).collect();
            let (mean_variance_ratio, se_variance_ratio) = mean_and_se(&vr);
            let (mean_subspace_norm, se_subspace_norm) = mean_and_se(&sn);
            out.push(SummaryRow {
                n,
                epsilon,
                k: grid.k,
                m: cell.first().map_or(grid.m, |r| r.report.m),
                replicates: good.len(),
                failed: cell.len() - good.len(),
                mean_variance_ratio,
                se_variance_ratio,
                mean_subspace_norm,
                se_subspace_norm,
            });
        }
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs every `(n, ε, replicate)` cell and writes the metrics CSV row by row
/// in cell order, flushing after each row, then the per-`(n, ε)` summary.
///
/// Cells run on a worker pool; a single writer restores the cell order, so
/// the files depend only on the grid and `seed`. A failing cell becomes a
/// row with NaN metrics and its error code in `status`.
pub fn run_scenario_grid(
    grid: &ScenarioGrid,
    seed: u64,
    metrics_path: &Path,
    summary_path: &Path,
) -> Result<GridOutcome> {
    grid.validate()?;
    let g = Arc::new(Grid::uniform(grid.simulation.grid_size)?);
    let model = resolve_model(g, grid.m, grid.basis, &grid.sigma)?;
    let cells = grid.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.parallelism.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;

    let mut metrics = create(metrics_path)?;
    writeln!(metrics, "{}", GridRow::CSV_HEADER)?;
    metrics.flush()?;

    let (tx, rx) = mpsc::channel::<(usize, GridRow)>();
    let mut rows: Vec<GridRow> = Vec::with_capacity(cells.len());
    std::thread::scope(|scope| -> Result<()> {
        let cells = &cells;
        let model = &model;
        scope.spawn(move || {
            pool.install(|| {
                cells.par_iter().enumerate().for_each_with(tx, |tx, (i, &cell)| {
                    let _ = tx.send((i, run_cell(grid, model, seed, cell)));
                });
            });
        });
        let mut pending = BTreeMap::new();
        for (i, row) in rx {
            pending.insert(i, row);
            while let Some(row) = pending.remove(&rows.len()) {
                writeln!(metrics, "{}", row.csv_row())?;
                metrics.flush()?;
                rows.push(row);
            }
        }
        Ok(())
    })?;
    if rows.len() != cells.len() {
        return Err(Error::Numerical(format!("only {} of {} cells reported", rows.len(), cells.len())));
    }

    let summary = summarize(grid, &rows);
    let mut out = create(summary_path)?;
    writeln!(out, "{}", SummaryRow::CSV_HEADER)?;
    for s in &summary {
        writeln!(out, "{}", s.csv_row())?;
    }
    out.flush()?;
    Ok(GridOutcome { rows, summary })
}
