//! Reproduction layer: configuration, Karhunen–Loève simulation, curve CSV
//! ingestion and scenario grids.

pub mod config;
pub mod grid;
pub mod io;
pub mod model;
pub mod simulate;

pub use config::{BasisSpec, Config, FitSpec, SigmaSpec};
pub use grid::{run_scenario_grid, GridOutcome, ScenarioGrid};
pub use io::{load_curves_csv, CurveTable, Layout};
pub use model::{resolve_model, Model};
pub use simulate::{generate_kl_dataset, MeanFunction, SimulationSpec};
