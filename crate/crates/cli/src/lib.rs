//! Command-line front end. [`run`] parses arguments, dispatches and maps
//! errors to exit codes: 0 success, 1 usage, 2 data, 3 numerical.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use dpfpca::bingham::{run_chain, write_trace_jsonl, BinghamParameter, ChainSchedule, StiefelPoint};
use dpfpca::clt::{run_clt_experiment, CltScenario, DataLaw};
use dpfpca::fpca::{private_fpca, projection_from_span, FpcaObjective, PrivateFpcaConfig, FPCA_SENSITIVITY};
use dpfpca::harness::config::{BasisSpec, ObjectiveId, VerifySpec};
use dpfpca::harness::io::{load_matrix_csv, sidecar_path, write_components_csv, write_dataset_csv, write_json, ReleaseMetadata};
use dpfpca::harness::{generate_kl_dataset, load_curves_csv, resolve_model, run_scenario_grid, Config, Layout};
use dpfpca::hilbert::{clip_to_unit_ball, fourier_basis, project, ClipMode, Dataset};
use dpfpca::mechanism::{penalized_mean_objective, verify_dp_ratio, MechanismConfig, PENALIZED_MEAN_SENSITIVITY};
use dpfpca::covariance::power_law_sigma;
use dpfpca::rng::stream;
use dpfpca::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "dpfpca", version, about = "Differentially private functional PCA")]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Fpca,
    PenalizedMean,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate Karhunen–Loève curves and write them as a curve CSV.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Release private principal components of a curve CSV.
    Fit {
        data: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        /// Subjects are columns instead of rows.
        #[arg(long)]
        columns: bool,
    },
    /// Run a scenario grid; writes metrics to --out and a summary next to it.
    Grid,
    /// Empirical CLT check; text report on stdout, CSV to --out.
    Clt,
    /// Gibbs samples from the matrix Bingham law with parameter A (square CSV).
    SampleBmvmf {
        a: PathBuf,
        /// Also write the energy trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Largest privacy-loss ratio over random adjacent datasets and probes.
    VerifyDp {
        data: PathBuf,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::Mismatch(_)
        | Error::GridMismatch
        | Error::OutsideSupport(_)
        | Error::Config(_) => EXIT_USAGE,
        Error::Data(_) | Error::Unclipped { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_DATA,
        Error::Numerical(_) | Error::SamplerStalled { .. } => EXIT_NUMERICAL,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error[{}]: {e}", e.code());
            exit_code(&e)
        }
    }
}

fn require_out(cli: &Cli) -> dpfpca::Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::InvalidArgument("--out <path> is required for this command".into()))
}

/// `metrics.csv` → `metrics_summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_summary.{}", ext.to_string_lossy()),
        None => format!("{stem}_summary"),
    };
    out.with_file_name(name)
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> dpfpca::Result<i32> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    match &cli.command {
        Command::Simulate { n } => {
            let out = require_out(cli)?;
            let mut spec = config.simulation.clone();
            spec.seed = seed;
            if let Some(n) = n {
                spec.n = *n;
            }
            let d = generate_kl_dataset(&spec)?;
            write_dataset_csv(out, &d)?;
            writeln!(stdout, "wrote {} curves on {} grid points to {}", d.len(), d.grid().len(), out.display())?;
        }
        Command::Fit { data, epsilon, k, columns } => {
            let out = require_out(cli)?;
            let mut fit = config.fit.clone();
            if let Some(e) = epsilon {
                fit.epsilon = *e;
            }
            if let Some(k) = k {
                fit.k = *k;
            }
            let layout = if *columns { Layout::ColumnsAreSubjects } else { Layout::RowsAreSubjects };
            let table = load_curves_csv(data, layout, fit.header)?;
            let mut d = table.to_dataset(fit.rescale_grid)?;
            if fit.center {
                d = d.centered();
            }
            let d = clip_to_unit_ball(&d, fit.clip)?;
            let model = resolve_model(d.grid().clone(), fit.m, config.basis, &config.sigma)?;
            let cfg = PrivateFpcaConfig {
                k: fit.k,
                epsilon: fit.epsilon,
                schedule: ChainSchedule { burn_in: fit.burn_in, keep: 1, thin: 1 },
                seed,
                stream_id: 0,
                replicate: 0,
            };
            let release = private_fpca(&d, &model.basis, &model.sigma, &cfg)?;
            write_components_csv(out, &release.components)?;
            let meta = ReleaseMetadata {
                epsilon: fit.epsilon,
                delta: FPCA_SENSITIVITY,
                k: fit.k,
                m: model.m(),
                sigma: model.describe(),
                basis: match config.basis {
                    BasisSpec::Fourier => "fourier",
                    BasisSpec::KernelEigen => "kernel_eigen",
                }
                .into(),
                burn_in: fit.burn_in,
                chain_length: cfg.schedule.total_steps(),
                seed,
                n: d.len(),
                grid_size: d.grid().len(),
                clip: match fit.clip {
                    ClipMode::PerRecord => "per_record",
                    ClipMode::Global => "global",
                }
                .into(),
                centered: fit.center,
            };
            write_json(&sidecar_path(out), &meta)?;
            serde_json::to_writer_pretty(&mut *stdout, &release.report)?;
            writeln!(stdout)?;
        }
        Command::Grid => {
            let out = require_out(cli)?;
            let grid = config.scenario_grid();
            let summary = summary_path(out);
            let outcome = run_scenario_grid(&grid, seed, out, &summary)?;
            let failed = outcome.rows.iter().filter(|r| !r.ok()).count();
            writeln!(
                stdout,
                "{} cells ({} failed); metrics in {}, summary in {}",
                outcome.rows.len(),
                failed,
                out.display(),
                summary.display()
            )?;
        }
        Command::Clt => {
            let scenario = config.clt.clone().unwrap_or_else(default_clt_scenario);
            let report = run_clt_experiment(&scenario, seed)?;
            write!(stdout, "{}", report.to_text())?;
            if let Some(out) = &cli.out {
                std::fs::write(out, report.to_csv())?;
            }
        }
        Command::SampleBmvmf { a, trace } => {
            let out = require_out(cli)?;
            let s = &config.sampler;
            let param = BinghamParameter::new(load_matrix_csv(a)?, s.k)?;
            let schedule = ChainSchedule { burn_in: s.burn_in, keep: s.keep, thin: s.thin };
            let chain = run_chain(&param, schedule, seed, 0)?;
            let mut text = String::from("sample,column");
            for i in 0..param.m() {
                text.push_str(&format!(",v{}", i + 1));
            }
            text.push('\n');
            for (i, v) in chain.samples.iter().enumerate() {
                for (j, col) in v.matrix().column_iter().enumerate() {
                    let vals: Vec<String> = col.iter().map(|x| x.to_string()).collect();
                    text.push_str(&format!("{i},{j},{}\n", vals.join(",")));
                }
            }
            std::fs::write(out, text)?;
            if let Some(t) = trace {
                write_trace_jsonl(&chain.trace, std::io::BufWriter::new(std::fs::File::create(t)?))?;
            }
            writeln!(stdout, "wrote {} samples to {}", chain.samples.len(), out.display())?;
        }
        Command::VerifyDp { data, objective, epsilon } => {
            let mut spec = config.verify.clone();
            if let Some(o) = objective {
                spec.objective = match o {
                    ObjectiveArg::Fpca => ObjectiveId::Fpca,
                    ObjectiveArg::PenalizedMean => ObjectiveId::PenalizedMean,
                };
            }
            if let Some(e) = epsilon {
                spec.epsilon = *e;
            }
            let table = load_curves_csv(data, Layout::RowsAreSubjects, config.fit.header)?;
            let d = clip_to_unit_ball(&table.to_dataset(config.fit.rescale_grid)?, ClipMode::PerRecord)?;
            let report = verify_dp(&d, &spec, seed)?;
            serde_json::to_writer_pretty(&mut *stdout, &report)?;
            writeln!(stdout)?;
            if let Some(out) = &cli.out {
                write_json(out, &report)?;
            }
            if !report.pass {
                return Ok(EXIT_NUMERICAL);
            }
        }
    }
    Ok(EXIT_OK)
}

/// The scalar penalized-mean scenario used when the config has no `clt` section.
pub fn default_clt_scenario() -> CltScenario {
    CltScenario {
        dim: 1,
        data: DataLaw { mean: vec![0.2], sd: vec![0.3] },
        lambda: 0.1,
        base_diag: vec![0.1],
        epsilon: 1.0,
        delta: PENALIZED_MEAN_SENSITIVITY,
        sample_sizes: vec![100, 10_000],
        replicates: 1000,
        gaussian_base: true,
        truncate: true,
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct VerifyReport {
    pub objective: String,
    pub epsilon: f64,
    pub delta: f64,
    pub bound: f64,
    pub max_ratio: f64,
    pub trials: usize,
    pub probes_per_trial: usize,
    pub pass: bool,
}

fn unit_ball_point<R: Rng>(m: usize, rng: &mut R) -> DVector<f64> {
    let dir = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dir = &dir / dir.norm();
    // a quarter of the replacements sit exactly on the sphere
    let r = if rng.gen_bool(0.25) { 1.0 } else { rng.gen::<f64>().powf(1.0 / m as f64) };
    dir * r
}

fn verify_dp(d: &Dataset, spec: &VerifySpec, seed: u64) -> dpfpca::Result<VerifyReport> {
    let basis = fourier_basis(spec.m, d.grid().clone())?;
    let (coefs, _) = project(d, &basis)?;
    let x: &DMatrix<f64> = &coefs.entries;
    let n = x.nrows();
    let m = spec.m;
    let mut rng = stream(seed, &[]);
    let mut worst = 0.0f64;
    let (name, delta) = match spec.objective {
        ObjectiveId::Fpca => {
            let cfg = MechanismConfig::new(spec.epsilon, FPCA_SENSITIVITY, seed)?;
            for _ in 0..spec.trials {
                let index = rng.gen_range(0..n);
                let replacement = unit_ball_point(m, &mut rng);
                let probes: Vec<_> = (0..spec.probes)
                    .map(|_| projection_from_span(&StiefelPoint::random(m, spec.k, &mut rng)))
                    .collect();
                worst = worst.max(verify_dp_ratio(&FpcaObjective, &cfg, x, index, &replacement, &probes)?);
            }
            ("fpca", FPCA_SENSITIVITY)
        }
        ObjectiveId::PenalizedMean => {
            let obj = penalized_mean_objective(spec.lambda, &power_law_sigma(m, 3.0)?)?;
            let cfg = MechanismConfig::new(spec.epsilon, PENALIZED_MEAN_SENSITIVITY, seed)?;
            for _ in 0..spec.trials {
                let index = rng.gen_range(0..n);
                let replacement = unit_ball_point(m, &mut rng);
                let probes: Vec<_> = (0..spec.probes).map(|_| unit_ball_point(m, &mut rng)).collect();
                worst = worst.max(verify_dp_ratio(&obj, &cfg, x, index, &replacement, &probes)?);
            }
            ("penalized_mean", PENALIZED_MEAN_SENSITIVITY)
        }
    };
    let bound = spec.epsilon / 2.0;
    Ok(VerifyReport {
        objective: name.into(),
        epsilon: spec.epsilon,
        delta,
        bound,
        max_ratio: worst,
        trials: spec.trials,
        probes_per_trial: spec.probes,
        pass: worst <= bound + 1e-9,
    })
}
