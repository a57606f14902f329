//! Curve CSV ingestion and the plain-text outputs of the CLI.
//!
//! Curve CSV layout: the first row holds the grid abscissae, every further
//! row one subject's values. Comma separated, '.' decimal point.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{Curve, Dataset, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// One subject per row.
    #[default]
    RowsAreSubjects,
    /// One subject per column; the grid, when present, is the first column.
    ColumnsAreSubjects,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub grid: Vec<f64>,
    /// False when the file had no grid and a uniform `[0, 1]` grid was assumed.
    pub grid_from_file: bool,
    pub rows: Vec<Vec<f64>>,
    pub path: PathBuf,
}

fn parse_cell(raw: &str, row: usize, col: usize, path: &Path) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        Error::Data(format!("{}: row {}, column {}: not a number: {:?}", path.display(), row + 1, col + 1, raw))
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!("{}: row {}, column {}: non-finite value {raw:?}", path.display(), row + 1, col + 1)));
    }
    Ok(v)
}

/// Reads a rectangular numeric CSV. With `header`, the first row (or first
/// column for [`Layout::ColumnsAreSubjects`]) is the grid and must be
/// strictly increasing; otherwise a uniform grid on `[0, 1]` is used.
/// Row and column numbers in errors are 1-based file positions.
pub fn load_curves_csv(path: &Path, layout: Layout, header: bool) -> Result<CurveTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut cells: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Data(format!(
                "{}: row {} has {} columns, expected {w}",
                path.display(),
                r + 1,
                record.len()
            )));
        }
        cells.push(record.iter().enumerate().map(|(c, raw)| parse_cell(raw, r, c, path)).collect::<Result<_>>()?);
    }
    if cells.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    if layout == Layout::ColumnsAreSubjects {
        let w = cells[0].len();
        cells = (0..w).map(|c| cells.iter().map(|row| row[c]).collect()).collect();
    }
    let (grid, rows, grid_from_file) = if header {
        let mut it = cells.into_iter();
        let grid = it.next().expect("nonempty");
        (grid, it.collect::<Vec<_>>(), true)
    } else {
        let g = cells[0].len();
        let grid = if g == 1 { vec![0.0] } else { (0..g).map(|k| k as f64 / (g - 1) as f64).collect() };
        (grid, cells, false)
    };
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    if grid.len() < 2 {
        return Err(Error::Data(format!("{}: need at least two grid points", path.display())));
    }
    if let Some(k) = grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::Data(format!(
            "{}: grid not strictly increasing at column {} ({} then {})",
            path.display(),
            k + 2,
            grid[k],
            grid[k + 1]
        )));
    }
    Ok(CurveTable { grid, grid_from_file, rows, path: path.to_path_buf() })
}

impl CurveTable {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    /// Curves on the trapezoid grid, optionally mapped affinely onto `[0, 1]`.
    pub fn to_dataset(&self, rescale_grid: bool) -> Result<Dataset> {
        let points = if rescale_grid {
            let (a, b) = (self.grid[0], self.grid[self.grid.len() - 1]);
            self.grid.iter().map(|t| (t - a) / (b - a)).collect()
        } else {
            self.grid.clone()
        };
        Dataset::from_rows(Arc::new(Grid::trapezoid(points)?), self.rows.clone())
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes a dataset in the curve CSV layout.
pub fn write_dataset_csv(path: &Path, d: &Dataset) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{}", join(d.grid().points()))?;
    for c in d.curves() {
        writeln!(out, "{}", join(c.values()))?;
    }
    out.flush()?;
    Ok(())
}

/// One row per curve, no grid row.
pub fn write_components_csv(path: &Path, components: &[Curve]) -> Result<()> {
    let mut out = create(path)?;
    for c in components {
        writeln!(out, "{}", join(c.values()))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a headerless square numeric matrix.
pub fn load_matrix_csv(path: &Path) -> Result<nalgebra::DMatrix<f64>> {
    let t = load_curves_csv(path, Layout::RowsAreSubjects, false)?;
    let (r, c) = (t.rows.len(), t.rows[0].len());
    Ok(nalgebra::DMatrix::from_row_iterator(r, c, t.rows.into_iter().flatten()))
}

/// Release metadata written next to every private output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReleaseMetadata {
    pub epsilon: f64,
    pub delta: f64,
    pub k: usize,
    pub m: usize,
    pub sigma: String,
    pub basis: String,
    pub burn_in: usize,
    pub chain_length: usize,
    pub seed: u64,
    pub n: usize,
    pub grid_size: usize,
    pub clip: String,
    pub centered: bool,
}

/// `path` with `.json` appended to its file name.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "1,2,4\n0.1,0.2,0.3\n0.4,0.5,0.6\n");
        let t = load_curves_csv(&p, Layout::RowsAreSubjects, true).unwrap();
        assert_eq!(t.n(), 2);
        assert_eq!(t.grid, vec![1.0, 2.0, 4.0]);
        let d = t.to_dataset(true).unwrap();
        assert_eq!(d.grid().points(), &[0.0, 1.0 / 3.0, 1.0]);
    }

    #[test]
    fn columns_layout_transposes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "0,1,2\n0.5,3,4\n1,5,6\n");
        let t = load_curves_csv(&p, Layout::ColumnsAreSubjects, true).unwrap();
        assert_eq!(t.grid, vec![0.0, 0.5, 1.0]);
        assert_eq!(t.rows, vec![vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]]);
    }

    #[test]
    fn headerless_gets_uniform_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "1,2,3\n");
        let t = load_curves_csv(&p, Layout::RowsAreSubjects, false).unwrap();
        assert!(!t.grid_from_file);
        assert_eq!(t.grid, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("empty.csv", "", "empty"),
            ("ragged.csv", "0,1\n1,2\n3\n", "row 3 has 1 columns"),
            ("text.csv", "0,1\n1,x\n", "row 2, column 2"),
            ("nan.csv", "0,1\n1,2\n3,NaN\n", "row 3, column 2"),
            ("order.csv", "0,1,1\n1,2,3\n", "column 3"),
        ];
        for (name, body, needle) in cases {
            let p = write(&dir, name, body);
            let err = load_curves_csv(&p, Layout::RowsAreSubjects, true).unwrap_err().to_string();
            assert!(err.contains(needle), "{name}: {err}");
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Arc::new(Grid::uniform(4).unwrap());
        let d = Dataset::from_rows(g, vec![vec![0.1, -0.25, 1e-17, 3.0]]).unwrap();
        let p = dir.path().join("d.csv");
        write_dataset_csv(&p, &d).unwrap();
        let back = load_curves_csv(&p, Layout::RowsAreSubjects, true).unwrap().to_dataset(false).unwrap();
        assert_eq!(back.curves()[0].values(), d.curves()[0].values());
        assert_eq!(back.grid().points(), d.grid().points());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("out/c.csv")), PathBuf::from("out/c.csv.json"));
    }
}
