//! Measure and matrix file formats, plus atomic writes.
//!
//! - particle clouds: CSV with header `x1,...,xd,weight`
//! - Gaussians: JSON `{"mean": [...], "cov": [[...]]}`
//! - grids: JSON `{"lower": [...], "upper": [...], "shape": [...],
//!   "density": [...]}` with a flat row-major density array
//! - matrices: JSON nested arrays or CSV rows

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use distinv_core::measures::{GaussianMeasure, GridMeasure, Measure, ParticleMeasure};

use crate::error::{CliError, CliResult};

/// Write bytes through a temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp_path)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp_path, path)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct GaussianJson {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridJson {
    lower: Vec<f64>,
    upper: Vec<f64>,
    shape: Vec<usize>,
    density: Vec<f64>,
}

/// Load a measure, dispatching on extension: `.csv` is a particle cloud,
/// `.json` is a Gaussian or a grid depending on its fields.
pub fn read_measure(path: &Path) -> CliResult<Measure> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    match ext.as_str() {
        "csv" => Ok(Measure::Particles(read_particles_csv(path)?)),
        "json" => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            read_measure_json(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
        }
        other => Err(CliError::config(format!(
            "unknown measure extension '{other}' for {}",
            path.display()
        ))),
    }
}

fn read_measure_json(text: &str) -> Result<Measure, String> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    if obj.contains_key("mean") && obj.contains_key("cov") {
        let g: GaussianJson =
            serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
        Ok(Measure::Gaussian(gaussian_from_parts(&g.mean, &g.cov).map_err(|e| e.to_string())?))
    } else if obj.contains_key("density") {
        let g: GridJson = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
        let grid = GridMeasure::new(g.lower, g.upper, g.shape, g.density)
            .map_err(|e| e.to_string())?;
        Ok(Measure::Grid(grid))
    } else {
        Err("JSON measure must carry mean/cov (Gaussian) or lower/upper/shape/density (grid)"
            .into())
    }
}

pub fn gaussian_from_parts(
    mean: &[f64],
    cov: &[Vec<f64>],
) -> distinv_core::Result<GaussianMeasure> {
    let d = mean.len();
    let mut m = DMatrix::zeros(d, d);
    for (i, row) in cov.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i < d && j < d {
                m[(i, j)] = v;
            }
        }
    }
    GaussianMeasure::new(DVector::from_row_slice(mean), m)
}

pub fn read_particles_csv(path: &Path) -> CliResult<ParticleMeasure> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    parse_particles_csv(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn parse_particles_csv(text: &str) -> Result<ParticleMeasure, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty CSV")?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d = cols.len().saturating_sub(1);
    if d == 0 || cols.last() != Some(&"weight") {
        return Err("header must be x1,...,xd,weight".into());
    }
    for (k, c) in cols[..d].iter().enumerate() {
        if *c != format!("x{}", k + 1) {
            return Err(format!("column {} must be x{}, found '{c}'", k + 1, k + 1));
        }
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(format!("row {}: expected {} fields", lineno + 2, d + 1));
        }
        for f in &fields[..d] {
            points.push(
                f.parse::<f64>()
                    .map_err(|e| format!("row {}: {e}", lineno + 2))?,
            );
        }
        weights.push(
            fields[d]
                .parse::<f64>()
                .map_err(|e| format!("row {}: {e}", lineno + 2))?,
        );
    }
    let n = weights.len();
    if n == 0 {
        return Err("no data rows".into());
    }
    let points = DMatrix::from_row_slice(n, d, &points);
    ParticleMeasure::normalized(points, DVector::from_row_slice(&weights))
        .map_err(|e| e.to_string())
}

pub fn particles_to_csv(m: &ParticleMeasure) -> String {
    let mut out = String::new();
    for k in 0..m.dim() {
        out.push_str(&format!("x{},", k + 1));
    }
    out.push_str("weight\n");
    for i in 0..m.len() {
        for j in 0..m.dim() {
            out.push_str(&format!("{},", m.points()[(i, j)]));
        }
        out.push_str(&format!("{}\n", m.weights()[i]));
    }
    out
}

pub fn measure_to_json(m: &Measure) -> CliResult<String> {
    let value = match m {
        Measure::Gaussian(g) => serde_json::to_value(GaussianJson {
            mean: g.mean().iter().copied().collect(),
            cov: (0..g.dim())
                .map(|i| (0..g.dim()).map(|j| g.cov()[(i, j)]).collect())
                .collect(),
        })?,
        Measure::Grid(g) => serde_json::to_value(GridJson {
            lower: g.lower().to_vec(),
            upper: g.upper().to_vec(),
            shape: g.shape().to_vec(),
            density: g.density().to_vec(),
        })?,
        Measure::Particles(_) => {
            return Err(CliError::config(
                "particle measures are written as CSV, not JSON",
            ))
        }
    };
    Ok(format!("{:#}\n", value))
}

/// Persist a measure next to its natural format: CSV for particles,
/// JSON otherwise. Returns the path actually written.
pub fn write_measure(path: &Path, m: &Measure) -> CliResult<std::path::PathBuf> {
    let path = match m {
        Measure::Particles(_) => path.with_extension("csv"),
        _ => path.with_extension("json"),
    };
    match m {
        Measure::Particles(p) => write_atomic(&path, particles_to_csv(p).as_bytes())?,
        other => write_atomic(&path, measure_to_json(other)?.as_bytes())?,
    }
    Ok(path)
}

/// Matrix from a JSON nested array or CSV rows.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    if ext == "json" {
        let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        matrix_from_rows(&rows).map_err(CliError::Config)
    } else {
        let mut rows = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row: Result<Vec<f64>, _> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect();
            rows.push(row.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?);
        }
        matrix_from_rows(&rows).map_err(CliError::Config)
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    if n == 0 {
        return Err("matrix has no rows".into());
    }
    let m = rows[0].len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err("matrix rows must be nonempty and equal length".into());
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err("matrix entries must be finite".into());
    }
    Ok(DMatrix::from_row_slice(n, m, &flat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn particle_csv_round_trip() {
        let m = ParticleMeasure::from_points_1d(&[0.5, -1.25], &[0.25, 0.75]).unwrap();
        let text = particles_to_csv(&m);
        assert!(text.starts_with("x1,weight\n"));
        let back = parse_particles_csv(&text).unwrap();
        assert_eq!(back.points(), m.points());
        assert_eq!(back.weights(), m.weights());
    }

    #[test]
    fn particle_csv_rejects_bad_header() {
        assert!(parse_particles_csv("a,b\n1,2\n").is_err());
        assert!(parse_particles_csv("x1\n1\n").is_err());
        assert!(parse_particles_csv("").is_err());
    }

    #[test]
    fn gaussian_json_round_trip() {
        let g = Measure::Gaussian(
            gaussian_from_parts(&[1.0, -2.0], &[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(),
        );
        let text = measure_to_json(&g).unwrap();
        let back = read_measure_json(&text).unwrap();
        let back = back.as_gaussian().unwrap();
        assert_eq!(back.mean()[1], -2.0);
        assert_eq!(back.cov()[(0, 1)], 0.5);
    }

    #[test]
    fn grid_json_round_trip() {
        let grid = GridMeasure::normalized(vec![0.0], vec![1.0], vec![4], vec![1.0, 2.0, 3.0, 2.0])
            .unwrap();
        let text = measure_to_json(&Measure::Grid(grid.clone())).unwrap();
        let back = read_measure_json(&text).unwrap();
        assert_eq!(back.as_grid().unwrap().density(), grid.density());
    }

    #[test]
    fn matrix_rows_validated() {
        assert!(matrix_from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(matrix_from_rows(&[]).is_err());
        assert!(matrix_from_rows(&[vec![f64::NAN]]).is_err());
        let m = matrix_from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
    }
}
