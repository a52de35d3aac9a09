//! Dependency-free SVG emission for the standard experiment figures.
//!
//! Curves come from CSV artifacts; the density heatmap reads a grid-measure
//! JSON file. The heatmap records its color-map bounds as `data-min` /
//! `data-max` attributes on the root element, pinned to the data extremes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    DecayCurve,
    LCurve,
    StabilityRatio,
    DensityHeatmap,
}

impl std::str::FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "decayCurve" | "decay-curve" => Ok(PlotKind::DecayCurve),
            "lCurve" | "l-curve" => Ok(PlotKind::LCurve),
            "stabilityRatio" | "stability-ratio" => Ok(PlotKind::StabilityRatio),
            "densityHeatmap" | "density-heatmap" => Ok(PlotKind::DensityHeatmap),
            other => Err(CliError::config(format!("unknown plot kind '{other}'"))),
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Render the figure and return the path written.
pub fn emit_plot(input: &Path, kind: PlotKind, out: &Path) -> CliResult<PathBuf> {
    let svg = match kind {
        PlotKind::DensityHeatmap => heatmap_svg(input)?,
        _ => curve_svg(input, kind)?,
    };
    io::write_atomic(out, svg.as_bytes())?;
    Ok(out.to_path_buf())
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_csv(path: &Path) -> CliResult<Csv> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::config("empty CSV"))?
        .split(',')
        .map(|c| c.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        if row.len() == header.len() {
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(CliError::config(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(Csv { header, rows })
}

fn column(csv: &Csv, names: &[&str]) -> CliResult<usize> {
    for name in names {
        if let Some(i) = csv.header.iter().position(|h| h == name) {
            return Ok(i);
        }
    }
    Err(CliError::config(format!(
        "missing column: expected one of [{}], found [{}]",
        names.join(", "),
        csv.header.join(", ")
    )))
}

fn curve_svg(input: &Path, kind: PlotKind) -> CliResult<String> {
    let csv = read_csv(input)?;
    let (xs, ys, x_label, y_label, log_x, log_y) = match kind {
        PlotKind::DecayCurve => {
            let xi = column(&csv, &["t", "time"])?;
            let yi = column(&csv, &["kl"])?;
            let pts: Vec<(f64, f64)> = csv
                .rows
                .iter()
                .map(|r| (r[xi], r[yi]))
                .filter(|(x, y)| x.is_finite() && *y > 0.0)
                .collect();
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            (xs, ys, "t", "KL", false, true)
        }
        PlotKind::LCurve => {
            let xi = column(&csv, &["alpha"])?;
            let yi = column(&csv, &["error_w2", "error"])?;
            let pts: Vec<(f64, f64)> = csv
                .rows
                .iter()
                .map(|r| (r[xi], r[yi]))
                .filter(|(x, y)| *x > 0.0 && *y > 0.0)
                .collect();
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            (xs, ys, "alpha", "W2 error", true, true)
        }
        PlotKind::StabilityRatio => {
            let xi = column(&csv, &["perturbation"])?;
            let ii = column(&csv, &["input_distance"])?;
            let oi = column(&csv, &["output_distance"])?;
            let pts: Vec<(f64, f64)> = csv
                .rows
                .iter()
                .filter(|r| r[ii] > 0.0)
                .map(|r| (r[xi], r[oi] / r[ii]))
                .collect();
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            (xs, ys, "perturbation", "output/input", false, false)
        }
        PlotKind::DensityHeatmap => unreachable!(),
    };
    if xs.is_empty() {
        return Err(CliError::config("no plottable points after filtering"));
    }

    let tx = |v: f64| if log_x { v.log10() } else { v };
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let (x_min, x_max) = bounds(xs.iter().map(|&v| tx(v)));
    let (y_min, y_max) = bounds(ys.iter().map(|&v| ty(v)));
    let sx = |v: f64| {
        MARGIN + (tx(v) - x_min) / (x_max - x_min).max(1e-300) * (WIDTH - 2.0 * MARGIN)
    };
    let sy = |v: f64| {
        HEIGHT - MARGIN - (ty(v) - y_min) / (y_max - y_min).max(1e-300) * (HEIGHT - 2.0 * MARGIN)
    };

    let mut svg = svg_open(None);
    axes(&mut svg, x_label, y_label, log_x, log_y, x_min, x_max, y_min, y_max);
    let mut points = String::new();
    for (x, y) in xs.iter().zip(&ys) {
        let _ = write!(points, "{:.2},{:.2} ", sx(*x), sy(*y));
    }
    let _ = writeln!(
        svg,
        "  <polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"{}\"/>",
        points.trim_end()
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn heatmap_svg(input: &Path) -> CliResult<String> {
    let measure = io::read_measure(input)?;
    let grid = measure
        .as_grid()
        .ok_or_else(|| CliError::config("density heatmaps need a grid measure"))?;
    if grid.dim() > 2 {
        return Err(CliError::config("heatmaps support 1D and 2D grids"));
    }
    let (v_min, v_max) = bounds(grid.density().iter().copied());
    let mut svg = svg_open(Some((v_min, v_max)));
    let (nx, ny) = if grid.dim() == 1 {
        (grid.shape()[0], 1)
    } else {
        (grid.shape()[0], grid.shape()[1])
    };
    let cw = (WIDTH - 2.0 * MARGIN) / nx as f64;
    let ch = (HEIGHT - 2.0 * MARGIN) / ny as f64;
    for i in 0..nx {
        for j in 0..ny {
            let flat = if grid.dim() == 1 { i } else { i * ny + j };
            let t = if v_max > v_min {
                (grid.density()[flat] - v_min) / (v_max - v_min)
            } else {
                0.0
            };
            let _ = writeln!(
                svg,
                "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                MARGIN + i as f64 * cw,
                HEIGHT - MARGIN - (j + 1) as f64 * ch,
                cw + 0.5,
                ch + 0.5,
                color_ramp(t)
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn svg_open(data_bounds: Option<(f64, f64)>) -> String {
    let bounds_attr = data_bounds
        .map(|(lo, hi)| format!(" data-min=\"{lo}\" data-max=\"{hi}\""))
        .unwrap_or_default();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\"{bounds_attr}>\n  \
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    )
}

#[allow(clippy::too_many_arguments)]
fn axes(
    svg: &mut String,
    x_label: &str,
    y_label: &str,
    log_x: bool,
    log_y: bool,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
) {
    let _ = writeln!(
        svg,
        "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n  \
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN,
    );
    let fmt_tick = |v: f64, log: bool| {
        if log {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3}")
        }
    };
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" font-size=\"13\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - MARGIN / 3.0,
        x_label
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" font-size=\"13\" transform=\"rotate(-90 {} {})\">{}</text>",
        MARGIN / 3.0,
        HEIGHT / 2.0,
        MARGIN / 3.0,
        HEIGHT / 2.0,
        y_label
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>\n  \
         <text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>",
        MARGIN,
        HEIGHT - MARGIN + 16.0,
        fmt_tick(x_min, log_x),
        WIDTH - MARGIN - 30.0,
        HEIGHT - MARGIN + 16.0,
        fmt_tick(x_max, log_x),
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>\n  \
         <text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>",
        8.0,
        HEIGHT - MARGIN,
        fmt_tick(y_min, log_y),
        8.0,
        MARGIN + 6.0,
        fmt_tick(y_max, log_y),
    );
}

fn bounds<I: Iterator<Item = f64>>(values: I) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Two-segment blue→yellow→red ramp.
fn color_ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let s = t * 2.0;
        (
            (30.0 + s * 200.0) as u8,
            (60.0 + s * 170.0) as u8,
            (160.0 - s * 110.0) as u8,
        )
    } else {
        let s = (t - 0.5) * 2.0;
        (
            (230.0 + s * 25.0) as u8,
            (230.0 - s * 170.0) as u8,
            (50.0 - s * 20.0) as u8,
        )
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_curve_is_straight_in_log_space() {
        // KL(t) = 2e^{−2t} samples: the log-scale polyline must be affine
        let dir = std::env::temp_dir().join("distinv_plot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("trace.csv");
        let mut csv = String::from("t,kl,w2\n");
        for k in 0..20 {
            let t = k as f64 * 0.1;
            csv.push_str(&format!("{t},{},\n", 2.0 * (-2.0 * t).exp()));
        }
        std::fs::write(&csv_path, csv).unwrap();
        let out = dir.join("decay.svg");
        emit_plot(&csv_path, PlotKind::DecayCurve, &out).unwrap();
        let svg = std::fs::read_to_string(&out).unwrap();
        assert!(svg.starts_with("<svg"));
        let points: Vec<(f64, f64)> = svg
            .lines()
            .find(|l| l.contains("polyline"))
            .unwrap()
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap()
            .split_whitespace()
            .map(|p| {
                let mut it = p.split(',');
                (
                    it.next().unwrap().parse().unwrap(),
                    it.next().unwrap().parse().unwrap(),
                )
            })
            .collect();
        // collinearity of consecutive screen points
        let slope = (points[1].1 - points[0].1) / (points[1].0 - points[0].0);
        for w in points.windows(2) {
            let s = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            assert!((s - slope).abs() < 0.05, "slope drifted: {s} vs {slope}");
        }
    }

    #[test]
    fn empty_rows_is_schema_error() {
        let dir = std::env::temp_dir().join("distinv_plot_test_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("empty.csv");
        std::fs::write(&csv_path, "t,kl,w2\n").unwrap();
        let err = emit_plot(&csv_path, PlotKind::DecayCurve, &dir.join("x.svg")).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn missing_column_lists_expectation() {
        let dir = std::env::temp_dir().join("distinv_plot_test_cols");
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("bad.csv");
        std::fs::write(&csv_path, "a,b\n1,2\n").unwrap();
        let err = emit_plot(&csv_path, PlotKind::DecayCurve, &dir.join("x.svg")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing column"), "message was: {msg}");
    }

    #[test]
    fn heatmap_bounds_match_data() {
        let dir = std::env::temp_dir().join("distinv_plot_test_heat");
        std::fs::create_dir_all(&dir).unwrap();
        let grid = distinv_core::measures::GridMeasure::normalized(
            vec![0.0],
            vec![1.0],
            vec![4],
            vec![1.0, 3.0, 2.0, 0.5],
        )
        .unwrap();
        let path = dir.join("grid.json");
        let text =
            io::measure_to_json(&distinv_core::measures::Measure::Grid(grid.clone())).unwrap();
        std::fs::write(&path, text).unwrap();
        let out = dir.join("heat.svg");
        emit_plot(&path, PlotKind::DensityHeatmap, &out).unwrap();
        let svg = std::fs::read_to_string(&out).unwrap();
        let lo = grid.density().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = grid.density().iter().cloned().fold(0.0f64, f64::max);
        assert!(svg.contains(&format!("data-min=\"{lo}\"")));
        assert!(svg.contains(&format!("data-max=\"{hi}\"")));
    }
}
