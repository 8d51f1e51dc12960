//! CSV and SVG output.
//!
//! CSV follows RFC 4180 with `.` decimals and floats written with 17
//! significant digits, so values round-trip exactly. SVG plots are
//! self-contained and byte-deterministic for a given input.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::divider::DividerMatrices;
use crate::signal::{SignalError, TimeGrid, Trajectory};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed trajectory CSV: {0}")]
    Format(String),
    #[error("plot panels do not share a time grid")]
    GridMismatch,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExportError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| ExportError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| ExportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn trajectory_csv(traj: &Trajectory) -> Result<String, ExportError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(traj.labels().iter().cloned());
    w.write_record(&header)?;
    for (k, t) in traj.grid().times().enumerate() {
        let mut row = vec![format_float(t)];
        row.extend(traj.values().column(k).iter().map(|&v| format_float(v)));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| ExportError::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Writes a trajectory as CSV: column `t`, then one column per channel label.
pub fn emit_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<(), ExportError> {
    write_file(path, trajectory_csv(traj)?.as_bytes())
}

/// Parses CSV produced by [`trajectory_csv`]. The grid step is taken from the
/// first two time stamps.
pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory, ExportError> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(ExportError::Format("first column must be `t`".into()));
    }
    let labels: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut times = Vec::new();
    let mut columns: Vec<f64> = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != labels.len() + 1 {
            return Err(ExportError::Format(format!(
                "row {} has {} fields, expected {}",
                times.len() + 1,
                record.len(),
                labels.len() + 1
            )));
        }
        let mut parsed = record.iter().map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| ExportError::Format(format!("{f:?}: {e}")))
        });
        times.push(parsed.next().expect("t field")?);
        for v in parsed {
            columns.push(v?);
        }
    }
    let dt = match times.as_slice() {
        [a, b, ..] => b - a,
        // A lone sample has no step; any positive value describes it.
        _ => 1.0,
    };
    let grid = TimeGrid::new(times.first().copied().unwrap_or(0.0), dt, times.len());
    let values = DMatrix::from_column_slice(labels.len(), times.len(), &columns);
    Ok(Trajectory::new(grid, values, labels)?)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory, ExportError> {
    let text = fs::read_to_string(path).map_err(|source| ExportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trajectory_csv(&text)
}

/// Row-major matrix CSV with a header row of column labels; each row starts
/// with its row label.
pub fn matrix_csv(
    m: &DMatrix<f64>,
    row_labels: &[String],
    col_labels: &[String],
) -> Result<String, ExportError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(col_labels.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in row_labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(m.row(i).iter().map(|&v| format_float(v)));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| ExportError::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

pub fn emit_matrix_csv(
    m: &DMatrix<f64>,
    row_labels: &[String],
    col_labels: &[String],
    path: &Path,
) -> Result<(), ExportError> {
    write_file(path, matrix_csv(m, row_labels, col_labels)?.as_bytes())
}

/// Writes every divider matrix of `mats` into `dir` as labelled CSV.
pub fn emit_matrices_csv(mats: &DividerMatrices, dir: &Path) -> Result<(), ExportError> {
    let buses: Vec<String> = (1..=mats.n_buses()).map(|i| format!("bus{i}")).collect();
    let gens: Vec<String> = (1..=mats.n_generators()).map(|g| format!("gen{g}")).collect();
    let square = [
        ("b_bus.csv", mats.b_bus()),
        ("b_gg.csv", mats.b_gg()),
        ("b_bb.csv", mats.b_bb()),
        ("b_bb_pinv.csv", mats.b_bb_pinv()),
    ];
    for (name, m) in square {
        emit_matrix_csv(m, &buses, &buses, &dir.join(name))?;
    }
    emit_matrix_csv(mats.b_bg(), &buses, &gens, &dir.join("b_bg.csv"))?;
    emit_matrix_csv(mats.transfer(), &buses, &gens, &dir.join("transfer.csv"))
}

pub fn emit_text(text: &str, path: &Path) -> Result<(), ExportError> {
    write_file(path, text.as_bytes())
}

/// One stacked panel of a plot.
#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub series: Trajectory,
}

const WIDTH: f64 = 800.0;
const PANEL_HEIGHT: f64 = 260.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 130.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders stacked line-plot panels sharing one time axis.
pub fn render_plot(panels: &[Panel]) -> Result<String, ExportError> {
    if let Some(first) = panels.first() {
        if panels.iter().any(|p| p.series.grid() != first.series.grid()) {
            return Err(ExportError::GridMismatch);
        }
    }
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{height}" fill="white"/>"#);
    for (p, panel) in panels.iter().enumerate() {
        render_panel(&mut svg, panel, p as f64 * PANEL_HEIGHT);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn render_panel(svg: &mut String, panel: &Panel, y0: f64) {
    let traj = &panel.series;
    let grid = traj.grid();
    let (x_min, mut x_max) = (grid.start, grid.start + grid.span());
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let (mut y_min, mut y_max) = traj
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !y_min.is_finite() {
        (y_min, y_max) = (-1.0, 1.0);
    } else if y_max - y_min < 1e-12 {
        let pad = y_min.abs().max(1.0) * 0.1;
        y_min -= pad;
        y_max += pad;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let top = y0 + MARGIN_TOP;
    let sx = |t: f64| MARGIN_LEFT + (t - x_min) / (x_max - x_min) * plot_w;
    let sy = |v: f64| top + (y_max - v) / (y_max - y_min) * plot_h;

    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-weight="bold">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        y0 + 18.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT:.2}" y="{top:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#
    );
    let labels = [
        (MARGIN_LEFT - 6.0, top + 4.0, "end", y_max),
        (MARGIN_LEFT - 6.0, top + plot_h, "end", y_min),
    ];
    for (x, y, anchor, v) in labels {
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{v:.3}</text>"#);
    }
    if y_min < 0.0 && y_max > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#cccccc"/>"##,
            MARGIN_LEFT,
            sy(0.0),
            MARGIN_LEFT + plot_w,
            sy(0.0)
        );
    }
    let axis_y = top + plot_h + 16.0;
    let _ = writeln!(svg, r#"<text x="{MARGIN_LEFT:.2}" y="{axis_y:.2}" text-anchor="middle">{x_min:.1}</text>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{axis_y:.2}" text-anchor="middle">{x_max:.1}</text>"#,
        MARGIN_LEFT + plot_w
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time (s)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        axis_y + 14.0
    );

    for (ch, label) in traj.labels().iter().enumerate() {
        let color = PALETTE[ch % PALETTE.len()];
        let mut points = String::new();
        for (k, t) in grid.times().enumerate() {
            if k > 0 {
                points.push(' ');
            }
            let _ = write!(points, "{:.2},{:.2}", sx(t), sy(traj.values()[(ch, k)]));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{points}"/>"#
        );
        let ly = top + 14.0 + ch as f64 * 16.0;
        let lx = WIDTH - MARGIN_RIGHT + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 24.0, escape(label));
    }
}

pub fn emit_plot(panels: &[Panel], path: &Path) -> Result<(), ExportError> {
    write_file(path, render_plot(panels)?.as_bytes())
}
