//! Run metrics: CSV export with a fixed column order and a small
//! self-contained SVG line-chart emitter for eyeballing reward dynamics.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("plot needs at least one row")]
    Empty,
    #[error("smoothing window must be >= 1")]
    BadWindow,
}

/// One logged training step. `wall_ms` defaults to 0 so exported files stay
/// byte-identical across runs; pass `--wall-clock` style options upstream to
/// record real timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub stage: String,
    pub step: u64,
    pub mean_r_base: f64,
    pub mean_r_total: f64,
    pub dsu_rate: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn new(stage: &str, step: u64) -> Self {
        Self {
            stage: stage.to_string(),
            step,
            mean_r_base: 0.0,
            mean_r_total: 0.0,
            dsu_rate: 0.0,
            kl: 0.0,
            grad_norm: 0.0,
            wall_ms: 0,
        }
    }
}

/// Write rows to a CSV file with a stable header.
pub fn export_metrics(rows: &[MetricsRow], path: &Path) -> Result<(), MetricsError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read rows back from a CSV file produced by [`export_metrics`].
pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

/// Centered moving average with shrinking edge windows; `window = 1` is the
/// identity.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Render one metric column as an SVG line chart and write it to `path`.
pub fn plot_emit(
    rows: &[MetricsRow],
    select: fn(&MetricsRow) -> f64,
    title: &str,
    window: usize,
    path: &Path,
) -> Result<(), MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    if window == 0 {
        return Err(MetricsError::BadWindow);
    }
    let raw: Vec<f64> = rows.iter().map(select).collect();
    let values = smooth(&raw, window);
    let (width, height, pad) = (640.0, 360.0, 40.0);
    let y_min = values.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let y_max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(y_min + 1e-9);
    let x_of = |i: usize| {
        if values.len() == 1 {
            width / 2.0
        } else {
            pad + (width - 2.0 * pad) * i as f64 / (values.len() - 1) as f64
        }
    };
    let y_of = |v: f64| height - pad - (height - 2.0 * pad) * (v - y_min) / (y_max - y_min);
    let points: Vec<String> =
        values.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", x_of(i), y_of(v))).collect();
    let svg = format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"24\" text-anchor=\"middle\" font-family=\"monospace\" ",
            "font-size=\"14\">{title}</text>\n",
            "<line x1=\"{pad}\" y1=\"{ybase}\" x2=\"{xend}\" y2=\"{ybase}\" stroke=\"black\"/>\n",
            "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{ybase}\" stroke=\"black\"/>\n",
            "<text x=\"8\" y=\"{pad}\" font-family=\"monospace\" font-size=\"10\">{ymax:.3}</text>\n",
            "<text x=\"8\" y=\"{ybase}\" font-family=\"monospace\" font-size=\"10\">{ymin:.3}</text>\n",
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{pts}\"/>\n",
            "</svg>\n"
        ),
        w = width,
        h = height,
        tx = width / 2.0,
        title = title,
        pad = pad,
        ybase = height - pad,
        xend = width - pad,
        ymax = y_max,
        ymin = y_min,
        pts = points.join(" "),
    );
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row(step: u64, r: f64) -> MetricsRow {
        MetricsRow { mean_r_base: r, mean_r_total: r, ..MetricsRow::new("rl", step) }
    }

    #[test]
    fn three_rows_make_four_csv_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        export_metrics(&[row(0, 0.1), row(1, 0.2), row(2, 0.3)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "stage,step,mean_r_base,mean_r_total,dsu_rate,kl,grad_norm,wall_ms"
        );
    }

    #[test]
    fn csv_round_trip_preserves_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![row(0, 0.125), row(7, 0.75)];
        export_metrics(&rows, &path).unwrap();
        assert_eq!(load_metrics(&path).unwrap(), rows);
    }

    #[test]
    fn window_one_smoothing_is_identity() {
        let values = [0.3, 0.9, 0.1, 0.5];
        assert_eq!(smooth(&values, 1), values.to_vec());
    }

    #[test]
    fn window_three_averages_neighbors() {
        let smoothed = smooth(&[0.0, 3.0, 6.0], 3);
        assert_relative_eq!(smoothed[0], 1.5);
        assert_relative_eq!(smoothed[1], 3.0);
        assert_relative_eq!(smoothed[2], 4.5);
    }

    #[test]
    fn plot_writes_well_formed_svg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.svg");
        let rows: Vec<MetricsRow> = (0..20).map(|i| row(i, i as f64 / 20.0)).collect();
        plot_emit(&rows, |r| r.mean_r_total, "mean total reward", 3, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn plot_rejects_empty_input_and_zero_window() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            plot_emit(&[], |r| r.kl, "t", 1, &dir.path().join("a.svg")),
            Err(MetricsError::Empty)
        ));
        assert!(matches!(
            plot_emit(&[row(0, 0.0)], |r| r.kl, "t", 0, &dir.path().join("b.svg")),
            Err(MetricsError::BadWindow)
        ));
    }
}
