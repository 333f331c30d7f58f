//! Static SVG plots from a finished output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{HarnessError, IoContext, Result};
use crate::experiment::{read_metrics, METRICS_FILE};

const PALETTE: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        return Err(HarnessError::Plot(format!("{title}: nothing to plot")));
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart.draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(|v| v.parse().ok()).collect());
    }
    Ok((header, rows))
}

/// Renders every plot the directory has data for and returns the written
/// files:
///
/// - `accuracy_vs_n.svg`: mean accuracy over seeds per method (and gamma);
/// - `trace_<cell>.svg`: one per UICL/UFT trace, objective and accuracy;
/// - `estimator_curves.svg`: when a `compare-estimators` report is present.
pub fn render_report(dir: &Path) -> Result<Vec<PathBuf>> {
    let out = dir.join("report");
    std::fs::create_dir_all(&out).at(&out)?;
    let mut written = Vec::new();

    let metrics = dir.join(METRICS_FILE);
    if metrics.exists() {
        let rows = read_metrics(&metrics)?;
        let mut groups: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        for r in rows.iter().filter(|r| !r.failed()) {
            if let Some(acc) = r.accuracy {
                let name = match r.gamma {
                    Some(g) => format!("{} gamma={g}", r.method.name()),
                    None => r.method.name().to_string(),
                };
                groups.entry(name).or_default().entry(r.context_size).or_default().push(acc);
            }
        }
        if !groups.is_empty() {
            let series: Vec<Series> = groups
                .into_iter()
                .map(|(name, by_n)| Series {
                    name,
                    points: by_n.into_iter().map(|(n, a)| (n as f64, a.iter().sum::<f64>() / a.len() as f64)).collect(),
                })
                .collect();
            let path = out.join("accuracy_vs_n.svg");
            line_chart(&path, "Accuracy vs context size", "N", "accuracy (mean over seeds)", &series)?;
            written.push(path);
        }
    }

    let traces = dir.join("traces");
    if traces.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&traces)
            .at(&traces)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        entries.sort();
        for trace in entries {
            let (header, rows) = read_columns(&trace)?;
            let series: Vec<Series> = ["objective", "accuracy"]
                .iter()
                .filter_map(|col| {
                    let j = header.iter().position(|h| h == col)?;
                    let points: Vec<(f64, f64)> =
                        rows.iter().filter_map(|r| Some((r[0]?, r.get(j).copied().flatten()?))).collect();
                    (!points.is_empty()).then(|| Series { name: col.to_string(), points })
                })
                .collect();
            if series.is_empty() {
                continue;
            }
            let stem = trace.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let path = out.join(format!("trace_{stem}.svg"));
            line_chart(&path, &stem, &header[0], "value", &series)?;
            written.push(path);
        }
    }

    let curves = dir.join("curves.csv");
    if curves.exists() {
        let (header, rows) = read_columns(&curves)?;
        let series: Vec<Series> = (1..header.len())
            .map(|j| Series {
                name: header[j].clone(),
                points: rows.iter().filter_map(|r| Some((r[0]?, r[j]?))).collect(),
            })
            .collect();
        let path = out.join("estimator_curves.svg");
        line_chart(&path, "Minibatch objective by estimator", "iteration", "objective (mean over seeds)", &series)?;
        written.push(path);
    }
    Ok(written)
}
