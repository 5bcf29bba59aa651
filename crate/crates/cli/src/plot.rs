//! SVG charts from `trace.csv` files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{CliError, CliResult};
use crate::runner::RoundRow;

pub struct Trace {
    pub label: String,
    pub rows: Vec<RoundRow>,
}

pub fn read_trace(path: &Path) -> CliResult<Trace> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<RoundRow>, _>>()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(CliError::config(format!("{}: trace has no rows", path.display())));
    }
    let dir = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let first = &rows[0];
    let label = if dir.is_empty() {
        format!("{} M={}", first.protocol, first.clients)
    } else {
        format!("{} M={} ({dir})", first.protocol, first.clients)
    };
    Ok(Trace { label, rows })
}

fn draw_err<E: std::fmt::Debug>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::runtime(format!("{}: {e:?}", path.display()))
}

fn accuracy_chart(path: &Path, traces: &[Trace]) -> CliResult<()> {
    let err = draw_err(path);
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let rounds = traces.iter().map(|t| t.rows.len()).max().unwrap_or(1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption("test accuracy per round", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..rounds.max(1.0), 0f64..1f64)
        .map_err(&err)?;
    chart.configure_mesh().x_desc("round").y_desc("accuracy").draw().map_err(&err)?;
    for (i, t) in traces.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                t.rows.iter().map(|r| (r.round as f64 + 1.0, r.eval_accuracy)),
                color.stroke_width(2),
            ))
            .map_err(&err)?
            .label(t.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

fn latency_chart(path: &Path, traces: &[Trace]) -> CliResult<()> {
    let err = draw_err(path);
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let totals: Vec<f64> = traces.iter().map(|t| t.rows.last().map_or(0.0, |r| r.cumulative_latency_s)).collect();
    let top = totals.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE) * 1.1;
    let n = traces.len();
    let mut chart = ChartBuilder::on(&root)
        .caption("total simulated latency", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..n as f64, 0f64..top)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(0)
        .y_desc("seconds")
        .draw()
        .map_err(&err)?;
    for (i, (t, &v)) in traces.iter().zip(&totals).enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(std::iter::once(Rectangle::new(
                [(i as f64 + 0.15, 0.0), (i as f64 + 0.85, v)],
                color.filled(),
            )))
            .map_err(&err)?
            .label(t.label.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 15, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

/// Mean downlink bytes per round against client count, one series per
/// protocol.
pub fn downlink_by_clients(traces: &[Trace]) -> BTreeMap<String, Vec<(usize, f64)>> {
    let mut series: BTreeMap<String, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for t in traces {
        let first = &t.rows[0];
        let mean = t.rows.iter().map(|r| r.downlink_bytes as f64).sum::<f64>() / t.rows.len() as f64;
        let e = series.entry(first.protocol.clone()).or_default().entry(first.clients).or_default();
        e.0 += mean;
        e.1 += 1;
    }
    series
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(|(m, (s, c))| (m, s / c as f64)).collect()))
        .collect()
}

fn bytes_chart(path: &Path, traces: &[Trace]) -> CliResult<()> {
    let err = draw_err(path);
    let series = downlink_by_clients(traces);
    let max_m = series.values().flatten().map(|p| p.0).max().unwrap_or(1) as f64;
    let top = series.values().flatten().map(|p| p.1).fold(0.0, f64::max).max(1.0) * 1.1;
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("downlink bytes per round", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(70)
        .build_cartesian_2d(0f64..max_m + 1.0, 0f64..top)
        .map_err(&err)?;
    chart.configure_mesh().x_desc("clients").y_desc("bytes").draw().map_err(&err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().map(|&(m, b)| (m as f64, b)), color.stroke_width(2)))
            .map_err(&err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart
            .draw_series(pts.iter().map(|&(m, b)| Circle::new((m as f64, b), 3, color.filled())))
            .map_err(&err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

/// Writes `accuracy.svg` and `latency.svg`, plus `bytes_vs_clients.svg` when
/// the traces cover more than one client count. Returns the files written.
pub fn plot(traces: &[PathBuf], out: &Path) -> CliResult<Vec<PathBuf>> {
    if traces.is_empty() {
        return Err(CliError::config("plot needs at least one trace"));
    }
    let loaded = traces.iter().map(|p| read_trace(p)).collect::<CliResult<Vec<_>>>()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut written = vec![out.join("accuracy.svg"), out.join("latency.svg")];
    accuracy_chart(&written[0], &loaded)?;
    latency_chart(&written[1], &loaded)?;
    let mut counts: Vec<usize> = loaded.iter().map(|t| t.rows[0].clients).collect();
    counts.sort_unstable();
    counts.dedup();
    if counts.len() > 1 {
        let p = out.join("bytes_vs_clients.svg");
        bytes_chart(&p, &loaded)?;
        written.push(p);
    }
    Ok(written)
}
