//! Static SVG charts of training records and evaluation reports.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use relite_core::training::RecordLine;

use crate::stages::EvalFile;

type PlotResult<T> = Result<T, Box<dyn std::error::Error>>;

const COLORS: [RGBColor; 4] = [RGBColor(31, 119, 180), RGBColor(214, 39, 40), RGBColor(44, 160, 44), RGBColor(148, 103, 189)];

fn read_records(path: &Path) -> PlotResult<Vec<RecordLine>> {
    let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn bounds(series: &[(String, Vec<(f64, f64)>)]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    (x0, x1, y0, y1)
}

fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)], log_y: bool) -> PlotResult<()> {
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let (x0, x1, y0, y1) = bounds(series);
    let mut chart = ChartBuilder::on(&root);
    chart.caption(title, ("sans-serif", 22)).margin(12).x_label_area_size(40).y_label_area_size(70);
    if log_y {
        let y0 = y0.max(1e-6);
        let mut c = chart.build_cartesian_2d(x0..x1, (y0..y1.max(y0 * 10.0)).log_scale())?;
        c.configure_mesh().x_desc(x_label).y_desc(y_label).draw()?;
        for (i, (name, s)) in series.iter().enumerate() {
            let col = COLORS[i % COLORS.len()];
            c.draw_series(LineSeries::new(s.iter().map(|&(x, y)| (x, y.max(y0))), col))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], col));
        }
        c.configure_series_labels().border_style(BLACK).background_style(WHITE).draw()?;
    } else {
        let pad = 0.05 * (y1 - y0);
        let mut c = chart.build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))?;
        c.configure_mesh().x_desc(x_label).y_desc(y_label).draw()?;
        for (i, (name, s)) in series.iter().enumerate() {
            let col = COLORS[i % COLORS.len()];
            c.draw_series(LineSeries::new(s.iter().copied(), col))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], col));
            c.draw_series(s.iter().map(|&p| Circle::new(p, 3, col.filled())))?;
        }
        c.configure_series_labels().border_style(BLACK).background_style(WHITE).draw()?;
    }
    root.present()?;
    Ok(())
}

/// `loss.svg` (total loss per step, log scale) and `similarity.svg`
/// (snapshot SP/DP cosine similarity per step) for every run.
pub fn training_plots(logs: &[(String, PathBuf)], dir: &Path) -> PlotResult<Vec<PathBuf>> {
    let mut loss = Vec::new();
    let mut sim = Vec::new();
    for (name, path) in logs {
        let recs = read_records(path)?;
        let mut l = Vec::new();
        let (mut sp, mut dp) = (Vec::new(), Vec::new());
        for r in recs {
            match r {
                RecordLine::Step(s) => l.push((s.step as f64, s.total)),
                RecordLine::Eval(e) => {
                    if e.sp_cs.is_finite() {
                        sp.push((e.step as f64, e.sp_cs));
                    }
                    if e.dp_cs.is_finite() {
                        dp.push((e.step as f64, e.dp_cs));
                    }
                }
            }
        }
        loss.push((name.clone(), l));
        sim.push((format!("{name} SP CS"), sp));
        sim.push((format!("{name} DP CS"), dp));
    }
    let loss_path = dir.join("loss.svg");
    line_chart(&loss_path, "total training loss", "step", "loss", &loss, true)?;
    let mut out = vec![loss_path];
    if sim.iter().any(|(_, s)| !s.is_empty()) {
        let p = dir.join("similarity.svg");
        line_chart(&p, "descriptor cosine similarity during training", "step", "CS", &sim, false)?;
        out.push(p);
    }
    Ok(out)
}

/// `repeatability_by_condition.svg`: held-out repeatability per illumination condition.
pub fn per_condition_plot(file: &EvalFile, dir: &Path) -> PlotResult<PathBuf> {
    let series: Vec<(String, Vec<(f64, f64)>)> = file
        .models
        .iter()
        .map(|m| {
            let pts = m.report.per_condition_repeatability.iter().enumerate().map(|(i, &r)| (i as f64, r)).collect();
            (m.name.clone(), pts)
        })
        .collect();
    let p = dir.join("repeatability_by_condition.svg");
    let ids = file.condition_ids.join(", ");
    line_chart(&p, "held-out repeatability by illumination condition", &format!("condition index ({ids})"), "repeatability", &series, false)?;
    Ok(p)
}
