use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use plotters::prelude::*;

use ferl::experiment::{Report, COMPARISON_METRICS};

const SIZE: (u32, u32) = (800, 500);
const BAR_COLORS: [RGBColor; 2] = [RGBColor(31, 119, 180), RGBColor(255, 127, 14)];

/// A named bar with its standard error.
struct Bar {
    label: String,
    mean: f64,
    se: f64,
}

fn summary(report: &Report) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let col = |name: &str| report.summary_column(name).ok_or_else(|| anyhow!("report has no summary column {name:?}"));
    Ok((col(report.summary_columns[0].as_str())?, col("mean")?, col("se")?))
}

/// Chooses the chart from the report kind: a mean curve with error bars
/// for trace-count sweeps, bars with error whiskers otherwise.
pub fn plot_report(report_path: &Path, out: &Path) -> Result<()> {
    let report = Report::load(report_path).with_context(|| format!("read report {}", report_path.display()))?;
    let kind = report.meta_value("kind").ok_or_else(|| anyhow!("report has no kind"))?.to_string();
    let (keys, mean, se) = summary(&report)?;
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    match kind.as_str() {
        "feature_sweep" => {
            let title = format!("{} feature", report.meta_value("feature").unwrap_or("?"));
            sweep_chart(&root, &title, &keys, &mean, &se)?;
        }
        "comparison" => {
            let bar = |code: usize, label: &str| -> Result<Bar> {
                let i = keys
                    .iter()
                    .position(|&k| k == code as f64)
                    .ok_or_else(|| anyhow!("report has no {} row", COMPARISON_METRICS[code]))?;
                Ok(Bar { label: label.into(), mean: mean[i], se: se[i] })
            };
            let (left, right) = root.split_horizontally(SIZE.0 / 2);
            bar_chart(&left, "reward MSE", &[bar(0, "FERL")?, bar(1, "ME-IRL")?], 0.0)?;
            bar_chart(&right, "behavior ratio", &[bar(2, "FERL")?, bar(3, "ME-IRL")?], 1.0)?;
        }
        "between_objects" => {
            let bars: Vec<Bar> = keys
                .iter()
                .zip(mean.iter().zip(&se))
                .map(|(k, (&m, &s))| Bar { label: format!("{k}D"), mean: m, se: s })
                .collect();
            bar_chart(&root, "between_objects MSE_norm", &bars, 0.0)?;
        }
        other => bail!("cannot plot report kind {other:?}"),
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

fn draw_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("draw chart: {e:?}")
}

fn sweep_chart<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    n: &[f64],
    mean: &[f64],
    se: &[f64],
) -> Result<()> {
    let hi = mean.iter().zip(se).map(|(m, s)| m + s).fold(0.0f64, f64::max).max(1e-9) * 1.1;
    let x_max = n.iter().cloned().fold(1.0, f64::max);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.5..x_max + 0.5, 0.0..hi)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("traces")
        .y_desc("MSE_norm")
        .disable_x_mesh()
        .draw()
        .map_err(draw_err)?;
    let color = BAR_COLORS[0];
    chart
        .draw_series(LineSeries::new(n.iter().cloned().zip(mean.iter().cloned()), color.stroke_width(2)))
        .map_err(draw_err)?;
    chart
        .draw_series(n.iter().zip(mean.iter().zip(se)).map(|(&x, (&m, &s))| {
            PathElement::new(vec![(x, (m - s).max(0.0)), (x, m + s)], color.stroke_width(1))
        }))
        .map_err(draw_err)?;
    chart
        .draw_series(n.iter().zip(mean).map(|(&x, &m)| Circle::new((x, m), 3, color.filled())))
        .map_err(draw_err)?;
    Ok(())
}

/// Bars sit on integer slots. A nonzero `reference` adds a horizontal guide.
fn bar_chart<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    bars: &[Bar],
    reference: f64,
) -> Result<()> {
    let hi = bars.iter().map(|b| b.mean + b.se).fold(reference, f64::max).max(1e-9) * 1.15;
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(-0.5..bars.len() as f64 - 0.5, 0.0..hi)
        .map_err(draw_err)?;
    let labels: Vec<String> = bars.iter().map(|b| b.label.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(bars.len())
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                labels.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, b)| {
            let x = i as f64;
            Rectangle::new([(x - 0.3, 0.0), (x + 0.3, b.mean)], BAR_COLORS[i % 2].filled())
        }))
        .map_err(draw_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, b)| {
            let x = i as f64;
            PathElement::new(vec![(x, (b.mean - b.se).max(0.0)), (x, b.mean + b.se)], BLACK.stroke_width(2))
        }))
        .map_err(draw_err)?;
    if reference != 0.0 {
        chart
            .draw_series(std::iter::once(PathElement::new(
                vec![(-0.5, reference), (bars.len() as f64 - 0.5, reference)],
                BLACK.stroke_width(1),
            )))
            .map_err(draw_err)?;
    }
    Ok(())
}
