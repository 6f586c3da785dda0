//! Static SVG charts. Plots are illustrations only; the numbers behind each
//! one are always written to a CSV next to it.

use std::path::Path;

use plotters::prelude::*;

use crate::CliError;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    /// Index into the palette, so related solid and dashed lines share a color.
    pub color: usize,
}

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("plot: {e}"))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<(), CliError> {
    let root = SVGBackend::new(path, (800, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let xs = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let ys = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
    for s in series {
        let color = Palette99::pick(s.color).to_rgba();
        let style = color.stroke_width(2);
        let anno = if s.dashed {
            chart.draw_series(DashedLineSeries::new(s.points.iter().copied(), 8, 5, style)).map_err(plot_err)?
        } else {
            chart.draw_series(LineSeries::new(s.points.iter().copied(), style)).map_err(plot_err)?
        };
        anno.label(s.label.clone()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart.draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
    }
    if series.iter().any(|s| !s.label.is_empty()) {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::UpperRight)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Three projections (x-y, x-z, y-z) of 3D tracks, positions in millimeters.
pub fn track_panels(path: &Path, tracks: &[Vec<[f64; 3]>]) -> Result<(), CliError> {
    let root = SVGBackend::new(path, (1200, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 3));
    let axes = [(0, 1, "x (mm)", "y (mm)"), (0, 2, "x (mm)", "z (mm)"), (1, 2, "y (mm)", "z (mm)")];
    for (area, &(a, b, xl, yl)) in panels.iter().zip(&axes) {
        let xs = bounds(tracks.iter().flatten().map(|p| p[a] * 1e3));
        let ys = bounds(tracks.iter().flatten().map(|p| p[b] * 1e3));
        let mut chart = ChartBuilder::on(area)
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(50)
            .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc(xl).y_desc(yl).draw().map_err(plot_err)?;
        for (i, t) in tracks.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let pts: Vec<(f64, f64)> = t.iter().map(|p| (p[a] * 1e3, p[b] * 1e3)).collect();
            chart.draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2))).map_err(plot_err)?;
            chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let line = dir.path().join("line.svg");
        let s = Series { label: "a".into(), points: vec![(0.0, 1.0), (1.0, 2.0)], dashed: true, color: 0 };
        line_chart(&line, "t", "x", "y", &[s]).unwrap();
        assert!(std::fs::read_to_string(&line).unwrap().starts_with("<svg"));
        let panels = dir.path().join("tracks.svg");
        track_panels(&panels, &[vec![[0.0, 0.0, 0.06], [1e-4, 2e-4, 0.06]]]).unwrap();
        assert!(panels.exists());
    }

    #[test]
    fn empty_chart_still_renders() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.svg");
        line_chart(&p, "nothing", "x", "y", &[]).unwrap();
        track_panels(&dir.path().join("t.svg"), &[]).unwrap();
        assert!(p.exists());
    }
}
