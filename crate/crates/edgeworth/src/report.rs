//! File renderers for simulation reports: pretty JSON, CSV curve tables, and
//! a self-contained SVG density overlay.
//!
//! Everything here is deterministic: numbers are formatted with Rust's
//! shortest-round-trip `Display` in the CSVs and with fixed precision in the
//! SVG, so identical reports produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::montecarlo::SimulationReport;

/// Serialize any report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    text.push('\n');
    fs::write(path, text)
}

/// Density curves over the evaluation grid: `x,normal,order1,order2`.
pub fn density_csv(report: &SimulationReport) -> String {
    let mut out = String::from("x,normal,order1,order2\n");
    for (((x, pn), p1), p2) in report
        .grid
        .iter()
        .zip(&report.pdf_normal)
        .zip(&report.pdf_order1)
        .zip(&report.pdf_order2)
    {
        let _ = writeln!(out, "{x},{pn},{p1},{p2}");
    }
    out
}

/// Histogram table: `lo,hi,density`.
pub fn histogram_csv(report: &SimulationReport) -> String {
    let mut out = String::from("lo,hi,density\n");
    for (pair, d) in report.histogram.edges.windows(2).zip(&report.histogram.densities) {
        let _ = writeln!(out, "{},{},{d}", pair[0], pair[1]);
    }
    out
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 500.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 22.0;
const MARGIN_B: f64 = 44.0;

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_hi: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN_L + (v - self.x_lo) / (self.x_hi - self.x_lo) * (SVG_W - MARGIN_L - MARGIN_R)
    }
    fn y(&self, v: f64) -> f64 {
        // y grows downward in SVG space.
        SVG_H - MARGIN_B - (v / self.y_hi) * (SVG_H - MARGIN_T - MARGIN_B)
    }
}

fn polyline(out: &mut String, frame: &Frame, xs: &[f64], ys: &[f64], style: &str) {
    // Split at non-finite values so a bad point breaks the line instead of
    // corrupting the path.
    let mut points = String::new();
    let flush = |points: &mut String, out: &mut String| {
        if !points.is_empty() {
            let _ = writeln!(out, "  <polyline fill=\"none\" {style} points=\"{}\"/>", points.trim_end());
            points.clear();
        }
    };
    for (&x, &y) in xs.iter().zip(ys) {
        if x.is_finite() && y.is_finite() {
            let _ = write!(points, "{:.2},{:.2} ", frame.x(x), frame.y(y.max(0.0)));
        } else {
            flush(&mut points, out);
        }
    }
    flush(&mut points, out);
}

/// Render the histogram plus the three density curves as a standalone SVG.
pub fn overlay_svg(report: &SimulationReport) -> String {
    let grid = &report.grid;
    let x_lo = grid.first().copied().unwrap_or(-1.0);
    let x_hi = grid.last().copied().unwrap_or(1.0);
    let mut y_hi = 0.0f64;
    for curve in [&report.pdf_normal, &report.pdf_order1, &report.pdf_order2] {
        for &v in curve.iter() {
            if v.is_finite() {
                y_hi = y_hi.max(v);
            }
        }
    }
    for &d in &report.histogram.densities {
        if d.is_finite() {
            y_hi = y_hi.max(d);
        }
    }
    if y_hi <= 0.0 {
        y_hi = 1.0;
    }
    y_hi *= 1.08;
    let frame = Frame { x_lo, x_hi, y_hi };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" \
         font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "  <rect x=\"0\" y=\"0\" width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>");

    // Histogram bars.
    for (pair, &d) in report.histogram.edges.windows(2).zip(&report.histogram.densities) {
        if !d.is_finite() || d <= 0.0 {
            continue;
        }
        let x0 = frame.x(pair[0]);
        let x1 = frame.x(pair[1]);
        let y = frame.y(d);
        let base = frame.y(0.0);
        let _ = writeln!(
            out,
            "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#d7dee8\"/>",
            x0,
            y,
            (x1 - x0).max(0.0),
            (base - y).max(0.0)
        );
    }

    // Axes.
    let base = frame.y(0.0);
    let _ = writeln!(
        out,
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#333\" stroke-width=\"1\"/>",
        MARGIN_L, base, SVG_W - MARGIN_R, base
    );
    let _ = writeln!(
        out,
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#333\" stroke-width=\"1\"/>",
        MARGIN_L, MARGIN_T, MARGIN_L, base
    );
    for i in 0..=5 {
        let xv = x_lo + (x_hi - x_lo) * i as f64 / 5.0;
        let xp = frame.x(xv);
        let _ = writeln!(
            out,
            "  <line x1=\"{xp:.2}\" y1=\"{:.2}\" x2=\"{xp:.2}\" y2=\"{:.2}\" stroke=\"#333\" stroke-width=\"1\"/>",
            base, base + 5.0
        );
        let _ = writeln!(
            out,
            "  <text x=\"{xp:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{xv:.2}</text>",
            base + 19.0
        );
        let yv = y_hi * i as f64 / 5.0;
        let yp = frame.y(yv);
        let _ = writeln!(
            out,
            "  <line x1=\"{:.2}\" y1=\"{yp:.2}\" x2=\"{:.2}\" y2=\"{yp:.2}\" stroke=\"#333\" stroke-width=\"1\"/>",
            MARGIN_L - 5.0, MARGIN_L
        );
        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{yv:.3}</text>",
            MARGIN_L - 9.0,
            yp + 4.0
        );
    }
    let _ = writeln!(
        out,
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">w</text>",
        MARGIN_L + (SVG_W - MARGIN_L - MARGIN_R) / 2.0,
        SVG_H - 8.0
    );

    // Curves: normal reference dashed grey, first order amber, second blue.
    polyline(
        &mut out,
        &frame,
        grid,
        &report.pdf_normal,
        "stroke=\"#777777\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"",
    );
    polyline(
        &mut out,
        &frame,
        grid,
        &report.pdf_order1,
        "stroke=\"#d97706\" stroke-width=\"1.8\"",
    );
    polyline(
        &mut out,
        &frame,
        grid,
        &report.pdf_order2,
        "stroke=\"#1d4ed8\" stroke-width=\"1.8\"",
    );

    // Legend, top-right.
    let lx = SVG_W - MARGIN_R - 190.0;
    let mut ly = MARGIN_T + 8.0;
    let entries: [(&str, &str); 3] = [
        ("stroke=\"#777777\" stroke-dasharray=\"6 4\"", "normal limit"),
        ("stroke=\"#d97706\"", "first-order expansion"),
        ("stroke=\"#1d4ed8\"", "second-order expansion"),
    ];
    let n_eff = report.n_effective;
    let _ = writeln!(
        out,
        "  <text x=\"{lx:.2}\" y=\"{ly:.2}\" font-weight=\"bold\">density overlay, n = {n_eff}</text>"
    );
    ly += 18.0;
    for (style, label) in entries {
        let _ = writeln!(
            out,
            "  <line x1=\"{lx:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" {style} stroke-width=\"2\"/>",
            ly - 4.0,
            lx + 28.0,
            ly - 4.0
        );
        let _ = writeln!(out, "  <text x=\"{:.2}\" y=\"{ly:.2}\">{label}</text>", lx + 34.0);
        ly += 17.0;
    }

    out.push_str("</svg>\n");
    out
}

/// Write `stem.json`, `stem.densities.csv`, `stem.histogram.csv`, and
/// `stem.svg` under `dir`, returning the paths written.
pub fn write_report_files(
    report: &SimulationReport,
    dir: &Path,
    stem: &str,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json_path = dir.join(format!("{stem}.json"));
    write_json(report, &json_path)?;
    written.push(json_path);
    let dens_path = dir.join(format!("{stem}.densities.csv"));
    fs::write(&dens_path, density_csv(report))?;
    written.push(dens_path);
    let hist_path = dir.join(format!("{stem}.histogram.csv"));
    fs::write(&hist_path, histogram_csv(report))?;
    written.push(hist_path);
    let svg_path = dir.join(format!("{stem}.svg"));
    fs::write(&svg_path, overlay_svg(report))?;
    written.push(svg_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BaseDistribution, CoordinateMap, VectorModel};
    use crate::montecarlo::{simulate, CoeffSource, ExperimentConfig};
    use crate::statistics::{StatisticKind, StatisticSpec};

    fn small_report() -> SimulationReport {
        let model = VectorModel::new(
            vec![BaseDistribution::ChiSquare { df: 1.0 }],
            CoordinateMap { exponents: vec![vec![1], vec![2]] },
        )
        .unwrap();
        let cfg = ExperimentConfig {
            statistic: StatisticSpec {
                model,
                statistic: StatisticKind::Expression { text: "z1 + 0.1*z2".into() },
            },
            n: 40,
            reps: 1200,
            seed: 11,
            block_b: None,
            coeff_source: CoeffSource::Analytic,
            grid: None,
        };
        simulate(&cfg).unwrap()
    }

    #[test]
    fn csv_tables_have_expected_shape() {
        let report = small_report();
        let dens = density_csv(&report);
        let mut lines = dens.lines();
        assert_eq!(lines.next(), Some("x,normal,order1,order2"));
        assert_eq!(dens.lines().count(), report.grid.len() + 1);
        for line in dens.lines().skip(1) {
            assert_eq!(line.split(',').count(), 4);
            for field in line.split(',') {
                field.parse::<f64>().unwrap();
            }
        }
        let hist = histogram_csv(&report);
        assert_eq!(hist.lines().next(), Some("lo,hi,density"));
        assert_eq!(hist.lines().count(), report.histogram.densities.len() + 1);
    }

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let report = small_report();
        let svg = overlay_svg(&report);
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.matches("<rect").count() > 5);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        assert_eq!(svg, overlay_svg(&report));
    }

    #[test]
    fn report_files_round_trip() {
        let report = small_report();
        let dir = tempfile::tempdir().unwrap();
        let written = write_report_files(&report, dir.path(), "demo").unwrap();
        assert_eq!(written.len(), 4);
        let json = std::fs::read_to_string(&written[0]).unwrap();
        assert!(json.ends_with('\n'));
        let back: SimulationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
