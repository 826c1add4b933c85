//! SVG figures: reliability diagrams from a metrics report and
//! log-scaled heatmaps from forecast CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gridcast_core::MetricsReport;

use crate::commands::{write_bytes, LOG_DECADES};
use crate::error::CliError;

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
const PLOT: f64 = 360.0;
const MARGIN: f64 = 50.0;
/// Heatmap pixels per cell.
const CELL_PX: usize = 8;

/// Writes one figure per model of a metrics report, or one heatmap per
/// forecast CSV, into `out`.
pub fn plot(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if inputs.is_empty() {
        return Err(CliError::validation("plot needs at least one input file"));
    }
    let mut written = Vec::new();
    for input in inputs {
        let text = fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "figure".into());
        match input.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                let report: MetricsReport = serde_json::from_str(&text)
                    .map_err(|e| CliError::validation(format!("{}: not a metrics report: {e}", input.display())))?;
                for (name, m) in &report.models {
                    let path = out.join(format!("{stem}_{name}_reliability.svg"));
                    let curves: Vec<(String, Vec<(f64, f64)>)> = m
                        .overall()
                        .horizons
                        .iter()
                        .map(|h| {
                            let pts = h.reliability.levels.iter().copied().zip(h.reliability.observed.iter().copied());
                            (format!("{} s", h.horizon), pts.collect())
                        })
                        .collect();
                    write_bytes(&path, reliability_svg(name, &curves).as_bytes())?;
                    written.push(path);
                }
            }
            Some("csv") => {
                let (side, probs) = parse_forecast_csv(&text).map_err(|e| CliError::validation(format!("{}: {e}", input.display())))?;
                let path = out.join(format!("{stem}_heatmap.svg"));
                write_bytes(&path, heatmap_svg(side, &probs).as_bytes())?;
                written.push(path);
            }
            _ => {
                return Err(CliError::validation(format!(
                    "{}: expected a metrics report (.json) or a forecast (.csv)",
                    input.display()
                )))
            }
        }
    }
    Ok(written)
}

/// Observed frequency against confidence level, one polyline per horizon,
/// with the diagonal of perfect calibration.
pub fn reliability_svg(title: &str, curves: &[(String, Vec<(f64, f64)>)]) -> String {
    let size = PLOT + 2.0 * MARGIN;
    let x = |v: f64| MARGIN + v * PLOT;
    let y = |v: f64| MARGIN + (1.0 - v) * PLOT;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{PLOT}" height="{PLOT}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v}</text>"#, x(v), y(0.0) + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, x(0.0) - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">confidence level</text>"#, x(0.5), size - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">observed frequency</text>"#,
        y(0.5),
        y(0.5)
    );
    let _ = writeln!(s, r#"<text x="{}" y="30" text-anchor="middle">{}</text>"#, x(0.5), escape(title));
    for (i, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = format!("{},{}", x(0.0), y(0.0));
        for &(l, f) in pts {
            let _ = write!(points, " {:.2},{:.2}", x(l), y(f));
        }
        let _ = writeln!(s, r#"<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let ly = MARGIN + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
            x(0.05),
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Cells colored on a log scale spanning [`LOG_DECADES`] below the maximum;
/// zero and smaller values are black. Row 0 is drawn at the top, as in the
/// PGM output.
pub fn heatmap_svg(side: usize, probs: &[f64]) -> String {
    let max = probs.iter().copied().fold(0.0, f64::max);
    let px = side * CELL_PX;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{px}" height="{px}" shape-rendering="crispEdges">"#);
    let _ = writeln!(s, r#"<rect width="{px}" height="{px}" fill="black"/>"#);
    for (i, &p) in probs.iter().enumerate() {
        if !(p > 0.0 && max > 0.0) {
            continue;
        }
        let t = ((p / max).log10() / LOG_DECADES + 1.0).clamp(0.0, 1.0);
        if t == 0.0 {
            continue;
        }
        let (row, col) = (i / side, i % side);
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{CELL_PX}" height="{CELL_PX}" fill="{}"/>"#,
            col * CELL_PX,
            row * CELL_PX,
            ramp(t)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Dark blue through teal to yellow.
fn ramp(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 3] = [(0.0, [40.0, 20.0, 90.0]), (0.5, [30.0, 150.0, 140.0]), (1.0, [250.0, 230.0, 40.0])];
    let (a, b) = if t <= 0.5 { (STOPS[0], STOPS[1]) } else { (STOPS[1], STOPS[2]) };
    let u = (t - a.0) / (b.0 - a.0);
    let c: Vec<u8> = (0..3).map(|k| (a.1[k] + u * (b.1[k] - a.1[k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Parses `row,col,probability` lines into a square raster.
pub fn parse_forecast_csv(text: &str) -> Result<(usize, Vec<f64>), String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("row,col,probability") {
        return Err("expected header `row,col,probability`".into());
    }
    let mut cells = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split(',').collect();
        let parse = || -> Option<(usize, usize, f64)> {
            match parts.as_slice() {
                [r, c, p] => Some((r.trim().parse().ok()?, c.trim().parse().ok()?, p.trim().parse().ok()?)),
                _ => None,
            }
        };
        cells.push(parse().ok_or_else(|| format!("line {}: malformed record", n + 2))?);
    }
    let side = (cells.len() as f64).sqrt().round() as usize;
    if side * side != cells.len() || side == 0 {
        return Err(format!("{} cells do not form a square grid", cells.len()));
    }
    let mut probs = vec![f64::NAN; cells.len()];
    for (r, c, p) in cells {
        if r >= side || c >= side {
            return Err(format!("cell ({r}, {c}) outside a {side}x{side} grid"));
        }
        probs[r * side + c] = p;
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err("missing cells".into());
    }
    Ok((side, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_errors() {
        let text = "row,col,probability\n0,0,0.5\n0,1,0.5\n1,0,0\n1,1,0\n";
        assert_eq!(parse_forecast_csv(text).unwrap(), (2, vec![0.5, 0.5, 0.0, 0.0]));
        assert!(parse_forecast_csv("row,col,probability\n0,0,1\n0,1,0\n").is_err());
        assert!(parse_forecast_csv("a,b\n").is_err());
        assert!(parse_forecast_csv("row,col,probability\n0,0,x\n").is_err());
    }

    #[test]
    fn one_hot_heatmap_has_a_single_colored_cell() {
        let mut p = vec![0.0; 9];
        p[4] = 1.0;
        let svg = heatmap_svg(3, &p);
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains(r#"x="8" y="8""#));
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#28145a");
        assert_eq!(ramp(1.0), "#fae628");
    }

    #[test]
    fn reliability_figure_has_one_line_per_horizon() {
        let curves = vec![("0.44 s".to_string(), vec![(0.5, 0.4), (1.0, 1.0)]), ("0.96 s".to_string(), vec![(0.5, 0.6), (1.0, 1.0)])];
        let svg = reliability_svg("d_t", &curves);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg"));
    }
}
