//! SVG trend charts over a finished run directory: test mAP, pseudo-GT
//! precision and training-set size per self-paced iteration, one series per
//! variant. Charts are plain hand-rolled SVG so regeneration is
//! byte-deterministic.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const PALETTE: [&str; 9] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22",
];

#[derive(Debug, Clone)]
struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

/// One parsed row: variant, iteration, and fields keyed by header name.
type SummaryRow = (String, usize, Vec<(String, String)>);

struct SummaryTable {
    variants: Vec<String>,
    rows: Vec<SummaryRow>,
}

fn parse_summary(path: &Path) -> Result<SummaryTable> {
    let text = fs::read_to_string(path)
        .map_err(|_| Error::MissingArtifact(format!("{} (run the experiment first)", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<String> =
        lines.next().ok_or_else(|| Error::MissingArtifact("empty summary.csv".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
    let mut variants = Vec::new();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Format { line: rows.len() + 2, message: "summary.csv field count".into() });
        }
        let variant = fields[0].to_string();
        let t: usize = fields[1]
            .parse()
            .map_err(|_| Error::Format { line: rows.len() + 2, message: "t column".into() })?;
        if !variants.contains(&variant) {
            variants.push(variant.clone());
        }
        rows.push((
            variant,
            t,
            header.iter().cloned().zip(fields.iter().map(|s| s.to_string())).collect(),
        ));
    }
    Ok(SummaryTable { variants, rows })
}

impl SummaryTable {
    fn series_for(&self, column: &str) -> Vec<Series> {
        self.variants
            .iter()
            .map(|variant| {
                let mut points: Vec<(f64, f64)> = self
                    .rows
                    .iter()
                    .filter(|(v, _, _)| v == variant)
                    .filter_map(|(_, t, fields)| {
                        let value = &fields.iter().find(|(k, _)| k == column)?.1;
                        if value.is_empty() {
                            None
                        } else {
                            Some((*t as f64, value.parse().ok()?))
                        }
                    })
                    .collect();
                points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                Series { name: variant.clone(), points }
            })
            .filter(|s| !s.points.is_empty())
            .collect()
    }
}

fn render_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let (width, height) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 40.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(1.0_f64, f64::max);
    let y_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-9)
        * 1.05;

    let sx = |x: f64| left + x / x_max * plot_w;
    let sy = |y: f64| top + plot_h - y / y_max * plot_h;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        left + plot_w / 2.0
    )
    .unwrap();
    // axes
    writeln!(
        svg,
        r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h
    )
    .unwrap();
    writeln!(svg, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#, top + plot_h)
        .unwrap();
    // y ticks
    for k in 0..=5 {
        let v = y_max * k as f64 / 5.0;
        let y = sy(v);
        writeln!(svg, r#"<line x1="{:.1}" y1="{y:.1}" x2="{left}" y2="{y:.1}" stroke="black"/>"#, left - 4.0)
            .unwrap();
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.3}</text>"#,
            left - 7.0,
            y + 4.0
        )
        .unwrap();
    }
    // x ticks at integer iterations
    for t in 0..=(x_max as usize) {
        let x = sx(t as f64);
        writeln!(
            svg,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            top + plot_h,
            top + plot_h + 4.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{t}</text>"#,
            top + plot_h + 16.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">self-paced iteration t</text>"#,
        left + plot_w / 2.0,
        height - 8.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    )
    .unwrap();

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        )
        .unwrap();
        for &(x, y) in &s.points {
            writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y))
                .unwrap();
        }
        let ly = top + 14.0 * i as f64;
        writeln!(
            svg,
            r#"<rect x="{:.1}" y="{ly:.1}" width="10" height="10" fill="{color}"/>"#,
            left + plot_w + 12.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            left + plot_w + 26.0,
            ly + 9.0,
            s.name
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders the trend charts for a finished run directory. Returns the chart
/// paths.
pub fn plot(run_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let run_dir = run_dir.as_ref();
    let table = parse_summary(&run_dir.join("summary.csv"))?;
    let plots_dir = run_dir.join("plots");
    fs::create_dir_all(&plots_dir)?;

    let charts = [
        ("map_vs_iteration.svg", "Test mAP per checkpoint", "mAP", "map_mean"),
        (
            "precision_vs_iteration.svg",
            "Pseudo-GT precision of the training set",
            "Precision@0.5",
            "precision_mean",
        ),
        (
            "train_images_vs_iteration.svg",
            "Training images selected per iteration",
            "|T_t|",
            "train_images_mean",
        ),
    ];
    let mut written = Vec::new();
    for (file, title, y_label, column) in charts {
        let series = table.series_for(column);
        if series.is_empty() {
            return Err(Error::MissingArtifact(format!("summary.csv has no {column} data")));
        }
        let path = plots_dir.join(file);
        fs::write(&path, render_chart(title, y_label, &series))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_summary() -> String {
        let mut s = String::from(
            "variant,t,r,seeds,map_mean,map_min,map_max,corloc_mean,precision_mean,precision_min,precision_max,pool_mean,train_images_mean,loss_mean\n",
        );
        for (v, base) in [("SP", 0.3), ("MIL", 0.2)] {
            for t in 0..=4 {
                let m = base + t as f64 * 0.02;
                s.push_str(&format!(
                    "{v},{t},{r},3,{m:.6},{m:.6},{m:.6},0.5,{p},{p},{p},{pool},{ti},0.9\n",
                    r = if t == 0 { String::new() } else { format!("{:.6}", 0.5 + t as f64 * 0.125) },
                    p = if t == 0 { String::new() } else { format!("{:.6}", 0.4 + t as f64 * 0.05) },
                    pool = if t == 0 { String::new() } else { "120".into() },
                    ti = if t == 0 { String::new() } else { "80".into() },
                ));
            }
        }
        s
    }

    #[test]
    fn charts_have_one_point_per_checkpoint_and_regenerate_identically() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("summary.csv"), fake_summary()).unwrap();
        let paths = plot(dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let map_chart = fs::read_to_string(&paths[0]).unwrap();
        // two series, 5 points each (t = 0..=4)
        assert_eq!(map_chart.matches("<circle").count(), 10);
        let precision_chart = fs::read_to_string(&paths[1]).unwrap();
        // precision series start at t = 1
        assert_eq!(precision_chart.matches("<circle").count(), 8);
        let first = fs::read(&paths[0]).unwrap();
        plot(dir.path()).unwrap();
        assert_eq!(first, fs::read(&paths[0]).unwrap());
    }

    #[test]
    fn missing_summary_is_a_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(plot(dir.path()), Err(Error::MissingArtifact(_))));
    }
}
