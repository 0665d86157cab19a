//! MSE-versus-days line charts as plain SVG.
//!
//! Output depends only on the table: coordinates are printed with fixed
//! precision and series are ordered by first appearance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::ResultTable;

const WIDTH: f64 = 960.0;
const PANEL_W: f64 = 400.0;
const PANEL_H: f64 = 300.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 50.0;
const GAP: f64 = 90.0;
const LEGEND_ROW: f64 = 18.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

struct Series {
    label: String,
    dashed: bool,
    /// days → (sum, count) for train and test
    train: BTreeMap<usize, (f64, usize)>,
    test: BTreeMap<usize, (f64, usize)>,
}

impl Series {
    fn points(map: &BTreeMap<usize, (f64, usize)>) -> Vec<(f64, f64)> {
        map.iter().map(|(&d, &(s, c))| (d as f64, s / c as f64)).collect()
    }
}

/// Tick positions covering `[lo, hi]` with a 1-2-5 step.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Two panels (train, test) of mean MSE against days, one line per
/// scenario × preparation × model. Failed rows are skipped.
pub fn render_report(table: &ResultTable) -> Result<String> {
    let ok: Vec<_> = table.rows.iter().filter(|r| !r.failed).collect();
    if ok.is_empty() {
        return Err(Error::MalformedResults("no successful rows to plot".into()));
    }
    let multi_scenario = ok.iter().any(|r| r.scenario != ok[0].scenario);
    let mut series: Vec<Series> = Vec::new();
    for r in &ok {
        let (Some(tr), Some(te)) = (r.train_mse, r.test_mse) else {
            return Err(Error::MalformedResults(format!("row rep {} of {} lacks MSE values", r.rep, r.model)));
        };
        if !(tr.is_finite() && te.is_finite()) {
            return Err(Error::MalformedResults("non-finite MSE".into()));
        }
        let label = if multi_scenario {
            format!("{} {} {}", r.scenario, r.preparation, r.model)
        } else {
            format!("{} {}", r.preparation, r.model)
        };
        let idx = match series.iter().position(|s| s.label == label) {
            Some(i) => i,
            None => {
                series.push(Series {
                    label,
                    dashed: r.model != "ols",
                    train: BTreeMap::new(),
                    test: BTreeMap::new(),
                });
                series.len() - 1
            }
        };
        let s = &mut series[idx];
        let e = s.train.entry(r.days).or_insert((0.0, 0));
        e.0 += tr;
        e.1 += 1;
        let e = s.test.entry(r.days).or_insert((0.0, 0));
        e.0 += te;
        e.1 += 1;
    }

    let days: Vec<f64> = ok.iter().map(|r| r.days as f64).collect();
    let (dmin, dmax) = days.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    let (dlo, dhi) = if dmin == dmax { (dmin - 1.0, dmax + 1.0) } else { (dmin, dmax) };

    let legend_h = LEGEND_ROW * series.len() as f64 + 20.0;
    let height = TOP + PANEL_H + 60.0 + legend_h;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    for (p, (title, pick)) in [("Train", true), ("Test", false)].into_iter().enumerate() {
        let x0 = LEFT + p as f64 * (PANEL_W + GAP);
        let pts: Vec<Vec<(f64, f64)>> = series
            .iter()
            .map(|s| Series::points(if pick { &s.train } else { &s.test }))
            .collect();
        let (ymin, ymax) = pts
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, y)| (a.min(y), b.max(y)));
        let pad = ((ymax - ymin) * 0.05).max(ymax.abs() * 1e-3).max(1e-9);
        let (ylo, yhi) = (ymin - pad, ymax + pad);
        let sx = |d: f64| x0 + (d - dlo) / (dhi - dlo) * PANEL_W;
        let sy = |v: f64| TOP + PANEL_H - (v - ylo) / (yhi - ylo) * PANEL_H;

        let _ = writeln!(svg, r#"<g class="panel" id="{}">"#, title.to_lowercase());
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14" font-weight="bold">{title}</text>"#,
            x0 + PANEL_W / 2.0,
            TOP - 15.0
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{x0:.2}" y="{TOP:.2}" width="{PANEL_W:.2}" height="{PANEL_H:.2}" fill="none" stroke="black"/>"#
        );
        for t in ticks(ylo, yhi) {
            let y = sy(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                x0 + PANEL_W,
                x0 - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let mut xt: Vec<f64> = days.clone();
        xt.sort_by(f64::total_cmp);
        xt.dedup();
        for d in xt {
            let x = sx(d);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + PANEL_H,
                TOP + PANEL_H + 5.0,
                TOP + PANEL_H + 20.0,
                fmt_tick(d)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">days</text>"#,
            x0 + PANEL_W / 2.0,
            TOP + PANEL_H + 40.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">mean MSE</text>"#,
            x0 - 50.0,
            TOP + PANEL_H / 2.0,
            x0 - 50.0,
            TOP + PANEL_H / 2.0
        );
        for (i, (s, pts)) in series.iter().zip(&pts).enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let dash = if s.dashed { r#" stroke-dasharray="6 3""# } else { "" };
            let path: Vec<String> = pts.iter().map(|&(d, v)| format!("{:.2},{:.2}", sx(d), sy(v))).collect();
            if pts.len() > 1 {
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
                    path.join(" ")
                );
            }
            for &(d, v) in pts {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(d), sy(v));
            }
        }
        let _ = writeln!(svg, "</g>");
    }

    let ly = TOP + PANEL_H + 60.0;
    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = ly + i as f64 * LEGEND_ROW;
        let dash = if s.dashed { r#" stroke-dasharray="6 3""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
            LEFT + 30.0,
            LEFT + 38.0,
            y + 4.0,
            escape(&s.label)
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads a results CSV and writes its chart; nothing is written on error.
pub fn render_report_file(results: &Path, out: &Path) -> Result<()> {
    let table = ResultTable::load(results)?;
    let svg = render_report(&table)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}
