//! Plot-ready series derived from `metrics.csv`, plus minimal SVG line
//! charts.

use std::fmt::Write as _;

use crate::metrics::{format_value, normalize_series, MetricsTable};

/// Normalizes the present cells of a column, leaving absent cells empty.
fn normalize_column(column: &[Option<f64>]) -> Vec<Option<f64>> {
    let present: Vec<f64> = column.iter().flatten().copied().collect();
    let mut scaled = normalize_series(&present).into_iter();
    column
        .iter()
        .map(|cell| cell.map(|_| scaled.next().expect("one scaled value per present cell")))
        .collect()
}

fn iterations(table: &MetricsTable) -> Vec<Option<f64>> {
    table.column("iteration").unwrap_or_default()
}

fn render_csv(header: &[&str], columns: &[Vec<Option<f64>>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    let rows = columns.first().map_or(0, Vec::len);
    for r in 0..rows {
        let cells: Vec<String> = columns
            .iter()
            .enumerate()
            .map(|(c, col)| match col[r] {
                Some(v) if c == 0 => format!("{}", v as i64),
                Some(v) => format_value(v),
                None => String::new(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// `ndcg_progression.csv`: iteration plus raw NDCG per cutoff. `None` when
/// the run had no reference ranking.
pub fn ndcg_progression_csv(table: &MetricsTable) -> Option<String> {
    let names = table.ndcg_columns();
    if names.is_empty() {
        return None;
    }
    let mut header = vec!["iteration"];
    header.extend(names.iter().copied());
    let mut columns = vec![iterations(table)];
    columns.extend(names.iter().map(|n| table.column(n).expect("named column")));
    Some(render_csv(&header, &columns))
}

/// The two convergence series, each min-max scaled to [0, 1] on its own.
pub fn convergence_series(table: &MetricsTable) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let tau = table.column("kendall_tau_successive").unwrap_or_default();
    let du = table.column("delta_u").unwrap_or_default();
    (normalize_column(&tau), normalize_column(&du))
}

/// `convergence.csv`: iteration, normalized successive tau, normalized
/// utility movement.
pub fn convergence_csv(table: &MetricsTable) -> String {
    let (tau, du) = convergence_series(table);
    render_csv(
        &["iteration", "kendall_tau_successive", "delta_u"],
        &[iterations(table), tau, du],
    )
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// A self-contained SVG line chart. Each series is `(name, points)`; the
/// y-axis spans [0, 1] unless some value falls outside.
pub fn line_chart_svg(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (56.0, 150.0, 36.0, 48.0);
    let points = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64, 1.0_f64);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            left + plot_w,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{left}" y="{:.1}">{x0}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{x1}</text>"#,
        top + plot_h + 16.0,
        left + plot_w,
        top + plot_h + 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + plot_w / 2.0,
        h - 10.0,
        escape(x_label)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn points(x: &[Option<f64>], y: &[Option<f64>]) -> Vec<(f64, f64)> {
    x.iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect()
}

pub fn ndcg_svg(table: &MetricsTable) -> Option<String> {
    let names = table.ndcg_columns();
    if names.is_empty() {
        return None;
    }
    let x = iterations(table);
    let series: Vec<(String, Vec<(f64, f64)>)> = names
        .iter()
        .map(|n| {
            let label = format!("NDCG@{}%", n.trim_start_matches("ndcg_"));
            (label, points(&x, &table.column(n).expect("named column")))
        })
        .collect();
    Some(line_chart_svg("NDCG@K% progression", "iteration", &series))
}

pub fn convergence_svg(table: &MetricsTable) -> String {
    let x = iterations(table);
    let (tau, du) = convergence_series(table);
    let series = vec![
        ("Kendall-tau (scaled)".to_string(), points(&x, &tau)),
        ("delta u (scaled)".to_string(), points(&x, &du)),
    ];
    line_chart_svg("Convergence", "iteration", &series)
}
