//! Hand-built SVG charts. Output depends only on the input values, so equal
//! inputs give byte-identical files.

use std::f64::consts::PI;
use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_TOP: f64 = 60.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
/// Pixel height of the value range [0, 1].
pub const PLOT_HEIGHT: f64 = 300.0;

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];
const FONT: &str = "font-family=\"Helvetica, Arial, sans-serif\"";

/// Upper limit on radar axes before labels become unreadable.
pub const MAX_RADAR_AXES: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    pub bars: Vec<Bar>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadarSeries {
    pub name: String,
    pub values: Vec<f64>,
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn header(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="32" text-anchor="middle" {FONT} font-size="17" font-weight="bold">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn value_axis(svg: &mut String, y_label: &str) {
    let base = MARGIN_TOP + PLOT_HEIGHT;
    for step in 0..=5 {
        let v = step as f64 / 5.0;
        let y = base - v * PLOT_HEIGHT;
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}" stroke="#e5e5e5"/>"##,
            WIDTH - MARGIN_RIGHT
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.3}" text-anchor="end" {FONT} font-size="11">{v:.1}</text>"#,
            MARGIN_LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{base:.3}" stroke="#333"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle" {FONT} font-size="12">{}</text>"#,
        MARGIN_TOP + PLOT_HEIGHT / 2.0,
        escape(y_label)
    );
}

/// Grouped vertical bar chart on a fixed [0, 1] value axis. Error bars span
/// `value ± error`, clipped to the axis.
pub fn bar_chart(title: &str, y_label: &str, series_names: &[String], groups: &[BarGroup]) -> String {
    let mut svg = String::new();
    header(&mut svg, title);
    value_axis(&mut svg, y_label);

    let base = MARGIN_TOP + PLOT_HEIGHT;
    let plot_width = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let group_width = plot_width / groups.len().max(1) as f64;
    let per_group = groups.iter().map(|g| g.bars.len()).max().unwrap_or(1).max(1);
    let bar_width = group_width * 0.8 / per_group as f64;

    for (gi, group) in groups.iter().enumerate() {
        let gx = MARGIN_LEFT + gi as f64 * group_width + group_width * 0.1;
        for (bi, bar) in group.bars.iter().enumerate() {
            let value = bar.value.clamp(0.0, 1.0);
            let height = value * PLOT_HEIGHT;
            let x = gx + bi as f64 * bar_width;
            let _ = writeln!(
                svg,
                r#"<rect class="bar" data-group="{}" data-series="{}" data-value="{:.4}" x="{x:.3}" y="{:.3}" width="{:.3}" height="{height:.3}" fill="{}"/>"#,
                escape(&group.label),
                escape(&bar.label),
                bar.value,
                base - height,
                bar_width * 0.9,
                PALETTE[bi % PALETTE.len()]
            );
            if bar.error > 0.0 {
                let cx = x + bar_width * 0.45;
                let lo = (bar.value - bar.error).clamp(0.0, 1.0);
                let hi = (bar.value + bar.error).clamp(0.0, 1.0);
                let (ylo, yhi) = (base - lo * PLOT_HEIGHT, base - hi * PLOT_HEIGHT);
                let _ = writeln!(
                    svg,
                    r##"<path class="error" d="M{cx:.3} {ylo:.3}V{yhi:.3}M{:.3} {ylo:.3}H{:.3}M{:.3} {yhi:.3}H{:.3}" stroke="#222" fill="none"/>"##,
                    cx - 4.0,
                    cx + 4.0,
                    cx - 4.0,
                    cx + 4.0
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" {FONT} font-size="12">{}</text>"#,
            MARGIN_LEFT + (gi as f64 + 0.5) * group_width,
            base + 20.0,
            escape(&group.label)
        );
    }
    let _ = writeln!(
        svg,
        r##"<line x1="{MARGIN_LEFT}" y1="{base:.3}" x2="{:.3}" y2="{base:.3}" stroke="#333"/>"##,
        WIDTH - MARGIN_RIGHT
    );
    if series_names.len() > 1 {
        legend(&mut svg, series_names, base + 50.0);
    }
    svg.push_str("</svg>\n");
    svg
}

fn legend(svg: &mut String, names: &[String], y: f64) {
    for (i, name) in names.iter().enumerate() {
        let x = MARGIN_LEFT + i as f64 * 160.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" {FONT} font-size="12">{}</text>"#,
            x + 18.0,
            escape(name)
        );
    }
}

/// Radar chart with one axis per label and one closed polyline per series.
/// Values are plotted on a fixed [0, 1] radius. Returns `None` when there are
/// more than [`MAX_RADAR_AXES`] axes.
pub fn radar_chart(title: &str, axes: &[String], series: &[RadarSeries]) -> Option<String> {
    if axes.len() > MAX_RADAR_AXES {
        return None;
    }
    let mut svg = String::new();
    header(&mut svg, title);
    let (cx, cy, radius) = (WIDTH / 2.0, MARGIN_TOP + 10.0 + 170.0, 170.0);
    let n = axes.len().max(1);
    let point = |i: usize, r: f64| {
        let angle = -PI / 2.0 + 2.0 * PI * i as f64 / n as f64;
        (cx + r * angle.cos(), cy + r * angle.sin())
    };

    for ring in 1..=4 {
        let r = radius * ring as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<circle cx="{cx:.3}" cy="{cy:.3}" r="{r:.3}" fill="none" stroke="#e5e5e5"/>"##
        );
    }
    for (i, label) in axes.iter().enumerate() {
        let (x, y) = point(i, radius);
        let (lx, ly) = point(i, radius + 22.0);
        let _ = writeln!(
            svg,
            r##"<line class="axis" x1="{cx:.3}" y1="{cy:.3}" x2="{x:.3}" y2="{y:.3}" stroke="#999"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{lx:.3}" y="{:.3}" text-anchor="middle" {FONT} font-size="11">{}</text>"#,
            ly + 4.0,
            escape(label)
        );
    }
    for (si, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (x, y) = point(i, radius * v.clamp(0.0, 1.0));
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let color = PALETTE[si % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<polygon class="series" data-series="{}" points="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="2"/>"#,
            escape(&s.name),
            pts.join(" ")
        );
    }
    let names: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
    legend(&mut svg, &names, HEIGHT - 20.0);
    svg.push_str("</svg>\n");
    Some(svg)
}
