//! Minimal static SVG charts.

use std::fmt::Write;

pub struct BarSeries<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub values: &'a [f64],
}

/// One beeswarm panel: per feature, `(phi, feature value in [0, 1])` points.
pub struct SwarmPanel<'a> {
    pub title: &'a str,
    pub points: Vec<Vec<(f64, f64)>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, width: f64, height: f64, title: &str, stamp: Option<&str>) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    if let Some(stamp) = stamp {
        let _ = writeln!(out, "<metadata>generated {}</metadata>", escape(stamp));
    }
    let _ = writeln!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

/// Grouped vertical bars, one group per feature.
pub fn bar_chart(
    title: &str,
    features: &[String],
    series: &[BarSeries<'_>],
    stamp: Option<&str>,
) -> String {
    let group_w = 18.0 * series.len().max(1) as f64 + 14.0;
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 110.0);
    let plot_h = 260.0;
    let width = left + right + group_w * features.len().max(1) as f64;
    let height = top + plot_h + bottom;
    let all = series.iter().flat_map(|s| s.values.iter().copied());
    let hi = all.clone().fold(0.0f64, f64::max);
    let lo = all.fold(0.0f64, f64::min);
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let y = |v: f64| top + (hi - v) / span * plot_h;

    let mut out = String::new();
    header(&mut out, width, height, title, stamp);
    for t in 0..=4 {
        let v = lo + span * f64::from(t) / 4.0;
        let _ = writeln!(
            out,
            r##"<line x1="{left}" x2="{:.1}" y1="{:.2}" y2="{:.2}" stroke="#ddd"/><text x="{:.1}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            width - right,
            y(v),
            y(v),
            left - 4.0,
            y(v) + 4.0
        );
    }
    for (g, name) in features.iter().enumerate() {
        let x0 = left + g as f64 * group_w + 7.0;
        for (s, ser) in series.iter().enumerate() {
            let v = ser.values.get(g).copied().unwrap_or(0.0);
            let (a, b) = (y(v.max(0.0)), y(v.min(0.0)));
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{a:.2}" width="16" height="{:.2}" fill="{}"><title>{}: {v}</title></rect>"#,
                x0 + 18.0 * s as f64,
                (b - a).max(0.5),
                ser.color,
                escape(ser.label)
            );
        }
        let cx = x0 + 9.0 * series.len() as f64;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="end" transform="rotate(-45 {cx:.1} {:.1})">{}</text>"#,
            top + plot_h + 14.0,
            top + plot_h + 14.0,
            escape(name)
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{left}" x2="{:.1}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
        width - right,
        y(0.0),
        y(0.0)
    );
    for (s, ser) in series.iter().enumerate() {
        let lx = left + 120.0 * s as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.1}" y="26" width="10" height="10" fill="{}"/><text x="{:.1}" y="35">{}</text>"#,
            ser.color,
            lx + 14.0,
            escape(ser.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Blue (low) to red (high).
fn value_color(t: f64) -> String {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.5
    };
    let r = (30.0 + 225.0 * t).round() as u8;
    let b = (255.0 - 225.0 * t).round() as u8;
    format!("rgb({r},40,{b})")
}

/// Side-by-side beeswarm panels: one row per feature, dots placed at their
/// attribution and stacked vertically where they would overlap.
pub fn beeswarm(
    title: &str,
    features: &[String],
    panels: &[SwarmPanel<'_>],
    stamp: Option<&str>,
) -> String {
    let (label_w, panel_w, gap, top, row_h) = (130.0, 320.0, 30.0, 50.0, 34.0);
    let width = label_w + (panel_w + gap) * panels.len().max(1) as f64;
    let height = top + row_h * features.len().max(1) as f64 + 40.0;
    let mut out = String::new();
    header(&mut out, width, height, title, stamp);
    for (r, name) in features.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            label_w - 8.0,
            top + row_h * (r as f64 + 0.5) + 4.0,
            escape(name)
        );
    }
    for (p, panel) in panels.iter().enumerate() {
        let x0 = label_w + p as f64 * (panel_w + gap);
        let extent = panel
            .points
            .iter()
            .flatten()
            .fold(0.0f64, |m, &(v, _)| m.max(v.abs()));
        let extent = if extent > 0.0 { extent } else { 1.0 };
        let x = |v: f64| x0 + panel_w / 2.0 + v / extent * (panel_w / 2.0 - 6.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="38" text-anchor="middle">{}</text>"#,
            x0 + panel_w / 2.0,
            escape(panel.title)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" x2="{:.1}" y1="{top}" y2="{:.1}" stroke="#999"/>"##,
            x(0.0),
            x(0.0),
            top + row_h * features.len() as f64
        );
        for (r, pts) in panel.points.iter().enumerate() {
            let cy = top + row_h * (r as f64 + 0.5);
            // stack dots falling into the same 3px column
            let mut counts = std::collections::HashMap::new();
            for &(v, fv) in pts {
                let px = x(v);
                let k = counts.entry((px / 3.0).round() as i64).or_insert(0i64);
                let offset = if *k % 2 == 0 { *k / 2 } else { -(*k + 1) / 2 } as f64 * 2.5;
                *k += 1;
                let _ = writeln!(
                    out,
                    r#"<circle cx="{px:.2}" cy="{:.2}" r="2" fill="{}"/>"#,
                    cy + offset.clamp(-row_h / 2.0 + 2.0, row_h / 2.0 - 2.0),
                    value_color(fv)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">attribution (max |phi| {extent:.3})</text>"#,
            x0 + panel_w / 2.0,
            height - 14.0
        );
    }
    out.push_str("</svg>\n");
    out
}
