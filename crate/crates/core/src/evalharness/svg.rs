use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 56.0;

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    let m = 0.05 * (hi - lo);
    (lo - m, hi + m)
}

/// Line through `(x, mean)` with `+-std` error bars.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64, f64)]) -> String {
    let (x0, x1) = extent(points.iter().map(|p| p.0));
    let (y0, y1) = extent(points.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2]));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {} H{} M{PAD} {PAD} V{}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{v:.2}</text>"#,
            sx(v),
            H - PAD + 16.0
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            PAD - 4.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for &(x, m, sd) in points.iter().filter(|p| p.1.is_finite()) {
        let sd = if sd.is_finite() { sd } else { 0.0 };
        let _ = writeln!(
            s,
            r#"<path d="M{:.1} {:.1} V{:.1}" stroke="gray"/>"#,
            sx(x),
            sy(m - sd),
            sy(m + sd)
        );
    }
    let line: Vec<String> = points
        .iter()
        .filter(|p| p.1.is_finite())
        .map(|&(x, m, _)| format!("{:.1},{:.1}", sx(x), sy(m)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#,
        line.join(" ")
    );
    for &(x, m, _) in points.iter().filter(|p| p.1.is_finite()) {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, sx(x), sy(m));
    }
    s.push_str("</svg>\n");
    s
}
