//! Minimal standalone SVG scatter plots (no plotting dependency).

/// One point group sharing a marker style.
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Render labeled scatter series with axes into an SVG document.
pub fn scatter_svg(title: &str, series: &[Series]) -> String {
    let (w, h, margin) = (640.0, 480.0, 50.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (-1.0, 1.0, -1.0, 1.0);
    if !all.is_empty() {
        lo_x = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        hi_x = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        lo_y = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        hi_y = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    }
    let pad = |lo: &mut f64, hi: &mut f64| {
        let span = (*hi - *lo).max(1e-9);
        *lo -= 0.05 * span;
        *hi += 0.05 * span;
    };
    pad(&mut lo_x, &mut hi_x);
    pad(&mut lo_y, &mut hi_y);
    let sx = (w - 2.0 * margin) / (hi_x - lo_x);
    let sy = (h - 2.0 * margin) / (hi_y - lo_y);
    let map = |p: (f64, f64)| {
        (
            margin + (p.0 - lo_x) * sx,
            h - margin - (p.1 - lo_y) * sy,
        )
    };

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        w / 2.0
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = margin,
        b = h - margin,
        r = w - margin,
        t = margin
    ));
    for (axis, lo, hi) in [("x", lo_x, hi_x), ("y", lo_y, hi_y)] {
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let (px, py) = if axis == "x" {
                (margin + (v - lo) * if axis == "x" { sx } else { sy }, h - margin + 16.0)
            } else {
                (margin - 8.0, h - margin - (v - lo) * sy)
            };
            out.push_str(&format!(
                "<text x=\"{px:.1}\" y=\"{py:.1}\" text-anchor=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{v:.3}</text>\n",
                if axis == "x" { "middle" } else { "end" }
            ));
        }
    }
    // legend + markers
    for (i, s) in series.iter().enumerate() {
        let ly = margin + 8.0 + 16.0 * i as f64;
        out.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{ly}\" r=\"4\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            w - margin - 110.0,
            s.color,
            w - margin - 100.0,
            ly + 4.0,
            s.label
        ));
        for p in &s.points {
            let (cx, cy) = map(*p);
            out.push_str(&format!(
                "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
                s.color
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}
