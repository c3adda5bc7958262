//! Minimal SVG emitters for capacity curves, spike rasters and ODE traces.

use std::fmt::Write;

pub const REGULAR_COLOR: &str = "#26c6da";
pub const BURST_COLOR: &str = "#00606b";
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn open(w: f64, h: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, s: &str) {
    let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{}</text>", escape(s));
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        let _ = writeln!(
            out,
            "<rect x=\"{l:.1}\" y=\"{t:.1}\" width=\"{w:.1}\" height=\"{h:.1}\" fill=\"none\" stroke=\"black\"/>"
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            text(out, self.px(xv), t + h + 16.0, "middle", &format!("{}", round3(xv)));
            text(out, l - 6.0, self.py(yv) + 4.0, "end", &format!("{}", round3(yv)));
        }
        text(out, l + w / 2.0, t + h + 34.0, "middle", xlabel);
        let _ = writeln!(
            out,
            "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
            t + h / 2.0,
            t + h / 2.0,
            escape(ylabel)
        );
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart with one polyline (and point markers) per series.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let frame = Frame {
        left: 60.0,
        top: 40.0,
        width: 480.0,
        height: 300.0,
        x: range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))),
        y: range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))),
    };
    let legend_h = 18.0 * series.len() as f64;
    let mut out = open(720.0, 400.0f64.max(60.0 + legend_h));
    text(&mut out, 300.0, 22.0, "middle", title);
    frame.axes(&mut out, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>");
        }
        let ly = 50.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            "<line x1=\"556\" y1=\"{ly:.1}\" x2=\"580\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>"
        );
        text(&mut out, 586.0, ly + 4.0, "start", &s.name);
    }
    out.push_str("</svg>\n");
    out
}

/// One raster row: a label and one code per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterRow {
    pub label: String,
    pub codes: Vec<u8>,
}

/// Spike raster: regular (and negative) spikes in light cyan, bursts in
/// dark cyan, rest left blank.
pub fn raster(title: &str, rows: &[RasterRow]) -> String {
    let steps = rows.iter().map(|r| r.codes.len()).max().unwrap_or(0).max(1);
    let cell_w = (480.0 / steps as f64).clamp(4.0, 40.0);
    let cell_h = 10.0;
    let (left, top) = (150.0, 40.0);
    let width = left + cell_w * steps as f64 + 20.0;
    let height = top + cell_h * rows.len() as f64 + 50.0;
    let mut out = open(width.max(400.0), height);
    text(&mut out, width.max(400.0) / 2.0, 22.0, "middle", title);
    for (i, row) in rows.iter().enumerate() {
        let y = top + cell_h * i as f64;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"8\">{}</text>",
            left - 4.0,
            y + cell_h - 2.0,
            escape(&row.label)
        );
        for (t, &c) in row.codes.iter().enumerate() {
            let color = match c {
                0 => continue,
                2 => BURST_COLOR,
                _ => REGULAR_COLOR,
            };
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\"/>",
                left + cell_w * t as f64,
                cell_w - 1.0,
                cell_h - 1.0
            );
        }
    }
    let ly = top + cell_h * rows.len() as f64 + 20.0;
    for (k, (name, color)) in [("regular", REGULAR_COLOR), ("burst", BURST_COLOR)].iter().enumerate() {
        let x = left + 90.0 * k as f64;
        let _ = writeln!(out, "<rect x=\"{x:.1}\" y=\"{ly:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>");
        text(&mut out, x + 14.0, ly + 9.0, "start", name);
    }
    text(&mut out, left - 4.0, ly + 9.0, "end", "timestep →");
    out.push_str("</svg>\n");
    out
}

/// Membrane potential and T-current gate traces with spike ticks.
pub fn trace(title: &str, dt: f64, v: &[f64], h: &[f64], spike_times: &[f64], v_th: f64) -> String {
    let t_end = dt * v.len().max(1) as f64;
    let mut out = open(620.0, 470.0);
    text(&mut out, 310.0, 22.0, "middle", title);
    let (vlo, vhi) = range(v.iter().copied().chain([v_th]));
    let top = Frame {
        left: 60.0,
        top: 40.0,
        width: 520.0,
        height: 200.0,
        x: (0.0, t_end),
        y: (vlo, vhi),
    };
    let bottom = Frame {
        left: 60.0,
        top: 300.0,
        width: 520.0,
        height: 120.0,
        x: (0.0, t_end),
        y: (0.0, 1.0),
    };
    top.axes(&mut out, "", "v");
    bottom.axes(&mut out, "time", "h");
    // Thin long traces so the file stays small.
    let stride = (v.len() / 2000).max(1);
    let poly = |f: &Frame, ys: &[f64]| -> String {
        ys.iter()
            .enumerate()
            .step_by(stride)
            .map(|(k, &y)| format!("{:.2},{:.2}", f.px(dt * (k + 1) as f64), f.py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(
        out,
        "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
        top.left,
        top.left + top.width,
        y = top.py(v_th)
    );
    let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\"/>", poly(&top, v), PALETTE[0]);
    let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\"/>", poly(&bottom, h), PALETTE[1]);
    for &s in spike_times {
        let x = top.px(s);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{:.1}\" x2=\"{x:.2}\" y2=\"{:.1}\" stroke=\"black\"/>",
            top.top - 10.0,
            top.top - 2.0
        );
    }
    out.push_str("</svg>\n");
    out
}
