//! Minimal SVG writer for line plots and heatmaps.
//!
//! Output depends only on the data: fixed canvas, fixed palette, fixed
//! number formatting, no timestamps.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    Empty(String),
    #[error("{0}")]
    InvalidData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Stroke opacity; background ensembles use a low value.
    pub opacity: f64,
    pub show_in_legend: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { label: label.into(), x, y, opacity: 1.0, show_in_legend: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    /// Plot `1 − y` on a log axis instead of `y`.
    pub log_infidelity: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    /// Row-major, `values[iy * nx + ix]`; NaN cells are left blank.
    pub values: Vec<f64>,
    /// Label of the coloured quantity.
    pub value_label: String,
    pub color_scale: Scale,
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.0e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_L + plot_w() / 2.0,
        escape(title)
    );
}

fn plot_w() -> f64 {
    WIDTH - MARGIN_L - MARGIN_R
}

fn plot_h() -> f64 {
    HEIGHT - MARGIN_T - MARGIN_B
}

/// One axis mapping data to pixels.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    scale: Scale,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, scale: Scale) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = match scale {
                Scale::Log if v > 0.0 => v.log10(),
                Scale::Log => continue,
                Scale::Linear => v,
            };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            return None;
        }
        if scale == Scale::Log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Some(Self { lo, hi, scale })
    }

    fn unit(&self, v: f64) -> Option<f64> {
        let v = match self.scale {
            Scale::Log if v > 0.0 => v.log10(),
            Scale::Log => return None,
            Scale::Linear => v,
        };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        match self.scale {
            Scale::Log => {
                let step = ((self.hi - self.lo) / 6.0).ceil().max(1.0) as i32;
                (self.lo as i32..=self.hi as i32)
                    .step_by(step as usize)
                    .map(|e| ((e as f64 - self.lo) / (self.hi - self.lo), format!("1e{e}")))
                    .collect()
            }
            Scale::Linear => {
                let raw = (self.hi - self.lo) / 5.0;
                let mag = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
                let mut t = (self.lo / step).ceil() * step;
                let mut out = Vec::new();
                while t <= self.hi + 1e-9 * step {
                    out.push(((t - self.lo) / (self.hi - self.lo), fmt_num(t)));
                    t += step;
                }
                out
            }
        }
    }
}

fn frame(out: &mut String, x: &Axis, y: &Axis, x_label: &str, y_label: &str) {
    let (w, h) = (plot_w(), plot_h());
    let _ = writeln!(out, r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{w}" height="{h}" fill="none" stroke="black"/>"#);
    for (u, label) in x.ticks() {
        let px = MARGIN_L + u * w;
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            MARGIN_T + h,
            MARGIN_T + h + 5.0,
            MARGIN_T + h + 18.0
        );
    }
    for (u, label) in y.ticks() {
        let py = MARGIN_T + (1.0 - u) * h;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{MARGIN_L}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#,
            MARGIN_L - 5.0,
            MARGIN_L - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + w / 2.0,
        HEIGHT - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        MARGIN_T + h / 2.0,
        MARGIN_T + h / 2.0,
        escape(y_label)
    );
}

pub fn line_plot(series: &[Series], opts: &LinePlot) -> Result<String, PlotError> {
    if series.iter().all(|s| s.x.is_empty()) {
        return Err(PlotError::Empty(format!("line plot `{}` has no points", opts.title)));
    }
    if let Some(s) = series.iter().find(|s| s.x.len() != s.y.len()) {
        return Err(PlotError::InvalidData(format!("series `{}` has {} x and {} y values", s.label, s.x.len(), s.y.len())));
    }
    let y_of = |v: f64| if opts.log_infidelity { 1.0 - v } else { v };
    let y_scale = if opts.log_infidelity { Scale::Log } else { opts.y_scale };
    let xa = Axis::fit(series.iter().flat_map(|s| s.x.iter().copied()), opts.x_scale)
        .ok_or_else(|| PlotError::Empty("no x value fits the axis".into()))?;
    let ya = Axis::fit(series.iter().flat_map(|s| s.y.iter().map(|&v| y_of(v))), y_scale)
        .ok_or_else(|| PlotError::Empty("no y value fits the axis".into()))?;
    let y_label = if opts.log_infidelity { format!("1 − {}", opts.y_label) } else { opts.y_label.clone() };

    let mut out = String::new();
    header(&mut out, &opts.title);
    frame(&mut out, &xa, &ya, &opts.x_label, &y_label);
    let (w, h) = (plot_w(), plot_h());
    let mut legend = 0;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (&x, &y) in s.x.iter().zip(&s.y) {
            match (xa.unit(x), ya.unit(y_of(y))) {
                (Some(ux), Some(uy)) => {
                    let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, MARGIN_L + ux * w, MARGIN_T + (1.0 - uy) * h);
                    pen_down = true;
                }
                _ => pen_down = false,
            }
        }
        if !d.is_empty() {
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-opacity="{}"/>"#,
                d.trim_end(),
                s.opacity
            );
        }
        if s.show_in_legend {
            let ly = MARGIN_T + 10.0 + 18.0 * legend as f64;
            let lx = MARGIN_L + w + 12.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(&s.label)
            );
            legend += 1;
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Viridis-like ramp through five anchors.
fn color_ramp(u: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] =
        [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let u = u.clamp(0.0, 1.0) * 4.0;
    let i = (u.floor() as usize).min(3);
    let f = u - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

pub fn heatmap(map: &Heatmap) -> Result<String, PlotError> {
    let (nx, ny) = (map.x_values.len(), map.y_values.len());
    if nx == 0 || ny == 0 {
        return Err(PlotError::Empty(format!("heatmap `{}` has an empty axis", map.title)));
    }
    if map.values.len() != nx * ny {
        return Err(PlotError::InvalidData(format!("heatmap needs {} values, got {}", nx * ny, map.values.len())));
    }
    let ca = Axis::fit(map.values.iter().copied(), map.color_scale)
        .ok_or_else(|| PlotError::Empty(format!("heatmap `{}` has no plottable value", map.title)))?;

    let mut out = String::new();
    header(&mut out, &map.title);
    let (w, h) = (plot_w(), plot_h());
    let (cw, ch) = (w / nx as f64, h / ny as f64);
    for iy in 0..ny {
        for ix in 0..nx {
            let v = map.values[iy * nx + ix];
            let Some(u) = ca.unit(v) else { continue };
            let (x0, y0) = (MARGIN_L + ix as f64 * cw, MARGIN_T + (ny - 1 - iy) as f64 * ch);
            let _ = writeln!(
                out,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{cw:.2}" height="{ch:.2}" fill="{}"/><text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10" fill="{}">{}</text>"#,
                color_ramp(u),
                x0 + cw / 2.0,
                y0 + ch / 2.0 + 4.0,
                if u > 0.6 { "black" } else { "white" },
                fmt_num(v)
            );
        }
    }
    let _ = writeln!(out, r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{w}" height="{h}" fill="none" stroke="black"/>"#);
    for (ix, x) in map.x_values.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_L + (ix as f64 + 0.5) * cw,
            MARGIN_T + h + 18.0,
            fmt_num(*x)
        );
    }
    for (iy, y) in map.y_values.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_L - 8.0,
            MARGIN_T + (ny - 1 - iy) as f64 * ch + ch / 2.0 + 4.0,
            fmt_num(*y)
        );
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, MARGIN_L + w / 2.0, HEIGHT - 18.0, escape(&map.x_label));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        MARGIN_T + h / 2.0,
        MARGIN_T + h / 2.0,
        escape(&map.y_label)
    );

    // colour bar
    let (bx, bw) = (MARGIN_L + w + 30.0, 18.0);
    for k in 0..50 {
        let u0 = k as f64 / 50.0;
        let _ = writeln!(
            out,
            r#"<rect x="{bx:.1}" y="{:.2}" width="{bw}" height="{:.2}" fill="{}"/>"#,
            MARGIN_T + (1.0 - u0 - 0.02) * h,
            h / 50.0 + 0.5,
            color_ramp(u0 + 0.01)
        );
    }
    for (u, label) in ca.ticks() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}">{label}</text>"#,
            bx + bw + 6.0,
            MARGIN_T + (1.0 - u) * h + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        bx + bw / 2.0,
        MARGIN_T - 8.0,
        escape(&map.value_label)
    );
    out.push_str("</svg>\n");
    Ok(out)
}
