//! Minimal SVG charts of run traces.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::engine::{EventRecord, TraceRecord};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_Y: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
/// Floor applied to values on logarithmic axes.
const LOG_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    /// Piecewise constant, held until the next point.
    Steps,
    /// Vertical stems from the axis.
    Stems,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, style: Style) -> Self {
        Self { label: label.into(), points, style }
    }
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_y: bool,
}

impl Axes {
    fn y_value(&self, y: f64) -> f64 {
        if self.log_y {
            y.max(LOG_FLOOR).log10()
        } else {
            y
        }
    }

    fn px(&self, x: f64) -> f64 {
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        MARGIN_LEFT + (x - self.x0) / (self.x1 - self.x0) * plot_w
    }

    fn py(&self, y: f64) -> f64 {
        let plot_h = HEIGHT - 2.0 * MARGIN_Y;
        HEIGHT - MARGIN_Y - (self.y_value(y) - self.y0) / (self.y1 - self.y0) * plot_h
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str, log_y: bool) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_y,
            series: Vec::new(),
        }
    }

    pub fn with(mut self, series: Series) -> Self {
        self.series.push(series);
        self
    }

    fn axes(&self) -> Result<Axes> {
        let pts = || self.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
        if pts().next().is_none() {
            return Err(Error::Config(format!("nothing to plot in {:?}", self.title)));
        }
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        let probe = Axes { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0, log_y: self.log_y };
        for &(x, y) in pts() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            let y = probe.y_value(y);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if self.series.iter().any(|s| s.style == Style::Stems) && !self.log_y {
            y0 = y0.min(0.0);
        }
        let (x0, x1) = if x1 > x0 { (x0, x1) } else { padded(x0, x1) };
        let (y0, y1) = padded(y0, y1);
        Ok(Axes { x0, x1, y0, y1, log_y: self.log_y })
    }

    /// Renders the chart; fails when no series holds a finite point.
    pub fn render(&self) -> Result<String> {
        let ax = self.axes()?;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
            escape(&self.title)
        );
        self.draw_frame(&mut s, &ax);
        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            draw_series(&mut s, &ax, series, color);
            let ly = MARGIN_Y + 10.0 + 18.0 * k as f64;
            let lx = WIDTH - MARGIN_RIGHT + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        Ok(s)
    }

    fn draw_frame(&self, s: &mut String, ax: &Axes) {
        let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (top, bottom) = (MARGIN_Y, HEIGHT - MARGIN_Y);
        let _ = writeln!(
            s,
            r##"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            right - left,
            bottom - top
        );
        for k in 0..=5 {
            let f = k as f64 / 5.0;
            let x = ax.x0 + f * (ax.x1 - ax.x0);
            let px = left + f * (right - left);
            let _ = writeln!(
                s,
                r##"<line x1="{px}" y1="{bottom}" x2="{px}" y2="{}" stroke="#444"/><text x="{px}" y="{}" text-anchor="middle">{}</text>"##,
                bottom + 5.0,
                bottom + 18.0,
                tick_label(x)
            );
            let yv = ax.y0 + f * (ax.y1 - ax.y0);
            let py = bottom - f * (bottom - top);
            let label = if ax.log_y { format!("1e{yv:.1}") } else { tick_label(yv) };
            let _ = writeln!(
                s,
                r##"<line x1="{}" y1="{py}" x2="{left}" y2="{py}" stroke="#444"/><text x="{}" y="{}" text-anchor="end">{label}</text>"##,
                left - 5.0,
                left - 8.0,
                py + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (left + right) / 2.0,
            HEIGHT - 6.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            (top + bottom) / 2.0,
            escape(&self.y_label)
        );
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let svg = self.render()?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, svg)?;
        Ok(())
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn draw_series(s: &mut String, ax: &Axes, series: &Series, color: &str) {
    let pts: Vec<(f64, f64)> =
        series.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    match series.style {
        Style::Stems => {
            let base = ax.py(if ax.log_y { 10f64.powf(ax.y0) } else { 0.0 });
            for (x, y) in pts {
                let (px, py) = (ax.px(x), ax.py(y));
                let _ = writeln!(
                    s,
                    r#"<line x1="{px:.2}" y1="{base:.2}" x2="{px:.2}" y2="{py:.2}" stroke="{color}"/><circle cx="{px:.2}" cy="{py:.2}" r="2.5" fill="{color}"/>"#
                );
            }
        }
        Style::Line | Style::Steps => {
            let mut d = String::new();
            let mut prev_y: Option<f64> = None;
            for (k, (x, y)) in pts.iter().enumerate() {
                let (px, py) = (ax.px(*x), ax.py(*y));
                if k == 0 {
                    let _ = write!(d, "M{px:.2},{py:.2}");
                } else {
                    if series.style == Style::Steps {
                        let _ = write!(d, " L{px:.2},{:.2}", prev_y.unwrap());
                    }
                    let _ = write!(d, " L{px:.2},{py:.2}");
                }
                prev_y = Some(py);
            }
            let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        }
    }
}

fn require(trace: &[TraceRecord]) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::Config("cannot plot an empty trace".into()));
    }
    Ok(())
}

/// Thins a trace to roughly `target` points, keeping event rows.
fn thin(trace: &[TraceRecord], target: usize) -> impl Iterator<Item = &TraceRecord> {
    let stride = (trace.len() / target.max(1)).max(1);
    let last = trace.len() - 1;
    trace.iter().enumerate().filter(move |(n, r)| n % stride == 0 || r.event || *n == last).map(|(_, r)| r)
}

const POINTS: usize = 4000;

/// `‖(u, v)‖` for one or more labelled runs.
pub fn norm_chart(runs: &[(&str, &[TraceRecord])]) -> Result<Chart> {
    let mut chart = Chart::new("Plant state norm", "t", "||(u, v)||", true);
    for (label, trace) in runs {
        require(trace)?;
        chart = chart.with(Series::new(*label, thin(trace, POINTS).map(|r| (r.t, r.norm_uv)).collect(), Style::Line));
    }
    Ok(chart)
}

/// Held input against the continuous law.
pub fn input_chart(trace: &[TraceRecord]) -> Result<Chart> {
    require(trace)?;
    let held = trace.iter().filter(|r| r.event).map(|r| (r.t, r.u)).chain(trace.last().map(|r| (r.t, r.u)));
    Ok(Chart::new("Boundary input", "t", "U", false)
        .with(Series::new("U held", held.collect(), Style::Steps))
        .with(Series::new("Uc", thin(trace, POINTS).map(|r| (r.t, r.u_c)).collect(), Style::Line)))
}

/// Dwell time of each event against its time.
pub fn dwell_chart(events: &[EventRecord]) -> Result<Chart> {
    let pts: Vec<_> = events.iter().filter_map(|e| e.dwell.map(|d| (e.t, d))).collect();
    if pts.is_empty() {
        return Err(Error::Config("no dwell times to plot".into()));
    }
    Ok(Chart::new("Inter-event times", "t", "dwell", false).with(Series::new("dwell", pts, Style::Stems)))
}

/// `V̂` with the performance barrier.
pub fn barrier_chart(trace: &[TraceRecord]) -> Result<Chart> {
    require(trace)?;
    Ok(Chart::new("Observer Lyapunov function", "t", "value", true)
        .with(Series::new("Vhat", thin(trace, POINTS).map(|r| (r.t, r.v_hat)).collect(), Style::Line))
        .with(Series::new("barrier", thin(trace, POINTS).map(|r| (r.t, r.barrier)).collect(), Style::Line)))
}

/// `V̂` for each gain of a `c` sweep.
pub fn sweep_chart(runs: &[(f64, &[TraceRecord])]) -> Result<Chart> {
    let mut chart = Chart::new("Observer Lyapunov function per c", "t", "Vhat", true);
    for (c, trace) in runs {
        require(trace)?;
        chart = chart.with(Series::new(
            format!("c = {c}"),
            thin(trace, POINTS).map(|r| (r.t, r.v_hat)).collect(),
            Style::Line,
        ));
    }
    Ok(chart)
}

/// Writes the norm, input, dwell and barrier charts of one run into `dir`.
pub fn plot_run(dir: &Path, label: &str, trace: &[TraceRecord], events: &[EventRecord]) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let mut save = |name: &str, chart: Chart| -> Result<()> {
        let path = dir.join(name);
        chart.save(&path)?;
        written.push(path);
        Ok(())
    };
    save("norm.svg", norm_chart(&[(label, trace)])?)?;
    save("input.svg", input_chart(trace)?)?;
    save("barrier.svg", barrier_chart(trace)?)?;
    if events.iter().any(|e| e.dwell.is_some()) {
        save("dwell.svg", dwell_chart(events)?)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace() -> Vec<TraceRecord> {
        (0..50)
            .map(|k| {
                let t = k as f64 * 0.1;
                TraceRecord {
                    t,
                    y: 0.0,
                    u: (t / 1.0).floor(),
                    u_c: t,
                    d: 0.0,
                    m: 0.0,
                    f: 1.0,
                    v1: 1.0,
                    v_hat: (-t).exp(),
                    w: 0.0,
                    barrier: 2.0 * (-0.5 * t).exp(),
                    v2: None,
                    v: None,
                    norm_uv: if k == 0 { 0.0 } else { 1.0 / t },
                    norm_err: 0.0,
                    alpha_hat_1: 0.0,
                    beta_tilde_0: 0.0,
                    event: k % 10 == 0,
                }
            })
            .collect()
    }

    #[test]
    fn charts_are_well_formed_svg() {
        let tr = trace();
        for chart in [norm_chart(&[("a<b", &tr)]).unwrap(), input_chart(&tr).unwrap(), barrier_chart(&tr).unwrap()] {
            let svg = chart.render().unwrap();
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
            assert!(!svg.contains("NaN") && !svg.contains("inf"));
            assert_eq!(svg.matches("<path").count(), chart.series.len());
        }
        assert!(norm_chart(&[("a<b", &tr)]).unwrap().render().unwrap().contains("a&lt;b"));
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(norm_chart(&[("x", &[])]).is_err());
        assert!(input_chart(&[]).is_err());
        assert!(dwell_chart(&[]).is_err());
        assert!(Chart::new("t", "x", "y", false).render().is_err());
    }

    #[test]
    fn plot_run_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let tr = trace();
        let events = vec![
            EventRecord { index: 0, t: 0.0, dwell: None, d_before: 0.0, u_new: 0.0 },
            EventRecord { index: 1, t: 1.0, dwell: Some(1.0), d_before: 0.5, u_new: 1.0 },
        ];
        let files = plot_run(dir.path(), "petc", &tr, &events).unwrap();
        assert_eq!(files.len(), 4);
        let dwell = std::fs::read_to_string(dir.path().join("dwell.svg")).unwrap();
        assert_eq!(dwell.matches("<circle").count(), 1);
    }
}
