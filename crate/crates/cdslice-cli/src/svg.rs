//! Dependency-free SVG charts. Output is plain text with a stable element
//! order and fixed number formatting, so rendered files are diffable and
//! byte-deterministic for identical inputs.
//!
//! Four chart kinds cover the report surface: a line chart (training loss,
//! validation score), a scatter with the y = x reference line (truth vs
//! prediction), an indexed bar chart (per-slice sensitivity), and a
//! histogram over fixed-width bins (residual distribution).

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 560.0;
const MARGIN_LEFT: f64 = 78.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 58.0;

const ACCENT: &str = "#2563eb";
const ACCENT_NEG: &str = "#dc2626";
const AXIS: &str = "#1f2937";
const GRID: &str = "#e5e7eb";

/// Compact, locale-free number label: plain decimal in a readable range,
/// scientific outside it, trailing zeros trimmed.
fn fmt(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let s = if (1e-4..1e6).contains(&a) {
        let raw = format!("{v:.6}");
        let trimmed = raw.trim_end_matches('0').trim_end_matches('.');
        trimmed.to_string()
    } else {
        format!("{v:.3e}")
    };
    s
}

/// Pixel coordinate with sub-pixel precision but stable text form.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Largest of 1, 2, 2.5, 5 times a power of ten that divides `range` into
/// at least `target` steps — the usual "nice ticks" rule.
fn nice_step(range: f64, target: usize) -> f64 {
    debug_assert!(range > 0.0 && target > 0);
    let raw = range / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    for mult in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if raw <= mult * mag {
            return mult * mag;
        }
    }
    10.0 * mag
}

fn ticks(min: f64, max: f64, target: usize) -> Vec<f64> {
    let step = nice_step(max - min, target);
    let first = (min / step).ceil() as i64;
    let last = (max / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Data-space window with a small margin so points never sit on the frame.
#[derive(Debug, Clone, Copy)]
struct Span {
    min: f64,
    max: f64,
}

impl Span {
    fn of(values: impl IntoIterator<Item = f64>) -> Span {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            return Span { min: 0.0, max: 1.0 };
        }
        Span { min, max }
    }

    fn include(mut self, v: f64) -> Span {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        self
    }

    fn padded(mut self, fraction: f64) -> Span {
        let pad = if self.max > self.min { (self.max - self.min) * fraction } else { self.min.abs().max(1.0) * fraction };
        self.min -= pad;
        self.max += pad;
        self
    }
}

/// The shared chart scaffold: background, axes, grid, ticks, labels, title.
struct Frame {
    x: Span,
    y: Span,
}

impl Frame {
    fn px_x(&self, v: f64) -> f64 {
        MARGIN_LEFT + (v - self.x.min) / (self.x.max - self.x.min) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn px_y(&self, v: f64) -> f64 {
        // SVG y grows downward; data y grows upward.
        HEIGHT - MARGIN_BOTTOM - (v - self.y.min) / (self.y.max - self.y.min) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    fn open(&self, title: &str, x_label: &str, y_label: &str) -> String {
        let mut s = String::with_capacity(4096);
        s.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
        ));
        s.push_str(&format!(
            "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
        ));
        s.push_str(&format!(
            "  <text x=\"{}\" y=\"26\" font-size=\"17\" fill=\"{AXIS}\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>\n",
            px(WIDTH / 2.0),
            esc(title)
        ));

        // Grid and tick labels.
        for tx in ticks(self.x.min, self.x.max, 6) {
            let gx = px(self.px_x(tx));
            s.push_str(&format!(
                "  <line x1=\"{gx}\" y1=\"{}\" x2=\"{gx}\" y2=\"{}\" stroke=\"{GRID}\"/>\n",
                px(MARGIN_TOP),
                px(HEIGHT - MARGIN_BOTTOM)
            ));
            s.push_str(&format!(
                "  <text x=\"{gx}\" y=\"{}\" font-size=\"12\" fill=\"{AXIS}\" text-anchor=\"middle\">{}</text>\n",
                px(HEIGHT - MARGIN_BOTTOM + 18.0),
                fmt(tx)
            ));
        }
        for ty in ticks(self.y.min, self.y.max, 6) {
            let gy = px(self.px_y(ty));
            s.push_str(&format!(
                "  <line x1=\"{}\" y1=\"{gy}\" x2=\"{}\" y2=\"{gy}\" stroke=\"{GRID}\"/>\n",
                px(MARGIN_LEFT),
                px(WIDTH - MARGIN_RIGHT)
            ));
            s.push_str(&format!(
                "  <text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{AXIS}\" text-anchor=\"end\">{}</text>\n",
                px(MARGIN_LEFT - 8.0),
                px(self.px_y(ty) + 4.0),
                fmt(ty)
            ));
        }

        // Axes on top of the grid.
        s.push_str(&format!(
            "  <line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"{AXIS}\" stroke-width=\"1.5\"/>\n",
            l = px(MARGIN_LEFT),
            r = px(WIDTH - MARGIN_RIGHT),
            b = px(HEIGHT - MARGIN_BOTTOM)
        ));
        s.push_str(&format!(
            "  <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"{AXIS}\" stroke-width=\"1.5\"/>\n",
            l = px(MARGIN_LEFT),
            t = px(MARGIN_TOP),
            b = px(HEIGHT - MARGIN_BOTTOM)
        ));

        s.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"14\" fill=\"{AXIS}\" text-anchor=\"middle\">{}</text>\n",
            px((MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0),
            px(HEIGHT - 14.0),
            esc(x_label)
        ));
        s.push_str(&format!(
            "  <text x=\"20\" y=\"{}\" font-size=\"14\" fill=\"{AXIS}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">{}</text>\n",
            px((MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0),
            px((MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0),
            esc(y_label)
        ));
        s
    }
}

fn close(mut body: String) -> String {
    body.push_str("</svg>\n");
    body
}

fn empty_chart(title: &str, note: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    s.push_str(&format!("  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "  <text x=\"{}\" y=\"26\" font-size=\"17\" fill=\"{AXIS}\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>\n",
        px(WIDTH / 2.0),
        esc(title)
    ));
    s.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"14\" fill=\"{AXIS}\" text-anchor=\"middle\">{}</text>\n",
        px(WIDTH / 2.0),
        px(HEIGHT / 2.0),
        esc(note)
    ));
    close(s)
}

/// Polyline through `(x, y)` points in the given order.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(f64, f64)]) -> String {
    if series.is_empty() {
        return empty_chart(title, "no data points");
    }
    let frame = Frame {
        x: Span::of(series.iter().map(|p| p.0)).padded(0.03),
        y: Span::of(series.iter().map(|p| p.1)).padded(0.06),
    };
    let mut s = frame.open(title, x_label, y_label);
    let pts: Vec<String> = series
        .iter()
        .map(|&(x, y)| format!("{},{}", px(frame.px_x(x)), px(frame.px_y(y))))
        .collect();
    s.push_str(&format!(
        "  <polyline class=\"series\" points=\"{}\" fill=\"none\" stroke=\"{ACCENT}\" stroke-width=\"2\"/>\n",
        pts.join(" ")
    ));
    if series.len() == 1 {
        s.push_str(&format!(
            "  <circle class=\"series\" cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"{ACCENT}\"/>\n",
            px(frame.px_x(series[0].0)),
            px(frame.px_y(series[0].1))
        ));
    }
    close(s)
}

/// Scatter of `(x, y)` points plus the y = x reference diagonal, for
/// truth-versus-prediction views where perfect agreement is the diagonal.
pub fn scatter_with_identity(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    if points.is_empty() {
        return empty_chart(title, "no data points");
    }
    // One shared span keeps the reference line at 45 degrees visually
    // meaningful: both axes cover the same interval.
    let joint = Span::of(points.iter().flat_map(|&(x, y)| [x, y])).padded(0.06);
    let frame = Frame { x: joint, y: joint };
    let mut s = frame.open(title, x_label, y_label);
    s.push_str(&format!(
        "  <line class=\"identity\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{AXIS}\" stroke-width=\"1\" stroke-dasharray=\"6 4\"/>\n",
        px(frame.px_x(joint.min)),
        px(frame.px_y(joint.min)),
        px(frame.px_x(joint.max)),
        px(frame.px_y(joint.max))
    ));
    for &(x, y) in points {
        s.push_str(&format!(
            "  <circle class=\"point\" cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{ACCENT}\" fill-opacity=\"0.55\"/>\n",
            px(frame.px_x(x)),
            px(frame.px_y(y))
        ));
    }
    close(s)
}

/// One bar per index. Negative values hang below the zero baseline and are
/// drawn in the contrast color.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, values: &[f64]) -> String {
    if values.is_empty() {
        return empty_chart(title, "no bars");
    }
    let frame = Frame {
        x: Span { min: -0.75, max: values.len() as f64 - 0.25 },
        y: Span::of(values.iter().copied()).include(0.0).padded(0.06),
    };
    let mut s = frame.open(title, x_label, y_label);
    let zero = frame.px_y(0.0);
    for (i, &v) in values.iter().enumerate() {
        let x0 = frame.px_x(i as f64 - 0.4);
        let x1 = frame.px_x(i as f64 + 0.4);
        let yv = frame.px_y(v);
        let (top, height) = if yv <= zero { (yv, zero - yv) } else { (zero, yv - zero) };
        let color = if v < 0.0 { ACCENT_NEG } else { ACCENT };
        s.push_str(&format!(
            "  <rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\"/>\n",
            px(x0),
            px(top),
            px(x1 - x0),
            px(height)
        ));
    }
    s.push_str(&format!(
        "  <line class=\"baseline\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{AXIS}\"/>\n",
        px(MARGIN_LEFT),
        px(zero),
        px(WIDTH - MARGIN_RIGHT),
        px(zero)
    ));
    close(s)
}

/// Histogram over fixed-width bins: `bins` pairs each bin's inclusive left
/// edge with its count, and `bin_width` sets every bar's footprint.
pub fn histogram(title: &str, x_label: &str, y_label: &str, bins: &[(f64, usize)], bin_width: f64) -> String {
    if bins.is_empty() {
        return empty_chart(title, "no residuals");
    }
    let frame = Frame {
        x: Span {
            min: bins.first().map(|b| b.0).unwrap_or(0.0),
            max: bins.last().map(|b| b.0 + bin_width).unwrap_or(1.0),
        }
        .padded(0.03),
        y: Span::of(bins.iter().map(|b| b.1 as f64)).include(0.0).padded(0.06),
    };
    let mut s = frame.open(title, x_label, y_label);
    let zero = frame.px_y(0.0);
    for &(start, count) in bins {
        if count == 0 {
            continue;
        }
        let x0 = frame.px_x(start);
        let x1 = frame.px_x(start + bin_width);
        let top = frame.px_y(count as f64);
        s.push_str(&format!(
            "  <rect class=\"bin\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{ACCENT}\" stroke=\"white\" stroke-width=\"0.5\"/>\n",
            px(x0),
            px(top),
            px(x1 - x0),
            px(zero - top)
        ));
    }
    close(s)
}
