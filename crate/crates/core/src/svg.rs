//! Hand-written SVG for scatter plots and line charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(pts: impl Iterator<Item = &'a (f64, f64)>) -> Self {
        let mut f = Frame { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
        for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !f.x0.is_finite() {
            return Frame { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        if f.x1 - f.x0 < 1e-300 {
            f.x0 -= 0.5;
            f.x1 += 0.5;
        }
        if f.y1 - f.y0 < 1e-300 {
            f.y0 -= 0.5;
            f.y1 += 0.5;
        }
        f
    }

    fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let px = MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN);
        let py = HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN);
        (px, py)
    }
}

fn header(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(s, "<text x=\"{MARGIN}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{}</text>", escape(title));
    s
}

fn legend(s: &mut String, series: &[Series<'_>]) {
    for (i, ser) in series.iter().enumerate() {
        let y = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>",
            WIDTH - 160.0,
            ser.color,
            escape(ser.label)
        );
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter plot; later series are drawn on top.
pub fn scatter(title: &str, series: &[Series<'_>]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.iter()));
    let mut s = header(title);
    for ser in series {
        let _ = writeln!(s, "<g fill=\"{}\" fill-opacity=\"0.6\">", ser.color);
        for &p in ser.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let (px, py) = frame.map(p);
            let _ = writeln!(s, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"1.5\"/>");
        }
        s.push_str("</g>\n");
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}

/// Line chart. With `log_y` the vertical axis is log10 and non-positive values are skipped.
pub fn polyline(title: &str, series: &[Series<'_>], log_y: bool) -> String {
    let tf = |&(x, y): &(f64, f64)| if log_y { (x, if y > 0.0 { y.log10() } else { f64::NAN }) } else { (x, y) };
    let mapped: Vec<Vec<(f64, f64)>> = series.iter().map(|s| s.points.iter().map(tf).collect()).collect();
    let frame = Frame::fit(mapped.iter().flatten());
    let mut s = header(title);
    for (ser, pts) in series.iter().zip(&mapped) {
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&p| {
                let (px, py) = frame.map(p);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            ser.color,
            coords.join(" ")
        );
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}
