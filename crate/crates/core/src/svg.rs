//! Minimal static SVG 1.1 line plots and categorical heatmaps.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Shaded band `(lower, upper)` around the line.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
    pub dashed: bool,
    pub width: f64,
}

impl Series {
    pub fn new(name: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        Self { name: name.into(), xs, ys, band: None, dashed: false, width: 1.5 }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }

    pub fn wide(mut self) -> Self {
        self.width = 5.0;
        self
    }

    pub fn with_band(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.band = Some((lower, upper));
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    /// Fixed y-range; computed from the data when absent.
    pub y_range: Option<(f64, f64)>,
    pub series: Vec<Series>,
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl LinePlot {
    pub fn render(&self) -> String {
        let tx = |x: f64| if self.log_x { x.max(f64::MIN_POSITIVE).log10() } else { x };
        let finite = |v: &f64| v.is_finite();
        let xs: Vec<f64> = self
            .series
            .iter()
            .flat_map(|s| s.xs.iter().copied())
            .filter(|x| !self.log_x || *x > 0.0)
            .map(tx)
            .filter(finite)
            .collect();
        let mut ys: Vec<f64> = self.series.iter().flat_map(|s| s.ys.iter().copied()).filter(finite).collect();
        for s in &self.series {
            if let Some((lo, hi)) = &s.band {
                ys.extend(lo.iter().chain(hi).copied().filter(finite));
            }
        }
        let (x0, x1) = bounds(&xs);
        let (y0, y1) = self.y_range.unwrap_or_else(|| bounds(&ys));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut out = header(&format!(r#"<clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/></clipPath>"#));
        let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        let _ = writeln!(out, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>"##);
        // ticks
        let xticks: Vec<(f64, String)> = if self.log_x {
            (x0.ceil() as i64..=x1.floor() as i64).map(|e| (10f64.powi(e as i32), format!("1e{e}"))).collect()
        } else {
            nice_ticks(x0, x1).into_iter().map(|v| (v, fmt_tick(v))).collect()
        };
        for (v, label) in xticks {
            let x = px(v);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{0}" x2="{x:.2}" y2="{1}" stroke="#000"/><text x="{x:.2}" y="{2}" text-anchor="middle">{label}</text>"##,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 18.0
            );
        }
        for v in nice_ticks(y0, y1) {
            let y = py(v);
            let _ = writeln!(
                out,
                r##"<line x1="{0}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#000"/><text x="{1}" y="{2:.2}" text-anchor="end">{3}</text>"##,
                LEFT - 5.0,
                LEFT - 8.0,
                y + 4.0,
                fmt_tick(v)
            );
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, esc(&self.x_label));
        let _ = writeln!(
            out,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );
        let _ = writeln!(out, r#"<g clip-path="url(#plot)">"#);
        for (n, s) in self.series.iter().enumerate() {
            let color = PALETTE[n % PALETTE.len()];
            let pts = |ys: &[f64]| -> Vec<(f64, f64)> {
                s.xs.iter()
                    .zip(ys)
                    .filter(|(x, y)| y.is_finite() && (!self.log_x || **x > 0.0))
                    .map(|(x, y)| (px(*x), py(*y)))
                    .collect()
            };
            if let Some((lo, hi)) = &s.band {
                let mut poly = pts(hi);
                poly.extend(pts(lo).into_iter().rev());
                let _ = writeln!(out, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, path(&poly));
            }
            let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let opacity = if s.width > 3.0 { r#" stroke-opacity="0.35""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{}"{dash}{opacity}/>"#,
                path(&pts(&s.ys)),
                s.width
            );
        }
        out.push_str("</g>\n");
        for (n, s) in self.series.iter().enumerate() {
            let y = TOP + 10.0 + 18.0 * n as f64;
            let x = WIDTH - RIGHT + 10.0;
            let _ = writeln!(
                out,
                r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                x + 20.0,
                PALETTE[n % PALETTE.len()],
                x + 25.0,
                y + 4.0,
                esc(&s.name)
            );
        }
        out + "</svg>\n"
    }
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.03 * (hi - lo);
    (lo - pad, hi + pad)
}

fn path(pts: &[(f64, f64)]) -> String {
    pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
}

fn header(defs: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n<defs>{defs}</defs>\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n"
    )
}

/// Categorical heatmap; `cells[r][c]` is drawn with row 0 at the bottom.
/// Negative categories are drawn grey.
#[derive(Debug, Clone, Default)]
pub struct Heatmap {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub cells: Vec<Vec<i64>>,
    pub legend: Vec<String>,
}

impl Heatmap {
    pub fn render(&self) -> String {
        let rows = self.cells.len().max(1);
        let cols = self.cells.first().map_or(1, |r| r.len().max(1));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let (cw, ch) = (pw / cols as f64, ph / rows as f64);
        let mut out = header("");
        let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        for (r, row) in self.cells.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let color = if *v < 0 { "#999999" } else { PALETTE[*v as usize % PALETTE.len()] };
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.75"/>"#,
                    LEFT + c as f64 * cw,
                    TOP + (rows - 1 - r) as f64 * ch,
                    cw + 0.05,
                    ch + 0.05
                );
            }
        }
        let _ = writeln!(out, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>"##);
        for v in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let x = LEFT + v * pw;
            let y = TOP + (1.0 - v) * ph;
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{0}" text-anchor="middle">{v}</text><text x="{1}" y="{2:.2}" text-anchor="end">{v}</text>"#,
                TOP + ph + 18.0,
                LEFT - 8.0,
                y + 4.0
            );
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, esc(&self.x_label));
        let _ = writeln!(
            out,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );
        for (n, name) in self.legend.iter().enumerate() {
            let y = TOP + 18.0 * n as f64;
            let x = WIDTH - RIGHT + 10.0;
            let color = if n + 1 == self.legend.len() && name == "unconverged" { "#999999" } else { PALETTE[n % PALETTE.len()] };
            let _ = writeln!(
                out,
                r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
                x + 18.0,
                y + 10.0,
                esc(name)
            );
        }
        out + "</svg>\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_well_formed() {
        let p = LinePlot {
            title: "a < b".into(),
            x_label: "t".into(),
            y_label: "P(S)".into(),
            log_x: true,
            y_range: Some((0.0, 1.0)),
            series: vec![
                Series::new("x", vec![1.0, 10.0, 100.0], vec![0.1, 0.5, 0.9]).with_band(vec![0.0; 3], vec![1.0; 3]),
                Series::new("y", vec![0.0, 10.0], vec![f64::NAN, 0.3]).dashed(),
            ],
        };
        let s = p.render();
        assert!(s.starts_with("<?xml") && s.ends_with("</svg>\n"));
        assert!(s.contains("a &lt; b"));
        assert!(s.contains("<polygon") && s.contains("stroke-dasharray"));
        assert!(!s.contains("NaN") && !s.contains("inf"));
        assert_eq!(s.matches("<svg").count(), 1);
    }

    #[test]
    fn heatmap_cells() {
        let h = Heatmap { cells: vec![vec![0, 1], vec![-1, 0]], legend: vec!["a".into(), "b".into(), "unconverged".into()], ..Default::default() };
        let s = h.render();
        assert_eq!(s.matches("fill-opacity=\"0.75\"").count(), 4);
        assert!(s.contains("#999999"));
    }

    #[test]
    fn ticks() {
        let t = nice_ticks(0.0, 1.0);
        assert_eq!(t.len(), 6);
        assert!((t[3] - 0.6).abs() < 1e-15);
        assert_eq!(fmt_tick(0.5), "0.5");
        assert_eq!(fmt_tick(20000.0), "2e4");
    }
}
