//! Minimal SVG quiver plots and heatmaps.

use std::fmt::Write as _;

use sgdpo_core::gradflow::{FieldPoint, Landscape};

const SIZE: f64 = 640.0;
const PAD: f64 = 48.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / span(self.x) * (SIZE - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        SIZE - PAD - (y - self.y.0) / span(self.y) * (SIZE - 2.0 * PAD)
    }
}

fn span((lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

fn bounds(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn open(s: &mut String, title: &str, frame: &Frame, xlabel: &str, ylabel: &str) {
    let _ = write!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{title}</text>
<rect x="{PAD}" y="{PAD}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>
<text x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>
<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{ylabel}</text>
"##,
        SIZE / 2.0,
        SIZE - 2.0 * PAD,
        SIZE - 2.0 * PAD,
        SIZE / 2.0,
        SIZE - 12.0,
        SIZE / 2.0,
        SIZE / 2.0,
    );
    for (v, anchor) in [(frame.x.0, "start"), (frame.x.1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{v:.3}</text>"#,
            frame.px(v),
            SIZE - PAD + 16.0
        );
    }
    for v in [frame.y.0, frame.y.1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            PAD - 4.0,
            frame.py(v) + 4.0
        );
    }
}

/// Arrows scaled so the longest spans one grid cell.
pub fn quiver(points: &[FieldPoint], title: &str) -> String {
    let frame = Frame {
        x: bounds(points.iter().map(|p| p.x1)),
        y: bounds(points.iter().map(|p| p.x2)),
    };
    let n = (points.len() as f64).sqrt().max(2.0);
    let cell = (SIZE - 2.0 * PAD) / (n - 1.0);
    let longest = points
        .iter()
        .map(|p| p.dx1.hypot(p.dx2))
        .fold(0.0, f64::max);
    let scale = if longest > 0.0 {
        0.9 * cell / longest
    } else {
        0.0
    };

    let mut s = String::new();
    open(&mut s, title, &frame, "X1", "X2");
    s.push_str(r##"<g stroke="#1f4e9c" fill="#1f4e9c" stroke-width="1">"##);
    s.push('\n');
    for p in points {
        let (x0, y0) = (frame.px(p.x1), frame.py(p.x2));
        let (dx, dy) = (p.dx1 * scale, -p.dx2 * scale);
        let (x1, y1) = (x0 + dx, y0 + dy);
        let _ = writeln!(
            s,
            r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}"/>"#
        );
        let len = dx.hypot(dy);
        if len > 1e-9 {
            let (ux, uy) = (dx / len, dy / len);
            let h = (0.35 * len).min(4.0);
            let (bx, by) = (x1 - ux * h, y1 - uy * h);
            let (nx, ny) = (-uy * h * 0.5, ux * h * 0.5);
            let _ = writeln!(
                s,
                r#"<polygon points="{x1:.2},{y1:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
                bx + nx,
                by + ny,
                bx - nx,
                by - ny
            );
        }
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn ramp(t: f64) -> (u8, u8, u8) {
    // dark blue → teal → yellow
    let stops = [
        (0.0, (40, 30, 120)),
        (0.5, (30, 150, 140)),
        (1.0, (250, 230, 60)),
    ];
    let t = t.clamp(0.0, 1.0);
    let (a, b) = if t <= 0.5 {
        (stops[0], stops[1])
    } else {
        (stops[1], stops[2])
    };
    let u = (t - a.0) / (b.0 - a.0);
    let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * u).round() as u8;
    (
        mix(a.1 .0, b.1 .0),
        mix(a.1 .1, b.1 .1),
        mix(a.1 .2, b.1 .2),
    )
}

/// Cells coloured by value; `a` runs along the horizontal axis.
pub fn heatmap(l: &Landscape, title: &str, alabel: &str, blabel: &str) -> String {
    let frame = Frame {
        x: bounds(l.a.iter().copied()),
        y: bounds(l.b.iter().copied()),
    };
    let (vmin, vmax) = bounds(l.values.iter().copied().filter(|v| v.is_finite()));
    let w = (SIZE - 2.0 * PAD) / l.a.len() as f64;
    let h = (SIZE - 2.0 * PAD) / l.b.len() as f64;
    let mut s = String::new();
    open(&mut s, title, &frame, alabel, blabel);
    for i in 0..l.a.len() {
        for j in 0..l.b.len() {
            let v = l.get(i, j);
            let t = if vmax > vmin {
                (v - vmin) / (vmax - vmin)
            } else {
                0.5
            };
            let (r, g, b) = ramp(t);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({r},{g},{b})"/>"#,
                PAD + i as f64 * w,
                SIZE - PAD - (j + 1) as f64 * h,
                w + 0.05,
                h + 0.05
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="40" text-anchor="end">min {vmin:.4e}  max {vmax:.4e}</text>"#,
        SIZE - PAD
    );
    s.push_str("</svg>\n");
    s
}
