//! SVG rendering of one machine's safety sets with the fault-on trajectory.

use std::fmt::Write as _;

use crate::geometry::Point;
use crate::safety_sets::SafetySet;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 48.0;

/// Everything drawn in one machine plot.
pub struct MachinePlot<'a> {
    pub name: &'a str,
    pub admissible: &'a SafetySet,
    pub mrpi: &'a SafetySet,
    /// Pre- and post-fault equilibrium angles.
    pub equilibria: [f64; 2],
    /// Projected fault-on trajectory `(z1, z2)`.
    pub trajectory: &'a [Point],
    /// Points where the trajectory leaves the MRPI and the admissible set.
    pub crossings: [Option<Point>; 2],
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        PAD + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * PAD)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - PAD - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * PAD)
    }

    fn path(&self, pts: &[Point], close: bool) -> String {
        let mut d = String::new();
        for (k, p) in pts.iter().enumerate() {
            let z2 = p.z2.clamp(self.y0, self.y1);
            let _ = write!(
                d,
                "{}{:.2},{:.2} ",
                if k == 0 { "M" } else { "L" },
                self.x(p.z1),
                self.y(z2)
            );
        }
        if close {
            d.push('Z');
        }
        d
    }
}

pub fn render_machine(plot: &MachinePlot) -> String {
    let (lo, hi) = (plot.admissible.lower, plot.admissible.upper);
    let mut ymax: f64 = 0.5;
    for set in [plot.admissible, plot.mrpi] {
        if !set.empty {
            for p in set.rings.iter().flatten() {
                ymax = ymax.max(p.z2.abs());
            }
        }
    }
    let pad_x = 0.1 * (hi - lo);
    let (x0, x1) = (lo - pad_x, hi + pad_x);
    let path = visible_trajectory(plot.trajectory, x0, x1);
    for p in &path {
        ymax = ymax.max(p.z2.abs());
    }
    ymax = (1.1 * ymax).min(plot.admissible.z2_cap.max(0.5));
    let f = Frame {
        x0,
        x1,
        y0: -ymax,
        y1: ymax,
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<clipPath id="plot"><rect x="{PAD}" y="{PAD}" width="{:.2}" height="{:.2}"/></clipPath>"#,
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    );
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#f2f2f2" stroke="#888" stroke-dasharray="4 3"/>"##,
        f.x(lo),
        f.y(ymax),
        f.x(hi) - f.x(lo),
        f.y(-ymax) - f.y(ymax)
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#bbb"/>"##,
        f.x(x0),
        f.y(0.0),
        f.x(x1),
        f.y(0.0)
    );
    for (set, fill, stroke) in [
        (plot.admissible, "#cfe0f7", "#2a62b8"),
        (plot.mrpi, "#c9ecc9", "#2b8a2b"),
    ] {
        if set.empty {
            continue;
        }
        for ring in &set.rings {
            let _ = writeln!(
                s,
                r#"<path class="{}" d="{}" fill="{fill}" fill-opacity="0.8" stroke="{stroke}" stroke-width="1.5"/>"#,
                set.kind.label(),
                f.path(ring, true)
            );
        }
    }
    if path.len() > 1 {
        let _ = writeln!(
            s,
            r##"<path class="trajectory" d="{}" fill="none" stroke="#c0392b" stroke-width="1.5" clip-path="url(#plot)"/>"##,
            f.path(&path, false)
        );
    }
    for (eq, label) in plot.equilibria.iter().zip(["pre", "post"]) {
        let _ = writeln!(
            s,
            r#"<circle class="equilibrium-{label}" cx="{:.2}" cy="{:.2}" r="3.5" fill="black"/>"#,
            f.x(*eq),
            f.y(0.0)
        );
    }
    for (c, (label, dy)) in plot.crossings.iter().zip([("t_M", 16.0), ("t_A", -6.0)]) {
        if let Some(p) = c {
            let (cx, cy) = (f.x(p.z1), f.y(p.z2.clamp(-ymax, ymax)));
            let _ = writeln!(
                s,
                r##"<circle class="crossing" cx="{cx:.2}" cy="{cy:.2}" r="4" fill="none" stroke="#c0392b" stroke-width="1.5"/><text x="{:.2}" y="{:.2}">{label}</text>"##,
                cx + 6.0,
                cy + dy
            );
        }
    }
    if plot.mrpi.empty {
        let _ = writeln!(
            s,
            r#"<text class="note" x="{:.2}" y="{:.2}">MRPI empty</text>"#,
            PAD + 8.0,
            PAD + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        PAD / 2.0,
        xml_escape(plot.name)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">angle (rad), slab [{lo:.4}, {hi:.4}]</text>"#,
        WIDTH / 2.0,
        HEIGHT - PAD / 3.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" transform="rotate(-90 {:.2} {:.2})" text-anchor="middle">velocity (rad/s), |z2| &lt;= {ymax:.3}</text>"#,
        PAD / 3.0,
        HEIGHT / 2.0,
        PAD / 3.0,
        HEIGHT / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Leading part of the projected trajectory, up to the first angle wrap or
/// the first point outside the horizontal window.
fn visible_trajectory(points: &[Point], x0: f64, x1: f64) -> Vec<Point> {
    let mut out = Vec::new();
    for (k, p) in points.iter().enumerate() {
        if k > 0 && (p.z1 - points[k - 1].z1).abs() > 0.5 * (x1 - x0).max(1.0) {
            break;
        }
        out.push(*p);
        if p.z1 < x0 || p.z1 > x1 {
            break;
        }
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
