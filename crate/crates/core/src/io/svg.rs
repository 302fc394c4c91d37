use std::fmt::Write;

use crate::events::DetectionSegment;
use crate::sim::{EventClass, EventSegment};

const WIDTH: f64 = 960.0;
const LEFT: f64 = 200.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const LANE: f64 = 14.0;
const CLASS_GAP: f64 = 10.0;
const COLORS: [&str; 5] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"];

/// Timeline of one trial: per class a ground-truth lane with a prediction lane
/// below it, over a time axis in seconds. Prediction bar opacity is the score.
///
/// Elements are emitted in a fixed order (class order, then start time), and
/// every number is printed with two decimals, so equal inputs give equal bytes.
pub fn render_timeline_svg(trial_id: u32, duration_s: f64, gt: &[EventSegment], dets: &[DetectionSegment]) -> String {
    let duration = duration_s.max(1.0);
    let span = WIDTH - LEFT - RIGHT;
    let x = |t: f64| LEFT + span * (t.clamp(0.0, duration) / duration);
    let block = 2.0 * LANE + CLASS_GAP;
    let axis_y = TOP + block * EventClass::ALL.len() as f64;
    let height = axis_y + 40.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT:.2}" y="18.00">trial {trial_id}: ground truth (upper) vs prediction (lower)</text>"#
    );

    for class in EventClass::ALL {
        let y0 = TOP + block * class.index() as f64;
        let color = COLORS[class.index()];
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y0 + LANE + 4.0,
            class.name()
        );
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT:.2}" y="{y0:.2}" width="{span:.2}" height="{:.2}" fill="#f4f4f4"/>"##,
            2.0 * LANE
        );
        let mut g: Vec<&EventSegment> = gt.iter().filter(|e| e.class == class).collect();
        g.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
        for e in g {
            let _ = writeln!(
                s,
                r#"<rect class="gt" x="{:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                x(e.start_s),
                x(e.end_s) - x(e.start_s),
                LANE - 1.0
            );
        }
        let mut d: Vec<&DetectionSegment> = dets.iter().filter(|e| e.class == class).collect();
        d.sort_by(|a, b| {
            a.start_s
                .total_cmp(&b.start_s)
                .then(a.end_s.total_cmp(&b.end_s))
                .then(b.score.total_cmp(&a.score))
        });
        for e in d {
            let _ = writeln!(
                s,
                r#"<rect class="pred" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="{:.2}"/>"#,
                x(e.start_s),
                y0 + LANE,
                x(e.end_s) - x(e.start_s),
                LANE - 1.0,
                e.score.clamp(0.0, 1.0)
            );
        }
    }

    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.2}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="black"/>"#,
        LEFT + span
    );
    let step = if duration <= 120.0 {
        10.0
    } else if duration <= 600.0 {
        60.0
    } else {
        300.0
    };
    let mut t = 0.0;
    while t <= duration + 1e-9 {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{axis_y:.2}" x2="{0:.2}" y2="{1:.2}" stroke="black"/><text x="{0:.2}" y="{2:.2}" text-anchor="middle">{3}</text>"#,
            x(t),
            axis_y + 4.0,
            axis_y + 16.0,
            t as u64
        );
        t += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time (s)</text>"#,
        LEFT + span / 2.0,
        axis_y + 32.0
    );
    s.push_str("</svg>\n");
    s
}
