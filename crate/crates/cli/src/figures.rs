//! Minimal deterministic SVG charts. No timestamps or random ids are emitted,
//! so identical inputs give identical bytes.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_TOP: f64 = 40.0;
const PLOT_HEIGHT: f64 = 220.0;
const LABEL_SPACE: f64 = 120.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(width: f64, height: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        width / 2.0,
        escape(title)
    )
}

/// Axis frame and y ticks for `[lo, hi]`, plot area starting at `(x0, y0)`.
fn axes(out: &mut String, x0: f64, y0: f64, width: f64, lo: f64, hi: f64, y_label: &str) {
    let _ = writeln!(
        out,
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        y0 + PLOT_HEIGHT
    );
    let _ = writeln!(
        out,
        "<line x1=\"{x0:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"black\"/>",
        x0 + width,
        y = y0 + PLOT_HEIGHT
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * f64::from(i) / 4.0;
        let y = y0 + PLOT_HEIGHT * (1.0 - f64::from(i) / 4.0);
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{x0:.1}\" y2=\"{y:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
        y0 + PLOT_HEIGHT / 2.0,
        y0 + PLOT_HEIGHT / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn x_label(out: &mut String, x: f64, y: f64, text: &str) {
    let _ = writeln!(
        out,
        "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"end\" transform=\"rotate(-45 {x:.1} {y:.1})\">{}</text>",
        escape(text)
    );
}

fn legend(out: &mut String, x: f64, y: f64, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            yy - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            yy,
            escape(name)
        );
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi > lo {
        (lo, hi * 1.05)
    } else {
        (lo, lo + 1.0)
    }
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(title: &str, y_label: &str, series: &[String], categories: &[(String, Vec<f64>)], y_max: Option<f64>) -> String {
    let bar_w = 14.0;
    let group_w = bar_w * series.len() as f64 + 10.0;
    let width = group_w * categories.len().max(1) as f64;
    let (lo, hi) = match y_max {
        Some(m) => (0.0, m),
        None => range(categories.iter().flat_map(|(_, v)| v.iter().copied())),
    };
    let total_w = MARGIN_LEFT + width + 140.0;
    let mut out = header(total_w, MARGIN_TOP + PLOT_HEIGHT + LABEL_SPACE, title);
    axes(&mut out, MARGIN_LEFT, MARGIN_TOP, width, lo, hi, y_label);
    let scale = |v: f64| MARGIN_TOP + PLOT_HEIGHT * (1.0 - (v - lo) / (hi - lo));
    for (g, (label, values)) in categories.iter().enumerate() {
        let gx = MARGIN_LEFT + 5.0 + g as f64 * group_w;
        for (s, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let top = scale(v.clamp(lo, hi));
            let base = scale(lo.max(0.0).min(hi));
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar_w:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                gx + s as f64 * bar_w,
                top.min(base),
                (base - top).abs(),
                PALETTE[s % PALETTE.len()]
            );
        }
        x_label(&mut out, gx + group_w / 2.0, MARGIN_TOP + PLOT_HEIGHT + 14.0, label);
    }
    legend(&mut out, MARGIN_LEFT + width + 20.0, MARGIN_TOP + 10.0, series);
    out.push_str("</svg>\n");
    out
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Box plots (min, quartiles, max) of each labelled sample; color by `series` index.
pub fn box_plot(title: &str, y_label: &str, series: &[String], boxes: &[(String, usize, Vec<f64>)]) -> String {
    let box_w = 16.0;
    let step = box_w + 8.0;
    let width = step * boxes.len().max(1) as f64;
    let (lo, hi) = range(boxes.iter().flat_map(|(_, _, v)| v.iter().copied()));
    let total_w = MARGIN_LEFT + width + 140.0;
    let mut out = header(total_w, MARGIN_TOP + PLOT_HEIGHT + LABEL_SPACE, title);
    axes(&mut out, MARGIN_LEFT, MARGIN_TOP, width, lo, hi, y_label);
    let scale = |v: f64| MARGIN_TOP + PLOT_HEIGHT * (1.0 - (v - lo) / (hi - lo));
    for (b, (label, s, values)) in boxes.iter().enumerate() {
        let x = MARGIN_LEFT + 4.0 + b as f64 * step;
        let mid = x + box_w / 2.0;
        let mut v: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if !v.is_empty() {
            v.sort_by(f64::total_cmp);
            let [min, q1, med, q3, max] = [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| scale(quantile(&v, q)));
            let color = PALETTE[s % PALETTE.len()];
            let _ = writeln!(
                out,
                "<line x1=\"{mid:.1}\" y1=\"{min:.1}\" x2=\"{mid:.1}\" y2=\"{max:.1}\" stroke=\"black\"/>\n\
                 <rect x=\"{x:.1}\" y=\"{q3:.1}\" width=\"{box_w:.1}\" height=\"{:.1}\" fill=\"{color}\" stroke=\"black\"/>\n\
                 <line x1=\"{x:.1}\" y1=\"{med:.1}\" x2=\"{:.1}\" y2=\"{med:.1}\" stroke=\"black\" stroke-width=\"2\"/>",
                (q1 - q3).max(0.5),
                x + box_w
            );
        }
        x_label(&mut out, mid, MARGIN_TOP + PLOT_HEIGHT + 14.0, label);
    }
    legend(&mut out, MARGIN_LEFT + width + 20.0, MARGIN_TOP + 10.0, series);
    out.push_str("</svg>\n");
    out
}

/// One line-plot panel: a title and named series over shared x positions.
pub struct Panel {
    pub title: String,
    pub series: Vec<(String, Vec<Option<f64>>)>,
}

/// Small multiples of line plots side by side, shared x labels and y range.
pub fn line_panels(title: &str, y_label: &str, x_labels: &[String], panels: &[Panel], y_range: (f64, f64)) -> String {
    let panel_w = 60.0 * x_labels.len().max(2) as f64;
    let gap = 40.0;
    let (lo, hi) = y_range;
    let names: Vec<String> = {
        let mut n: Vec<String> = Vec::new();
        for p in panels {
            for (s, _) in &p.series {
                if !n.contains(s) {
                    n.push(s.clone());
                }
            }
        }
        n
    };
    let total_w = MARGIN_LEFT + (panel_w + gap) * panels.len().max(1) as f64 + 160.0;
    let mut out = header(total_w, MARGIN_TOP + PLOT_HEIGHT + 60.0, title);
    let scale = |v: f64| MARGIN_TOP + 10.0 + PLOT_HEIGHT * (1.0 - (v - lo) / (hi - lo));
    for (k, panel) in panels.iter().enumerate() {
        let x0 = MARGIN_LEFT + k as f64 * (panel_w + gap);
        axes(&mut out, x0, MARGIN_TOP + 10.0, panel_w, lo, hi, if k == 0 { y_label } else { "" });
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x0 + panel_w / 2.0,
            MARGIN_TOP,
            escape(&panel.title)
        );
        let px = |i: usize| x0 + panel_w * (i as f64 + 0.5) / x_labels.len().max(1) as f64;
        for (i, l) in x_labels.iter().enumerate() {
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                px(i),
                MARGIN_TOP + PLOT_HEIGHT + 26.0,
                escape(l)
            );
        }
        for (name, values) in &panel.series {
            let s = names.iter().position(|n| n == name).expect("collected name");
            let color = PALETTE[s % PALETTE.len()];
            let points: Vec<(f64, f64)> = values
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.filter(|v| v.is_finite()).map(|v| (px(i), scale(v.clamp(lo, hi)))))
                .collect();
            if points.len() > 1 {
                let path: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                    path.join(" ")
                );
            }
            for (x, y) in points {
                let _ = writeln!(out, "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"{color}\"/>");
            }
        }
    }
    legend(
        &mut out,
        MARGIN_LEFT + (panel_w + gap) * panels.len().max(1) as f64,
        MARGIN_TOP + 20.0,
        &names,
    );
    out.push_str("</svg>\n");
    out
}
