use std::fmt::Write;

use crate::model::Dendrogram;

const LEFT: f64 = 64.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const PLOT_HEIGHT: f64 = 300.0;
const LABEL_SPACE: f64 = 110.0;
const LEAF_SPACING: f64 = 28.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick step of the form {1, 2, 5} x 10^k giving about five intervals.
fn nice_step(max: f64) -> f64 {
    let raw = max / 5.0;
    let base = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * base)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * base)
}

fn decimals(step: f64) -> usize {
    (-step.log10().floor()).max(0.0) as usize
}

/// Vertical dendrogram: leaves along the bottom, y axis is dissimilarity.
pub fn render_dendrogram_svg(dend: &Dendrogram, title: &str) -> String {
    let s = dend.n_leaves();
    let top_height = dend.merges.last().map_or(0.0, |m| m.height);
    let (step, y_max) = if top_height > 0.0 {
        let step = nice_step(top_height);
        (step, (top_height / step).ceil() * step)
    } else {
        (0.2, 1.0)
    };
    let y_of = |h: f64| TOP + PLOT_HEIGHT * (1.0 - h / y_max);
    let width = LEFT + RIGHT + LEAF_SPACING * s as f64;
    let height = TOP + PLOT_HEIGHT + LABEL_SPACE;

    let mut x_of = vec![0.0; 2 * s - 1];
    for (pos, leaf) in dend.leaf_order().into_iter().enumerate() {
        x_of[leaf] = LEFT + LEAF_SPACING * (pos as f64 + 0.5);
    }
    for (k, m) in dend.merges.iter().enumerate() {
        x_of[s + k] = (x_of[m.left] + x_of[m.right]) / 2.0;
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        width / 2.0,
        escape(title)
    );

    // y axis with ticks
    let axis_bottom = TOP + PLOT_HEIGHT;
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{axis_bottom}" stroke="black"/>"#
    );
    let digits = decimals(step);
    let ticks = (y_max / step).round() as usize;
    for t in 0..=ticks {
        let h = step * t as f64;
        let y = y_of(h);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="black"/><text x="{}" y="{}" text-anchor="end">{h:.digits$}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">dissimilarity</text>"#,
        TOP + PLOT_HEIGHT / 2.0
    );

    let _ = writeln!(svg, r#"<g stroke="black" stroke-width="1.2" fill="none">"#);
    for m in &dend.merges {
        let y = y_of(m.height);
        let (xl, xr) = (x_of[m.left], x_of[m.right]);
        let _ = writeln!(
            svg,
            r#"<polyline points="{xl},{} {xl},{y} {xr},{y} {xr},{}"/>"#,
            y_of(dend.node_height(m.left)),
            y_of(dend.node_height(m.right))
        );
    }
    let _ = writeln!(svg, "</g>");

    for (leaf, label) in dend.leaves.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text transform="translate({},{}) rotate(-90)" text-anchor="end">{}</text>"#,
            x_of[leaf] + 4.0,
            axis_bottom + 8.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Two-sample scatter of expression levels with selected features highlighted.
#[derive(Debug, Clone)]
pub struct ScatterPlot<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub highlighted: &'a [bool],
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub title: &'a str,
}

/// Axes are `log10(1 + level)`; unselected points in blue, selected in red on top.
pub fn render_scatter_svg(plot: &ScatterPlot<'_>) -> String {
    let size = 420.0;
    let (left, top) = (60.0, 36.0);
    let t = |v: f64| (1.0 + v.max(0.0)).log10();
    let max = plot
        .x
        .iter()
        .chain(plot.y)
        .map(|&v| t(v))
        .fold(0.0, f64::max)
        .max(1e-9);
    let px = |v: f64| left + size * t(v) / max;
    let py = |v: f64| top + size * (1.0 - t(v) / max);

    let (w, h) = (left + size + 20.0, top + size + 50.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        w / 2.0,
        escape(plot.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">log10(1 + {})</text>"#,
        left + size / 2.0,
        top + size + 30.0,
        escape(plot.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(20,{}) rotate(-90)" text-anchor="middle">log10(1 + {})</text>"#,
        top + size / 2.0,
        escape(plot.y_label)
    );
    for pass in [false, true] {
        let color = if pass { "red" } else { "blue" };
        let _ = writeln!(svg, r#"<g fill="{color}" fill-opacity="0.6">"#);
        for ((&x, &y), &hl) in plot.x.iter().zip(plot.y).zip(plot.highlighted) {
            if hl == pass {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="1.6"/>"#, px(x), py(y));
            }
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Merge;

    #[test]
    fn dendrogram_svg_has_every_leaf_and_merge() {
        let dend = Dendrogram {
            leaves: vec!["A_1".into(), "A_2".into(), "B<1>".into()],
            merges: vec![
                Merge { left: 0, right: 1, height: 0.05, size: 2 },
                Merge { left: 3, right: 2, height: 0.3, size: 3 },
            ],
        };
        let svg = render_dendrogram_svg(&dend, "test");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">A_1</text>") && svg.contains("B&lt;1&gt;"));
        assert!(svg.contains(">0.3</text>"));
    }

    #[test]
    fn nice_steps() {
        assert_eq!(nice_step(0.3), 0.1);
        assert_eq!(nice_step(1.0), 0.2);
        assert_eq!(nice_step(0.06), 0.02);
    }

    #[test]
    fn scatter_draws_all_points() {
        let x = [0.0, 10.0, 100.0];
        let y = [1.0, 5.0, 80.0];
        let svg = render_scatter_svg(&ScatterPlot {
            x: &x,
            y: &y,
            highlighted: &[false, true, false],
            x_label: "A_1",
            y_label: "A_2",
            title: "A",
        });
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
