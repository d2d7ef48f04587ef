//! Minimal SVG bar charts for the report.

use std::fmt::Write;

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f"];

/// One series of bars per model. Each bar is a group label with an optional
/// (median, q1, q3) triple drawn as a bar with an interquartile whisker;
/// missing values leave a gap. The y axis spans [0, 1].
pub fn grouped_bar_chart(title: &str, series: &[(String, Vec<(String, Option<(f64, f64, f64)>)>)]) -> String {
    let mut groups: Vec<&str> = Vec::new();
    for (_, bars) in series {
        for (g, _) in bars {
            if !groups.contains(&g.as_str()) {
                groups.push(g);
            }
        }
    }
    let (left, top, plot_h, group_w) = (60.0, 40.0, 240.0, 40.0 + 28.0 * series.len().max(1) as f64);
    let width = left + group_w * groups.len().max(1) as f64 + 160.0;
    let height = top + plot_h + 60.0;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            left + group_w * groups.len() as f64,
            y(v),
            y(v),
            left - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">Lesion DSC</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (gi, g) in groups.iter().enumerate() {
        let gx = left + group_w * gi as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            top + plot_h + 18.0,
            escape(g)
        );
        for (si, (_, bars)) in series.iter().enumerate() {
            let Some((_, Some((median, q1, q3)))) = bars.iter().find(|(name, _)| name == g) else {
                continue;
            };
            let x = gx + 20.0 + 28.0 * si as f64;
            let colour = PALETTE[si % PALETTE.len()];
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="22" height="{:.1}" fill="{colour}"/>"#,
                y(*median),
                y(0.0) - y(*median)
            );
            let cx = x + 11.0;
            let _ = writeln!(
                s,
                r#"<path d="M{cx:.1} {:.1}V{:.1}M{:.1} {:.1}h10M{:.1} {:.1}h10" stroke="black" fill="none"/>"#,
                y(*q1),
                y(*q3),
                cx - 5.0,
                y(*q1),
                cx - 5.0,
                y(*q3)
            );
        }
    }
    let lx = left + group_w * groups.len().max(1) as f64 + 20.0;
    for (si, (name, _)) in series.iter().enumerate() {
        let ly = top + 18.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{ly:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            PALETTE[si % PALETTE.len()],
            lx + 18.0,
            ly + 10.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_bar_per_present_value() {
        let series = vec![
            ("A".to_string(), vec![("GS6".to_string(), Some((0.5, 0.4, 0.6))), ("GS7".to_string(), None)]),
            ("B<1>".to_string(), vec![("GS6".to_string(), Some((0.7, 0.6, 0.8)))]),
        ];
        let svg = grouped_bar_chart("t", &series);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 2 + 2);
        assert!(svg.contains("B&lt;1&gt;"));
    }
}
