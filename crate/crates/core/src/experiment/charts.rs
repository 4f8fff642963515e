//! Standalone SVG charts.

use std::fmt::Write as _;

use crate::training::{GridTable, Summary};

const BAR_COLORS: [&str; 3] = ["#4e79a7", "#59a14f", "#e15759"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One bar group per approach with accuracy, macro-F1 and macro-FPR bars
/// (mean, with a std whisker).
pub fn grouped_bar_chart(title: &str, groups: &[(String, [Summary; 3])]) -> String {
    let (left, top, plot_h, group_w, bar_w) = (60.0, 40.0, 240.0, 120.0, 28.0);
    let width = left + group_w * groups.len().max(1) as f64 + 150.0;
    let height = top + plot_h + 70.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
            width - 150.0,
            left - 6.0,
            y + 4.0
        );
    }
    for (g, (name, bars)) in groups.iter().enumerate() {
        let x0 = left + group_w * g as f64 + 12.0;
        let _ = writeln!(s, r#"<g class="group" data-approach="{}">"#, escape(name));
        for (b, (metric, sum)) in ["accuracy", "f1", "fpr"].iter().zip(bars).enumerate() {
            let v = sum.mean.clamp(0.0, 1.0);
            let h = plot_h * v;
            let x = x0 + b as f64 * (bar_w + 4.0);
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-metric="{metric}" data-value="{}" x="{x}" y="{}" width="{bar_w}" height="{h}" fill="{}"><title>{} {metric}: {:.4} ± {:.4}</title></rect>"#,
                sum.mean,
                top + plot_h - h,
                BAR_COLORS[b],
                escape(name),
                sum.mean,
                sum.std
            );
            if sum.std > 0.0 {
                let cx = x + bar_w / 2.0;
                let y1 = top + plot_h * (1.0 - (sum.mean + sum.std).clamp(0.0, 1.0));
                let y2 = top + plot_h * (1.0 - (sum.mean - sum.std).clamp(0.0, 1.0));
                let _ = writeln!(
                    s,
                    r##"<line x1="{cx}" y1="{y1}" x2="{cx}" y2="{y2}" stroke="#333"/>"##
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text></g>"#,
            x0 + 1.5 * bar_w + 4.0,
            top + plot_h + 18.0,
            escape(name)
        );
    }
    let lx = width - 130.0;
    for (b, metric) in ["accuracy", "macro F1", "macro FPR"].iter().enumerate() {
        let y = top + 20.0 * b as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{y}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{metric}</text>"#,
            BAR_COLORS[b],
            lx + 18.0,
            y + 10.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn heat_color(v: f64) -> String {
    let t = if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let r = (255.0 * (1.0 - t)) as u8;
    let g = (90.0 + 130.0 * t) as u8;
    let b = (255.0 * (1.0 - t) * 0.6 + 80.0 * t) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn distinct(mut v: Vec<f32>) -> Vec<f32> {
    v.sort_by(f32::total_cmp);
    v.dedup();
    v
}

/// Validation joint macro-F1 over (stage-2 plant weight × stage-2 disease weight),
/// one panel per (β₁, δ₁) slice.
pub fn grid_heatmap(table: &GridTable) -> String {
    let b2s = distinct(table.rows.iter().map(|r| r.weights.beta2).collect());
    let d2s = distinct(table.rows.iter().map(|r| r.weights.delta2).collect());
    let mut slices = distinct(table.rows.iter().map(|r| r.weights.beta1).collect())
        .into_iter()
        .flat_map(|b1| {
            table
                .rows
                .iter()
                .filter(move |r| r.weights.beta1 == b1)
                .map(|r| (r.weights.beta1, r.weights.delta1))
        })
        .collect::<Vec<_>>();
    slices.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    slices.dedup();

    let cell = 34.0;
    let panel_w = cell * d2s.len() as f64 + 60.0;
    let panel_h = cell * b2s.len() as f64 + 50.0;
    let cols = (slices.len() as f64).sqrt().ceil().max(1.0) as usize;
    let rows = slices.len().div_ceil(cols).max(1);
    let width = panel_w * cols as f64 + 20.0;
    let height = panel_h * rows as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="18" font-size="13">validation joint macro-F1: rows b2 (stage-2 plant), columns d2 (stage-2 disease)</text>"#
    );
    for (k, &(b1, d1)) in slices.iter().enumerate() {
        let px = 10.0 + panel_w * (k % cols) as f64;
        let py = 30.0 + panel_h * (k / cols) as f64;
        let _ = writeln!(s, r#"<g class="slice" data-b1="{b1}" data-d1="{d1}">"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">b1={b1} d1={d1}</text>"#,
            px + 40.0,
            py + 10.0
        );
        for (i, &b2) in b2s.iter().enumerate() {
            let y = py + 16.0 + cell * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{b2}</text>"#,
                px + 36.0,
                y + cell / 2.0 + 3.0
            );
            for (j, &d2) in d2s.iter().enumerate() {
                let x = px + 40.0 + cell * j as f64;
                if i == 0 {
                    let _ = writeln!(
                        s,
                        r#"<text x="{}" y="{}" text-anchor="middle">{d2}</text>"#,
                        x + cell / 2.0,
                        py + 16.0 + cell * b2s.len() as f64 + 12.0
                    );
                }
                let Some(r) = table.rows.iter().find(|r| {
                    r.weights.beta1 == b1
                        && r.weights.delta1 == d1
                        && r.weights.beta2 == b2
                        && r.weights.delta2 == d2
                }) else {
                    continue;
                };
                let _ = writeln!(
                    s,
                    r##"<rect class="cell" data-b1="{b1}" data-b2="{b2}" data-d1="{d1}" data-d2="{d2}" data-value="{}" x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}" stroke="#fff"><title>{:.4}</title></rect>"##,
                    r.val_both_f1,
                    heat_color(r.val_both_f1),
                    r.val_both_f1
                );
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
