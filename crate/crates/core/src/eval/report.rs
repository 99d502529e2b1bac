//! CSV, Markdown and SVG renderings of a hit-rate report.

use std::fmt::Write;

use super::{HitCell, HitReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Top1Exact,
    Top3Exact,
    Top10Exact,
    Top1Near,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Top1Exact,
        Metric::Top3Exact,
        Metric::Top10Exact,
        Metric::Top1Near,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Top1Exact => "Top-1 exact",
            Metric::Top3Exact => "Top-3 exact",
            Metric::Top10Exact => "Top-10 exact",
            Metric::Top1Near => "Top-1 near",
        }
    }

    pub fn value(self, cell: &HitCell) -> f64 {
        match self {
            Metric::Top1Exact => cell.top1_exact,
            Metric::Top3Exact => cell.top3_exact,
            Metric::Top10Exact => cell.top10_exact,
            Metric::Top1Near => cell.top1_near,
        }
    }
}

/// Wins of one segment length for one metric, out of `contested` query
/// lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinCount {
    pub window_s: f64,
    pub wins: f64,
    pub contested: usize,
}

/// For each query length with at least two segment lengths present, the best
/// segment length scores one win; tied leaders split it.
pub fn win_counts(report: &HitReport, metric: Metric) -> Vec<WinCount> {
    let windows = report.windows();
    let mut wins = vec![0.0; windows.len()];
    let mut contested = 0;
    for l in report.query_lengths() {
        let present: Vec<(usize, f64)> = windows
            .iter()
            .enumerate()
            .filter_map(|(i, &w)| report.cell(w, l).map(|c| (i, metric.value(c))))
            .collect();
        if present.len() < 2 {
            continue;
        }
        contested += 1;
        let best = present
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let leaders: Vec<usize> = present
            .iter()
            .filter(|p| p.1 == best)
            .map(|p| p.0)
            .collect();
        for &i in &leaders {
            wins[i] += 1.0 / leaders.len() as f64;
        }
    }
    windows
        .into_iter()
        .zip(wins)
        .map(|(window_s, wins)| WinCount {
            window_s,
            wins,
            contested,
        })
        .collect()
}

/// Short decimal form: at most two places, trailing zeros removed.
fn num(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn render_csv(report: &HitReport) -> String {
    let mut out = String::from("W,L,top1_exact,top3_exact,top10_exact,top1_near,n_queries\n");
    for c in &report.cells {
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4},{}",
            num(c.window_s),
            num(c.query_len_s),
            c.top1_exact,
            c.top3_exact,
            c.top10_exact,
            c.top1_near,
            c.n_queries
        )
        .unwrap();
    }
    out
}

/// One block per metric, one row per segment length, one column per query
/// length, with hit rates in percent. Cells where the query is shorter than
/// the segment are shown as `-`; the best value in each contested column is
/// bold.
pub fn render_markdown(report: &HitReport) -> String {
    let windows = report.windows();
    let lengths = report.query_lengths();
    let mut out = String::from("| Metric | W (s) |");
    for l in &lengths {
        write!(out, " L={} |", num(*l)).unwrap();
    }
    out.push_str(" Win |\n|---|---|");
    for _ in &lengths {
        out.push_str("---:|");
    }
    out.push_str("---:|\n");

    for metric in Metric::ALL {
        let wins = win_counts(report, metric);
        let best: Vec<Option<f64>> = lengths
            .iter()
            .map(|&l| {
                let vals: Vec<f64> = windows
                    .iter()
                    .filter_map(|&w| report.cell(w, l).map(|c| metric.value(c)))
                    .collect();
                (vals.len() >= 2).then(|| vals.into_iter().fold(f64::NEG_INFINITY, f64::max))
            })
            .collect();
        for (wi, &w) in windows.iter().enumerate() {
            let label = if wi == 0 { metric.label() } else { "" };
            write!(out, "| {label} | {} |", num(w)).unwrap();
            for (li, &l) in lengths.iter().enumerate() {
                match report.cell(w, l) {
                    Some(c) => {
                        let v = metric.value(c);
                        let text = format!("{:.2}", 100.0 * v);
                        if best[li] == Some(v) {
                            write!(out, " **{text}** |").unwrap();
                        } else {
                            write!(out, " {text} |").unwrap();
                        }
                    }
                    None => out.push_str(" - |"),
                }
            }
            let wc = &wins[wi];
            writeln!(out, " {}/{} |", num(wc.wins), wc.contested).unwrap();
        }
    }
    out
}

const COLORS: [&str; 6] = [
    "#2ca02c", "#1f77b4", "#ff7f0e", "#d62728", "#9467bd", "#8c564b",
];

/// Hit rate against query length, one panel per metric and one line per
/// segment length.
pub fn render_svg(report: &HitReport) -> String {
    let (pw, ph) = (360.0, 260.0);
    let (ml, mr, mt, mb) = (50.0, 15.0, 30.0, 40.0);
    let windows = report.windows();
    let lengths = report.query_lengths();
    let (lmin, lmax) = match (lengths.first(), lengths.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let width = 2.0 * pw;
    let height = 2.0 * ph + 30.0;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    )
    .unwrap();

    for (mi, metric) in Metric::ALL.iter().enumerate() {
        let ox = (mi % 2) as f64 * pw;
        let oy = (mi / 2) as f64 * ph;
        let x0 = ox + ml;
        let x1 = ox + pw - mr;
        let y0 = oy + ph - mb;
        let y1 = oy + mt;
        let sx = |l: f64| x0 + (l - lmin) / (lmax - lmin) * (x1 - x0);
        let sy = |v: f64| y0 - v * (y0 - y1);
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
            (x0 + x1) / 2.0,
            oy + 18.0,
            metric.label()
        )
        .unwrap();
        writeln!(
            out,
            r#"<polyline points="{x0:.2},{y1:.2} {x0:.2},{y0:.2} {x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let y = sy(tick);
            writeln!(
                out,
                r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                y + 4.0,
                num(100.0 * tick)
            )
            .unwrap();
        }
        for &l in &lengths {
            writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(l),
                y0 + 14.0,
                num(l)
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">query length L (s)</text>"#,
            (x0 + x1) / 2.0,
            y0 + 30.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">hit rate (%)</text>"#,
            ox + 14.0,
            (y0 + y1) / 2.0,
            ox + 14.0,
            (y0 + y1) / 2.0
        )
        .unwrap();
        for (wi, &w) in windows.iter().enumerate() {
            let color = COLORS[wi % COLORS.len()];
            let pts: Vec<(f64, f64)> = lengths
                .iter()
                .filter_map(|&l| report.cell(w, l).map(|c| (sx(l), sy(metric.value(c)))))
                .collect();
            let list: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                list.join(" ")
            )
            .unwrap();
            for (x, y) in pts {
                writeln!(
                    out,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#
                )
                .unwrap();
            }
        }
    }

    let ly = 2.0 * ph + 15.0;
    for (wi, &w) in windows.iter().enumerate() {
        let x = 60.0 + wi as f64 * 90.0;
        let color = COLORS[wi % COLORS.len()];
        writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">W={}</text>"#,
            x + 20.0,
            x + 25.0,
            ly + 4.0,
            num(w)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(w: f64, l: f64, top1: f64) -> HitCell {
        HitCell {
            window_s: w,
            query_len_s: l,
            top1_exact: top1,
            top3_exact: top1,
            top10_exact: top1,
            top1_near: top1,
            n_queries: 4,
        }
    }

    fn report() -> HitReport {
        HitReport {
            cells: vec![
                cell(0.5, 1.0, 0.5),
                cell(0.5, 2.0, 0.75),
                cell(1.0, 1.0, 0.5),
                cell(1.0, 2.0, 0.5),
                cell(2.0, 2.0, 0.25),
                cell(0.5, 0.5, 0.25),
            ],
        }
    }

    #[test]
    fn wins_split_ties_and_skip_single_columns() {
        let wins = win_counts(&report(), Metric::Top1Exact);
        let got: Vec<(f64, f64, usize)> = wins
            .iter()
            .map(|w| (w.window_s, w.wins, w.contested))
            .collect();
        assert_eq!(got, vec![(0.5, 1.5, 2), (1.0, 0.5, 2), (2.0, 0.0, 2)]);
        let total: f64 = wins.iter().map(|w| w.wins).sum();
        assert_eq!(total, 2.0);
    }

    #[test]
    fn csv_layout() {
        let mut r = report();
        r.merge(HitReport::default());
        let csv = render_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "W,L,top1_exact,top3_exact,top10_exact,top1_near,n_queries"
        );
        assert_eq!(lines[1], "0.5,0.5,0.2500,0.2500,0.2500,0.2500,4");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn markdown_marks_absent_cells_and_best_values() {
        let md = render_markdown(&report());
        assert!(md.starts_with("| Metric | W (s) | L=0.5 | L=1 | L=2 | Win |"));
        let row = md
            .lines()
            .find(|l| l.starts_with("| Top-1 exact | 0.5 |"))
            .unwrap();
        assert_eq!(
            row,
            "| Top-1 exact | 0.5 | 25.00 | **50.00** | **75.00** | 1.5/2 |"
        );
        let row = md.lines().nth(4).unwrap();
        assert_eq!(row, "|  | 2 | - | - | 25.00 | 0/2 |");
        assert_eq!(md.lines().count(), 2 + 4 * 3);
    }

    #[test]
    fn svg_has_legend_and_lines() {
        let svg = render_svg(&report());
        for label in ["W=0.5", "W=1", "W=2"] {
            assert!(svg.contains(&format!(">{label}</text>")));
        }
        assert_eq!(svg.matches("stroke-width=\"2\"").count(), 12);
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg, render_svg(&report()));
    }
}
