//! Gantt chart of simulated timelines: one lane per (rank, stage), forward tasks
//! in blue and backward tasks in orange. Idle time shows as gaps.

use std::fmt::Write;

use micropack_core::Action;

use crate::config::GanttOptions;
use crate::formats::TimelineDoc;

const LABEL_W: f64 = 90.0;
const MARGIN: f64 = 10.0;
const FWD: &str = "#4e79a7";
const BWD: &str = "#f28e2b";

pub fn render(doc: &TimelineDoc, opts: &GanttOptions) -> String {
    let lane = opts.lane_height.max(4) as f64;
    let lanes: usize = doc.ranks.iter().map(|r| r.stages.len()).sum();
    let width = LABEL_W + doc.t_total * opts.px_per_sec + 2.0 * MARGIN;
    let height = lanes as f64 * lane + 2.0 * MARGIN + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" font-family="monospace" font-size="10">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{:.1}">{} t_total={:.6}s</text>"#,
        MARGIN + 10.0,
        doc.strategy.name(),
        doc.t_total
    );
    let mut y = MARGIN + 20.0;
    for rank in &doc.ranks {
        for st in &rank.stages {
            let _ = writeln!(
                svg,
                r#"<text x="{MARGIN}" y="{:.1}">r{} s{}</text>"#,
                y + lane * 0.65,
                rank.dp_rank,
                st.stage
            );
            let _ = writeln!(
                svg,
                r##"<rect x="{LABEL_W}" y="{y:.1}" width="{:.1}" height="{lane:.1}" fill="#f4f4f4"/>"##,
                rank.t_total * opts.px_per_sec
            );
            for v in rank.vertices.iter().filter(|v| v.stage == st.stage) {
                let x = LABEL_W + v.start * opts.px_per_sec;
                let w = (v.finish - v.start) * opts.px_per_sec;
                let (fill, tag) = match v.action {
                    Action::Forward => (FWD, "F"),
                    Action::Backward => (BWD, "B"),
                };
                let _ = writeln!(
                    svg,
                    r#"<rect x="{x:.2}" y="{:.1}" width="{w:.2}" height="{:.1}" fill="{fill}" stroke="white" stroke-width="0.5"><title>{tag}{} [{:.6}, {:.6}]</title></rect>"#,
                    y + 1.0,
                    lane - 2.0,
                    v.data_id,
                    v.start,
                    v.finish
                );
            }
            y += lane;
        }
    }
    svg.push_str("</svg>\n");
    svg
}
