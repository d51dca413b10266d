//! Markdown comparison table over simulation metrics: one row per
//! feeder/scenario with the contactor and motor-stall event descriptors.

use crate::MetricsRecord;

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "-".to_string(),
    }
}

pub fn render_markdown(records: &[MetricsRecord]) -> String {
    let mut s = String::new();
    s.push_str("| Feeder Type/Scenario | ST | T1 (ms) | V1 (pu) | T2 (ms) | V2 (pu) | TMS | IMS |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in records {
        let m = &r.metrics;
        s.push_str(&format!(
            "| {}/{} | {} | {} | {} | {} | {} | {} | {{{},{},{}}} |\n",
            r.feeder,
            r.scenario,
            m.st,
            fmt_opt(m.t1_ms, 1),
            fmt_opt(m.v1_pu, 2),
            fmt_opt(m.t2_ms, 1),
            fmt_opt(m.v2_pu, 2),
            m.tms,
            m.ims[0],
            m.ims[1],
            m.ims[2],
        ));
    }
    s
}
