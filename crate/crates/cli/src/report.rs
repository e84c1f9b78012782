//! Plain-text evaluation report.

use std::fmt::Write as _;

use rfn_model::eval::EvalReport;

pub fn format_report(report: &EvalReport, images: usize) -> String {
    let mut out = String::new();
    let r = &report.record;
    let _ = writeln!(out, "images: {images}");
    let _ = writeln!(out, "iou threshold: {}", report.iou);
    let _ = writeln!(out, "true positives: {}", r.tp);
    let _ = writeln!(out, "false positives: {}", r.fp);
    let _ = writeln!(out, "false negatives: {}", r.fn_);
    let _ = writeln!(out, "Precision: {:.2}%", 100.0 * report.prf.precision);
    let _ = writeln!(out, "Recall: {:.2}%", 100.0 * report.prf.recall);
    let _ = writeln!(out, "F-measure: {:.2}%", 100.0 * report.prf.f_measure);
    for (t, n) in &report.matched_counts {
        let _ = writeln!(out, "matched boxes at IoU {t}: {n}");
    }
    out
}

/// Reads the `F-measure: xx.xx%` line back as a percentage.
pub fn parse_f_measure(report: &str) -> Option<f64> {
    report
        .lines()
        .find_map(|l| l.strip_prefix("F-measure:"))
        .and_then(|v| v.trim().strip_suffix('%'))
        .and_then(|v| v.trim().parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rfn_core::evalkit::{EvalRecord, Prf};

    #[test]
    fn f_measure_round_trip() {
        let rep = EvalReport {
            iou: 0.5,
            record: EvalRecord::default(),
            prf: Prf::from_pr(0.893, 0.8333),
            matched_counts: vec![(0.6, 3), (0.8, 1)],
            pr_curve: Vec::new(),
        };
        let text = format_report(&rep, 4);
        assert_eq!(parse_f_measure(&text), Some(86.21));
        assert!(text.contains("matched boxes at IoU 0.8: 1"));
        assert_eq!(parse_f_measure("nothing"), None);
    }
}
