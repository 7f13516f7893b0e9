//! Plain-text AP report: one row per category, then the means.

use std::fmt::Write as _;

use scenehier_core::eval::ApSummary;

pub fn format_report(s: &ApSummary) -> String {
    let mut out = String::from("category\tnum_gt\tnum_pred\tAP\tAP50\tAP25\n");
    for c in &s.categories {
        let _ = writeln!(out, "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}", c.category, c.num_gt, c.num_pred, c.ap, c.ap50, c.ap25);
    }
    let num_gt: usize = s.categories.iter().map(|c| c.num_gt).sum();
    let num_pred: usize = s.categories.iter().map(|c| c.num_pred).sum();
    let _ = writeln!(out, "mean\t{num_gt}\t{num_pred}\t{:.6}\t{:.6}\t{:.6}", s.ap, s.ap50, s.ap25);
    out
}
