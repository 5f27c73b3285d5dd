//! Markdown tables from a metrics CSV: one row per environment, axis setting, horizon, method
//! and ensemble size, metrics as `mean ± 95% half-width` over seeds.

use std::fmt::Write as _;

use super::sweep::{aggregate, Estimate, MetricsRow};
use crate::Result;

fn cell(e: &Estimate) -> String {
    match e.half_width {
        Some(h) => format!("{:.4} ± {:.4}", e.mean, h),
        None => format!("{:.4}", e.mean),
    }
}

pub fn markdown_report(rows: &[MetricsRow]) -> Result<String> {
    let mut out = String::new();
    out.push_str("| env | axis | setting | horizon | method | M | seeds | AURCC ↓ | RPP ↓ | CR_K ↑ | risk@full ↓ |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for (key, n, est) in aggregate(rows)? {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            key.env,
            key.axis,
            key.setting(),
            key.horizon,
            key.method,
            key.ensemble_count,
            n,
            cell(&est[0]),
            cell(&est[1]),
            cell(&est[2]),
            cell(&est[3]),
        );
    }
    Ok(out)
}
