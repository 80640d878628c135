//! Byte-deterministic CSV and JSON emission.
//!
//! Rationals are always written as `num/den`; an uncertified upper ratio
//! bound is written as `inf`. Field order is fixed by the emitters, so
//! identical inputs produce identical bytes.

use annulus_core::audit::{AnnulusReport, DoublingReport, RatioInterval, ScanReport};
use annulus_core::rational::{fmt_ratio, Rational};

pub const ANNULUS_HEADER: &str =
    "center,r,R,metric,ann_lo,ann_hi,ball_lo,ball_hi,ratio_lo,ratio_hi,exact_flag";

pub fn fmt_point(coords: &[Rational]) -> String {
    coords
        .iter()
        .map(fmt_ratio)
        .collect::<Vec<_>>()
        .join(";")
}

fn fmt_ratio_hi(interval: &RatioInterval) -> String {
    match &interval.hi {
        Some(hi) => fmt_ratio(hi),
        None => "inf".into(),
    }
}

pub fn annulus_row(report: &AnnulusReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        fmt_point(&report.center),
        fmt_ratio(&report.r),
        fmt_ratio(&report.big_r),
        report.metric,
        fmt_ratio(&report.annulus.lo),
        fmt_ratio(&report.annulus.hi),
        fmt_ratio(&report.ball.lo),
        fmt_ratio(&report.ball.hi),
        fmt_ratio(&report.ratio.lo),
        fmt_ratio_hi(&report.ratio),
        report.exact
    )
}

pub fn annulus_csv<'a>(reports: impl Iterator<Item = &'a AnnulusReport>) -> String {
    let mut out = String::from(ANNULUS_HEADER);
    out.push('\n');
    for report in reports {
        out.push_str(&annulus_row(report));
        out.push('\n');
    }
    out
}

pub fn scan_csv(report: &ScanReport) -> String {
    let mut out = format!("# {}\n", report.description);
    if let Some(max) = &report.max_ratio_upper {
        out.push_str(&format!("# max_ratio_upper = {}\n", fmt_ratio(max)));
    }
    out.push_str(ANNULUS_HEADER);
    out.push_str(",k,j\n");
    for sample in &report.samples {
        out.push_str(&annulus_row(&sample.report));
        out.push_str(&format!(",{},{}\n", sample.k, sample.j));
    }
    out
}

pub const DOUBLING_HEADER: &str =
    "center,r,inner_lo,inner_hi,outer_lo,outer_hi,ratio_lo,ratio_hi,exact_flag";

pub fn doubling_csv<'a>(reports: impl Iterator<Item = &'a DoublingReport>) -> String {
    let mut out = String::from(DOUBLING_HEADER);
    out.push('\n');
    for report in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt_point(&report.center),
            fmt_ratio(&report.r),
            fmt_ratio(&report.inner.lo),
            fmt_ratio(&report.inner.hi),
            fmt_ratio(&report.outer.lo),
            fmt_ratio(&report.outer.hi),
            fmt_ratio(&report.ratio.lo),
            fmt_ratio_hi(&report.ratio),
            report.exact
        ));
    }
    out
}
