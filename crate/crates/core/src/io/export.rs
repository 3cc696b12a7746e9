use std::path::Path;

use serde::Serialize;

use super::write_text;
use crate::autodiff::Matrix;
use crate::benchmarks::{ForwardPoint, InversePoint};
use crate::error::Result;
use crate::training::LossRecord;

fn to_csv<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// One row per sample, columns `c0..` for each output coordinate.
pub fn matrix_csv(m: &Matrix, prefix: &str) -> String {
    let header: Vec<String> = (0..m.cols()).map(|j| format!("{prefix}{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    to_csv(&header, (0..m.rows()).map(|r| m.row(r).iter().map(|v| format!("{v:?}")).collect::<Vec<_>>()))
}

pub fn loss_history_csv(history: &[LossRecord]) -> String {
    to_csv(
        &["epoch", "l1", "l2", "total", "skipped"],
        history.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                format!("{:?}", r.l1),
                format!("{:?}", r.l2),
                format!("{:?}", r.total),
                r.skipped.to_string(),
            ]
        }),
    )
}

/// KL-versus-x curve; excluded points have an empty `kl`.
pub fn forward_kl_csv(points: &[ForwardPoint]) -> String {
    to_csv(
        &["x", "kl"],
        points
            .iter()
            .map(|p| vec![format!("{:?}", p.x), p.kl.map(|k| format!("{k:?}")).unwrap_or_default()]),
    )
}

/// Long-format histograms: one row per (y, bin).
pub fn histograms_csv(points: &[InversePoint]) -> String {
    to_csv(
        &["y", "x_center", "density"],
        points.iter().flat_map(|p| {
            p.histogram
                .centers()
                .into_iter()
                .zip(p.histogram.density.clone())
                .map(move |(c, d)| vec![format!("{:?}", p.y), format!("{c:?}"), format!("{d:?}")])
        }),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, force: bool) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text, force)
}
