use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use super::config::{DatasetKind, PartitionName};
use super::record::ResultRecord;
use crate::fusion::FusionMethod;
use crate::Result;

/// Mean and sample standard deviation of accuracy for one (setting, method).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub dataset: DatasetKind,
    pub partition: PartitionName,
    pub alpha: Option<f64>,
    pub clients: usize,
    pub depth: String,
    pub method: FusionMethod,
    pub n: usize,
    pub mean: f64,
    /// `n - 1` denominator; 0 when `n = 1`.
    pub std: f64,
}

impl SummaryRow {
    pub fn single(&self) -> bool {
        self.n == 1
    }
}

fn group_key(r: &ResultRecord) -> (DatasetKind, PartitionName, Option<u64>, usize, String, String) {
    (
        r.dataset,
        r.partition,
        // Sort positive alphas numerically via their bit patterns.
        r.alpha.map(f64::to_bits),
        r.clients,
        r.depth.clone(),
        r.method.to_string(),
    )
}

/// Groups records by setting and method. Output order depends only on the
/// group keys, never on record order.
pub fn summarize(records: &[ResultRecord]) -> Vec<SummaryRow> {
    let mut sorted: Vec<&ResultRecord> = records.iter().collect();
    sorted.sort_by(|a, b| group_key(a).cmp(&group_key(b)).then(a.trial.cmp(&b.trial)));
    let mut rows = Vec::new();
    for group in sorted.chunk_by(|a, b| group_key(a) == group_key(b)) {
        let n = group.len();
        let mean = group.iter().map(|r| r.accuracy).sum::<f64>() / n as f64;
        let std = if n > 1 {
            let ss: f64 = group.iter().map(|r| (r.accuracy - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let r = group[0];
        rows.push(SummaryRow {
            dataset: r.dataset,
            partition: r.partition,
            alpha: r.alpha,
            clients: r.clients,
            depth: r.depth.clone(),
            method: r.method,
            n,
            mean,
            std,
        });
    }
    rows
}

/// Looks up the row for `method` among rows of one setting.
pub fn find_row(rows: &[SummaryRow], method: FusionMethod) -> Option<&SummaryRow> {
    rows.iter().find(|r| r.method == method)
}

/// Aligned plain-text table with accuracies in percent.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let header = ["dataset", "partition", "alpha", "J", "L", "method", "n", "mean%", "std%"];
    let body: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.dataset.as_str().to_owned(),
                r.partition.as_str().to_owned(),
                r.alpha.map_or_else(|| "-".into(), |a| a.to_string()),
                r.clients.to_string(),
                r.depth.clone(),
                r.method.to_string(),
                if r.single() { "1*".into() } else { r.n.to_string() },
                format!("{:.2}", 100.0 * r.mean),
                format!("{:.2}", 100.0 * r.std),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i >= 6 { format!("{c:>w$}") } else { format!("{c:<w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header);
    for row in &body {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    if rows.iter().any(SummaryRow::single) {
        out.push_str("* single record, std reported as 0\n");
    }
    out
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(method: FusionMethod, alpha: Option<f64>, trial: usize, acc: f64) -> ResultRecord {
        ResultRecord {
            dataset: DatasetKind::Mnist,
            partition: PartitionName::HeteroDir,
            alpha,
            clients: 5,
            depth: "1".into(),
            method,
            trial,
            seed: trial as u64 * 1000,
            accuracy: acc,
            wall_ms: 1.0,
        }
    }

    #[test]
    fn single_record_has_zero_std() {
        let rows = summarize(&[rec(FusionMethod::AmsTop1, Some(0.5), 0, 0.7)]);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].n, rows[0].mean, rows[0].std), (1, 0.7, 0.0));
        assert!(rows[0].single());
        assert!(format_table(&rows).contains("1*"));
    }

    #[test]
    fn two_records_closed_form() {
        let rows = summarize(&[
            rec(FusionMethod::FedAvg, Some(0.5), 0, 0.8),
            rec(FusionMethod::FedAvg, Some(0.5), 1, 0.9),
        ]);
        assert!((rows[0].mean - 0.85).abs() < 1e-15);
        assert!((rows[0].std - 0.005f64.sqrt()).abs() < 1e-15);
        assert!((rows[0].std - 0.0707).abs() < 1e-4);
    }

    #[test]
    fn grouping_independent_of_order() {
        let mut recs = Vec::new();
        for (m, base) in [(FusionMethod::AmsTop1, 0.9), (FusionMethod::AmsFull, 0.8)] {
            for alpha in [0.1, 0.5, 1.0] {
                for t in 0..4 {
                    recs.push(rec(m, Some(alpha), t, base - 0.01 * t as f64));
                }
            }
        }
        let want = summarize(&recs);
        assert_eq!(want.len(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            recs.shuffle(&mut rng);
            assert_eq!(summarize(&recs), want);
        }
    }

    #[test]
    fn table_and_csv_shape() {
        let rows = summarize(&[
            rec(FusionMethod::AmsTop1, Some(0.5), 0, 0.9),
            rec(FusionMethod::AmsTop1, Some(0.5), 1, 0.8),
        ]);
        let table = format_table(&rows);
        assert_eq!(table.lines().count(), 2);
        assert!(table.contains("85.00"));
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("dataset,partition,alpha,clients,depth,method,n,mean,std\n"));
    }
}
