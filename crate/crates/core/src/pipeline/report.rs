//! Sweep outputs: `runs.csv`, `summary.csv`, `partitions.csv` and
//! `report.json`. Rows are sorted deterministically and each file is
//! written to a temporary sibling first, then renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use super::sweep::{MeanSd, SweepReport};
use crate::error::{Error, Result};

pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const PARTITIONS_CSV: &str = "partitions.csv";
pub const REPORT_JSON: &str = "report.json";

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidParameter(format!("csv: {e}")))
}

pub fn runs_csv(report: &SweepReport) -> Result<Vec<u8>> {
    let mut runs: Vec<_> = report.runs.iter().collect();
    runs.sort_by(|a, b| (&a.dataset, a.calibrator, a.seed).cmp(&(&b.dataset, b.calibrator, b.seed)));
    let rows = runs
        .into_iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.dataset.clone(),
                r.calibrator.key().to_string(),
                r.seed.to_string(),
                r.hyperparameters.clone(),
                m.ce.to_string(),
                m.ce_beta.to_string(),
                m.mce.to_string(),
                m.mce_beta.to_string(),
                m.auac.to_string(),
                m.n.to_string(),
            ]
        })
        .collect();
    csv_bytes(
        &["dataset", "calibrator", "seed", "hyperparameters", "ce", "ce_beta", "mce", "mce_beta", "auac", "n"],
        rows,
    )
}

pub fn summary_csv(report: &SweepReport) -> Result<Vec<u8>> {
    let mut rows: Vec<_> = report.summary.iter().collect();
    rows.sort_by(|a, b| (&a.dataset, a.calibrator).cmp(&(&b.dataset, b.calibrator)));
    let cells = |s: &MeanSd| [s.mean.to_string(), s.sd.to_string()];
    let rows = rows
        .into_iter()
        .map(|r| {
            let mut row = vec![r.dataset.clone(), r.calibrator.key().to_string(), r.n_seeds.to_string()];
            for s in [&r.ce, &r.ce_beta, &r.mce, &r.mce_beta, &r.auac] {
                row.extend(cells(s));
            }
            row
        })
        .collect();
    csv_bytes(
        &[
            "dataset",
            "calibrator",
            "n_seeds",
            "ce_mean",
            "ce_sd",
            "ce_beta_mean",
            "ce_beta_sd",
            "mce_mean",
            "mce_sd",
            "mce_beta_mean",
            "mce_beta_sd",
            "auac_mean",
            "auac_sd",
        ],
        rows,
    )
}

/// Per-partition test CE for every run.
pub fn partitions_csv(report: &SweepReport) -> Result<Vec<u8>> {
    let mut runs: Vec<_> = report.runs.iter().collect();
    runs.sort_by(|a, b| (&a.dataset, a.calibrator, a.seed).cmp(&(&b.dataset, b.calibrator, b.seed)));
    let mut rows = Vec::new();
    for r in runs {
        for (part, pm) in &r.metrics.per_partition {
            rows.push(vec![
                r.dataset.clone(),
                r.calibrator.key().to_string(),
                r.seed.to_string(),
                part.to_string(),
                pm.n.to_string(),
                pm.ce.to_string(),
            ]);
        }
    }
    csv_bytes(&["dataset", "calibrator", "seed", "partition", "n", "ce"], rows)
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes all four outputs into `dir`, creating it if needed.
pub fn write_outputs(report: &SweepReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    let outputs = [
        (RUNS_CSV, runs_csv(report)?),
        (SUMMARY_CSV, summary_csv(report)?),
        (PARTITIONS_CSV, partitions_csv(report)?),
        (REPORT_JSON, json),
    ];
    let mut written = Vec::new();
    for (name, bytes) in outputs {
        let p = dir.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
    }
    Ok(written)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<SweepReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Markdown table of the summary, one row per calibrator.
pub fn summary_markdown(report: &SweepReport) -> String {
    let mut out = String::from(
        "| calibrator | seeds | CE | CE(h; beta) | MCE | MCE(h; beta) | AUAC |\n|---|---|---|---|---|---|---|\n",
    );
    let f = |s: &MeanSd| format!("{:.4} ± {:.4}", s.mean, s.sd);
    for r in &report.summary {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.calibrator.label(),
            r.n_seeds,
            f(&r.ce),
            f(&r.ce_beta),
            f(&r.mce),
            f(&r.mce_beta),
            f(&r.auac)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guarantees::{generate_synthetic, ConfidenceLaw, SyntheticSpec};
    use crate::pipeline::{run_sweep, CalibratorKind, SweepConfig};

    fn report() -> SweepReport {
        let spec = SyntheticSpec::hypercube(2, 400, vec![(0.3, 0.7), (-0.2, 1.5)], ConfidenceLaw::Uniform, 8).unwrap();
        let ds = generate_synthetic(&spec).unwrap();
        let mut cfg = SweepConfig::new(vec![0, 1]);
        cfg.seeds = vec![3, 1];
        cfg.b_grid = Some(vec![30, 50]);
        cfg.calibrators = vec![CalibratorKind::Qab, CalibratorKind::None];
        run_sweep(&ds, &cfg, Some(2)).unwrap()
    }

    #[test]
    fn files_are_written_and_sorted() {
        let r = report();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_outputs(&r, dir.path()).unwrap();
        assert_eq!(paths.len(), 4);
        let runs = fs::read_to_string(dir.path().join(RUNS_CSV)).unwrap();
        let lines: Vec<&str> = runs.lines().collect();
        assert_eq!(lines[0], "dataset,calibrator,seed,hyperparameters,ce,ce_beta,mce,mce_beta,auac,n");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("dataset,none,1,"));
        assert!(lines[4].starts_with("dataset,qab,3,d="));
        assert!(!dir.path().join("runs.csv.tmp").exists());
        let back = load_report(dir.path().join(REPORT_JSON)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn markdown_has_a_row_per_calibrator() {
        let md = summary_markdown(&report());
        assert_eq!(md.lines().count(), 4);
        assert!(md.contains("| QAB | 2 |"));
    }
}
