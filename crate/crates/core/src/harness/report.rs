use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::CONFIG_VERSION;
use super::sweep::SweepResult;
use crate::error::{Error, Result};

/// Columns preceding the per-band and axis columns, in output order.
pub const LEADING_COLUMNS: [&str; 3] = ["index", "variant", "seed"];

/// Columns following the axis columns, before the per-band ones.
pub const METRIC_COLUMNS: [&str; 8] = [
    "status",
    "global_snr_db",
    "ber",
    "ber_censored",
    "cspr_db",
    "evm_db",
    "saturation_fraction",
    "config_digest",
];

/// Paths written by [`emit_report`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    sweep: &'a str,
    tool: &'static str,
    tool_version: &'a str,
    config_version: u32,
    master_seed: u64,
    config_digest: &'a str,
    axis_names: &'a [String],
    columns: Vec<String>,
    points: usize,
    failures: usize,
    config: &'a str,
}

/// Full header: leading columns, axes, metrics, then per-band SNR and BER.
pub fn csv_header(result: &SweepResult) -> Vec<String> {
    let bands = result.base.tx.n_bands;
    LEADING_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(result.axis_names.iter().cloned())
        .chain(METRIC_COLUMNS.iter().map(|s| s.to_string()))
        .chain((1..=bands).map(|b| format!("snr_db_s{b}")))
        .chain((1..=bands).map(|b| format!("ber_s{b}")))
        .chain(std::iter::once("error".to_string()))
        .collect()
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>.manifest.json`.
pub fn emit_report(result: &SweepResult, dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{}.csv", result.name));
    let manifest_path = dir.join(format!("{}.manifest.json", result.name));
    let header = csv_header(result);
    let bands = result.base.tx.n_bands;

    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(&header)?;
    for p in &result.points {
        let mut row = vec![p.index.to_string(), p.variant.as_str().to_string(), p.seed.to_string()];
        row.extend(p.axes.iter().map(|v| v.to_string()));
        match &p.report {
            Some(r) => {
                row.push("ok".into());
                row.extend(
                    [r.global_snr_db, r.ber].iter().map(|v| v.to_string()).chain([r.ber_censored.to_string()]).chain(
                        [r.cspr_db, r.evm_db, r.saturation_fraction].iter().map(|v| v.to_string()),
                    ),
                );
                row.push(r.config_digest.clone());
                let pad = |v: &[f64]| (0..bands).map(|b| v.get(b).map(|x| x.to_string()).unwrap_or_default()).collect::<Vec<_>>();
                row.extend(pad(&r.per_subcarrier_snr_db));
                row.extend(pad(&r.per_subcarrier_ber));
                row.push(String::new());
            }
            None => {
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len() - 1 + 2 * bands));
                row.push(p.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let config = result.base.to_toml()?;
    let manifest = Manifest {
        sweep: &result.name,
        tool: env!("CARGO_PKG_NAME"),
        tool_version: &result.code_version,
        config_version: CONFIG_VERSION,
        master_seed: result.master_seed,
        config_digest: &result.base_digest,
        axis_names: &result.axis_names,
        columns: header,
        points: result.points.len(),
        failures: result.failures(),
        config: &config,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&manifest_path, text + "\n")?;
    Ok(ReportFiles { csv: csv_path, manifest: manifest_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::LinkConfig;
    use crate::harness::sweep::{SweepPoint, Variant};

    fn empty_result() -> SweepResult {
        let base = LinkConfig::fast();
        SweepResult {
            name: "t".into(),
            axis_names: vec!["rop_dbm".into()],
            points: vec![],
            base_digest: base.digest(),
            master_seed: base.seed,
            base,
            code_version: "0".into(),
        }
    }

    #[test]
    fn empty_sweep_writes_header_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&empty_result(), dir.path()).unwrap();
        let text = fs::read_to_string(&files.csv).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("index,variant,seed,rop_dbm,status,global_snr_db"));
        assert!(text.trim_end().ends_with("snr_db_s1,snr_db_s2,ber_s1,ber_s2,error"));
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files.manifest).unwrap()).unwrap();
        assert_eq!(m["points"], 0);
        assert_eq!(m["config_digest"].as_str().unwrap().len(), 64);
        let echoed = LinkConfig::from_toml_str(m["config"].as_str().unwrap()).unwrap();
        assert_eq!(echoed, LinkConfig::fast());
    }

    #[test]
    fn failed_points_keep_column_count() {
        let mut r = empty_result();
        r.points.push(SweepPoint {
            index: 0,
            variant: Variant::PhaseDiverse,
            axes: vec![-3.0],
            seed: 9,
            report: None,
            error: Some("stage `sync` failed".into()),
        });
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&r, dir.path()).unwrap();
        let mut rd = csv::Reader::from_path(&files.csv).unwrap();
        let header_len = rd.headers().unwrap().len();
        let rec = rd.records().next().unwrap().unwrap();
        assert_eq!(rec.len(), header_len);
        assert_eq!(&rec[4], "failed");
        assert_eq!(&rec[header_len - 1], "stage `sync` failed");
    }

    #[test]
    fn unwritable_directory_surfaces_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        assert!(emit_report(&empty_result(), &file.join("sub")).is_err());
    }
}
