use super::{Experiment, ExperimentRecord, StudyError};
use crate::helmholtz::NormalSource;
use crate::metrics::observed_order;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const CSV_HEADER: [&str; 15] = [
    "experiment",
    "relation_p",
    "h",
    "epsilon",
    "normal_source",
    "variable_source",
    "err_rho",
    "err_phi",
    "err_nu_A",
    "err_nu_B",
    "err_u",
    "err_un",
    "dofs",
    "iterations",
    "seconds",
];

/// Observed order of one error kind along one ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderRow {
    pub experiment: Experiment,
    pub relation_p: u32,
    pub normal_source: Option<NormalSource>,
    pub error: &'static str,
    /// Levels entering the fit, coarsest excluded.
    pub levels: usize,
    pub order_eps: f64,
    pub order_h: f64,
    /// Error ratios between successive levels.
    pub ratios: Vec<f64>,
}

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

type GroupKey = (Experiment, u32, Option<String>);

fn groups(records: &[ExperimentRecord]) -> BTreeMap<GroupKey, Vec<&ExperimentRecord>> {
    let mut map: BTreeMap<GroupKey, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        map.entry((r.experiment, r.relation_p, r.normal_source.map(|n| n.to_string())))
            .or_default()
            .push(r);
    }
    for runs in map.values_mut() {
        runs.sort_by(|a, b| b.h.total_cmp(&a.h));
    }
    map
}

/// Least-squares orders per `(experiment, relation, normal, error kind)`. The
/// coarsest level is left out when at least three finer ones remain; ladders
/// with fewer than three usable levels give no row.
pub fn fit_orders(records: &[ExperimentRecord]) -> Vec<OrderRow> {
    let mut rows = Vec::new();
    for ((experiment, relation_p, _), runs) in groups(records) {
        let runs = if runs.len() >= 4 { &runs[1..] } else { &runs[..] };
        for (k, (name, _)) in runs[0].errors.entries().iter().enumerate() {
            let points: Vec<(f64, f64, f64)> = runs
                .iter()
                .filter_map(|r| r.errors.entries()[k].1.map(|e| (r.h, r.epsilon, e)))
                .collect();
            if points.len() < 3 || points.len() < runs.len() {
                continue;
            }
            let h: Vec<f64> = points.iter().map(|p| p.0).collect();
            let eps: Vec<f64> = points.iter().map(|p| p.1).collect();
            let err: Vec<f64> = points.iter().map(|p| p.2).collect();
            let (Ok(by_eps), Ok(by_h)) = (observed_order(&eps, &err), observed_order(&h, &err)) else {
                log::warn!("{experiment} p = {relation_p} {name}: no order for nonpositive errors");
                continue;
            };
            rows.push(OrderRow {
                experiment,
                relation_p,
                normal_source: runs[0].normal_source,
                error: name,
                levels: points.len(),
                order_eps: by_eps.slope,
                order_h: by_h.slope,
                ratios: by_eps.ratios,
            });
        }
    }
    rows
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StudyError> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let context = |what: &str| format!("{what} {}", path.display());
    let mut file = std::fs::File::create(&tmp).map_err(|e| StudyError::io(context("creating"), e))?;
    file.write_all(bytes).map_err(|e| StudyError::io(context("writing"), e))?;
    file.sync_all().map_err(|e| StudyError::io(context("syncing"), e))?;
    std::fs::rename(&tmp, path).map_err(|e| StudyError::io(context("renaming"), e))
}

fn csv_bytes(records: &[ExperimentRecord]) -> Result<Vec<u8>, StudyError> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let encode = |e: csv::Error| StudyError::Serialize(e.to_string());
    out.write_record(CSV_HEADER).map_err(encode)?;
    for r in records {
        let mut row = vec![
            r.experiment.to_string(),
            r.relation_p.to_string(),
            sci(r.h),
            sci(r.epsilon),
            r.normal_source.map(|n| n.to_string()).unwrap_or_default(),
            r.variable_source.to_string(),
        ];
        row.extend(r.errors.entries().iter().map(|(_, v)| v.map(sci).unwrap_or_default()));
        row.extend([r.dofs.to_string(), r.iterations.to_string(), sci(r.seconds)]);
        out.write_record(&row).map_err(encode)?;
    }
    out.into_inner().map_err(|e| StudyError::Serialize(e.to_string()))
}

fn dat_files(records: &[ExperimentRecord]) -> BTreeMap<String, String> {
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    for ((experiment, p, normal), runs) in groups(records) {
        let name = match normal {
            Some(n) if experiment == Experiment::E3 => format!("{experiment}_{n}.dat"),
            _ => format!("{experiment}.dat"),
        };
        let text = files.entry(name).or_default();
        if !text.is_empty() {
            text.push_str("\n\n");
        }
        let _ = write!(text, "# relation p = {p}\n# h epsilon");
        for (column, _) in runs[0].errors.entries() {
            let _ = write!(text, " {column}");
        }
        text.push('\n');
        for r in runs {
            let _ = write!(text, "{} {}", sci(r.h), sci(r.epsilon));
            for (_, v) in r.errors.entries() {
                let _ = write!(text, " {}", v.map(sci).unwrap_or_else(|| "NaN".into()));
            }
            text.push('\n');
        }
    }
    files
}

fn convergence_table(rows: &[OrderRow]) -> String {
    let mut text = String::from("experiment  p  normal    error     levels  order(eps)  order(h)  ratios\n");
    for row in rows {
        let normal = row.normal_source.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
        let ratios: Vec<String> = row.ratios.iter().map(|r| format!("{r:.3}")).collect();
        let _ = writeln!(
            text,
            "{:<10}  {}  {:<8}  {:<8}  {:>6}  {:>10.3}  {:>8.3}  {}",
            row.experiment,
            row.relation_p,
            normal,
            row.error,
            row.levels,
            row.order_eps,
            row.order_h,
            ratios.join(" ")
        );
    }
    text
}

#[derive(Serialize)]
struct JsonReport<'a> {
    records: &'a [ExperimentRecord],
    orders: &'a [OrderRow],
}

/// Writes `results.csv`, `results.json`, gnuplot data files and
/// `convergence_table.txt` into `outdir`; returns the written paths.
pub fn emit_report(records: &[ExperimentRecord], outdir: &Path) -> Result<Vec<PathBuf>, StudyError> {
    if records.is_empty() {
        return Err(StudyError::NoRecords);
    }
    std::fs::create_dir_all(outdir).map_err(|e| StudyError::io(format!("creating {}", outdir.display()), e))?;
    let orders = fit_orders(records);
    let json = serde_json::to_vec_pretty(&JsonReport {
        records,
        orders: &orders,
    })
    .map_err(|e| StudyError::Serialize(e.to_string()))?;
    let mut outputs = vec![
        ("results.csv".to_string(), csv_bytes(records)?),
        ("results.json".to_string(), json),
        ("convergence_table.txt".to_string(), convergence_table(&orders).into_bytes()),
    ];
    outputs.extend(dat_files(records).into_iter().map(|(name, text)| (name, text.into_bytes())));
    let mut written = Vec::new();
    for (name, bytes) in outputs {
        let path = outdir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::helmholtz::VariableSource;
    use crate::metrics::ErrorReport;

    fn synthetic(experiment: Experiment, p: u32, normal: Option<NormalSource>) -> Vec<ExperimentRecord> {
        (2..=6)
            .map(|k| {
                let h = 0.5f64.powi(k);
                let eps = 0.4 * (h / 0.25).powf(2.0 / p as f64);
                ExperimentRecord {
                    experiment,
                    relation_p: p,
                    h,
                    epsilon: eps,
                    normal_source: normal,
                    variable_source: VariableSource::Analytic,
                    errors: ErrorReport {
                        err_u: Some(3.0 * eps * eps),
                        err_un: Some(eps),
                        ..ErrorReport::default()
                    },
                    dofs: 10 * k as usize,
                    iterations: k as usize,
                    seconds: 0.0,
                }
            })
            .collect()
    }

    #[test]
    fn csv_has_fixed_header_and_scientific_values() {
        let records = synthetic(Experiment::E2, 2, Some(NormalSource::Analytic));
        let text = String::from_utf8(csv_bytes(&records).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "experiment,relation_p,h,epsilon,normal_source,variable_source,err_rho,err_phi,err_nu_A,err_nu_B,err_u,err_un,dofs,iterations,seconds"
        );
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 15);
        assert_eq!(first[2], "2.5000000000000000e-1");
        assert_eq!(first[6], "");
        let reparsed: f64 = first[10].parse().unwrap();
        assert_eq!(reparsed, records[0].errors.err_u.unwrap());
    }

    #[test]
    fn one_order_row_per_group_and_error_kind() {
        let mut records = synthetic(Experiment::E2, 2, Some(NormalSource::Analytic));
        records.extend(synthetic(Experiment::E2, 3, Some(NormalSource::Analytic)));
        records.extend(synthetic(Experiment::E3, 2, Some(NormalSource::B)));
        let rows = fit_orders(&records);
        assert_eq!(rows.len(), 6);
        for row in &rows {
            assert_eq!(row.levels, 4);
            let expected = if row.error == "err_u" { 2.0 } else { 1.0 };
            assert!((row.order_eps - expected).abs() < 1e-12);
            let by_h = expected * 2.0 / row.relation_p as f64;
            assert!((row.order_h - by_h).abs() < 1e-12);
        }
    }

    #[test]
    fn emitted_files_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let records = synthetic(Experiment::E3, 5, Some(NormalSource::A));
        let paths = emit_report(&records, dir.path()).unwrap();
        let names: Vec<String> = paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["results.csv", "results.json", "convergence_table.txt", "E3_A.dat"]);
        let first = std::fs::read(dir.path().join("results.csv")).unwrap();
        emit_report(&records, dir.path()).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("results.csv")).unwrap());
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("results.json")).unwrap()).unwrap();
        assert_eq!(json["records"].as_array().unwrap().len(), 5);
        let table = std::fs::read_to_string(dir.path().join("convergence_table.txt")).unwrap();
        assert_eq!(table.lines().count(), 3);
        assert!(std::fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
        assert!(matches!(emit_report(&[], dir.path()), Err(StudyError::NoRecords)));
    }
}
