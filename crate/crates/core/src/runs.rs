//! Training-run observations: loading, validation, grouping and splitting.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::format_float;
use crate::error::{Error, Result};

/// Required CSV header columns, in order. `compute` may be omitted.
pub const REQUIRED_COLUMNS: [&str; 7] = ["run_id", "n_total", "n_active", "sparsity", "tokens", "compute", "loss"];

/// Isoflop budget centers used when grouping runs.
pub const DEFAULT_BUDGETS: [f64; 5] = [3e19, 6e19, 1e20, 3e20, 1e21];

/// Relative gap between `compute` and `6 * n_active * tokens` above which a
/// record is flagged.
pub const COMPUTE_CONSISTENCY_TOL: f64 = 0.25;

const HOLDOUT_MATCH_TOL: f64 = 1e-9;

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub n_total: f64,
    pub n_active: f64,
    pub sparsity: f64,
    pub tokens: f64,
    pub compute: f64,
    pub loss: f64,
    /// Opaque extra columns (learning rate, granularity, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, String>,
    /// Set when `compute` was synthesized as `6 * n_active * tokens`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub compute_synthetic: bool,
}

impl RunRecord {
    /// Checks the hard invariants, returning the offending field on failure.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err((name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("n_total", self.n_total)?;
        positive("n_active", self.n_active)?;
        positive("tokens", self.tokens)?;
        positive("compute", self.compute)?;
        positive("loss", self.loss)?;
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(("sparsity", format!("must be in [0, 1), got {}", self.sparsity)));
        }
        if self.n_active > self.n_total {
            return Err((
                "n_active",
                format!("n_active {} exceeds n_total {}", self.n_active, self.n_total),
            ));
        }
        Ok(())
    }

    /// Relative deviation of `compute` from `6 * n_active * tokens`.
    pub fn compute_deviation(&self) -> f64 {
        (self.compute - 6.0 * self.n_active * self.tokens).abs() / self.compute
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadWarning {
    pub row: usize,
    pub run_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Option<PathBuf>,
    /// Seconds since the Unix epoch at load time.
    pub loaded_at: Option<u64>,
}

/// An ordered collection of runs with unique ids.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTable {
    pub records: Vec<RunRecord>,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(default)]
    pub warnings: Vec<LoadWarning>,
}

impl RunTable {
    /// Builds a table from records already in memory, validating every record.
    pub fn from_records(records: Vec<RunRecord>) -> Result<Self> {
        let path = PathBuf::from("<memory>");
        let mut seen = HashSet::new();
        let mut warnings = Vec::new();
        for (i, r) in records.iter().enumerate() {
            validate_row(&path, i + 1, r, &mut seen, &mut warnings)?;
        }
        Ok(RunTable { records, provenance: Provenance::default(), warnings })
    }

    /// Wraps records without re-validating; used for subsets of a valid table.
    fn subset(&self, records: Vec<RunRecord>) -> Self {
        RunTable { records, provenance: self.provenance.clone(), warnings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RunRecord> {
        self.records.iter()
    }

    pub fn filter(&self, mut keep: impl FnMut(&RunRecord) -> bool) -> Self {
        self.subset(self.records.iter().filter(|r| keep(r)).cloned().collect())
    }

    /// Writes the table in the CSV interchange format. Extra columns are the
    /// sorted union of all extras keys.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let extra_keys: Vec<String> = self
            .records
            .iter()
            .flat_map(|r| r.extras.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
        header.extend(extra_keys.iter().map(String::as_str));
        w.write_record(&header).map_err(csv_io)?;
        for r in &self.records {
            let mut row = vec![
                r.run_id.clone(),
                format_float(r.n_total),
                format_float(r.n_active),
                format_float(r.sparsity),
                format_float(r.tokens),
                format_float(r.compute),
                format_float(r.loss),
            ];
            row.extend(extra_keys.iter().map(|k| r.extras.get(k).cloned().unwrap_or_default()));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

impl<'a> IntoIterator for &'a RunTable {
    type Item = &'a RunRecord;
    type IntoIter = std::slice::Iter<'a, RunRecord>;
    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

fn validate_row(
    path: &Path,
    row: usize,
    record: &RunRecord,
    seen: &mut HashSet<String>,
    warnings: &mut Vec<LoadWarning>,
) -> Result<()> {
    let load_err = |column: &str, message: String| Error::Load {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };
    if let Err((column, message)) = record.check() {
        return Err(load_err(column, message));
    }
    if !seen.insert(record.run_id.clone()) {
        return Err(load_err("run_id", format!("duplicate run_id `{}`", record.run_id)));
    }
    let deviation = record.compute_deviation();
    if deviation > COMPUTE_CONSISTENCY_TOL {
        let message = format!(
            "compute deviates {:.1}% from 6 * n_active * tokens",
            deviation * 100.0
        );
        log::warn!("{}: row {row} ({}): {message}", path.display(), record.run_id);
        warnings.push(LoadWarning { row, run_id: record.run_id.clone(), message });
    }
    Ok(())
}

fn now_secs() -> Option<u64> {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

/// Loads runs from CSV, or from the JSON mirror format when the extension is `.json`.
pub fn load_runs(path: &Path) -> Result<RunTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let is_json = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut table = if is_json {
        parse_runs_json(path, &bytes)?
    } else {
        parse_runs_csv(path, &bytes)?
    };
    table.provenance = Provenance { source: Some(path.to_path_buf()), loaded_at: now_secs() };
    Ok(table)
}

/// Parses CSV bytes; `path` is only used for error messages.
pub fn parse_runs_csv(path: &Path, bytes: &[u8]) -> Result<RunTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let format_err = |message: String| Error::Format { path: path.to_path_buf(), message };
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| format_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let column = |name: &str| header.iter().position(|h| h == name);
    let mut index = BTreeMap::new();
    for name in REQUIRED_COLUMNS {
        match column(name) {
            Some(i) => {
                index.insert(name, i);
            }
            None if name == "compute" => {}
            None => {
                return Err(Error::Load {
                    path: path.to_path_buf(),
                    row: 0,
                    column: name.to_string(),
                    message: "missing required column".into(),
                })
            }
        }
    }
    let extra_columns: Vec<(usize, &String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| !REQUIRED_COLUMNS.contains(&h.as_str()))
        .collect();

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut warnings = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| format_err(format!("row {row_no}: {e}")))?;
        let cell = |name: &str| -> Result<&str> {
            let idx = index[name];
            row.get(idx).ok_or_else(|| Error::Load {
                path: path.to_path_buf(),
                row: row_no,
                column: name.to_string(),
                message: "missing cell".into(),
            })
        };
        let number = |name: &str| -> Result<f64> {
            let raw = cell(name)?;
            raw.parse::<f64>().map_err(|_| Error::Load {
                path: path.to_path_buf(),
                row: row_no,
                column: name.to_string(),
                message: format!("non-numeric value `{raw}`"),
            })
        };
        let n_active = number("n_active")?;
        let tokens = number("tokens")?;
        let (compute, compute_synthetic) = if index.contains_key("compute") {
            (number("compute")?, false)
        } else {
            (6.0 * n_active * tokens, true)
        };
        let record = RunRecord {
            run_id: cell("run_id")?.to_string(),
            n_total: number("n_total")?,
            n_active,
            sparsity: number("sparsity")?,
            tokens,
            compute,
            loss: number("loss")?,
            extras: extra_columns
                .iter()
                .map(|(idx, name)| ((*name).clone(), row.get(*idx).unwrap_or("").to_string()))
                .collect(),
            compute_synthetic,
        };
        validate_row(path, row_no, &record, &mut seen, &mut warnings)?;
        records.push(record);
    }
    Ok(RunTable { records, provenance: Provenance::default(), warnings })
}

/// Parses the JSON mirror format: an array of objects with the CSV field
/// names; any other keys are kept as extras.
pub fn parse_runs_json(path: &Path, bytes: &[u8]) -> Result<RunTable> {
    let rows: Vec<serde_json::Map<String, serde_json::Value>> =
        serde_json::from_slice(bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut warnings = Vec::new();
    for (i, obj) in rows.iter().enumerate() {
        let row_no = i + 1;
        let load_err = |column: &str, message: String| Error::Load {
            path: path.to_path_buf(),
            row: row_no,
            column: column.to_string(),
            message,
        };
        let number = |name: &str| -> Result<Option<f64>> {
            match obj.get(name) {
                None => Ok(None),
                Some(serde_json::Value::Number(n)) => Ok(n.as_f64()),
                Some(serde_json::Value::String(s)) => s
                    .trim()
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| load_err(name, format!("non-numeric value `{s}`"))),
                Some(v) => Err(load_err(name, format!("non-numeric value `{v}`"))),
            }
        };
        let required = |name: &str| -> Result<f64> {
            number(name)?.ok_or_else(|| load_err(name, "missing required field".into()))
        };
        let run_id = match obj.get("run_id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => return Err(load_err("run_id", "missing required field".into())),
        };
        let n_active = required("n_active")?;
        let tokens = required("tokens")?;
        let (compute, compute_synthetic) = match number("compute")? {
            Some(c) => (c, false),
            None => (6.0 * n_active * tokens, true),
        };
        let extras = obj
            .iter()
            .filter(|(k, _)| !REQUIRED_COLUMNS.contains(&k.as_str()))
            .map(|(k, v)| {
                let text = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), text)
            })
            .collect();
        let record = RunRecord {
            run_id,
            n_total: required("n_total")?,
            n_active,
            sparsity: required("sparsity")?,
            tokens,
            compute,
            loss: required("loss")?,
            extras,
            compute_synthetic,
        };
        validate_row(path, row_no, &record, &mut seen, &mut warnings)?;
        records.push(record);
    }
    Ok(RunTable { records, provenance: Provenance::default(), warnings })
}

/// Runs bucketed by compute budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetGroups {
    /// Non-empty buckets in ascending budget order.
    pub groups: Vec<(f64, RunTable)>,
    pub unassigned: RunTable,
}

/// Assigns each run to the nearest budget center whose relative distance is
/// within `rel_tol`.
pub fn group_by_budget(table: &RunTable, centers: &[f64], rel_tol: f64) -> Result<BudgetGroups> {
    if !(rel_tol > 0.0 && rel_tol < 0.5) {
        return Err(Error::Domain(format!("rel_tol {rel_tol} must lie in (0, 0.5)")));
    }
    if centers.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::Domain("budget centers must be positive".into()));
    }
    let mut sorted: Vec<f64> = centers.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let mut buckets: Vec<Vec<RunRecord>> = vec![Vec::new(); sorted.len()];
    let mut unassigned = Vec::new();
    for r in table {
        let nearest = sorted
            .iter()
            .enumerate()
            .map(|(i, c)| (i, (r.compute - c).abs() / c))
            .filter(|(_, rel)| *rel <= rel_tol)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((i, _)) => buckets[i].push(r.clone()),
            None => unassigned.push(r.clone()),
        }
    }
    Ok(BudgetGroups {
        groups: sorted
            .into_iter()
            .zip(buckets)
            .filter(|(_, b)| !b.is_empty())
            .map(|(c, b)| (c, table.subset(b)))
            .collect(),
        unassigned: table.subset(unassigned),
    })
}

/// Splits off the runs whose sparsity equals `holdout_sparsity` (within 1e-9).
pub fn split_holdout_by_sparsity(table: &RunTable, holdout_sparsity: f64) -> Result<(RunTable, RunTable)> {
    if !(0.0..1.0).contains(&holdout_sparsity) {
        return Err(Error::Domain(format!("holdout sparsity {holdout_sparsity} outside [0, 1)")));
    }
    let (holdout, fit): (Vec<_>, Vec<_>) = table
        .records
        .iter()
        .cloned()
        .partition(|r| (r.sparsity - holdout_sparsity).abs() <= HOLDOUT_MATCH_TOL);
    Ok((table.subset(fit), table.subset(holdout)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "run_id,n_total,n_active,sparsity,tokens,compute,loss\n";

    fn parse(body: &str) -> Result<RunTable> {
        parse_runs_csv(Path::new("runs.csv"), format!("{HEADER}{body}").as_bytes())
    }

    fn record(id: &str, sparsity: f64, compute: f64) -> RunRecord {
        RunRecord {
            run_id: id.into(),
            n_total: 1e9,
            n_active: 1e9 * (1.0 - sparsity),
            sparsity,
            tokens: compute / (6e9 * (1.0 - sparsity)),
            compute,
            loss: 2.5,
            extras: BTreeMap::new(),
            compute_synthetic: false,
        }
    }

    #[test]
    fn loads_well_formed_rows() {
        let t = parse(
            "a,1e9,2.5e8,0.75,2e10,3e19,2.71\n\
             b,1e9,1e9,0,5e9,3e19,2.80\n\
             c,2000000000,500000000,0.75,1e10,3e19,2.69\n",
        )
        .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.records[2].run_id, "c");
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn sparsity_one_rejected_at_row() {
        let err = parse("a,1e9,2.5e8,0.75,2e10,3e19,2.7\nb,1e9,1e7,1.0,5e11,3e19,2.8\n").unwrap_err();
        match err {
            Error::Load { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "sparsity");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn inconsistent_compute_loads_with_warning() {
        // 6 * 2.5e8 * 2e10 = 3e19, reported compute 50% higher
        let t = parse("a,1e9,2.5e8,0.75,2e10,4.5e19,2.7\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.warnings.len(), 1);
        assert_eq!(t.warnings[0].row, 1);
    }

    #[test]
    fn bad_cells_and_columns() {
        let err = parse("a,1e9,abc,0.75,2e10,3e19,2.7\n").unwrap_err();
        assert!(matches!(err, Error::Load { ref column, .. } if column == "n_active"));

        let err = parse("a,1e9,2.5e8,0.75,2e10,3e19,2.7\na,1e9,2.5e8,0.75,2e10,3e19,2.7\n").unwrap_err();
        assert!(matches!(err, Error::Load { row: 2, ref column, .. } if column == "run_id"));

        let err = parse_runs_csv(Path::new("x.csv"), b"run_id,n_total,sparsity,tokens,loss\n").unwrap_err();
        assert!(matches!(err, Error::Load { ref column, .. } if column == "n_active"));
    }

    #[test]
    fn compute_synthesized_when_absent_and_extras_kept() {
        let csv = "run_id,n_total,n_active,sparsity,tokens,loss,lr\nr1,1e9,2.5e8,0.75,2e10,2.7,3e-4\n";
        let t = parse_runs_csv(Path::new("x.csv"), csv.as_bytes()).unwrap();
        let r = &t.records[0];
        assert!(r.compute_synthetic);
        assert_eq!(r.compute, 6.0 * 2.5e8 * 2e10);
        assert_eq!(r.extras["lr"], "3e-4");
    }

    #[test]
    fn json_mirror_matches_csv() {
        let json = r#"[{"run_id":"a","n_total":1e9,"n_active":2.5e8,"sparsity":0.75,
                       "tokens":2e10,"compute":3e19,"loss":2.71,"lr":0.001}]"#;
        let t = parse_runs_json(Path::new("x.json"), json.as_bytes()).unwrap();
        let c = parse("a,1e9,2.5e8,0.75,2e10,3e19,2.71\n").unwrap();
        assert_eq!(t.records[0].loss, c.records[0].loss);
        assert_eq!(t.records[0].extras["lr"], "0.001");
        let missing = r#"[{"run_id":"a","n_total":1e9,"sparsity":0.75,"tokens":2e10,"loss":2.7}]"#;
        assert!(parse_runs_json(Path::new("x.json"), missing.as_bytes()).is_err());
    }

    #[test]
    fn budget_grouping_examples() {
        let t = RunTable::from_records(vec![record("a", 0.5, 3.05e19), record("b", 0.5, 4.5e19)]).unwrap();
        let g = group_by_budget(&t, &DEFAULT_BUDGETS, 0.05).unwrap();
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0].0, 3e19);
        assert_eq!(g.groups[0].1.records[0].run_id, "a");
        assert_eq!(g.unassigned.records[0].run_id, "b");

        let t = RunTable::from_records(vec![record("c", 0.0, 1.09e18)]).unwrap();
        let g = group_by_budget(&t, &[1e18], 0.1).unwrap();
        assert_eq!(g.groups[0].1.len(), 1);

        assert!(group_by_budget(&t, &[1e18], 0.5).is_err());
    }

    #[test]
    fn holdout_split_partitions() {
        let t = RunTable::from_records(vec![
            record("a", 0.0, 1e20),
            record("b", 0.5, 1e20),
            record("c", 0.98, 1e20),
            record("d", 0.98, 3e20),
        ])
        .unwrap();
        let (fit, hold) = split_holdout_by_sparsity(&t, 0.98).unwrap();
        let ids = |t: &RunTable| t.iter().map(|r| r.run_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&hold), ["c", "d"]);
        assert_eq!(ids(&fit), ["a", "b"]);
        let (fit, hold) = split_holdout_by_sparsity(&t, 0.97).unwrap();
        assert!(hold.is_empty());
        assert_eq!(fit.len(), 4);
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let mut r = record("x", 0.25, 6e19);
        r.extras.insert("warmup".into(), "0.05".into());
        let t = RunTable::from_records(vec![r, record("y", 0.9, 1e21)]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = parse_runs_csv(Path::new("x.csv"), &buf).unwrap();
        assert_eq!(back.records[0].extras["warmup"], "0.05");
        assert_eq!(back.records[1].extras["warmup"], "");
        for (a, b) in t.iter().zip(back.iter()) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.loss, b.loss);
        }
    }
}
