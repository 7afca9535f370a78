use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Objective, Table, Task};
use crate::domain::{point_key, SearchDomain};
use crate::error::{Error, Result};

/// Treatment of non-numeric feature columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalMode {
    #[default]
    OneHot,
    Drop,
}

fn format_err(line: u64, message: impl Into<String>) -> Error {
    Error::Format {
        line,
        message: message.into(),
    }
}

/// Loads a CSV table as a finite maximization problem over its rows.
///
/// Feature rows that repeat are merged and take the mean target. Features and
/// target are then standardized; constant feature columns are dropped.
pub fn load_dataset_objective(path: &Path, target_column: &str, noise_std: f64, categorical: CategoricalMode) -> Result<Task> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!(),
            },
            _ => Error::Csv(e),
        })?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| format_err(1, format!("no column named '{target_column}'")))?;

    let mut cells: Vec<Vec<String>> = Vec::new();
    let mut lines: Vec<u64> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            format_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(format_err(line, format!("expected {} fields, found {}", headers.len(), record.len())));
        }
        cells.push(record.iter().map(str::to_owned).collect());
        lines.push(line);
    }
    if cells.is_empty() {
        return Err(format_err(1, "no data rows"));
    }

    let mut targets = Vec::with_capacity(cells.len());
    for (row, line) in cells.iter().zip(&lines) {
        let v: f64 = row[target]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| format_err(*line, format!("non-numeric target '{}'", row[target])))?;
        targets.push(v);
    }

    // Build raw feature columns.
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        if c == target {
            continue;
        }
        let parsed: Option<Vec<f64>> = cells
            .iter()
            .map(|r| r[c].parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match (parsed, categorical) {
            (Some(values), _) => columns.push((name.clone(), values)),
            (None, CategoricalMode::Drop) => log::info!("dropping categorical column '{name}'"),
            (None, CategoricalMode::OneHot) => {
                let levels: BTreeSet<&str> = cells.iter().map(|r| r[c].as_str()).collect();
                for level in levels {
                    let values = cells.iter().map(|r| f64::from(u8::from(r[c] == level))).collect();
                    columns.push((format!("{name}={level}"), values));
                }
            }
        }
    }
    if columns.is_empty() {
        return Err(format_err(1, "no feature columns"));
    }

    // Merge duplicate feature rows into their mean target.
    let n = cells.len();
    let mut order: Vec<Vec<f64>> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for i in 0..n {
        let row: Vec<f64> = columns.iter().map(|(_, v)| v[i]).collect();
        match seen.get(&point_key(&row)) {
            Some(&j) => {
                sums[j].0 += targets[i];
                sums[j].1 += 1;
            }
            None => {
                seen.insert(point_key(&row), order.len());
                order.push(row);
                sums.push((targets[i], 1));
            }
        }
    }
    if order.len() < n {
        log::info!("merged {} duplicate feature rows into their mean target", n - order.len());
    }
    let mut targets: Vec<f64> = sums.iter().map(|(s, c)| s / *c as f64).collect();

    // Standardize features, dropping constant columns.
    let rows = order.len();
    let mut keep = Vec::new();
    let mut stats = Vec::new();
    for (c, (name, _)) in columns.iter().enumerate() {
        let (m, s) = mean_std(order.iter().map(|r| r[c]));
        if s > 0.0 {
            keep.push(c);
            stats.push((m, s));
        } else {
            log::info!("dropping constant column '{name}'");
        }
    }
    if keep.is_empty() {
        return Err(format_err(1, "every feature column is constant"));
    }
    let points: Vec<Vec<f64>> = order
        .iter()
        .map(|r| keep.iter().zip(&stats).map(|(&c, (m, s))| (r[c] - m) / s).collect())
        .collect();

    let (tm, ts) = mean_std(targets.iter().copied());
    let ts = if ts > 0.0 { ts } else { 1.0 };
    targets.iter_mut().for_each(|v| *v = (*v - tm) / ts);

    let domain = SearchDomain::finite(points.clone())?;
    if domain.candidate_count() != rows {
        return Err(Error::numerical("standardization merged distinct feature rows"));
    }
    let table = Table::new(&points, targets)?;
    Task::new("dataset", domain, Objective::Table(table), noise_std)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let m = values.clone().sum::<f64>() / n;
    let v = values.map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn toy_optimum() {
        let f = write("a,b,y\n1,2,1\n3,1,5\n0,0,3\n");
        let task = load_dataset_objective(f.path(), "y", 0.0, CategoricalMode::Drop).unwrap();
        let (m, s) = mean_std([1.0, 5.0, 3.0].into_iter());
        assert!((task.optimum_value - (5.0 - m) / s).abs() < 1e-12);
        let pts = match &task.domain {
            SearchDomain::Finite { points } => points.clone(),
            _ => unreachable!(),
        };
        assert_eq!(task.regret(&pts[1]).unwrap(), 0.0);
    }

    #[test]
    fn duplicates_average() {
        let f = write("a,y\n1,2\n1,4\n2,0\n");
        let task = load_dataset_objective(f.path(), "y", 0.0, CategoricalMode::Drop).unwrap();
        assert_eq!(task.domain.candidate_count(), 2);
        let Objective::Table(t) = &task.objective else { unreachable!() };
        // Merged targets 3 and 0, standardized.
        assert!((t.values()[0] - 1.0).abs() < 1e-12);
        assert!((t.values()[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardized_columns() {
        let f = write("a,b,c,y\n1,10,5,0\n2,30,5,1\n4,20,5,2\n8,0,5,3\n");
        let task = load_dataset_objective(f.path(), "y", 0.0, CategoricalMode::Drop).unwrap();
        let SearchDomain::Finite { points } = &task.domain else { unreachable!() };
        assert_eq!(points[0].len(), 2, "constant column dropped");
        for c in 0..2 {
            let (m, s) = mean_std(points.iter().map(|p| p[c]));
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn categorical_modes() {
        let f = write("sex,len,y\nM,0.5,1\nF,0.4,2\nI,0.3,3\nM,0.6,4\n");
        let t = load_dataset_objective(f.path(), "y", 0.0, CategoricalMode::OneHot).unwrap();
        assert_eq!(t.domain.dim(), 4);
        let t = load_dataset_objective(f.path(), "y", 0.0, CategoricalMode::Drop).unwrap();
        assert_eq!(t.domain.dim(), 1);
    }

    #[test]
    fn format_errors_carry_lines() {
        let f = write("a,y\n1,2\n2,x\n");
        match load_dataset_objective(f.path(), "y", 0.0, CategoricalMode::Drop) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let f = write("a,y\n1,2\n2,3,4\n");
        assert!(matches!(
            load_dataset_objective(f.path(), "y", 0.0, CategoricalMode::Drop),
            Err(Error::Format { line: 3, .. })
        ));
        let f = write("a,y\n1,2\n");
        assert!(load_dataset_objective(f.path(), "z", 0.0, CategoricalMode::Drop).is_err());
        assert!(matches!(
            load_dataset_objective(Path::new("/nonexistent/x.csv"), "y", 0.0, CategoricalMode::Drop),
            Err(Error::Io { .. })
        ));
    }
}
