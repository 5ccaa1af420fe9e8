//! CSV ingestion into an [`ObservationTable`] and the inverse writer.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use ndarray::{Array1, Array2};
use tatt_core::Table;

use crate::config::{ColumnMapping, Label};
use crate::error::{CliError, Result};

/// A loaded table with the labels needed to report results.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTable {
    pub table: Table,
    pub outcome: String,
    pub region_column: String,
    pub group_column: String,
    pub center_column: Option<String>,
    /// Names of the columns of `table.x()`; one-hot columns are `name=level`.
    pub covariate_names: Vec<String>,
    /// `region_labels[m-1]` is the input label of region `m`.
    pub region_labels: Vec<String>,
    pub group_labels: Vec<String>,
}

impl LoadedTable {
    pub fn region_index(&self, label: &Label) -> Option<usize> {
        self.region_labels.iter().position(|l| *l == label.0).map(|i| i + 1)
    }

    pub fn group_index(&self, label: &Label) -> Option<usize> {
        self.group_labels.iter().position(|l| *l == label.0).map(|i| i + 1)
    }

    pub fn region_label(&self, m: usize) -> &str {
        &self.region_labels[m - 1]
    }

    pub fn group_label(&self, k: usize) -> &str {
        &self.group_labels[k - 1]
    }

    /// Column mapping that reloads a file written by [`write_table`].
    pub fn written_mapping(&self) -> ColumnMapping {
        ColumnMapping {
            outcome: self.outcome.clone(),
            region: self.region_column.clone(),
            group: self.group_column.clone(),
            center: self.center_column.clone(),
            covariates: Some(self.covariate_names.clone()),
            categorical: Vec::new(),
        }
    }
}

/// Distinct labels in index order: numeric order when every label is an
/// integer, lexical order otherwise.
fn ordered_labels(values: &[String]) -> Vec<String> {
    let set: BTreeSet<&String> = values.iter().collect();
    let mut labels: Vec<String> = set.into_iter().cloned().collect();
    if labels.iter().all(|l| l.parse::<i64>().is_ok()) {
        labels.sort_by_key(|l| l.parse::<i64>().unwrap());
    }
    labels
}

pub fn load_table(path: &Path, mapping: &ColumnMapping) -> Result<LoadedTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::table(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::table(path, "file is empty"));
    }
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::table(path, format!("missing column `{name}`")))
    };
    let i_y = col(&mapping.outcome)?;
    let i_t = col(&mapping.region)?;
    let i_r = col(&mapping.group)?;
    let center_name = match &mapping.center {
        Some(c) => Some(c.clone()),
        None => header.iter().any(|h| h == "center_id").then(|| "center_id".to_string()),
    };
    let i_c = center_name.as_deref().map(col).transpose()?;
    let reserved: Vec<usize> = [Some(i_y), Some(i_t), Some(i_r), i_c].into_iter().flatten().collect();
    let covariates: Vec<String> = match &mapping.covariates {
        Some(list) => list.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|(i, _)| !reserved.contains(i))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cov_idx: Vec<usize> = covariates.iter().map(|c| col(c)).collect::<Result<_>>()?;
    for c in &mapping.categorical {
        if !covariates.contains(c) {
            return Err(CliError::table(path, format!("categorical column `{c}` is not a covariate")));
        }
    }

    let mut records: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        records.push(rec.map_err(|e| CliError::table(path, e.to_string()))?);
    }
    if records.is_empty() {
        return Err(CliError::table(path, "file has a header but no rows"));
    }

    // required-field check across all rows before any parsing
    let required: Vec<(usize, &str)> = [(i_y, mapping.outcome.as_str()), (i_t, mapping.region.as_str()), (i_r, mapping.group.as_str())]
        .into_iter()
        .chain(i_c.map(|i| (i, center_name.as_deref().unwrap())))
        .chain(cov_idx.iter().zip(&covariates).map(|(&i, n)| (i, n.as_str())))
        .collect();
    let mut problems = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        for &(i, name) in &required {
            if rec.get(i).is_none_or(str::is_empty) {
                problems.push(format!("row {} (line {}): missing `{name}`", r + 1, r + 2));
            }
        }
    }
    if !problems.is_empty() {
        let shown = problems.len().min(20);
        let more = if problems.len() > shown { format!("; and {} more", problems.len() - shown) } else { String::new() };
        return Err(CliError::table(path, format!("{}{more}", problems[..shown].join("; "))));
    }

    let n = records.len();
    let mut y = Array1::zeros(n);
    for (r, rec) in records.iter().enumerate() {
        let v = &rec[i_y];
        y[r] = match v.parse::<f64>() {
            Ok(0.0) => 0.0,
            Ok(1.0) => 1.0,
            _ => {
                return Err(CliError::table(
                    path,
                    format!("row {} (line {}): outcome `{v}` is not 0 or 1", r + 1, r + 2),
                ))
            }
        };
    }
    let t_raw: Vec<String> = records.iter().map(|rec| rec[i_t].to_string()).collect();
    let r_raw: Vec<String> = records.iter().map(|rec| rec[i_r].to_string()).collect();
    let region_labels = ordered_labels(&t_raw);
    let group_labels = ordered_labels(&r_raw);
    let index_of = |labels: &[String]| -> HashMap<String, usize> {
        labels.iter().enumerate().map(|(i, l)| (l.clone(), i + 1)).collect()
    };
    let t_map = index_of(&region_labels);
    let r_map = index_of(&group_labels);
    let t: Vec<usize> = t_raw.iter().map(|l| t_map[l]).collect();
    let r: Vec<usize> = r_raw.iter().map(|l| r_map[l]).collect();
    let centers = i_c.map(|i| records.iter().map(|rec| rec[i].to_string()).collect::<Vec<_>>());

    // covariate expansion
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (&i, name) in cov_idx.iter().zip(&covariates) {
        if mapping.categorical.contains(name) {
            let levels: BTreeSet<&str> = records.iter().map(|rec| &rec[i]).collect();
            for level in levels.into_iter().skip(1) {
                names.push(format!("{name}={level}"));
                columns.push(records.iter().map(|rec| f64::from(u8::from(&rec[i] == level))).collect());
            }
        } else {
            let mut values = Vec::with_capacity(n);
            for (r, rec) in records.iter().enumerate() {
                let v = &rec[i];
                match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => values.push(x),
                    _ => {
                        return Err(CliError::table(
                            path,
                            format!("row {} (line {}): covariate `{name}` value `{v}` is not a finite number", r + 1, r + 2),
                        ))
                    }
                }
            }
            names.push(name.clone());
            columns.push(values);
        }
    }
    let x = Array2::from_shape_fn((n, columns.len()), |(i, j)| columns[j][i]);
    let table = Table::new(y, t, r, x, centers, region_labels.len(), group_labels.len())?;
    Ok(LoadedTable {
        table,
        outcome: mapping.outcome.clone(),
        region_column: mapping.region.clone(),
        group_column: mapping.group.clone(),
        center_column: center_name,
        covariate_names: names,
        region_labels,
        group_labels,
    })
}

/// Writes the table with expanded covariates; [`LoadedTable::written_mapping`]
/// reads it back to an identical table.
pub fn write_table(data: &LoadedTable, path: &Path) -> Result<()> {
    let mut header = vec![data.outcome.clone(), data.region_column.clone(), data.group_column.clone()];
    if let Some(c) = &data.center_column {
        header.push(c.clone());
    }
    header.extend(data.covariate_names.iter().cloned());
    let t = &data.table;
    let rows: Vec<Vec<String>> = (0..t.n())
        .map(|i| {
            let mut row = vec![
                format!("{}", t.y()[i]),
                data.region_label(t.regions()[i]).to_string(),
                data.group_label(t.groups()[i]).to_string(),
            ];
            if let Some(c) = t.centers() {
                row.push(c[i].clone());
            }
            row.extend(t.x().row(i).iter().map(|v| format!("{v}")));
            row
        })
        .collect();
    crate::report::write_csv(path, &header, &rows)
}
