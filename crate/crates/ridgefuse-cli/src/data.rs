//! CSV dataset ingestion.
//!
//! Expected layout: a header row, an optional leading `label` column
//! (integer class ids `1..C`, empty cells mark unlabeled rows), and numeric
//! feature columns. UTF-8, comma delimiter, `.` decimal point.

use nalgebra::DMatrix;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    /// Per-row class index (0-based) when a `label` column is present;
    /// `None` entries are unlabeled rows.
    pub labels: Option<Vec<Option<usize>>>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// All rows labeled, classes `1..C` contiguous; returns 0-based labels.
    pub fn complete_labels(&self) -> Result<Vec<usize>, CliError> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| CliError::input("the dataset has no `label` column"))?;
        let mut out = Vec::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            match l {
                Some(c) => out.push(*c),
                None => {
                    return Err(CliError::input(format!(
                        "row {} is unlabeled but this command requires labels",
                        i + 1
                    )))
                }
            }
        }
        check_contiguous(&out)?;
        Ok(out)
    }

    /// Splits rows into (labeled rows with 0-based classes, unlabeled rows),
    /// remembering each unlabeled row's original 1-based position.
    #[allow(clippy::type_complexity)]
    pub fn split_semi(
        &self,
    ) -> Result<(DMatrix<f64>, Vec<usize>, DMatrix<f64>, Vec<usize>), CliError> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| CliError::input("the dataset has no `label` column"))?;
        let p = self.dim();
        let labeled_rows: Vec<usize> = (0..self.n_rows()).filter(|&i| labels[i].is_some()).collect();
        let unlabeled_rows: Vec<usize> = (0..self.n_rows()).filter(|&i| labels[i].is_none()).collect();
        if labeled_rows.is_empty() {
            return Err(CliError::input("no labeled rows in the dataset"));
        }
        let lx = DMatrix::from_fn(labeled_rows.len(), p, |i, j| {
            self.features[(labeled_rows[i], j)]
        });
        let ly: Vec<usize> = labeled_rows.iter().map(|&i| labels[i].unwrap()).collect();
        check_contiguous(&ly)?;
        let ux = DMatrix::from_fn(unlabeled_rows.len(), p, |i, j| {
            self.features[(unlabeled_rows[i], j)]
        });
        let unlabeled_ids: Vec<usize> = unlabeled_rows.iter().map(|&i| i + 1).collect();
        Ok((lx, ly, ux, unlabeled_ids))
    }
}

fn check_contiguous(y: &[usize]) -> Result<(), CliError> {
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; n_classes];
    for &c in y {
        seen[c] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(CliError::input(format!(
            "class labels must cover 1..{} but class {} is absent",
            n_classes,
            missing + 1
        )));
    }
    Ok(())
}

pub fn read_dataset(path: &std::path::Path) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        .clone();
    if headers.is_empty() {
        return Err(CliError::input(format!("{}: empty header row", path.display())));
    }
    let has_label = headers.get(0) == Some("label");
    let p = headers.len() - usize::from(has_label);
    if p == 0 {
        return Err(CliError::input(format!("{}: no feature columns", path.display())));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if record.len() != headers.len() {
            return Err(CliError::input(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                idx + 1,
                record.len(),
                headers.len()
            )));
        }
        if has_label {
            let cell = record.get(0).unwrap_or("");
            if cell.is_empty() {
                labels.push(None);
            } else {
                let raw: i64 = cell.parse().map_err(|_| {
                    CliError::input(format!(
                        "{}: row {}: label `{cell}` is not an integer",
                        path.display(),
                        idx + 1
                    ))
                })?;
                if raw < 1 {
                    return Err(CliError::input(format!(
                        "{}: row {}: labels start at 1, got {raw}",
                        path.display(),
                        idx + 1
                    )));
                }
                labels.push(Some((raw - 1) as usize));
            }
        }
        let mut row = Vec::with_capacity(p);
        for j in 0..p {
            let cell = record.get(j + usize::from(has_label)).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                CliError::input(format!(
                    "{}: row {}: feature `{}` = `{cell}` is not numeric",
                    path.display(),
                    idx + 1,
                    headers.get(j + usize::from(has_label)).unwrap_or("?")
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::input(format!(
                    "{}: row {}: feature `{}` is not finite",
                    path.display(),
                    idx + 1,
                    headers.get(j + usize::from(has_label)).unwrap_or("?")
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    let features = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    Ok(Dataset {
        features,
        labels: has_label.then_some(labels),
    })
}
