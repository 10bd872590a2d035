use std::path::Path;

use nalgebra::{DMatrix, DVector};
use optsub::{Dataset, Intercept};

use crate::error::CliError;

/// Which column holds the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    /// Zero-based position.
    Index(usize),
}

impl ColumnRef {
    /// Integers are positions, anything else is a header name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.trim().to_string()),
        }
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Name(n) => f.write_str(n),
            ColumnRef::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub response: ColumnRef,
    pub standardize: bool,
    pub intercept: bool,
    pub has_header: bool,
}

#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub feature_names: Vec<String>,
    pub response_name: String,
    /// Per-feature `(mean, sd)` used for standardization.
    pub scaling: Option<Vec<(f64, f64)>>,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("NA")
}

/// Reads a numeric CSV. Empty or `NA` fields are allowed in the response only and mark
/// rows whose response has not been measured. Standardization uses the population
/// (`1/n`) standard deviation.
pub fn load_csv_dataset(path: &Path, options: &CsvOptions) -> Result<LoadedCsv, CliError> {
    let data_err = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(e.to_string()))?;

    let header: Option<Vec<String>> = if options.has_header {
        Some(
            reader
                .headers()
                .map_err(|e| data_err(format!("malformed header: {e}")))?
                .iter()
                .map(str::to_string)
                .collect(),
        )
    } else {
        None
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        // 1-based line numbers, counting the header
        let line = k + 1 + usize::from(options.has_header);
        let rec = rec.map_err(|e| data_err(format!("malformed CSV at line {line}: {e}")))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(Vec::len))
        .ok_or_else(|| data_err("file is empty".into()))?;
    let names: Vec<String> =
        header.unwrap_or_else(|| (0..width).map(|i| format!("col{i}")).collect());

    let response = match &options.response {
        ColumnRef::Index(i) if *i < width => *i,
        ColumnRef::Index(i) => {
            return Err(data_err(format!(
                "response column index {i} out of range ({width} columns)"
            )));
        }
        ColumnRef::Name(name) => names.iter().position(|h| h == name).ok_or_else(|| {
            data_err(format!(
                "response column `{name}` not found; available columns: {}",
                names.join(", ")
            ))
        })?,
    };
    if rows.is_empty() {
        return Err(data_err("no data rows".into()));
    }
    if width < 2 {
        return Err(data_err(
            "need at least one feature column besides the response".into(),
        ));
    }

    let n = rows.len();
    let p = width - 1;
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        let line = i + 1 + usize::from(options.has_header);
        let mut jx = 0;
        for (j, field) in row.iter().enumerate() {
            if j == response {
                y[i] = if is_missing(field) {
                    f64::NAN
                } else {
                    parse_number(field).ok_or_else(|| {
                        data_err(format!(
                            "non-numeric value `{field}` at line {line}, column `{}`",
                            names[j]
                        ))
                    })?
                };
                continue;
            }
            let v = parse_number(field).ok_or_else(|| {
                if is_missing(field) {
                    data_err(format!("missing value at line {line}, column `{}` (NA is allowed in the response only)", names[j]))
                } else {
                    data_err(format!("non-numeric value `{field}` at line {line}, column `{}`", names[j]))
                }
            })?;
            x[(i, jx)] = v;
            jx += 1;
        }
    }
    let feature_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != response)
        .map(|(_, s)| s.clone())
        .collect();

    let scaling = if options.standardize {
        let mut out = Vec::with_capacity(p);
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let mean = col.mean();
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            if !(sd > 0.0) {
                return Err(data_err(format!(
                    "constant column `{}` cannot be standardized",
                    feature_names[j]
                )));
            }
            col.apply(|v| *v = (*v - mean) / sd);
            out.push((mean, sd));
        }
        Some(out)
    } else {
        None
    };

    let intercept = if options.intercept {
        Intercept::Add
    } else {
        Intercept::None
    };
    let dataset = Dataset::new(x, Some(y), intercept).map_err(|e| data_err(e.to_string()))?;
    Ok(LoadedCsv {
        dataset,
        feature_names,
        response_name: names[response].clone(),
        scaling,
    })
}

fn parse_number(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}
