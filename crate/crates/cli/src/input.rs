use std::path::Path;

use msm_bounds::{Design, ObservedData};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Which columns become covariates and how they are expanded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSelection {
    pub outcome: String,
    pub treatment: String,
    /// Empty means every column other than outcome and treatment.
    pub covariates: Vec<String>,
    pub interactions: bool,
    /// Generated columns with fewer nonzero entries are dropped.
    pub min_nonzero: usize,
}

#[derive(Debug)]
pub struct LoadedData {
    pub data: ObservedData,
    /// Design column names after expansion and filtering, intercept excluded.
    pub columns: Vec<String>,
    pub dropped: Vec<String>,
}

fn parse_cell(cell: &str, line: u64, column: &str) -> Result<f64, Failure> {
    let s = cell.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Err(Failure::input(format!("line {line}: missing value in column {column:?}")));
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Failure::input(format!("line {line}: column {column:?} is not numeric: {s:?}")))?;
    if !v.is_finite() {
        return Err(Failure::input(format!("line {line}: column {column:?} is not finite")));
    }
    Ok(v)
}

/// Reads a headed CSV into raw named columns.
pub fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Failure::input(format!("{}: header: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().any(|h| h.is_empty()) {
        return Err(Failure::input("line 1: header has empty column names".into()));
    }
    for (k, h) in header.iter().enumerate() {
        if header[..k].contains(h) {
            return Err(Failure::input(format!("line 1: duplicate column {h:?}")));
        }
    }
    let mut cols = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Failure::input(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, cell) in record.iter().enumerate() {
            cols[j].push(parse_cell(cell, line, &header[j])?);
        }
    }
    if cols[0].is_empty() {
        return Err(Failure::input(format!("{}: no data rows", path.display())));
    }
    Ok((header, cols))
}

/// Main effects plus pairwise products, filtered by nonzero count.
pub fn expand(
    names: &[String],
    cols: &[Vec<f64>],
    interactions: bool,
    min_nonzero: usize,
) -> (Vec<String>, Vec<Vec<f64>>, Vec<String>) {
    let mut out_names = Vec::new();
    let mut out_cols = Vec::new();
    let mut dropped = Vec::new();
    let mut push = |name: String, col: Vec<f64>| {
        if col.iter().filter(|v| **v != 0.0).count() < min_nonzero {
            dropped.push(name);
        } else {
            out_names.push(name);
            out_cols.push(col);
        }
    };
    for (name, col) in names.iter().zip(cols) {
        push(name.clone(), col.clone());
    }
    if interactions {
        for a in 0..names.len() {
            for b in a + 1..names.len() {
                let prod = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).collect();
                push(format!("{}:{}", names[a], names[b]), prod);
            }
        }
    }
    (out_names, out_cols, dropped)
}

pub fn load(path: &Path, sel: &ColumnSelection) -> Result<LoadedData, Failure> {
    let (header, cols) = read_columns(path)?;
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::input(format!("column {name:?} not found in header")))
    };
    let yi = find(&sel.outcome)?;
    let ti = find(&sel.treatment)?;
    if yi == ti {
        return Err(Failure::input("outcome and treatment must be different columns".into()));
    }
    for (k, &t) in cols[ti].iter().enumerate() {
        if t != 0.0 && t != 1.0 {
            return Err(Failure::input(format!(
                "line {}: treatment {:?} must be 0 or 1, found {t}",
                k + 2,
                sel.treatment
            )));
        }
    }
    let chosen: Vec<usize> = if sel.covariates.is_empty() {
        (0..header.len()).filter(|&j| j != yi && j != ti).collect()
    } else {
        sel.covariates.iter().map(|c| find(c)).collect::<Result<_, _>>()?
    };
    if chosen.iter().any(|&j| j == yi || j == ti) {
        return Err(Failure::input("covariates may not include the outcome or treatment".into()));
    }
    let names: Vec<String> = chosen.iter().map(|&j| header[j].clone()).collect();
    let raw: Vec<Vec<f64>> = chosen.iter().map(|&j| cols[j].clone()).collect();
    let (columns, design_cols, dropped) = expand(&names, &raw, sel.interactions, sel.min_nonzero);
    let n = cols[yi].len();
    let design = Design::with_intercept(&design_cols, n).map_err(Failure::from)?;
    let data = ObservedData::with_shared_design(cols[yi].clone(), cols[ti].clone(), design).map_err(Failure::from)?;
    Ok(LoadedData { data, columns, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn selection() -> ColumnSelection {
        ColumnSelection {
            outcome: "y".into(),
            treatment: "t".into(),
            covariates: vec![],
            interactions: false,
            min_nonzero: 0,
        }
    }

    #[test]
    fn missing_value_reports_line() {
        let f = csv_file("y,t,x\n1,1,0.5\n2,0,\n3,1,1\n");
        let err = load(f.path(), &selection()).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("line 3"), "{}", err.message);
    }

    #[test]
    fn non_binary_treatment_rejected() {
        let f = csv_file("y,t,x\n1,1,0.5\n2,2,1\n");
        let err = load(f.path(), &selection()).unwrap_err();
        assert!(err.message.contains("line 3"), "{}", err.message);
    }

    #[test]
    fn ragged_row_rejected() {
        let f = csv_file("y,t,x\n1,1,0.5\n2,0\n");
        assert_eq!(load(f.path(), &selection()).unwrap_err().code, 2);
    }

    #[test]
    fn interactions_filtered_by_nonzero_count() {
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let cols = vec![vec![1.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 1.0, 1.0, 1.0]];
        let (kept, data, dropped) = expand(&names, &cols, true, 2);
        assert_eq!(kept, ["a", "b", "c", "a:c", "b:c"]);
        assert_eq!(dropped, ["a:b"]);
        assert_eq!(data[3], vec![1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn unknown_column_rejected() {
        let f = csv_file("y,t,x\n1,1,0.5\n2,0,1\n");
        let mut sel = selection();
        sel.covariates = vec!["z".into()];
        assert!(load(f.path(), &sel).unwrap_err().message.contains("\"z\""));
    }
}
