//! Contingency tables, optionally stratified by explanatory-variable
//! configurations.
//!
//! Cells are stored in lexicographic order with the last variable varying
//! fastest. Category labels are 1-based, flat offsets 0-based.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LogitType;

/// One response variable: its name, category count and logit type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub categories: usize,
    pub logit_type: LogitType,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, categories: usize, logit_type: LogitType) -> Result<Self> {
        if categories < 2 {
            return Err(Error::domain(format!(
                "variable needs at least 2 categories, got {categories}"
            )));
        }
        Ok(Self {
            name: name.into(),
            categories,
            logit_type,
        })
    }
}

/// Flat 0-based offset of a 1-based multi-index, last variable fastest.
pub fn lex_index(multi_index: &[usize], dims: &[usize]) -> Result<usize> {
    if multi_index.len() != dims.len() {
        return Err(Error::dim(format!(
            "multi-index has {} entries, table has {} variables",
            multi_index.len(),
            dims.len()
        )));
    }
    let mut flat = 0usize;
    for (i, (&a, &m)) in multi_index.iter().zip(dims).enumerate() {
        if a < 1 || a > m {
            return Err(Error::domain(format!(
                "category {a} of variable {} outside 1..={m}",
                i + 1
            )));
        }
        flat = flat * m + (a - 1);
    }
    Ok(flat)
}

/// Inverse of [`lex_index`].
pub fn lex_multi_index(flat: usize, dims: &[usize]) -> Result<Vec<usize>> {
    let r: usize = dims.iter().product();
    if flat >= r {
        return Err(Error::domain(format!("cell {flat} outside 0..{r}")));
    }
    let mut out = vec![0; dims.len()];
    let mut rest = flat;
    for (slot, &m) in out.iter_mut().zip(dims).rev() {
        *slot = rest % m + 1;
        rest /= m;
    }
    Ok(out)
}

/// A single multi-way table of non-negative counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    dims: Vec<usize>,
    counts: Vec<u64>,
}

impl ContingencyTable {
    pub fn new(dims: Vec<usize>, counts: Vec<u64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::domain("table needs at least one variable"));
        }
        if let Some(m) = dims.iter().find(|&&m| m < 2) {
            return Err(Error::domain(format!(
                "every variable needs at least 2 categories, got {m}"
            )));
        }
        let r: usize = dims.iter().product();
        if counts.len() != r {
            return Err(Error::dim(format!(
                "{} counts supplied for {r} cells",
                counts.len()
            )));
        }
        Ok(Self { dims, counts })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_cells(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count at a 1-based multi-index.
    pub fn get(&self, multi_index: &[usize]) -> Result<u64> {
        Ok(self.counts[lex_index(multi_index, &self.dims)?])
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// One table per stratum, all sharing the same dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedTable {
    variables: Vec<String>,
    strata: Vec<String>,
    tables: Vec<ContingencyTable>,
}

impl StratifiedTable {
    pub fn new(
        variables: Vec<String>,
        strata: Vec<String>,
        tables: Vec<ContingencyTable>,
    ) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::domain("at least one stratum is required"));
        }
        if strata.len() != tables.len() {
            return Err(Error::dim(format!(
                "{} stratum labels for {} tables",
                strata.len(),
                tables.len()
            )));
        }
        let dims = tables[0].dims();
        let mut problems = Vec::new();
        for (label, t) in strata.iter().zip(&tables) {
            if t.dims() != dims {
                problems.push(format!(
                    "stratum '{label}' has dims {:?}, expected {dims:?}",
                    t.dims()
                ));
            }
        }
        if variables.len() != dims.len() {
            problems.push(format!(
                "{} variable names for {} variables",
                variables.len(),
                dims.len()
            ));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Self {
            variables,
            strata,
            tables,
        })
    }

    /// The single-stratum table of stratum `b`.
    pub fn stratum(&self, b: usize) -> Result<Self> {
        let table = self
            .tables
            .get(b)
            .ok_or_else(|| Error::dim(format!("stratum {} out of range", b + 1)))?;
        Ok(Self {
            variables: self.variables.clone(),
            strata: vec![self.strata[b].clone()],
            tables: vec![table.clone()],
        })
    }

    /// Unstratified table with default variable names `a1..aq`.
    pub fn single(table: ContingencyTable) -> Self {
        let variables = default_names(table.dims().len());
        Self {
            variables,
            strata: vec!["all".to_string()],
            tables: vec![table],
        }
    }

    pub fn dims(&self) -> &[usize] {
        self.tables[0].dims()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn strata(&self) -> &[String] {
        &self.strata
    }

    pub fn tables(&self) -> &[ContingencyTable] {
        &self.tables
    }

    pub fn num_strata(&self) -> usize {
        self.tables.len()
    }

    pub fn cells_per_stratum(&self) -> usize {
        self.tables[0].n_cells()
    }

    pub fn total(&self) -> u64 {
        self.tables.iter().map(ContingencyTable::total).sum()
    }

    pub fn stratum_totals(&self) -> Vec<u64> {
        self.tables.iter().map(ContingencyTable::total).collect()
    }

    /// A table of the same shape with every count replaced by `value`.
    pub fn filled(&self, value: u64) -> Self {
        let tables = self
            .tables
            .iter()
            .map(|t| ContingencyTable {
                dims: t.dims.clone(),
                counts: vec![value; t.n_cells()],
            })
            .collect();
        Self {
            variables: self.variables.clone(),
            strata: self.strata.clone(),
            tables,
        }
    }

    pub fn shape_label(&self) -> String {
        let cells = self
            .dims()
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join("x");
        if self.num_strata() > 1 {
            format!("{cells} x {} strata", self.num_strata())
        } else {
            cells
        }
    }

    /// Serialise as sparse CSV: `stratum,<vars>,count`, one row per
    /// non-zero cell, preceded by `# dims:` and `# strata:` comment lines.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let dims = self
            .dims()
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(out, "# dims: {dims}");
        let _ = writeln!(out, "# strata: {}", self.strata.join(","));
        let _ = writeln!(out, "stratum,{},count", self.variables.join(","));
        for (label, table) in self.strata.iter().zip(&self.tables) {
            for (flat, &c) in table.counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let multi = lex_multi_index(flat, table.dims()).expect("flat index in range");
                let cells = multi
                    .iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                let _ = writeln!(out, "{label},{cells},{c}");
            }
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut declared_dims: Option<Vec<usize>> = None;
        let mut declared_strata: Option<Vec<String>> = None;
        for line in text.lines() {
            let Some(rest) = line.trim().strip_prefix('#') else {
                continue;
            };
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("dims:") {
                let dims = v
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Validation(vec![format!("bad dims comment: {e}")]))?;
                declared_dims = Some(dims);
            } else if let Some(v) = rest.strip_prefix("strata:") {
                declared_strata = Some(v.split(',').map(|s| s.trim().to_string()).collect());
            }
        }

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        if header.len() < 3
            || header.get(0) != Some("stratum")
            || header.get(header.len() - 1) != Some("count")
        {
            return Err(Error::Validation(vec![
                "header must read `stratum,<variables...>,count`".to_string(),
            ]));
        }
        let q = header.len() - 2;
        let variables: Vec<String> = (1..=q).map(|i| header[i].to_string()).collect();

        let mut problems = Vec::new();
        let mut rows: Vec<(String, Vec<usize>, u64, usize)> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record?;
            if record.len() != q + 2 {
                problems.push(format!("row {line}: expected {} fields", q + 2));
                continue;
            }
            let stratum = record[0].to_string();
            let mut multi = Vec::with_capacity(q);
            let mut ok = true;
            for j in 1..=q {
                match record[j].parse::<usize>() {
                    Ok(a) if a >= 1 => multi.push(a),
                    _ => {
                        problems.push(format!(
                            "row {line}: category '{}' for {} is not a positive integer",
                            &record[j], variables[j - 1]
                        ));
                        ok = false;
                    }
                }
            }
            let count = match record[q + 1].parse::<i64>() {
                Ok(c) if c < 0 => {
                    problems.push(format!("row {line}: negative count {c}"));
                    ok = false;
                    0
                }
                Ok(c) => c as u64,
                Err(_) => {
                    problems.push(format!("row {line}: count '{}' is not an integer", &record[q + 1]));
                    ok = false;
                    0
                }
            };
            if ok {
                rows.push((stratum, multi, count, line));
            }
        }

        let dims = match declared_dims {
            Some(d) => {
                if d.len() != q {
                    problems.push(format!(
                        "dims comment lists {} variables, header has {q}",
                        d.len()
                    ));
                }
                d
            }
            None => (0..q)
                .map(|j| rows.iter().map(|r| r.1[j]).max().unwrap_or(2).max(2))
                .collect(),
        };
        let strata = match declared_strata {
            Some(s) => s,
            None => {
                let mut seen: Vec<String> = Vec::new();
                for r in &rows {
                    if !seen.contains(&r.0) {
                        seen.push(r.0.clone());
                    }
                }
                if seen.is_empty() {
                    seen.push("all".to_string());
                }
                seen
            }
        };
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }

        let r: usize = dims.iter().product();
        let mut counts = vec![vec![0u64; r]; strata.len()];
        let mut filled = vec![vec![false; r]; strata.len()];
        for (stratum, multi, count, line) in rows {
            let Some(s) = strata.iter().position(|x| *x == stratum) else {
                problems.push(format!("row {line}: undeclared stratum '{stratum}'"));
                continue;
            };
            match lex_index(&multi, &dims) {
                Ok(flat) => {
                    if filled[s][flat] {
                        problems.push(format!("row {line}: duplicate cell {multi:?} in '{stratum}'"));
                    }
                    filled[s][flat] = true;
                    counts[s][flat] = count;
                }
                Err(e) => problems.push(format!("row {line}: {e}")),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let tables = counts
            .into_iter()
            .map(|c| ContingencyTable::new(dims.clone(), c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(variables, strata, tables)
    }

    pub fn to_json_string(&self) -> String {
        let doc = TableJson {
            dims: self.dims().to_vec(),
            variables: Some(self.variables.clone()),
            strata: self.strata.clone(),
            counts: self
                .tables
                .iter()
                .map(|t| t.counts.iter().map(|&c| c as i64).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("table serialises")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: TableJson = serde_json::from_str(text)?;
        let mut problems = Vec::new();
        if doc.counts.len() != doc.strata.len() {
            problems.push(format!(
                "{} count arrays for {} strata",
                doc.counts.len(),
                doc.strata.len()
            ));
        }
        let r: usize = doc.dims.iter().product();
        for (s, row) in doc.counts.iter().enumerate() {
            let label = doc.strata.get(s).map(String::as_str).unwrap_or("?");
            if row.len() != r {
                problems.push(format!(
                    "stratum '{label}' has {} counts, expected {r} (ragged strata)",
                    row.len()
                ));
            }
            for (i, &c) in row.iter().enumerate() {
                if c < 0 {
                    problems.push(format!("stratum '{label}' cell {i}: negative count {c}"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let variables = doc
            .variables
            .unwrap_or_else(|| default_names(doc.dims.len()));
        let tables = doc
            .counts
            .into_iter()
            .map(|row| ContingencyTable::new(doc.dims.clone(), row.into_iter().map(|c| c as u64).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(variables, doc.strata, tables)
    }
}

#[derive(Serialize, Deserialize)]
struct TableJson {
    dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variables: Option<Vec<String>>,
    strata: Vec<String>,
    counts: Vec<Vec<i64>>,
}

fn default_names(q: usize) -> Vec<String> {
    (1..=q).map(|i| format!("a{i}")).collect()
}

/// Load a table from a `.csv` or `.json` file, or a bundled fixture given
/// as `fixture:<name>`.
pub fn load_table(source: &str) -> Result<StratifiedTable> {
    if let Some(name) = source.strip_prefix("fixture:") {
        return crate::fixtures::by_name(name);
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(source, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => StratifiedTable::from_json_str(&text),
        Some("csv") => StratifiedTable::from_csv_str(&text),
        _ => Err(Error::Validation(vec![format!(
            "{source}: unknown table format (expected .csv or .json)"
        )])),
    }
}

/// Report-only summary of a table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub cells: usize,
    pub zero_cells: usize,
    pub sparsity: f64,
    pub stratum_totals: Vec<u64>,
    pub total: u64,
    pub empty_strata: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn validate(table: &StratifiedTable) -> Diagnostics {
    let cells = table.cells_per_stratum() * table.num_strata();
    let zero_cells = table
        .tables()
        .iter()
        .map(|t| t.counts().iter().filter(|&&c| c == 0).count())
        .sum();
    let stratum_totals = table.stratum_totals();
    let total = table.total();
    let empty_strata: Vec<String> = table
        .strata()
        .iter()
        .zip(&stratum_totals)
        .filter(|(_, &n)| n == 0)
        .map(|(s, _)| s.clone())
        .collect();
    let mut warnings = Vec::new();
    if total == 0 {
        warnings.push("n = 0: table has no observations and cannot be fitted".to_string());
    } else if !empty_strata.is_empty() {
        warnings.push(format!("empty strata: {}", empty_strata.join(", ")));
    }
    if zero_cells * 2 > cells {
        warnings.push(format!("sparse table: {zero_cells} of {cells} cells are empty"));
    }
    Diagnostics {
        cells,
        zero_cells,
        sparsity: zero_cells as f64 / cells as f64,
        stratum_totals,
        total,
        empty_strata,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lex_index_examples() {
        assert_eq!(lex_index(&[1, 1], &[6, 6]).unwrap(), 0);
        assert_eq!(lex_index(&[1, 2], &[6, 6]).unwrap(), 1);
        assert_eq!(lex_index(&[2, 1], &[6, 6]).unwrap(), 6);
    }

    #[test]
    fn lex_index_matches_enumeration_oracle() {
        // Enumerate the 3^4 cells with nested loops, last variable innermost.
        let dims = [3, 3, 3, 3];
        let mut position = 0;
        let mut found = None;
        for a in 1..=3 {
            for b in 1..=3 {
                for c in 1..=3 {
                    for d in 1..=3 {
                        if [a, b, c, d] == [1, 2, 1, 2] {
                            found = Some(position);
                        }
                        assert_eq!(lex_index(&[a, b, c, d], &dims).unwrap(), position);
                        position += 1;
                    }
                }
            }
        }
        assert_eq!(found, Some(10));
        assert_eq!(lex_index(&[1, 2, 1, 2], &dims).unwrap(), 10);
    }

    #[test]
    fn lex_index_rejects_out_of_range() {
        assert!(matches!(lex_index(&[0, 1], &[6, 6]), Err(Error::Domain(_))));
        assert!(matches!(lex_index(&[7, 1], &[6, 6]), Err(Error::Domain(_))));
        assert!(matches!(lex_index(&[1], &[6, 6]), Err(Error::Dimension(_))));
        assert!(lex_multi_index(36, &[6, 6]).is_err());
    }

    #[test]
    fn csv_validation_lists_offending_rows() {
        let text = "stratum,a1,a2,count\nall,1,1,4\nall,1,2,-3\nall,0,1,2\n";
        match StratifiedTable::from_csv_str(text) {
            Err(Error::Validation(problems)) => {
                assert!(problems.iter().any(|p| p.contains("row 3") && p.contains("negative")));
                assert!(problems.iter().any(|p| p.contains("row 4")));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn csv_dimension_mismatch_is_reported() {
        let text = "# dims: 2,2\nstratum,a1,a2,count\nall,3,1,4\n";
        assert!(matches!(
            StratifiedTable::from_csv_str(text),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn csv_missing_cells_are_zero() {
        let text = "# dims: 2,3\nstratum,a1,a2,count\nall,2,3,5\n";
        let t = StratifiedTable::from_csv_str(text).unwrap();
        assert_eq!(t.tables()[0].counts(), &[0, 0, 0, 0, 0, 5]);
    }

    #[test]
    fn json_ragged_strata_rejected() {
        let text = r#"{"dims":[2,2],"strata":["a","b"],"counts":[[1,2,3,4],[1,2,3]]}"#;
        match StratifiedTable::from_json_str(text) {
            Err(Error::Validation(p)) => assert!(p[0].contains("ragged")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_table_is_flagged() {
        let t = StratifiedTable::single(ContingencyTable::new(vec![2, 2], vec![0; 4]).unwrap());
        let d = validate(&t);
        assert_eq!(d.total, 0);
        assert!(d.warnings.iter().any(|w| w.contains("n = 0")));
    }

    #[test]
    fn variable_spec_needs_two_categories() {
        assert!(VariableSpec::new("x", 1, LogitType::Local).is_err());
        assert!(VariableSpec::new("x", 2, LogitType::Global).is_ok());
    }
}
