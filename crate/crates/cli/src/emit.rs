//! Writing results: CSV with a header row and LF endings, JSON with sorted keys.

use serde::Serialize;
use serde_json::Value;
use std::path::{Path, PathBuf};

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// A rectangular result set. Missing values are stored as `None` and written
/// as empty CSV fields or JSON nulls.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_values(&mut self, row: impl IntoIterator<Item = f64>) {
        self.push(row.into_iter().map(Some).collect());
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, Failure> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).map_err(Failure::io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.map(format_number).unwrap_or_default()))
                .map_err(Failure::io)?;
        }
        w.into_inner().map_err(|e| Failure::Io(e.to_string()))
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let map = self
                        .header
                        .iter()
                        .zip(row)
                        .map(|(k, v)| (k.clone(), v.map_or(Value::Null, number)))
                        .collect();
                    Value::Object(map)
                })
                .collect(),
        )
    }

    pub fn render(&self, format: Format) -> Result<Vec<u8>, Failure> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => json_bytes(&self.to_json()),
        }
    }
}

/// Integral values below 2⁵³ print without a fraction; everything else uses the
/// shortest round-trip form, with exponents for very large or small magnitudes.
/// Non-finite values are spelled `inf`, `-inf`, `NaN`.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or_else(|| Value::String(format_number(v)), Value::Number)
}

/// Pretty JSON with keys sorted, ending in a newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let value = serde_json::to_value(value).map_err(|e| Failure::Io(e.to_string()))?;
    let mut out = serde_json::to_vec_pretty(&value).map_err(|e| Failure::Io(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Files gathered in memory and written together once a command has succeeded.
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn table(&mut self, stem: &str, table: &Table, format: Format) -> Result<(), Failure> {
        let ext = match format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        self.add(format!("{stem}.{ext}"), table.render(format)?);
        Ok(())
    }

    pub fn write_all(self, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
        std::fs::create_dir_all(dir).map_err(Failure::io)?;
        self.files
            .into_iter()
            .map(|(name, bytes)| {
                let path = dir.join(name);
                std::fs::write(&path, bytes).map_err(Failure::io)?;
                Ok(path)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(["iteration", "chi2"]);
        assert_eq!(t.to_csv().unwrap(), b"iteration,chi2\n");
        assert_eq!(t.to_json(), Value::Array(vec![]));
    }

    #[test]
    fn numbers_use_a_point_and_missing_values_are_blank() {
        let mut t = Table::new(["a", "b", "c"]);
        t.push(vec![Some(3.0), Some(0.125), None]);
        t.push(vec![Some(f64::INFINITY), Some(-1e-20), Some(2.5e17)]);
        let csv = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(csv, "a,b,c\n3,0.125,\ninf,-1e-20,2.5e17\n");
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn json_keys_are_sorted() {
        let v = serde_json::json!({"zeta": 1, "alpha": {"y": 2, "b": 3}});
        let s = String::from_utf8(json_bytes(&v).unwrap()).unwrap();
        assert!(s.find("alpha").unwrap() < s.find("zeta").unwrap());
        assert!(s.find("\"b\"").unwrap() < s.find("\"y\"").unwrap());
    }
}
