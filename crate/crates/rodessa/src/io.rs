//! CSV ingestion and emission for multivariate series.
//!
//! Format: a header row with series names and one data row per time point.
//! An optional leading column named `time` (case-insensitive) carries
//! timestamps, which are kept as opaque labels. Lines starting with `#` are
//! comments; emitted files use them to embed provenance.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Result, RodessaError};
use crate::scalar::{cast, Scalar};
use crate::series::MultivariateSeries;

/// Read a multivariate series from CSV text.
pub fn read_series_csv<T: Scalar, R: Read>(reader: R) -> Result<MultivariateSeries<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(RodessaError::Parse("empty CSV header".into()));
    }
    let has_time = headers
        .get(0)
        .map(|h| h.eq_ignore_ascii_case("time"))
        .unwrap_or(false);
    let first_value_col = usize::from(has_time);
    let names: Vec<String> = headers
        .iter()
        .skip(first_value_col)
        .map(|h| h.to_string())
        .collect();
    if names.is_empty() {
        return Err(RodessaError::Parse(
            "CSV must contain at least one value column".into(),
        ));
    }

    let mut timestamps: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(RodessaError::Parse(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                record.len(),
                headers.len()
            )));
        }
        if has_time {
            timestamps.push(record.get(0).unwrap_or("").to_string());
        }
        let mut row = Vec::with_capacity(names.len());
        for (col, field) in record.iter().enumerate().skip(first_value_col) {
            let value: f64 = field.parse().map_err(|_| {
                RodessaError::Parse(format!(
                    "row {}, column `{}`: cannot parse `{field}` as a number",
                    line + 2,
                    headers.get(col).unwrap_or("?")
                ))
            })?;
            row.push(value);
        }
        rows.push(row);
    }

    let n = rows.len();
    let p = names.len();
    if n < 2 {
        return Err(RodessaError::EmptySeries { rows: n, cols: p });
    }
    let mut values = Array2::<T>::zeros((n, p));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values[[i, j]] = cast::<T>(v);
        }
    }
    MultivariateSeries::new(values, names, if has_time { Some(timestamps) } else { None })
}

/// Read a series from a CSV file on disk.
pub fn read_series_csv_path<T: Scalar>(path: &Path) -> Result<MultivariateSeries<T>> {
    let file = std::fs::File::open(path)?;
    read_series_csv(std::io::BufReader::new(file))
}

/// Write a series as CSV, with optional `# key: value` provenance lines
/// before the header.
pub fn write_series_csv<T: Scalar, W: Write>(
    series: &MultivariateSeries<T>,
    mut writer: W,
    comments: &[(String, String)],
) -> Result<()> {
    for (key, value) in comments {
        writeln!(writer, "# {key}: {value}")?;
    }
    let mut header = Vec::new();
    if series.timestamps().is_some() {
        header.push("time".to_string());
    }
    header.extend(series.names().iter().cloned());
    writeln!(writer, "{}", header.join(","))?;
    for i in 0..series.len() {
        let mut fields = Vec::with_capacity(header.len());
        if let Some(ts) = series.timestamps() {
            fields.push(ts[i].clone());
        }
        for j in 0..series.series_count() {
            let v = series.values()[[i, j]].to_f64().unwrap_or(f64::NAN);
            fields.push(format!("{v}"));
        }
        writeln!(writer, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_plain_csv() {
        let text = "a,b\n1.0,2.0\n3.0,4.5\n-1,0\n";
        let s: MultivariateSeries<f64> = read_series_csv(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(s.value(2, 2), 4.5);
        assert!(s.timestamps().is_none());
    }

    #[test]
    fn detects_time_column() {
        let text = "Time,x\n2020-01-01,1.0\n2020-01-02,2.0\n";
        let s: MultivariateSeries<f64> = read_series_csv(text.as_bytes()).unwrap();
        assert_eq!(s.series_count(), 1);
        assert_eq!(s.timestamps().unwrap()[1], "2020-01-02");
    }

    #[test]
    fn rejects_non_numeric_and_non_finite() {
        let bad: crate::error::Result<MultivariateSeries<f64>> =
            read_series_csv("x\n1.0\noops\n".as_bytes());
        assert!(matches!(bad, Err(RodessaError::Parse(_))));
        let nan: crate::error::Result<MultivariateSeries<f64>> =
            read_series_csv("x\n1.0\nNaN\n".as_bytes());
        assert!(matches!(nan, Err(RodessaError::NonFinite { .. })));
    }

    #[test]
    fn rejects_single_row() {
        let short: crate::error::Result<MultivariateSeries<f64>> =
            read_series_csv("x\n1.0\n".as_bytes());
        assert!(matches!(short, Err(RodessaError::EmptySeries { .. })));
    }

    #[test]
    fn round_trips_with_comments() {
        let text = "time,x,y\nt1,1.5,-2\nt2,0.25,3\n";
        let s: MultivariateSeries<f64> = read_series_csv(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_series_csv(&s, &mut buf, &[("seed".into(), "42".into())]).unwrap();
        let text2 = String::from_utf8(buf).unwrap();
        assert!(text2.starts_with("# seed: 42\n"));
        let s2: MultivariateSeries<f64> = read_series_csv(text2.as_bytes()).unwrap();
        assert_eq!(s.values(), s2.values());
        assert_eq!(s.timestamps(), s2.timestamps());
    }
}
