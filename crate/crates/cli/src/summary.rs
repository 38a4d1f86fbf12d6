//! Cross-seed summaries recomputed from the per-seed CSV files.

use std::path::Path;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CliError, CliResult};

/// A parsed CSV: header plus rows of raw fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> CliResult<Table> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| CliError::Runtime("empty CSV".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        if let Some(r) = rows.iter().find(|r| r.len() != header.len()) {
            return Err(CliError::Runtime(format!(
                "CSV row has {} fields, header has {}",
                r.len(),
                header.len()
            )));
        }
        Ok(Table { header, rows })
    }

    pub fn read(path: &Path) -> CliResult<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Table::parse(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric values of one column; empty fields read as NaN.
    pub fn values(&self, name: &str) -> CliResult<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| CliError::Runtime(format!("CSV has no column '{name}'")))?;
        self.rows
            .iter()
            .map(|r| {
                if r[c].is_empty() {
                    Ok(f64::NAN)
                } else {
                    r[c].parse()
                        .map_err(|_| CliError::Runtime(format!("column '{name}': '{}' is not a number", r[c])))
                }
            })
            .collect()
    }
}

/// Mean and half-width of the two-sided 95% t-interval. The half-width is
/// NaN with fewer than two values.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

/// For every numeric column except `epoch`, the mean across seeds and the
/// 95% interval bounds, one row per epoch. All inputs must share a header and
/// an epoch column.
pub fn summarize(tables: &[Table]) -> CliResult<String> {
    let first = tables.first().ok_or_else(|| CliError::Runtime("nothing to summarize".into()))?;
    if tables.iter().any(|t| t.header != first.header) {
        return Err(CliError::Runtime("per-seed CSVs have different headers".into()));
    }
    let numeric: Vec<&String> = first
        .header
        .iter()
        .filter(|h| *h != "epoch" && first.rows.iter().all(|r| {
            let v = &r[first.column(h).unwrap()];
            v.is_empty() || v.parse::<f64>().is_ok()
        }))
        .collect();
    let epochs = tables.iter().map(|t| t.rows.len()).min().unwrap_or(0);
    let ec = first
        .column("epoch")
        .ok_or_else(|| CliError::Runtime("CSV has no 'epoch' column".into()))?;

    let mut out = String::from("epoch,seeds");
    for h in &numeric {
        out.push_str(&format!(",{h}_mean,{h}_ci95_low,{h}_ci95_high"));
    }
    out.push('\n');
    let columns: Vec<Vec<Vec<f64>>> = numeric
        .iter()
        .map(|h| tables.iter().map(|t| t.values(h)).collect::<CliResult<Vec<_>>>())
        .collect::<CliResult<_>>()?;
    for row in 0..epochs {
        out.push_str(&format!("{},{}", first.rows[row][ec], tables.len()));
        for col in &columns {
            let xs: Vec<f64> = col.iter().map(|seed| seed[row]).filter(|x| !x.is_nan()).collect();
            let (m, h) = mean_ci95(&xs);
            out.push_str(&format!(",{},{},{}", fmt(m), fmt(m - h), fmt(m + h)));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_interval_reference() {
        // t_{0.975, 3} = 3.182446
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((h - 3.182446 * sd / 2.0).abs() < 1e-5);
        assert!(mean_ci95(&[7.0]).1.is_nan());
    }

    #[test]
    fn summary_rows() {
        let a = Table::parse("epoch,kind,x\n1,mixture,1\n2,mixture,3\n").unwrap();
        let b = Table::parse("epoch,kind,x\n1,mixture,3\n2,mixture,5\n").unwrap();
        let s = summarize(&[a, b]).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "epoch,seeds,x_mean,x_ci95_low,x_ci95_high");
        assert!(lines[1].starts_with("1,2,2,"));
        assert!(lines[2].starts_with("2,2,4,"));
    }

    #[test]
    fn mismatched_headers_rejected() {
        let a = Table::parse("epoch,x\n1,1\n").unwrap();
        let b = Table::parse("epoch,y\n1,1\n").unwrap();
        assert!(summarize(&[a, b]).is_err());
        assert!(Table::parse("a,b\n1\n").is_err());
    }
}
