//! Minimal CSV helpers for the numeric tables this crate emits and consumes.
//!
//! Column schema used throughout:
//! - traces: `t,v[,a][,peak_0..peak_N]`
//! - band tables: `k_over_kr,E_1_over_Er,...`
//! - profiles: `z_m,density_per_m`

use crate::error::{Error, Result};

/// Write named columns of equal length as CSV.
pub fn write_numeric_csv<W: std::io::Write>(
    mut w: W,
    headers: &[&str],
    columns: &[&[f64]],
) -> Result<()> {
    assert_eq!(headers.len(), columns.len());
    let n = columns.first().map_or(0, |c| c.len());
    assert!(columns.iter().all(|c| c.len() == n), "ragged columns");
    writeln!(w, "{}", headers.join(","))?;
    for i in 0..n {
        for (j, col) in columns.iter().enumerate() {
            if j > 0 {
                write!(w, ",")?;
            }
            write!(w, "{}", col[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Read a CSV of f64 columns with a single header row.
pub fn read_numeric_csv<R: std::io::BufRead>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))??;
    let headers: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != headers.len() {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                headers.len(),
                fields.len()
            )));
        }
        for (j, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!("line {}: bad number {:?}", lineno + 2, field))
            })?;
            columns[j].push(v);
        }
    }
    Ok((headers, columns))
}
