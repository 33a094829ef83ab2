//! Sample and matrix CSV files.
//!
//! Sample files have the header `group,y1,...,yd` and one row per subject.
//! Group labels are the consecutive integers `1..=a`; rows of a group may be
//! interleaved with other groups and keep their file order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::SplitPlotSample;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Reads a sample CSV from a file.
pub fn read_sample_csv(path: impl AsRef<Path>) -> Result<SplitPlotSample> {
    read_sample(open(path.as_ref())?)
}

/// Reads a sample CSV from any reader.
pub fn read_sample<R: Read>(input: R) -> Result<SplitPlotSample> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    let d = header.len().saturating_sub(1);
    if d == 0 || &header[0] != "group" {
        return Err(Error::Parse("header must be 'group,y1,...,yd' with d >= 1".into()));
    }
    for (t, name) in header.iter().skip(1).enumerate() {
        if name != format!("y{}", t + 1) {
            return Err(Error::Parse(format!("header column {} is '{name}', expected 'y{}'", t + 2, t + 1)));
        }
    }
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 2;
        if record.len() != d + 1 {
            return Err(Error::Parse(format!("row {line}: expected {} fields, found {}", d + 1, record.len())));
        }
        let label: usize = record[0]
            .parse()
            .ok()
            .filter(|&g| g >= 1)
            .ok_or_else(|| Error::Parse(format!("row {line}, column 'group': '{}' is not a positive integer", &record[0])))?;
        let mut values = Vec::with_capacity(d);
        for t in 0..d {
            let cell = &record[t + 1];
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("row {line}, column 'y{}': '{cell}' is not a finite number", t + 1)))?;
            values.push(v);
        }
        rows.push((label, values));
    }
    if rows.is_empty() {
        return Err(Error::Parse("file contains no observations".into()));
    }
    let a = rows.iter().map(|(g, _)| *g).max().unwrap_or(0);
    let mut buckets: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); a];
    for (g, v) in &rows {
        buckets[g - 1].push(v);
    }
    if let Some(missing) = buckets.iter().position(|b| b.is_empty()) {
        return Err(Error::InvalidInput(format!(
            "group labels must be consecutive 1..={a}; label {} has no rows",
            missing + 1
        )));
    }
    let groups = buckets
        .into_iter()
        .map(|b| DMatrix::from_fn(b.len(), d, |j, t| b[j][t]))
        .collect();
    SplitPlotSample::new(groups)
}

/// Human-readable notes on group sizes that limit the available estimators.
pub fn sample_warnings(sample: &SplitPlotSample) -> Vec<String> {
    let mut out = Vec::new();
    for (i, n) in sample.sizes().into_iter().enumerate() {
        let note = match n {
            0..=1 => "no within-group differences; no trace estimator is available",
            2..=3 => "too small for A_3 and A_4; the test cannot be run",
            4..=5 => "too small for f_hat; only psi_z and psi_chi are available",
            _ => continue,
        };
        out.push(format!("group {} has {n} subjects: {note}", i + 1));
    }
    out
}

/// Writes a sample in the `group,y1,...,yd` format with round-trip exact numbers.
pub fn write_sample<W: Write>(sample: &SplitPlotSample, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["group".to_string()];
    header.extend((1..=sample.dim()).map(|t| format!("y{t}")));
    writer.write_record(&header)?;
    for (i, g) in sample.groups().iter().enumerate() {
        for row in g.row_iter() {
            let mut record = vec![(i + 1).to_string()];
            record.extend(row.iter().map(|v| v.to_string()));
            writer.write_record(&record)?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn write_sample_csv(sample: &SplitPlotSample, path: impl AsRef<Path>) -> Result<()> {
    write_sample(sample, File::create(path)?)
}

/// Reads a headerless numeric matrix.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_matrix(open(path.as_ref())?)
}

pub fn read_matrix<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse(format!("matrix row {}, column {}: '{cell}'", r + 1, c + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!("matrix row {} has {} entries, expected {}", r + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Parse("matrix file is empty".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

pub fn write_matrix<W: Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in m.row_iter() {
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_matrix_csv(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    write_matrix(m, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_two_groups() {
        let text = "group,y1,y2,y3,y4\n1,1,2,3,4\n2,0,0,0,1\n1,5,6,7,8\n2,1,1,1,1\n1,0.5,0,0,0\n2,-1,2,3,4e2\n";
        let s = read_sample(text.as_bytes()).unwrap();
        assert_eq!(s.sizes(), vec![3, 3]);
        assert_eq!(s.dim(), 4);
        assert_eq!(s.group(0)[(1, 0)], 5.0);
        assert_eq!(s.group(1)[(2, 3)], 400.0);
    }

    #[test]
    fn reports_bad_cells_and_gaps() {
        let missing = "group,y1,y2\n1,1,\n1,2,3\n";
        let err = read_sample(missing.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("y2"), "{err}");
        let ragged = "group,y1,y2\n1,1,2,3\n";
        assert!(read_sample(ragged.as_bytes()).unwrap_err().to_string().contains("row 2"));
        let gap = "group,y1\n1,1\n1,2\n3,4\n3,5\n";
        let err = read_sample(gap.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)) && err.to_string().contains("consecutive"));
        assert!(read_sample("grp,y1\n1,2\n".as_bytes()).is_err());
        assert!(read_sample("group,y2\n1,2\n".as_bytes()).is_err());
        assert!(read_sample("group,y1\n0,2\n".as_bytes()).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let g1 = DMatrix::from_row_slice(2, 2, &[0.1, -1.0 / 3.0, 1e-300, 123456789.123456789]);
        let g2 = DMatrix::from_row_slice(1, 2, &[std::f64::consts::PI, -0.0]);
        let s = SplitPlotSample::new(vec![g1, g2]).unwrap();
        let mut buf = Vec::new();
        write_sample(&s, &mut buf).unwrap();
        assert_eq!(read_sample(buf.as_slice()).unwrap(), s);
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, -2.0, 1.0 / 7.0, 0.0, 3.0]);
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        assert_eq!(read_matrix(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn warnings_by_size() {
        let s = SplitPlotSample::new(vec![DMatrix::zeros(1, 2), DMatrix::zeros(5, 2), DMatrix::zeros(6, 2)]).unwrap();
        let w = sample_warnings(&s);
        assert_eq!(w.len(), 2);
        assert!(w[1].contains("psi_z"));
    }
}
