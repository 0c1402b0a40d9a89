//! CSV input and output.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use mkqr::model::{Dataset, MkqrParams};
use mkqr::MkqrError;

use crate::CliError;

/// Reads `y,x[,z...]` with a mandatory header. Rows are numbered from 1
/// after the header.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    parse_dataset(file, &path.display().to_string())
}

pub fn parse_dataset<R: std::io::Read>(reader: R, source: &str) -> Result<Dataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{source}: unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 || header[0] != "y" || header[1] != "x" {
        return Err(CliError::Input(format!(
            "{source}: header must start with `y,x` followed by optional covariate columns, found `{}`",
            header.join(",")
        )));
    }
    let p = header.len() - 2;
    let (mut y, mut x, mut z) = (Vec::new(), Vec::new(), Vec::new());
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CliError::Input(format!("{source}: row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(CliError::Input(format!(
                "{source}: row {row} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let name = &header[j];
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(CliError::Input(format!("{source}: row {row}, column `{name}`: missing value")));
            }
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Input(format!("{source}: row {row}, column `{name}`: `{cell}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("{source}: row {row}, column `{name}`: non-finite value")));
            }
            match j {
                0 => y.push(v),
                1 => x.push(v),
                _ => z.push(v),
            }
        }
    }
    Dataset::with_names(y, x, z, p, header[2..].to_vec()).map_err(|e| match e {
        MkqrError::Usage(m) | MkqrError::Data(m) => CliError::Input(format!("{source}: {m}")),
        other => CliError::Core(other),
    })
}

/// Writes a dataset in the input format. Values use the shortest
/// representation that parses back to the same number.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    let mut header = vec!["y".to_string(), "x".to_string()];
    header.extend(data.z_names().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..data.n() {
        let mut rec = vec![data.y()[t].to_string(), data.x()[t].to_string()];
        rec.extend(data.z_row(t).iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Input(format!("CSV write failed: {e}"))
}

/// Fitted quantile curves on an even grid of `x`, covariates at their means.
pub fn write_curve(path: &Path, data: &Dataset, fits: &[(f64, MkqrParams)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    let mut header = vec!["x".to_string()];
    header.extend(fits.iter().map(|(tau, _)| format!("q_{tau}")));
    w.write_record(&header).map_err(csv_err)?;
    let z = data.z_means();
    let (lo, hi) = (data.x_min(), data.x_max());
    let points = 201;
    for i in 0..points {
        let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let mut rec = vec![x.to_string()];
        rec.extend(fits.iter().map(|(_, p)| p.predict(x, &z).to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))
}

/// Writes rows of a summary table with a fixed header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut file = File::create(path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    file.write_all(&bytes).map_err(|e| CliError::Input(e.to_string()))
}
