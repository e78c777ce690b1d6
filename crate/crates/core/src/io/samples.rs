//! Shape sets as CSV: one shape per row, columns `x0,y0[,z0],x1,…`.
//!
//! Values use the shortest decimal form that parses back to the same f64.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Shape;

fn header(d: usize, n: usize) -> Vec<String> {
    let axes = ["x", "y", "z"];
    (0..n)
        .flat_map(|i| axes[..d].iter().map(move |a| format!("{a}{i}")))
        .collect()
}

pub fn write_samples_to<W: std::io::Write>(writer: W, shapes: &[Shape]) -> Result<()> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::Input("cannot write an empty sample set".into()))?;
    let (d, n) = (first.d(), first.n());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(d, n))?;
    for (i, s) in shapes.iter().enumerate() {
        if s.d() != d || s.n() != n {
            return Err(Error::Dimension(format!(
                "shape {i} is {}×{}, expected {d}×{n}",
                s.d(),
                s.n()
            )));
        }
        w.write_record(s.as_slice().iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::Input(format!("flushing csv: {e}")))?;
    Ok(())
}

pub fn write_samples(path: impl AsRef<Path>, shapes: &[Shape]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_samples_to(std::io::BufWriter::new(file), shapes)
}

pub fn read_samples_from<R: std::io::Read>(reader: R) -> Result<Vec<Shape>> {
    let mut r = csv::Reader::from_reader(reader);
    let cols: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let d = if cols.iter().any(|c| c.starts_with('z')) { 3 } else { 2 };
    if cols.is_empty() || !cols.len().is_multiple_of(d) {
        return Err(Error::format(0, format!("{} columns do not form {d}-D points", cols.len())));
    }
    let n = cols.len() / d;
    if cols != header(d, n) {
        return Err(Error::format(0, "unexpected column names; expected x0,y0,…"));
    }
    let mut shapes = Vec::new();
    for record in r.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte());
        let values = record
            .iter()
            .map(|f| {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(offset, format!("not a number: {f:?}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::format(offset, format!("non-finite value {f:?}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        shapes.push(Shape::new(values, d, n).map_err(|e| Error::format(offset, e.to_string()))?);
    }
    Ok(shapes)
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<Shape>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples_from(std::io::BufReader::new(file))
}
