//! CSV tables with a single header row preceded by `# key: value` metadata lines.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::DomainGrid;

pub fn write_table<I, R>(path: &Path, metadata: &[(String, String)], header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut out = BufWriter::new(File::create(path)?);
    for (k, v) in metadata {
        writeln!(out, "# {k}: {v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a nodal field as a row-major matrix, one row per grid row, with the grid in the metadata.
pub fn write_field(path: &Path, grid: &DomainGrid, values: &[f64], metadata: &[(String, String)]) -> Result<()> {
    if values.len() != grid.n_nodes() {
        return Err(Error::Shape(format!("field has {} values, grid has {} nodes", values.len(), grid.n_nodes())));
    }
    let [nx, ny] = grid.shape();
    let mut meta = vec![
        ("dim".to_string(), grid.dim().to_string()),
        ("shape".to_string(), format!("{nx}x{ny}")),
        ("h".to_string(), fmt_f64(grid.h())),
        ("horizon".to_string(), fmt_f64(grid.horizon())),
    ];
    meta.extend_from_slice(metadata);
    let header: Vec<String> = (0..nx).map(|i| format!("i{i}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = values.chunks(nx).map(|row| row.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>());
    write_table(path, &meta, &header, rows)
}

/// Formats a float so that it parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}
