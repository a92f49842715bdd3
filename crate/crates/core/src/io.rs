//! Field snapshots (flat little-endian binary) and CSV time series.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::grid::{Grid, ScalarField};

const MAGIC: &[u8; 8] = b"NLCHSNP1";

/// Header `magic, nx, ny (u64), hx, hy, time (f64)`, then row-major values.
pub fn write_snapshot(path: &Path, field: &ScalarField, time: f64) -> std::io::Result<()> {
    let g = field.grid();
    write_raw(path, g.nx(), g.ny(), g.hx(), g.hy(), time, field.values())
}

/// Same layout for arrays not sized to the cell grid, e.g. face components.
pub fn write_raw(path: &Path, nx: usize, ny: usize, hx: f64, hy: f64, time: f64, values: &[f64]) -> std::io::Result<()> {
    assert_eq!(values.len(), nx * ny, "array size");
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(nx as u64).to_le_bytes())?;
    w.write_all(&(ny as u64).to_le_bytes())?;
    for v in [hx, hy, time] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_snapshot(path: &Path) -> std::io::Result<(ScalarField, f64)> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    if buf.len() < 48 || &buf[..8] != MAGIC {
        return Err(bad("not a snapshot file"));
    }
    let u = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let f = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let (nx, ny) = (u(8) as usize, u(16) as usize);
    let (hx, hy, time) = (f(24), f(32), f(40));
    if buf.len() != 48 + 8 * nx * ny {
        return Err(bad("snapshot size does not match its header"));
    }
    let grid = Grid::new(nx, ny, hx * nx as f64, hy * ny as f64).map_err(|e| bad(&e.to_string()))?;
    let values = (0..nx * ny).map(|k| f(48 + 8 * k)).collect();
    let field = ScalarField::from_values(grid, values).map_err(|e| bad(&e.to_string()))?;
    Ok((field, time))
}

/// Column-oriented series written with full round-trip precision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| *n == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:.17e}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn read_csv(path: &Path) -> std::io::Result<(Vec<String>, Vec<Vec<f64>>)> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for l in lines.filter(|l| !l.is_empty()) {
            let row = l
                .split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok((header, rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(8, 12, 2.0, 3.0).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (x * 3.1).sin() + y * y * 1e-17);
        let p = dir.path().join("phi.bin");
        write_snapshot(&p, &f, 0.125).unwrap();
        let (back, t) = read_snapshot(&p).unwrap();
        assert_eq!(t, 0.125);
        assert_eq!(back.values(), f.values());
        assert_eq!(back.grid().nx(), 8);
        assert_eq!(back.grid().ny(), 12);
    }

    #[test]
    fn csv_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Series::new(&["t", "x"]);
        s.push(vec![0.1, 1.0 / 3.0]);
        s.push(vec![0.2, -std::f64::consts::PI * 1e-300]);
        let p = dir.path().join("s.csv");
        s.write_csv(&p).unwrap();
        let (h, rows) = Series::read_csv(&p).unwrap();
        assert_eq!(h, vec!["t", "x"]);
        assert_eq!(rows, s.rows);
    }
}
