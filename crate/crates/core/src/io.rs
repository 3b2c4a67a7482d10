//! File formats: `#`-commented CSV, a columnar binary for sample sets, and
//! JSON reports.
//!
//! The columnar binary is `CSMFCOL1`, a little-endian `u64` header length,
//! a JSON header `{columns, rows, meta}`, then each column as `rows`
//! little-endian `f64` values.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{diagnostics, Trajectory};
use crate::error::{input, Result};
use crate::meanfield::MarginalSampleSet;
use crate::transport::{Coupling, DiscreteMeasure};

const MAGIC: &[u8; 8] = b"CSMFCOL1";

/// Hex sha256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// A CSV table: `#` metadata lines, a header, numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable { meta: Vec::new(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_string_lossless(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        s.push_str(&self.header.join(","));
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string_lossless())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = Vec::new();
        let mut header = None;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(m) = line.strip_prefix('#') {
                if let Some((k, v)) = m.split_once(':') {
                    meta.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if header.is_none() {
                header = Some(line.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>());
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| crate::Error::Input(format!("line {}: {e}", lineno + 1)))?;
            if row.len() != header.as_ref().unwrap().len() {
                return input(format!("line {}: expected {} cells", lineno + 1, header.as_ref().unwrap().len()));
            }
            rows.push(row);
        }
        let header = header.ok_or_else(|| crate::Error::Input("csv has no header".into()))?;
        Ok(CsvTable { meta, header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ColumnarHeader {
    columns: Vec<String>,
    rows: usize,
    meta: serde_json::Value,
}

/// Named columns of equal length with JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Columnar {
    pub columns: Vec<(String, Vec<f64>)>,
    pub meta: serde_json::Value,
}

impl Columnar {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let rows = self.columns.first().map_or(0, |c| c.1.len());
        if self.columns.iter().any(|c| c.1.len() != rows) {
            return input("columns differ in length");
        }
        let header = ColumnarHeader {
            columns: self.columns.iter().map(|c| c.0.clone()).collect(),
            rows,
            meta: self.meta.clone(),
        };
        let hj = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + hj.len() + 8 * rows * self.columns.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(hj.len() as u64).to_le_bytes());
        out.extend_from_slice(&hj);
        for (_, col) in &self.columns {
            for x in col {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return input("not a columnar sample file");
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| crate::Error::Input("truncated header".into()))?;
        let header: ColumnarHeader = serde_json::from_slice(body)?;
        let data = &bytes[16 + hlen..];
        if data.len() != 8 * header.rows * header.columns.len() {
            return input("columnar payload length does not match header");
        }
        let mut chunks = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let columns =
            header.columns.into_iter().map(|name| (name, chunks.by_ref().take(header.rows).collect())).collect();
        Ok(Columnar { columns, meta: header.meta })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn sample_columns(d: usize, n: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(2 * d * n);
    for p in 1..=n {
        for c in 0..d {
            names.push(format!("x{p}_{c}"));
        }
        for c in 0..d {
            names.push(format!("v{p}_{c}"));
        }
    }
    names
}

/// Stores a sample set column-wise; the scalar fields go to the metadata.
pub fn samples_to_columnar(set: &MarginalSampleSet) -> Columnar {
    let w = set.width();
    let k = set.k();
    let columns = sample_columns(set.d, set.n)
        .into_iter()
        .enumerate()
        .map(|(c, name)| (name, (0..k).map(|r| set.samples[r * w + c]).collect()))
        .collect();
    let mut meta = serde_json::to_value(set).expect("sample set serializes");
    if let Some(obj) = meta.as_object_mut() {
        obj.remove("samples");
    }
    Columnar { columns, meta }
}

pub fn samples_from_columnar(col: &Columnar) -> Result<MarginalSampleSet> {
    let mut meta = col.meta.clone();
    let k = col.columns.first().map_or(0, |c| c.1.len());
    let w = col.columns.len();
    let mut samples = vec![0.0; k * w];
    for (c, (_, data)) in col.columns.iter().enumerate() {
        for (r, x) in data.iter().enumerate() {
            samples[r * w + c] = *x;
        }
    }
    meta.as_object_mut()
        .ok_or_else(|| crate::Error::Input("sample metadata must be an object".into()))?
        .insert("samples".into(), serde_json::to_value(samples)?);
    let set: MarginalSampleSet = serde_json::from_value(meta)?;
    if set.width() != w {
        return input("column count does not match the recorded (d, n)");
    }
    Ok(set)
}

/// Measure CSV: `weight, c0, c1, …` per row.
pub fn write_measure_csv(path: &Path, mu: &DiscreteMeasure) -> Result<()> {
    let mut header = vec!["weight".to_string()];
    header.extend((0..mu.dim()).map(|c| format!("c{c}")));
    let mut t = CsvTable { meta: Vec::new(), header, rows: Vec::new() };
    for i in 0..mu.len() {
        let mut row = vec![mu.weights()[i]];
        row.extend_from_slice(mu.point(i));
        t.rows.push(row);
    }
    t.write(path)
}

pub fn read_measure_csv(path: &Path) -> Result<DiscreteMeasure> {
    let t = CsvTable::read(path)?;
    if t.header.len() < 2 {
        return input("measure csv needs a weight column and at least one coordinate");
    }
    let dim = t.header.len() - 1;
    let weights = t.rows.iter().map(|r| r[0]).collect();
    let points = t.rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
    DiscreteMeasure::new(dim, points, weights)
}

/// Plan CSV: `i, j, mass`.
pub fn write_plan_csv(path: &Path, plan: &Coupling) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# p: {:?}", plan.p)?;
    writeln!(w, "# cost_p: {:?}", plan.cost_p)?;
    writeln!(w, "i,j,mass")?;
    for (i, j, m) in &plan.plan {
        writeln!(w, "{i},{j},{m:?}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plan_csv(path: &Path) -> Result<Coupling> {
    let r = BufReader::new(fs::File::open(path)?);
    let (mut p, mut cost_p) = (2.0, 0.0);
    let mut plan = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if let Some(m) = line.strip_prefix('#') {
            if let Some((k, v)) = m.split_once(':') {
                let v: f64 = v.trim().parse().map_err(|_| crate::Error::Input(format!("bad metadata {line}")))?;
                match k.trim() {
                    "p" => p = v,
                    "cost_p" => cost_p = v,
                    _ => {}
                }
            }
            continue;
        }
        if line.is_empty() || line.starts_with('i') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return input(format!("bad plan row {line}"));
        }
        let bad = |_| crate::Error::Input(format!("bad plan row {line}"));
        plan.push((
            cells[0].trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            cells[1].trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            cells[2].trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        ));
    }
    Ok(Coupling { plan, cost_p, p })
}

/// Long-format trajectory CSV: `t, particle, x…, v…`.
pub fn trajectory_table(traj: &Trajectory) -> CsvTable {
    let d = traj.initial().d();
    let mut header = vec!["t".to_string(), "particle".to_string()];
    header.extend((0..d).map(|c| format!("x{c}")));
    header.extend((0..d).map(|c| format!("v{c}")));
    let mut t = CsvTable { meta: Vec::new(), header, rows: Vec::new() };
    t.meta.push(("kernel_id".into(), traj.kernel_id.clone()));
    t.meta.push((
        "scheme".into(),
        format!("{} dt={:?} stride={}", traj.scheme.name, traj.scheme.dt, traj.scheme.frame_stride),
    ));
    for (time, s) in traj.times.iter().zip(&traj.states) {
        for i in 0..s.n() {
            let mut row = vec![*time, i as f64];
            row.extend_from_slice(s.position(i));
            row.extend_from_slice(s.velocity(i));
            t.rows.push(row);
        }
    }
    t
}

/// One JSON object per frame with the ensemble diagnostics.
pub fn write_diagnostics_jsonl(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let mut v = serde_json::to_value(diagnostics(s))?;
        v.as_object_mut().unwrap().insert("t".into(), serde_json::json!(t));
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
