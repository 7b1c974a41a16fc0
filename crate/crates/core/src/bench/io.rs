//! JSON-lines benchmark files: a header line, then one record per cell.
//! Paths ending in `.gz` are gzip-compressed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::{ArchRecord, TabularBenchmark, DENSE_LIMIT};
use crate::space::SpaceSpec;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    spec: SpaceSpec,
    epochs: usize,
    datasets: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    cell: std::borrow::Cow<'a, str>,
    val_err: BTreeMap<String, Vec<f64>>,
    test_err: BTreeMap<String, f64>,
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Loads a benchmark and checks that its header declares `spec`.
pub fn load_benchmark(path: impl AsRef<Path>, spec: &SpaceSpec) -> Result<TabularBenchmark> {
    let bench = TabularBenchmark::read(path)?;
    if bench.spec() != spec {
        return Err(Error::SpecMismatch);
    }
    Ok(bench)
}

impl TabularBenchmark {
    /// Reads a benchmark file, taking the search space from its header.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(io_err(path))?;
        let reader: Box<dyn Read> =
            if is_gzip(path) { Box::new(GzDecoder::new(file)) } else { Box::new(file) };
        Self::from_reader(BufReader::new(reader), path)
    }

    fn from_reader(reader: impl BufRead, path: &Path) -> Result<Self> {
        let parse = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut header: Option<Header> = None;
        let mut slots: Vec<Option<ArchRecord>> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let Some(h) = &header else {
                let h: Header =
                    serde_json::from_str(&line).map_err(|e| parse(lineno, format!("header: {e}")))?;
                let size = h.spec.dense_size(DENSE_LIMIT, "tabular benchmark")?;
                slots = vec![None; size];
                header = Some(h);
                continue;
            };
            let rec: Line = serde_json::from_str(&line).map_err(|e| parse(lineno, e.to_string()))?;
            let cell = h.spec.parse_cell(&rec.cell).map_err(|e| parse(lineno, e.to_string()))?;
            let idx = h.spec.index_of(&cell);
            if slots[idx].is_some() {
                return Err(Error::DuplicateCell { cell: rec.cell.into_owned(), line: lineno });
            }
            let record = ArchRecord { val_err: rec.val_err, test_err: rec.test_err };
            record.check(h.epochs).map_err(|m| parse(lineno, m))?;
            slots[idx] = Some(record);
        }
        let header = header.ok_or_else(|| parse(0, "missing header line".into()))?;
        let missing: Vec<usize> =
            slots.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteCoverage {
                missing: missing.len() as u64,
                examples: missing
                    .iter()
                    .take(10)
                    .map(|&i| header.spec.render_cell(&header.spec.cell_at(i)))
                    .collect(),
            });
        }
        let records = slots.into_iter().map(Option::unwrap).collect();
        TabularBenchmark::from_dense(header.spec, header.epochs, header.datasets, records)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(io_err(path))?;
        if is_gzip(path) {
            let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
            self.write_to(&mut enc).map_err(io_err(path))?;
            enc.finish().and_then(|mut w| w.flush()).map_err(io_err(path))?;
        } else {
            let mut w = BufWriter::new(file);
            self.write_to(&mut w).map_err(io_err(path))?;
            w.flush().map_err(io_err(path))?;
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = Header {
            spec: self.spec.clone(),
            epochs: self.epochs,
            datasets: self.datasets.clone(),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for (i, rec) in self.records.iter().enumerate() {
            let line = Line {
                cell: self.spec.render_cell(&self.spec.cell_at(i)).into(),
                val_err: rec.val_err.clone(),
                test_err: rec.test_err.clone(),
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
