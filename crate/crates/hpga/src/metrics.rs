//! CSV outputs. Files may open with `#` comment lines echoing the run config.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{format_err, io_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub l_ed: f64,
    pub l_dec: f64,
    pub l_total: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub variant: String,
    pub eta: f64,
    pub trial: usize,
    pub success_rate: f64,
    pub epochs_trained: usize,
}

/// Appends rows to a CSV file that starts with the config echo.
pub struct CsvLog {
    w: csv::Writer<File>,
}

impl CsvLog {
    pub fn create(path: &Path, config: Option<&RunConfig>) -> Result<Self> {
        let mut f = File::create(path).map_err(io_err(path))?;
        if let Some(cfg) = config {
            for line in cfg.to_toml().lines() {
                writeln!(f, "# {line}").map_err(io_err(path))?;
            }
        }
        Ok(Self { w: csv::Writer::from_writer(f) })
    }

    pub fn row<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.w.serialize(row)?;
        self.w.flush().map_err(|e| csv::Error::from(e).into())
    }
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// The config echoed into a CSV header, if any.
pub fn read_echo(path: &Path) -> Result<Option<RunConfig>> {
    let f = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut text = String::new();
    for line in f.lines() {
        let line = line.map_err(io_err(path))?;
        match line.strip_prefix("# ") {
            Some(rest) => {
                text.push_str(rest);
                text.push('\n');
            }
            None if line == "#" => text.push('\n'),
            None => break,
        }
    }
    if text.is_empty() {
        return Ok(None);
    }
    RunConfig::from_toml(&text).map(Some).map_err(|e| format_err(path, format!("config echo: {e}")))
}

/// Concatenates CSVs with identical headers, prefixing each row with its
/// source file name. Returns the number of data rows written.
pub fn merge(inputs: &[&Path], out: &Path) -> Result<usize> {
    let mut header: Option<csv::StringRecord> = None;
    let mut w = csv::Writer::from_path(out)?;
    let mut n = 0;
    for path in inputs {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let h = r.headers()?.clone();
        match &header {
            None => {
                let mut full = csv::StringRecord::from(vec!["source"]);
                full.extend(h.iter());
                w.write_record(&full)?;
                header = Some(h);
            }
            Some(first) if *first != h => {
                return Err(format_err(path, format!("columns {h:?} differ from {first:?}")));
            }
            Some(_) => {}
        }
        let source = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for rec in r.records() {
            let rec = rec?;
            let mut full = csv::StringRecord::from(vec![source.as_str()]);
            full.extend(rec.iter());
            w.write_record(&full)?;
            n += 1;
        }
    }
    if header.is_none() {
        return Err(format_err(out, "no input files"));
    }
    w.flush().map_err(io_err(out))?;
    Ok(n)
}
