//! Ballot files, trace files and tables.

use std::collections::HashSet;
use std::io::{Read, Write};

use pbcore::aggregation::Merge;
use pbcore::model::Instance;
use pbcore::{Error, Result};
use sha2::{Digest, Sha256};

/// A ballot file: one row per voter, one column per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Votes {
    pub voter_ids: Vec<String>,
    pub item_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_error(line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        column,
        message: message.into(),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        column: 0,
        message: e.to_string(),
    }
}

/// Parses a ballot CSV whose header is `voter_id` followed by item names.
/// Cells are nonnegative reals; columns in error messages count from 1.
pub fn parse_votes<R: Read>(reader: R) -> Result<Votes> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = csv.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(parse_error(1, 1, "empty file")),
    };
    if header.get(0) != Some("voter_id") {
        return Err(parse_error(1, 1, "first header cell must be voter_id"));
    }
    let item_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if item_names.is_empty() {
        return Err(parse_error(1, 2, "no item columns"));
    }
    let mut seen = HashSet::new();
    for (c, name) in item_names.iter().enumerate() {
        if name.is_empty() {
            return Err(parse_error(1, c + 2, "empty item name"));
        }
        if !seen.insert(name.as_str()) {
            return Err(parse_error(1, c + 2, format!("duplicate item {name:?}")));
        }
    }

    let k = item_names.len();
    let mut voter_ids = Vec::new();
    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != k + 1 {
            return Err(parse_error(
                line,
                record.len().min(k + 1) + 1,
                format!("expected {} cells, found {}", k + 1, record.len()),
            ));
        }
        let mut row = Vec::with_capacity(k);
        for (c, cell) in record.iter().enumerate().skip(1) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_error(line, c + 1, format!("not a number: {cell:?}")))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(parse_error(
                    line,
                    c + 1,
                    format!("utility must be a nonnegative number, got {cell}"),
                ));
            }
            row.push(v);
        }
        if row.iter().all(|&v| v == 0.0) {
            return Err(parse_error(line, 1, "voter values no item"));
        }
        voter_ids.push(record[0].to_string());
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(2, 1, "no voters"));
    }
    Ok(Votes {
        voter_ids,
        item_names,
        rows,
    })
}

/// Reads a ballot file and returns it with the SHA-256 of its bytes.
pub fn read_votes(path: &std::path::Path) -> Result<(Votes, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok((parse_votes(bytes.as_slice())?, sha256_hex(&bytes)))
}

/// Writes the instance's utilities as a ballot file with voter ids
/// `v1, v2, ...`. Values use the shortest representation that parses back
/// to the same number.
pub fn write_votes<W: Write>(out: W, inst: &Instance) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["voter_id".to_string()];
    header.extend(inst.item_names().iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..inst.n() {
        let mut record = vec![format!("v{}", i + 1)];
        record.extend(inst.row(i).iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Two-column `iteration,max_violation` trace.
pub fn write_trace<W: Write>(out: W, trace: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "max_violation"])
        .map_err(csv_error)?;
    for (it, v) in trace {
        w.write_record([it.to_string(), v.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_trace<R: Read>(reader: R) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

/// Merge table `cluster_a,cluster_b,height,size` of a dendrogram, with
/// leaves labelled by item name.
pub fn write_merges<W: Write>(out: W, merges: &[Merge], leaves: &[String]) -> Result<()> {
    let label = |c: usize| {
        leaves
            .get(c)
            .cloned()
            .unwrap_or_else(|| format!("cluster{}", c - leaves.len()))
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster_a", "cluster_b", "height", "size"])
        .map_err(csv_error)?;
    for m in merges {
        w.write_record([
            label(m.cluster_a),
            label(m.cluster_b),
            m.height.to_string(),
            m.size.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Row of the scheme comparison table; `core` and `welfare` are the funded
/// fraction of each item's cost.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ComparisonRow {
    #[serde(rename = "Project")]
    pub project: String,
    #[serde(rename = "Budget")]
    pub budget: crate::config::Money,
    #[serde(rename = "Votes")]
    pub votes: usize,
    #[serde(rename = "Core")]
    pub core: f64,
    #[serde(rename = "Welfare")]
    pub welfare: f64,
}

pub fn write_comparison<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_comparison<R: Read>(reader: R) -> Result<Vec<ComparisonRow>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}
