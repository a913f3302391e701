//! LIBSVM text format.
//!
//! Each nonempty line is `<label> <idx>:<val> <idx>:<val> ...`. Indices are
//! 1-based on the wire and converted to 0-based when read.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{DataError, Dataset};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Accept `{0, 1}` labels, mapping 0 to -1.
    pub zero_one_labels: bool,
    /// Fixed feature dimension; by default it is the largest index seen.
    pub dim: Option<usize>,
}

fn parse_label(tok: &str, line: usize, opts: &ParseOptions) -> Result<f64, DataError> {
    let bad = || DataError::Label {
        line,
        label: tok.to_string(),
    };
    let v: f64 = tok.parse().map_err(|_| bad())?;
    if v == 1.0 || v == -1.0 {
        Ok(v)
    } else if opts.zero_one_labels && v == 0.0 {
        Ok(-1.0)
    } else {
        Err(bad())
    }
}

/// Parses a whole LIBSVM stream. Any error aborts the parse; no partial
/// dataset is returned.
pub fn parse_libsvm<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<Dataset, DataError> {
    let mut rows: Vec<(Vec<(usize, f64)>, f64, usize)> = Vec::new();
    let mut max_index: Option<usize> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let mut toks = line.split_whitespace();
        let Some(label_tok) = toks.next() else {
            continue;
        };
        let label = parse_label(label_tok, lineno, opts)?;
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for tok in toks {
            let malformed = |reason: &str| DataError::Malformed {
                line: lineno,
                reason: format!("{reason} in `{tok}`"),
            };
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| malformed("expected <index>:<value>"))?;
            let idx: usize = idx.parse().map_err(|_| malformed("bad index"))?;
            if idx == 0 {
                return Err(malformed("indices are 1-based"));
            }
            let val: f64 = val.parse().map_err(|_| malformed("bad value"))?;
            if !val.is_finite() {
                return Err(malformed("non-finite value"));
            }
            let j = idx - 1;
            if let Some(&(prev, _)) = entries.last() {
                if j <= prev {
                    return Err(DataError::NonIncreasing {
                        line: lineno,
                        prev: prev + 1,
                        next: idx,
                    });
                }
            }
            entries.push((j, val));
        }
        if let Some(&(j, _)) = entries.last() {
            max_index = Some(max_index.map_or(j, |m| m.max(j)));
        }
        rows.push((entries, label, lineno));
    }

    let inferred = max_index.map_or(0, |m| m + 1);
    let dim = match opts.dim {
        Some(d) => {
            if let Some((_, _, line)) = rows
                .iter()
                .find(|(e, _, _)| e.last().is_some_and(|&(j, _)| j >= d))
            {
                return Err(DataError::IndexOutOfRange {
                    line: *line,
                    index: inferred,
                    dim: d,
                });
            }
            d
        }
        None => inferred,
    };

    let mut ds = Dataset::new(dim);
    for (entries, label, _) in &rows {
        ds.push_row(entries, *label)?;
    }
    Ok(ds)
}

pub fn read_libsvm_file(path: &Path, opts: &ParseOptions) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    parse_libsvm(BufReader::new(file), opts)
}

/// Writes `ds` in LIBSVM form. Values use the shortest representation that
/// parses back to the same `f64`, so reading the output with
/// `ParseOptions { dim: Some(ds.dim()), .. }` reproduces `ds` exactly.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut out: W) -> std::io::Result<()> {
    for (i, row) in ds.rows().enumerate() {
        write!(out, "{}", if ds.label(i) > 0.0 { "+1" } else { "-1" })?;
        for (&j, &v) in row.indices.iter().zip(row.values) {
            write!(out, " {}:{}", j + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}
