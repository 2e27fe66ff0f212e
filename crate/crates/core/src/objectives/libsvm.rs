//! Reader and writer for the libsvm sparse text format.
//!
//! Each nonempty line is `<label> <index>:<value> ...` with 1-based,
//! strictly increasing feature indices. Anything after `#` is ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub label: f64,
    /// `(index, value)` pairs, 1-based indices, strictly increasing.
    pub features: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmDataset {
    rows: Vec<SparseRow>,
    dim: usize,
}

impl LibsvmDataset {
    /// Builds a dataset from rows, validating index order.
    pub fn from_rows(rows: Vec<SparseRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("dataset has no rows".into()));
        }
        let mut dim = 0;
        for (k, row) in rows.iter().enumerate() {
            let mut prev = 0;
            for &(idx, _) in &row.features {
                if idx <= prev {
                    return Err(Error::Parse {
                        line: k + 1,
                        msg: format!("feature index {idx} not strictly increasing"),
                    });
                }
                prev = idx;
            }
            dim = dim.max(prev);
        }
        Ok(Self { rows, dim })
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    /// Largest feature index seen.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Raises the dimension above the largest index seen, e.g. to match a
    /// training set whose trailing features are absent from this file.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if dim < self.dim {
            return Err(Error::InvalidArgument(format!(
                "requested dimension {dim} is below max feature index {}",
                self.dim
            )));
        }
        self.dim = dim;
        Ok(self)
    }

    /// Labels mapped to `{0, 1}`. Labels already in `{0, 1}` are kept;
    /// otherwise exactly two distinct raw labels are required and the smaller
    /// one maps to 0.
    pub fn binary_labels(&self) -> Result<Vec<f64>> {
        let mut distinct: Vec<f64> = Vec::new();
        for row in &self.rows {
            if !distinct.contains(&row.label) {
                distinct.push(row.label);
                if distinct.len() > 2 {
                    return Err(Error::LabelOutOfRange(format!(
                        "more than two distinct labels ({:?})",
                        distinct
                    )));
                }
            }
        }
        if distinct.iter().all(|&l| l == 0.0 || l == 1.0) {
            return Ok(self.rows.iter().map(|r| r.label).collect());
        }
        if distinct.len() != 2 {
            return Err(Error::LabelOutOfRange(format!(
                "single label {} is not in {{0, 1}}",
                distinct[0]
            )));
        }
        distinct.sort_by(f64::total_cmp);
        Ok(self
            .rows
            .iter()
            .map(|r| if r.label == distinct[0] { 0.0 } else { 1.0 })
            .collect())
    }

    /// Zero-based class ids for `classes` classes. Integer labels are read as
    /// 1-based (`1..=classes`) unless some label is 0, in which case they are
    /// read as 0-based (`0..classes`).
    pub fn class_labels(&self, classes: usize) -> Result<Vec<usize>> {
        if classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        let zero_based = self.rows.iter().any(|r| r.label == 0.0);
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let l = r.label;
                if l.fract() != 0.0 || !l.is_finite() {
                    return Err(Error::LabelOutOfRange(format!("row {}: non-integer label {l}", k + 1)));
                }
                let id = if zero_based { l } else { l - 1.0 };
                if id < 0.0 || id >= classes as f64 {
                    return Err(Error::LabelOutOfRange(format!(
                        "row {}: label {l} outside {} classes",
                        k + 1,
                        classes
                    )));
                }
                Ok(id as usize)
            })
            .collect()
    }

    /// Divides each feature column by its largest absolute value so every
    /// entry lies in `[-1, 1]`. Sparsity is preserved.
    pub fn scale_columns(&mut self) {
        let mut max_abs = vec![0.0f64; self.dim + 1];
        for row in &self.rows {
            for &(j, v) in &row.features {
                max_abs[j] = max_abs[j].max(v.abs());
            }
        }
        for row in &mut self.rows {
            for (j, v) in &mut row.features {
                if max_abs[*j] > 0.0 {
                    *v /= max_abs[*j];
                }
            }
        }
    }

    pub fn to_libsvm_string(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&row.label.to_string());
            for &(j, v) in &row.features {
                out.push_str(&format!(" {j}:{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Parses libsvm text. Errors name the 1-based line number.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<LibsvmDataset> {
    let mut rows = Vec::new();
    let mut dim = 0;
    let mut last_line = 0;
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        last_line = line_no;
        let line = line?;
        let content = match line.find('#') {
            Some(p) => &line[..p],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad label '{label_tok}'"),
        })?;
        let mut features = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("malformed token '{tok}'"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad feature index in '{tok}'"),
            })?;
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad feature value in '{tok}'"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "feature indices are 1-based".into(),
                });
            }
            if idx <= prev {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("feature index {idx} not strictly increasing"),
                });
            }
            prev = idx;
            features.push((idx, val));
        }
        dim = dim.max(prev);
        rows.push(SparseRow { label, features });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: last_line.max(1),
            msg: "empty input".into(),
        });
    }
    Ok(LibsvmDataset { rows, dim })
}

/// Reads a libsvm file; `.gz` files are decompressed transparently.
pub fn read_libsvm_file(path: &Path) -> Result<LibsvmDataset> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_libsvm(BufReader::new(reader))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<LibsvmDataset> {
        parse_libsvm(s.as_bytes())
    }

    #[test]
    fn single_row() {
        let ds = parse("1 1:0.5 3:2.0\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.rows()[0].features, vec![(1, 0.5), (3, 2.0)]);
        assert_eq!(ds.rows()[0].label, 1.0);
        assert_eq!(ds.binary_labels().unwrap(), vec![1.0]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse(""), Err(Error::Parse { .. })));
        assert!(matches!(parse("\n   \n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn signed_labels_map_to_zero_one() {
        let ds = parse("+1 1:1\n-1 2:1\n").unwrap();
        assert_eq!(ds.binary_labels().unwrap(), vec![1.0, 0.0]);
        let ds = parse("2 1:1\n4 2:1\n2 1:3\n").unwrap();
        assert_eq!(ds.binary_labels().unwrap(), vec![0.0, 1.0, 0.0]);
        let ds = parse("1 1:1\n2 1:1\n3 1:1\n").unwrap();
        assert!(ds.binary_labels().is_err());
    }

    #[test]
    fn errors_name_the_line() {
        match parse("1 1:1\n0 2:1 2:3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse("1 1:1\n\n1 4-2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("x 1:1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1 0:1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn class_labels_zero_and_one_based() {
        let ds = parse("1 1:1\n3 1:1\n2 1:1\n").unwrap();
        assert_eq!(ds.class_labels(3).unwrap(), vec![0, 2, 1]);
        let ds = parse("0 1:1\n2 1:1\n").unwrap();
        assert_eq!(ds.class_labels(3).unwrap(), vec![0, 2]);
        assert!(matches!(ds.class_labels(2), Err(Error::LabelOutOfRange(_))));
    }

    #[test]
    fn column_scaling() {
        let mut ds = parse("1 1:2 2:-4\n0 1:-1 3:0.5\n").unwrap();
        ds.scale_columns();
        assert_eq!(ds.rows()[0].features, vec![(1, 1.0), (2, -1.0)]);
        assert_eq!(ds.rows()[1].features, vec![(1, -0.5), (3, 1.0)]);
    }

    #[test]
    fn comments_are_skipped() {
        let ds = parse("# header\n1 2:1 # trailing\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 2);
    }
}
