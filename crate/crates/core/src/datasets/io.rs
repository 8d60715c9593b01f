//! Text formats.
//!
//! Datasets:
//!
//! ```text
//! #dcsim-dataset v1 m=<feature_dim>
//! <label>\t<comma-separated ascending set-bit indices>
//! ```
//!
//! where `<label>` is `0`, `1` or `?`. Real-valued matrices are written as
//! CSV with 17 significant digits, which round-trips `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const HEADER_PREFIX: &str = "#dcsim-dataset v1 m=";

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn save_dataset(d: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_dataset(d)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn format_dataset(d: &LabeledDataset) -> Result<String> {
    if !d.is_binary() {
        return Err(Error::invalid(
            "only 0/1 feature matrices can be written in the dataset format",
        ));
    }
    let mut out = String::new();
    writeln!(out, "{HEADER_PREFIX}{}", d.feature_dim()).unwrap();
    for (i, label) in d.labels().iter().enumerate() {
        out.push_str(label.token());
        out.push('\t');
        let mut first = true;
        for (j, &v) in d.features().row(i).iter().enumerate() {
            if v == 1.0 {
                if !first {
                    out.push(',');
                }
                write!(out, "{j}").unwrap();
                first = false;
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses dataset text. `origin` is only used in error messages.
pub fn parse_dataset(text: &str, origin: impl AsRef<Path>) -> Result<LabeledDataset> {
    let origin = origin.as_ref();
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.split('\n').enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let m: usize = header
        .strip_prefix(HEADER_PREFIX)
        .and_then(|rest| rest.trim_end_matches('\r').parse().ok())
        .ok_or_else(|| err(1, format!("malformed header {header:?}")))?;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut row = vec![0.0; m];
    let body: Vec<(usize, &str)> = lines.collect();
    for (pos, &(idx, line)) in body.iter().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() && pos == body.len() - 1 {
            break; // trailing newline
        }
        let (label_tok, bits) = line
            .split_once('\t')
            .ok_or_else(|| err(lineno, "expected <label>\\t<bits>".into()))?;
        let label = match label_tok {
            "0" => Label::Zero,
            "1" => Label::One,
            "?" => Label::Unlabeled,
            other => return Err(err(lineno, format!("invalid label token {other:?}"))),
        };
        row.iter_mut().for_each(|v| *v = 0.0);
        if !bits.is_empty() {
            let mut prev: Option<usize> = None;
            for tok in bits.split(',') {
                let bit: usize = tok
                    .parse()
                    .map_err(|_| err(lineno, format!("invalid bit index {tok:?}")))?;
                if bit >= m {
                    return Err(err(lineno, format!("bit index out of range: {bit} >= {m}")));
                }
                if prev.is_some_and(|p| bit <= p) {
                    return Err(err(lineno, "bit indices must be strictly ascending".into()));
                }
                row[bit] = 1.0;
                prev = Some(bit);
            }
        }
        data.extend_from_slice(&row);
        labels.push(label);
    }
    let features = DenseMatrix::new(labels.len(), m, data)?;
    LabeledDataset::new(features, labels)
}

pub fn write_matrix_csv(m: &DenseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    for i in 0..m.rows() {
        line.clear();
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            write!(line, "{v:.16e}").unwrap();
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
        rows.push(row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("invalid number: {e}"),
        })?);
    }
    DenseMatrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<LabeledDataset> {
        parse_dataset(text, "<test>")
    }

    #[test]
    fn parses_single_row() {
        let d = parse("#dcsim-dataset v1 m=8\n1\t0,3\n").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels(), &[Label::One]);
        assert_eq!(d.features().row(0), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn parses_unlabeled_and_empty_rows() {
        let d = parse("#dcsim-dataset v1 m=8\n?\t2\n0\t\n").unwrap();
        assert_eq!(d.labels(), &[Label::Unlabeled, Label::Zero]);
        assert_eq!(d.features().row(1), &[0.0; 8]);
    }

    #[test]
    fn error_paths_carry_line_numbers() {
        let e = parse("#dcsim-dataset v1 m=8\n0\t1\n1\t9\n").unwrap_err();
        match e {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("bit index out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("#dcsim v1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("#dcsim-dataset v1 m=8\n2\t1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("#dcsim-dataset v1 m=8\n1\t3,1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("#dcsim-dataset v1 m=8\n1\t1,1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("#dcsim-dataset v1 m=8\n1 1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("#dcsim-dataset v1 m=8\n1\tx\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let text = format_dataset(&LabeledDataset::empty(2048)).unwrap();
        assert_eq!(text, "#dcsim-dataset v1 m=2048\n");
        let back = parse(&text).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.feature_dim(), 2048);
    }

    #[test]
    fn non_binary_features_cannot_be_saved() {
        let d = LabeledDataset::unlabeled(DenseMatrix::from_rows(&[vec![0.5]]).unwrap());
        assert!(format_dataset(&d).is_err());
    }

    #[test]
    fn file_round_trip_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let d = parse("#dcsim-dataset v1 m=5\n1\t0,4\n?\t\n0\t1,2,3\n").unwrap();
        let p = dir.path().join("d.txt");
        save_dataset(&d, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), d);

        let m = DenseMatrix::from_rows(&[vec![0.1, -1.0 / 3.0], vec![1e-300, 12345.678]]).unwrap();
        let c = dir.path().join("m.csv");
        write_matrix_csv(&m, &c).unwrap();
        assert_eq!(read_matrix_csv(&c).unwrap(), m);
    }

    proptest! {
        #[test]
        fn dataset_text_round_trip(
            m in 1usize..40,
            rows in proptest::collection::vec((0u8..3, proptest::collection::vec(any::<bool>(), 40)), 0..20)
        ) {
            let mut data = Vec::new();
            let mut labels = Vec::new();
            for (l, bits) in &rows {
                data.extend(bits[..m].iter().map(|&b| if b { 1.0 } else { 0.0 }));
                labels.push(match l { 0 => Label::Zero, 1 => Label::One, _ => Label::Unlabeled });
            }
            let d = LabeledDataset::new(DenseMatrix::new(rows.len(), m, data).unwrap(), labels).unwrap();
            let back = parse(&format_dataset(&d).unwrap()).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
