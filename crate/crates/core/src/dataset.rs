//! XMC repository text format.
//!
//! ```text
//! N D L
//! l1,l2,...,lk f1:v1 f2:v2 ...
//! ```
//!
//! The label list may be empty, in which case the line starts with a space.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::{CsrBuilder, Index, SparseMatrix, SparseVector};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// n × d instance features.
    pub features: SparseMatrix,
    /// n × L binary label assignments.
    pub labels: SparseMatrix,
}

impl Dataset {
    pub fn new(features: SparseMatrix, labels: SparseMatrix) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                found: labels.rows(),
            });
        }
        if labels.values().iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidArgument(
                "label matrix must be binary".into(),
            ));
        }
        Ok(Self { features, labels })
    }

    pub fn n_instances(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.cols()
    }

    pub fn feature_vector(&self, i: usize) -> SparseVector {
        self.features.row_vector(i)
    }

    pub fn label_set(&self, i: usize) -> &[Index] {
        self.labels.row(i).indices
    }

    /// Instances that carry no labels. They are kept; training uses them as
    /// negatives only.
    pub fn zero_label_instances(&self) -> usize {
        (0..self.n_instances())
            .filter(|&i| self.labels.row_nnz(i) == 0)
            .count()
    }

    /// Row subset (repeats allowed), used for bootstrap resampling.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: self.labels.select_rows(rows),
        }
    }

    pub fn with_normalized_features(&self) -> Dataset {
        Dataset {
            features: self.features.l2_normalize_rows(),
            labels: self.labels.clone(),
        }
    }
}

fn parse_header(line: &str) -> Result<(usize, usize, usize)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::parse(
            1,
            format!("header must be `N D L`, found {} fields", fields.len()),
        ));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(1, format!("header {what} `{s}` is not an integer")))
    };
    Ok((
        num(fields[0], "N")?,
        num(fields[1], "D")?,
        num(fields[2], "L")?,
    ))
}

fn parse_index(tok: &str, bound: usize, what: &str, line: usize) -> Result<Index> {
    let idx: u64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("{what} index `{tok}` is not an integer")))?;
    if idx >= bound as u64 {
        return Err(Error::parse(
            line,
            format!("{what} index {idx} >= declared dimension {bound}"),
        ));
    }
    Ok(idx as Index)
}

fn check_sorted_unique(ids: &mut [(Index, f64)], what: &str, line: usize) -> Result<()> {
    ids.sort_unstable_by_key(|&(i, _)| i);
    if let Some(w) = ids.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::parse(
            line,
            format!("duplicate {what} index {}", w[0].0),
        ));
    }
    Ok(())
}

/// Parses an XMC text stream.
pub fn parse_xmc_text<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines();
    let read_err = |line: usize, e: std::io::Error| Error::parse(line, format!("read error: {e}"));

    let header = match lines.next() {
        Some(l) => l.map_err(|e| read_err(1, e))?,
        None => return Err(Error::parse(1, "empty file")),
    };
    let (n, d, l) = parse_header(header.trim_end_matches('\r'))?;

    let mut feats = CsrBuilder::with_capacity(d, n, 0);
    let mut labs = CsrBuilder::with_capacity(l, n, 0);
    let mut pairs: Vec<(Index, f64)> = Vec::new();
    let mut label_pairs: Vec<(Index, f64)> = Vec::new();
    let mut seen = 0usize;

    for (offset, raw) in lines.enumerate() {
        let line_no = offset + 2;
        let raw = raw.map_err(|e| read_err(line_no, e))?;
        let line = raw.trim_end_matches('\r');
        if seen == n {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::parse(
                line_no,
                format!("more than the declared {n} instances"),
            ));
        }
        pairs.clear();
        label_pairs.clear();
        let mut tokens = line.split_whitespace().peekable();
        let has_labels = !line.starts_with(' ')
            && !line.starts_with('\t')
            && tokens.peek().is_some_and(|t| !t.contains(':'));
        if has_labels {
            let tok = tokens.next().unwrap_or_default();
            for lab in tok.split(',') {
                label_pairs.push((parse_index(lab, l, "label", line_no)?, 1.0));
            }
        }
        for tok in tokens {
            let (fi, fv) = tok.split_once(':').ok_or_else(|| {
                Error::parse(line_no, format!("feature token `{tok}` is not `index:value`"))
            })?;
            let idx = parse_index(fi, d, "feature", line_no)?;
            let val: f64 = fv
                .parse()
                .map_err(|_| Error::parse(line_no, format!("feature value `{fv}` is not numeric")))?;
            if !val.is_finite() {
                return Err(Error::parse(line_no, format!("non-finite feature value `{fv}`")));
            }
            pairs.push((idx, val));
        }
        check_sorted_unique(&mut pairs, "feature", line_no)?;
        check_sorted_unique(&mut label_pairs, "label", line_no)?;
        let (fi, fv): (Vec<Index>, Vec<f64>) = pairs.iter().copied().unzip();
        feats.push_row(&fi, &fv);
        let (li, lv): (Vec<Index>, Vec<f64>) = label_pairs.iter().copied().unzip();
        labs.push_row(&li, &lv);
        seen += 1;
    }
    if seen != n {
        return Err(Error::parse(
            seen + 2,
            format!("header declares {n} instances but only {seen} present"),
        ));
    }
    Ok(Dataset {
        features: feats.finish(),
        labels: labs.finish(),
    })
}

pub fn load_xmc_text(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let data = parse_xmc_text(BufReader::new(file))?;
    let zero = data.zero_label_instances();
    if zero > 0 {
        log::warn!("{}: {zero} instances have no labels", path.display());
    }
    Ok(data)
}

/// Writes the canonical text form: sorted indices, shortest round-trip
/// decimal values.
pub fn write_xmc_text<W: Write>(data: &Dataset, mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "{} {} {}",
        data.n_instances(),
        data.n_features(),
        data.n_labels()
    )?;
    for i in 0..data.n_instances() {
        let labels = data.label_set(i);
        for (j, l) in labels.iter().enumerate() {
            if j > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{l}")?;
        }
        for (f, v) in data.features.row(i).iter() {
            write!(w, " {f}:{v}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_xmc_text(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_xmc_text(data, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Dataset> {
        parse_xmc_text(s.as_bytes())
    }

    #[test]
    fn minimal_file() {
        let d = parse("2 4 3\n0,2 1:0.5 3:0.5\n 0:1.0\n").unwrap();
        assert_eq!((d.n_instances(), d.n_features(), d.n_labels()), (2, 4, 3));
        assert_eq!(d.label_set(0), &[0, 2]);
        assert!(d.label_set(1).is_empty());
        assert_eq!(d.features.row(0).indices, &[1, 3]);
        assert_eq!(d.features.row(1).values, &[1.0]);
        assert_eq!(d.zero_label_instances(), 1);
    }

    #[test]
    fn crlf_accepted() {
        let d = parse("1 2 2\r\n1 0:2.5\r\n").unwrap();
        assert_eq!(d.label_set(0), &[1]);
        assert_eq!(d.features.row(0).values, &[2.5]);
    }

    #[test]
    fn feature_out_of_bounds_reports_line() {
        let err = parse("1 2 2\n0 5:1.0\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("feature index 5"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn label_out_of_bounds() {
        assert!(matches!(
            parse("1 2 2\n2 0:1.0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_header() {
        assert!(matches!(parse("2 4\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("a 4 3\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse(""), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_numeric_value() {
        assert!(matches!(
            parse("1 4 3\n0 1:abc\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("1 4 3\n0 1:nan\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_feature_is_error() {
        let err = parse("1 4 3\n0 1:0.5 1:0.5\n").unwrap_err();
        assert!(err.to_string().contains("duplicate feature"), "{err}");
    }

    #[test]
    fn instance_count_mismatch() {
        assert!(parse("3 4 3\n0 1:1\n").is_err());
        assert!(parse("1 4 3\n0 1:1\n1 2:1\n").is_err());
    }

    #[test]
    fn unsorted_features_are_sorted() {
        let d = parse("1 4 1\n0 3:1 1:2\n").unwrap();
        assert_eq!(d.features.row(0).indices, &[1, 3]);
        let mut out = Vec::new();
        write_xmc_text(&d, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "1 4 1\n0 1:2 3:1\n");
    }

    #[test]
    fn labels_without_features() {
        let d = parse("1 4 3\n0,1\n").unwrap();
        assert_eq!(d.label_set(0), &[0, 1]);
        assert_eq!(d.features.row_nnz(0), 0);
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..6, 1usize..12, 1usize..8).prop_flat_map(|(n, d, l)| {
            let row_f = proptest::collection::btree_map(0..d as Index, -10.0f64..10.0, 0..d);
            let row_l = proptest::collection::btree_set(0..l as Index, 0..l);
            proptest::collection::vec((row_f, row_l), n).prop_map(move |rows| {
                let mut f = CsrBuilder::with_capacity(d, n, 0);
                let mut lb = CsrBuilder::with_capacity(l, n, 0);
                for (fm, ls) in rows {
                    let (fi, fv): (Vec<_>, Vec<_>) = fm.into_iter().unzip();
                    f.push_row(&fi, &fv);
                    let li: Vec<_> = ls.into_iter().collect();
                    lb.push_row(&li, &vec![1.0; li.len()]);
                }
                Dataset {
                    features: f.finish(),
                    labels: lb.finish(),
                }
            })
        })
    }

    proptest! {
        #[test]
        fn canonical_form_round_trips(data in arb_dataset()) {
            let mut first = Vec::new();
            write_xmc_text(&data, &mut first).unwrap();
            let reparsed = parse_xmc_text(first.as_slice()).unwrap();
            prop_assert_eq!(&reparsed, &data);
            let mut second = Vec::new();
            write_xmc_text(&reparsed, &mut second).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
