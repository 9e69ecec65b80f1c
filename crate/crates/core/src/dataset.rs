//! Loading, validating and aligning samples.

use std::fs::File;
use std::io::{self, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Smallest sample size accepted by [`split_half`].
pub const MIN_SPLIT_SIZE: usize = 8;

/// Observations of one random variable: `m` rows of `d` finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    data: Vec<f64>,
    m: usize,
    d: usize,
    label: String,
}

impl Sample {
    /// Builds a sample from row-major data.
    pub fn new(data: Vec<f64>, m: usize, d: usize, label: impl Into<String>) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::InvalidSample(format!(
                "need m >= 1 and d >= 1, got m={m}, d={d}"
            )));
        }
        if data.len() != m * d {
            return Err(Error::InvalidSample(format!(
                "{} values cannot form a {m}x{d} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "non-finite value at row {}, column {}",
                pos / d + 1,
                pos % d + 1
            )));
        }
        Ok(Sample {
            data,
            m,
            d,
            label: label.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], label: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidSample("rows have unequal lengths".into()));
        }
        Self::new(rows.concat(), rows.len(), d, label)
    }

    /// Single-feature sample.
    pub fn from_column(values: &[f64], label: impl Into<String>) -> Result<Self> {
        Self::new(values.to_vec(), values.len(), 1, label)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// New sample made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            if i >= self.m {
                return Err(Error::InvalidArgument(format!(
                    "row {i} out of range for sample of size {}",
                    self.m
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(data, rows.len(), self.d, self.label.clone())
    }

    /// Writes the sample as headerless CSV. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, mut out: W, delimiter: u8) -> io::Result<()> {
        let sep = delimiter as char;
        for row in self.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    write!(out, "{sep}")?;
                }
                first = false;
                write!(out, "{v:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut out = io::BufWriter::new(file);
        self.write_csv(&mut out, b',').map_err(io_err)?;
        out.flush().map_err(io_err)
    }
}

/// Options for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    /// Zero-based, half-open range of columns to keep. `None` keeps all.
    pub columns: Option<Range<usize>>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            has_header: false,
            columns: None,
        }
    }
}

/// Loads a numeric CSV file: rows are observations, columns are features.
///
/// Rows and columns in error messages are 1-based file positions.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Sample> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, path, options).map(|s| s.with_label(label))
}

fn read_csv<R: io::Read>(reader: R, path: &Path, options: &CsvOptions) -> Result<Sample> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut width: Option<usize> = None;
    let mut cols: Range<usize> = 0..0;
    let mut data = Vec::new();
    let mut m = 0;

    for record in rdr.records() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(m + 1, |p| p.line() as usize);
        // Blank lines are skipped by the reader; a lone empty field is not data.
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            None => {
                width = Some(record.len());
                cols = options.columns.clone().unwrap_or(0..record.len());
                if cols.start >= cols.end {
                    return Err(Error::EmptySelection {
                        path: path.to_path_buf(),
                        reason: format!("column range {}..{} is empty", cols.start, cols.end),
                    });
                }
                if cols.end > record.len() {
                    return Err(Error::EmptySelection {
                        path: path.to_path_buf(),
                        reason: format!(
                            "column range {}..{} exceeds the {} columns present",
                            cols.start,
                            cols.end,
                            record.len()
                        ),
                    });
                }
            }
            Some(w) if w != record.len() => {
                return Err(Error::RaggedRow {
                    path: path.to_path_buf(),
                    row,
                    found: record.len(),
                    expected: w,
                });
            }
            Some(_) => {}
        }
        for c in cols.clone() {
            let cell = &record[c];
            let value: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                row,
                column: c + 1,
                cell: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    row,
                    column: c + 1,
                    cell: cell.to_string(),
                });
            }
            data.push(value);
        }
        m += 1;
    }

    if m == 0 {
        return Err(Error::EmptySelection {
            path: path.to_path_buf(),
            reason: "no data rows".into(),
        });
    }
    Sample::new(data, m, cols.len(), String::new())
}

/// Several samples whose rows refer to the same underlying units.
///
/// Variable 0 is the source `x`; variables 1 and 2, when present, are the
/// targets `y` and `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    samples: Vec<Sample>,
    m: usize,
}

impl JointSample {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn x(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn y(&self) -> &Sample {
        &self.samples[1]
    }

    pub fn z(&self) -> Option<&Sample> {
        self.samples.get(2)
    }

    pub fn variables(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn require_z(&self) -> Result<&Sample> {
        self.z()
            .ok_or_else(|| Error::InvalidArgument("joint sample has no third variable z".into()))
    }
}

/// Aligns source `x` with targets `y` and `z`.
pub fn align(x: Sample, y: Sample, z: Sample) -> Result<JointSample> {
    align_all(vec![x, y, z])
}

/// Aligns a source with a single target, for plain HSIC use.
pub fn align_pair(x: Sample, y: Sample) -> Result<JointSample> {
    align_all(vec![x, y])
}

/// Aligns any number (at least two) of samples.
pub fn align_all(samples: Vec<Sample>) -> Result<JointSample> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two samples to align".into(),
        ));
    }
    let m = samples[0].m();
    if samples.iter().any(|s| s.m() != m) {
        return Err(Error::SampleSizeMismatch(
            samples.iter().map(Sample::m).collect(),
        ));
    }
    Ok(JointSample { samples, m })
}

/// Disjoint row sets of equal size used by the independent test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalfSplit {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Splits `0..m` into two halves of size `m / 2`; the last row is dropped
/// when `m` is odd. With `shuffle_seed`, rows are permuted before splitting.
pub fn split_indices(m: usize, shuffle_seed: Option<u64>) -> Result<HalfSplit> {
    if m < MIN_SPLIT_SIZE {
        return Err(Error::TooFewObservations {
            needed: MIN_SPLIT_SIZE,
            got: m,
        });
    }
    let mut order: Vec<usize> = (0..m).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let half = m / 2;
    Ok(HalfSplit {
        first: order[..half].to_vec(),
        second: order[half..2 * half].to_vec(),
    })
}

/// Splits a joint sample into `(X', Y')` from the first half of the rows
/// and `(X'', Z'')` from the second half.
pub fn split_half(
    j: &JointSample,
    shuffle_seed: Option<u64>,
) -> Result<(JointSample, JointSample)> {
    let z = j.require_z()?;
    let split = split_indices(j.m(), shuffle_seed)?;
    let first = align_pair(
        j.x().select_rows(&split.first)?,
        j.y().select_rows(&split.first)?,
    )?;
    let second = align_pair(
        j.x().select_rows(&split.second)?,
        z.select_rows(&split.second)?,
    )?;
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str, options: &CsvOptions) -> Result<Sample> {
        read_csv(Cursor::new(text), Path::new("mem.csv"), options)
    }

    fn column(values: &[f64]) -> Sample {
        Sample::from_column(values, "s").unwrap()
    }

    #[test]
    fn parses_plain_matrix() {
        let s = parse("1,2\n3,4\n5,6", &CsvOptions::default()).unwrap();
        assert_eq!((s.m(), s.d()), (3, 2));
        assert_eq!(s.row(2), &[5.0, 6.0]);
    }

    #[test]
    fn header_row_is_skipped() {
        let opts = CsvOptions {
            has_header: true,
            ..Default::default()
        };
        let s = parse("a,b\n1,2\n3,4\n", &opts).unwrap();
        assert_eq!(s.m(), 2);
    }

    #[test]
    fn scientific_notation_and_delimiter() {
        let opts = CsvOptions {
            delimiter: b';',
            ..Default::default()
        };
        let s = parse("1e-3; -2.5E2\n0.5;7", &opts).unwrap();
        assert_eq!(s.row(0), &[1e-3, -250.0]);
    }

    #[test]
    fn nan_is_rejected_with_position() {
        let err = parse("1,2\n3,NaN\n", &CsvOptions::default()).unwrap_err();
        match err {
            Error::NonFinite { row, column, .. } => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn ragged_and_non_numeric_rows() {
        let err = parse("1,2\n3\n", &CsvOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::RaggedRow {
                row: 2,
                found: 1,
                expected: 2,
                ..
            }
        ));
        let err = parse("1,2\n3,x\n", &CsvOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::NonNumeric {
                row: 2,
                column: 2,
                ..
            }
        ));
    }

    #[test]
    fn column_range_selects_features() {
        let opts = CsvOptions {
            columns: Some(1..3),
            ..Default::default()
        };
        let s = parse("id1,1,2\nid2,3,4\n", &opts).unwrap();
        assert_eq!((s.m(), s.d()), (2, 2));
        assert_eq!(s.row(1), &[3.0, 4.0]);

        let opts = CsvOptions {
            columns: Some(2..2),
            ..Default::default()
        };
        assert!(matches!(
            parse("1,2\n", &opts),
            Err(Error::EmptySelection { .. })
        ));
        let opts = CsvOptions {
            columns: Some(0..5),
            ..Default::default()
        };
        assert!(matches!(
            parse("1,2\n", &opts),
            Err(Error::EmptySelection { .. })
        ));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            parse("", &CsvOptions::default()),
            Err(Error::EmptySelection { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv("/nonexistent/file.csv", &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn align_checks_counts() {
        let five = column(&[1., 2., 3., 4., 5.]);
        let four = column(&[1., 2., 3., 4.]);
        let j = align(five.clone(), five.clone(), five.clone()).unwrap();
        assert_eq!(j.m(), 5);
        let err = align(five.clone(), four, five).unwrap_err();
        assert_eq!(err.to_string(), "sample sizes 5,4,5 differ");
    }

    #[test]
    fn split_sizes() {
        let mk = |m: usize| {
            let s = column(&(0..m).map(|v| v as f64).collect::<Vec<_>>());
            align(s.clone(), s.clone(), s).unwrap()
        };
        let (a, b) = split_half(&mk(10), None).unwrap();
        assert_eq!((a.m(), b.m()), (5, 5));
        assert_eq!(a.x().data(), &[0., 1., 2., 3., 4.]);
        assert_eq!(b.y().data(), &[5., 6., 7., 8., 9.]);

        let (a, b) = split_half(&mk(11), None).unwrap();
        assert_eq!((a.m(), b.m()), (5, 5));
        assert!(!b.x().data().contains(&10.0));

        assert!(matches!(
            split_half(&mk(7), None),
            Err(Error::TooFewObservations { needed: 8, got: 7 })
        ));
    }

    #[test]
    fn shuffled_split_is_seeded() {
        let a = split_indices(20, Some(3)).unwrap();
        let b = split_indices(20, Some(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, split_indices(20, None).unwrap());
    }

    #[test]
    fn sample_rejects_bad_shapes() {
        assert!(Sample::new(vec![], 0, 1, "e").is_err());
        assert!(Sample::new(vec![1.0, 2.0, 3.0], 2, 2, "e").is_err());
        assert!(Sample::new(vec![f64::INFINITY], 1, 1, "e").is_err());
    }
}
