//! Case/control log2-ratio matrices, fixed-width binning and TSV ingestion.
//!
//! A matrix holds one group of samples: one row per sample, one column per
//! probe, stored row-major so that any contiguous probe range of a sample is a
//! contiguous slice. [`BinData`] is a borrowed view of such a range.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CnvError, Result};

/// Default number of probes per bin.
pub const DEFAULT_BIN_SIZE: usize = 10;

/// Trailing bins shorter than this are folded into their left neighbour.
pub const DEFAULT_MIN_TAIL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Case,
    Control,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Case => f.write_str("case"),
            Group::Control => f.write_str("control"),
        }
    }
}

impl FromStr for Group {
    type Err = CnvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case" => Ok(Group::Case),
            "control" => Ok(Group::Control),
            other => Err(CnvError::config("group", format!("unknown group {other:?}"))),
        }
    }
}

/// Samples x probes grid of log2 copy-number ratios for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMatrix {
    group: Group,
    sample_ids: Vec<String>,
    probe_ids: Vec<String>,
    values: Vec<f64>,
}

impl IntensityMatrix {
    /// Builds a matrix from row-major values. Every value must be finite.
    pub fn new(
        group: Group,
        sample_ids: Vec<String>,
        probe_ids: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        let t = probe_ids.len();
        if n < 2 || t < 1 {
            return Err(CnvError::TooSmall {
                samples: n,
                probes: t,
                min_samples: 2,
            });
        }
        if values.len() != n * t {
            return Err(CnvError::MalformedRow {
                line: 0,
                expected: n * t,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(CnvError::NonNumericCell {
                line: pos / t + 2,
                column: pos % t + 2,
                value: values[pos].to_string(),
            });
        }
        Ok(Self {
            group,
            sample_ids,
            probe_ids,
            values,
        })
    }

    /// Builds a matrix with generated sample (`s0`, `s1`, ..) and probe
    /// (`p0`, `p1`, ..) identifiers.
    pub fn from_rows(group: Group, rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != t) {
            return Err(CnvError::MalformedRow {
                line: i + 2,
                expected: t,
                found: r.len(),
            });
        }
        let values = rows.iter().flatten().copied().collect();
        Self::from_flat(group, rows.len(), t, values)
    }

    pub fn from_flat(group: Group, n_samples: usize, n_probes: usize, values: Vec<f64>) -> Result<Self> {
        let sample_ids = (0..n_samples).map(|i| format!("s{i}")).collect();
        let probe_ids = (0..n_probes).map(|j| format!("p{j}")).collect();
        Self::new(group, sample_ids, probe_ids, values)
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_probes(&self) -> usize {
        self.probe_ids.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn probe_ids(&self) -> &[String] {
        &self.probe_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let t = self.n_probes();
        &self.values[i * t..(i + 1) * t]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_probes() + j]
    }

    /// View over the whole probe axis.
    pub fn full(&self) -> BinData<'_> {
        BinData {
            matrix: self,
            start: 0,
            end: self.n_probes(),
        }
    }

    /// Returns a copy with rows reordered so that new row `r` is old row `order[r]`.
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.n_samples());
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        Self {
            group: self.group,
            sample_ids: order.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            probe_ids: self.probe_ids.clone(),
            values,
        }
    }

    /// Writes the matrix in the TSV layout accepted by [`load_matrix`].
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| CnvError::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| CnvError::io(path, e))?;
        out.flush().map_err(|e| CnvError::io(path, e))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "probe_id")?;
        for id in &self.probe_ids {
            write!(out, "\t{id}")?;
        }
        writeln!(out)?;
        for (i, sample) in self.sample_ids.iter().enumerate() {
            write!(out, "{sample}")?;
            for v in self.row(i) {
                // `{}` on f64 prints the shortest string that round-trips.
                write!(out, "\t{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Reads a TSV matrix: a header `probe_id<TAB>id1<TAB>id2...` followed by one
/// row per sample, `sample_id<TAB>v1<TAB>v2...`.
pub fn load_matrix(path: impl AsRef<Path>, group: Group) -> Result<IntensityMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CnvError::io(path, e))?;
    parse_matrix(&text, group).map_err(|e| match e {
        CnvError::EmptyFile(_) => CnvError::EmptyFile(path.to_path_buf()),
        other => other,
    })
}

pub fn parse_matrix(text: &str, group: Group) -> Result<IntensityMatrix> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());

    let (_, header) = lines.next().ok_or_else(|| CnvError::EmptyFile("<input>".into()))?;
    let probe_ids: Vec<String> = header.split('\t').skip(1).map(str::to_owned).collect();
    let expected = probe_ids.len() + 1;

    let mut sample_ids = Vec::new();
    let mut values = Vec::new();
    for (line, row) in lines {
        let cells: Vec<&str> = row.split('\t').collect();
        if cells.len() != expected {
            return Err(CnvError::MalformedRow {
                line,
                expected,
                found: cells.len(),
            });
        }
        sample_ids.push(cells[0].to_owned());
        for (c, cell) in cells.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| CnvError::NonNumericCell {
                line,
                column: c + 1,
                value: (*cell).to_owned(),
            })?;
            if !v.is_finite() {
                return Err(CnvError::NonNumericCell {
                    line,
                    column: c + 1,
                    value: (*cell).to_owned(),
                });
            }
            values.push(v);
        }
    }
    IntensityMatrix::new(group, sample_ids, probe_ids, values)
}

/// Half-open probe range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bin {
    pub start: usize,
    pub end: usize,
}

impl Bin {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn midpoint(&self) -> f64 {
        (self.start + self.end) as f64 / 2.0
    }
}

/// Splits `n_probes` into consecutive bins of `bin_size`, folding a trailing
/// remainder shorter than [`DEFAULT_MIN_TAIL`] into the previous bin.
pub fn partition_bins(n_probes: usize, bin_size: usize) -> Result<Vec<Bin>> {
    partition_bins_with_tail(n_probes, bin_size, DEFAULT_MIN_TAIL)
}

pub fn partition_bins_with_tail(n_probes: usize, bin_size: usize, min_tail: usize) -> Result<Vec<Bin>> {
    if bin_size == 0 {
        return Err(CnvError::ZeroBinSize);
    }
    let mut bins: Vec<Bin> = (0..n_probes)
        .step_by(bin_size)
        .map(|s| Bin::new(s, (s + bin_size).min(n_probes)))
        .collect();
    if bins.len() >= 2 && bins.last().is_some_and(|b| b.len() < min_tail) {
        let tail = bins.pop().unwrap();
        bins.last_mut().unwrap().end = tail.end;
    }
    Ok(bins)
}

/// Read-only view of a matrix restricted to one probe range.
#[derive(Debug, Clone, Copy)]
pub struct BinData<'a> {
    matrix: &'a IntensityMatrix,
    start: usize,
    end: usize,
}

/// Restricts `matrix` to the probes of `bin`.
pub fn slice(matrix: &IntensityMatrix, bin: Bin) -> Result<BinData<'_>> {
    if bin.start >= bin.end || bin.end > matrix.n_probes() {
        return Err(CnvError::OutOfBounds {
            start: bin.start,
            end: bin.end,
            n_probes: matrix.n_probes(),
        });
    }
    Ok(BinData {
        matrix,
        start: bin.start,
        end: bin.end,
    })
}

impl<'a> BinData<'a> {
    pub fn n_samples(&self) -> usize {
        self.matrix.n_samples()
    }

    /// Number of probes `p` in the view.
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn bin(&self) -> Bin {
        Bin::new(self.start, self.end)
    }

    pub fn matrix(&self) -> &'a IntensityMatrix {
        self.matrix
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.matrix.row(i)[self.start..self.end]
    }

    pub fn rows(&self) -> impl Iterator<Item = &'a [f64]> + '_ {
        (0..self.n_samples()).map(move |i| self.row(i))
    }

    /// Sub-view relative to this view: local probes `[from, to)`.
    pub fn sub(&self, from: usize, to: usize) -> Result<BinData<'a>> {
        if from >= to || to > self.len() {
            return Err(CnvError::OutOfBounds {
                start: from,
                end: to,
                n_probes: self.len(),
            });
        }
        Ok(BinData {
            matrix: self.matrix,
            start: self.start + from,
            end: self.start + to,
        })
    }

    pub fn row_means(&self) -> Vec<f64> {
        let p = self.len() as f64;
        self.rows().map(|r| r.iter().sum::<f64>() / p).collect()
    }
}
