//! The activation-trace data model shared by every other module.
//!
//! A [`TraceSet`] is a dense `N x D` matrix of activation traces together with
//! the predicted class of each row. A [`SampleSelection`] names a subset of the
//! rows of a parent set, along with how it was produced.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SaError};
use crate::io::{self, TraceFormat};

/// Content hash of a training set, used to key prepared state in the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub u64);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Activation traces of `N` inputs at one layer plus their predicted labels.
///
/// Immutable once constructed; every constructor validates the invariants
/// (non-empty, finite, labels below `num_classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    traces: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl TraceSet {
    /// Builds a validated trace set. `num_classes` defaults to `1 + max(label)`.
    pub fn new(
        traces: Array2<f64>,
        labels: Vec<usize>,
        num_classes: Option<usize>,
        name: impl Into<String>,
    ) -> Result<Self> {
        let (n, d) = traces.dim();
        if n == 0 || d == 0 {
            return Err(SaError::Empty);
        }
        if labels.len() != n {
            return Err(SaError::LabelCountMismatch {
                labels: labels.len(),
                rows: n,
            });
        }
        for ((row, col), v) in traces.indexed_iter() {
            if !v.is_finite() {
                return Err(SaError::NonFinite { row, col });
            }
        }
        let inferred = labels.iter().max().map_or(1, |m| m + 1);
        let num_classes = num_classes.unwrap_or(inferred);
        if num_classes == 0 {
            return Err(SaError::invalid("num_classes must be positive"));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(SaError::LabelOutOfRange {
                row,
                label,
                num_classes,
            });
        }
        Ok(TraceSet {
            traces: traces.as_standard_layout().into_owned(),
            labels,
            num_classes,
            name: name.into(),
        })
    }

    /// Builds a trace set from row vectors.
    pub fn from_rows(
        rows: &[Vec<f64>],
        labels: Vec<usize>,
        num_classes: Option<usize>,
        name: impl Into<String>,
    ) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(SaError::DimensionMismatch {
                    row,
                    expected: d,
                    found: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        let traces = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| SaError::Parse(e.to_string()))?;
        TraceSet::new(traces, labels, num_classes, name)
    }

    pub fn len(&self) -> usize {
        self.traces.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.traces.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn traces(&self) -> ArrayView2<'_, f64> {
        self.traces.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.traces.row(i)
    }

    /// Row `i` as a contiguous slice (storage is always row-major).
    pub fn row_slice(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.traces.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same traces and labels with a different class count; fails if a label
    /// would fall out of range.
    pub fn with_num_classes(self, num_classes: usize) -> Result<Self> {
        TraceSet::new(self.traces, self.labels, Some(num_classes), self.name)
    }

    /// Row indices per class, ascending within each class. Every class in
    /// `0..num_classes` has an entry, possibly empty.
    pub fn class_partition(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut parts: BTreeMap<usize, Vec<usize>> =
            (0..self.num_classes).map(|c| (c, Vec::new())).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            parts.entry(l).or_default().push(i);
        }
        parts
    }

    /// Number of classes that have at least one row.
    pub fn populated_classes(&self) -> usize {
        self.class_partition()
            .values()
            .filter(|v| !v.is_empty())
            .count()
    }

    /// Rows named by `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<TraceSet> {
        if let Some(&index) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(SaError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let traces = self.traces.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        TraceSet::new(traces, labels, Some(self.num_classes), self.name.clone())
    }

    /// The subset of rows chosen by `sel`, preserving relative order.
    pub fn restrict(&self, sel: &SampleSelection) -> Result<TraceSet> {
        sel.check_parent(self.len())?;
        self.select_rows(&sel.indices)
    }

    /// Content hash over shape, class count, labels and the exact trace bits.
    /// The name does not participate.
    pub fn fingerprint(&self) -> Fingerprint {
        let mut h = Sha256::new();
        h.update(b"traceset/v1");
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        for v in self.traces.iter() {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        Fingerprint(u64::from_le_bytes(digest[..8].try_into().unwrap()))
    }
}

/// How a [`SampleSelection`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Uniform,
    UnsurprisingFirst,
    NeighborFree,
    Full,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::UnsurprisingFirst => "unsurprising",
            Strategy::NeighborFree => "neighborfree",
            Strategy::Full => "full",
        })
    }
}

/// A subset `T'` of a parent trace set's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSelection {
    pub strategy: Strategy,
    /// Sampling ratio for ratio-based strategies, epsilon for neighbor-free,
    /// absent for the full selection.
    pub parameter: Option<f64>,
    pub seed: u64,
    pub parent_len: usize,
    pub achieved_ratio: f64,
    pub indices: Vec<usize>,
}

impl SampleSelection {
    /// Sorts and validates `indices` against a parent of `parent_len` rows.
    pub fn new(
        mut indices: Vec<usize>,
        strategy: Strategy,
        parameter: Option<f64>,
        seed: u64,
        parent_len: usize,
    ) -> Result<Self> {
        indices.sort_unstable();
        let sel = SampleSelection {
            strategy,
            parameter,
            seed,
            parent_len,
            achieved_ratio: ratio(indices.len(), parent_len),
            indices,
        };
        sel.check_parent(parent_len)?;
        Ok(sel)
    }

    /// Every row of a parent with `n` rows.
    pub fn full(n: usize) -> Self {
        SampleSelection {
            strategy: Strategy::Full,
            parameter: None,
            seed: 0,
            parent_len: n,
            achieved_ratio: 1.0,
            indices: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Validates sortedness, distinctness, range and the recorded ratio.
    pub fn check_parent(&self, n: usize) -> Result<()> {
        if self.parent_len != n {
            return Err(SaError::invalid(format!(
                "selection was made for {} rows, parent has {n}",
                self.parent_len
            )));
        }
        if let Some(&index) = self.indices.iter().find(|&&i| i >= n) {
            return Err(SaError::IndexOutOfRange { index, len: n });
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SaError::invalid(
                "selection indices must be strictly ascending",
            ));
        }
        if self.achieved_ratio != ratio(self.indices.len(), n) {
            return Err(SaError::invalid(format!(
                "achieved_ratio {} does not equal {}/{n}",
                self.achieved_ratio,
                self.indices.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("selection serializes")
    }

    /// Parses and validates a selection (validation is against its own
    /// `parent_len`; [`TraceSet::restrict`] re-checks against the real parent).
    pub fn from_json(s: &str) -> Result<Self> {
        let sel: SampleSelection =
            serde_json::from_str(s).map_err(|e| SaError::Parse(format!("selection json: {e}")))?;
        sel.check_parent(sel.parent_len)?;
        Ok(sel)
    }
}

fn ratio(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

/// Options for [`load_traces`].
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub num_classes: Option<usize>,
    /// Skip one header line in CSV inputs.
    pub skip_header: bool,
    /// Defaults to the trace file's stem.
    pub name: Option<String>,
}

/// Loads a trace matrix and its labels file and validates them together.
pub fn load_traces(
    path: &Path,
    format: TraceFormat,
    labels_path: &Path,
    opts: &LoadOptions,
) -> Result<TraceSet> {
    let traces = io::read_matrix_file(path, format, opts.skip_header)?;
    let labels = io::read_labels_file(labels_path, opts.skip_header)?;
    let name = opts.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "traces".to_string())
    });
    TraceSet::new(traces, labels, opts.num_classes, name)
}
