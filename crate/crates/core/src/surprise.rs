//! Likelihood-based (LSA) and distance-based (DSA) surprise adequacy.
//!
//! DSA for a query `x` with predicted class `c`:
//!
//! ```text
//! t1    = nearest training trace predicted as c      (lowest row on ties)
//! num   = |at(x) - at(t1)|
//! denom = min |at(t1) - at(t2)| over t2 predicted != c
//! DSA   = num / denom
//! ```
//!
//! The denominator depends on `t1` only, so [`DsaIndex`] computes it for every
//! training row up front. Scoring then needs one nearest-neighbor search per
//! query, restricted to the query's class. [`dsa_scores_naive`] evaluates the
//! definition directly with explicit loops and serves as the reference.
//!
//! [`SurpriseAdequacy`] wraps both methods in a prepare/calculate lifecycle:
//! `prep` does all query-independent work (and can reuse it from a cache
//! directory), `calc` scores queries and is read-only.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{self, Entry, Kind, PayloadReader, PayloadWriter};
use crate::distance::{l2, RefBlock};
use crate::error::{Result, SaError};
use crate::kde::{fit_kde, KdeConfig, KdeModel};
use crate::trace::{Fingerprint, TraceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lsa,
    Dsa,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lsa => "lsa",
            Method::Dsa => "dsa",
        })
    }
}

impl FromStr for Method {
    type Err = SaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsa" => Ok(Method::Lsa),
            "dsa" => Ok(Method::Dsa),
            _ => Err(SaError::invalid(format!("unknown method {s:?}"))),
        }
    }
}

/// Per-query surprise values aligned with a query trace set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurpriseScores {
    pub values: Vec<f64>,
    pub method: Method,
    pub train_fingerprint: Fingerprint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFormat {
    /// `index,score` with a header line.
    Csv,
    /// One `{"index":..,"score":..}` object per line.
    JsonLines,
}

impl FromStr for ScoreFormat {
    type Err = SaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ScoreFormat::Csv),
            "jsonl" | "json" | "jsonlines" => Ok(ScoreFormat::JsonLines),
            _ => Err(SaError::invalid(format!("unknown score format {s:?}"))),
        }
    }
}

impl SurpriseScores {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Scores are printed with the shortest representation that round-trips,
    /// so equal scores always produce byte-identical files.
    pub fn write<W: Write + ?Sized>(&self, w: &mut W, format: ScoreFormat) -> std::io::Result<()> {
        match format {
            ScoreFormat::Csv => {
                writeln!(w, "index,score")?;
                for (i, v) in self.values.iter().enumerate() {
                    writeln!(w, "{i},{v:?}")?;
                }
            }
            ScoreFormat::JsonLines => {
                for (i, v) in self.values.iter().enumerate() {
                    writeln!(w, "{{\"index\":{i},\"score\":{v:?}}}")?;
                }
            }
        }
        Ok(())
    }
}

/// LSA: negated KDE log-density of each query.
pub fn lsa_scores(model: &KdeModel, queries: &TraceSet) -> Result<SurpriseScores> {
    let values = model
        .log_density(queries.traces())?
        .into_iter()
        .map(|lp| -lp)
        .collect();
    Ok(SurpriseScores {
        values,
        method: Method::Lsa,
        train_fingerprint: model.source(),
    })
}

fn check_query_dim(train: &TraceSet, queries: &TraceSet) -> Result<()> {
    if train.dim() != queries.dim() {
        return Err(SaError::QueryDimension {
            expected: train.dim(),
            found: queries.dim(),
        });
    }
    Ok(())
}

fn check_dsa_train(train: &TraceSet) -> Result<()> {
    let populated = train.populated_classes();
    if populated < 2 {
        return Err(SaError::TooFewClasses(populated));
    }
    Ok(())
}

/// DSA straight from the definition: for each query, a loop over the
/// training rows for `t1`, then a loop for the denominator. Single-threaded.
pub fn dsa_scores_naive(train: &TraceSet, queries: &TraceSet) -> Result<SurpriseScores> {
    check_dsa_train(train)?;
    check_query_dim(train, queries)?;
    let labels = train.labels();
    let mut values = Vec::with_capacity(queries.len());
    for qi in 0..queries.len() {
        let q = queries.row_slice(qi);
        let class = queries.labels()[qi];

        let mut t1: Option<(usize, f64)> = None;
        for (i, &l) in labels.iter().enumerate() {
            if l != class {
                continue;
            }
            let d = l2(q, train.row_slice(i));
            if t1.is_none_or(|(_, best)| d < best) {
                t1 = Some((i, d));
            }
        }
        let (t1, numerator) = t1.ok_or(SaError::MissingClass { query: qi, class })?;

        let t1_row = train.row_slice(t1);
        let mut denom: Option<(usize, f64)> = None;
        for (j, &l) in labels.iter().enumerate() {
            if l == labels[t1] {
                continue;
            }
            let d = l2(t1_row, train.row_slice(j));
            if denom.is_none_or(|(_, best)| d < best) {
                denom = Some((j, d));
            }
        }
        let (other, denominator) = denom.expect("at least two populated classes");
        if denominator == 0.0 {
            return Err(SaError::ZeroDenominator { row: t1, other });
        }
        values.push(numerator / denominator);
    }
    Ok(SurpriseScores {
        values,
        method: Method::Dsa,
        train_fingerprint: train.fingerprint(),
    })
}

/// Query-independent DSA state: per-class reference blocks and, for every
/// training row, its distance to the nearest row of another class.
#[derive(Debug, Clone)]
pub struct DsaIndex {
    fingerprint: Fingerprint,
    classes: Vec<RefBlock>,
    /// `(distance, row)` of the nearest other-class training row.
    denominators: Vec<(f64, usize)>,
}

const DENOM_BATCH: usize = 256;

impl DsaIndex {
    /// Builds the index, computing denominators on the ambient rayon pool.
    pub fn build(train: &TraceSet) -> Result<Self> {
        check_dsa_train(train)?;
        let all: Vec<usize> = (0..train.len()).collect();
        let everything = RefBlock::gather(train.traces(), &all);
        let labels = train.labels();
        let denominators = all
            .par_chunks(DENOM_BATCH)
            .flat_map_iter(|chunk| {
                let start = chunk[0];
                let rows = train
                    .traces()
                    .slice_move(ndarray::s![start..start + chunk.len(), ..]);
                everything
                    .nearest(rows, |qi, j| labels[start + qi] == labels[j])
                    .into_iter()
                    .map(|n| {
                        let n = n.expect("at least two populated classes");
                        (n.dist, n.index)
                    })
            })
            .collect();
        Ok(DsaIndex {
            fingerprint: train.fingerprint(),
            classes: Self::class_blocks(train),
            denominators,
        })
    }

    fn class_blocks(train: &TraceSet) -> Vec<RefBlock> {
        train
            .class_partition()
            .values()
            .map(|idx| RefBlock::gather(train.traces(), idx))
            .collect()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    /// Scores `queries` in batches of `batch_size` on the ambient rayon pool.
    /// Each query is computed independently, so the result does not depend on
    /// the batch size or thread count.
    pub fn score(&self, queries: &TraceSet, batch_size: usize) -> Result<SurpriseScores> {
        if batch_size == 0 {
            return Err(SaError::invalid("batch size must be positive"));
        }
        let starts: Vec<usize> = (0..queries.len()).step_by(batch_size).collect();
        let per_query: Vec<Result<f64>> = starts
            .par_iter()
            .flat_map_iter(|&start| {
                let end = (start + batch_size).min(queries.len());
                self.score_batch(queries, start, end)
            })
            .collect();
        let values = per_query.into_iter().collect::<Result<Vec<f64>>>()?;
        Ok(SurpriseScores {
            values,
            method: Method::Dsa,
            train_fingerprint: self.fingerprint,
        })
    }

    fn score_batch(&self, queries: &TraceSet, start: usize, end: usize) -> Vec<Result<f64>> {
        let mut out: Vec<Result<f64>> = (start..end)
            .map(|qi| {
                Err(SaError::MissingClass {
                    query: qi,
                    class: queries.labels()[qi],
                })
            })
            .collect();
        let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for qi in start..end {
            by_class.entry(queries.labels()[qi]).or_default().push(qi);
        }
        for (class, members) in by_class {
            let Some(block) = self.classes.get(class).filter(|b| !b.is_empty()) else {
                continue;
            };
            let rows = queries.traces().select(ndarray::Axis(0), &members);
            for (qi, nearest) in members.iter().zip(block.nearest(rows.view(), |_, _| false)) {
                let t1 = nearest.expect("non-empty class block");
                let (denominator, other) = self.denominators[t1.index];
                out[qi - start] = if denominator == 0.0 {
                    Err(SaError::ZeroDenominator {
                        row: t1.index,
                        other,
                    })
                } else {
                    Ok(t1.dist / denominator)
                };
            }
        }
        out
    }

    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let mut w = PayloadWriter::default();
        w.u64(self.fingerprint.0);
        for &(d, j) in &self.denominators {
            w.f64(d).u64(j as u64);
        }
        Entry {
            kind: Kind::Dsa,
            rows: self.denominators.len() as u64,
            cols: 2,
            payload: w.finish(),
        }
        .encode()
    }

    /// Decodes the denominator table of a cached index. The class blocks are
    /// rebuilt from `train`, whose fingerprint must match.
    pub fn from_cache_bytes(bytes: &[u8], train: &TraceSet) -> Result<Self> {
        let (fingerprint, denominators) =
            decode_dsa_table(bytes).map_err(|reason| SaError::CorruptCache {
                path: PathBuf::from("<dsa index>"),
                reason,
            })?;
        let actual = train.fingerprint();
        if fingerprint != actual {
            return Err(SaError::FingerprintMismatch {
                cached: fingerprint.to_string(),
                actual: actual.to_string(),
            });
        }
        if denominators.len() != train.len() || denominators.iter().any(|&(_, j)| j >= train.len())
        {
            return Err(SaError::CorruptCache {
                path: PathBuf::from("<dsa index>"),
                reason: "denominator table does not fit the training set".into(),
            });
        }
        Ok(DsaIndex {
            fingerprint,
            classes: Self::class_blocks(train),
            denominators,
        })
    }
}

/// Parses a `.dsa` cache file into `(fingerprint, [(denominator, row)])`.
pub fn decode_dsa_table(
    bytes: &[u8],
) -> std::result::Result<(Fingerprint, Vec<(f64, usize)>), String> {
    let e = Entry::decode(bytes, Kind::Dsa)?;
    let n = usize::try_from(e.rows).map_err(|_| "row count overflow")?;
    if e.cols != 2 || e.payload.len() != 8 + n.checked_mul(16).ok_or("row count overflow")? {
        return Err("malformed denominator table".into());
    }
    let mut r = PayloadReader::new(&e.payload);
    let fingerprint = Fingerprint(r.u64()?);
    let mut table = Vec::with_capacity(n);
    for _ in 0..n {
        let d = r.f64()?;
        let j = r.usize()?;
        if !(d >= 0.0 && d.is_finite()) {
            return Err(format!("invalid denominator {d}"));
        }
        table.push((d, j));
    }
    r.finish()?;
    Ok((fingerprint, table))
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Err(SaError::invalid("thread count must be positive"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SaError::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Batched, multi-threaded DSA. Identical output to [`dsa_scores_naive`].
pub fn dsa_scores(
    train: &TraceSet,
    queries: &TraceSet,
    batch_size: usize,
    threads: usize,
) -> Result<SurpriseScores> {
    check_dsa_train(train)?;
    check_query_dim(train, queries)?;
    with_threads(threads, || {
        DsaIndex::build(train).and_then(|idx| idx.score(queries, batch_size))
    })?
}

/// Configuration shared by both methods.
#[derive(Debug, Clone, PartialEq)]
pub struct SaConfig {
    pub kde: KdeConfig,
    pub batch_size: usize,
    pub threads: usize,
    /// Where prepared state is cached; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            kde: KdeConfig::default(),
            batch_size: 128,
            threads: rayon::current_num_threads(),
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Prepared {
    Lsa(KdeModel),
    Dsa(DsaIndex),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepReport {
    pub fingerprint: Fingerprint,
    pub cache_hit: bool,
}

/// Prepare once, calculate many times.
#[derive(Debug, Clone)]
pub struct SurpriseAdequacy {
    method: Method,
    train: TraceSet,
    config: SaConfig,
    prepared: Option<Prepared>,
}

impl SurpriseAdequacy {
    pub fn new(method: Method, train: TraceSet, config: SaConfig) -> Self {
        SurpriseAdequacy {
            method,
            train,
            config,
            prepared: None,
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn train(&self) -> &TraceSet {
        &self.train
    }

    pub fn is_prepared(&self) -> bool {
        self.prepared.is_some()
    }

    /// Cache file for this method, training set and configuration.
    pub fn cache_path(&self, dir: &Path) -> PathBuf {
        let fp = self.train.fingerprint();
        match self.method {
            Method::Lsa => {
                let cfg = serde_json::to_vec(&self.config.kde).expect("config serializes");
                let h = Sha256::digest(&cfg);
                dir.join(format!("lsa-{fp}-{}.kde", hex8(&h[..4])))
            }
            Method::Dsa => dir.join(format!("dsa-{fp}.dsa")),
        }
    }

    /// Fits the KDE (LSA) or builds the denominator index (DSA), loading it
    /// from the cache directory when an entry exists.
    pub fn prep(&mut self) -> Result<PrepReport> {
        let fingerprint = self.train.fingerprint();
        let cache_path = self.config.cache_dir.as_deref().map(|d| self.cache_path(d));
        if let Some(path) = &cache_path {
            match self.load_cached(path) {
                Ok(prepared) => {
                    self.prepared = Some(prepared);
                    return Ok(PrepReport {
                        fingerprint,
                        cache_hit: true,
                    });
                }
                Err(SaError::CacheMiss(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let train = &self.train;
        let kde = self.config.kde;
        let method = self.method;
        let prepared = with_threads(self.config.threads, || match method {
            Method::Lsa => fit_kde(train, &kde).map(Prepared::Lsa),
            Method::Dsa => DsaIndex::build(train).map(Prepared::Dsa),
        })??;
        if let Some(path) = &cache_path {
            let bytes = match &prepared {
                Prepared::Lsa(m) => m.to_cache_bytes(),
                Prepared::Dsa(idx) => idx.to_cache_bytes(),
            };
            cache::write_file(path, &bytes)?;
        }
        self.prepared = Some(prepared);
        Ok(PrepReport {
            fingerprint,
            cache_hit: false,
        })
    }

    fn load_cached(&self, path: &Path) -> Result<Prepared> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(SaError::CacheMiss(path.display().to_string()))
            }
            Err(e) => return Err(SaError::io(path, e)),
        };
        let corrupt = |reason: String| SaError::CorruptCache {
            path: path.to_path_buf(),
            reason,
        };
        match self.method {
            Method::Lsa => {
                let model = KdeModel::from_cache_bytes(&bytes).map_err(corrupt)?;
                let actual = self.train.fingerprint();
                if model.source() != actual {
                    return Err(SaError::FingerprintMismatch {
                        cached: model.source().to_string(),
                        actual: actual.to_string(),
                    });
                }
                Ok(Prepared::Lsa(model))
            }
            Method::Dsa => match DsaIndex::from_cache_bytes(&bytes, &self.train) {
                Err(SaError::CorruptCache { reason, .. }) => Err(corrupt(reason)),
                other => other.map(Prepared::Dsa),
            },
        }
    }

    /// Scores `queries`. Read-only; fails with [`SaError::NotPrepared`] before
    /// [`SurpriseAdequacy::prep`].
    pub fn calc(&self, queries: &TraceSet) -> Result<SurpriseScores> {
        let prepared = self.prepared.as_ref().ok_or(SaError::NotPrepared)?;
        check_query_dim(&self.train, queries)?;
        let batch = self.config.batch_size;
        with_threads(self.config.threads, || match prepared {
            Prepared::Lsa(model) => lsa_scores(model, queries),
            Prepared::Dsa(idx) => idx.score(queries, batch),
        })?
    }

    /// The fitted KDE, when prepared for LSA.
    pub fn kde_model(&self) -> Option<&KdeModel> {
        match &self.prepared {
            Some(Prepared::Lsa(m)) => Some(m),
            _ => None,
        }
    }
}

fn hex8(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Scores `queries` against `train` in one call (prep + calc, no cache).
pub fn score(
    method: Method,
    train: &TraceSet,
    queries: &TraceSet,
    config: &SaConfig,
) -> Result<SurpriseScores> {
    let mut sa = SurpriseAdequacy::new(
        method,
        train.clone(),
        SaConfig {
            cache_dir: None,
            ..config.clone()
        },
    );
    sa.prep()?;
    sa.calc(queries)
}
