//! Gaussian kernel density estimation with an isotropic scalar bandwidth.
//!
//! Fitting drops near-constant dimensions, optionally standardizes the rest
//! with the training mean and standard deviation, and picks the bandwidth
//! with Scott's or Silverman's rule. The density of a query `q` is
//!
//! ```text
//! log p(q) = logsumexp_i( -|z(q) - r_i|^2 / (2 h^2) ) - log_norm - log_jacobian
//! log_norm = ln n + d ln h + (d / 2) ln(2 pi)
//! ```
//!
//! where `z` applies the dimension mask and standardization, and
//! `log_jacobian` is the sum of the log standard deviations (zero when
//! standardization is off) so that the result is a density over the masked
//! original coordinates.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{Entry, Kind, PayloadReader, PayloadWriter};
use crate::distance::sq_l2;
use crate::error::{Result, SaError};
use crate::trace::{Fingerprint, TraceSet};

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    #[default]
    Scott,
    Silverman,
    Fixed(f64),
}

impl BandwidthRule {
    /// Bandwidth for `n` reference points in `d` dimensions.
    pub fn bandwidth(self, n: usize, d: usize) -> f64 {
        let n = n as f64;
        let d = d as f64;
        match self {
            BandwidthRule::Scott => n.powf(-1.0 / (d + 4.0)),
            BandwidthRule::Silverman => (n * (d + 2.0) / 4.0).powf(-1.0 / (d + 4.0)),
            BandwidthRule::Fixed(h) => h,
        }
    }
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthRule::Scott => f.write_str("scott"),
            BandwidthRule::Silverman => f.write_str("silverman"),
            BandwidthRule::Fixed(h) => write!(f, "{h}"),
        }
    }
}

impl FromStr for BandwidthRule {
    type Err = SaError;

    /// `scott`, `silverman`, or a positive number for a fixed bandwidth.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scott" => Ok(BandwidthRule::Scott),
            "silverman" => Ok(BandwidthRule::Silverman),
            other => {
                let h: f64 = other
                    .parse()
                    .map_err(|_| SaError::invalid(format!("unknown bandwidth rule {s:?}")))?;
                if h > 0.0 && h.is_finite() {
                    Ok(BandwidthRule::Fixed(h))
                } else {
                    Err(SaError::InvalidBandwidth(h))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    pub rule: BandwidthRule,
    pub variance_threshold: f64,
    pub standardize: bool,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            rule: BandwidthRule::Scott,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            standardize: true,
        }
    }
}

/// A fitted estimator. Immutable; scoring is read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    reference: Array2<f64>,
    bandwidth: f64,
    dim_mask: Vec<bool>,
    shift: Vec<f64>,
    scale: Vec<f64>,
    log_norm: f64,
    log_jacobian: f64,
    source: Fingerprint,
}

pub fn log_norm(n: usize, d: usize, h: f64) -> f64 {
    (n as f64).ln() + d as f64 * h.ln() + 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Sample variance (n - 1 denominator); zero for a single row.
fn column_stats(x: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mean: Vec<f64> = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let var = x
        .axis_iter(Axis(1))
        .zip(&mean)
        .map(|(col, &m)| {
            if x.nrows() < 2 {
                0.0
            } else {
                col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
            }
        })
        .collect();
    (mean, var)
}

/// Fits a KDE on every row of `train`.
pub fn fit_kde(train: &TraceSet, cfg: &KdeConfig) -> Result<KdeModel> {
    fit_rows(train.traces(), cfg, train.fingerprint())
}

pub(crate) fn fit_rows(
    x: ArrayView2<'_, f64>,
    cfg: &KdeConfig,
    source: Fingerprint,
) -> Result<KdeModel> {
    if let BandwidthRule::Fixed(h) = cfg.rule {
        if !(h > 0.0 && h.is_finite()) {
            return Err(SaError::InvalidBandwidth(h));
        }
    }
    if x.nrows() == 0 {
        return Err(SaError::Empty);
    }
    let (mean, var) = column_stats(x);
    let dim_mask: Vec<bool> = var.iter().map(|&v| v > cfg.variance_threshold).collect();
    let kept: Vec<usize> = (0..dim_mask.len()).filter(|&j| dim_mask[j]).collect();
    if kept.is_empty() {
        return Err(SaError::NoInformativeDimensions {
            threshold: cfg.variance_threshold,
        });
    }
    let (shift, scale): (Vec<f64>, Vec<f64>) = if cfg.standardize {
        kept.iter().map(|&j| (mean[j], var[j].sqrt())).unzip()
    } else {
        kept.iter().map(|_| (0.0, 1.0)).unzip()
    };
    let mut reference = x.select(Axis(1), &kept);
    for mut row in reference.rows_mut() {
        for ((v, m), s) in row.iter_mut().zip(&shift).zip(&scale) {
            *v = (*v - m) / s;
        }
    }
    let reference = reference.as_standard_layout().into_owned();
    let n = reference.nrows();
    let d = kept.len();
    let bandwidth = cfg.rule.bandwidth(n, d);
    Ok(KdeModel {
        log_norm: log_norm(n, d, bandwidth),
        log_jacobian: scale.iter().map(|s| s.ln()).sum(),
        reference,
        bandwidth,
        dim_mask,
        shift,
        scale,
        source,
    })
}

impl KdeModel {
    /// A model over `reference` used as-is: every dimension kept, no
    /// standardization.
    pub fn from_reference(reference: Array2<f64>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(SaError::InvalidBandwidth(bandwidth));
        }
        let (n, d) = reference.dim();
        if n == 0 || d == 0 {
            return Err(SaError::Empty);
        }
        if reference.iter().any(|v| !v.is_finite()) {
            return Err(SaError::invalid("reference contains non-finite values"));
        }
        Ok(KdeModel {
            reference: reference.as_standard_layout().into_owned(),
            bandwidth,
            dim_mask: vec![true; d],
            shift: vec![0.0; d],
            scale: vec![1.0; d],
            log_norm: log_norm(n, d, bandwidth),
            log_jacobian: 0.0,
            source: Fingerprint(0),
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Reference rows in the model's (masked, standardized) coordinates.
    pub fn reference(&self) -> ArrayView2<'_, f64> {
        self.reference.view()
    }

    pub fn dim_mask(&self) -> &[bool] {
        &self.dim_mask
    }

    pub fn input_dim(&self) -> usize {
        self.dim_mask.len()
    }

    pub fn kept_dim(&self) -> usize {
        self.reference.ncols()
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn source(&self) -> Fingerprint {
        self.source
    }

    /// Same model with a different bandwidth.
    pub fn with_bandwidth(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(SaError::InvalidBandwidth(h));
        }
        self.bandwidth = h;
        self.log_norm = log_norm(self.reference.nrows(), self.kept_dim(), h);
        Ok(self)
    }

    fn project(&self, q: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let kept = q
            .iter()
            .zip(&self.dim_mask)
            .filter(|(_, &k)| k)
            .map(|(v, _)| *v);
        out.extend(
            kept.zip(&self.shift)
                .zip(&self.scale)
                .map(|((v, m), s)| (v - m) / s),
        );
    }

    fn log_density_one(&self, q: &[f64], z: &mut Vec<f64>, terms: &mut Vec<f64>) -> f64 {
        self.project(q, z);
        let inv = -0.5 / (self.bandwidth * self.bandwidth);
        terms.clear();
        terms.extend(
            self.reference
                .rows()
                .into_iter()
                .map(|r| inv * sq_l2(z, r.as_slice().expect("reference is contiguous"))),
        );
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        max + sum.ln() - self.log_norm - self.log_jacobian
    }

    /// Log-density of each query row. Queries use the original
    /// dimensionality; masked-out columns are ignored. Rows are scored
    /// independently (in parallel on the ambient rayon pool).
    pub fn log_density(&self, queries: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if queries.ncols() != self.input_dim() {
            return Err(SaError::QueryDimension {
                expected: self.input_dim(),
                found: queries.ncols(),
            });
        }
        let queries = queries.as_standard_layout();
        let d = queries.ncols();
        let flat = queries.as_slice().expect("standard layout");
        Ok(flat
            .par_chunks(d)
            .map_init(
                || (Vec::new(), Vec::new()),
                |(z, terms), q| self.log_density_one(q, z, terms),
            )
            .collect())
    }

    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let mut w = PayloadWriter::default();
        w.u64(self.source.0)
            .u64(self.input_dim() as u64)
            .f64(self.bandwidth)
            .f64(self.log_jacobian)
            .bytes(&self.dim_mask.iter().map(|&b| b as u8).collect::<Vec<_>>())
            .f64s(self.shift.iter().copied())
            .f64s(self.scale.iter().copied())
            .f64s(self.reference.iter().copied());
        Entry {
            kind: Kind::Kde,
            rows: self.reference.nrows() as u64,
            cols: self.kept_dim() as u64,
            payload: w.finish(),
        }
        .encode()
    }

    /// Inverse of [`KdeModel::to_cache_bytes`], re-validating every invariant.
    pub fn from_cache_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let e = Entry::decode(bytes, Kind::Kde)?;
        let n = usize::try_from(e.rows).map_err(|_| "row count overflow")?;
        let d = usize::try_from(e.cols).map_err(|_| "column count overflow")?;
        let mut r = PayloadReader::new(&e.payload);
        let source = Fingerprint(r.u64()?);
        let input_dim = r.usize()?;
        let bandwidth = r.f64()?;
        let log_jacobian = r.f64()?;
        let dim_mask: Vec<bool> = r
            .bytes(input_dim)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(format!("bad mask byte {b}")),
            })
            .collect::<std::result::Result<_, _>>()?;
        let shift = r.f64s(d)?;
        let scale = r.f64s(d)?;
        let reference = r.f64s(n.checked_mul(d).ok_or("shape overflow")?)?;
        r.finish()?;
        if n == 0 || d == 0 || dim_mask.iter().filter(|&&k| k).count() != d {
            return Err("inconsistent model shape".into());
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) || !log_jacobian.is_finite() {
            return Err("invalid bandwidth".into());
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0))
            || shift.iter().chain(&reference).any(|v| !v.is_finite())
        {
            return Err("non-finite model parameters".into());
        }
        Ok(KdeModel {
            reference: Array2::from_shape_vec((n, d), reference).map_err(|e| e.to_string())?,
            log_norm: log_norm(n, d, bandwidth),
            bandwidth,
            dim_mask,
            shift,
            scale,
            log_jacobian,
            source,
        })
    }
}
