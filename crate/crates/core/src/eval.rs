//! Out-of-distribution detection quality and replica statistics.
//!
//! [`auc_roc`] treats a higher surprise as "more likely an outlier" and
//! returns the Mann-Whitney statistic with half credit for ties.
//! [`instability`] summarizes AUC-ROCs across replicas with the columns
//! mean / std (population) / median / min / max / range.
//!
//! Replicas come from [`ReplicaSource`]: either one fixed dataset (only the
//! sampling seed changes between replicas) or a synthetic cluster
//! specification re-drawn with a new seed per replica.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaError};
use crate::kde::{fit_kde, BandwidthRule};
use crate::sampling::SamplingSpec;
use crate::surprise::{self, lsa_scores, Method, SaConfig, SurpriseScores};
use crate::trace::{Strategy, TraceSet};

/// AUC-ROC of separating `outlier` from `nominal` scores.
pub fn auc_roc(nominal: &SurpriseScores, outlier: &SurpriseScores) -> Result<f64> {
    if nominal.method != outlier.method {
        return Err(SaError::invalid(format!(
            "cannot compare {} scores with {} scores",
            nominal.method, outlier.method
        )));
    }
    auc_from_values(&nominal.values, &outlier.values)
}

/// AUC-ROC over raw score vectors: the fraction of (nominal, outlier) pairs
/// where the outlier scores higher, ties counting one half.
pub fn auc_from_values(nominal: &[f64], outlier: &[f64]) -> Result<f64> {
    if nominal.is_empty() || outlier.is_empty() {
        return Err(SaError::invalid(
            "AUC-ROC needs non-empty nominal and outlier scores",
        ));
    }
    if nominal.iter().chain(outlier).any(|v| v.is_nan()) {
        return Err(SaError::invalid("AUC-ROC scores contain NaN"));
    }
    let mut sorted = nominal.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Twice the Mann-Whitney U, so that ties stay integral.
    let mut doubled: u128 = 0;
    for &o in outlier {
        let below = sorted.partition_point(|&n| n < o);
        let not_above = sorted.partition_point(|&n| n <= o);
        doubled += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = nominal.len() as u128 * outlier.len() as u128;
    Ok(doubled as f64 / (2 * pairs) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// `max - min`.
    pub range: f64,
}

/// Mean, population std, median (midpoint of the middle pair on even
/// lengths), min, max and range of at least two values.
pub fn instability(values: &[f64]) -> Result<ReplicaStats> {
    if values.len() < 2 {
        return Err(SaError::invalid(format!(
            "instability needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SaError::invalid("instability values must be finite"));
    }
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    Ok(ReplicaStats {
        count: values.len(),
        // Rounding can push the mean a hair outside [min, max] on
        // near-constant inputs.
        mean: mean.clamp(min, max),
        std: var.sqrt(),
        median,
        min,
        max,
        range: max - min,
    })
}

/// One Gaussian blob of the synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub mean: Vec<f64>,
    /// Isotropic standard deviation.
    pub std: f64,
    /// Class label of points drawn from this cluster; defaults to the
    /// cluster's position in the list.
    #[serde(default)]
    pub class: Option<usize>,
    pub train: usize,
    pub nominal: usize,
    pub outliers: usize,
}

/// Synthetic stand-in for a (train, nominal test, outlier test) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub clusters: Vec<Cluster>,
    /// Length of the random displacement applied to every outlier.
    pub outlier_shift: f64,
}

impl ClusterSpec {
    /// `classes * clusters_per_class` clusters with means drawn uniformly
    /// from `[-spread, spread]^dim` (fixed by `layout_seed`), sizes split as
    /// evenly as possible.
    #[allow(clippy::too_many_arguments)]
    pub fn random_layout(
        classes: usize,
        clusters_per_class: usize,
        dim: usize,
        spread: f64,
        std: f64,
        (train, nominal, outliers): (usize, usize, usize),
        outlier_shift: f64,
        layout_seed: u64,
    ) -> Self {
        let k = classes * clusters_per_class;
        let share = |total: usize, i: usize| total / k + usize::from(i < total % k);
        let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
        let clusters = (0..k)
            .map(|i| Cluster {
                mean: (0..dim)
                    .map(|_| rng.random_range(-spread..=spread))
                    .collect(),
                std,
                class: Some(i % classes),
                train: share(train, i),
                nominal: share(nominal, i),
                outliers: share(outliers, i),
            })
            .collect();
        ClusterSpec {
            clusters,
            outlier_shift,
        }
    }

    /// `classes * clusters_per_class` clusters with means on the points of a
    /// regular grid with the given `spacing`, filled in row-major order.
    /// Cluster `i` belongs to class `i % classes`, so a class's clusters are
    /// not adjacent on the grid.
    #[allow(clippy::too_many_arguments)]
    pub fn lattice(
        classes: usize,
        clusters_per_class: usize,
        dim: usize,
        spacing: f64,
        std: f64,
        (train, nominal, outliers): (usize, usize, usize),
        outlier_shift: f64,
    ) -> Self {
        let k = classes * clusters_per_class;
        let mut side = 1usize;
        while side.checked_pow(dim as u32).is_some_and(|p| p < k) {
            side += 1;
        }
        let share = |total: usize, i: usize| total / k + usize::from(i < total % k);
        let clusters = (0..k)
            .map(|i| {
                let mut rest = i;
                let mean = (0..dim)
                    .map(|_| {
                        let digit = rest % side;
                        rest /= side;
                        digit as f64 * spacing
                    })
                    .collect();
                Cluster {
                    mean,
                    std,
                    class: Some(i % classes),
                    train: share(train, i),
                    nominal: share(nominal, i),
                    outliers: share(outliers, i),
                }
            })
            .collect();
        ClusterSpec {
            clusters,
            outlier_shift,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ClusterSpec =
            serde_json::from_str(s).map_err(|e| SaError::Parse(format!("cluster spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.mean.len())
    }

    fn class_of(&self, i: usize) -> usize {
        self.clusters[i].class.unwrap_or(i)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SaError::invalid(m));
        if self.clusters.len() < 2 {
            return bad(format!(
                "need at least 2 clusters, got {}",
                self.clusters.len()
            ));
        }
        let mut classes: Vec<usize> = (0..self.clusters.len()).map(|i| self.class_of(i)).collect();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return bad("clusters must cover at least 2 classes".into());
        }
        let dim = self.dim();
        if dim == 0 {
            return bad("cluster means must be non-empty".into());
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.mean.len() != dim || c.mean.iter().any(|v| !v.is_finite()) {
                return bad(format!("cluster {i}: mean must be {dim} finite values"));
            }
            if !(c.std >= 0.0 && c.std.is_finite()) {
                return bad(format!("cluster {i}: std must be finite and >= 0"));
            }
        }
        if !(self.outlier_shift >= 0.0 && self.outlier_shift.is_finite()) {
            return bad("outlier_shift must be finite and >= 0".into());
        }
        let total = |f: fn(&Cluster) -> usize| self.clusters.iter().map(f).sum::<usize>();
        if total(|c| c.train) == 0 || total(|c| c.nominal) == 0 || total(|c| c.outliers) == 0 {
            return bad("train, nominal and outlier counts must each total at least 1".into());
        }
        Ok(())
    }

    fn nearest_class(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, c) in self.clusters.iter().enumerate() {
            let d = crate::distance::sq_l2(x, &c.mean);
            if d < best.0 {
                best = (d, i);
            }
        }
        self.class_of(best.1)
    }
}

/// Training, nominal and outlier trace sets for one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: TraceSet,
    pub nominal: TraceSet,
    pub outliers: TraceSet,
}

fn gaussian_point(rng: &mut ChaCha8Rng, c: &Cluster) -> Vec<f64> {
    c.mean
        .iter()
        .map(|m| m + c.std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draws a dataset. Train and nominal points carry their cluster's class;
/// outliers are cluster draws moved by `outlier_shift` in a uniformly random
/// direction and labelled with the class of the nearest cluster mean. Train
/// rows are shuffled. Deterministic in `seed`.
pub fn synth_dataset(spec: &ClusterSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = (0..spec.clusters.len())
        .map(|i| spec.class_of(i))
        .max()
        .unwrap()
        + 1;
    let mut draw = |count: fn(&Cluster) -> usize, shift: f64| {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, c) in spec.clusters.iter().enumerate() {
            for _ in 0..count(c) {
                let mut x = gaussian_point(&mut rng, c);
                if shift > 0.0 {
                    let dir: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = dir
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt()
                        .max(f64::MIN_POSITIVE);
                    for (v, u) in x.iter_mut().zip(&dir) {
                        *v += shift * u / norm;
                    }
                    labels.push(spec.nearest_class(&x));
                } else {
                    labels.push(spec.class_of(i));
                }
                rows.push(x);
            }
        }
        (rows, labels)
    };
    let (mut train_rows, mut train_labels) = draw(|c| c.train, 0.0);
    let (nominal_rows, nominal_labels) = draw(|c| c.nominal, 0.0);
    let (outlier_rows, outlier_labels) = draw(|c| c.outliers, spec.outlier_shift);

    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    train_rows = order.iter().map(|&i| train_rows[i].clone()).collect();
    train_labels = order.iter().map(|&i| train_labels[i]).collect();

    let set = |rows: Vec<Vec<f64>>, labels: Vec<usize>, name: &str| {
        TraceSet::from_rows(&rows, labels, Some(num_classes), name)
    };
    Ok(Dataset {
        train: set(train_rows, train_labels, "synth-train")?,
        nominal: set(nominal_rows, nominal_labels, "synth-nominal")?,
        outliers: set(outlier_rows, outlier_labels, "synth-outliers")?,
    })
}

/// Where each replica's data comes from.
#[derive(Debug, Clone)]
pub enum ReplicaSource {
    /// The same data for every replica; only sampling seeds change.
    Fixed { data: Dataset, seed: u64 },
    /// A fresh draw per replica with seed `base_seed + replica`.
    Synthetic { spec: ClusterSpec, base_seed: u64 },
}

impl ReplicaSource {
    pub fn dataset(&self, replica: usize) -> Result<std::borrow::Cow<'_, Dataset>> {
        match self {
            ReplicaSource::Fixed { data, .. } => Ok(std::borrow::Cow::Borrowed(data)),
            ReplicaSource::Synthetic { spec, base_seed } => Ok(std::borrow::Cow::Owned(
                synth_dataset(spec, base_seed.wrapping_add(replica as u64))?,
            )),
        }
    }

    fn sampling_seed(&self, replica: usize) -> u64 {
        let base = match self {
            ReplicaSource::Fixed { seed, .. } => *seed,
            ReplicaSource::Synthetic { base_seed, .. } => *base_seed,
        };
        base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(replica as u64)
    }
}

/// The sampling family swept by [`sweep_sampling`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStrategy {
    Uniform,
    Unsurprising,
    /// Epsilon searched per ratio.
    NeighborFree,
}

impl SweepStrategy {
    fn spec(self, ratio: f64) -> SamplingSpec {
        match self {
            SweepStrategy::Uniform => SamplingSpec::Uniform(ratio),
            SweepStrategy::Unsurprising => SamplingSpec::Unsurprising(ratio),
            SweepStrategy::NeighborFree => SamplingSpec::NeighborFreeRatio(ratio),
        }
    }

    fn strategy(self) -> Strategy {
        match self {
            SweepStrategy::Uniform => Strategy::Uniform,
            SweepStrategy::Unsurprising => Strategy::UnsurprisingFirst,
            SweepStrategy::NeighborFree => Strategy::NeighborFree,
        }
    }
}

impl std::str::FromStr for SweepStrategy {
    type Err = SaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(SweepStrategy::Uniform),
            "unsurprising" => Ok(SweepStrategy::Unsurprising),
            "neighborfree" => Ok(SweepStrategy::NeighborFree),
            _ => Err(SaError::invalid(format!("unknown sampling strategy {s:?}"))),
        }
    }
}

/// One (method, strategy, parameter) cell across replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub strategy: Strategy,
    /// Sampling ratio or KDE bandwidth; `None` for the bandwidth-rule cell.
    pub parameter: Option<f64>,
    pub label: String,
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    /// `None` with a single replica: the spread is undefined, not zero.
    pub stats: Option<ReplicaStats>,
    pub mean_achieved_ratio: f64,
}

impl Cell {
    fn new(
        method: Method,
        strategy: Strategy,
        parameter: Option<f64>,
        label: String,
        aucs: Vec<f64>,
        ratios: &[f64],
    ) -> Result<Self> {
        let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
        let stats = if aucs.len() >= 2 {
            Some(instability(&aucs)?)
        } else {
            None
        };
        Ok(Cell {
            method,
            strategy,
            parameter,
            label,
            mean_auc,
            stats,
            mean_achieved_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
            aucs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub method: Method,
    pub strategy: Strategy,
    /// `"ratio"` or `"bandwidth"`.
    pub axis: String,
    /// `(parameter, mean AUC-ROC)` in ascending parameter order.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<Cell>,
    pub sweeps: Vec<Sweep>,
}

fn check_sorted_positive(values: &[f64], what: &str, upper: Option<f64>) -> Result<()> {
    if values.is_empty() {
        return Err(SaError::invalid(format!("no {what} values given")));
    }
    for &v in values {
        let in_range = v > 0.0 && v.is_finite() && upper.is_none_or(|u| v <= u);
        if !in_range {
            return Err(match upper {
                Some(u) => SaError::invalid(format!("{what} {v} outside (0, {u}]")),
                None => SaError::InvalidBandwidth(v),
            });
        }
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SaError::invalid(format!(
            "{what} values must be strictly ascending"
        )));
    }
    Ok(())
}

/// Mean AUC-ROC per sampling ratio. A ratio of 1.0 is always included as the
/// unsampled baseline. LSA with a non-uniform strategy is allowed here (it is
/// the CLI that guards that pairing).
pub fn sweep_sampling(
    source: &ReplicaSource,
    method: Method,
    strategy: SweepStrategy,
    ratios: &[f64],
    replicas: usize,
    config: &SaConfig,
) -> Result<EvalReport> {
    check_sorted_positive(ratios, "ratio", Some(1.0))?;
    if replicas == 0 {
        return Err(SaError::invalid("replicas must be >= 1"));
    }
    let mut ratios = ratios.to_vec();
    if ratios.last() != Some(&1.0) {
        ratios.push(1.0);
    }
    let mut aucs = vec![Vec::with_capacity(replicas); ratios.len()];
    let mut achieved = vec![Vec::with_capacity(replicas); ratios.len()];
    for r in 0..replicas {
        let data = source.dataset(r)?;
        let seed = source.sampling_seed(r);
        for (k, &ratio) in ratios.iter().enumerate() {
            let (auc, got) = if ratio == 1.0 {
                (score_auc(method, &data.train, &data, config)?, 1.0)
            } else {
                let sel = strategy
                    .spec(ratio)
                    .select(&data.train, seed, &config.kde, false)?;
                let sub = data.train.restrict(&sel)?;
                (score_auc(method, &sub, &data, config)?, sel.achieved_ratio)
            };
            aucs[k].push(auc);
            achieved[k].push(got);
        }
    }
    let strategy_tag = strategy.strategy();
    let mut cells = Vec::with_capacity(ratios.len());
    for (k, &ratio) in ratios.iter().enumerate() {
        let tag = if ratio == 1.0 {
            Strategy::Full
        } else {
            strategy_tag
        };
        cells.push(Cell::new(
            method,
            tag,
            Some(ratio),
            format!("{ratio}"),
            std::mem::take(&mut aucs[k]),
            &achieved[k],
        )?);
    }
    let points = cells
        .iter()
        .map(|c| (c.parameter.unwrap(), c.mean_auc))
        .collect();
    Ok(EvalReport {
        cells,
        sweeps: vec![Sweep {
            method,
            strategy: strategy_tag,
            axis: "ratio".into(),
            points,
        }],
    })
}

fn score_auc(method: Method, train: &TraceSet, data: &Dataset, config: &SaConfig) -> Result<f64> {
    let mut sa = surprise::SurpriseAdequacy::new(
        method,
        train.clone(),
        SaConfig {
            cache_dir: None,
            ..config.clone()
        },
    );
    sa.prep()?;
    auc_roc(&sa.calc(&data.nominal)?, &sa.calc(&data.outliers)?)
}

/// LSA AUC-ROC per fixed KDE bandwidth, plus a cell for the configured rule
/// (Scott by default) labelled with the rule's name.
pub fn sweep_bandwidth(
    source: &ReplicaSource,
    bandwidths: &[f64],
    replicas: usize,
    config: &SaConfig,
) -> Result<EvalReport> {
    check_sorted_positive(bandwidths, "bandwidth", None)?;
    if replicas == 0 {
        return Err(SaError::invalid("replicas must be >= 1"));
    }
    let rule = match config.kde.rule {
        BandwidthRule::Fixed(_) => BandwidthRule::Scott,
        r => r,
    };
    let kde_cfg = crate::kde::KdeConfig { rule, ..config.kde };
    let mut fixed = vec![Vec::with_capacity(replicas); bandwidths.len()];
    let mut rule_aucs = Vec::with_capacity(replicas);
    let mut rule_h = Vec::with_capacity(replicas);
    for r in 0..replicas {
        let data = source.dataset(r)?;
        let base = fit_kde(&data.train, &kde_cfg)?;
        let eval = |model: &crate::kde::KdeModel| -> Result<f64> {
            surprise::with_threads(config.threads, || {
                let nominal = lsa_scores(model, &data.nominal)?;
                let outliers = lsa_scores(model, &data.outliers)?;
                auc_roc(&nominal, &outliers)
            })?
        };
        rule_aucs.push(eval(&base)?);
        rule_h.push(base.bandwidth());
        for (k, &h) in bandwidths.iter().enumerate() {
            fixed[k].push(eval(&base.clone().with_bandwidth(h)?)?);
        }
    }
    let mut cells = Vec::with_capacity(bandwidths.len() + 1);
    for (k, &h) in bandwidths.iter().enumerate() {
        cells.push(Cell::new(
            Method::Lsa,
            Strategy::Full,
            Some(h),
            format!("{h}"),
            std::mem::take(&mut fixed[k]),
            &[1.0],
        )?);
    }
    let points = cells
        .iter()
        .map(|c| (c.parameter.unwrap(), c.mean_auc))
        .collect();
    let mean_h = rule_h.iter().sum::<f64>() / rule_h.len() as f64;
    cells.push(Cell::new(
        Method::Lsa,
        Strategy::Full,
        None,
        format!("{rule} (h~{mean_h:.4})"),
        rule_aucs,
        &[1.0],
    )?);
    Ok(EvalReport {
        cells,
        sweeps: vec![Sweep {
            method: Method::Lsa,
            strategy: Strategy::Full,
            axis: "bandwidth".into(),
            points,
        }],
    })
}

impl EvalReport {
    pub fn merge(&mut self, other: EvalReport) {
        self.cells.extend(other.cells);
        self.sweeps.extend(other.sweeps);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per cell with the replica-statistics columns; `NA` marks
    /// statistics that are undefined for a single replica.
    pub fn write_csv<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "method,strategy,parameter,replicas,mean,std,median,min,max,range,achieved_ratio"
        )?;
        for c in &self.cells {
            let param = c
                .parameter
                .map_or_else(|| c.label.clone(), |p| format!("{p}"));
            let stats = match &c.stats {
                Some(s) => format!(
                    "{},{},{},{},{},{}",
                    s.mean, s.std, s.median, s.min, s.max, s.range
                ),
                None => format!("{},NA,NA,NA,NA,NA", c.mean_auc),
            };
            writeln!(
                w,
                "{},{},\"{}\",{},{},{}",
                c.method,
                c.strategy,
                param,
                c.aucs.len(),
                stats,
                c.mean_achieved_ratio
            )?;
        }
        Ok(())
    }

    /// gnuplot data: one indexed block per sweep, columns `parameter mean_auc`.
    pub fn write_gnuplot<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        for (i, s) in self.sweeps.iter().enumerate() {
            if i > 0 {
                writeln!(w, "\n")?;
            }
            writeln!(w, "# {} {} vs {}", s.method, s.strategy, s.axis)?;
            for (p, auc) in &s.points {
                writeln!(w, "{p} {auc}")?;
            }
        }
        Ok(())
    }
}
