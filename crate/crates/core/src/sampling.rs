//! Training-set reduction ahead of surprise scoring.
//!
//! Three strategies produce a [`SampleSelection`] of the training rows:
//!
//! * uniform: `max(1, floor(s * N))` rows drawn without replacement;
//! * unsurprising-first: per class, the `floor(s * |T_c|)` members with the
//!   lowest LSA under a KDE fitted on that class;
//! * neighbor-free: a greedy pass per class that keeps a trace and discards
//!   every remaining same-class trace closer than `epsilon` to it.
//!
//! Ratio-based strategies keep at least one row of every non-empty class.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distance::l2;
use crate::error::{Result, SaError};
use crate::kde::{self, KdeConfig};
use crate::trace::{SampleSelection, Strategy, TraceSet};

/// Number of probes [`epsilon_for_ratio`] uses when the caller has no opinion.
pub const DEFAULT_EPSILON_PROBES: usize = 20;

/// Above this many same-class pairs the epsilon search range comes from a
/// random sample of pairs instead of all of them.
const EXACT_PAIR_LIMIT: usize = 4_000_000;
const SAMPLED_PAIRS: usize = 20_000;

fn check_ratio(s: f64) -> Result<()> {
    if s > 0.0 && s <= 1.0 {
        Ok(())
    } else {
        Err(SaError::invalid(format!(
            "sampling ratio must be in (0, 1], got {s}"
        )))
    }
}

fn take_count(s: f64, n: usize) -> usize {
    ((s * n as f64).floor() as usize).clamp(1, n)
}

/// Uniform sampling without replacement, driven by `seed`.
pub fn sample_uniform(train: &TraceSet, s: f64, seed: u64) -> Result<SampleSelection> {
    check_ratio(s)?;
    let n = train.len();
    let k = take_count(s, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, n, k).into_vec();
    SampleSelection::new(indices, Strategy::Uniform, Some(s), seed, n)
}

/// Which density ranks training rows in unsurprising-first sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conditioning {
    /// One KDE per class, fitted on that class's rows.
    #[default]
    PerClass,
    /// One KDE over the whole training set.
    Global,
}

/// Keeps, per class, the least surprising `floor(s * |T_c|)` rows (at least
/// one). Classes that keep every row are not fitted at all.
pub fn sample_unsurprising_first(
    train: &TraceSet,
    s: f64,
    kde_cfg: &KdeConfig,
    conditioning: Conditioning,
) -> Result<SampleSelection> {
    check_ratio(s)?;
    let partition = train.class_partition();
    let global = match conditioning {
        Conditioning::Global if s < 1.0 => Some(kde::fit_kde(train, kde_cfg)?),
        _ => None,
    };
    let mut chosen = Vec::new();
    for (&class, members) in &partition {
        if members.is_empty() {
            continue;
        }
        let k = take_count(s, members.len());
        if k == members.len() {
            chosen.extend_from_slice(members);
            continue;
        }
        let rows = train.traces().select(ndarray::Axis(0), members);
        let log_density = match &global {
            Some(model) => model.log_density(rows.view())?,
            None => kde::fit_rows(rows.view(), kde_cfg, train.fingerprint())
                .and_then(|model| model.log_density(rows.view()))
                .map_err(|e| SaError::ClassKde {
                    class,
                    source: Box::new(e),
                })?,
        };
        // Ascending LSA is descending log-density; ties go to the lower row.
        let mut ranked: Vec<(f64, usize)> = log_density
            .into_iter()
            .map(|lp| -lp)
            .zip(members.iter().copied())
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        chosen.extend(ranked[..k].iter().map(|&(_, i)| i));
    }
    SampleSelection::new(chosen, Strategy::UnsurprisingFirst, Some(s), 0, train.len())
}

/// Resolution of "pop any element" in the neighbor-free pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PopOrder {
    #[default]
    DatasetOrder,
    Shuffled(u64),
}

/// Greedy epsilon-neighbor-free sampling. Within a class, visits rows in
/// `order`; each row still present is kept and removes every present row at
/// distance `< epsilon` from it. Classes are processed in parallel.
pub fn sample_neighbor_free(
    train: &TraceSet,
    epsilon: f64,
    order: PopOrder,
) -> Result<SampleSelection> {
    if !(epsilon >= 0.0) {
        return Err(SaError::invalid(format!(
            "epsilon must be >= 0, got {epsilon}"
        )));
    }
    let mut classes: Vec<Vec<usize>> = train.class_partition().into_values().collect();
    let seed = match order {
        PopOrder::DatasetOrder => 0,
        PopOrder::Shuffled(seed) => {
            for (c, members) in classes.iter_mut().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ (c as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                );
                members.shuffle(&mut rng);
            }
            seed
        }
    };
    let kept: Vec<usize> = classes
        .par_iter()
        .flat_map_iter(|members| neighbor_free_class(train, members, epsilon))
        .collect();
    SampleSelection::new(
        kept,
        Strategy::NeighborFree,
        Some(epsilon),
        seed,
        train.len(),
    )
}

fn neighbor_free_class(train: &TraceSet, members: &[usize], epsilon: f64) -> Vec<usize> {
    let mut alive = vec![true; members.len()];
    let mut kept = Vec::new();
    for pos in 0..members.len() {
        if !alive[pos] {
            continue;
        }
        let i = members[pos];
        kept.push(i);
        let xi = train.row_slice(i);
        for later in pos + 1..members.len() {
            if alive[later] && l2(xi, train.row_slice(members[later])) < epsilon {
                alive[later] = false;
            }
        }
    }
    kept
}

/// Largest same-class distance, exact for small sets and estimated from a
/// fixed random sample of pairs otherwise.
fn same_class_max_distance(train: &TraceSet) -> f64 {
    let classes: Vec<Vec<usize>> = train
        .class_partition()
        .into_values()
        .filter(|m| m.len() > 1)
        .collect();
    let pairs: usize = classes.iter().map(|m| m.len() * (m.len() - 1) / 2).sum();
    if pairs <= EXACT_PAIR_LIMIT {
        classes
            .par_iter()
            .map(|m| {
                let mut max = 0.0f64;
                for a in 0..m.len() {
                    for b in a + 1..m.len() {
                        max = max.max(l2(train.row_slice(m[a]), train.row_slice(m[b])));
                    }
                }
                max
            })
            .reduce(|| 0.0, f64::max)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut max = 0.0f64;
        for _ in 0..SAMPLED_PAIRS {
            let m = &classes[rng.random_range(0..classes.len())];
            let a = m[rng.random_range(0..m.len())];
            let b = m[rng.random_range(0..m.len())];
            max = max.max(l2(train.row_slice(a), train.row_slice(b)));
        }
        max
    }
}

/// Bisects epsilon over `[0, max same-class distance]` so that
/// neighbor-free sampling in dataset order keeps about `target_s` of the
/// rows. Returns the probed epsilon whose ratio came closest (the earliest
/// probe on ties). Larger epsilon usually keeps fewer rows, which is what
/// bisection relies on; the greedy pass is not strictly monotone in epsilon,
/// so the search keeps the best probe rather than trusting the last one.
///
/// The removal test is strict (`< epsilon`), so one row per class is only
/// reached just above the maximum distance; that value is tried after the
/// bisection probes.
pub fn epsilon_for_ratio(train: &TraceSet, target_s: f64, probes: usize) -> Result<f64> {
    if !(target_s > 0.0 && target_s < 1.0) {
        return Err(SaError::invalid(format!(
            "target ratio must be in (0, 1), got {target_s}"
        )));
    }
    if probes == 0 {
        return Err(SaError::invalid("epsilon search needs at least one probe"));
    }
    let max = same_class_max_distance(train);
    let mut best: Option<(f64, f64)> = None;
    let mut probe = |eps: f64| -> Result<f64> {
        let achieved = sample_neighbor_free(train, eps, PopOrder::DatasetOrder)?.achieved_ratio;
        let err = (achieved - target_s).abs();
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((eps, err));
        }
        Ok(achieved)
    };
    let (mut lo, mut hi) = (0.0, max);
    for _ in 0..probes {
        let eps = 0.5 * (lo + hi);
        let achieved = probe(eps)?;
        if achieved == target_s {
            break;
        } else if achieved > target_s {
            lo = eps;
        } else {
            hi = eps;
        }
    }
    probe(max * (1.0 + 1e-9) + f64::MIN_POSITIVE)?;
    Ok(best.expect("at least one probe").0)
}

/// A sampling request as written on the command line, e.g. `uniform:0.33`,
/// `unsurprising:0.5`, `neighborfree:eps=0.25` or `neighborfree:s=0.33`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingSpec {
    Uniform(f64),
    Unsurprising(f64),
    NeighborFreeEpsilon(f64),
    /// Neighbor-free with epsilon searched for a target ratio.
    NeighborFreeRatio(f64),
}

impl SamplingSpec {
    pub fn strategy(&self) -> Strategy {
        match self {
            SamplingSpec::Uniform(_) => Strategy::Uniform,
            SamplingSpec::Unsurprising(_) => Strategy::UnsurprisingFirst,
            SamplingSpec::NeighborFreeEpsilon(_) | SamplingSpec::NeighborFreeRatio(_) => {
                Strategy::NeighborFree
            }
        }
    }

    /// Only uniform sampling preserves the trace distribution; the other
    /// strategies are meant for DSA.
    pub fn is_distribution_preserving(&self) -> bool {
        matches!(self, SamplingSpec::Uniform(_))
    }

    /// Draws the selection. `seed` drives uniform sampling and, when
    /// `shuffle` is set, the neighbor-free visiting order.
    pub fn select(
        &self,
        train: &TraceSet,
        seed: u64,
        kde_cfg: &KdeConfig,
        shuffle: bool,
    ) -> Result<SampleSelection> {
        let order = if shuffle {
            PopOrder::Shuffled(seed)
        } else {
            PopOrder::DatasetOrder
        };
        match *self {
            SamplingSpec::Uniform(s) => sample_uniform(train, s, seed),
            SamplingSpec::Unsurprising(s) => {
                sample_unsurprising_first(train, s, kde_cfg, Conditioning::PerClass)
            }
            SamplingSpec::NeighborFreeEpsilon(eps) => sample_neighbor_free(train, eps, order),
            SamplingSpec::NeighborFreeRatio(s) if s >= 1.0 => {
                check_ratio(s)?;
                sample_neighbor_free(train, 0.0, order)
            }
            SamplingSpec::NeighborFreeRatio(s) => {
                let eps = epsilon_for_ratio(train, s, DEFAULT_EPSILON_PROBES)?;
                sample_neighbor_free(train, eps, order)
            }
        }
    }
}

impl fmt::Display for SamplingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingSpec::Uniform(s) => write!(f, "uniform:{s}"),
            SamplingSpec::Unsurprising(s) => write!(f, "unsurprising:{s}"),
            SamplingSpec::NeighborFreeEpsilon(e) => write!(f, "neighborfree:eps={e}"),
            SamplingSpec::NeighborFreeRatio(s) => write!(f, "neighborfree:s={s}"),
        }
    }
}

impl FromStr for SamplingSpec {
    type Err = SaError;

    fn from_str(text: &str) -> Result<Self> {
        let bad = || {
            SaError::invalid(format!(
                "bad sampling {text:?}: expected uniform:<s>, unsurprising:<s>, \
                 neighborfree:eps=<e> or neighborfree:s=<s>"
            ))
        };
        let (name, param) = text.split_once(':').ok_or_else(bad)?;
        let (key, value) = match param.split_once('=') {
            Some((k, v)) => (Some(k.trim()), v),
            None => (None, param),
        };
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        let spec = match (name.trim().to_ascii_lowercase().as_str(), key) {
            ("uniform", None | Some("s")) => SamplingSpec::Uniform(value),
            ("unsurprising", None | Some("s")) => SamplingSpec::Unsurprising(value),
            ("neighborfree", Some("eps")) => SamplingSpec::NeighborFreeEpsilon(value),
            ("neighborfree", None | Some("s")) => SamplingSpec::NeighborFreeRatio(value),
            _ => return Err(bad()),
        };
        match spec {
            SamplingSpec::NeighborFreeEpsilon(e) if !(e >= 0.0 && e.is_finite()) => Err(
                SaError::invalid(format!("epsilon must be a finite value >= 0, got {e}")),
            ),
            SamplingSpec::NeighborFreeEpsilon(_) => Ok(spec),
            SamplingSpec::Uniform(s)
            | SamplingSpec::Unsurprising(s)
            | SamplingSpec::NeighborFreeRatio(s) => check_ratio(s).map(|_| spec),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64], labels: &[usize]) -> TraceSet {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        TraceSet::from_rows(&rows, labels.to_vec(), None, "line").unwrap()
    }

    fn grid() -> TraceSet {
        line(&[0.0, 0.5, 1.0, 1.5], &[0, 0, 0, 0])
    }

    #[test]
    fn uniform_cardinality_and_determinism() {
        let t = line(&(0..10).map(f64::from).collect::<Vec<_>>(), &[0; 10]);
        let a = sample_uniform(&t, 0.5, 3).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, sample_uniform(&t, 0.5, 3).unwrap());
        assert_eq!(
            sample_uniform(&t, 1.0, 99).unwrap().indices,
            (0..10).collect::<Vec<_>>()
        );
        assert_eq!(sample_uniform(&t, 0.01, 1).unwrap().len(), 1);
        assert!(sample_uniform(&t, 0.0, 1).is_err());
        assert!(sample_uniform(&t, 1.5, 1).is_err());
    }

    #[test]
    fn uniform_preserves_class_mix_in_expectation() {
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let t = line(&(0..40).map(f64::from).collect::<Vec<_>>(), &labels);
        let runs = 10_000;
        let mut total = 0.0;
        for seed in 0..runs {
            let sel = sample_uniform(&t, 0.5, seed).unwrap();
            let zeros = sel.indices.iter().filter(|&&i| labels[i] == 0).count();
            total += zeros as f64 / sel.len() as f64;
        }
        let mean = total / runs as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn neighbor_free_hand_traced() {
        let sel = sample_neighbor_free(&grid(), 0.6, PopOrder::DatasetOrder).unwrap();
        assert_eq!(sel.indices, vec![0, 2]);
        assert_eq!(sel.achieved_ratio, 0.5);
        assert_eq!(sel.parameter, Some(0.6));
    }

    #[test]
    fn neighbor_free_boundaries() {
        let t = line(&[0.0, 0.1, 5.0, 5.2, 9.0], &[0, 0, 1, 1, 2]);
        assert_eq!(
            sample_neighbor_free(&t, 0.0, PopOrder::DatasetOrder)
                .unwrap()
                .len(),
            5
        );
        let one_each = sample_neighbor_free(&t, 1.0, PopOrder::DatasetOrder).unwrap();
        assert_eq!(one_each.indices, vec![0, 2, 4]);
        let shuffled = sample_neighbor_free(&t, 1.0, PopOrder::Shuffled(4)).unwrap();
        assert_eq!(shuffled.len(), 3);
        assert!(sample_neighbor_free(&t, -1.0, PopOrder::DatasetOrder).is_err());
    }

    #[test]
    fn epsilon_search_on_grid() {
        let eps = epsilon_for_ratio(&grid(), 0.5, DEFAULT_EPSILON_PROBES).unwrap();
        assert!(eps > 0.5 && eps <= 1.0, "{eps}");
        let near_one = epsilon_for_ratio(&grid(), 0.99, DEFAULT_EPSILON_PROBES).unwrap();
        assert!(near_one <= 0.5, "{near_one}");
        let tiny = epsilon_for_ratio(&grid(), 0.25, DEFAULT_EPSILON_PROBES).unwrap();
        assert!(tiny > 1.0, "{tiny}");
        assert!(epsilon_for_ratio(&grid(), 0.5, 0).is_err());
        assert!(epsilon_for_ratio(&grid(), 1.0, 5).is_err());
    }

    #[test]
    fn unsurprising_floor_arithmetic() {
        let xs: Vec<f64> = (0..17).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let labels: Vec<usize> = (0..17).map(|i| usize::from(i >= 10)).collect();
        let t = line(&xs, &labels);
        let sel = sample_unsurprising_first(&t, 0.5, &KdeConfig::default(), Conditioning::PerClass)
            .unwrap();
        assert_eq!(sel.len(), 5 + 3);
        let all = sample_unsurprising_first(&t, 1.0, &KdeConfig::default(), Conditioning::PerClass)
            .unwrap();
        assert_eq!(all.len(), 17);
    }

    #[test]
    fn unsurprising_drops_far_outlier() {
        let mut xs: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) * 0.1).collect();
        xs.push(100.0);
        let t = line(&xs, &[0; 10]);
        for cond in [Conditioning::PerClass, Conditioning::Global] {
            let sel = sample_unsurprising_first(&t, 0.5, &KdeConfig::default(), cond).unwrap();
            assert_eq!(sel.len(), 5);
            assert!(!sel.indices.contains(&9));
        }
    }

    #[test]
    fn unsurprising_reports_degenerate_class() {
        let t = line(&[1.0, 1.0, 1.0, 0.0, 2.0, 4.0], &[0, 0, 0, 1, 1, 1]);
        let err = sample_unsurprising_first(&t, 0.5, &KdeConfig::default(), Conditioning::PerClass)
            .unwrap_err();
        assert!(matches!(err, SaError::ClassKde { class: 0, .. }), "{err}");
    }

    #[test]
    fn spec_grammar() {
        assert_eq!(
            "uniform:0.33".parse::<SamplingSpec>().unwrap(),
            SamplingSpec::Uniform(0.33)
        );
        assert_eq!(
            "unsurprising:0.5".parse::<SamplingSpec>().unwrap(),
            SamplingSpec::Unsurprising(0.5)
        );
        assert_eq!(
            "neighborfree:eps=0.5".parse::<SamplingSpec>().unwrap(),
            SamplingSpec::NeighborFreeEpsilon(0.5)
        );
        assert_eq!(
            "neighborfree:s=0.25".parse::<SamplingSpec>().unwrap(),
            SamplingSpec::NeighborFreeRatio(0.25)
        );
        for bad in [
            "uniform",
            "uniform:1.5",
            "uniform:eps=0.2",
            "neighborfree:eps=-1",
            "foo:0.5",
            "uniform:nan",
        ] {
            assert!(bad.parse::<SamplingSpec>().is_err(), "{bad}");
        }
        let spec = SamplingSpec::NeighborFreeEpsilon(0.25);
        assert_eq!(spec.to_string().parse::<SamplingSpec>().unwrap(), spec);
    }
}
