mod common;

use common::{dist, dsa_train, kde_oracle, random_set};
use proptest::prelude::*;
use sa_core::cache::{cache_load, cache_store};
use sa_core::eval::{auc_from_values, instability};
use sa_core::kde::{fit_kde, KdeConfig, KdeModel};
use sa_core::sampling::{
    sample_neighbor_free, sample_uniform, sample_unsurprising_first, Conditioning, PopOrder,
    SamplingSpec,
};
use sa_core::surprise::{dsa_scores, dsa_scores_naive, lsa_scores, score, Method, SaConfig};
use sa_core::{BandwidthRule, SampleSelection, TraceSet};

fn shifted(t: &TraceSet, offset: &[f64], scale: f64) -> TraceSet {
    let mut m = t.traces().to_owned();
    for mut row in m.rows_mut() {
        for (v, o) in row.iter_mut().zip(offset) {
            *v = (*v + o) * scale;
        }
    }
    TraceSet::new(m, t.labels().to_vec(), Some(t.num_classes()), "shifted").unwrap()
}

fn rows_of(t: &TraceSet) -> Vec<Vec<f64>> {
    (0..t.len()).map(|i| t.row_slice(i).to_vec()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn optimized_dsa_matches_naive(
        seed in any::<u64>(),
        n in 5usize..200,
        q in 1usize..200,
        d in 1usize..16,
        classes in 2usize..=5,
        grid in any::<bool>(),
    ) {
        let train = random_set(seed, n, d, classes, grid);
        let queries = random_set(seed ^ 1, q, d, classes, grid);
        let naive = dsa_scores_naive(&train, &queries);
        let fast = dsa_scores(&train, &queries, 16, 2);
        match (naive, fast) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
                }
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "naive {:?} vs optimized {:?}", a.is_ok(), b.is_ok()),
        }
    }

    #[test]
    fn dsa_is_thread_and_batch_invariant(seed in any::<u64>(), n in 5usize..150, q in 1usize..120) {
        let train = dsa_train(seed, n, 6, 3);
        let queries = dsa_train(seed ^ 7, q, 6, 3);
        let base = dsa_scores(&train, &queries, q, 1).unwrap();
        for threads in [1, 2, 8] {
            for batch in [1, 7, q] {
                let s = dsa_scores(&train, &queries, batch, threads).unwrap();
                let same = s.values.iter().zip(&base.values).all(|(a, b)| a.to_bits() == b.to_bits());
                prop_assert!(same, "threads {threads} batch {batch}");
            }
        }
    }

    #[test]
    fn dsa_translation_and_scale_invariant(
        seed in any::<u64>(),
        offset in prop::collection::vec(-100.0f64..100.0, 4),
        scale in 0.01f64..100.0,
    ) {
        let train = dsa_train(seed, 60, 4, 3);
        let queries = dsa_train(seed ^ 3, 30, 4, 3);
        let base = dsa_scores_naive(&train, &queries).unwrap();
        let moved = dsa_scores_naive(&shifted(&train, &offset, 1.0), &shifted(&queries, &offset, 1.0)).unwrap();
        let zero = vec![0.0; 4];
        let scaled = dsa_scores_naive(&shifted(&train, &zero, scale), &shifted(&queries, &zero, scale)).unwrap();
        for i in 0..base.values.len() {
            prop_assert!((base.values[i] - moved.values[i]).abs() <= 1e-9);
            prop_assert!((base.values[i] - scaled.values[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn kde_matches_direct_summation(
        seed in any::<u64>(),
        n in 2usize..=200,
        d in 1usize..=8,
        standardize in any::<bool>(),
        fixed in prop::option::of(0.2f64..3.0),
    ) {
        let train = random_set(seed, n, d, 1, false);
        let queries = random_set(seed ^ 5, 20, d, 1, false);
        let cfg = KdeConfig {
            rule: fixed.map_or(BandwidthRule::Scott, BandwidthRule::Fixed),
            standardize,
            ..KdeConfig::default()
        };
        let model = fit_kde(&train, &cfg).unwrap();
        let got = model.log_density(queries.traces()).unwrap();
        let rows = rows_of(&train);
        let mut oracle = Vec::new();
        for (i, g) in got.iter().enumerate() {
            let want = kde_oracle(&rows, queries.row_slice(i), fixed, cfg.variance_threshold, standardize);
            prop_assert!((g - want).abs() <= 1e-9 * want.abs().max(1.0), "{g} vs {want}");
            oracle.push(want);
        }
        // LSA ranks queries exactly as the negated oracle density does.
        let lsa = lsa_scores(&model, &queries).unwrap();
        for a in 0..lsa.values.len() {
            for b in 0..lsa.values.len() {
                if (oracle[a] - oracle[b]).abs() > 1e-9 * oracle[a].abs().max(1.0) {
                    prop_assert_eq!(lsa.values[a] < lsa.values[b], oracle[a] > oracle[b]);
                }
            }
        }
    }

    #[test]
    fn kde_ignores_filtered_dimensions(seed in any::<u64>(), junk in -1e6f64..1e6) {
        let base = random_set(seed, 40, 3, 1, false);
        let mut m = ndarray::Array2::zeros((40, 4));
        m.slice_mut(ndarray::s![.., ..3]).assign(&base.traces());
        m.column_mut(3).fill(2.5);
        let train = TraceSet::new(m, vec![0; 40], None, "masked").unwrap();
        let model = fit_kde(&train, &KdeConfig::default()).unwrap();
        let q1 = ndarray::array![[0.1, -0.2, 0.3, 2.5]];
        let q2 = ndarray::array![[0.1, -0.2, 0.3, junk]];
        prop_assert_eq!(model.log_density(q1.view()).unwrap(), model.log_density(q2.view()).unwrap());
    }

    #[test]
    fn kde_density_decreases_radially(
        center in prop::collection::vec(-5.0f64..5.0, 3),
        dir in prop::collection::vec(-1.0f64..1.0, 3),
        h in 0.1f64..3.0,
    ) {
        let reference = ndarray::Array2::from_shape_vec((1, 3), center.clone()).unwrap();
        let model = KdeModel::from_reference(reference, h).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..20 {
            let t = step as f64 * 0.5;
            let q: Vec<f64> = center.iter().zip(&dir).map(|(c, u)| c + t * u).collect();
            let q = ndarray::Array2::from_shape_vec((1, 3), q).unwrap();
            let lp = model.log_density(q.view()).unwrap()[0];
            prop_assert!(lp <= prev);
            prev = lp;
        }
    }

    #[test]
    fn cache_round_trip_is_bit_exact(seed in any::<u64>(), n in 1usize..60, d in 1usize..10, classes in 1usize..6) {
        let t = random_set(seed, n, d, classes, false).with_name(format!("set{seed}"));
        let dir = tempfile::tempdir().unwrap();
        cache_store(&t, dir.path()).unwrap();
        let back = cache_load(t.name(), dir.path()).unwrap();
        prop_assert_eq!(back.labels(), t.labels());
        prop_assert_eq!(back.num_classes(), t.num_classes());
        let bits = |s: &TraceSet| s.traces().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
        prop_assert_eq!(back.fingerprint(), t.fingerprint());
    }

    #[test]
    fn class_partition_covers_rows_once(seed in any::<u64>(), n in 1usize..100, classes in 1usize..8) {
        let t = random_set(seed, n, 2, classes, false);
        let p = t.class_partition();
        prop_assert_eq!(p.len(), classes);
        let mut all: Vec<usize> = Vec::new();
        for (c, members) in &p {
            prop_assert!(members.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(members.iter().all(|&i| t.labels()[i] == *c));
            all.extend(members);
        }
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn neighbor_free_output_is_epsilon_free(
        seed in any::<u64>(),
        n in 1usize..120,
        eps in 0.0f64..3.0,
        shuffle in prop::option::of(any::<u64>()),
    ) {
        let t = random_set(seed, n, 3, 3, seed % 2 == 0);
        let order = shuffle.map_or(PopOrder::DatasetOrder, PopOrder::Shuffled);
        let sel = sample_neighbor_free(&t, eps, order).unwrap();
        for (a, &i) in sel.indices.iter().enumerate() {
            for &j in &sel.indices[a + 1..] {
                if t.labels()[i] == t.labels()[j] {
                    prop_assert!(dist(t.row_slice(i), t.row_slice(j)) >= eps);
                }
            }
        }
        // Every dropped row has a kept same-class row closer than epsilon.
        for i in 0..n {
            if sel.indices.binary_search(&i).is_err() {
                let covered = sel.indices.iter().any(|&k| {
                    t.labels()[k] == t.labels()[i] && dist(t.row_slice(k), t.row_slice(i)) < eps
                });
                prop_assert!(covered);
            }
        }
    }

    #[test]
    fn neighbor_free_shrinks_monotonically_on_sorted_lines(
        mut xs in prop::collection::vec(-10.0f64..10.0, 1..60),
        e1 in 0.0f64..5.0,
        extra in 0.0f64..5.0,
    ) {
        // On a line visited left to right the greedy pass is an optimal
        // packing, and packings only shrink as epsilon grows.
        xs.sort_by(f64::total_cmp);
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let t = TraceSet::from_rows(&rows, vec![0; xs.len()], None, "line").unwrap();
        let a = sample_neighbor_free(&t, e1, PopOrder::DatasetOrder).unwrap();
        let b = sample_neighbor_free(&t, e1 + extra, PopOrder::DatasetOrder).unwrap();
        prop_assert!(a.len() >= b.len());
    }

    #[test]
    fn removing_an_epsilon_neighbor_moves_min_distance_by_at_most_epsilon(
        seed in any::<u64>(),
        n in 3usize..=100,
        eps in 0.05f64..2.0,
    ) {
        let t = random_set(seed, n, 2, 1, false);
        let rows = rows_of(&t);
        let min_dist = |x: &[f64], skip: Option<usize>| {
            rows.iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != skip)
                .map(|(_, r)| dist(x, r))
                .fold(f64::INFINITY, f64::min)
        };
        for x1 in 0..n {
            for x2 in 0..n {
                if x1 == x2 || dist(&rows[x1], &rows[x2]) >= eps {
                    continue;
                }
                for (x, row) in rows.iter().enumerate() {
                    if x == x2 {
                        continue;
                    }
                    let before = min_dist(row, None);
                    let after = min_dist(row, Some(x2));
                    prop_assert!(after - before <= eps + 1e-12);
                }
            }
        }
    }

    #[test]
    fn unsurprising_first_drops_each_class_maximum(seed in any::<u64>(), per_class in 4usize..40) {
        let t = random_set(seed, per_class * 2, 2, 2, false);
        let s = 1.0 - 1.0 / per_class as f64;
        let sel = sample_unsurprising_first(&t, s, &KdeConfig::default(), Conditioning::PerClass).unwrap();
        for members in t.class_partition().values() {
            let rows: Vec<Vec<f64>> = members.iter().map(|&i| t.row_slice(i).to_vec()).collect();
            let lp: Vec<f64> = rows.iter().map(|r| kde_oracle(&rows, r, None, 1e-5, true)).collect();
            let worst = (0..lp.len()).min_by(|&a, &b| lp[a].total_cmp(&lp[b])).unwrap();
            prop_assert!(sel.indices.binary_search(&members[worst]).is_err());
            let kept = sel.indices.iter().filter(|i| members.contains(i)).count();
            prop_assert_eq!(kept, ((s * per_class as f64).floor() as usize).max(1));
        }
    }

    #[test]
    fn uniform_selects_floor_of_ratio(seed in any::<u64>(), n in 1usize..300, s in 0.001f64..=1.0) {
        let t = random_set(seed, n, 1, 1, false);
        let sel = sample_uniform(&t, s, seed).unwrap();
        prop_assert_eq!(sel.len(), ((s * n as f64).floor() as usize).clamp(1, n));
        sel.check_parent(n).unwrap();
        let back = SampleSelection::from_json(&sel.to_json()).unwrap();
        prop_assert_eq!(back, sel);
    }

    #[test]
    fn full_selections_reproduce_unsampled_scores(seed in any::<u64>(), n in 6usize..80) {
        let train = dsa_train(seed, n, 3, 2);
        let queries = dsa_train(seed ^ 9, 25, 3, 2);
        let cfg = SaConfig { threads: 1, ..SaConfig::default() };
        for method in [Method::Lsa, Method::Dsa] {
            let base = score(method, &train, &queries, &cfg).unwrap();
            for spec in [
                SamplingSpec::Uniform(1.0),
                SamplingSpec::Unsurprising(1.0),
                SamplingSpec::NeighborFreeRatio(1.0),
                SamplingSpec::NeighborFreeEpsilon(0.0),
            ] {
                let sel = spec.select(&train, seed, &cfg.kde, false).unwrap();
                let sub = train.restrict(&sel).unwrap();
                let s = score(method, &sub, &queries, &cfg).unwrap();
                prop_assert_eq!(&s.values, &base.values, "{} {}", method, spec);
            }
        }
    }

    #[test]
    fn auc_matches_pair_counting(
        nominal in prop::collection::vec(-5i32..5, 1..60),
        outlier in prop::collection::vec(-5i32..5, 1..60),
    ) {
        let a: Vec<f64> = nominal.iter().map(|&v| f64::from(v) * 0.5).collect();
        let b: Vec<f64> = outlier.iter().map(|&v| f64::from(v) * 0.5).collect();
        let mut doubled = 0u64;
        for &o in &b {
            for &x in &a {
                doubled += if o > x { 2 } else if o == x { 1 } else { 0 };
            }
        }
        let want = doubled as f64 / (2 * a.len() * b.len()) as f64;
        let got = auc_from_values(&a, &b).unwrap();
        prop_assert_eq!(got, want);
        prop_assert!((0.0..=1.0).contains(&got));
        // Swapping the roles complements the AUC; monotone maps preserve it.
        let swapped = auc_from_values(&b, &a).unwrap();
        prop_assert!((got + swapped - 1.0).abs() <= 1e-12);
        let warp = |v: &Vec<f64>| v.iter().map(|x| x.exp() * 3.0 - 7.0).collect::<Vec<_>>();
        prop_assert_eq!(auc_from_values(&warp(&a), &warp(&b)).unwrap(), got);
    }

    #[test]
    fn replica_stats_are_consistent(values in prop::collection::vec(0.0f64..1.0, 2..50)) {
        let s = instability(&values).unwrap();
        prop_assert!(s.min <= s.median && s.median <= s.max);
        prop_assert!(s.min <= s.mean && s.mean <= s.max);
        prop_assert_eq!(s.range, s.max - s.min);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        prop_assert!((s.std * s.std - var).abs() <= 1e-12);
        prop_assert_eq!(s.min, values.iter().cloned().fold(f64::INFINITY, f64::min));
        prop_assert_eq!(s.max, values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
}

#[test]
fn greedy_neighbor_free_is_not_monotone_in_general() {
    // Larger epsilon removes a point early that would otherwise have removed
    // two later ones, so the sample grows.
    let pts = [
        [1.081, 0.308],
        [1.135, 2.133],
        [1.157, 1.536],
        [2.888, 1.99],
        [0.327, 0.359],
        [3.441, 0.69],
        [1.573, 2.754],
        [3.904, 2.081],
        [2.993, 2.464],
        [3.2, 1.891],
    ];
    let rows: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
    let t = TraceSet::from_rows(&rows, vec![0; rows.len()], None, "pts").unwrap();
    let small = sample_neighbor_free(&t, 1.6246, PopOrder::DatasetOrder).unwrap();
    let large = sample_neighbor_free(&t, 1.7719, PopOrder::DatasetOrder).unwrap();
    assert_eq!((small.len(), large.len()), (3, 4));
}

#[test]
fn dsa_errors_match_between_paths() {
    let rows = vec![vec![0.0], vec![1.0]];
    let train = TraceSet::from_rows(&rows, vec![0, 0], Some(2), "one").unwrap();
    let q = TraceSet::from_rows(&[vec![0.5]], vec![0], Some(2), "q").unwrap();
    let a = dsa_scores_naive(&train, &q).unwrap_err().to_string();
    let b = dsa_scores(&train, &q, 4, 2).unwrap_err().to_string();
    assert_eq!(a, b);
    assert!(a.contains("DSA requires >= 2 predicted classes"));

    let train = TraceSet::from_rows(&rows, vec![0, 1], Some(3), "two").unwrap();
    let q = TraceSet::from_rows(&[vec![0.5]], vec![2], Some(3), "q").unwrap();
    assert_eq!(
        dsa_scores_naive(&train, &q).unwrap_err().to_string(),
        dsa_scores(&train, &q, 4, 2).unwrap_err().to_string()
    );

    let dup = vec![vec![0.0], vec![0.0], vec![3.0]];
    let train = TraceSet::from_rows(&dup, vec![0, 1, 1], None, "dup").unwrap();
    let q = TraceSet::from_rows(&[vec![0.1]], vec![0], Some(2), "q").unwrap();
    let a = dsa_scores_naive(&train, &q).unwrap_err().to_string();
    assert_eq!(a, dsa_scores(&train, &q, 1, 1).unwrap_err().to_string());
    assert!(a.contains("rows 0 and 1"), "{a}");
}

#[test]
fn permuting_training_rows_keeps_dsa_scores() {
    let train = dsa_train(4, 50, 3, 3);
    let queries = dsa_train(5, 20, 3, 3);
    let mut order: Vec<usize> = (0..50).rev().collect();
    order.rotate_left(7);
    let permuted = train.select_rows(&order).unwrap();
    assert_eq!(
        dsa_scores_naive(&train, &queries).unwrap().values,
        dsa_scores_naive(&permuted, &queries).unwrap().values
    );
}
