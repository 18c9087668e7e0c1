// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::*;
use rand::Rng;
use rcluster::cluster::{
    agglomerative, cut_dendrogram, kmeans, linkage, AcConfig, BaselineConfig, Linkage, Metric,
};

fn check_against_oracle(seed: u64, metric: Metric) {
    let mut r = rng(seed);
    let n = r.random_range(2..=50);
    let dim = r.random_range(2..=6);
    let rows = gaussian_rows(&mut r, n, dim, 1.0);
    let x = stream(&rows);
    for method in Linkage::ALL {
        let cfg = AcConfig {
            linkage: method,
            metric,
            cut: 0.5,
        };
        let got = linkage(&x, &cfg).unwrap();
        let want = naive_linkage(&rows, method, metric);
        assert_eq!(got.merges.len(), want.len());
        for (step, (m, w)) in got.merges.iter().zip(&want).enumerate() {
            assert_eq!(
                (m.cluster_a, m.cluster_b, m.size),
                (w.0, w.1, w.3),
                "{method} {metric:?} seed {seed} step {step}"
            );
            assert!(
                (m.height - w.2).abs() <= 1e-9,
                "{method} seed {seed} step {step}: {} vs {}",
                m.height,
                w.2
            );
        }
    }
}

#[test]
fn all_linkages_match_naive_agglomeration_cosine() {
    for seed in 0..25 {
        check_against_oracle(seed, Metric::Cosine);
    }
}

#[test]
fn all_linkages_match_naive_agglomeration_euclidean() {
    for seed in 100..125 {
        check_against_oracle(seed, Metric::Euclidean);
    }
}

#[test]
fn monotone_linkages_have_sorted_heights() {
    let mut r = rng(9);
    let x = stream(&gaussian_rows(&mut r, 40, 5, 1.0));
    for method in Linkage::ALL.into_iter().filter(|m| m.is_monotone()) {
        let d = linkage(
            &x,
            &AcConfig {
                linkage: method,
                ..AcConfig::default()
            },
        )
        .unwrap();
        assert!(
            d.merges
                .windows(2)
                .all(|w| w[0].height <= w[1].height + 1e-12),
            "{method}"
        );
    }
}

#[test]
fn cut_extremes() {
    let mut r = rng(11);
    let x = stream(&gaussian_rows(&mut r, 30, 4, 1.0));
    let d = linkage(&x, &AcConfig::default()).unwrap();
    let all = cut_dendrogram(&d, f64::INFINITY);
    assert!(all.iter().all(|&l| l == 0));
    let none = cut_dendrogram(&d, -1.0);
    assert_eq!(none, (0..30).collect::<Vec<_>>());
}

#[test]
fn coarser_cuts_merge_clusters() {
    let mut r = rng(12);
    let x = stream(&gaussian_rows(&mut r, 40, 3, 1.0));
    let count = |cut: f64| {
        let labels = agglomerative(
            &x,
            &AcConfig {
                cut,
                ..AcConfig::default()
            },
        )
        .unwrap();
        labels.iter().max().unwrap() + 1
    };
    let mut last = usize::MAX;
    for cut in [0.0, 0.1, 0.3, 0.6, 1.0, 2.0] {
        let c = count(cut);
        assert!(c <= last);
        last = c;
    }
    assert_eq!(last, 1);
}

/// Within-cluster sum of squares of a labeling.
fn inertia(rows: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = rows[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = rows
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| r)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..dim)
            .map(|j| members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64)
            .collect();
        total += members
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>();
    }
    total
}

#[test]
fn kmeans_reaches_best_two_partition_on_separated_data() {
    for seed in 0..10 {
        let mut r = rng(200 + seed);
        let mut rows = gaussian_rows(&mut r, 10, 2, 0.3);
        for row in &mut rows[5..] {
            row[0] += 5.0;
        }
        let labels = kmeans(
            &stream(&rows),
            &BaselineConfig {
                kmeans_k: 2,
                kmeans_seed: seed,
                ..Default::default()
            },
        )
        .unwrap();
        let best = (1u32..1 << 9)
            .map(|mask| {
                // frame 0 fixed to cluster 0 to skip mirrored partitions
                let l: Vec<usize> = (0..10)
                    .map(|i| {
                        if i == 0 {
                            0
                        } else {
                            ((mask >> (i - 1)) & 1) as usize
                        }
                    })
                    .collect();
                inertia(&rows, &l, 2)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(
            (inertia(&rows, &labels, 2) - best).abs() < 1e-9,
            "seed {seed}"
        );
    }
}
