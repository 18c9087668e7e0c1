// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference implementations shared by the integration tests. Each one is
//! written from the definitions, without reusing library internals.

#![allow(dead_code, clippy::too_many_arguments, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rcluster::cluster::{Linkage, Metric};
use rcluster::fusion::{EnergyModel, GcConfig, UnaryTable};
use rcluster::FeatureStream;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize, sigma: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    sigma * z
                })
                .collect()
        })
        .collect()
}

pub fn stream(rows: &[Vec<f64>]) -> FeatureStream {
    FeatureStream::from_rows(rows).unwrap()
}

/// Threshold evaluated in log space: `exp(ln k / p) * sqrt((n0 + n1) ln(4 (n0 + n1) / (k delta)) / (4 n0 n1))`.
pub fn epsilon_oracle(k: usize, p: u32, n0: usize, n1: usize, delta: f64) -> f64 {
    let (k, n0, n1) = (k as f64, n0 as f64, n1 as f64);
    let w = n0 + n1;
    let log = 4f64.ln() + w.ln() - k.ln() - delta.ln();
    (k.ln() / p as f64).exp() * (w * log / (4.0 * n0 * n1)).sqrt()
}

/// First stream index at which some admissible split of everything seen so
/// far fires, with means recomputed from scratch (valid up to the first
/// detection, before anything is dropped).
pub fn first_detection(rows: &[Vec<f64>], delta: f64, p: u32, min: usize) -> Option<usize> {
    let k = rows[0].len();
    for t in 2 * min..=rows.len() {
        for n0 in min..=t - min {
            let mean = |r: &[Vec<f64>]| -> Vec<f64> {
                (0..k)
                    .map(|j| r.iter().map(|x| x[j]).sum::<f64>() / r.len() as f64)
                    .collect()
            };
            let (a, b) = (mean(&rows[..n0]), mean(&rows[n0..t]));
            let diff: f64 = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs().powi(p as i32))
                .sum::<f64>()
                .powf(1.0 / p as f64);
            if diff > epsilon_oracle(k, p, n0, t - n0, delta) {
                return Some(t - 1);
            }
        }
    }
    None
}

/// One merge as `(smaller id, larger id, height, size)`.
pub type OracleMerge = (usize, usize, f64, usize);

struct Node {
    id: usize,
    first: usize,
    /// Leaves with their weights: `1/|C|` style weights are derived on use,
    /// the stored weight is `2^-depth` for the weighted and median rules.
    leaves: Vec<(usize, f64)>,
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn weighted_center(points: &[Vec<f64>], leaves: &[(usize, f64)], uniform: bool) -> Vec<f64> {
    let dim = points[0].len();
    let mut c = vec![0.0; dim];
    for &(i, w) in leaves {
        let w = if uniform {
            1.0 / leaves.len() as f64
        } else {
            w
        };
        c.iter_mut().zip(&points[i]).for_each(|(a, v)| *a += w * v);
    }
    c
}

/// Cluster distance straight from each linkage's definition.
fn cluster_distance(
    points: &[Vec<f64>],
    a: &Node,
    b: &Node,
    method: Linkage,
    metric: Metric,
) -> f64 {
    let base = |i: usize, j: usize| match metric {
        Metric::Cosine => cos_dist(&points[i], &points[j]),
        Metric::Euclidean => euclid(&points[i], &points[j]),
    };
    let pairs = || {
        a.leaves
            .iter()
            .flat_map(|x| b.leaves.iter().map(move |y| (*x, *y)))
    };
    match method {
        Linkage::Single => pairs()
            .map(|((i, _), (j, _))| base(i, j))
            .fold(f64::INFINITY, f64::min),
        Linkage::Complete => pairs()
            .map(|((i, _), (j, _))| base(i, j))
            .fold(f64::NEG_INFINITY, f64::max),
        Linkage::Average => {
            pairs().map(|((i, _), (j, _))| base(i, j)).sum::<f64>()
                / (a.leaves.len() * b.leaves.len()) as f64
        }
        Linkage::Weighted => pairs().map(|((i, wi), (j, wj))| wi * wj * base(i, j)).sum(),
        Linkage::Centroid => euclid(
            &weighted_center(points, &a.leaves, true),
            &weighted_center(points, &b.leaves, true),
        ),
        Linkage::Median => euclid(
            &weighted_center(points, &a.leaves, false),
            &weighted_center(points, &b.leaves, false),
        ),
        Linkage::Ward => {
            let (na, nb) = (a.leaves.len() as f64, b.leaves.len() as f64);
            (2.0 * na * nb / (na + nb)).sqrt()
                * euclid(
                    &weighted_center(points, &a.leaves, true),
                    &weighted_center(points, &b.leaves, true),
                )
        }
    }
}

/// O(n^3) agglomeration: at every step all cluster distances are computed
/// from scratch. Ties go to the pair with the smaller (min, max) of the
/// clusters' first frames.
pub fn naive_linkage(points: &[Vec<f64>], method: Linkage, metric: Metric) -> Vec<OracleMerge> {
    let geometric = matches!(method, Linkage::Ward | Linkage::Centroid | Linkage::Median);
    let points: Vec<Vec<f64>> = if geometric && metric == Metric::Cosine {
        points
            .iter()
            .map(|p| {
                let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                p.iter().map(|v| v / n).collect()
            })
            .collect()
    } else {
        points.to_vec()
    };
    let n = points.len();
    let mut nodes: Vec<Node> = (0..n)
        .map(|i| Node {
            id: i,
            first: i,
            leaves: vec![(i, 1.0)],
        })
        .collect();
    let mut merges = Vec::new();
    for step in 0..n - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for a in 0..nodes.len() {
            for b in a + 1..nodes.len() {
                let d = cluster_distance(&points, &nodes[a], &nodes[b], method, metric);
                let key = (
                    nodes[a].first.min(nodes[b].first),
                    nodes[a].first.max(nodes[b].first),
                );
                let better = match best {
                    None => true,
                    Some((bd, bk, _, _)) => d < bd || (d == bd && key < bk),
                };
                if better {
                    best = Some((d, key, a, b));
                }
            }
        }
        let (d, _, a, b) = best.unwrap();
        let nb = nodes.remove(b);
        let na = nodes.remove(a);
        let halve = matches!(method, Linkage::Weighted | Linkage::Median);
        let leaves = na
            .leaves
            .iter()
            .chain(&nb.leaves)
            .map(|&(i, w)| (i, if halve { w / 2.0 } else { w }))
            .collect::<Vec<_>>();
        merges.push((na.id.min(nb.id), na.id.max(nb.id), d, leaves.len()));
        nodes.push(Node {
            id: n + step,
            first: na.first.min(nb.first),
            leaves,
        });
    }
    merges
}

/// Literal energy: unary mix plus, per frame, the mean disagreement cost
/// over its neighborhood.
pub fn energy_oracle(labels: &[usize], model: &EnergyModel, cfg: &GcConfig) -> f64 {
    let t = labels.len();
    let r = cfg.radius;
    let mut e = 0.0;
    for i in 0..t {
        e += (1.0 - cfg.omega1) * model.unary_ac(i, labels[i])
            + cfg.omega1 * model.unary_adw(i, labels[i]);
        let neighbors: Vec<usize> = (i.saturating_sub(r)..=(i + r).min(t - 1))
            .filter(|&n| n != i)
            .collect();
        if neighbors.is_empty() {
            continue;
        }
        let cost: f64 = neighbors
            .iter()
            .filter(|&&n| labels[n] != labels[i])
            .map(|&n| model.similarity(i, n))
            .sum();
        e += cfg.omega2 * cost / neighbors.len() as f64;
    }
    e
}

/// Minimum energy over every labeling, with the lexicographically first
/// minimizer (ties within `1e-12`).
pub fn brute_force(model: &EnergyModel, cfg: &GcConfig) -> (Vec<usize>, f64) {
    let (t, l) = (model.num_frames(), model.num_labels());
    let mut labels = vec![0; t];
    let mut best = (labels.clone(), f64::INFINITY);
    loop {
        let e = energy_oracle(&labels, model, cfg);
        if e < best.1 - 1e-12 {
            best = (labels.clone(), e);
        }
        // odometer with the last frame varying fastest gives lexicographic order
        let mut pos = t;
        loop {
            if pos == 0 {
                return best;
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < l {
                break;
            }
            labels[pos] = 0;
        }
    }
}

/// Exhaustive minimum for radius 1, walking all labelings depth-first with
/// the energy accumulated frame by frame.
pub fn exhaustive_chain(model: &EnergyModel, cfg: &GcConfig) -> (Vec<usize>, f64) {
    let (t, l) = (model.num_frames(), model.num_labels());
    let count = |i: usize| usize::from(i > 0) + usize::from(i + 1 < t);
    fn walk(
        i: usize,
        acc: f64,
        labels: &mut Vec<usize>,
        best: &mut (Vec<usize>, f64),
        model: &EnergyModel,
        cfg: &GcConfig,
        l: usize,
        count: &dyn Fn(usize) -> usize,
    ) {
        if i == model.num_frames() {
            if acc < best.1 - 1e-12 {
                *best = (labels.clone(), acc);
            }
            return;
        }
        for lab in 0..l {
            let mut e = acc + model.combined_unary(i, lab, cfg.omega1);
            if i > 0 && labels[i - 1] != lab {
                e += cfg.omega2
                    * model.similarity(i - 1, i)
                    * (1.0 / count(i - 1) as f64 + 1.0 / count(i) as f64);
            }
            labels.push(lab);
            walk(i + 1, e, labels, best, model, cfg, l, count);
            labels.pop();
        }
    }
    let mut best = (Vec::new(), f64::INFINITY);
    walk(
        0,
        0.0,
        &mut Vec::with_capacity(t),
        &mut best,
        model,
        cfg,
        l,
        &count,
    );
    best
}

/// A random model with costs in [0, 1].
pub fn random_model(rng: &mut ChaCha8Rng, t: usize, l: usize, radius: usize) -> EnergyModel {
    let mut table = || UnaryTable {
        num_frames: t,
        num_labels: l,
        values: (0..t * l).map(|_| rng.random::<f64>()).collect(),
    };
    let (a, b) = (table(), table());
    let sim: Vec<f64> = (0..t * radius).map(|_| rng.random::<f64>()).collect();
    EnergyModel::new(a, b, radius, |i, d| sim[i * radius + d - 1]).unwrap()
}

/// Eigenvalues (descending) and unit eigenvectors of a symmetric matrix by
/// cyclic Jacobi rotations.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y][y].total_cmp(&m[x][x]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// Sample covariance of the rows.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (t, d) = (rows.len(), rows[0].len());
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / t as f64)
        .collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    rows.iter()
                        .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                        .sum::<f64>()
                        / (t as f64 - 1.0)
                })
                .collect()
        })
        .collect()
}
