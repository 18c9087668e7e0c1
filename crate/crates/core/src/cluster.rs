// SPDX-License-Identifier: MIT OR Apache-2.0

//! Frame clustering: agglomerative linkage plus K-Means and MeanShift baselines.
//!
//! Clusters are formed without any temporal constraint; callers turn the
//! per-frame labels into segments with [`Segmentation::from_labels`].
//!
//! [`Segmentation::from_labels`]: crate::stream::Segmentation::from_labels

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::FeatureStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Centroid,
    Average,
    Weighted,
    Complete,
    Ward,
    Median,
}

impl Linkage {
    pub const ALL: [Linkage; 7] = [
        Linkage::Single,
        Linkage::Centroid,
        Linkage::Average,
        Linkage::Weighted,
        Linkage::Complete,
        Linkage::Ward,
        Linkage::Median,
    ];

    /// Centroid-type linkages work on squared euclidean distances.
    pub fn is_geometric(self) -> bool {
        matches!(self, Linkage::Ward | Linkage::Centroid | Linkage::Median)
    }

    /// Merge heights never decrease for these.
    pub fn is_monotone(self) -> bool {
        !matches!(self, Linkage::Centroid | Linkage::Median)
    }

    pub fn name(self) -> &'static str {
        match self {
            Linkage::Single => "single",
            Linkage::Centroid => "centroid",
            Linkage::Average => "average",
            Linkage::Weighted => "weighted",
            Linkage::Complete => "complete",
            Linkage::Ward => "ward",
            Linkage::Median => "median",
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Linkage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Linkage::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::config(format!("unknown linkage {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::config(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcConfig {
    pub linkage: Linkage,
    pub metric: Metric,
    pub cut: f64,
}

impl Default for AcConfig {
    fn default() -> Self {
        Self {
            linkage: Linkage::Average,
            metric: Metric::Cosine,
            cut: 0.5,
        }
    }
}

impl AcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cut >= 0.0 && self.cut.is_finite()) {
            return Err(Error::config(format!(
                "cut must be a finite value >= 0, got {}",
                self.cut
            )));
        }
        Ok(())
    }
}

/// Symmetric `T x T` distance matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut values = vec![0.0; n * n];
        values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    // Always evaluate with the smaller index first so the
                    // matrix is exactly symmetric.
                    *v = if i < j { f(i, j) } else { f(j, i) };
                }
            }
        });
        Self { n, values }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `1 - cos(x_i, x_j)`, zero diagonal.
pub fn cosine_distance_matrix(x: &FeatureStream) -> Result<DistanceMatrix> {
    let norms: Vec<f64> = x.rows().map(norm).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::validation(format!(
            "frame {} (index {i}) has a zero feature vector; cosine distance undefined",
            x.ids()[i]
        )));
    }
    Ok(DistanceMatrix::from_fn(x.len(), |i, j| {
        (1.0 - dot(x.row(i), x.row(j)) / (norms[i] * norms[j])).clamp(0.0, 2.0)
    }))
}

pub fn euclidean_distance_matrix(x: &FeatureStream) -> DistanceMatrix {
    DistanceMatrix::from_fn(x.len(), |i, j| sq_euclidean(x.row(i), x.row(j)).sqrt())
}

fn sq_euclidean_matrix(x: &FeatureStream) -> DistanceMatrix {
    DistanceMatrix::from_fn(x.len(), |i, j| sq_euclidean(x.row(i), x.row(j)))
}

fn l2_normalized(x: &FeatureStream) -> Result<FeatureStream> {
    let mut data = Vec::with_capacity(x.as_flat().len());
    for (i, row) in x.rows().enumerate() {
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::validation(format!(
                "frame {} (index {i}) has a zero feature vector; cosine geometry undefined",
                x.ids()[i]
            )));
        }
        data.extend(row.iter().map(|v| v / n));
    }
    x.with_values(x.dim(), data)
}

/// One agglomeration step. Leaves are clusters `0..n`; step `t` creates
/// cluster `n + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dendrogram {
    pub num_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn max_height(&self) -> f64 {
        self.merges.iter().map(|m| m.height).fold(0.0, f64::max)
    }
}

/// Ordering used to pick the next merge: smaller distance first, then the
/// pair with the smaller (min frame, max frame) of the clusters' first frames.
fn pair_order(d1: f64, k1: (usize, usize), d2: f64, k2: (usize, usize)) -> Ordering {
    d1.total_cmp(&d2).then(k1.cmp(&k2))
}

fn pair_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Agglomerative clustering with Lance–Williams updates.
///
/// `Single`, `Complete`, `Average` and `Weighted` use the configured metric.
/// `Ward`, `Centroid` and `Median` use euclidean geometry (on l2-normalized
/// rows when the metric is cosine); their heights are euclidean, i.e. the
/// square root of the updated squared distances.
pub fn linkage(x: &FeatureStream, cfg: &AcConfig) -> Result<Dendrogram> {
    cfg.validate()?;
    if x.len() < 2 {
        return Err(Error::validation("linkage needs at least two frames"));
    }
    let dist = match (cfg.linkage.is_geometric(), cfg.metric) {
        (true, Metric::Euclidean) => sq_euclidean_matrix(x),
        (true, Metric::Cosine) => sq_euclidean_matrix(&l2_normalized(x)?),
        (false, Metric::Euclidean) => euclidean_distance_matrix(x),
        (false, Metric::Cosine) => cosine_distance_matrix(x)?,
    };
    Ok(linkage_from_matrix(dist, cfg.linkage))
}

/// Runs the agglomeration on a precomputed matrix. For geometric linkages
/// the matrix must hold squared euclidean distances.
pub fn linkage_from_matrix(dist: DistanceMatrix, method: Linkage) -> Dendrogram {
    let n = dist.n;
    let mut d = dist.values;
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut first = (0..n).collect::<Vec<_>>();
    let mut id = (0..n).collect::<Vec<_>>();
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];

    let nearest = |d: &[f64], active: &[bool], first: &[usize], i: usize| {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            if j == i || !active[j] {
                continue;
            }
            let dj = d[i * n + j];
            if best.0 == usize::MAX
                || pair_order(
                    dj,
                    pair_key(first[i], first[j]),
                    best.1,
                    pair_key(first[i], first[best.0]),
                ) == Ordering::Less
            {
                best = (j, dj);
            }
        }
        best
    };

    for i in 0..n {
        (nn[i], nn_dist[i]) = nearest(&d, &active, &first, i);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut a = usize::MAX;
        for i in (0..n).filter(|&i| active[i]) {
            if a == usize::MAX
                || pair_order(
                    nn_dist[i],
                    pair_key(first[i], first[nn[i]]),
                    nn_dist[a],
                    pair_key(first[a], first[nn[a]]),
                ) == Ordering::Less
            {
                a = i;
            }
        }
        let b = nn[a];
        let dab = d[a * n + b];
        let (na, nb) = (size[a], size[b]);

        let height = if method.is_geometric() {
            dab.max(0.0).sqrt()
        } else {
            dab
        };
        merges.push(Merge {
            cluster_a: id[a].min(id[b]),
            cluster_b: id[a].max(id[b]),
            height,
            size: na + nb,
        });

        // merged cluster lives in slot `a`
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (dak, dbk) = (d[a * n + k], d[b * n + k]);
            let nk = size[k];
            let (fa, fb, fk) = (na as f64, nb as f64, nk as f64);
            let updated = match method {
                Linkage::Single => dak.min(dbk),
                Linkage::Complete => dak.max(dbk),
                Linkage::Average => (fa * dak + fb * dbk) / (fa + fb),
                Linkage::Weighted => 0.5 * (dak + dbk),
                Linkage::Ward => ((fa + fk) * dak + (fb + fk) * dbk - fk * dab) / (fa + fb + fk),
                Linkage::Centroid => {
                    (fa * dak + fb * dbk) / (fa + fb) - fa * fb * dab / ((fa + fb) * (fa + fb))
                }
                Linkage::Median => 0.5 * dak + 0.5 * dbk - 0.25 * dab,
            };
            d[a * n + k] = updated;
            d[k * n + a] = updated;
        }
        active[b] = false;
        size[a] = na + nb;
        first[a] = first[a].min(first[b]);
        id[a] = n + step;

        if step + 1 == n - 1 {
            break;
        }
        (nn[a], nn_dist[a]) = nearest(&d, &active, &first, a);
        for k in 0..n {
            if !active[k] || k == a {
                continue;
            }
            if nn[k] == a || nn[k] == b {
                (nn[k], nn_dist[k]) = nearest(&d, &active, &first, k);
            } else {
                let dka = d[k * n + a];
                if pair_order(
                    dka,
                    pair_key(first[k], first[a]),
                    nn_dist[k],
                    pair_key(first[k], first[nn[k]]),
                ) == Ordering::Less
                {
                    nn[k] = a;
                    nn_dist[k] = dka;
                }
            }
        }
    }
    Dendrogram {
        num_leaves: n,
        merges,
    }
}

/// Flat clusters after discarding every merge higher than `cut`.
/// Labels are numbered by first appearance in frame order.
pub fn cut_dendrogram(dendro: &Dendrogram, cut: f64) -> Vec<usize> {
    let n = dendro.num_leaves;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    // representative leaf of every cluster id
    let mut rep: Vec<usize> = (0..n).collect();
    for m in &dendro.merges {
        let (ra, rb) = (rep[m.cluster_a], rep[m.cluster_b]);
        rep.push(ra.min(rb));
        if m.height <= cut {
            let (x, y) = (find(&mut parent, ra), find(&mut parent, rb));
            if x != y {
                parent[x.max(y)] = x.min(y);
            }
        }
    }
    relabel_by_first_appearance(&(0..n).map(|i| find(&mut parent, i)).collect::<Vec<_>>())
}

pub(crate) fn relabel_by_first_appearance(raw: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|r| {
            let next = map.len();
            *map.entry(*r).or_insert(next)
        })
        .collect()
}

/// Linkage followed by a cut at `cfg.cut`.
pub fn agglomerative(x: &FeatureStream, cfg: &AcConfig) -> Result<Vec<usize>> {
    if x.len() == 1 {
        return Ok(vec![0]);
    }
    Ok(cut_dendrogram(&linkage(x, cfg)?, cfg.cut))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kmeans_k: usize,
    pub kmeans_seed: u64,
    pub meanshift_bandwidth: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kmeans_k: 8,
            kmeans_seed: 0,
            meanshift_bandwidth: 0.5,
        }
    }
}

const KMEANS_MAX_ITER: usize = 300;

/// Lloyd iterations from a seeded k-means++ start.
pub fn kmeans(x: &FeatureStream, cfg: &BaselineConfig) -> Result<Vec<usize>> {
    let (t, dim, k) = (x.len(), x.dim(), cfg.kmeans_k);
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if k > t {
        return Err(Error::config(format!("k = {k} exceeds the {t} frames")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.kmeans_seed);

    let mut centers: Vec<f64> = Vec::with_capacity(k * dim);
    centers.extend_from_slice(x.row(rng.random_range(0..t)));
    let mut closest: Vec<f64> = x.rows().map(|r| sq_euclidean(r, &centers[..dim])).collect();
    while centers.len() < k * dim {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            closest
                .iter()
                .position(|&w| {
                    target -= w;
                    target < 0.0 && w > 0.0
                })
                .unwrap_or_else(|| closest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..t)
        };
        let start = centers.len();
        centers.extend_from_slice(x.row(pick));
        for (c, r) in closest.iter_mut().zip(x.rows()) {
            *c = c.min(sq_euclidean(r, &centers[start..]));
        }
    }

    let assign = |centers: &[f64]| -> Vec<usize> {
        x.rows()
            .map(|r| {
                centers
                    .chunks_exact(dim)
                    .enumerate()
                    .fold((0, f64::INFINITY), |best, (j, c)| {
                        let d = sq_euclidean(r, c);
                        if d < best.1 {
                            (j, d)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    };

    let mut labels = assign(&centers);
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (r, &l) in x.rows().zip(&labels) {
            counts[l] += 1;
            sums[l * dim..(l + 1) * dim]
                .iter_mut()
                .zip(r)
                .for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centers[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..])
                {
                    *c = s / counts[j] as f64;
                }
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(relabel_by_first_appearance(&labels))
}

const MEANSHIFT_TOL: f64 = 1e-5;
const MEANSHIFT_MAX_ITER: usize = 200;

/// Flat-kernel mean shift; modes closer than `bandwidth / 2` share a label.
pub fn meanshift(x: &FeatureStream, cfg: &BaselineConfig) -> Result<Vec<usize>> {
    let bw = cfg.meanshift_bandwidth;
    if !(bw > 0.0 && bw.is_finite()) {
        return Err(Error::config(format!(
            "bandwidth must be positive, got {bw}"
        )));
    }
    let dim = x.dim();
    let bw2 = bw * bw;
    let modes: Vec<Vec<f64>> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut y = x.row(i).to_vec();
            for _ in 0..MEANSHIFT_MAX_ITER {
                let mut mean = vec![0.0; dim];
                let mut count = 0usize;
                for r in x.rows() {
                    if sq_euclidean(r, &y) <= bw2 {
                        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
                        count += 1;
                    }
                }
                if count == 0 {
                    break;
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let shift = sq_euclidean(&mean, &y).sqrt();
                y = mean;
                if shift < MEANSHIFT_TOL {
                    break;
                }
            }
            y
        })
        .collect();

    let merge2 = (bw / 2.0) * (bw / 2.0);
    let mut centers: Vec<&[f64]> = Vec::new();
    let labels = modes
        .iter()
        .map(
            |m| match centers.iter().position(|c| sq_euclidean(c, m) < merge2) {
                Some(j) => j,
                None => {
                    centers.push(m);
                    centers.len() - 1
                }
            },
        )
        .collect();
    Ok(labels)
}
