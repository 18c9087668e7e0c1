// SPDX-License-Identifier: MIT OR Apache-2.0

//! R-Clustering fusion: agglomerative over-segmentation regularized by the
//! ADWIN split inside a Potts energy on the temporal chain.
//!
//! The energy of a labeling `f` is
//!
//! ```text
//! E(f) = sum_i ((1 - w1) U_ac(i, f_i) + w1 U_adw(i, f_i))
//!      + w2 sum_i sum_{n in N_i} s(i, n) [f_i != f_n] / |N_i|
//! ```
//!
//! where `N_i` holds the frames within `radius` of `i`. Labels are the
//! segments of the union of both input splits. The chain structure lets
//! [`solve_chain`] find the exact minimum by dynamic programming.

use serde::{Deserialize, Serialize};

use crate::cluster::{dot, norm};
use crate::error::{Error, Result};
use crate::stream::{FeatureStream, Segmentation, Source};

/// Largest number of DP states (`labels ^ radius`).
pub const MAX_STATES: usize = 1_000_000;
/// Largest cost table (`frames * labels ^ radius`) the solver will allocate.
pub const MAX_TABLE: usize = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcConfig {
    pub omega1: f64,
    pub omega2: f64,
    pub radius: usize,
}

impl Default for GcConfig {
    fn default() -> Self {
        Self {
            omega1: 1.0,
            omega2: 0.5,
            radius: 1,
        }
    }
}

impl GcConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("omega1", self.omega1), ("omega2", self.omega2)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::config(format!("{name} must be in [0, 1], got {w}")));
            }
        }
        if self.radius == 0 {
            return Err(Error::config("neighborhood radius must be at least 1"));
        }
        Ok(())
    }
}

fn check_same_length(a: &Segmentation, b: &Segmentation) -> Result<()> {
    if a.num_frames() != b.num_frames() {
        return Err(Error::DimensionMismatch {
            expected: a.num_frames(),
            found: b.num_frames(),
        });
    }
    Ok(())
}

/// Sorted union of both boundary sets.
pub fn candidate_labels(seg_ac: &Segmentation, seg_adwin: &Segmentation) -> Result<Segmentation> {
    check_same_length(seg_ac, seg_adwin)?;
    let mut b: Vec<usize> = seg_ac
        .boundaries()
        .iter()
        .chain(seg_adwin.boundaries())
        .copied()
        .collect();
    b.sort_unstable();
    b.dedup();
    Segmentation::new(b, seg_ac.num_frames(), Source::Candidates)
}

/// Cosine similarity; 0 when either vector is zero.
fn cos_sim(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Row-major `frames x labels` cost table.
#[derive(Clone, Debug, PartialEq)]
pub struct UnaryTable {
    pub num_frames: usize,
    pub num_labels: usize,
    pub values: Vec<f64>,
}

impl UnaryTable {
    pub fn get(&self, frame: usize, label: usize) -> f64 {
        self.values[frame * self.num_labels + label]
    }
}

/// Mean feature vector of each candidate segment.
pub fn candidate_centroids(x: &FeatureStream, candidates: &Segmentation) -> Vec<Vec<f64>> {
    candidates
        .spans()
        .map(|(start, end)| {
            let mut c = vec![0.0; x.dim()];
            for i in start..=end {
                c.iter_mut().zip(x.row(i)).for_each(|(a, v)| *a += v);
            }
            let n = (end + 1 - start) as f64;
            c.iter_mut().for_each(|a| *a /= n);
            c
        })
        .collect()
}

/// Unary cost of giving frame `i` candidate label `l` under one method's split.
///
/// If candidate segment `l` lies inside the method segment that contains
/// `i`, the cost is `(1 - cos(x_i, mu_l)) / 2` with `mu_l` the candidate's
/// centroid; otherwise it is 1.
pub fn unary_table(
    x: &FeatureStream,
    candidates: &Segmentation,
    method_seg: &Segmentation,
) -> Result<UnaryTable> {
    if x.len() != candidates.num_frames() {
        return Err(Error::DimensionMismatch {
            expected: candidates.num_frames(),
            found: x.len(),
        });
    }
    check_same_length(candidates, method_seg)?;
    let centroids = candidate_centroids(x, candidates);
    // method segment holding each candidate, None if it straddles a boundary
    let home: Vec<Option<usize>> = candidates
        .spans()
        .map(|(s, e)| {
            let m = method_seg.segment_of(s);
            (method_seg.segment_of(e) == m).then_some(m)
        })
        .collect();
    let labels = centroids.len();
    let mut values = Vec::with_capacity(x.len() * labels);
    for (i, row) in x.rows().enumerate() {
        let own = method_seg.segment_of(i);
        for (mu, h) in centroids.iter().zip(&home) {
            values.push(if *h == Some(own) {
                ((1.0 - cos_sim(row, mu)) / 2.0).clamp(0.0, 1.0)
            } else {
                1.0
            });
        }
    }
    Ok(UnaryTable {
        num_frames: x.len(),
        num_labels: labels,
        values,
    })
}

/// Similarity weight of the Potts term: `max(0, cos(xn_i, xn_n))` on 0-1
/// normalized features. Two all-zero rows count as identical.
pub fn pairwise_weight(xn: &FeatureStream, i: usize, n: usize) -> f64 {
    let (a, b) = (xn.row(i), xn.row(n));
    if norm(a) == 0.0 && norm(b) == 0.0 {
        return 1.0;
    }
    cos_sim(a, b).max(0.0)
}

/// Everything needed to evaluate and minimize the fusion energy.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    num_frames: usize,
    num_labels: usize,
    unary_ac: Vec<f64>,
    unary_adw: Vec<f64>,
    radius: usize,
    /// `similarity[i * radius + d - 1]` is `s(i, i + d)`.
    similarity: Vec<f64>,
}

impl EnergyModel {
    /// `similarity(i, d)` supplies `s(i, i + d)` for `1 <= d <= radius`.
    pub fn new(
        unary_ac: UnaryTable,
        unary_adw: UnaryTable,
        radius: usize,
        similarity: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        if unary_ac.num_frames != unary_adw.num_frames
            || unary_ac.num_labels != unary_adw.num_labels
        {
            return Err(Error::validation("unary tables differ in shape"));
        }
        if unary_ac.num_labels == 0 || unary_ac.num_frames == 0 {
            return Err(Error::validation(
                "energy model needs at least one frame and one label",
            ));
        }
        if radius == 0 {
            return Err(Error::config("neighborhood radius must be at least 1"));
        }
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        if !unary_ac.values.iter().all(in_unit) || !unary_adw.values.iter().all(in_unit) {
            return Err(Error::validation("unary costs must lie in [0, 1]"));
        }
        let t = unary_ac.num_frames;
        let mut sim = vec![0.0; t * radius];
        for i in 0..t {
            for d in 1..=radius {
                if i + d < t {
                    let s = similarity(i, d);
                    if !in_unit(&s) {
                        return Err(Error::validation(format!(
                            "pairwise similarity s({i}, {}) = {s} outside [0, 1]",
                            i + d
                        )));
                    }
                    sim[i * radius + d - 1] = s;
                }
            }
        }
        Ok(Self {
            num_frames: t,
            num_labels: unary_ac.num_labels,
            unary_ac: unary_ac.values,
            unary_adw: unary_adw.values,
            radius,
            similarity: sim,
        })
    }

    /// Builds both unary tables and the similarity weights from features.
    pub fn build(
        x_unary: &FeatureStream,
        x_pair: &FeatureStream,
        candidates: &Segmentation,
        seg_ac: &Segmentation,
        seg_adwin: &Segmentation,
        radius: usize,
    ) -> Result<Self> {
        if x_pair.len() != x_unary.len() {
            return Err(Error::DimensionMismatch {
                expected: x_unary.len(),
                found: x_pair.len(),
            });
        }
        let (ac, adw) = rayon::join(
            || unary_table(x_unary, candidates, seg_ac),
            || unary_table(x_unary, candidates, seg_adwin),
        );
        Self::new(ac?, adw?, radius, |i, d| pairwise_weight(x_pair, i, i + d))
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn unary_ac(&self, frame: usize, label: usize) -> f64 {
        self.unary_ac[frame * self.num_labels + label]
    }

    pub fn unary_adw(&self, frame: usize, label: usize) -> f64 {
        self.unary_adw[frame * self.num_labels + label]
    }

    /// `s(i, n)` for `|i - n| <= radius`, `i != n`.
    pub fn similarity(&self, i: usize, n: usize) -> f64 {
        let (lo, hi) = (i.min(n), i.max(n));
        debug_assert!(hi > lo && hi - lo <= self.radius);
        self.similarity[lo * self.radius + hi - lo - 1]
    }

    pub fn combined_unary(&self, frame: usize, label: usize, omega1: f64) -> f64 {
        (1.0 - omega1) * self.unary_ac(frame, label) + omega1 * self.unary_adw(frame, label)
    }

    /// `|N_i|` under neighborhood radius `r`.
    pub fn neighbor_count(&self, i: usize, r: usize) -> usize {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(self.num_frames - 1);
        hi - lo
    }

    fn check_radius(&self, cfg: &GcConfig) -> Result<()> {
        cfg.validate()?;
        if cfg.radius > self.radius {
            return Err(Error::config(format!(
                "radius {} exceeds the model's precomputed radius {}",
                cfg.radius, self.radius
            )));
        }
        Ok(())
    }

    /// Lowers the model to a chain problem with per-edge Potts weights.
    pub fn to_chain(&self, cfg: &GcConfig) -> Result<PottsChain> {
        self.check_radius(cfg)?;
        let (t, l, r) = (self.num_frames, self.num_labels, cfg.radius);
        let unary = (0..t)
            .flat_map(|i| (0..l).map(move |lab| (i, lab)))
            .map(|(i, lab)| self.combined_unary(i, lab, cfg.omega1))
            .collect();
        let mut edges = vec![0.0; t * r];
        for n in 0..t {
            for d in 1..=r.min(n) {
                let i = n - d;
                let w =
                    1.0 / self.neighbor_count(i, r) as f64 + 1.0 / self.neighbor_count(n, r) as f64;
                edges[n * r + d - 1] = cfg.omega2 * self.similarity(i, n) * w;
            }
        }
        PottsChain::new(t, l, r, unary, edges)
    }
}

/// Energy as written: per-frame unary plus, for every frame, its
/// neighbors' Potts costs divided by its neighbor count.
pub fn total_energy(labels: &[usize], model: &EnergyModel, cfg: &GcConfig) -> Result<f64> {
    model.check_radius(cfg)?;
    if labels.len() != model.num_frames {
        return Err(Error::DimensionMismatch {
            expected: model.num_frames,
            found: labels.len(),
        });
    }
    if let Some(i) = labels.iter().position(|&l| l >= model.num_labels) {
        return Err(Error::validation(format!(
            "frame {i} has unknown label {} (model has {})",
            labels[i], model.num_labels
        )));
    }
    let r = cfg.radius;
    let t = model.num_frames;
    let mut unary = 0.0;
    let mut pair = 0.0;
    for i in 0..t {
        unary += model.combined_unary(i, labels[i], cfg.omega1);
        let count = model.neighbor_count(i, r);
        if count == 0 {
            continue;
        }
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(t - 1);
        let mut local = 0.0;
        for n in (lo..=hi).filter(|&n| n != i) {
            if labels[n] != labels[i] {
                local += model.similarity(i, n);
            }
        }
        pair += local / count as f64;
    }
    Ok(unary + cfg.omega2 * pair)
}

/// A Potts energy on a chain where each frame interacts with the previous
/// `radius` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PottsChain {
    num_frames: usize,
    num_labels: usize,
    radius: usize,
    /// `frames x labels`.
    unary: Vec<f64>,
    /// `edges[n * radius + d - 1]`: cost when frames `n - d` and `n` disagree.
    edges: Vec<f64>,
}

impl PottsChain {
    pub fn new(
        num_frames: usize,
        num_labels: usize,
        radius: usize,
        unary: Vec<f64>,
        edges: Vec<f64>,
    ) -> Result<Self> {
        if num_frames == 0 || num_labels == 0 || radius == 0 {
            return Err(Error::validation(
                "chain needs frames, labels and a radius >= 1",
            ));
        }
        if unary.len() != num_frames * num_labels || edges.len() != num_frames * radius {
            return Err(Error::validation("chain tables have the wrong size"));
        }
        if unary.iter().chain(&edges).any(|v| !v.is_finite()) {
            return Err(Error::validation("chain costs must be finite"));
        }
        let mut edges = edges;
        // edges that would reach before frame 0 do not exist
        for n in 0..num_frames.min(radius) {
            for d in n + 1..=radius {
                edges[n * radius + d - 1] = 0.0;
            }
        }
        Ok(Self {
            num_frames,
            num_labels,
            radius,
            unary,
            edges,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    fn unary(&self, frame: usize, label: usize) -> f64 {
        self.unary[frame * self.num_labels + label]
    }

    fn edge(&self, frame: usize, d: usize) -> f64 {
        self.edges[frame * self.radius + d - 1]
    }

    pub fn energy(&self, labels: &[usize]) -> f64 {
        let mut e = 0.0;
        for (n, &l) in labels.iter().enumerate() {
            e += self.unary(n, l);
            for d in 1..=self.radius.min(n) {
                if labels[n - d] != l {
                    e += self.edge(n, d);
                }
            }
        }
        e
    }

    /// Exact minimizer. Among optimal labelings the lexicographically
    /// smallest is returned.
    pub fn solve(&self) -> Result<(Vec<usize>, f64)> {
        let (t, l, r) = (self.num_frames, self.num_labels, self.radius);
        let states = l
            .checked_pow(r as u32)
            .filter(|&s| s <= MAX_STATES)
            .ok_or_else(|| {
                Error::Compute(format!(
                    "{l} labels with radius {r} exceed {MAX_STATES} solver states; reduce the radius or the number of candidate segments"
                ))
            })?;
        if states.saturating_mul(t) > MAX_TABLE {
            return Err(Error::Compute(format!(
                "{t} frames x {states} states exceed the solver table limit of {MAX_TABLE}; reduce the radius or the number of candidate segments"
            )));
        }
        // State after frame t: labels of frames t, t-1, ..., t-r+1 as base-L
        // digits (digit 0 is frame t). Frames before 0 are label 0 with no edges.
        let tail = states / l;
        let shift = |s: usize, lab: usize| lab + l * (s % tail);

        let transition = |n: usize, s: usize, lab: usize| -> f64 {
            let mut c = self.unary(n, lab);
            let mut prev = s;
            for d in 1..=r.min(n) {
                if prev % l != lab {
                    c += self.edge(n, d);
                }
                prev /= l;
            }
            c
        };

        // cost_to_go[t][s]: best cost of frames t+1.. given state s after frame t
        let mut cost_to_go = vec![0.0; t * states];
        for n in (0..t - 1).rev() {
            let (head, next) = cost_to_go.split_at_mut((n + 1) * states);
            let next = &next[..states];
            let row = &mut head[n * states..n * states + states];
            if r == 1 {
                // Potts with one predecessor: keep the label or pay the edge to the best one.
                let stay: Vec<f64> = (0..l)
                    .map(|lab| self.unary(n + 1, lab) + next[lab])
                    .collect();
                let switch =
                    stay.iter().copied().fold(f64::INFINITY, f64::min) + self.edge(n + 1, 1);
                for (slot, &keep) in row.iter_mut().zip(&stay) {
                    *slot = keep.min(switch);
                }
                continue;
            }
            for (s, slot) in row.iter_mut().enumerate() {
                let mut best = f64::INFINITY;
                for lab in 0..l {
                    best = best.min(transition(n + 1, s, lab) + next[shift(s, lab)]);
                }
                *slot = best;
            }
        }

        let mut labels = Vec::with_capacity(t);
        let mut state = 0usize;
        for n in 0..t {
            let go = &cost_to_go[n * states..(n + 1) * states];
            let costs: Vec<f64> = (0..l)
                .map(|lab| transition(n, state, lab) + go[shift(state, lab)])
                .collect();
            let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
            let tol = 1e-12 * best.abs().max(1.0);
            let lab = costs.iter().position(|&c| c <= best + tol).unwrap();
            labels.push(lab);
            state = shift(state, lab);
        }
        let energy = self.energy(&labels);
        Ok((labels, energy))
    }
}

/// Exact minimum of [`total_energy`].
pub fn solve_chain(model: &EnergyModel, cfg: &GcConfig) -> Result<Vec<usize>> {
    Ok(model.to_chain(cfg)?.solve()?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameTrace {
    pub frame: usize,
    pub label: usize,
    pub unary: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeTrace {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
}

/// Per-frame unary and per-edge pairwise contributions of a labeling.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub total: f64,
    pub frames: Vec<FrameTrace>,
    pub edges: Vec<EdgeTrace>,
}

pub fn energy_trace(labels: &[usize], chain: &PottsChain) -> EnergyTrace {
    let frames = labels
        .iter()
        .enumerate()
        .map(|(frame, &label)| FrameTrace {
            frame,
            label,
            unary: chain.unary(frame, label),
        })
        .collect();
    let mut edges = Vec::new();
    for n in 0..labels.len() {
        for d in 1..=chain.radius.min(n) {
            edges.push(EdgeTrace {
                from: n - d,
                to: n,
                cost: if labels[n - d] != labels[n] {
                    chain.edge(n, d)
                } else {
                    0.0
                },
            });
        }
    }
    EnergyTrace {
        total: chain.energy(labels),
        frames,
        edges,
    }
}

/// Full result of a fusion run.
#[derive(Clone, Debug)]
pub struct RclusterOutput {
    pub segmentation: Segmentation,
    pub candidates: Segmentation,
    pub labels: Vec<usize>,
    pub trace: EnergyTrace,
}

pub fn rcluster_detailed(
    x_unary: &FeatureStream,
    x_pair: &FeatureStream,
    seg_ac: &Segmentation,
    seg_adwin: &Segmentation,
    cfg: &GcConfig,
) -> Result<RclusterOutput> {
    cfg.validate()?;
    let candidates = candidate_labels(seg_ac, seg_adwin)?;
    let model = EnergyModel::build(x_unary, x_pair, &candidates, seg_ac, seg_adwin, cfg.radius)?;
    let chain = model.to_chain(cfg)?;
    let (labels, _) = chain.solve()?;
    let segmentation = Segmentation::from_labels(&labels, Source::Rcluster)?;
    let trace = energy_trace(&labels, &chain);
    Ok(RclusterOutput {
        segmentation,
        candidates,
        labels,
        trace,
    })
}

/// Fuses an agglomerative split with an ADWIN split.
pub fn rcluster(
    x_unary: &FeatureStream,
    x_pair: &FeatureStream,
    seg_ac: &Segmentation,
    seg_adwin: &Segmentation,
    cfg: &GcConfig,
) -> Result<Segmentation> {
    rcluster_detailed(x_unary, x_pair, seg_ac, seg_adwin, cfg).map(|o| o.segmentation)
}
