// SPDX-License-Identifier: MIT OR Apache-2.0

//! Boundary F-measure, synthetic benchmark streams and parameter sweeps.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Method, MethodParams, PreparedStream};
use crate::stream::{FeatureStream, GroundTruth, Segmentation, Source};

/// Default matching tolerance in frames.
pub const DEFAULT_TOLERANCE: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::Add for MatchCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// One-to-one matching of interior boundaries within `tolerance` frames.
///
/// Candidate pairs are taken greedily in order of increasing distance, ties
/// broken by position, so each ground-truth boundary ends up paired with the
/// nearest prediction still free. The leading boundary 0 is ignored.
pub fn match_boundaries(
    pred: &Segmentation,
    gt: &Segmentation,
    tolerance: usize,
) -> Result<MatchCounts> {
    if pred.num_frames() != gt.num_frames() {
        return Err(Error::DimensionMismatch {
            expected: gt.num_frames(),
            found: pred.num_frames(),
        });
    }
    let (p, g) = (pred.interior(), gt.interior());
    let mut pairs = Vec::new();
    for (gi, &gb) in g.iter().enumerate() {
        // both lists are sorted, so only a window of predictions can match
        let lo = p.partition_point(|&x| x + tolerance < gb);
        for (pi, &pb) in p.iter().enumerate().skip(lo) {
            if pb > gb + tolerance {
                break;
            }
            pairs.push((gb.abs_diff(pb), gb.min(pb), gb.max(pb), gi, pi));
        }
    }
    pairs.sort_unstable();
    let mut g_used = vec![false; g.len()];
    let mut p_used = vec![false; p.len()];
    let mut tp = 0;
    for (_, _, _, gi, pi) in pairs {
        if !g_used[gi] && !p_used[pi] {
            g_used[gi] = true;
            p_used[pi] = true;
            tp += 1;
        }
    }
    Ok(MatchCounts {
        tp,
        fp: p.len() - tp,
        fn_: g.len() - tp,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Precision, recall and their harmonic mean; empty denominators give 0.
pub fn f_measure(tp: usize, fp: usize, fn_: usize) -> Scores {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores {
        precision,
        recall,
        f_measure,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub name: String,
    #[serde(flatten)]
    pub counts: MatchCounts,
    #[serde(flatten)]
    pub scores: Scores,
}

/// Scores over one or more datasets. Top-level counts are summed; the
/// per-dataset F-measures are also averaged into `mean_f_measure`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tolerance: usize,
    #[serde(flatten)]
    pub counts: MatchCounts,
    #[serde(flatten)]
    pub scores: Scores,
    pub mean_f_measure: f64,
    pub per_dataset: Vec<DatasetScore>,
}

pub fn evaluate(pred: &Segmentation, gt: &GroundTruth, tolerance: usize) -> Result<EvalReport> {
    evaluate_many(
        &[("dataset".to_string(), pred.clone(), gt.clone())],
        tolerance,
    )
}

pub fn evaluate_many(
    runs: &[(String, Segmentation, GroundTruth)],
    tolerance: usize,
) -> Result<EvalReport> {
    if runs.is_empty() {
        return Err(Error::validation("nothing to evaluate"));
    }
    let mut per_dataset = Vec::with_capacity(runs.len());
    let mut total = MatchCounts::default();
    for (name, pred, gt) in runs {
        let counts = match_boundaries(pred, gt, tolerance)?;
        total = total + counts;
        per_dataset.push(DatasetScore {
            name: name.clone(),
            counts,
            scores: f_measure(counts.tp, counts.fp, counts.fn_),
        });
    }
    let mean_f_measure =
        per_dataset.iter().map(|d| d.scores.f_measure).sum::<f64>() / per_dataset.len() as f64;
    Ok(EvalReport {
        tolerance,
        counts: total,
        scores: f_measure(total.tp, total.fp, total.fn_),
        mean_f_measure,
        per_dataset,
    })
}

/// Piecewise-stationary Gaussian benchmark stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_segments: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub dim: usize,
    /// Euclidean distance between consecutive segment means.
    pub separation: f64,
    pub sigma: f64,
    /// Every coordinate of the first segment mean.
    pub offset: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_segments: 5,
            min_len: 30,
            max_len: 80,
            dim: 16,
            separation: 4.0,
            sigma: 1.0,
            offset: 2.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_segments == 0 || self.dim == 0 || self.min_len == 0 {
            return Err(Error::config(
                "segments, dimension and lengths must be positive",
            ));
        }
        if self.max_len < self.min_len {
            return Err(Error::config("max segment length below min segment length"));
        }
        if !(self.sigma > 0.0 && self.separation > 0.0) {
            return Err(Error::config("sigma and separation must be positive"));
        }
        if !self.offset.is_finite() {
            return Err(Error::config("offset must be finite"));
        }
        Ok(())
    }

    /// Separation in units of sigma.
    pub fn snr(&self) -> f64 {
        self.separation / self.sigma
    }
}

/// Each segment mean sits `separation` away from the previous one in a
/// uniformly random direction; frames add i.i.d. `N(0, sigma^2)` noise.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(FeatureStream, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let mut mean = vec![spec.offset; spec.dim];
    let mut data = Vec::new();
    let mut boundaries = Vec::with_capacity(spec.num_segments);
    let mut frames = 0;
    for j in 0..spec.num_segments {
        if j > 0 {
            let dir: Vec<f64> = (0..spec.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let n = dir
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            mean.iter_mut()
                .zip(&dir)
                .for_each(|(m, d)| *m += spec.separation * d / n);
        }
        boundaries.push(frames);
        let len = rng.random_range(spec.min_len..=spec.max_len);
        for _ in 0..len {
            data.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
        }
        frames += len;
    }
    let stream = FeatureStream::from_flat(spec.dim, data, None)?;
    let gt = GroundTruth::new(Segmentation::new(boundaries, frames, Source::GroundTruth)?);
    Ok((stream, gt))
}

/// Parameters a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Omega1,
    Omega2,
    Radius,
    Cut,
    Delta,
    PNorm,
    MinSubwindow,
    KmeansK,
    Bandwidth,
}

impl SweepParam {
    pub const ALL: [SweepParam; 9] = [
        SweepParam::Omega1,
        SweepParam::Omega2,
        SweepParam::Radius,
        SweepParam::Cut,
        SweepParam::Delta,
        SweepParam::PNorm,
        SweepParam::MinSubwindow,
        SweepParam::KmeansK,
        SweepParam::Bandwidth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Omega1 => "omega1",
            SweepParam::Omega2 => "omega2",
            SweepParam::Radius => "radius",
            SweepParam::Cut => "cut",
            SweepParam::Delta => "delta",
            SweepParam::PNorm => "p-norm",
            SweepParam::MinSubwindow => "min-subwindow",
            SweepParam::KmeansK => "kmeans-k",
            SweepParam::Bandwidth => "bandwidth",
        }
    }

    pub fn apply(self, params: &mut MethodParams, value: f64) -> Result<()> {
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::config(format!(
                    "{} needs a whole number, got {v}",
                    self.name()
                )))
            }
        };
        match self {
            SweepParam::Omega1 => params.gc.omega1 = value,
            SweepParam::Omega2 => params.gc.omega2 = value,
            SweepParam::Radius => params.gc.radius = count(value)?,
            SweepParam::Cut => params.ac.cut = value,
            SweepParam::Delta => params.adwin.delta = value,
            SweepParam::PNorm => params.adwin.p_norm = count(value)? as u32,
            SweepParam::MinSubwindow => params.adwin.min_subwindow = count(value)?,
            SweepParam::KmeansK => params.baseline.kmeans_k = count(value)?,
            SweepParam::Bandwidth => params.baseline.meanshift_bandwidth = value,
        }
        Ok(())
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name() == s || p.name().replace('-', "_") == s)
            .ok_or_else(|| Error::config(format!("unknown sweep parameter {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// One parameter combination.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub values: Vec<f64>,
    /// F-measure per dataset, `None` where the run failed.
    pub per_dataset: Vec<Option<f64>>,
    pub mean_f_measure: Option<f64>,
    /// Population standard deviation across datasets.
    pub std_f_measure: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepCell {
    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepGrid {
    pub method: Method,
    pub tolerance: usize,
    pub axes: Vec<SweepAxis>,
    pub datasets: Vec<String>,
    pub cells: Vec<SweepCell>,
    /// Index of the cell with the highest mean F-measure (first on ties).
    pub best: Option<usize>,
}

impl SweepGrid {
    pub fn best_cell(&self) -> Option<&SweepCell> {
        self.best.map(|i| &self.cells[i])
    }

    /// Tab-separated table: one row per cell, axis values then mean, std and
    /// per-dataset scores.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = self.axes.iter().map(|a| a.param.to_string()).collect();
        header.push("mean_fm".into());
        header.push("std_fm".into());
        header.extend(self.datasets.iter().cloned());
        out.push_str(&header.join("\t"));
        out.push('\n');
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"));
        for cell in &self.cells {
            let mut row: Vec<String> = cell.values.iter().map(|v| format!("{v}")).collect();
            row.push(fmt(cell.mean_f_measure));
            row.push(fmt(cell.std_f_measure));
            row.extend(cell.per_dataset.iter().map(|v| fmt(*v)));
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// A stream with its annotation, preprocessed once for all sweep cells.
pub struct Dataset {
    pub name: String,
    pub stream: PreparedStream,
    pub truth: GroundTruth,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        raw: &FeatureStream,
        truth: GroundTruth,
        params: &MethodParams,
    ) -> Result<Self> {
        if raw.len() != truth.num_frames() {
            return Err(Error::DimensionMismatch {
                expected: truth.num_frames(),
                found: raw.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            stream: PreparedStream::new(raw, &params.preprocess)?,
            truth,
        })
    }

    pub fn score(&self, method: Method, params: &MethodParams, tolerance: usize) -> Result<f64> {
        params.validate()?;
        let pred = self.stream.segment(method, params)?;
        let c = match_boundaries(&pred, &self.truth, tolerance)?;
        Ok(f_measure(c.tp, c.fp, c.fn_).f_measure)
    }
}

fn cartesian(axes: &[SweepAxis]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect()
    })
}

/// Evaluates every grid cell on every dataset. Cells run in parallel; the
/// result is ordered by cell index (last axis varies fastest).
pub fn sweep(
    datasets: &[Dataset],
    method: Method,
    base: &MethodParams,
    axes: &[SweepAxis],
    tolerance: usize,
) -> Result<SweepGrid> {
    if datasets.is_empty() {
        return Err(Error::validation("sweep needs at least one dataset"));
    }
    if axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::validation("sweep axes must be non-empty"));
    }
    let cells: Vec<SweepCell> = cartesian(axes)
        .into_par_iter()
        .map(|values| {
            let mut params = *base;
            let setup = axes
                .iter()
                .zip(&values)
                .try_for_each(|(a, v)| a.param.apply(&mut params, *v))
                .and_then(|_| params.validate());
            if let Err(e) = setup {
                return SweepCell {
                    values,
                    per_dataset: vec![None; datasets.len()],
                    mean_f_measure: None,
                    std_f_measure: None,
                    error: Some(e.to_string()),
                };
            }
            let scores: Vec<Result<f64>> = datasets
                .par_iter()
                .map(|d| d.score(method, &params, tolerance))
                .collect();
            let error = scores
                .iter()
                .find_map(|s| s.as_ref().err().map(|e| e.to_string()));
            let per_dataset: Vec<Option<f64>> = scores.into_iter().map(|s| s.ok()).collect();
            let (mean, std) = if error.is_none() {
                let v: Vec<f64> = per_dataset.iter().flatten().copied().collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
                (Some(mean), Some(var.sqrt()))
            } else {
                (None, None)
            };
            SweepCell {
                values,
                per_dataset,
                mean_f_measure: mean,
                std_f_measure: std,
                error,
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if let Some(m) = c.mean_f_measure {
            if best.is_none_or(|b| m > cells[b].mean_f_measure.unwrap()) {
                best = Some(i);
            }
        }
    }
    Ok(SweepGrid {
        method,
        tolerance,
        axes: axes.to_vec(),
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        cells,
        best,
    })
}

/// Inclusive `start:stop:step` range; `stop` is reached within 1e-12.
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::config(format!("bad number {s:?} in range {spec:?}")))
    };
    match parts.as_slice() {
        [single] => {
            // comma-separated list or one value
            single.split(',').map(num).collect()
        }
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step <= 0.0 || stop < start {
                return Err(Error::config(format!(
                    "range {spec:?} needs step > 0 and stop >= start"
                )));
            }
            let n = ((stop - start) / step + 1e-12).floor() as usize;
            if n > 100_000 {
                return Err(Error::config(format!("range {spec:?} has too many values")));
            }
            // round away representation noise (0.30000000000000004 -> 0.3)
            Ok((0..=n)
                .map(|i| {
                    let v = start + i as f64 * step;
                    (v * 1e12).round() / 1e12
                })
                .collect())
        }
        _ => Err(Error::config(format!(
            "range {spec:?} must be start:stop:step"
        ))),
    }
}
