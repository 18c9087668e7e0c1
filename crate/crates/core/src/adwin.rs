// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multivariate adaptive windowing (ADWIN) for mean-change detection.
//!
//! The detector keeps every sample of its current window and, after each
//! update, tests all admissible splits `W = W0 . W1` (`W0` older). A split
//! fires when the p-norm of the difference between the per-dimension means
//! of `W0` and `W1` exceeds [`epsilon_cut`]. When a split fires, the
//! window is cut at its most likely change point (over all split sizes),
//! the older part is dropped and the test is repeated on what is left.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{FeatureStream, Segmentation, Source};

/// What the detector tracks per sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// Per-dimension means; the test uses the p-norm of their difference.
    #[default]
    MeanVector,
    /// Scalar stream of per-sample p-norms (bound evaluated with k = 1).
    SampleNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdwinConfig {
    pub delta: f64,
    pub p_norm: u32,
    pub min_subwindow: usize,
    pub max_window: Option<usize>,
    pub statistic: Statistic,
}

impl Default for AdwinConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            p_norm: 2,
            min_subwindow: 5,
            max_window: None,
            statistic: Statistic::MeanVector,
        }
    }
}

impl AdwinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        if self.p_norm == 0 {
            return Err(Error::config("p-norm must be at least 1"));
        }
        if self.min_subwindow == 0 {
            return Err(Error::config("minimum subwindow must be at least 1"));
        }
        if let Some(max) = self.max_window {
            if max < 2 * self.min_subwindow {
                return Err(Error::config(format!(
                    "max window {max} cannot hold two subwindows of {}",
                    self.min_subwindow
                )));
            }
        }
        Ok(())
    }
}

/// Detection threshold for a split of sizes `n0`, `n1`:
///
/// `k^(1/p) * sqrt(ln(4 / (k * delta')) / (2m))`, with `delta' = delta / (n0 + n1)`
/// and `m = 2 n0 n1 / (n0 + n1)`.
pub fn epsilon_cut(k: usize, p: u32, n0: usize, n1: usize, delta: f64) -> Result<f64> {
    if k == 0 || p == 0 || n0 == 0 || n1 == 0 {
        return Err(Error::config(format!(
            "epsilon_cut needs k, p, n0, n1 >= 1 (got {k}, {p}, {n0}, {n1})"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    let window = (n0 + n1) as f64;
    let log_term = log_term(k, delta, window)?;
    let m = 2.0 * n0 as f64 * n1 as f64 / window;
    Ok(dim_factor(k, p) * (log_term / (2.0 * m)).sqrt())
}

fn dim_factor(k: usize, p: u32) -> f64 {
    (k as f64).powf(1.0 / p as f64)
}

fn log_term(k: usize, delta: f64, window: f64) -> Result<f64> {
    let k_delta = k as f64 * delta / window;
    if k_delta >= 4.0 {
        return Err(Error::Compute(format!(
            "k * delta' = {k_delta} >= 4; the bound is undefined at this confidence"
        )));
    }
    Ok((4.0 / k_delta).ln())
}

fn p_norm(v: impl Iterator<Item = f64>, p: u32) -> f64 {
    match p {
        1 => v.map(f64::abs).sum(),
        2 => v.map(|x| x * x).sum::<f64>().sqrt(),
        _ => v
            .map(|x| x.abs().powi(p as i32))
            .sum::<f64>()
            .powf(1.0 / p as f64),
    }
}

/// Outcome of one [`Adwin::update`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Update {
    pub change_detected: bool,
    /// Samples removed by detections during this update.
    pub drop_count: usize,
}

/// A detection event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Detection {
    /// Stream index of the sample whose arrival triggered the detection.
    pub position: usize,
    /// Stream index of the first sample still in the window afterwards.
    pub boundary: usize,
    pub dropped: usize,
}

/// Detector state for one stream.
#[derive(Clone, Debug)]
pub struct Adwin {
    cfg: AdwinConfig,
    input_dim: usize,
    /// Width of a stored sample (1 under [`Statistic::SampleNorm`]).
    width: usize,
    window: Vec<f64>,
    sum: Vec<f64>,
    /// Samples consumed so far.
    seen: usize,
    /// Stream index of the oldest retained sample.
    start: usize,
}

impl Adwin {
    pub fn new(input_dim: usize, cfg: AdwinConfig) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::config("input dimension must be at least 1"));
        }
        let width = match cfg.statistic {
            Statistic::MeanVector => input_dim,
            Statistic::SampleNorm => 1,
        };
        Ok(Self {
            cfg,
            input_dim,
            width,
            window: Vec::new(),
            sum: vec![0.0; width],
            seen: 0,
            start: 0,
        })
    }

    pub fn config(&self) -> &AdwinConfig {
        &self.cfg
    }

    /// |W|.
    pub fn len(&self) -> usize {
        self.window.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn position(&self) -> usize {
        self.seen
    }

    /// Stream index of the oldest retained sample.
    pub fn window_start(&self) -> usize {
        self.start
    }

    /// Running per-dimension sums over the window.
    pub fn sums(&self) -> &[f64] {
        &self.sum
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.window.chunks_exact(self.width)
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    pub fn update(&mut self, x: &[f64]) -> Result<Update> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        match self.cfg.statistic {
            Statistic::MeanVector => {
                self.window.extend_from_slice(x);
                self.sum.iter_mut().zip(x).for_each(|(s, v)| *s += v);
            }
            Statistic::SampleNorm => {
                let v = p_norm(x.iter().copied(), self.cfg.p_norm);
                self.window.push(v);
                self.sum[0] += v;
            }
        }
        self.seen += 1;

        if let Some(max) = self.cfg.max_window {
            if self.len() > max {
                self.drop_oldest(self.len() - max);
            }
        }

        let mut dropped = 0;
        while let Some(n0) = self.strongest_split()? {
            self.drop_oldest(n0);
            dropped += n0;
        }
        Ok(Update {
            change_detected: dropped > 0,
            drop_count: dropped,
        })
    }

    /// Number of samples to drop, or `None` when no admissible split fires.
    ///
    /// Firing is decided on splits with both parts at least `min_subwindow`
    /// long. The cut itself is placed at the split (any sizes) maximizing
    /// `m * |mean0 - mean1|^2`; ties go to the older cut.
    fn strongest_split(&self) -> Result<Option<usize>> {
        let n = self.len();
        let min = self.cfg.min_subwindow;
        if n < 2 * min {
            return Ok(None);
        }
        let k = self.width;
        let p = self.cfg.p_norm;
        let factor = dim_factor(k, p);
        let log_term = log_term(k, self.cfg.delta, n as f64)?;
        let mut head = vec![0.0; k];
        let mut fired = false;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, sample) in self.samples().enumerate().take(n - 1) {
            head.iter_mut().zip(sample).for_each(|(h, v)| *h += v);
            let n0 = i + 1;
            let n1 = n - n0;
            let (f0, f1) = (n0 as f64, n1 as f64);
            let diff = p_norm(
                head.iter()
                    .zip(&self.sum)
                    .map(|(h, s)| h / f0 - (s - h) / f1),
                p,
            );
            let m = 2.0 * f0 * f1 / n as f64;
            let score = m * diff * diff;
            if score > best.1 {
                best = (n0, score);
            }
            if !fired && n0 >= min && n1 >= min {
                fired = diff > factor * (log_term / (2.0 * m)).sqrt();
            }
        }
        Ok(fired.then_some(best.0))
    }

    fn drop_oldest(&mut self, count: usize) {
        self.window.drain(..count * self.width);
        self.start += count;
        // Recompute rather than subtract so the sums never drift.
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        for sample in self.window.chunks_exact(self.width) {
            self.sum.iter_mut().zip(sample).for_each(|(s, v)| *s += v);
        }
    }
}

/// Feeds the stream through a fresh detector and records each detection.
pub fn detect_events(stream: &FeatureStream, cfg: &AdwinConfig) -> Result<Vec<Detection>> {
    let mut adwin = Adwin::new(stream.dim(), *cfg)?;
    let mut events = Vec::new();
    for (t, row) in stream.rows().enumerate() {
        let up = adwin.update(row)?;
        if up.change_detected {
            events.push(Detection {
                position: t,
                boundary: adwin.window_start(),
                dropped: up.drop_count,
            });
        }
    }
    Ok(events)
}

/// Segment starts at every detection boundary.
pub fn detect_boundaries(stream: &FeatureStream, cfg: &AdwinConfig) -> Result<Segmentation> {
    let mut boundaries = vec![0];
    boundaries.extend(detect_events(stream, cfg)?.into_iter().map(|d| d.boundary));
    Segmentation::new(boundaries, stream.len(), Source::Adwin)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// First update index (1-based sample count) at which some admissible
    /// split of the full prefix exceeds the bound, recomputing every mean
    /// from scratch.
    fn first_detection_oracle(xs: &[f64], delta: f64, min: usize) -> Option<usize> {
        for t in 1..=xs.len() {
            let w = &xs[..t];
            for n0 in min..=t.saturating_sub(min) {
                let n1 = t - n0;
                if n1 < min {
                    continue;
                }
                let m0 = w[..n0].iter().sum::<f64>() / n0 as f64;
                let m1 = w[n0..].iter().sum::<f64>() / n1 as f64;
                let dp = delta / t as f64;
                let m = 2.0 * (n0 * n1) as f64 / t as f64;
                let eps = ((1.0 / (2.0 * m)) * (4.0 / dp).ln()).sqrt();
                if (m0 - m1).abs() > eps {
                    return Some(t);
                }
            }
        }
        None
    }

    #[test]
    fn epsilon_cut_examples() {
        let e = epsilon_cut(1, 2, 50, 50, 0.1).unwrap();
        assert!((e - 0.28800).abs() < 1e-5, "{e}");
        assert!((e - (0.01 * 4000f64.ln()).sqrt()).abs() < 1e-15);
        let e = epsilon_cut(4, 2, 50, 50, 0.1).unwrap();
        assert!((e - 0.52565).abs() < 1e-5, "{e}");
        assert!((e - 2.0 * (0.01 * 1000f64.ln()).sqrt()).abs() < 1e-15);
        assert!(epsilon_cut(1, 2, 50, 50, 0.01).unwrap() > epsilon_cut(1, 2, 50, 50, 0.1).unwrap());
    }

    #[test]
    fn epsilon_cut_rejects_invalid() {
        assert!(epsilon_cut(0, 2, 5, 5, 0.1).is_err());
        assert!(epsilon_cut(1, 2, 0, 5, 0.1).is_err());
        assert!(epsilon_cut(1, 2, 5, 5, 1.0).is_err());
        // k * delta / |W| >= 4
        assert!(matches!(
            epsilon_cut(100, 2, 1, 1, 0.09),
            Err(Error::Compute(_))
        ));
    }

    #[test]
    fn epsilon_cut_shrinks_with_window() {
        let mut prev = f64::INFINITY;
        for n in [5, 10, 20, 40, 80, 160, 320] {
            let e = epsilon_cut(8, 2, n, n, 0.05).unwrap();
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn constant_stream_never_fires() {
        let mut adwin = Adwin::new(1, AdwinConfig::default()).unwrap();
        for _ in 0..100 {
            assert!(!adwin.update(&[5.0]).unwrap().change_detected);
        }
        assert_eq!(adwin.len(), 100);
    }

    #[test]
    fn step_detection_matches_oracle() {
        let xs: Vec<f64> = (0..80).map(|i| if i < 40 { 0.0 } else { 1.0 }).collect();
        let cfg = AdwinConfig {
            delta: 0.1,
            ..AdwinConfig::default()
        };
        let expected =
            first_detection_oracle(&xs, cfg.delta, cfg.min_subwindow).expect("oracle fires");
        assert!(expected >= 41);
        let mut adwin = Adwin::new(1, cfg).unwrap();
        let mut first = None;
        for (i, x) in xs.iter().enumerate() {
            let before = adwin.len();
            let up = adwin.update(&[*x]).unwrap();
            assert_eq!(adwin.len(), before + 1 - up.drop_count);
            if up.change_detected && first.is_none() {
                first = Some(i + 1);
            }
        }
        assert_eq!(first, Some(expected));
    }

    #[test]
    fn dimension_mismatch() {
        let mut adwin = Adwin::new(3, AdwinConfig::default()).unwrap();
        assert!(matches!(
            adwin.update(&[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn single_frame_stream() {
        let s = FeatureStream::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(
            detect_boundaries(&s, &AdwinConfig::default())
                .unwrap()
                .boundaries(),
            &[0]
        );
    }

    #[test]
    fn max_window_trims_without_detection() {
        let cfg = AdwinConfig {
            max_window: Some(20),
            ..AdwinConfig::default()
        };
        let mut adwin = Adwin::new(1, cfg).unwrap();
        for _ in 0..50 {
            assert!(!adwin.update(&[1.0]).unwrap().change_detected);
        }
        assert_eq!(adwin.len(), 20);
        assert_eq!(adwin.window_start(), 30);
    }

    #[test]
    fn sample_norm_statistic() {
        let cfg = AdwinConfig {
            statistic: Statistic::SampleNorm,
            ..AdwinConfig::default()
        };
        let rows: Vec<[f64; 2]> = (0..200)
            .map(|i| if i < 100 { [0.1, 0.0] } else { [3.0, 4.0] })
            .collect();
        let s = FeatureStream::from_rows(&rows).unwrap();
        let seg = detect_boundaries(&s, &cfg).unwrap();
        assert_eq!(seg.num_segments(), 2);
        assert!(seg.boundaries()[1].abs_diff(100) <= 10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sums_match_retained_samples(xs in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 1..150), shift in 0.0f64..3.0) {
                let mut adwin = Adwin::new(3, AdwinConfig::default()).unwrap();
                for (i, x) in xs.iter().enumerate() {
                    let x: Vec<f64> = x.iter().map(|v| if i > xs.len() / 2 { v + shift } else { *v }).collect();
                    adwin.update(&x).unwrap();
                    let mut fresh = [0.0; 3];
                    for s in adwin.samples() {
                        fresh.iter_mut().zip(s).for_each(|(f, v)| *f += v);
                    }
                    prop_assert!(fresh.iter().zip(adwin.sums()).all(|(a, b)| (a - b).abs() < 1e-9));
                    prop_assert_eq!(adwin.window_start() + adwin.len(), i + 1);
                }
            }

            #[test]
            fn epsilon_cut_monotone_in_delta(k in 1usize..64, p in 1u32..4, n0 in 1usize..500, n1 in 1usize..500) {
                let a = epsilon_cut(k, p, n0, n1, 0.01).unwrap();
                let b = epsilon_cut(k, p, n0, n1, 0.1).unwrap();
                prop_assert!(a > b);
            }
        }
    }
}
