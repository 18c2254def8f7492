//! Per-channel classification metrics, rank statistics and score
//! distribution tables.
//!
//! Ratios that are undefined for a given stream (no positives, no
//! negatives, a single class) are reported as `None` rather than 0.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::Label;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn sensitivity(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    pub fn specificity(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| self.tn as f64 / n as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelMetrics {
    pub channel: usize,
    pub counts: Counts,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auroc: Option<f64>,
    pub ks: Option<f64>,
}

fn check_stream(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("empty score stream".into()));
    }
    Ok(())
}

/// Confusion counts with `fake` predicted iff `score > threshold`.
pub fn confusion(scores: &[f64], labels: &[Label], threshold: f64) -> Result<ChannelMetrics> {
    check_stream(scores, labels)?;
    let mut c = Counts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > threshold, l) {
            (true, Label::Fake) => c.tp += 1,
            (true, Label::Real) => c.fp += 1,
            (false, Label::Real) => c.tn += 1,
            (false, Label::Fake) => c.fn_ += 1,
        }
    }
    Ok(ChannelMetrics {
        channel: 0,
        counts: c,
        accuracy: c.accuracy(),
        sensitivity: c.sensitivity(),
        specificity: c.specificity(),
        auroc: None,
        ks: None,
    })
}

fn split(scores: &[f64], labels: &[Label]) -> (Vec<f64>, Vec<f64>) {
    let mut real = Vec::new();
    let mut fake = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l.is_fake() {
            fake.push(s);
        } else {
            real.push(s);
        }
    }
    (real, fake)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Mann-Whitney form: probability that a random fake outscores a random
/// real, ties counted one half.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_stream(scores, labels)?;
    let (real, fake) = split(scores, labels);
    if real.is_empty() || fake.is_empty() {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let real = sorted(&real);
    // Twice the win count plus ties, kept integral.
    let mut doubled: u64 = 0;
    for &f in &fake {
        let below = real.partition_point(|&r| r < f) as u64;
        let not_above = real.partition_point(|&r| r <= f) as u64;
        doubled += 2 * below + (not_above - below);
    }
    Ok(doubled as f64 / (2 * real.len() * fake.len()) as f64)
}

/// Two-sample Kolmogorov-Smirnov distance between right-continuous
/// empirical CDFs, evaluated at every pooled sample point.
pub fn ks_distance(real: &[f64], fake: &[f64]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::InvalidInput("KS distance needs two non-empty samples".into()));
    }
    let (r, f) = (sorted(real), sorted(fake));
    let cdf = |s: &[f64], x: f64| s.partition_point(|&v| v <= x) as f64 / s.len() as f64;
    Ok(r.iter()
        .chain(&f)
        .map(|&x| (cdf(&r, x) - cdf(&f, x)).abs())
        .fold(0.0, f64::max))
}

/// Unweighted mean and population standard deviation over channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    /// Channels that contributed (metric defined).
    pub channels: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            channels: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelReport {
    pub channels: Vec<ChannelMetrics>,
    pub accuracy: Aggregate,
    pub sensitivity: Option<Aggregate>,
    pub specificity: Option<Aggregate>,
    /// AUROC is reported per channel only.
    pub ks: Option<Aggregate>,
    pub std_convention: &'static str,
}

/// Full metrics for every channel's `(scores, labels)` stream plus
/// channel-aggregate statistics.
pub fn channel_report(streams: &[(Vec<f64>, Vec<Label>)]) -> Result<ChannelReport> {
    if streams.is_empty() {
        return Err(Error::InvalidInput("no channels to report".into()));
    }
    let mut channels = Vec::with_capacity(streams.len());
    for (v, (scores, labels)) in streams.iter().enumerate() {
        let mut m = confusion(scores, labels, 0.0)?;
        m.channel = v;
        m.auroc = auroc(scores, labels).ok();
        let (real, fake) = split(scores, labels);
        m.ks = ks_distance(&real, &fake).ok();
        channels.push(m);
    }
    let collect = |f: &dyn Fn(&ChannelMetrics) -> Option<f64>| {
        Aggregate::of(&channels.iter().filter_map(f).collect::<Vec<_>>())
    };
    Ok(ChannelReport {
        accuracy: collect(&|m| Some(m.accuracy)).expect("at least one channel"),
        sensitivity: collect(&|m| m.sensitivity),
        specificity: collect(&|m| m.specificity),
        ks: collect(&|m| m.ks),
        channels,
        std_convention: "population",
    })
}

/// Histogram and empirical-CDF tables of real and fake scores.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistributionTable {
    /// `bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub real_counts: Vec<u64>,
    pub fake_counts: Vec<u64>,
    /// Sorted pooled sample values at which the CDFs are tabulated.
    pub cdf_points: Vec<f64>,
    pub real_cdf: Vec<f64>,
    pub fake_cdf: Vec<f64>,
}

impl DistributionTable {
    /// Largest vertical gap between the tabulated CDFs.
    pub fn max_cdf_gap(&self) -> f64 {
        self.real_cdf
            .iter()
            .zip(&self.fake_cdf)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Histograms over `[min(-1, lo), max(1, hi)]` in `bins` equal bins (the
/// top edge is inclusive) and CDFs at every pooled sample point.
pub fn export_distributions(real: &[f64], fake: &[f64], bins: usize) -> Result<DistributionTable> {
    if bins < 2 {
        return Err(Error::InvalidInput("need at least 2 bins".into()));
    }
    let all: Vec<f64> = real.iter().chain(fake).copied().collect();
    let lo = all.iter().copied().fold(-1.0, f64::min);
    let hi = all.iter().copied().fold(1.0, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let hist = |xs: &[f64]| {
        let mut h = vec![0u64; bins];
        for &x in xs {
            let k = (((x - lo) / width).floor() as usize).min(bins - 1);
            h[k] += 1;
        }
        h
    };
    let mut points = sorted(&all);
    points.dedup();
    let (r, f) = (sorted(real), sorted(fake));
    let cdf = |s: &[f64], x: f64| {
        if s.is_empty() {
            0.0
        } else {
            s.partition_point(|&v| v <= x) as f64 / s.len() as f64
        }
    };
    Ok(DistributionTable {
        real_counts: hist(real),
        fake_counts: hist(fake),
        real_cdf: points.iter().map(|&x| cdf(&r, x)).collect(),
        fake_cdf: points.iter().map(|&x| cdf(&f, x)).collect(),
        cdf_points: points,
        edges,
    })
}
