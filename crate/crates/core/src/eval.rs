//! Quantitative evaluation protocols: manipulation accuracy, attribute
//! dependency, and start/end logit scatter data.
//!
//! Evaluation re-scores trajectory endpoints with a scorer that is
//! independent of the classifiers that produced the directions —
//! normally the synthetic world's oracle — because judging edits with
//! the same network that steered them would be circular.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::AttributeClassifier;
use crate::control::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::numeric::{mean_std, Vector};
use crate::synthworld::{LatentBank, WorldSpec};

/// Who assigns labels and logits during evaluation.
#[derive(Debug, Clone)]
pub enum Scorer {
    /// Ground-truth analytic scores from a synthetic world.
    Oracle(WorldSpec),
    /// Held-out trained classifiers.
    TrainedClassifiers(Vec<AttributeClassifier>),
}

impl Scorer {
    pub fn attribute_ids(&self) -> Vec<String> {
        match self {
            Scorer::Oracle(world) => world.attribute_ids(),
            Scorer::TrainedClassifiers(clfs) => {
                clfs.iter().map(|c| c.attr.id.clone()).collect()
            }
        }
    }

    pub fn num_classes(&self, attr: &str) -> Result<usize> {
        match self {
            Scorer::Oracle(world) => Ok(world.attribute(attr)?.num_classes),
            Scorer::TrainedClassifiers(clfs) => clfs
                .iter()
                .find(|c| c.attr.id == attr)
                .map(|c| c.attr.num_classes)
                .ok_or_else(|| Error::UnknownAttribute(attr.to_string())),
        }
    }

    pub fn is_binary(&self, attr: &str) -> Result<bool> {
        Ok(self.num_classes(attr)? == 1)
    }

    pub fn logits(&self, attr: &str, z: &Vector) -> Result<Vector> {
        match self {
            Scorer::Oracle(world) => world.oracle_score(attr, z),
            Scorer::TrainedClassifiers(clfs) => clfs
                .iter()
                .find(|c| c.attr.id == attr)
                .ok_or_else(|| Error::UnknownAttribute(attr.to_string()))?
                .forward(z),
        }
    }

    pub fn label(&self, attr: &str, z: &Vector) -> Result<usize> {
        Ok(crate::classifier::label_from_logits(&self.logits(attr, z)?))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Scorer::Oracle(_) => "oracle",
            Scorer::TrainedClassifiers(_) => "trained_classifier",
        }
    }
}

/// Mean and population standard deviation of an attribute's logit over
/// the bank; the sigma normalizes that attribute's drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitStats {
    pub mean: f64,
    pub std: f64,
}

/// Everything a metric needs: scored trajectories, bank normalizers,
/// and the scorer itself.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub records: Vec<TrajectoryRecord>,
    pub bank_stats: BTreeMap<String, LogitStats>,
    pub scorer: Scorer,
}

impl EvalRun {
    pub fn new(
        records: Vec<TrajectoryRecord>,
        bank_stats: BTreeMap<String, LogitStats>,
        scorer: Scorer,
    ) -> Self {
        Self {
            records,
            bank_stats,
            scorer,
        }
    }

    /// Builds a run with normalizers computed from a latent bank.
    pub fn from_bank(
        records: Vec<TrajectoryRecord>,
        scorer: Scorer,
        bank: &LatentBank,
    ) -> Result<Self> {
        let bank_stats = bank_logit_stats(&scorer, bank)?;
        Ok(Self::new(records, bank_stats, scorer))
    }

    fn sigma(&self, attr: &str) -> Result<f64> {
        let stats = self
            .bank_stats
            .get(attr)
            .ok_or_else(|| Error::MissingData(format!("no bank stats for attribute {attr:?}")))?;
        if stats.std == 0.0 {
            return Err(Error::DegenerateNormalizer {
                attr: attr.to_string(),
            });
        }
        Ok(stats.std)
    }

    /// Binary attributes known to the scorer, in id order.
    fn binary_attrs(&self) -> Result<Vec<String>> {
        let mut ids = self.scorer.attribute_ids();
        ids.sort();
        ids.into_iter()
            .filter_map(|id| match self.scorer.is_binary(&id) {
                Ok(true) => Some(Ok(id)),
                Ok(false) => None,
                Err(e) => Some(Err(e)),
            })
            .collect()
    }
}

/// Per-attribute logit statistics over a bank (binary attributes only;
/// multi-class attributes have no single normalizing logit).
pub fn bank_logit_stats(
    scorer: &Scorer,
    bank: &LatentBank,
) -> Result<BTreeMap<String, LogitStats>> {
    if bank.is_empty() {
        return Err(Error::EmptyInput("latent bank"));
    }
    let mut out = BTreeMap::new();
    for attr in scorer.attribute_ids() {
        if !scorer.is_binary(&attr)? {
            continue;
        }
        let mut logits = Vec::with_capacity(bank.len());
        for i in 0..bank.len() {
            logits.push(scorer.logits(&attr, &bank.latent(i)?)?[0]);
        }
        let (mean, std) = mean_std(&logits)?;
        out.insert(attr, LogitStats { mean, std });
    }
    Ok(out)
}

/// Scalar logit of an attribute at `z`: the sole logit for binary
/// attributes; for multi-class, the logit of the class predicted at the
/// reference point (the state whose drift is being tracked).
fn scalar_logit(scorer: &Scorer, attr: &str, z: &Vector, reference_z: &Vector) -> Result<f64> {
    let logits = scorer.logits(attr, z)?;
    if logits.len() == 1 {
        Ok(logits[0])
    } else {
        let class = scorer.label(attr, reference_z)?;
        Ok(logits[class])
    }
}

/// Fraction of trajectories per target attribute where the target label
/// flipped to the requested state and every other listed attribute's
/// label stayed put, judged by the scorer at the first and last step.
///
/// `attrs` is the measured set: side effects are checked against all of
/// them, and the result has one entry per listed attribute that is the
/// target of at least one trajectory. An empty result is a missing-data
/// error.
pub fn manipulation_accuracy(
    run: &EvalRun,
    attrs: &[String],
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for target in attrs {
        let records: Vec<&TrajectoryRecord> = run
            .records
            .iter()
            .filter(|r| &r.target_attr == target)
            .collect();
        if records.is_empty() {
            continue;
        }
        let mut successes = 0usize;
        for record in &records {
            let first = &record.trajectory.first().z;
            let last = &record.trajectory.last().z;

            let before = run.scorer.label(target, first)?;
            let after = run.scorer.label(target, last)?;
            let target_flipped = if run.scorer.is_binary(target)? {
                after != before
            } else {
                after != before && after == record.target_class
            };

            let mut side_effect = false;
            for other in attrs {
                if other == target {
                    continue;
                }
                if run.scorer.label(other, first)? != run.scorer.label(other, last)? {
                    side_effect = true;
                    break;
                }
            }
            if target_flipped && !side_effect {
                successes += 1;
            }
        }
        out.insert(target.clone(), successes as f64 / records.len() as f64);
    }
    if out.is_empty() {
        return Err(Error::MissingData(format!(
            "no trajectories target any of {attrs:?}"
        )));
    }
    Ok(out)
}

/// One bin of an attribute-dependency curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdBin {
    pub x_center: f64,
    /// Mean of (1/(|A|-1)) sum |dl_i| / sigma_i over the bin (default
    /// absolute-value form).
    pub mean_ad: f64,
    /// Same mean without the absolute value, kept for comparison since
    /// signed drifts can cancel.
    pub mean_ad_signed: f64,
    pub count: usize,
}

/// Attribute-dependency curve: mean normalized non-target drift, binned
/// by normalized target logit change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdCurve {
    pub target: String,
    pub bins: Vec<AdBin>,
}

impl AdCurve {
    /// CSV export with a header row, one line per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_center,mean_ad,count\n");
        for bin in &self.bins {
            writeln!(out, "{},{},{}", bin.x_center, bin.mean_ad, bin.count)
                .expect("string write");
        }
        out
    }
}

/// Number of uniform bins used when no explicit edges are given.
pub const DEFAULT_AD_BINS: usize = 8;

/// Computes the attribute-dependency curve for one binary target.
///
/// Per trajectory: x = dl_target / sigma_target and
/// ad = (1/(|A|-1)) * sum over other binary attributes of |dl_i| / sigma_i,
/// where dl is the scorer logit change between the first and last step
/// and sigma is the bank normalizer. Trajectories are grouped into bins
/// over x (`bin_edges`, or uniform bins over the observed range) and ad
/// is averaged per bin; empty bins are dropped.
pub fn attribute_dependency(
    run: &EvalRun,
    target: &str,
    bin_edges: Option<&[f64]>,
) -> Result<AdCurve> {
    if !run.scorer.is_binary(target)? {
        return Err(Error::InvalidArgument(format!(
            "attribute dependency needs a binary target, {target:?} is multi-class"
        )));
    }
    let others: Vec<String> = run
        .binary_attrs()?
        .into_iter()
        .filter(|id| id != target)
        .collect();
    if others.is_empty() {
        return Err(Error::MissingData(
            "attribute dependency needs at least one non-target binary attribute".into(),
        ));
    }
    let records: Vec<&TrajectoryRecord> = run
        .records
        .iter()
        .filter(|r| r.target_attr == target)
        .collect();
    if records.is_empty() {
        return Err(Error::MissingData(format!(
            "no trajectories target attribute {target:?}"
        )));
    }

    let sigma_target = run.sigma(target)?;
    let mut points = Vec::with_capacity(records.len());
    for record in &records {
        let first = &record.trajectory.first().z;
        let last = &record.trajectory.last().z;
        let x = (run.scorer.logits(target, last)?[0] - run.scorer.logits(target, first)?[0])
            / sigma_target;
        let mut ad_abs = 0.0;
        let mut ad_signed = 0.0;
        for other in &others {
            let delta = (run.scorer.logits(other, last)?[0]
                - run.scorer.logits(other, first)?[0])
                / run.sigma(other)?;
            ad_abs += delta.abs();
            ad_signed += delta;
        }
        ad_abs /= others.len() as f64;
        ad_signed /= others.len() as f64;
        points.push((x, ad_abs, ad_signed));
    }

    let edges: Vec<f64> = match bin_edges {
        Some(edges) => {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(
                    "bin edges must be ascending with at least two entries".into(),
                ));
            }
            edges.to_vec()
        }
        None => {
            let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
            let width = (hi - lo) / DEFAULT_AD_BINS as f64;
            (0..=DEFAULT_AD_BINS).map(|i| lo + width * i as f64).collect()
        }
    };

    let nbins = edges.len() - 1;
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); nbins];
    for &(x, ad, ads) in &points {
        if x < edges[0] || x > edges[nbins] {
            continue;
        }
        let mut bin = match edges.windows(2).position(|w| x >= w[0] && x < w[1]) {
            Some(b) => b,
            // Right edge of the last bin is inclusive.
            None => nbins - 1,
        };
        if bin >= nbins {
            bin = nbins - 1;
        }
        sums[bin].0 += ad;
        sums[bin].1 += ads;
        sums[bin].2 += 1;
    }

    let bins: Vec<AdBin> = sums
        .into_iter()
        .enumerate()
        .filter(|(_, (_, _, count))| *count > 0)
        .map(|(i, (ad, ads, count))| AdBin {
            x_center: 0.5 * (edges[i] + edges[i + 1]),
            mean_ad: ad / count as f64,
            mean_ad_signed: ads / count as f64,
            count,
        })
        .collect();

    Ok(AdCurve {
        target: target.to_string(),
        bins,
    })
}

/// Start/end logit pair of one trajectory for two attributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub start: (f64, f64),
    pub end: (f64, f64),
}

/// Start/end logit pairs for every trajectory, for slope-style
/// disentanglement plots (x: target-ish attribute, y: a non-target).
pub fn logit_scatter(
    run: &EvalRun,
    attr_x: &str,
    attr_y: &str,
) -> Result<Vec<ScatterPoint>> {
    let mut out = Vec::with_capacity(run.records.len());
    for record in &run.records {
        let first = &record.trajectory.first().z;
        let last = &record.trajectory.last().z;
        out.push(ScatterPoint {
            start: (
                scalar_logit(&run.scorer, attr_x, first, first)?,
                scalar_logit(&run.scorer, attr_y, first, first)?,
            ),
            end: (
                scalar_logit(&run.scorer, attr_x, last, first)?,
                scalar_logit(&run.scorer, attr_y, last, first)?,
            ),
        });
    }
    Ok(out)
}

/// Full metrics bundle; serializes to the metrics JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scorer: String,
    pub accuracy: BTreeMap<String, f64>,
    pub ad_curves: BTreeMap<String, AdCurve>,
    pub scatter: Vec<ScatterPoint>,
}
