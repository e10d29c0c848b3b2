//! Semantic control directions and disentangled latent interpolation.
//!
//! A control direction at a latent code is a row of the target
//! classifier's input-Jacobian: the locally steepest direction for that
//! attribute's score. Because the classifiers are nonlinear, the
//! direction is recomputed at every step, tracing a curve through a
//! nonlinear vector field rather than a straight line.
//!
//! Disentanglement works by exclusion: for each attribute the edit must
//! not touch, rank channels by the absolute value of that attribute's
//! own gradient (its saliency) and zero the top-c channels out of the
//! target direction. Saliency uses |.| rather than a ReLU because
//! negatively influential channels carry just as much semantic weight.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::classifier::{label_from_logits, AttributeClassifier};
use crate::error::{Error, Result};
use crate::numeric::{l2_norm, Vector};

/// Direction norms below this stop a manipulation as vanished.
pub const VANISHING_NORM: f64 = 1e-12;

/// Exclusion request for one entangled attribute: zero the `count`
/// most salient channels of that attribute out of the target direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRule {
    pub attr: String,
    pub count: usize,
}

/// What to edit and what to protect while editing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisentangleSpec {
    pub target_attr: String,
    pub target_class: usize,
    pub entangled: Vec<ExclusionRule>,
}

impl DisentangleSpec {
    /// Unmasked spec: follow the raw gradient of one attribute class.
    pub fn raw(target_attr: impl Into<String>, target_class: usize) -> Self {
        Self {
            target_attr: target_attr.into(),
            target_class,
            entangled: Vec::new(),
        }
    }

    pub fn exclude(mut self, attr: impl Into<String>, count: usize) -> Self {
        self.entangled.push(ExclusionRule {
            attr: attr.into(),
            count,
        });
        self
    }

    /// Same rules with every exclusion count replaced by `count`.
    pub fn with_uniform_count(&self, count: usize) -> Self {
        Self {
            target_attr: self.target_attr.clone(),
            target_class: self.target_class,
            entangled: self
                .entangled
                .iter()
                .map(|rule| ExclusionRule {
                    attr: rule.attr.clone(),
                    count,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entangled.iter().any(|r| r.attr == self.target_attr) {
            return Err(Error::InvalidArgument(format!(
                "target {:?} cannot appear in its own entangled list",
                self.target_attr
            )));
        }
        Ok(())
    }
}

/// When the exclusion set is recomputed during a manipulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Recompute the exclusion set at every step (default; consistent
    /// with recomputing the direction itself).
    Refresh,
    /// Compute the exclusion set once at the starting point.
    Frozen,
}

impl Default for MaskMode {
    fn default() -> Self {
        MaskMode::Refresh
    }
}

/// Interpolation step policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepPolicy {
    /// Signed step size: the sign selects the direction of semantic
    /// change (increase vs decrease).
    pub alpha: f64,
    pub max_steps: usize,
    /// Normalize the (masked) direction to unit length before stepping,
    /// so |alpha| is the exact step length. Raw-gradient stepping stays
    /// available by turning this off.
    pub normalize: bool,
    pub stop_on_boundary: bool,
    /// Editable dimensions; everything else is held fixed. Stands in for
    /// layer-wise edits, with layers mapped to dimension blocks.
    pub dim_mask: Option<BTreeSet<usize>>,
    pub mask_mode: MaskMode,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            max_steps: 200,
            normalize: true,
            stop_on_boundary: true,
            dim_mask: None,
            mask_mode: MaskMode::Refresh,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be >= 1".into()));
        }
        if self.alpha == 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(
                "alpha must be finite and nonzero".into(),
            ));
        }
        Ok(())
    }

    fn check_mask(&self, dim: usize) -> Result<()> {
        if let Some(mask) = &self.dim_mask {
            if let Some(&bad) = mask.iter().find(|&&i| i >= dim) {
                return Err(Error::IndexOutOfRange {
                    context: "dim_mask entry",
                    index: bad,
                    size: dim,
                });
            }
        }
        Ok(())
    }
}

/// Why a manipulation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BoundaryCrossed,
    MaxSteps,
    VanishingGradient,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::BoundaryCrossed => "boundary_crossed",
            StopReason::MaxSteps => "max_steps",
            StopReason::VanishingGradient => "vanishing_gradient",
        }
    }
}

/// One recorded state: the latent code and every observer's logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub z: Vector,
    pub logits: BTreeMap<String, Vector>,
}

/// Ordered record of a manipulation, starting at the origin point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub stop_reason: StopReason,
}

impl Trajectory {
    pub fn first(&self) -> &TrajectoryStep {
        &self.steps[0]
    }

    pub fn last(&self) -> &TrajectoryStep {
        self.steps.last().expect("trajectory has >= 1 step")
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A trajectory tagged with what it was trying to edit; the unit the
/// evaluation protocols consume, and what trajectory files store.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub target_attr: String,
    pub target_class: usize,
    pub trajectory: Trajectory,
}

#[derive(Serialize, Deserialize)]
struct StepLine {
    step: usize,
    z: Vector,
    logits: BTreeMap<String, Vector>,
}

#[derive(Serialize, Deserialize)]
struct FinalLine {
    stop_reason: StopReason,
    target_attr: String,
    target_class: usize,
}

impl TrajectoryRecord {
    /// JSON Lines export: one line per step, then a final line with the
    /// stop reason and target metadata. Field order is fixed.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, step) in self.trajectory.steps.iter().enumerate() {
            let line = StepLine {
                step: i,
                z: step.z.clone(),
                logits: step.logits.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("step serializes"));
            out.push('\n');
        }
        let fin = FinalLine {
            stop_reason: self.trajectory.stop_reason,
            target_attr: self.target_attr.clone(),
            target_class: self.target_class,
        };
        out.push_str(&serde_json::to_string(&fin).expect("final line serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() < 2 {
            return Err(Error::Format {
                offset: 0,
                message: "trajectory needs at least one step line and a final line".into(),
            });
        }
        let mut steps = Vec::with_capacity(lines.len() - 1);
        for (i, line) in lines[..lines.len() - 1].iter().enumerate() {
            let parsed: StepLine = serde_json::from_str(line).map_err(|e| Error::Format {
                offset: i as u64,
                message: format!("step line {i}: {e}"),
            })?;
            if parsed.step != i {
                return Err(Error::Format {
                    offset: i as u64,
                    message: format!("step index {} at line {i}", parsed.step),
                });
            }
            steps.push(TrajectoryStep {
                z: parsed.z,
                logits: parsed.logits,
            });
        }
        let last = lines[lines.len() - 1];
        let fin: FinalLine = serde_json::from_str(last).map_err(|e| Error::Format {
            offset: (lines.len() - 1) as u64,
            message: format!("final line: {e}"),
        })?;
        Ok(Self {
            target_attr: fin.target_attr,
            target_class: fin.target_class,
            trajectory: Trajectory {
                steps,
                stop_reason: fin.stop_reason,
            },
        })
    }
}

/// Channel saliency of a gradient: elementwise absolute value.
pub fn saliency(n: &Vector) -> Vector {
    Vector::from(n.iter().map(|x| x.abs()).collect::<Vec<_>>())
}

/// Indices of the top-`c` saliency values, tie-inclusive: with `t` the
/// c-th largest value, every index with saliency >= t is returned, so
/// ties at the threshold can enlarge the set beyond `c`.
pub fn top_c_dims(l: &Vector, c: usize) -> Result<BTreeSet<usize>> {
    if c > l.len() {
        return Err(Error::CountOutOfRange {
            context: "top_c_dims",
            requested: c,
            available: l.len(),
        });
    }
    if c == 0 {
        return Ok(BTreeSet::new());
    }
    let mut sorted: Vec<f64> = l.as_slice().to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("saliency is finite"));
    let threshold = sorted[c - 1];
    Ok(l.iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .map(|(i, _)| i)
        .collect())
}

fn find_classifier<'a>(
    pool: &[&'a AttributeClassifier],
    attr: &str,
) -> Result<&'a AttributeClassifier> {
    pool.iter()
        .find(|clf| clf.attr.id == attr)
        .copied()
        .ok_or_else(|| Error::UnknownAttribute(attr.to_string()))
}

/// Gradient row used to score an entangled attribute's saliency: the
/// sole row for binary attributes, the currently predicted class's row
/// otherwise (the state the edit must not disturb).
fn entangled_gradient(clf: &AttributeClassifier, z: &Vector) -> Result<Vector> {
    let row = if clf.attr.is_binary() {
        0
    } else {
        label_from_logits(&clf.forward(z)?)
    };
    clf.gradient_row(z, row)
}

/// Union of tie-inclusive top-c saliency sets over the spec's entangled
/// attributes, evaluated at `z`.
pub fn exclusion_set(
    z: &Vector,
    entangled_clfs: &[&AttributeClassifier],
    spec: &DisentangleSpec,
) -> Result<BTreeSet<usize>> {
    spec.validate()?;
    let mut excluded = BTreeSet::new();
    for rule in &spec.entangled {
        let clf = find_classifier(entangled_clfs, &rule.attr)?;
        let grad = entangled_gradient(clf, z)?;
        excluded.extend(top_c_dims(&saliency(&grad), rule.count)?);
    }
    Ok(excluded)
}

/// Target-attribute control direction with entangled attributes' salient
/// channels zeroed out. Unmasked channels keep the raw gradient values
/// bit for bit.
pub fn disentangled_direction(
    z: &Vector,
    target_clf: &AttributeClassifier,
    target_class: usize,
    entangled_clfs: &[&AttributeClassifier],
    spec: &DisentangleSpec,
) -> Result<Vector> {
    check_spec_consistency(target_clf, target_class, spec)?;
    let mut direction = target_clf.gradient_row(z, target_class)?;
    let excluded = exclusion_set(z, entangled_clfs, spec)?;
    apply_exclusions(&mut direction, &excluded);
    Ok(direction)
}

fn check_spec_consistency(
    target_clf: &AttributeClassifier,
    target_class: usize,
    spec: &DisentangleSpec,
) -> Result<()> {
    if spec.target_attr != target_clf.attr.id {
        return Err(Error::InvalidArgument(format!(
            "spec targets {:?} but classifier scores {:?}",
            spec.target_attr, target_clf.attr.id
        )));
    }
    if spec.target_class != target_class {
        return Err(Error::InvalidArgument(format!(
            "spec target class {} differs from requested {}",
            spec.target_class, target_class
        )));
    }
    Ok(())
}

fn apply_exclusions(direction: &mut Vector, excluded: &BTreeSet<usize>) {
    for &i in excluded {
        direction[i] = 0.0;
    }
}

/// One interpolation step: restrict the direction to the policy's
/// editable dimensions, optionally normalize, then move by alpha.
pub fn step(z: &Vector, n: &Vector, policy: &StepPolicy) -> Result<Vector> {
    policy.validate()?;
    if z.len() != n.len() {
        return Err(Error::Dimension {
            context: "step direction",
            expected: z.len(),
            actual: n.len(),
        });
    }
    policy.check_mask(z.len())?;
    let mut direction = restrict_to_mask(n, policy);
    if policy.normalize {
        let norm = l2_norm(&direction);
        if norm == 0.0 {
            return Err(Error::VanishingGradient { norm });
        }
        direction = direction.scale(1.0 / norm);
    }
    z.add(&direction.scale(policy.alpha))
}

fn restrict_to_mask(n: &Vector, policy: &StepPolicy) -> Vector {
    match &policy.dim_mask {
        None => n.clone(),
        Some(mask) => {
            let mut out = Vector::zeros(n.len());
            for &i in mask {
                out[i] = n[i];
            }
            out
        }
    }
}

/// Whether the target attribute has reached the requested state:
/// for binary attributes the logit sign matches the direction alpha
/// pushes it (positive alpha raises the score), for multi-class the
/// argmax equals the target class.
fn boundary_reached(logits: &Vector, target_class: usize, alpha: f64) -> bool {
    if logits.len() == 1 {
        if alpha > 0.0 {
            logits[0] > 0.0
        } else {
            logits[0] < 0.0
        }
    } else {
        label_from_logits(logits) == target_class
    }
}

fn record_step(z: &Vector, observers: &[&AttributeClassifier]) -> Result<TrajectoryStep> {
    let mut logits = BTreeMap::new();
    for clf in observers {
        logits.insert(clf.attr.id.clone(), clf.forward(z)?);
    }
    Ok(TrajectoryStep {
        z: z.clone(),
        logits,
    })
}

/// Iterative nonlinear interpolation: recompute the (masked) control
/// direction at the current point, step, record all observers' logits,
/// and stop on boundary crossing, max_steps, or a vanished direction.
///
/// `observers` must include the target classifier; its logits drive the
/// stopping rule.
pub fn manipulate(
    z0: &Vector,
    target_clf: &AttributeClassifier,
    target_class: usize,
    entangled_clfs: &[&AttributeClassifier],
    spec: &DisentangleSpec,
    policy: &StepPolicy,
    observers: &[&AttributeClassifier],
) -> Result<Trajectory> {
    policy.validate()?;
    check_spec_consistency(target_clf, target_class, spec)?;
    if find_classifier(observers, &target_clf.attr.id).is_err() {
        return Err(Error::MissingData(format!(
            "observers must include the target attribute {:?}",
            target_clf.attr.id
        )));
    }
    policy.check_mask(z0.len())?;

    let frozen_exclusions = match policy.mask_mode {
        MaskMode::Frozen => Some(exclusion_set(z0, entangled_clfs, spec)?),
        MaskMode::Refresh => None,
    };

    let mut z = z0.clone();
    let mut steps = vec![record_step(&z, observers)?];
    let crossed = |steps: &[TrajectoryStep]| -> bool {
        let logits = &steps.last().expect("nonempty").logits[&target_clf.attr.id];
        boundary_reached(logits, target_class, policy.alpha)
    };

    if policy.stop_on_boundary && crossed(&steps) {
        return Ok(Trajectory {
            steps,
            stop_reason: StopReason::BoundaryCrossed,
        });
    }

    for _ in 0..policy.max_steps {
        let mut direction = target_clf.gradient_row(&z, target_class)?;
        match &frozen_exclusions {
            Some(excluded) => apply_exclusions(&mut direction, excluded),
            None => {
                let excluded = exclusion_set(&z, entangled_clfs, spec)?;
                apply_exclusions(&mut direction, &excluded);
            }
        }
        let effective = restrict_to_mask(&direction, policy);
        if l2_norm(&effective) < VANISHING_NORM {
            return Ok(Trajectory {
                steps,
                stop_reason: StopReason::VanishingGradient,
            });
        }
        z = step(&z, &direction, policy)?;
        steps.push(record_step(&z, observers)?);
        if policy.stop_on_boundary && crossed(&steps) {
            return Ok(Trajectory {
                steps,
                stop_reason: StopReason::BoundaryCrossed,
            });
        }
    }

    Ok(Trajectory {
        steps,
        stop_reason: StopReason::MaxSteps,
    })
}

/// Runs one manipulation per exclusion count, with that count applied
/// uniformly to every entangled attribute in the spec. Returns
/// trajectories keyed by count, in ascending order.
pub fn sweep_exclusion_counts(
    z0: &Vector,
    target_clf: &AttributeClassifier,
    target_class: usize,
    entangled_clfs: &[&AttributeClassifier],
    base_spec: &DisentangleSpec,
    counts_grid: &[usize],
    policy: &StepPolicy,
    observers: &[&AttributeClassifier],
) -> Result<BTreeMap<usize, Trajectory>> {
    if counts_grid.is_empty() {
        return Err(Error::EmptyInput("counts grid"));
    }
    let counts: BTreeSet<usize> = counts_grid.iter().copied().collect();
    let mut out = BTreeMap::new();
    for count in counts {
        let spec = base_spec.with_uniform_count(count);
        let trajectory = manipulate(
            z0,
            target_clf,
            target_class,
            entangled_clfs,
            &spec,
            policy,
            observers,
        )?;
        out.insert(count, trajectory);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Architecture, AttributeSpec};
    use crate::numeric::{dot, gaussian_sample, Matrix, RngState};

    /// Near-linear classifier realizing logit ~ gain * (w . z) + offset,
    /// with gradient support exactly equal to support(w): one hidden
    /// unit per layer, weights scaled into tanh's near-identity range.
    fn linearish(id: &str, w: &[f64], offset: f64) -> AttributeClassifier {
        let d = w.len();
        let mut clf = AttributeClassifier::zeroed(AttributeSpec::binary(id), d, 1);
        for (i, &wi) in w.iter().enumerate() {
            clf.w1.set(0, i, 0.01 * wi);
        }
        clf.w2 = Matrix::identity(1);
        clf.w_out.set(0, 0, 100.0);
        clf.b_out[0] = offset;
        clf
    }

    fn multiclass_quadrant(id: &str) -> AttributeClassifier {
        // Four near-linear logits on channels 0 and 1: +z0, +z1, -z0, -z1.
        let attr =
            AttributeSpec::new(id, 4, (0..4).map(|i| format!("c{i}")).collect()).unwrap();
        let mut clf = AttributeClassifier::zeroed(attr, 4, 4);
        clf.architecture = Architecture::OneHidden;
        for i in 0..4 {
            let (ch, sign) = [(0, 1.0), (1, 1.0), (0, -1.0), (1, -1.0)][i];
            clf.w1.set(i, ch, 0.01 * sign);
            clf.w_out.set(i, i, 100.0);
        }
        clf
    }

    #[test]
    fn saliency_is_absolute_value() {
        let s = saliency(&Vector::from(vec![-3.0, 0.0, 2.0]));
        assert_eq!(s, Vector::from(vec![3.0, 0.0, 2.0]));
        assert_eq!(saliency(&Vector::zeros(4)), Vector::zeros(4));

        let mut rng = RngState::new(1);
        let v = gaussian_sample(&mut rng, 32).unwrap();
        let s = saliency(&v);
        for i in 0..32 {
            assert_eq!(s[i], v[i].abs());
        }
    }

    #[test]
    fn top_c_hand_cases() {
        let l = Vector::from(vec![1.0, 5.0, 3.0]);
        assert_eq!(top_c_dims(&l, 1).unwrap(), BTreeSet::from([1]));

        // Threshold rule includes ties.
        let tied = Vector::from(vec![2.0, 2.0, 1.0]);
        assert_eq!(top_c_dims(&tied, 1).unwrap(), BTreeSet::from([0, 1]));

        assert_eq!(top_c_dims(&l, 0).unwrap(), BTreeSet::new());
        assert!(matches!(
            top_c_dims(&l, 4),
            Err(Error::CountOutOfRange { .. })
        ));
    }

    #[test]
    fn top_c_matches_counting_oracle() {
        // Oracle: find the threshold by repeated max-extraction rather
        // than sorting, then collect by comparison.
        let mut rng = RngState::new(2);
        let l = saliency(&gaussian_sample(&mut rng, 512).unwrap());
        for c in [1, 7, 100, 512] {
            let mut remaining: Vec<f64> = l.as_slice().to_vec();
            let mut threshold = f64::INFINITY;
            for _ in 0..c {
                let (pos, _) = remaining.iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &v)| {
                        if v > acc.1 {
                            (i, v)
                        } else {
                            acc
                        }
                    },
                );
                threshold = remaining.swap_remove(pos);
            }
            let expected: BTreeSet<usize> = l
                .iter()
                .enumerate()
                .filter(|(_, &v)| v >= threshold)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(top_c_dims(&l, c).unwrap(), expected, "c = {c}");
        }
    }

    #[test]
    fn empty_entangled_list_returns_raw_gradient() {
        let target = linearish("t", &[1.0, -2.0, 0.5, 0.0], 0.0);
        let z = Vector::from(vec![0.3, -0.1, 0.2, 0.9]);
        let spec = DisentangleSpec::raw("t", 0);
        let masked = disentangled_direction(&z, &target, 0, &[], &spec).unwrap();
        let raw = target.gradient_row(&z, 0).unwrap();
        for i in 0..4 {
            assert_eq!(masked[i].to_bits(), raw[i].to_bits());
        }
    }

    #[test]
    fn full_exclusion_zeroes_everything() {
        let target = linearish("t", &[1.0, -2.0, 0.5, 0.25], 0.0);
        let confound = linearish("c", &[0.5, 1.0, -1.0, 2.0], 0.0);
        let z = Vector::from(vec![0.3, -0.1, 0.2, 0.9]);
        let spec = DisentangleSpec::raw("t", 0).exclude("c", 4);
        let masked = disentangled_direction(&z, &target, 0, &[&confound], &spec).unwrap();
        assert_eq!(masked, Vector::zeros(4));
    }

    #[test]
    fn block_confound_is_zeroed_exactly() {
        // Target reads channels 0..9 (leaking into the confound's block);
        // the confound lives exactly on channels 6..12. Excluding
        // c = block size must zero exactly that block and reduce the
        // confound's score drift per unit step.
        let d = 12;
        let mut wt = vec![0.0; d];
        for (i, w) in wt.iter_mut().enumerate().take(9) {
            *w = 1.0 + 0.1 * i as f64;
        }
        let mut wc = vec![0.0; d];
        for i in 6..12 {
            wc[i] = if i % 2 == 0 { 0.8 } else { -1.2 };
        }
        let target = linearish("t", &wt, 0.0);
        let confound = linearish("c", &wc, 0.0);
        let z = Vector::from(vec![0.1; 12]);

        let spec = DisentangleSpec::raw("t", 0).exclude("c", 6);
        let masked = disentangled_direction(&z, &target, 0, &[&confound], &spec).unwrap();
        let raw = target.gradient_row(&z, 0).unwrap();
        for i in 0..6 {
            assert_eq!(masked[i].to_bits(), raw[i].to_bits(), "channel {i}");
        }
        for i in 6..12 {
            assert_eq!(masked[i], 0.0, "channel {i}");
        }

        // Confound drift along the unit direction drops to zero.
        let conf_grad = confound.gradient_row(&z, 0).unwrap();
        let drift = |dir: &Vector| (dot(&conf_grad, dir).unwrap() / l2_norm(dir)).abs();
        assert!(drift(&raw) > 0.1);
        assert!(drift(&masked) < 1e-12);
    }

    #[test]
    fn unknown_entangled_attribute_errors() {
        let target = linearish("t", &[1.0, 0.0], 0.0);
        let z = Vector::from(vec![0.1, 0.2]);
        let spec = DisentangleSpec::raw("t", 0).exclude("ghost", 1);
        assert!(matches!(
            disentangled_direction(&z, &target, 0, &[], &spec),
            Err(Error::UnknownAttribute(_))
        ));
    }

    #[test]
    fn exclusion_set_union_is_monotone() {
        let a = linearish("a", &[1.0, 2.0, 0.0, 0.0], 0.0);
        let b = linearish("b", &[0.0, 0.0, 3.0, 1.0], 0.0);
        let z = Vector::from(vec![0.2, 0.1, -0.3, 0.4]);
        let one =
            exclusion_set(&z, &[&a, &b], &DisentangleSpec::raw("t", 0).exclude("a", 1)).unwrap();
        let both = exclusion_set(
            &z,
            &[&a, &b],
            &DisentangleSpec::raw("t", 0).exclude("a", 1).exclude("b", 2),
        )
        .unwrap();
        assert!(one.is_subset(&both));
    }

    #[test]
    fn step_unit_basis_with_normalization() {
        let z = Vector::zeros(5);
        let n = Vector::basis(5, 0).unwrap().scale(7.0);
        let policy = StepPolicy {
            alpha: 0.6,
            ..StepPolicy::default()
        };
        let z1 = step(&z, &n, &policy).unwrap();
        assert_eq!(z1, Vector::from(vec![0.6, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn step_mask_annihilating_direction_is_vanishing_error() {
        let z = Vector::zeros(3);
        let n = Vector::basis(3, 1).unwrap();
        let policy = StepPolicy {
            dim_mask: Some(BTreeSet::from([0])),
            ..StepPolicy::default()
        };
        assert!(matches!(
            step(&z, &n, &policy),
            Err(Error::VanishingGradient { .. })
        ));
    }

    #[test]
    fn step_raw_mode_is_literal_addition() {
        let z = Vector::from(vec![1.0, 2.0]);
        let n = Vector::from(vec![0.25, -0.5]);
        let policy = StepPolicy {
            alpha: 1.0,
            normalize: false,
            ..StepPolicy::default()
        };
        assert_eq!(
            step(&z, &n, &policy).unwrap(),
            Vector::from(vec![1.25, 1.5])
        );
    }

    #[test]
    fn step_rejects_zero_alpha() {
        let policy = StepPolicy {
            alpha: 0.0,
            ..StepPolicy::default()
        };
        assert!(step(&Vector::zeros(2), &Vector::zeros(2), &policy).is_err());
    }

    fn far_start(target: &AttributeClassifier, d: usize, logit_sign: f64) -> Vector {
        // Walk along the raw gradient until the logit is comfortably on
        // the requested side.
        let mut z = Vector::zeros(d);
        let policy = StepPolicy {
            alpha: logit_sign * 2.0,
            normalize: true,
            ..StepPolicy::default()
        };
        for _ in 0..20 {
            let g = target.gradient_row(&z, 0).unwrap();
            z = step(&z, &g, &policy).unwrap();
        }
        z
    }

    #[test]
    fn already_crossed_start_is_single_step() {
        let target = linearish("t", &[1.0, 0.5, 0.0, 0.0], 0.0);
        let z0 = far_start(&target, 4, 1.0);
        assert!(target.forward(&z0).unwrap()[0] > 0.0);
        let spec = DisentangleSpec::raw("t", 0);
        let traj =
            manipulate(&z0, &target, 0, &[], &spec, &StepPolicy::default(), &[&target]).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.stop_reason, StopReason::BoundaryCrossed);
    }

    #[test]
    fn target_logit_is_monotone_under_ascent() {
        let target = linearish("t", &[1.0, -0.7, 0.3, 0.2], 0.0);
        let z0 = far_start(&target, 4, -1.0);
        let spec = DisentangleSpec::raw("t", 0);
        let policy = StepPolicy {
            alpha: 0.6,
            max_steps: 500,
            ..StepPolicy::default()
        };
        let traj = manipulate(&z0, &target, 0, &[], &spec, &policy, &[&target]).unwrap();
        assert_eq!(traj.stop_reason, StopReason::BoundaryCrossed);
        assert!(traj.len() > 2);
        let logits: Vec<f64> = traj.steps.iter().map(|s| s.logits["t"][0]).collect();
        for pair in logits.windows(2) {
            assert!(pair[1] > pair[0], "{pair:?}");
        }
    }

    #[test]
    fn max_steps_yields_exact_step_count() {
        let target = linearish("t", &[1.0, 0.0, 0.0, 0.0], 0.0);
        let z0 = far_start(&target, 4, -1.0);
        let policy = StepPolicy {
            alpha: 0.01,
            max_steps: 5,
            ..StepPolicy::default()
        };
        let traj = manipulate(
            &z0,
            &target,
            0,
            &[],
            &DisentangleSpec::raw("t", 0),
            &policy,
            &[&target],
        )
        .unwrap();
        assert_eq!(traj.len(), 6);
        assert_eq!(traj.stop_reason, StopReason::MaxSteps);
    }

    #[test]
    fn consecutive_points_are_alpha_apart() {
        let target = linearish("t", &[1.0, -0.7, 0.3, 0.2], 0.1);
        let z0 = Vector::from(vec![-1.0, 0.5, 0.0, 0.25]);
        let policy = StepPolicy {
            alpha: 0.6,
            max_steps: 30,
            stop_on_boundary: false,
            ..StepPolicy::default()
        };
        let traj = manipulate(
            &z0,
            &target,
            0,
            &[],
            &DisentangleSpec::raw("t", 0),
            &policy,
            &[&target],
        )
        .unwrap();
        for pair in traj.steps.windows(2) {
            let gap = l2_norm(&pair[1].z.sub(&pair[0].z).unwrap());
            assert!((gap - 0.6).abs() < 1e-10, "gap {gap}");
        }
    }

    #[test]
    fn ascent_directional_derivative_is_nonnegative() {
        let target = linearish("t", &[1.0, -0.7, 0.3, 0.2], 0.0);
        let z0 = Vector::from(vec![-0.4, 0.2, 0.1, -0.3]);
        let policy = StepPolicy {
            alpha: 0.3,
            max_steps: 20,
            stop_on_boundary: false,
            ..StepPolicy::default()
        };
        let traj = manipulate(
            &z0,
            &target,
            0,
            &[],
            &DisentangleSpec::raw("t", 0),
            &policy,
            &[&target],
        )
        .unwrap();
        for s in &traj.steps {
            let g = target.gradient_row(&s.z, 0).unwrap();
            let norm = l2_norm(&g);
            if norm > 0.0 {
                let dd = dot(&g, &g.scale(1.0 / norm)).unwrap();
                assert!(dd >= 0.0);
            }
        }
    }

    #[test]
    fn vanishing_direction_stops_trajectory() {
        // Masking the confound with c = d kills the whole direction.
        let target = linearish("t", &[1.0, 1.0], 0.0);
        let confound = linearish("c", &[1.0, 1.0], 0.0);
        let z0 = Vector::from(vec![-1.0, -1.0]);
        let spec = DisentangleSpec::raw("t", 0).exclude("c", 2);
        let traj = manipulate(
            &z0,
            &target,
            0,
            &[&confound],
            &spec,
            &StepPolicy::default(),
            &[&target],
        )
        .unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.stop_reason, StopReason::VanishingGradient);
    }

    #[test]
    fn observers_must_include_target() {
        let target = linearish("t", &[1.0, 0.0], 0.0);
        let other = linearish("o", &[0.0, 1.0], 0.0);
        let z0 = Vector::zeros(2);
        let err = manipulate(
            &z0,
            &target,
            0,
            &[],
            &DisentangleSpec::raw("t", 0),
            &StepPolicy::default(),
            &[&other],
        );
        assert!(matches!(err, Err(Error::MissingData(_))));
    }

    #[test]
    fn multiclass_boundary_is_argmax() {
        let clf = multiclass_quadrant("m");
        // Start deep in class 2 (negative channel 0), drive toward class 0.
        let z0 = Vector::from(vec![-3.0, 0.5, 0.0, 0.0]);
        let policy = StepPolicy {
            alpha: 0.5,
            max_steps: 100,
            ..StepPolicy::default()
        };
        let traj = manipulate(
            &z0,
            &clf,
            0,
            &[],
            &DisentangleSpec::raw("m", 0),
            &policy,
            &[&clf],
        )
        .unwrap();
        assert_eq!(traj.stop_reason, StopReason::BoundaryCrossed);
        let final_logits = &traj.last().logits["m"];
        assert_eq!(label_from_logits(final_logits), 0);
    }

    #[test]
    fn sweep_zero_count_equals_unmasked() {
        let target = linearish("t", &[1.0, 0.3, -0.2, 0.0], 0.0);
        let confound = linearish("c", &[0.0, 1.0, 1.0, 1.0], 0.0);
        let z0 = Vector::from(vec![-0.8, 0.1, 0.0, 0.2]);
        let spec = DisentangleSpec::raw("t", 0).exclude("c", 99);
        let policy = StepPolicy {
            alpha: 0.2,
            max_steps: 50,
            ..StepPolicy::default()
        };
        let sweep = sweep_exclusion_counts(
            &z0,
            &target,
            0,
            &[&confound],
            &spec,
            &[0],
            &policy,
            &[&target],
        )
        .unwrap();
        let unmasked = manipulate(
            &z0,
            &target,
            0,
            &[&confound],
            &DisentangleSpec::raw("t", 0),
            &policy,
            &[&target],
        )
        .unwrap();
        assert_eq!(sweep[&0], unmasked);
    }

    #[test]
    fn sweep_boundary_counts() {
        let target = linearish("t", &[1.0, 1.0], 0.0);
        let confound = linearish("c", &[1.0, 1.0], 0.0);
        let z0 = Vector::from(vec![-1.0, -1.0]);
        let spec = DisentangleSpec::raw("t", 0).exclude("c", 1);
        let policy = StepPolicy {
            alpha: 0.4,
            max_steps: 50,
            ..StepPolicy::default()
        };
        let sweep = sweep_exclusion_counts(
            &z0,
            &target,
            0,
            &[&confound],
            &spec,
            &[0, 2],
            &policy,
            &[&target],
        )
        .unwrap();
        assert_eq!(sweep.len(), 2);
        assert_eq!(sweep[&0].stop_reason, StopReason::BoundaryCrossed);
        assert_eq!(sweep[&2].stop_reason, StopReason::VanishingGradient);

        assert!(matches!(
            sweep_exclusion_counts(
                &z0,
                &target,
                0,
                &[&confound],
                &spec,
                &[],
                &policy,
                &[&target]
            ),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn frozen_mask_keeps_origin_exclusions() {
        // With a curved confound classifier the exclusion set can change
        // along the path; frozen mode must keep using the origin's set.
        let mut rng = RngState::new(8);
        let d = 6;
        let target = linearish("t", &[1.0, 0.8, 0.6, 0.4, 0.2, 0.1], 0.0);
        let mut confound = AttributeClassifier::zeroed(AttributeSpec::binary("c"), d, 4);
        for block in [
            confound.w1.as_mut_slice(),
            confound.w2.as_mut_slice(),
            confound.w_out.as_mut_slice(),
        ] {
            for x in block.iter_mut() {
                *x = rng.uniform(-0.8, 0.8);
            }
        }
        let z0 = gaussian_sample(&mut rng, d).unwrap();
        let spec = DisentangleSpec::raw("t", 0).exclude("c", 2);
        let frozen_policy = StepPolicy {
            alpha: 0.5,
            max_steps: 8,
            stop_on_boundary: false,
            mask_mode: MaskMode::Frozen,
            ..StepPolicy::default()
        };
        let traj = manipulate(
            &z0,
            &target,
            0,
            &[&confound],
            &spec,
            &frozen_policy,
            &[&target],
        )
        .unwrap();
        // Every step must zero exactly the origin's exclusion set.
        let origin_set = exclusion_set(&z0, &[&confound], &spec).unwrap();
        for pair in traj.steps.windows(2) {
            let moved = pair[1].z.sub(&pair[0].z).unwrap();
            for &i in &origin_set {
                assert_eq!(moved[i], 0.0);
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let target = linearish("t", &[1.0, -0.5, 0.2], 0.1);
        let z0 = Vector::from(vec![-0.5, 0.3, 0.0]);
        let policy = StepPolicy {
            alpha: 0.3,
            max_steps: 4,
            stop_on_boundary: false,
            ..StepPolicy::default()
        };
        let traj = manipulate(
            &z0,
            &target,
            0,
            &[],
            &DisentangleSpec::raw("t", 0),
            &policy,
            &[&target],
        )
        .unwrap();
        let record = TrajectoryRecord {
            target_attr: "t".into(),
            target_class: 0,
            trajectory: traj,
        };
        let text = record.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), record.trajectory.len() + 1);
        assert!(lines[0].starts_with(r#"{"step":0,"z":"#));
        assert!(lines.last().unwrap().starts_with(r#"{"stop_reason":"#));

        let back = TrajectoryRecord::from_jsonl(&text).unwrap();
        assert_eq!(back, record);

        assert!(TrajectoryRecord::from_jsonl("").is_err());
        assert!(TrajectoryRecord::from_jsonl("{\"step\":0}\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn masked_dims_zero_unmasked_bit_equal(
                wt in proptest::collection::vec(-2.0f64..2.0, 8),
                wc in proptest::collection::vec(-2.0f64..2.0, 8),
                zv in proptest::collection::vec(-1.5f64..1.5, 8),
                c in 0usize..=8,
            ) {
                let target = linearish("t", &wt, 0.0);
                let confound = linearish("c", &wc, 0.0);
                let z = Vector::from(zv);
                let spec = DisentangleSpec::raw("t", 0).exclude("c", c);
                let masked =
                    disentangled_direction(&z, &target, 0, &[&confound], &spec).unwrap();
                let raw = target.gradient_row(&z, 0).unwrap();
                let excluded = exclusion_set(&z, &[&confound], &spec).unwrap();
                for i in 0..8 {
                    if excluded.contains(&i) {
                        prop_assert_eq!(masked[i], 0.0);
                    } else {
                        prop_assert_eq!(masked[i].to_bits(), raw[i].to_bits());
                    }
                }
            }

            #[test]
            fn top_c_size_bounds(
                vals in proptest::collection::vec(0.0f64..10.0, 16),
                c in 1usize..=16,
            ) {
                let l = Vector::from(vals.clone());
                let set = top_c_dims(&l, c).unwrap();
                prop_assert!(set.len() >= c);
                let distinct: BTreeSet<u64> = vals.iter().map(|v| v.to_bits()).collect();
                if distinct.len() == vals.len() {
                    prop_assert_eq!(set.len(), c);
                }
            }
        }
    }
}
