//! Latent-semantic scoring networks and their input-Jacobians.
//!
//! Each attribute gets a small fully connected network mapping a latent
//! code to pre-activation logits: one logit for binary attributes
//! (sigmoid view), one per class otherwise (softmax view). The default
//! architecture is two tanh hidden layers followed by the prediction
//! head; a one-hidden-layer variant is selectable through
//! [`TrainConfig::architecture`]. tanh keeps the input-Jacobian defined
//! everywhere, so analytic gradients can be checked against central
//! finite differences without worrying about kinks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngState, Vector};

/// Magic bytes of the classifier file format.
pub const CLASSIFIER_MAGIC: &[u8; 4] = b"GCLF";

/// Declares an attribute: its id, class count, and class names.
///
/// `num_classes == 1` means a binary attribute scored by a single logit
/// (positive logit = attribute present). Multi-class attributes carry one
/// logit per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub id: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl AttributeSpec {
    pub fn new(id: impl Into<String>, num_classes: usize, class_names: Vec<String>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be >= 1".into()));
        }
        let expected = num_classes.max(2);
        if class_names.len() != expected {
            return Err(Error::Dimension {
                context: "class names",
                expected,
                actual: class_names.len(),
            });
        }
        Ok(Self {
            id: id.into(),
            num_classes,
            class_names,
        })
    }

    /// Binary attribute with the default absent/present class names.
    pub fn binary(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            num_classes: 1,
            class_names: vec!["absent".into(), "present".into()],
        }
    }

    /// Number of distinct labels (2 for binary attributes).
    pub fn label_classes(&self) -> usize {
        self.num_classes.max(2)
    }

    pub fn is_binary(&self) -> bool {
        self.num_classes == 1
    }
}

/// Network depth variants; see module docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// Two tanh hidden layers, then the head (default).
    TwoHidden,
    /// One tanh hidden layer, then the head.
    OneHidden,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::TwoHidden
    }
}

/// A latent code paired with its attribute label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLatent {
    pub z: Vector,
    pub label: usize,
}

/// Training hyperparameters. All randomness (initialization, shuffling,
/// batching) flows from `seed`, so identical configs retrain to identical
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub examples_per_class: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_width: usize,
    pub architecture: Architecture,
    /// L2 penalty on weights; 0 disables it.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            examples_per_class: 30,
            epochs: 800,
            learning_rate: 0.05,
            batch_size: 256,
            seed: 0,
            hidden_width: 32,
            architecture: Architecture::TwoHidden,
            // Small-data regime: decay keeps irrelevant input channels
            // quiet so channel saliency reflects real support.
            weight_decay: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.examples_per_class == 0
            || self.epochs == 0
            || self.batch_size == 0
            || self.hidden_width == 0
        {
            return Err(Error::InvalidArgument(
                "train config fields must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "weight decay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Parameters of one attribute's scoring network.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeClassifier {
    pub attr: AttributeSpec,
    pub input_dim: usize,
    pub hidden_width: usize,
    pub architecture: Architecture,
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
    pub w_out: Matrix,
    pub b_out: Vector,
}

impl AttributeClassifier {
    /// Zero-initialized network of the given shape.
    pub fn zeroed(attr: AttributeSpec, input_dim: usize, hidden_width: usize) -> Self {
        let d_k = attr.num_classes;
        Self {
            attr,
            input_dim,
            hidden_width,
            architecture: Architecture::TwoHidden,
            w1: Matrix::zeros(hidden_width, input_dim),
            b1: Vector::zeros(hidden_width),
            w2: Matrix::zeros(hidden_width, hidden_width),
            b2: Vector::zeros(hidden_width),
            w_out: Matrix::zeros(d_k, hidden_width),
            b_out: Vector::zeros(d_k),
        }
    }

    pub fn num_logits(&self) -> usize {
        self.attr.num_classes
    }

    fn check_input(&self, z: &Vector) -> Result<()> {
        if z.len() != self.input_dim {
            return Err(Error::Dimension {
                context: "classifier input",
                expected: self.input_dim,
                actual: z.len(),
            });
        }
        Ok(())
    }

    /// Pre-activation logits for a latent code.
    pub fn forward(&self, z: &Vector) -> Result<Vector> {
        self.check_input(z)?;
        let h = self.hidden_width;
        let mut h1 = vec![0.0; h];
        affine_tanh(&self.w1, &self.b1, z.as_slice(), &mut h1);
        let last = match self.architecture {
            Architecture::TwoHidden => {
                let mut h2 = vec![0.0; h];
                affine_tanh(&self.w2, &self.b2, &h1, &mut h2);
                h2
            }
            Architecture::OneHidden => h1,
        };
        let mut logits = vec![0.0; self.num_logits()];
        affine(&self.w_out, &self.b_out, &last, &mut logits);
        Ok(Vector::from(logits))
    }

    /// Probability view of the logits: sigmoid for binary, softmax otherwise.
    pub fn probabilities(&self, z: &Vector) -> Result<Vector> {
        let logits = self.forward(z)?;
        Ok(if self.attr.is_binary() {
            Vector::from(vec![sigmoid(logits[0])])
        } else {
            softmax(&logits)
        })
    }

    /// Predicted label: sign test for binary, argmax otherwise.
    pub fn predict_label(&self, z: &Vector) -> Result<usize> {
        let logits = self.forward(z)?;
        Ok(label_from_logits(&logits))
    }

    /// Jacobian of the logits with respect to the input, one row per logit,
    /// computed analytically through the tanh chain.
    pub fn input_jacobian(&self, z: &Vector) -> Result<Matrix> {
        self.check_input(z)?;
        let h = self.hidden_width;
        let d = self.input_dim;
        let d_k = self.num_logits();

        let mut h1 = vec![0.0; h];
        affine_tanh(&self.w1, &self.b1, z.as_slice(), &mut h1);
        let h2 = match self.architecture {
            Architecture::TwoHidden => {
                let mut h2 = vec![0.0; h];
                affine_tanh(&self.w2, &self.b2, &h1, &mut h2);
                Some(h2)
            }
            Architecture::OneHidden => None,
        };

        let mut jac = Matrix::zeros(d_k, d);
        let mut g = vec![0.0; h];
        let mut g_prev = vec![0.0; h];
        for j in 0..d_k {
            // Backpropagate a unit of logit j down to the input.
            match (&self.architecture, &h2) {
                (Architecture::TwoHidden, Some(h2)) => {
                    for i in 0..h {
                        g[i] = self.w_out.get(j, i) * (1.0 - h2[i] * h2[i]);
                    }
                    for i in 0..h {
                        let mut acc = 0.0;
                        for (k, gk) in g.iter().enumerate() {
                            acc += gk * self.w2.get(k, i);
                        }
                        g_prev[i] = acc * (1.0 - h1[i] * h1[i]);
                    }
                }
                _ => {
                    for i in 0..h {
                        g_prev[i] = self.w_out.get(j, i) * (1.0 - h1[i] * h1[i]);
                    }
                }
            }
            let row = &mut jac.as_mut_slice()[j * d..(j + 1) * d];
            for (i, gk) in g_prev.iter().enumerate() {
                if *gk == 0.0 {
                    continue;
                }
                let w_row = self.w1.row(i);
                for (out, w) in row.iter_mut().zip(w_row) {
                    *out += gk * w;
                }
            }
        }
        Ok(jac)
    }

    /// One row of the input-Jacobian: the local control direction for
    /// class `class_j`. Binary attributes only have row 0.
    pub fn gradient_row(&self, z: &Vector, class_j: usize) -> Result<Vector> {
        if class_j >= self.num_logits() {
            return Err(Error::IndexOutOfRange {
                context: "jacobian row",
                index: class_j,
                size: self.num_logits(),
            });
        }
        let jac = self.input_jacobian(z)?;
        jac.row_vector(class_j)
    }

    /// Serializes to the classifier file format. Little-endian throughout;
    /// the version field records the architecture (1 = two hidden layers,
    /// 2 = one hidden layer).
    pub fn save(&self) -> Vec<u8> {
        let id = self.attr.id.as_bytes();
        let mut out = Vec::with_capacity(
            4 + 2 + 16 + id.len() + 8 * (self.w1.as_slice().len() + self.w2.as_slice().len()),
        );
        out.extend_from_slice(CLASSIFIER_MAGIC);
        let version: u16 = match self.architecture {
            Architecture::TwoHidden => 1,
            Architecture::OneHidden => 2,
        };
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden_width as u32).to_le_bytes());
        out.extend_from_slice(&(self.attr.num_classes as u32).to_le_bytes());
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        for block in [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w_out.as_slice(),
            self.b_out.as_slice(),
        ] {
            for x in block {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Parses a classifier file; errors carry the byte offset of the fault.
    pub fn load(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let magic = cur.take(4, "magic")?;
        if magic != CLASSIFIER_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected {CLASSIFIER_MAGIC:?}"),
            });
        }
        let version = cur.u16("version")?;
        let architecture = match version {
            1 => Architecture::TwoHidden,
            2 => Architecture::OneHidden,
            other => {
                return Err(Error::Format {
                    offset: 4,
                    message: format!("unsupported version {other}"),
                })
            }
        };
        let d = cur.u32("input dim")? as usize;
        let h = cur.u32("hidden width")? as usize;
        let d_k = cur.u32("num classes")? as usize;
        if d == 0 || h == 0 || d_k == 0 {
            return Err(Error::Format {
                offset: 6,
                message: format!("degenerate dims d={d} h={h} d_k={d_k}"),
            });
        }
        let id_len = cur.u32("attr id length")? as usize;
        let id_offset = cur.pos;
        let id_bytes = cur.take(id_len, "attr id")?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|e| Error::Format {
                offset: id_offset as u64,
                message: format!("attr id is not UTF-8: {e}"),
            })?
            .to_string();

        let w1 = cur.matrix(h, d, "W1")?;
        let b1 = cur.vector(h, "b1")?;
        let w2 = cur.matrix(h, h, "W2")?;
        let b2 = cur.vector(h, "b2")?;
        let w_out = cur.matrix(d_k, h, "W_out")?;
        let b_out = cur.vector(d_k, "b_out")?;
        if cur.pos != bytes.len() {
            return Err(Error::Format {
                offset: cur.pos as u64,
                message: format!("{} trailing bytes", bytes.len() - cur.pos),
            });
        }

        let class_names = default_class_names(d_k);
        Ok(Self {
            attr: AttributeSpec::new(id, d_k, class_names)?,
            input_dim: d,
            hidden_width: h,
            architecture,
            w1,
            b1,
            w2,
            b2,
            w_out,
            b_out,
        })
    }
}

fn default_class_names(d_k: usize) -> Vec<String> {
    if d_k == 1 {
        vec!["absent".into(), "present".into()]
    } else {
        (0..d_k).map(|i| format!("class_{i}")).collect()
    }
}

/// Label implied by a logit vector: sign test for a single logit,
/// argmax otherwise. Ties resolve to the lowest index.
pub fn label_from_logits(logits: &Vector) -> usize {
    if logits.len() == 1 {
        usize::from(logits[0] > 0.0)
    } else {
        let mut best = 0;
        for i in 1..logits.len() {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        best
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &Vector) -> Vector {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Vector::from(exps.into_iter().map(|e| e / sum).collect::<Vec<_>>())
}

fn affine(w: &Matrix, b: &Vector, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = w.row(r);
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

fn affine_tanh(w: &Matrix, b: &Vector, x: &[f64], out: &mut [f64]) {
    affine(w, b, x, out);
    for o in out.iter_mut() {
        *o = o.tanh();
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let raw = self.take(8 * n, what)?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(bad) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format {
                offset: (start + 8 * bad) as u64,
                message: format!("non-finite value in {what}"),
            });
        }
        Ok(vals)
    }

    fn vector(&mut self, n: usize, what: &str) -> Result<Vector> {
        Ok(Vector::from(self.f64s(n, what)?))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let offset = self.pos as u64;
        Matrix::new(rows, cols, self.f64s(rows * cols, what)?).map_err(|e| Error::Format {
            offset,
            message: format!("{what}: {e}"),
        })
    }
}

/// Result of a training run: the network plus how well it fit.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub classifier: AttributeClassifier,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// Trains a scoring network on labeled latents with seeded mini-batch
/// gradient descent (full-batch whenever `batch_size >= n`).
///
/// Binary heads train with sigmoid cross-entropy, multi-class heads with
/// softmax cross-entropy. Every class must be represented at least once.
pub fn train(
    data: &[LabeledLatent],
    attr: &AttributeSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    let d = data[0].z.len();
    for item in data {
        if item.z.len() != d {
            return Err(Error::Dimension {
                context: "training latent",
                expected: d,
                actual: item.z.len(),
            });
        }
        if item.label >= attr.label_classes() {
            return Err(Error::IndexOutOfRange {
                context: "training label",
                index: item.label,
                size: attr.label_classes(),
            });
        }
    }
    for class in 0..attr.label_classes() {
        if !data.iter().any(|item| item.label == class) {
            return Err(Error::ClassCoverage {
                attr: attr.id.clone(),
                class,
            });
        }
    }

    let h = cfg.hidden_width;
    let d_k = attr.num_classes;
    let mut rng = RngState::new(cfg.seed);
    let mut clf = AttributeClassifier::zeroed(attr.clone(), d, h);
    clf.architecture = cfg.architecture;
    init_uniform(clf.w1.as_mut_slice(), d, &mut rng);
    init_uniform(clf.b1.as_mut_slice(), d, &mut rng);
    if cfg.architecture == Architecture::TwoHidden {
        init_uniform(clf.w2.as_mut_slice(), h, &mut rng);
        init_uniform(clf.b2.as_mut_slice(), h, &mut rng);
    }
    init_uniform(clf.w_out.as_mut_slice(), h, &mut rng);
    init_uniform(clf.b_out.as_mut_slice(), h, &mut rng);

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut scratch = Scratch::new(d, h, d_k);
    let mut final_loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.min(n)) {
            epoch_loss += train_batch(&mut clf, data, batch, cfg, &mut scratch)?;
        }
        epoch_loss /= n as f64;
        if !epoch_loss.is_finite() || !params_finite(&clf) {
            return Err(Error::Divergence { epoch });
        }
        final_loss = epoch_loss;
    }

    let mut correct = 0usize;
    for item in data {
        if clf.predict_label(&item.z)? == item.label {
            correct += 1;
        }
    }
    Ok(TrainOutcome {
        classifier: clf,
        train_accuracy: correct as f64 / n as f64,
        final_loss,
    })
}

fn params_finite(clf: &AttributeClassifier) -> bool {
    [
        clf.w1.as_slice(),
        clf.b1.as_slice(),
        clf.w2.as_slice(),
        clf.b2.as_slice(),
        clf.w_out.as_slice(),
        clf.b_out.as_slice(),
    ]
    .into_iter()
    .all(|block| block.iter().all(|x| x.is_finite()))
}

fn init_uniform(slice: &mut [f64], fan_in: usize, rng: &mut RngState) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for x in slice.iter_mut() {
        *x = rng.uniform(-bound, bound);
    }
}

struct Scratch {
    h1: Vec<f64>,
    h2: Vec<f64>,
    logits: Vec<f64>,
    g_out: Vec<f64>,
    g_a2: Vec<f64>,
    g_a1: Vec<f64>,
    gw1: Vec<f64>,
    gb1: Vec<f64>,
    gw2: Vec<f64>,
    gb2: Vec<f64>,
    gw_out: Vec<f64>,
    gb_out: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, h: usize, d_k: usize) -> Self {
        Self {
            h1: vec![0.0; h],
            h2: vec![0.0; h],
            logits: vec![0.0; d_k],
            g_out: vec![0.0; d_k],
            g_a2: vec![0.0; h],
            g_a1: vec![0.0; h],
            gw1: vec![0.0; h * d],
            gb1: vec![0.0; h],
            gw2: vec![0.0; h * h],
            gb2: vec![0.0; h],
            gw_out: vec![0.0; d_k * h],
            gb_out: vec![0.0; d_k],
        }
    }

    fn reset(&mut self) {
        for buf in [
            &mut self.gw1,
            &mut self.gb1,
            &mut self.gw2,
            &mut self.gb2,
            &mut self.gw_out,
            &mut self.gb_out,
        ] {
            buf.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Runs one mini-batch update and returns the summed sample loss.
fn train_batch(
    clf: &mut AttributeClassifier,
    data: &[LabeledLatent],
    batch: &[usize],
    cfg: &TrainConfig,
    s: &mut Scratch,
) -> Result<f64> {
    let h = clf.hidden_width;
    let d_k = clf.num_logits();
    let two_hidden = clf.architecture == Architecture::TwoHidden;
    s.reset();
    let mut loss_sum = 0.0;

    for &idx in batch {
        let item = &data[idx];
        let z = item.z.as_slice();

        affine_tanh(&clf.w1, &clf.b1, z, &mut s.h1);
        let last: &[f64] = if two_hidden {
            affine_tanh(&clf.w2, &clf.b2, &s.h1, &mut s.h2);
            &s.h2
        } else {
            &s.h1
        };
        affine(&clf.w_out, &clf.b_out, last, &mut s.logits);

        // Head loss and dL/dlogits.
        if d_k == 1 {
            let x = s.logits[0];
            let y = item.label as f64;
            loss_sum += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            s.g_out[0] = sigmoid(x) - y;
        } else {
            let max = s.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (g, &l) in s.g_out.iter_mut().zip(s.logits.iter()) {
                *g = (l - max).exp();
                sum += *g;
            }
            loss_sum += sum.ln() + max - s.logits[item.label];
            for (j, g) in s.g_out.iter_mut().enumerate() {
                *g = *g / sum - f64::from(j == item.label);
            }
        }

        // Head layer gradients.
        let last_vals: Vec<f64> = last.to_vec();
        for j in 0..d_k {
            let g = s.g_out[j];
            s.gb_out[j] += g;
            let row = &mut s.gw_out[j * h..(j + 1) * h];
            for (acc, v) in row.iter_mut().zip(&last_vals) {
                *acc += g * v;
            }
        }

        if two_hidden {
            for i in 0..h {
                let mut acc = 0.0;
                for j in 0..d_k {
                    acc += clf.w_out.get(j, i) * s.g_out[j];
                }
                s.g_a2[i] = acc * (1.0 - s.h2[i] * s.h2[i]);
            }
            for i in 0..h {
                let g = s.g_a2[i];
                s.gb2[i] += g;
                let row = &mut s.gw2[i * h..(i + 1) * h];
                for (acc, v) in row.iter_mut().zip(&s.h1) {
                    *acc += g * v;
                }
            }
            for i in 0..h {
                let mut acc = 0.0;
                for (k, g) in s.g_a2.iter().enumerate() {
                    acc += clf.w2.get(k, i) * g;
                }
                s.g_a1[i] = acc * (1.0 - s.h1[i] * s.h1[i]);
            }
        } else {
            for i in 0..h {
                let mut acc = 0.0;
                for j in 0..d_k {
                    acc += clf.w_out.get(j, i) * s.g_out[j];
                }
                s.g_a1[i] = acc * (1.0 - s.h1[i] * s.h1[i]);
            }
        }

        let d = clf.input_dim;
        for i in 0..h {
            let g = s.g_a1[i];
            if g == 0.0 {
                continue;
            }
            s.gb1[i] += g;
            let row = &mut s.gw1[i * d..(i + 1) * d];
            for (acc, v) in row.iter_mut().zip(z) {
                *acc += g * v;
            }
        }
    }

    let scale = cfg.learning_rate / batch.len() as f64;
    let decay = cfg.learning_rate * cfg.weight_decay;
    apply_update(clf.w1.as_mut_slice(), &s.gw1, scale, decay);
    apply_update(clf.b1.as_mut_slice(), &s.gb1, scale, 0.0);
    if two_hidden {
        apply_update(clf.w2.as_mut_slice(), &s.gw2, scale, decay);
        apply_update(clf.b2.as_mut_slice(), &s.gb2, scale, 0.0);
    }
    apply_update(clf.w_out.as_mut_slice(), &s.gw_out, scale, decay);
    apply_update(clf.b_out.as_mut_slice(), &s.gb_out, scale, 0.0);

    Ok(loss_sum)
}

fn apply_update(params: &mut [f64], grads: &[f64], scale: f64, decay: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= scale * g + decay * *p;
    }
}
