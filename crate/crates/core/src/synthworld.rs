//! Synthetic latent world with analytic attribute oracles.
//!
//! Stands in for the generator-plus-image-classifier pair: each attribute
//! is a known smooth function of the latent code, so the world can label
//! training data, normalize metrics, and verify disentanglement claims
//! against ground truth.
//!
//! Latents are Gaussian but factor-structured: each attribute owns a
//! channel block whose coordinates share one or two latent factors plus
//! per-channel noise. Semantics are therefore expressed redundantly
//! across their whole block — which is what makes a 30-example-per-class
//! classifier viable in 512 dimensions, and what gives channel saliency
//! something real to find. Entanglement is planted explicitly: an
//! attribute's score may leak a weighted copy of another attribute's
//! score direction (a confound term), mirroring correlated training data.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::{label_from_logits, LabeledLatent};
use crate::error::{Error, Result};
use crate::numeric::{RngState, Vector};

/// Magic bytes of the latent bank file format.
pub const BANK_MAGIC: &[u8; 4] = b"GCLB";

/// Bank samples are drawn in seed-derived shards of this size, so a
/// parallel generator produces byte-identical banks.
pub const BANK_SHARD: usize = 1024;

/// Analytic form of an attribute score on its support channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScoreForm {
    /// Pure affine score.
    Affine,
    /// Affine plus a bounded smooth term: `gain * tanh(nl_weights . z_support)`.
    /// Makes the oracle's own gradient field point-dependent.
    AffineTanh { gain: f64, nl_weights: Vec<f64> },
}

/// Planted leakage of another attribute's score direction.
///
/// Adds `weight * (unit(other.weights) . z_other_support)` to the score,
/// so editing this attribute's semantics genuinely moves the other one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundTerm {
    pub attr: String,
    pub weight: f64,
}

/// One attribute of the world: support channels, per-class weights, and
/// the declared analytic score form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAttribute {
    pub id: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Channel indices the score reads directly (sorted, unique).
    pub support: Vec<usize>,
    /// One weight row per class (a single row for binary), aligned with
    /// `support`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub score_form: ScoreForm,
    pub confound_terms: Vec<ConfoundTerm>,
}

impl OracleAttribute {
    pub fn is_binary(&self) -> bool {
        self.num_classes == 1
    }

    pub fn label_classes(&self) -> usize {
        self.num_classes.max(2)
    }
}

/// Sampler structure for one channel block: every channel mixes the
/// block's shared factors with private noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBlock {
    pub channels: Vec<usize>,
    /// One loading vector per factor, aligned with `channels`.
    pub factors: Vec<Vec<f64>>,
    pub local_std: f64,
}

/// Full description of a synthetic world; serializes to the world JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub dim: usize,
    pub seed: u64,
    pub attributes: Vec<OracleAttribute>,
    pub latent_blocks: Vec<LatentBlock>,
    /// Standard deviation of channels outside every block.
    pub default_std: f64,
    /// Pairwise Jaccard overlap of attribute dependency channel sets
    /// (support plus confound supports). Symmetric by construction.
    pub correlation: Vec<Vec<f64>>,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for attr in &self.attributes {
            if !seen.insert(attr.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate attribute id {:?}",
                    attr.id
                )));
            }
            if attr.num_classes == 0 {
                return Err(Error::InvalidArgument(format!(
                    "attribute {:?} has zero classes",
                    attr.id
                )));
            }
            if attr.class_names.len() != attr.label_classes() {
                return Err(Error::InvalidArgument(format!(
                    "attribute {:?} class_names length mismatch",
                    attr.id
                )));
            }
            if attr.support.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "attribute {:?} support must be sorted and unique",
                    attr.id
                )));
            }
            if attr.support.iter().any(|&c| c >= self.dim) {
                return Err(Error::InvalidArgument(format!(
                    "attribute {:?} support exceeds dim {}",
                    attr.id, self.dim
                )));
            }
            if attr.weights.len() != attr.num_classes || attr.bias.len() != attr.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "attribute {:?} needs one weight row and bias per class",
                    attr.id
                )));
            }
            if attr.weights.iter().any(|row| row.len() != attr.support.len()) {
                return Err(Error::InvalidArgument(format!(
                    "attribute {:?} weight rows must match support",
                    attr.id
                )));
            }
            if let ScoreForm::AffineTanh { nl_weights, .. } = &attr.score_form {
                if nl_weights.len() != attr.support.len() {
                    return Err(Error::InvalidArgument(format!(
                        "attribute {:?} nl_weights must match support",
                        attr.id
                    )));
                }
                if !attr.is_binary() {
                    return Err(Error::InvalidArgument(
                        "tanh score form is only supported for binary attributes".into(),
                    ));
                }
            }
            for term in &attr.confound_terms {
                if term.attr == attr.id {
                    return Err(Error::InvalidArgument(format!(
                        "attribute {:?} cannot confound itself",
                        attr.id
                    )));
                }
                let other = self.attribute(&term.attr)?;
                if !other.is_binary() {
                    return Err(Error::InvalidArgument(format!(
                        "confound source {:?} must be binary",
                        term.attr
                    )));
                }
            }
        }
        for block in &self.latent_blocks {
            if block.channels.iter().any(|&c| c >= self.dim) {
                return Err(Error::InvalidArgument("latent block exceeds dim".into()));
            }
            if block.factors.iter().any(|f| f.len() != block.channels.len()) {
                return Err(Error::InvalidArgument(
                    "factor loadings must match block channels".into(),
                ));
            }
            if block.local_std < 0.0 {
                return Err(Error::InvalidArgument("local_std must be >= 0".into()));
            }
        }
        let n = self.attributes.len();
        if self.correlation.len() != n || self.correlation.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidArgument(
                "correlation matrix must be attributes x attributes".into(),
            ));
        }
        for i in 0..n {
            for j in 0..n {
                if self.correlation[i][j] != self.correlation[j][i] {
                    return Err(Error::InvalidArgument(
                        "correlation matrix must be symmetric".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn attribute(&self, id: &str) -> Result<&OracleAttribute> {
        self.attributes
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| Error::UnknownAttribute(id.to_string()))
    }

    pub fn attribute_ids(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.id.clone()).collect()
    }

    /// Channels an attribute's score actually depends on: its support
    /// plus the supports of its confound sources.
    pub fn dependency_channels(&self, id: &str) -> Result<Vec<usize>> {
        let attr = self.attribute(id)?;
        let mut set: std::collections::BTreeSet<usize> = attr.support.iter().copied().collect();
        for term in &attr.confound_terms {
            set.extend(self.attribute(&term.attr)?.support.iter().copied());
        }
        Ok(set.into_iter().collect())
    }

    fn check_latent(&self, z: &Vector) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::Dimension {
                context: "world latent",
                expected: self.dim,
                actual: z.len(),
            });
        }
        Ok(())
    }

    /// Analytic score of one attribute at a latent code: one value per
    /// class (a single value for binary attributes).
    pub fn oracle_score(&self, id: &str, z: &Vector) -> Result<Vector> {
        self.check_latent(z)?;
        let attr = self.attribute(id)?;

        let mut out = Vec::with_capacity(attr.num_classes);
        for class in 0..attr.num_classes {
            let mut score = attr.bias[class];
            for (w, &ch) in attr.weights[class].iter().zip(&attr.support) {
                score += w * z[ch];
            }
            out.push(score);
        }
        if let ScoreForm::AffineTanh { gain, nl_weights } = &attr.score_form {
            let mut pre = 0.0;
            for (w, &ch) in nl_weights.iter().zip(&attr.support) {
                pre += w * z[ch];
            }
            out[0] += gain * pre.tanh();
        }
        for term in &attr.confound_terms {
            let source = self.attribute(&term.attr)?;
            let norm = row_norm(&source.weights[0]);
            let mut proj = 0.0;
            for (w, &ch) in source.weights[0].iter().zip(&source.support) {
                proj += w / norm * z[ch];
            }
            for s in out.iter_mut() {
                *s += term.weight * proj;
            }
        }
        Vector::new(out)
    }

    /// Ground-truth gradient of one score component with respect to the
    /// full latent code.
    pub fn oracle_gradient(&self, id: &str, class: usize, z: &Vector) -> Result<Vector> {
        self.check_latent(z)?;
        let attr = self.attribute(id)?;
        if class >= attr.num_classes {
            return Err(Error::IndexOutOfRange {
                context: "oracle score class",
                index: class,
                size: attr.num_classes,
            });
        }
        let mut grad = Vector::zeros(self.dim);
        for (w, &ch) in attr.weights[class].iter().zip(&attr.support) {
            grad[ch] += w;
        }
        if let ScoreForm::AffineTanh { gain, nl_weights } = &attr.score_form {
            let mut pre = 0.0;
            for (w, &ch) in nl_weights.iter().zip(&attr.support) {
                pre += w * z[ch];
            }
            let sech2 = 1.0 - pre.tanh().powi(2);
            for (w, &ch) in nl_weights.iter().zip(&attr.support) {
                grad[ch] += gain * sech2 * w;
            }
        }
        for term in &attr.confound_terms {
            let source = self.attribute(&term.attr)?;
            let norm = row_norm(&source.weights[0]);
            for (w, &ch) in source.weights[0].iter().zip(&source.support) {
                grad[ch] += term.weight * w / norm;
            }
        }
        Ok(grad)
    }

    /// Oracle label: sign test for binary, argmax otherwise.
    pub fn oracle_label(&self, id: &str, z: &Vector) -> Result<usize> {
        Ok(label_from_logits(&self.oracle_score(id, z)?))
    }

    /// Draws one latent: block factors first (in block order), then
    /// per-channel noise, then the channels outside every block.
    pub fn sample_latent(&self, rng: &mut RngState) -> Vector {
        let mut z = Vector::zeros(self.dim);
        let mut covered = vec![false; self.dim];
        for block in &self.latent_blocks {
            let factor_draws: Vec<f64> = block
                .factors
                .iter()
                .map(|_| rng.standard_normal())
                .collect();
            for (i, &ch) in block.channels.iter().enumerate() {
                let mut v = block.local_std * rng.standard_normal();
                for (loadings, g) in block.factors.iter().zip(&factor_draws) {
                    v += loadings[i] * g;
                }
                z[ch] = v;
                covered[ch] = true;
            }
        }
        for ch in 0..self.dim {
            if !covered[ch] {
                z[ch] = self.default_std * rng.standard_normal();
            }
        }
        z
    }

    /// Samples `n` latents with oracle labels for every attribute.
    /// Sampling is sharded by seed so the result depends only on the
    /// rng's seed, never on generation order.
    pub fn sample_bank(&self, n: usize, rng: &RngState) -> Result<LatentBank> {
        if n == 0 {
            return Err(Error::InvalidArgument("bank size must be >= 1".into()));
        }
        // Sorted to match the JSONL sidecar's key order, so banks
        // round-trip exactly.
        let mut attr_ids = self.attribute_ids();
        attr_ids.sort();
        let mut latents = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        let mut index = 0usize;
        let mut shard = 0u64;
        while index < n {
            let mut shard_rng = rng.child(shard);
            let take = BANK_SHARD.min(n - index);
            for _ in 0..take {
                let z = self.sample_latent(&mut shard_rng);
                let row: Vec<usize> = attr_ids
                    .iter()
                    .map(|id| self.oracle_label(id, &z))
                    .collect::<Result<_>>()?;
                latents.extend_from_slice(z.as_slice());
                labels.push(row);
                index += 1;
            }
            shard += 1;
        }
        Ok(LatentBank {
            dim: self.dim,
            attr_ids,
            latents,
            labels,
        })
    }

    /// Rejection-samples exactly `per_class` oracle-labeled latents per
    /// class of one attribute.
    pub fn make_training_set(
        &self,
        attr_id: &str,
        per_class: usize,
        rng: &mut RngState,
    ) -> Result<Vec<LabeledLatent>> {
        if per_class == 0 {
            return Err(Error::InvalidArgument("per_class must be >= 1".into()));
        }
        let classes = self.attribute(attr_id)?.label_classes();
        let mut counts = vec![0usize; classes];
        let mut out: Vec<LabeledLatent> = Vec::with_capacity(per_class * classes);
        let cap = 2000 * per_class * classes;
        let mut attempts = 0usize;
        while out.len() < per_class * classes {
            if attempts >= cap {
                let class = counts.iter().position(|&c| c < per_class).unwrap_or(0);
                return Err(Error::ClassCoverage {
                    attr: attr_id.to_string(),
                    class,
                });
            }
            attempts += 1;
            let z = self.sample_latent(rng);
            let label = self.oracle_label(attr_id, &z)?;
            if counts[label] < per_class {
                counts[label] += 1;
                out.push(LabeledLatent { z, label });
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let world: WorldSpec = serde_json::from_str(text)?;
        world.validate()?;
        Ok(world)
    }

    /// The world shipped by default: 512 channels, four binary attributes
    /// and one 4-class attribute on disjoint 64-channel blocks, with two
    /// planted confound pairs (gender leaks smile, age leaks glasses) and
    /// a tanh-squashed age score.
    pub fn default_world(seed: u64) -> WorldSpec {
        let dim = 512;
        let block_size = 64;
        let rng = RngState::new(seed);

        let binary_ids = ["gender", "smile", "glasses", "age"];
        let mut attributes = Vec::new();
        let mut latent_blocks = Vec::new();

        for (b, id) in binary_ids.iter().enumerate() {
            let channels: Vec<usize> = (b * block_size..(b + 1) * block_size).collect();
            let mut block_rng = rng.child(1000 + b as u64);
            let loadings: Vec<f64> = (0..block_size)
                .map(|_| {
                    let sign = if block_rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
                    sign * block_rng.uniform(0.9, 2.1)
                })
                .collect();
            let weights: Vec<f64> = loadings
                .iter()
                .map(|l| l + 0.2 * block_rng.standard_normal())
                .collect();
            let norm = row_norm(&weights);
            let weights: Vec<f64> = weights.iter().map(|w| w / norm).collect();
            let bias = block_rng.uniform(-0.4, 0.4);

            // The tanh squash lives on a clean attribute so the planted
            // confound pairs stay affine end to end.
            let score_form = if *id == "smile" {
                let raw: Vec<f64> = (0..block_size)
                    .map(|_| block_rng.standard_normal())
                    .collect();
                let norm = row_norm(&raw);
                ScoreForm::AffineTanh {
                    gain: 2.5,
                    nl_weights: raw.iter().map(|w| w / norm).collect(),
                }
            } else {
                ScoreForm::Affine
            };

            // The confound projection has the same scale as the signal
            // (both are unit directions against same-sized factor blocks),
            // so the weight is directly the relative leakage strength.
            let confound_terms = match *id {
                "gender" => vec![ConfoundTerm {
                    attr: "smile".into(),
                    weight: 1.0,
                }],
                "age" => vec![ConfoundTerm {
                    attr: "glasses".into(),
                    weight: 1.0,
                }],
                _ => Vec::new(),
            };

            attributes.push(OracleAttribute {
                id: (*id).into(),
                num_classes: 1,
                class_names: vec!["absent".into(), "present".into()],
                support: channels.clone(),
                weights: vec![weights],
                bias: vec![bias],
                score_form,
                confound_terms,
            });
            latent_blocks.push(LatentBlock {
                channels,
                factors: vec![loadings],
                local_std: 0.75,
            });
        }

        // 4-class color attribute on a two-factor block: classes sit in
        // opposing quadrants of the factor plane.
        let channels: Vec<usize> = (4 * block_size..5 * block_size).collect();
        let mut color_rng = rng.child(2000);
        let draw_factor = |rng: &mut RngState| -> Vec<f64> {
            (0..block_size)
                .map(|_| {
                    let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
                    sign * rng.uniform(0.9, 2.1)
                })
                .collect()
        };
        let fa = draw_factor(&mut color_rng);
        let fb = draw_factor(&mut color_rng);
        let class_row = |pattern: &[f64], flip: f64, rng: &mut RngState| -> Vec<f64> {
            let raw: Vec<f64> = pattern
                .iter()
                .map(|p| flip * p + 0.2 * rng.standard_normal())
                .collect();
            let norm = row_norm(&raw);
            raw.iter().map(|w| w / norm).collect()
        };
        let weights = vec![
            class_row(&fa, 1.0, &mut color_rng),
            class_row(&fb, 1.0, &mut color_rng),
            class_row(&fa, -1.0, &mut color_rng),
            class_row(&fb, -1.0, &mut color_rng),
        ];
        attributes.push(OracleAttribute {
            id: "color".into(),
            num_classes: 4,
            class_names: vec!["red".into(), "green".into(), "blue".into(), "yellow".into()],
            support: channels.clone(),
            weights,
            bias: vec![0.0; 4],
            score_form: ScoreForm::Affine,
            confound_terms: Vec::new(),
        });
        latent_blocks.push(LatentBlock {
            channels,
            factors: vec![fa, fb],
            local_std: 0.75,
        });

        let mut world = WorldSpec {
            dim,
            seed,
            attributes,
            latent_blocks,
            default_std: 1.0,
            correlation: Vec::new(),
        };
        world.correlation = world.dependency_overlap();
        world
    }

    /// Jaccard overlap of dependency channel sets for every attribute pair.
    pub fn dependency_overlap(&self) -> Vec<Vec<f64>> {
        let deps: Vec<std::collections::BTreeSet<usize>> = self
            .attributes
            .iter()
            .map(|a| {
                self.dependency_channels(&a.id)
                    .unwrap_or_default()
                    .into_iter()
                    .collect()
            })
            .collect();
        let n = deps.len();
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let inter = deps[i].intersection(&deps[j]).count();
                let union = deps[i].union(&deps[j]).count();
                out[i][j] = if union == 0 {
                    0.0
                } else {
                    inter as f64 / union as f64
                };
            }
        }
        out
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|w| w * w).sum::<f64>().sqrt()
}

/// A pool of sampled latents with oracle labels for every attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBank {
    dim: usize,
    attr_ids: Vec<String>,
    /// Row-major `len x dim`.
    latents: Vec<f64>,
    /// Per sample, one label per attribute in `attr_ids` order.
    labels: Vec<Vec<usize>>,
}

impl LatentBank {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn attr_ids(&self) -> &[String] {
        &self.attr_ids
    }

    pub fn latent(&self, i: usize) -> Result<Vector> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                context: "bank latent",
                index: i,
                size: self.len(),
            });
        }
        Ok(Vector::from(
            self.latents[i * self.dim..(i + 1) * self.dim].to_vec(),
        ))
    }

    pub fn label(&self, i: usize, attr: &str) -> Result<usize> {
        let col = self
            .attr_ids
            .iter()
            .position(|id| id == attr)
            .ok_or_else(|| Error::UnknownAttribute(attr.to_string()))?;
        self.labels
            .get(i)
            .map(|row| row[col])
            .ok_or(Error::IndexOutOfRange {
                context: "bank label",
                index: i,
                size: self.len(),
            })
    }

    /// Serializes the latent payload (GCLB format, little-endian).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 2 + 4 + 8 + 8 * self.latents.len());
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for x in &self.latents {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Serializes the label sidecar: one JSON object per sample with
    /// attribute ids as keys (sorted).
    pub fn labels_to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.labels {
            let map: BTreeMap<&str, usize> = self
                .attr_ids
                .iter()
                .map(String::as_str)
                .zip(row.iter().copied())
                .collect();
            out.push_str(&serde_json::to_string(&map).expect("label map serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses a GCLB payload plus its JSONL label sidecar.
    pub fn from_bytes(bytes: &[u8], labels_jsonl: &str) -> Result<Self> {
        if bytes.len() < 18 {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                message: "truncated bank header".into(),
            });
        }
        if &bytes[0..4] != BANK_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:?}, expected {BANK_MAGIC:?}", &bytes[0..4]),
            });
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != 1 {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported bank version {version}"),
            });
        }
        let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
        let expected = 18 + 8 * n * dim;
        if bytes.len() != expected {
            return Err(Error::Format {
                offset: bytes.len().min(expected) as u64,
                message: format!(
                    "bank payload is {} bytes, expected {expected} for {n} x {dim}",
                    bytes.len()
                ),
            });
        }
        let latents: Vec<f64> = bytes[18..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let mut attr_ids: Vec<String> = Vec::new();
        let mut labels = Vec::with_capacity(n);
        for (lineno, line) in labels_jsonl.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let map: BTreeMap<String, usize> =
                serde_json::from_str(line).map_err(|e| Error::Format {
                    offset: lineno as u64,
                    message: format!("label line {lineno}: {e}"),
                })?;
            if attr_ids.is_empty() {
                attr_ids = map.keys().cloned().collect();
            }
            let row: Vec<usize> = attr_ids
                .iter()
                .map(|id| {
                    map.get(id).copied().ok_or_else(|| Error::Format {
                        offset: lineno as u64,
                        message: format!("label line {lineno} missing attribute {id:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            labels.push(row);
        }
        if labels.len() != n {
            return Err(Error::Format {
                offset: 10,
                message: format!("bank declares {n} samples but sidecar has {}", labels.len()),
            });
        }
        Ok(Self {
            dim,
            attr_ids,
            latents,
            labels,
        })
    }
}

/// Result of boundary sampling: bank indices in bank order, plus a flag
/// raised when fewer than the requested count were available.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySelection {
    pub indices: Vec<usize>,
    pub shortfall: bool,
}

/// Selects up to `count` bank entries whose oracle boundary distance for
/// `attr_id` is below `margin`, preserving bank order.
///
/// The boundary distance is the logit itself for binary attributes and
/// the top-two score gap for multi-class attributes.
pub fn boundary_sample(
    world: &WorldSpec,
    bank: &LatentBank,
    attr_id: &str,
    margin: f64,
    count: usize,
) -> Result<BoundarySelection> {
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument("margin must be positive".into()));
    }
    let attr = world.attribute(attr_id)?;
    let mut indices = Vec::new();
    for i in 0..bank.len() {
        if indices.len() == count {
            break;
        }
        let z = bank.latent(i)?;
        let scores = world.oracle_score(attr_id, &z)?;
        let distance = if attr.is_binary() {
            scores[0]
        } else {
            let mut top = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for &s in scores.iter() {
                if s > top {
                    second = top;
                    top = s;
                } else if s > second {
                    second = s;
                }
            }
            top - second
        };
        if distance > -margin && distance < margin {
            indices.push(i);
        }
    }
    let shortfall = indices.len() < count;
    Ok(BoundarySelection { indices, shortfall })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tiny hand-checkable world: two binary attributes on two channels
    /// each, one confound, all weights explicit.
    fn toy_world() -> WorldSpec {
        let a = OracleAttribute {
            id: "a".into(),
            num_classes: 1,
            class_names: vec!["absent".into(), "present".into()],
            support: vec![0, 1],
            weights: vec![vec![1.0, 0.0]],
            bias: vec![0.25],
            score_form: ScoreForm::Affine,
            confound_terms: vec![ConfoundTerm {
                attr: "b".into(),
                weight: 0.5,
            }],
        };
        let b = OracleAttribute {
            id: "b".into(),
            num_classes: 1,
            class_names: vec!["absent".into(), "present".into()],
            support: vec![2, 3],
            weights: vec![vec![3.0, 4.0]],
            bias: vec![0.0],
            score_form: ScoreForm::Affine,
            confound_terms: Vec::new(),
        };
        let world = WorldSpec {
            dim: 4,
            seed: 0,
            attributes: vec![a, b],
            latent_blocks: Vec::new(),
            default_std: 1.0,
            correlation: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        };
        world.validate().unwrap();
        world
    }

    #[test]
    fn affine_score_hand_cases() {
        let world = toy_world();
        // Weight on channel 0 only, unit input there.
        let e0 = Vector::basis(4, 0).unwrap();
        assert_eq!(world.oracle_score("a", &e0).unwrap()[0], 1.0 + 0.25);
        // z = 0 leaves only the bias.
        let zero = Vector::zeros(4);
        assert_eq!(world.oracle_score("a", &zero).unwrap()[0], 0.25);
        assert_eq!(world.oracle_score("b", &zero).unwrap()[0], 0.0);
        // Confound: unit(w_b) = [0.6, 0.8] over channels {2, 3}.
        let z = Vector::from(vec![0.0, 0.0, 1.0, 1.0]);
        let got = world.oracle_score("a", &z).unwrap()[0];
        assert!((got - (0.25 + 0.5 * 1.4)).abs() < 1e-15);
    }

    #[test]
    fn unknown_attribute_is_lookup_error() {
        let world = toy_world();
        assert!(matches!(
            world.oracle_score("nope", &Vector::zeros(4)),
            Err(Error::UnknownAttribute(_))
        ));
    }

    #[test]
    fn score_matches_independent_evaluator() {
        // Oracle: re-evaluate the declared form straight from the world's
        // serialized fields, written as its own code path.
        let world = WorldSpec::default_world(9);
        let mut rng = RngState::new(4);
        for _ in 0..20 {
            let z = world.sample_latent(&mut rng);
            for attr in &world.attributes {
                let got = world.oracle_score(&attr.id, &z).unwrap();
                for class in 0..attr.num_classes {
                    let mut want = attr.bias[class];
                    for (w, &ch) in attr.weights[class].iter().zip(&attr.support) {
                        want += w * z[ch];
                    }
                    if let ScoreForm::AffineTanh { gain, nl_weights } = &attr.score_form {
                        let pre: f64 = nl_weights
                            .iter()
                            .zip(&attr.support)
                            .map(|(w, &ch)| w * z[ch])
                            .sum();
                        if class == 0 {
                            want += gain * pre.tanh();
                        }
                    }
                    for term in &attr.confound_terms {
                        let src = world.attribute(&term.attr).unwrap();
                        let norm = src.weights[0].iter().map(|w| w * w).sum::<f64>().sqrt();
                        let proj: f64 = src.weights[0]
                            .iter()
                            .zip(&src.support)
                            .map(|(w, &ch)| w / norm * z[ch])
                            .sum();
                        want += term.weight * proj;
                    }
                    assert!(
                        (got[class] - want).abs() < 1e-12,
                        "{} class {class}",
                        attr.id
                    );
                }
            }
        }
    }

    #[test]
    fn oracle_gradient_matches_finite_differences() {
        let world = WorldSpec::default_world(9);
        let mut rng = RngState::new(5);
        let z = world.sample_latent(&mut rng);
        for (attr, class) in [("gender", 0), ("age", 0), ("color", 2)] {
            let grad = world.oracle_gradient(attr, class, &z).unwrap();
            let mut probe = z.clone();
            for ch in (0..world.dim).step_by(37) {
                let orig = probe[ch];
                probe[ch] = orig + 1e-5;
                let plus = world.oracle_score(attr, &probe).unwrap()[class];
                probe[ch] = orig - 1e-5;
                let minus = world.oracle_score(attr, &probe).unwrap()[class];
                probe[ch] = orig;
                let fd = (plus - minus) / 2e-5;
                assert!((grad[ch] - fd).abs() < 1e-7, "{attr} ch {ch}");
            }
        }
    }

    #[test]
    fn gradient_support_is_dependency_set() {
        let world = WorldSpec::default_world(9);
        let mut rng = RngState::new(6);
        let z = world.sample_latent(&mut rng);
        for attr in &world.attributes {
            let dep = world.dependency_channels(&attr.id).unwrap();
            for class in 0..attr.num_classes {
                let grad = world.oracle_gradient(&attr.id, class, &z).unwrap();
                for ch in 0..world.dim {
                    let in_dep = dep.binary_search(&ch).is_ok();
                    if !in_dep {
                        assert_eq!(grad[ch], 0.0, "{} ch {ch}", attr.id);
                    }
                }
                // Every in-support channel genuinely participates.
                for &ch in &attr.support {
                    assert!(grad[ch] != 0.0, "{} ch {ch} dead", attr.id);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let world = WorldSpec::default_world(9);
        let a = world.sample_bank(64, &RngState::new(3)).unwrap();
        let b = world.sample_bank(64, &RngState::new(3)).unwrap();
        assert_eq!(a, b);
        let c = world.sample_bank(64, &RngState::new(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bank_prefix_is_shard_stable() {
        // A longer bank starts with exactly the shorter bank's samples.
        let world = WorldSpec::default_world(9);
        let n = BANK_SHARD / 2;
        let small = world.sample_bank(n, &RngState::new(3)).unwrap();
        let large = world.sample_bank(n + 100, &RngState::new(3)).unwrap();
        assert_eq!(small.latent(0).unwrap(), large.latent(0).unwrap());
        assert_eq!(small.latent(n - 1).unwrap(), large.latent(n - 1).unwrap());
    }

    #[test]
    fn bank_rejects_zero() {
        let world = WorldSpec::default_world(9);
        assert!(world.sample_bank(0, &RngState::new(0)).is_err());
    }

    #[test]
    fn binary_rates_are_balanced() {
        let world = WorldSpec::default_world(9);
        let bank = world.sample_bank(10_000, &RngState::new(11)).unwrap();
        for id in ["gender", "smile", "glasses", "age"] {
            let positives = (0..bank.len())
                .filter(|&i| bank.label(i, id).unwrap() == 1)
                .count();
            let rate = positives as f64 / bank.len() as f64;
            assert!((0.4..=0.6).contains(&rate), "{id} rate {rate}");
        }
        // Four-class attribute: every class occupies a reasonable share.
        for class in 0..4 {
            let hits = (0..bank.len())
                .filter(|&i| bank.label(i, "color").unwrap() == class)
                .count();
            let rate = hits as f64 / bank.len() as f64;
            assert!(
                (0.15..=0.35).contains(&rate),
                "color class {class} rate {rate}"
            );
        }
    }

    #[test]
    fn relabeling_is_idempotent() {
        let world = WorldSpec::default_world(9);
        let bank = world.sample_bank(200, &RngState::new(12)).unwrap();
        for i in 0..bank.len() {
            let z = bank.latent(i).unwrap();
            for id in bank.attr_ids() {
                assert_eq!(
                    bank.label(i, id).unwrap(),
                    world.oracle_label(id, &z).unwrap()
                );
            }
        }
    }

    #[test]
    fn boundary_sample_hand_cases() {
        let world = toy_world();
        let bank = world.sample_bank(100, &RngState::new(13)).unwrap();

        // Effectively infinite margin: the first `count` entries.
        let all = boundary_sample(&world, &bank, "a", 1e300, 10).unwrap();
        assert_eq!(all.indices, (0..10).collect::<Vec<_>>());
        assert!(!all.shortfall);

        // Margin below any |logit|: empty with a shortfall flag.
        let none = boundary_sample(&world, &bank, "a", 1e-12, 10).unwrap();
        assert!(none.indices.is_empty());
        assert!(none.shortfall);

        assert!(boundary_sample(&world, &bank, "a", 0.0, 10).is_err());
    }

    #[test]
    fn boundary_sample_selects_small_logits() {
        let world = WorldSpec::default_world(9);
        let bank = world.sample_bank(20_000, &RngState::new(14)).unwrap();
        let sel = boundary_sample(&world, &bank, "smile", 0.5, 300).unwrap();
        assert!(!sel.shortfall, "only {} boundary latents", sel.indices.len());
        assert_eq!(sel.indices.len(), 300);
        for &i in &sel.indices {
            let z = bank.latent(i).unwrap();
            let logit = world.oracle_score("smile", &z).unwrap()[0];
            assert!(logit.abs() < 0.5);
        }
    }

    #[test]
    fn training_set_has_exact_class_counts() {
        let world = WorldSpec::default_world(9);
        let mut rng = RngState::new(15);
        let set = world.make_training_set("gender", 30, &mut rng).unwrap();
        assert_eq!(set.len(), 60);
        assert_eq!(set.iter().filter(|s| s.label == 1).count(), 30);

        let single = world.make_training_set("color", 1, &mut rng).unwrap();
        assert_eq!(single.len(), 4);
    }

    #[test]
    fn unreachable_class_is_coverage_error() {
        let mut world = toy_world();
        world.attributes[1].bias = vec![-1e9];
        match world.make_training_set("b", 2, &mut RngState::new(16)) {
            Err(Error::ClassCoverage { class, .. }) => assert_eq!(class, 1),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn world_json_round_trip() {
        let world = WorldSpec::default_world(9);
        let text = world.to_json().unwrap();
        let back = WorldSpec::from_json(&text).unwrap();
        assert_eq!(world, back);
    }

    #[test]
    fn world_validation_rejects_asymmetric_correlation() {
        let mut world = toy_world();
        world.correlation[0][1] = 0.9;
        assert!(world.validate().is_err());
    }

    #[test]
    fn bank_round_trip_and_corruption() {
        let world = WorldSpec::default_world(9);
        let bank = world.sample_bank(50, &RngState::new(17)).unwrap();
        let bytes = bank.to_bytes();
        let labels = bank.labels_to_jsonl();
        let back = LatentBank::from_bytes(&bytes, &labels).unwrap();
        assert_eq!(bank, back);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            LatentBank::from_bytes(&bad, &labels),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(LatentBank::from_bytes(&bytes[..40], &labels).is_err());
    }

    #[test]
    fn default_world_correlation_marks_planted_pairs() {
        let world = WorldSpec::default_world(9);
        let ids = world.attribute_ids();
        let idx = |id: &str| ids.iter().position(|x| x == id).unwrap();
        let c = &world.correlation;
        assert!(c[idx("gender")][idx("smile")] > 0.0);
        assert!(c[idx("age")][idx("glasses")] > 0.0);
        assert_eq!(c[idx("gender")][idx("glasses")], 0.0);
        assert_eq!(c[idx("smile")][idx("age")], 0.0);
        for i in 0..ids.len() {
            assert_eq!(c[i][i], 1.0);
        }
    }
}
