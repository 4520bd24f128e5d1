//! Synthetic part/attribute datasets with keypoints, counterfactual ground
//! truth, and simulated users.
//!
//! Each part is a fixed-shape glyph drawn near its quadrant anchor, colored
//! by an attribute sampled from the class's distribution over that part's
//! vocabulary. Ground truth ranks every `(part, a, b)` triplet by how
//! differently classes `a` and `b` distribute the part's attributes.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabeledDataset, Split};
use crate::micronet::{ModelBundle, NetError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("at least two classes are needed for counterfactual pairs, got {0}")]
    TooFewClasses(usize),
    #[error("part {part}, class {class}: attribute distribution is not a probability vector")]
    NotSimplex { part: usize, class: usize },
    #[error("part {part}: {reason}")]
    PartLayout { part: usize, reason: &'static str },
    #[error("invalid dataset config: {0}")]
    Config(&'static str),
    #[error("unknown {what} `{value}`")]
    Unknown { what: &'static str, value: String },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub rgb: [f64; 3],
}

impl Attribute {
    pub fn new(name: &str, rgb: [f64; 3]) -> Self {
        Self { name: name.into(), rgb }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlyphShape {
    Square,
    Diamond,
    Cross,
    Ring,
}

impl GlyphShape {
    /// Whether local pixel `(u, v)` of a `size × size` glyph is inked.
    fn covers(self, u: usize, v: usize, size: usize) -> bool {
        let c = (size as f64 - 1.0) / 2.0;
        let (du, dv) = ((u as f64 - c).abs(), (v as f64 - c).abs());
        match self {
            GlyphShape::Square => true,
            GlyphShape::Diamond => du + dv <= c + 0.5,
            GlyphShape::Cross => du <= 1.0 || dv <= 1.0,
            GlyphShape::Ring => u == 0 || v == 0 || u + 1 == size || v + 1 == size,
        }
    }
}

/// One part: its glyph, anchor, attribute vocabulary and per-class
/// attribute distributions `φ^k_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartProfile {
    pub name: String,
    pub glyph: GlyphShape,
    /// Canonical keypoint `(x, y)` before jitter.
    pub anchor: (usize, usize),
    pub vocabulary: Vec<Attribute>,
    /// `phi[class][attribute]`.
    pub phi: Vec<Vec<f64>>,
    /// Per-class probability that the part appears at all.
    pub occurrence: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dissimilarity {
    /// `exp(KL(a‖b) + KL(b‖a))` over attribute distributions.
    Kl,
    /// 1 when the part occurs in class `a` but never in class `b`.
    Occurrence,
}

impl FromStr for Dissimilarity {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kl" => Ok(Self::Kl),
            "occurrence" => Ok(Self::Occurrence),
            _ => Err(SynthError::Unknown {
                what: "dissimilarity",
                value: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub classes: Vec<String>,
    pub parts: Vec<PartProfile>,
    pub image_size: usize,
    pub glyph_size: usize,
    /// Maximum keypoint offset from the anchor, per axis, in pixels.
    pub jitter: usize,
    pub background: f64,
    /// Half-width of the uniform pixel noise.
    pub noise: f64,
    pub images_per_class: usize,
    pub test_fraction: f64,
    /// Fraction of the highest-dissimilarity triplets kept as ground truth.
    pub keep_fraction: f64,
    pub dissimilarity: Dissimilarity,
}

fn quadrant_anchor(size: usize, quadrant: usize) -> (usize, usize) {
    let q = size / 4;
    (q + (quadrant % 2) * 2 * q, q + (quadrant / 2) * 2 * q)
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

impl DatasetConfig {
    /// Four classes in two sibling pairs. Part 0 is shared within a pair and
    /// differs across pairs; part 1 is class-specific; parts 2 and 3 are
    /// identically distributed in every class. With probability `overlap`
    /// the third and fourth classes draw a part-1 attribute they share, which
    /// makes those images genuinely hard.
    pub fn planted_with_overlap(images_per_class: usize, overlap: f64) -> Self {
        let size = 32;
        let distractors = || {
            vec![
                Attribute::new("white", [0.95, 0.95, 0.95]),
                Attribute::new("black", [0.05, 0.05, 0.05]),
                Attribute::new("orange", [1.0, 0.55, 0.0]),
            ]
        };
        let uniform3 = vec![vec![1.0 / 3.0; 3]; 4];
        let parts = vec![
            PartProfile {
                name: "crest".into(),
                glyph: GlyphShape::Square,
                anchor: quadrant_anchor(size, 0),
                vocabulary: vec![
                    Attribute::new("red", [0.9, 0.15, 0.1]),
                    Attribute::new("blue", [0.1, 0.25, 0.9]),
                ],
                phi: vec![one_hot(2, 0), one_hot(2, 0), one_hot(2, 1), one_hot(2, 1)],
                occurrence: vec![1.0; 4],
            },
            PartProfile {
                name: "bill".into(),
                glyph: GlyphShape::Diamond,
                anchor: quadrant_anchor(size, 1),
                vocabulary: vec![
                    Attribute::new("green", [0.1, 0.75, 0.15]),
                    Attribute::new("yellow", [0.95, 0.85, 0.1]),
                    Attribute::new("magenta", [0.85, 0.1, 0.85]),
                    Attribute::new("cyan", [0.1, 0.85, 0.9]),
                    Attribute::new("purple", [0.45, 0.2, 0.6]),
                ],
                phi: vec![
                    one_hot(5, 0),
                    one_hot(5, 1),
                    vec![0.0, 0.0, 1.0 - overlap, 0.0, overlap],
                    vec![0.0, 0.0, 0.0, 1.0 - overlap, overlap],
                ],
                occurrence: vec![1.0; 4],
            },
            PartProfile {
                name: "wing".into(),
                glyph: GlyphShape::Cross,
                anchor: quadrant_anchor(size, 2),
                vocabulary: distractors(),
                phi: uniform3.clone(),
                occurrence: vec![1.0; 4],
            },
            PartProfile {
                name: "tail".into(),
                glyph: GlyphShape::Ring,
                anchor: quadrant_anchor(size, 3),
                vocabulary: distractors(),
                phi: uniform3,
                occurrence: vec![1.0; 4],
            },
        ];
        Self {
            classes: ["cardinal", "tanager", "jay", "bunting"].iter().map(|s| s.to_string()).collect(),
            parts,
            image_size: size,
            glyph_size: 6,
            jitter: 2,
            background: 0.5,
            noise: 0.1,
            images_per_class,
            test_fraction: 0.25,
            // Only the 20 of 48 triplets on parts 0 and 1 carry signal; the
            // rest tie at the minimum dissimilarity.
            keep_fraction: 0.4,
            dissimilarity: Dissimilarity::Kl,
        }
    }

    /// The standard planted testbed: the third/fourth classes overlap 20%.
    pub fn planted(images_per_class: usize) -> Self {
        Self::planted_with_overlap(images_per_class, 0.2)
    }

    /// Same layout with a strongly confusable third/fourth class pair.
    pub fn ambiguous(images_per_class: usize) -> Self {
        Self::planted_with_overlap(images_per_class, 0.6)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let classes = self.classes.len();
        if classes < 2 {
            return Err(SynthError::TooFewClasses(classes));
        }
        if self.parts.is_empty() {
            return Err(SynthError::Config("no parts"));
        }
        if self.images_per_class == 0 {
            return Err(SynthError::Config("images_per_class must be positive"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(SynthError::Config("test_fraction must lie in (0, 1)"));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(SynthError::Config("keep_fraction must lie in (0, 1]"));
        }
        if self.glyph_size == 0 || self.glyph_size > self.image_size {
            return Err(SynthError::Config("glyph does not fit the image"));
        }
        let half = self.glyph_size / 2;
        for (k, part) in self.parts.iter().enumerate() {
            if part.vocabulary.is_empty() {
                return Err(SynthError::PartLayout { part: k, reason: "empty vocabulary" });
            }
            if part.phi.len() != classes || part.occurrence.len() != classes {
                return Err(SynthError::PartLayout { part: k, reason: "needs one distribution per class" });
            }
            let (x, y) = part.anchor;
            let lo = half + self.jitter;
            let hi = self.image_size + half;
            if x < lo || y < lo || x + self.jitter + self.glyph_size > hi || y + self.jitter + self.glyph_size > hi {
                return Err(SynthError::PartLayout { part: k, reason: "glyph can leave the image" });
            }
            for (c, dist) in part.phi.iter().enumerate() {
                let sum: f64 = dist.iter().sum();
                if dist.len() != part.vocabulary.len()
                    || dist.iter().any(|&p| !(0.0..=1.0).contains(&p))
                    || (sum - 1.0).abs() > 1e-9
                {
                    return Err(SynthError::NotSimplex { part: k, class: c });
                }
            }
            if part.occurrence.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(SynthError::PartLayout { part: k, reason: "occurrence outside [0, 1]" });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keypoint {
    pub part: usize,
    pub x: usize,
    pub y: usize,
}

/// Per-image annotation; only used for evaluation, never for explaining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub id: u32,
    pub label: usize,
    pub split: Split,
    pub keypoints: Vec<Keypoint>,
    /// Sampled attribute index per part; `None` when the part is absent.
    pub attributes: Vec<Option<usize>>,
}

impl SceneAnnotation {
    pub fn keypoint(&self, part: usize) -> Option<&Keypoint> {
        self.keypoints.iter().find(|k| k.part == part)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub annotation: SceneAnnotation,
    /// `3 × size × size`, values in `[0, 1]`.
    pub image: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub scenes: Vec<SceneImage>,
}

impl GeneratedDataset {
    pub fn ids(&self, split: Split) -> Vec<u32> {
        self.scenes
            .iter()
            .filter(|s| s.annotation.split == split)
            .map(|s| s.annotation.id)
            .collect()
    }

    pub fn scene(&self, id: u32) -> Option<&SceneImage> {
        self.scenes.get(id as usize).filter(|s| s.annotation.id == id)
    }

    pub fn annotations(&self) -> Vec<SceneAnnotation> {
        self.scenes.iter().map(|s| s.annotation.clone()).collect()
    }

    /// Stacks one split into a classifier dataset.
    pub fn labeled(&self, split: Split) -> Result<LabeledDataset, SynthError> {
        let chosen: Vec<&SceneImage> = self.scenes.iter().filter(|s| s.annotation.split == split).collect();
        if chosen.is_empty() {
            return Err(NetError::EmptyDataset.into());
        }
        let size = self.config.image_size;
        let mut data = Vec::with_capacity(chosen.len() * 3 * size * size);
        for s in &chosen {
            data.extend_from_slice(s.image.data());
        }
        let images = Tensor::new(vec![chosen.len(), 3, size, size], data).map_err(NetError::from)?;
        Ok(LabeledDataset::new(
            images,
            chosen.iter().map(|s| s.annotation.label).collect(),
            chosen.iter().map(|s| s.annotation.id).collect(),
            self.config.classes.clone(),
            split,
        )?)
    }

    pub fn ground_truth(&self) -> Result<GroundTruth, SynthError> {
        build_ground_truth(
            &self.config.parts,
            self.config.classes.len(),
            self.config.dissimilarity,
            self.config.keep_fraction,
        )
    }
}

fn sample_categorical<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u just above the total mass
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn render_scene<R: Rng + ?Sized>(
    config: &DatasetConfig,
    label: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<Keypoint>, Vec<Option<usize>>) {
    let size = config.image_size;
    let plane = size * size;
    let mut pixels: Vec<f64> = (0..3 * plane)
        .map(|_| (config.background + rng.random_range(-config.noise..=config.noise)).clamp(0.0, 1.0))
        .collect();
    let mut keypoints = Vec::new();
    let mut attributes = Vec::new();
    let j = config.jitter as i64;
    let half = config.glyph_size / 2;
    for (k, part) in config.parts.iter().enumerate() {
        if rng.random::<f64>() >= part.occurrence[label] {
            attributes.push(None);
            continue;
        }
        let attr = sample_categorical(&part.phi[label], rng);
        let dx = rng.random_range(-j..=j);
        let dy = rng.random_range(-j..=j);
        let cx = (part.anchor.0 as i64 + dx) as usize;
        let cy = (part.anchor.1 as i64 + dy) as usize;
        let rgb = part.vocabulary[attr].rgb;
        for v in 0..config.glyph_size {
            for u in 0..config.glyph_size {
                if part.glyph.covers(u, v, config.glyph_size) {
                    let (x, y) = (cx - half + u, cy - half + v);
                    for (ch, &value) in rgb.iter().enumerate() {
                        let noisy = value + rng.random_range(-config.noise..=config.noise) * 0.5;
                        pixels[ch * plane + y * size + x] = noisy.clamp(0.0, 1.0);
                    }
                }
            }
        }
        keypoints.push(Keypoint { part: k, x: cx, y: cy });
        attributes.push(Some(attr));
    }
    (pixels, keypoints, attributes)
}

/// Renders `images_per_class` scenes per class and splits each class into
/// train and test by the seed. Ids follow generation order.
pub fn generate_dataset(config: &DatasetConfig, seed: u64) -> Result<GeneratedDataset, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = config.image_size;
    let n_test = libm::round(config.images_per_class as f64 * config.test_fraction) as usize;
    let n_test = n_test.clamp(1, config.images_per_class.saturating_sub(1).max(1));
    let mut scenes = Vec::with_capacity(config.classes.len() * config.images_per_class);
    for label in 0..config.classes.len() {
        let mut order: Vec<usize> = (0..config.images_per_class).collect();
        order.shuffle(&mut rng);
        let mut is_test = vec![false; config.images_per_class];
        for &i in &order[..n_test] {
            is_test[i] = true;
        }
        for test in is_test {
            let (pixels, keypoints, attributes) = render_scene(config, label, &mut rng);
            let id = scenes.len() as u32;
            scenes.push(SceneImage {
                annotation: SceneAnnotation {
                    id,
                    label,
                    split: if test { Split::Test } else { Split::Train },
                    keypoints,
                    attributes,
                },
                image: Tensor::new(vec![3, size, size], pixels).map_err(NetError::from)?,
            });
        }
    }
    Ok(GeneratedDataset {
        config: config.clone(),
        seed,
        scenes,
    })
}

/// Additive smoothing applied to both distributions before KL.
pub const KL_SMOOTHING: f64 = 1e-8;

fn smoothed(p: &[f64]) -> Vec<f64> {
    let total = 1.0 + KL_SMOOTHING * p.len() as f64;
    p.iter().map(|&v| (v + KL_SMOOTHING) / total).collect()
}

/// `KL(a‖b)` on smoothed copies of both inputs.
pub fn kl_divergence(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (smoothed(a), smoothed(b));
    a.iter().zip(&b).map(|(&p, &q)| p * libm::log(p / q)).sum()
}

/// `α^k_{a,b}` between two attribute distributions of one part.
///
/// For [`Dissimilarity::Occurrence`] each slice holds the single occurrence
/// probability of the part in its class.
pub fn dissimilarity(a: &[f64], b: &[f64], mode: Dissimilarity) -> f64 {
    match mode {
        Dissimilarity::Kl => libm::exp(kl_divergence(a, b) + kl_divergence(b, a)),
        Dissimilarity::Occurrence => {
            if a[0] > 0.0 && b[0] == 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTriplet {
    pub part: usize,
    pub a: usize,
    pub b: usize,
    pub alpha: f64,
}

/// Retained counterfactual triplets, in `(part, a, b)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub triplets: Vec<GroundTruthTriplet>,
    /// Number of triplets scored before selection.
    pub scored: usize,
}

impl GroundTruth {
    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn contains(&self, part: usize, a: usize, b: usize) -> bool {
        self.triplets.iter().any(|t| t.part == part && t.a == a && t.b == b)
    }

    /// Parts that discriminate class `a` from class `b`, ascending.
    pub fn parts_for(&self, a: usize, b: usize) -> Vec<usize> {
        self.triplets
            .iter()
            .filter(|t| t.a == a && t.b == b)
            .map(|t| t.part)
            .collect()
    }
}

/// Scores every `(part, a, b)` with `a ≠ b` and keeps the ground truth.
///
/// In KL mode the `⌈keep_fraction · n⌉` largest are kept, ties broken by
/// `(part, a, b)` order. Occurrence mode keeps exactly the triplets with
/// dissimilarity 1 and ignores `keep_fraction`.
pub fn build_ground_truth(
    profiles: &[PartProfile],
    classes: usize,
    mode: Dissimilarity,
    keep_fraction: f64,
) -> Result<GroundTruth, SynthError> {
    if classes < 2 {
        return Err(SynthError::TooFewClasses(classes));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(SynthError::Config("keep_fraction must lie in (0, 1]"));
    }
    let mut scored = Vec::new();
    for (k, part) in profiles.iter().enumerate() {
        for a in 0..classes {
            for b in 0..classes {
                if a == b {
                    continue;
                }
                let alpha = match mode {
                    Dissimilarity::Kl => dissimilarity(&part.phi[a], &part.phi[b], mode),
                    Dissimilarity::Occurrence => {
                        dissimilarity(&part.occurrence[a..=a], &part.occurrence[b..=b], mode)
                    }
                };
                scored.push(GroundTruthTriplet { part: k, a, b, alpha });
            }
        }
    }
    let total = scored.len();
    let mut kept = match mode {
        Dissimilarity::Kl => {
            // stable: equal α keep (part, a, b) order
            scored.sort_by(|x, y| y.alpha.total_cmp(&x.alpha));
            let m = libm::ceil(keep_fraction * total as f64 - 1e-9) as usize;
            scored.truncate(m.min(total));
            scored
        }
        Dissimilarity::Occurrence => scored.into_iter().filter(|t| t.alpha > 0.0).collect(),
    };
    kept.sort_by_key(|t| (t.part, t.a, t.b));
    Ok(GroundTruth {
        triplets: kept,
        scored: total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserKind {
    /// Picks a uniformly random wrong class.
    Beginner,
    /// Picks the weak model's prediction.
    Advanced,
}

impl UserKind {
    pub const ALL: [UserKind; 2] = [UserKind::Beginner, UserKind::Advanced];

    pub fn as_str(self) -> &'static str {
        match self {
            UserKind::Beginner => "beginner",
            UserKind::Advanced => "advanced",
        }
    }
}

impl fmt::Display for UserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UserKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "beginner" => Ok(UserKind::Beginner),
            "advanced" => Ok(UserKind::Advanced),
            _ => Err(SynthError::Unknown {
                what: "user kind",
                value: s.into(),
            }),
        }
    }
}

/// Advanced-user choice from weak-model posteriors: the top class, or the
/// runner-up when the top class is the true one. Ties go to the lower index.
pub fn advanced_choice(posteriors: &[f64], true_class: usize) -> usize {
    let mut ranked: Vec<usize> = (0..posteriors.len()).collect();
    ranked.sort_by(|&i, &j| posteriors[j].total_cmp(&posteriors[i]).then(i.cmp(&j)));
    if ranked[0] == true_class {
        ranked[1]
    } else {
        ranked[0]
    }
}

/// Counter class a simulated user would ask about for image `x`.
pub fn virtual_user<R: Rng + ?Sized>(
    kind: UserKind,
    x: &Tensor,
    true_class: usize,
    weak_model: &ModelBundle,
    rng: &mut R,
) -> Result<usize, SynthError> {
    let classes = weak_model.classes();
    if classes < 2 {
        return Err(SynthError::TooFewClasses(classes));
    }
    if true_class >= classes {
        return Err(NetError::ClassOutOfRange {
            class: true_class,
            classes,
        }
        .into());
    }
    match kind {
        UserKind::Beginner => {
            let draw = rng.random_range(0..classes - 1);
            Ok(if draw >= true_class { draw + 1 } else { draw })
        }
        UserKind::Advanced => {
            let pass = weak_model.forward(x)?;
            Ok(advanced_choice(pass.posteriors(), true_class))
        }
    }
}
