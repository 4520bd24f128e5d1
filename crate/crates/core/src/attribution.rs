//! Gradient × activation attribution maps, confidence scores, and the
//! discriminant map that combines them.
//!
//! The attribution of a scalar output `p` to tap cell `(i, j)` is the inner
//! product, over channels, of `∂p/∂f_{i,j}` with the activation `f_{i,j}`.
//! A discriminant map multiplies three such maps: the predicted class, the
//! complement of the counter class, and a confidence score.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::micronet::{ForwardPass, ModelBundle, NetError, Selector};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExplainError {
    #[error("predicted and counter class are both {0}")]
    SameClass(usize),
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("unknown score kind `{0}`")]
    UnknownScore(String),
    #[error("area fraction {0} outside (0, 1]")]
    InvalidArea(f64),
    #[error("threshold must be finite")]
    InvalidThreshold,
    #[error("map is constant; no threshold separates its cells")]
    DegenerateMap,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Which confidence score sharpens the discriminant map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Softmax,
    Certainty,
    Easiness,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::Softmax, ScoreKind::Certainty, ScoreKind::Easiness];

    pub fn selector(self) -> Selector {
        match self {
            ScoreKind::Softmax => Selector::Softmax,
            ScoreKind::Certainty => Selector::Certainty,
            ScoreKind::Easiness => Selector::Easiness,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Softmax => "softmax",
            ScoreKind::Certainty => "certainty",
            ScoreKind::Easiness => "easiness",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = ExplainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(ScoreKind::Softmax),
            "certainty" => Ok(ScoreKind::Certainty),
            "easiness" => Ok(ScoreKind::Easiness),
            _ => Err(ExplainError::UnknownScore(s.into())),
        }
    }
}

/// Sign handling and scaling of the discriminant factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombineConfig {
    /// Clamp negative attributions to zero before complement and product.
    pub rectify: bool,
    /// Max-normalize each factor before the product.
    pub normalize: bool,
}

impl Default for CombineConfig {
    fn default() -> Self {
        Self {
            rectify: true,
            normalize: true,
        }
    }
}

impl CombineConfig {
    /// Plain product of the raw factors.
    pub const RAW: CombineConfig = CombineConfig {
        rectify: false,
        normalize: false,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub grid: Grid,
    pub selector: Selector,
    pub tap: usize,
    pub image_id: Option<u32>,
    pub rectified: bool,
}

/// Per-cell `⟨∂target/∂f_{i,j}, f_{i,j}⟩`, optionally clamped at zero.
pub fn attribution_from_pass(
    model: &ModelBundle,
    pass: &ForwardPass,
    selector: Selector,
    rectify: bool,
) -> Result<AttributionMap, NetError> {
    let grad = model.grad_wrt_tap(pass, selector)?;
    let [d, h, w] = pass.tap_shape();
    let acts = pass.tap_data();
    let g = grad.data();
    let hw = h * w;
    let mut cells = alloc::vec![0.0; hw];
    for c in 0..d {
        for (cell, (gv, av)) in cells.iter_mut().zip(g[c * hw..(c + 1) * hw].iter().zip(&acts[c * hw..(c + 1) * hw])) {
            *cell += gv * av;
        }
    }
    if rectify {
        for v in &mut cells {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    Ok(AttributionMap {
        grid: Grid::new(h, w, cells).map_err(NetError::from)?,
        selector,
        tap: model.tap,
        image_id: None,
        rectified: rectify,
    })
}

/// Rectified attribution map of `selector` for image `x`.
pub fn attribution_map(model: &ModelBundle, x: &Tensor, selector: Selector) -> Result<AttributionMap, NetError> {
    let pass = model.forward(x)?;
    attribution_from_pass(model, &pass, selector, true)
}

/// `ā_{i,j} = max a − a_{i,j}`.
pub fn complement(a: &AttributionMap) -> AttributionMap {
    let max = a.grid.max();
    AttributionMap {
        grid: a.grid.map(|v| max - v),
        ..a.clone()
    }
}

/// Largest class posterior.
pub fn score_softmax(posteriors: &[f64]) -> f64 {
    posteriors.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `1 + (1/log C) Σ h log h`, with `0 log 0 = 0`.
pub fn score_certainty(posteriors: &[f64]) -> f64 {
    let classes = posteriors.len();
    assert!(classes >= 2, "certainty needs at least two classes");
    let neg_entropy: f64 = posteriors
        .iter()
        .map(|&h| if h > 0.0 { h * libm::log(h) } else { 0.0 })
        .sum();
    (1.0 + neg_entropy / libm::log(classes as f64)).clamp(0.0, 1.0)
}

/// `1 − s^hp(x)`.
pub fn score_easiness(hardness: f64) -> f64 {
    1.0 - hardness
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminantMap {
    pub grid: Grid,
    pub y_star: usize,
    pub y_c: usize,
    pub score: Option<ScoreKind>,
    pub image_id: Option<u32>,
    /// The map is all zero, so it cannot rank cells.
    pub degenerate: bool,
    /// The score attribution was all zero and was replaced by ones.
    pub score_fallback: bool,
}

fn check_pair(model: &ModelBundle, y_star: usize, y_c: usize) -> Result<(), ExplainError> {
    let classes = model.classes();
    for class in [y_star, y_c] {
        if class >= classes {
            return Err(ExplainError::ClassOutOfRange { class, classes });
        }
    }
    if y_star == y_c {
        return Err(ExplainError::SameClass(y_star));
    }
    Ok(())
}

/// Discriminant map from an existing forward pass.
///
/// With `score == None` the score factor is all ones, which is also what an
/// all-zero score attribution falls back to.
pub fn discriminant_from_pass(
    model: &ModelBundle,
    pass: &ForwardPass,
    y_star: usize,
    y_c: usize,
    score: Option<ScoreKind>,
    config: CombineConfig,
) -> Result<DiscriminantMap, ExplainError> {
    check_pair(model, y_star, y_c)?;
    let prepare = |g: Grid| if config.normalize { g.max_normalized() } else { g };

    let predicted = attribution_from_pass(model, pass, Selector::Posterior(y_star), config.rectify)?;
    let counter = attribution_from_pass(model, pass, Selector::Posterior(y_c), config.rectify)?;
    let predicted = prepare(predicted.grid);
    let counter = prepare(complement(&counter).grid);

    let (score_factor, score_fallback) = match score {
        Some(kind) => {
            let s = attribution_from_pass(model, pass, kind.selector(), config.rectify)?.grid;
            if s.is_zero() {
                (Grid::filled(s.rows(), s.cols(), 1.0), true)
            } else {
                (prepare(s), false)
            }
        }
        None => (Grid::filled(predicted.rows(), predicted.cols(), 1.0), false),
    };

    let mut degenerate = predicted.is_zero() || counter.is_zero();
    let grid = if degenerate {
        Grid::filled(predicted.rows(), predicted.cols(), 0.0)
    } else {
        let d = predicted.mul(&counter).mul(&score_factor);
        degenerate = d.is_zero();
        d
    };
    Ok(DiscriminantMap {
        grid,
        y_star,
        y_c,
        score,
        image_id: None,
        degenerate,
        score_fallback,
    })
}

/// Map of the cells informative of `y_star` but not of `y_c`, sharpened by
/// the chosen confidence score.
pub fn discriminant_map(
    model: &ModelBundle,
    x: &Tensor,
    y_star: usize,
    y_c: usize,
    score: ScoreKind,
    config: CombineConfig,
) -> Result<DiscriminantMap, ExplainError> {
    check_pair(model, y_star, y_c)?;
    let pass = model.forward(x)?;
    discriminant_from_pass(model, &pass, y_star, y_c, Some(score), config)
}
