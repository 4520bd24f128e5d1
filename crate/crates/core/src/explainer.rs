//! Turning heatmaps into regions: thresholding, area control, counterfactual
//! pairs, the attributive baseline, and tap-cell ↔ pixel mapping.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    attribution_from_pass, discriminant_from_pass, AttributionMap, CombineConfig, DiscriminantMap,
    ScoreKind,
};
use crate::grid::Grid;
use crate::micronet::{ModelBundle, Selector};
use crate::tensor::Tensor;

pub use crate::attribution::ExplainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    Discriminant,
    Attributive,
    Random,
    Full,
    Threshold,
}

/// Boolean mask over the tap grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
    /// `None` when the mask did not come from a threshold (degenerate map,
    /// random or full region).
    pub threshold: Option<f64>,
    pub source: MaskSource,
}

impl RegionMask {
    pub fn from_cells(rows: usize, cols: usize, cells: Vec<bool>, source: MaskSource) -> Self {
        assert_eq!(cells.len(), rows * cols, "mask size");
        Self {
            rows,
            cols,
            cells,
            threshold: None,
            source,
        }
    }

    pub fn empty(rows: usize, cols: usize, source: MaskSource) -> Self {
        Self::from_cells(rows, cols, vec![false; rows * cols], source)
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self::from_cells(rows, cols, vec![true; rows * cols], MaskSource::Full)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// True-count divided by `rows × cols`.
    pub fn area_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.cells.len() as f64
        }
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    pub fn rle(&self) -> Vec<u32> {
        rle_encode(&self.cells)
    }
}

/// Run lengths over a row-major mask, alternating false/true and starting
/// with a (possibly zero) run of false.
pub fn rle_encode(cells: &[bool]) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &c in cells {
        if c == current {
            run += 1;
        } else {
            counts.push(run);
            current = c;
            run = 1;
        }
    }
    counts.push(run);
    counts
}

/// Inverse of [`rle_encode`]; `None` if the runs do not cover `len` cells.
pub fn rle_decode(counts: &[u32], len: usize) -> Option<Vec<bool>> {
    let mut cells = Vec::with_capacity(len);
    let mut value = false;
    for &n in counts {
        cells.extend(core::iter::repeat_n(value, n as usize));
        value = !value;
    }
    (cells.len() == len).then_some(cells)
}

/// Cells strictly above `threshold`.
pub fn segment(grid: &Grid, threshold: f64) -> Result<RegionMask, ExplainError> {
    if !threshold.is_finite() {
        return Err(ExplainError::InvalidThreshold);
    }
    let cells = grid.values().iter().map(|&v| v > threshold).collect();
    let mut mask = RegionMask::from_cells(grid.rows(), grid.cols(), cells, MaskSource::Threshold);
    mask.threshold = Some(threshold);
    Ok(mask)
}

fn check_area(target: f64) -> Result<(), ExplainError> {
    if target > 0.0 && target <= 1.0 {
        Ok(())
    } else {
        Err(ExplainError::InvalidArea(target))
    }
}

/// Number of cells an area target asks for on an `n`-cell grid.
pub fn cells_for_area(n: usize, target: f64) -> usize {
    let k = libm::ceil(target * n as f64 - 1e-9) as usize;
    k.clamp(1, n)
}

/// The largest threshold whose mask covers at least `target` of the grid.
///
/// The `k = ⌈target·n⌉` largest values are kept; any cell tied with the k-th
/// value is kept too.
pub fn threshold_for_area(grid: &Grid, target: f64) -> Result<f64, ExplainError> {
    check_area(target)?;
    if grid.is_empty() || grid.is_constant() {
        return Err(ExplainError::DegenerateMap);
    }
    let mut sorted = grid.values().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let kth = sorted[cells_for_area(sorted.len(), target) - 1];
    Ok(kth.next_down())
}

/// Region of the requested area, or an empty region when the map is
/// degenerate. The flag reports the fallback.
pub fn region_for_area(grid: &Grid, target: f64, source: MaskSource) -> Result<(RegionMask, bool), ExplainError> {
    match threshold_for_area(grid, target) {
        Ok(t) => {
            let mut mask = segment(grid, t)?;
            mask.source = source;
            Ok((mask, false))
        }
        Err(ExplainError::DegenerateMap) => Ok((RegionMask::empty(grid.rows(), grid.cols(), source), true)),
        Err(e) => Err(e),
    }
}

/// Uniformly random region of `⌈target·n⌉` cells.
pub fn random_region<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    target: f64,
    rng: &mut R,
) -> Result<RegionMask, ExplainError> {
    check_area(target)?;
    let n = rows * cols;
    let mut cells = vec![false; n];
    for i in sample(rng, n, cells_for_area(n, target)) {
        cells[i] = true;
    }
    Ok(RegionMask::from_cells(rows, cols, cells, MaskSource::Random))
}

/// Matched regions on the query and counter image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationPair {
    /// Region of `x` informative of `y_star` but not `y_c`.
    pub query: RegionMask,
    /// Region of `x_c` informative of `y_c` but not `y_star`.
    pub counter: RegionMask,
    pub query_map: DiscriminantMap,
    pub counter_map: DiscriminantMap,
    pub y_star: usize,
    pub y_c: usize,
    pub score: ScoreKind,
    pub area: f64,
    pub query_image: Option<u32>,
    pub counter_image: Option<u32>,
}

impl ExplanationPair {
    pub fn query_degenerate(&self) -> bool {
        self.query_map.degenerate
    }

    pub fn counter_degenerate(&self) -> bool {
        self.counter_map.degenerate
    }
}

/// Discriminant explanation of `x` for `(y_star, y_c)` at a target area.
pub fn discriminant_region(
    model: &ModelBundle,
    x: &Tensor,
    y_star: usize,
    y_c: usize,
    score: ScoreKind,
    area: f64,
    config: CombineConfig,
) -> Result<(DiscriminantMap, RegionMask), ExplainError> {
    check_area(area)?;
    let pass = model.forward(x)?;
    let map = discriminant_from_pass(model, &pass, y_star, y_c, Some(score), config)?;
    let (mask, _) = region_for_area(&map.grid, area, MaskSource::Discriminant)?;
    Ok((map, mask))
}

/// Counterfactual pair: the discriminant region of `x` for `(y*, y^c)` and
/// that of `x_c` with the roles reversed, both at the same area.
#[allow(clippy::too_many_arguments)]
pub fn counterfactual_explain(
    model: &ModelBundle,
    x: &Tensor,
    x_c: &Tensor,
    y_star: usize,
    y_c: usize,
    score: ScoreKind,
    area: f64,
    config: CombineConfig,
) -> Result<ExplanationPair, ExplainError> {
    let (query_map, query) = discriminant_region(model, x, y_star, y_c, score, area, config)?;
    let (counter_map, counter) = discriminant_region(model, x_c, y_c, y_star, score, area, config)?;
    Ok(ExplanationPair {
        query,
        counter,
        query_map,
        counter_map,
        y_star,
        y_c,
        score,
        area,
        query_image: None,
        counter_image: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributiveExplanation {
    pub mask: RegionMask,
    pub map: AttributionMap,
    pub degenerate: bool,
}

/// Baseline: threshold the rectified attribution of class `y` alone.
pub fn attributive_explain(
    model: &ModelBundle,
    x: &Tensor,
    y: usize,
    area: f64,
) -> Result<AttributiveExplanation, ExplainError> {
    check_area(area)?;
    let pass = model.forward(x)?;
    let map = attribution_from_pass(model, &pass, Selector::Posterior(y), true)?;
    let (mask, degenerate) = region_for_area(&map.grid, area, MaskSource::Attributive)?;
    Ok(AttributiveExplanation { mask, map, degenerate })
}

/// Boolean mask in image pixel space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl PixelMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    /// Pixels `x0..x1 × y0..y1`, clipped to the image.
    pub fn rect(height: usize, width: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let mut m = Self::empty(height, width);
        m.fill_rect(x0, y0, x1, y1);
        m
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for y in y0.min(self.height)..y1.min(self.height) {
            for x in x0.min(self.width)..x1.min(self.width) {
                self.bits[y * self.width + x] = true;
            }
        }
    }

    /// Whether pixel `(x, y)` is inside the mask; out-of-bounds is outside.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Tap cell `(row, col)` covering pixel `(x, y)`.
pub fn pixel_to_cell(x: usize, y: usize, rows: usize, cols: usize, height: usize, width: usize) -> (usize, usize) {
    (y * rows / height, x * cols / width)
}

/// Nearest-neighbour upsampling of a cell mask to `height × width` pixels.
pub fn cell_to_pixel_region(mask: &RegionMask, height: usize, width: usize) -> PixelMask {
    let mut out = PixelMask::empty(height, width);
    for y in 0..height {
        for x in 0..width {
            let (r, c) = pixel_to_cell(x, y, mask.rows(), mask.cols(), height, width);
            out.bits[y * width + x] = mask.get(r, c);
        }
    }
    out
}
