//! Explanation records shared by `scout explain` and `POST /api/explain`.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scout_core::attribution::{discriminant_from_pass, CombineConfig, DiscriminantMap, ScoreKind};
use scout_core::dataset::Split;
use scout_core::explainer::{cell_to_pixel_region, random_region, region_for_area, ExplainError, MaskSource, RegionMask};
use scout_core::metrics::parts_in_region;
use scout_core::micronet::ModelBundle;
use scout_core::synthgen::{GeneratedDataset, SceneImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::HeatmapPayload;

/// Mixes several values into one RNG seed (SplitMix64 finalizer per word).
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &w in words {
        h ^= w;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Uniform test image of class `y_c`, seeded by `(seed, image_id, y_c)`.
pub fn pick_counter_image(data: &GeneratedDataset, seed: u64, image_id: u32, y_c: usize) -> Result<u32> {
    let pool: Vec<u32> = data
        .scenes
        .iter()
        .filter(|s| s.annotation.split == Split::Test && s.annotation.label == y_c)
        .map(|s| s.annotation.id)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, image_id as u64, y_c as u64]));
    pool.choose(&mut rng)
        .copied()
        .ok_or_else(|| Error::NotFound(format!("no test image of class {y_c}")))
}

/// Read-only model and dataset behind the CLI and the service.
pub struct Engine {
    pub model: ModelBundle,
    pub data: GeneratedDataset,
    pub seed: u64,
}

/// How the highlighted regions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    /// Thresholded discriminant maps.
    #[default]
    Scout,
    /// Random regions of the same area.
    Random,
    /// The whole image.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainRequest {
    pub image_id: u32,
    pub counter_class: usize,
    #[serde(default = "default_score")]
    pub score_kind: ScoreKind,
    #[serde(default = "default_area")]
    pub area: f64,
}

fn default_score() -> ScoreKind {
    ScoreKind::Easiness
}

fn default_area() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub image_id: u32,
    pub rows: usize,
    pub cols: usize,
    pub threshold: Option<f64>,
    pub area_fraction: f64,
    /// Run lengths over the row-major cell mask, starting with a run of
    /// unselected cells.
    pub rle: Vec<u32>,
    /// Annotated parts whose keypoint lies inside the region.
    pub parts: Vec<usize>,
    pub degenerate: bool,
    pub heatmap: HeatmapPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub query: bool,
    pub counter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub image_id: u32,
    pub counter_image_id: u32,
    pub prediction: usize,
    pub prediction_name: String,
    pub confidence: f64,
    pub y_star: usize,
    pub y_c: usize,
    pub class_names: [String; 2],
    pub score_kind: ScoreKind,
    pub area: f64,
    pub contrast: Contrast,
    pub query: RegionRecord,
    pub counter: RegionRecord,
    pub degenerate: DegenerateFlags,
}

/// Maps plus masks before they are turned into a record.
pub struct RawExplanation {
    pub record: ExplanationRecord,
    pub query_map: DiscriminantMap,
    pub counter_map: DiscriminantMap,
}

impl Engine {
    pub fn scene(&self, id: u32) -> Result<&SceneImage> {
        self.data
            .scene(id)
            .ok_or_else(|| Error::NotFound(format!("unknown image id {id}")))
    }

    pub fn classes(&self) -> &[String] {
        &self.data.config.classes
    }

    fn check_class(&self, class: usize) -> Result<()> {
        let classes = self.classes().len();
        if class >= classes {
            return Err(ExplainError::ClassOutOfRange { class, classes }.into());
        }
        Ok(())
    }

    /// Test image of class `y_c`, drawn uniformly with a seed derived from
    /// the engine seed, the query image and the counter class.
    pub fn counter_image(&self, image_id: u32, y_c: usize) -> Result<u32> {
        self.check_class(y_c)?;
        pick_counter_image(&self.data, self.seed, image_id, y_c)
    }

    /// Counterfactual explanation of the model's own prediction against
    /// `counter_class`.
    pub fn explain(&self, request: &ExplainRequest, contrast: Contrast) -> Result<RawExplanation> {
        let scene = self.scene(request.image_id)?;
        let prediction = self.model.forward(&scene.image)?.prediction();
        self.explain_pair(request, prediction, contrast)
    }

    /// Explanation for an explicit `y_star`, e.g. the true class during
    /// machine teaching.
    pub fn explain_pair(&self, request: &ExplainRequest, y_star: usize, contrast: Contrast) -> Result<RawExplanation> {
        let y_c = request.counter_class;
        self.check_class(y_star)?;
        self.check_class(y_c)?;
        if y_star == y_c {
            return Err(ExplainError::SameClass(y_c).into());
        }
        if !(request.area > 0.0 && request.area <= 1.0) {
            return Err(ExplainError::InvalidArea(request.area).into());
        }
        let scene = self.scene(request.image_id)?;
        let counter_id = self.counter_image(request.image_id, y_c)?;
        let counter_scene = self.scene(counter_id)?;
        let config = CombineConfig::default();

        let pass = self.model.forward(&scene.image)?;
        let counter_pass = self.model.forward(&counter_scene.image)?;
        let mut query_map = discriminant_from_pass(&self.model, &pass, y_star, y_c, Some(request.score_kind), config)?;
        let mut counter_map =
            discriminant_from_pass(&self.model, &counter_pass, y_c, y_star, Some(request.score_kind), config)?;
        query_map.image_id = Some(request.image_id);
        counter_map.image_id = Some(counter_id);

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, request.image_id as u64, y_c as u64, 1]));
        let mut region = |map: &DiscriminantMap| -> Result<(RegionMask, bool)> {
            let (rows, cols) = (map.grid.rows(), map.grid.cols());
            Ok(match contrast {
                Contrast::Scout => region_for_area(&map.grid, request.area, MaskSource::Discriminant)?,
                Contrast::Random => (random_region(rows, cols, request.area, &mut rng)?, false),
                Contrast::Full => (RegionMask::full(rows, cols), false),
            })
        };
        let (query_mask, query_empty) = region(&query_map)?;
        let (counter_mask, counter_empty) = region(&counter_map)?;

        let names = self.classes();
        let query = self.region_record(scene, &query_map, &query_mask, query_map.degenerate || query_empty)?;
        let counter =
            self.region_record(counter_scene, &counter_map, &counter_mask, counter_map.degenerate || counter_empty)?;
        let prediction = pass.prediction();
        let record = ExplanationRecord {
            image_id: request.image_id,
            counter_image_id: counter_id,
            prediction,
            prediction_name: names[prediction].clone(),
            confidence: pass.posteriors()[prediction],
            y_star,
            y_c,
            class_names: [names[y_star].clone(), names[y_c].clone()],
            score_kind: request.score_kind,
            area: request.area,
            contrast,
            degenerate: DegenerateFlags {
                query: query.degenerate,
                counter: counter.degenerate,
            },
            query,
            counter,
        };
        Ok(RawExplanation {
            record,
            query_map,
            counter_map,
        })
    }

    fn region_record(
        &self,
        scene: &SceneImage,
        map: &DiscriminantMap,
        mask: &RegionMask,
        degenerate: bool,
    ) -> Result<RegionRecord> {
        let size = self.data.config.image_size;
        let pixels = cell_to_pixel_region(mask, size, size);
        Ok(RegionRecord {
            image_id: scene.annotation.id,
            rows: mask.rows(),
            cols: mask.cols(),
            threshold: mask.threshold,
            area_fraction: mask.area_fraction(),
            rle: mask.rle(),
            parts: parts_in_region(&pixels, &scene.annotation.keypoints),
            degenerate,
            heatmap: HeatmapPayload::from_grid(&map.grid)?,
        })
    }
}
