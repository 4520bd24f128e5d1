//! Batch evaluation under the proxy-localization protocol and report files.
//!
//! For every test image the model's prediction is the query class `y*`, a
//! simulated user picks the counter class `y^c`, and each method produces a
//! query region on the image and a counter region on a random test image of
//! class `y^c`. Regions are scored against the ground-truth parts of
//! `(y*, y^c)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scout_core::attribution::{attribution_from_pass, discriminant_from_pass, CombineConfig, ScoreKind};
use scout_core::dataset::Split;
use scout_core::explainer::{
    cell_to_pixel_region, random_region, region_for_area, segment, threshold_for_area, ExplainError, MaskSource,
    PixelMask, RegionMask,
};
use scout_core::grid::Grid;
use scout_core::metrics::{iou, part_mask, piou, pr_auc, precision_recall, PrecisionRecall};
use scout_core::micronet::{ModelBundle, Selector};
use scout_core::synthgen::{virtual_user, GeneratedDataset, GroundTruth, SceneImage, UserKind};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{mix_seed, pick_counter_image};
use crate::fsutil::{read_json, write_atomic, write_json};

/// Area targets swept by default, as fractions of the tap grid.
pub const DEFAULT_AREAS: [f64; 8] = [0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5];

pub const CSV_HEADER: [&str; 11] = ["method", "score", "user", "area", "P", "R", "IoU", "PIoU", "IPS", "n", "flags"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Discriminant,
    Attributive,
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Discriminant, Method::Attributive, Method::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Discriminant => "discriminant",
            Method::Attributive => "attributive",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discriminant" => Ok(Method::Discriminant),
            "attributive" => Ok(Method::Attributive),
            "random" => Ok(Method::Random),
            _ => Err(Error::Usage(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Each map is thresholded on its own value distribution.
    #[default]
    PerImage,
    /// One threshold per row, from the pooled values of all maps.
    Global,
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-image" => Ok(ThresholdMode::PerImage),
            "global" => Ok(ThresholdMode::Global),
            _ => Err(Error::Usage(format!("unknown threshold mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub scores: Vec<ScoreKind>,
    pub users: Vec<UserKind>,
    pub areas: Vec<f64>,
    pub seed: u64,
    pub threshold_mode: ThresholdMode,
    pub combine: CombineConfig,
}

impl EvalConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            scores: ScoreKind::ALL.to_vec(),
            users: UserKind::ALL.to_vec(),
            areas: DEFAULT_AREAS.to_vec(),
            seed,
            threshold_mode: ThresholdMode::PerImage,
            combine: CombineConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.users.is_empty() || self.areas.is_empty() {
            return Err(Error::Usage("methods, users and areas must be non-empty".into()));
        }
        if self.methods.contains(&Method::Discriminant) && self.scores.is_empty() {
            return Err(Error::Usage("the discriminant method needs at least one score".into()));
        }
        if let Some(&a) = self.areas.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
            return Err(ExplainError::InvalidArea(a).into());
        }
        Ok(())
    }

    /// `(method, score)` combinations in report order.
    pub fn variants(&self) -> Vec<(Method, Option<ScoreKind>)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            match m {
                Method::Discriminant => out.extend(self.scores.iter().map(|&s| (m, Some(s)))),
                _ => out.push((m, None)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub score: Option<ScoreKind>,
    pub user: UserKind,
    pub area: f64,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub piou: f64,
    /// Images explained per second of wall time.
    pub ips: f64,
    pub n: usize,
    pub flags: String,
    pub precision_std: f64,
    pub recall_std: f64,
    pub iou_std: f64,
    pub piou_std: f64,
    /// Query regions without any annotated part (precision set to 0).
    pub empty_regions: usize,
    /// Query or counter maps that could not be thresholded.
    pub degenerate: usize,
    /// Both part sets were empty when computing PIoU (PIoU set to 0).
    pub empty_piou: usize,
    /// More than half of the maps were degenerate.
    pub unreliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub method: Method,
    pub score: Option<ScoreKind>,
    pub user: UserKind,
    pub auc: f64,
    pub auc_std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageStatus {
    Evaluated,
    /// The user picked the predicted class, so there is nothing to contrast.
    SameClass,
    NoGroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetail {
    pub image_id: u32,
    pub user: UserKind,
    pub label: usize,
    pub y_star: usize,
    pub y_c: usize,
    pub counter_image: Option<u32>,
    pub gt_parts: Vec<usize>,
    pub status: ImageStatus,
    /// PR-AUC per `method` or `method/score`.
    pub auc: BTreeMap<String, f64>,
    /// Precision and recall per variant, one entry per area.
    pub curves: BTreeMap<String, Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: EvalConfig,
    pub dataset_seed: u64,
    pub model_seed: u64,
    pub weak_model_seed: Option<u64>,
    pub test_images: usize,
    pub rows: Vec<MetricRow>,
    pub auc: Vec<AucRow>,
    pub images: Vec<ImageDetail>,
}

impl MetricReport {
    /// Zeroes every wall-clock derived field.
    pub fn mask_timing(&mut self) {
        for row in &mut self.rows {
            row.ips = 0.0;
        }
    }

    pub fn row(&self, method: Method, score: Option<ScoreKind>, user: UserKind, area: f64) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.score == score && r.user == user && r.area == area)
    }

    pub fn auc_row(&self, method: Method, score: Option<ScoreKind>, user: UserKind) -> Option<&AucRow> {
        self.auc
            .iter()
            .find(|r| r.method == method && r.score == score && r.user == user)
    }
}

pub fn variant_key(method: Method, score: Option<ScoreKind>) -> String {
    match score {
        Some(s) => format!("{method}/{s}"),
        None => method.to_string(),
    }
}

/// One contrasted image for one user.
struct Case<'a> {
    scene: &'a SceneImage,
    counter: &'a SceneImage,
    user: usize,
    y_star: usize,
    y_c: usize,
    gt: Vec<usize>,
    counter_gt: Vec<usize>,
}

/// Maps of one variant for one case.
struct Maps {
    query: Option<Grid>,
    counter: Option<Grid>,
    query_degenerate: bool,
    counter_degenerate: bool,
    elapsed: Duration,
}

#[derive(Default)]
struct Sample {
    pr: Vec<PrecisionRecall>,
    iou: Vec<f64>,
    piou: Vec<f64>,
    empty_piou: usize,
    degenerate: usize,
    elapsed: Duration,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn compute_maps(
    model: &ModelBundle,
    case: &Case,
    method: Method,
    score: Option<ScoreKind>,
    combine: CombineConfig,
) -> Result<Maps> {
    let start = Instant::now();
    let pass = model.forward(&case.scene.image)?;
    let counter_pass = model.forward(&case.counter.image)?;
    let (query, counter, qd, cd) = match method {
        Method::Discriminant => {
            let q = discriminant_from_pass(model, &pass, case.y_star, case.y_c, score, combine)?;
            let c = discriminant_from_pass(model, &counter_pass, case.y_c, case.y_star, score, combine)?;
            (q.grid, c.grid, q.degenerate, c.degenerate)
        }
        Method::Attributive => {
            let q = attribution_from_pass(model, &pass, Selector::Posterior(case.y_star), true)?;
            let c = attribution_from_pass(model, &counter_pass, Selector::Posterior(case.y_c), true)?;
            let (qd, cd) = (q.grid.is_constant(), c.grid.is_constant());
            (q.grid, c.grid, qd, cd)
        }
        Method::Random => unreachable!("random regions have no map"),
    };
    Ok(Maps {
        query: Some(query),
        counter: Some(counter),
        query_degenerate: qd,
        counter_degenerate: cd,
        elapsed: start.elapsed(),
    })
}

fn pooled_threshold<'a>(maps: impl Iterator<Item = &'a Maps>, area: f64) -> Option<f64> {
    let values: Vec<f64> = maps
        .flat_map(|m| [(&m.query, m.query_degenerate), (&m.counter, m.counter_degenerate)])
        .filter(|(_, degenerate)| !degenerate)
        .filter_map(|(g, _)| g.as_ref())
        .flat_map(|g| g.values().iter().copied())
        .collect();
    let n = values.len();
    let pooled = Grid::new(1, n.max(1), if n == 0 { vec![0.0] } else { values }).ok()?;
    threshold_for_area(&pooled, area).ok()
}

fn threshold_region(grid: &Grid, degenerate: bool, area: f64, global: Option<Option<f64>>) -> Result<(RegionMask, bool)> {
    if degenerate {
        return Ok((RegionMask::empty(grid.rows(), grid.cols(), MaskSource::Threshold), true));
    }
    match global {
        None => Ok(region_for_area(grid, area, MaskSource::Threshold)?),
        Some(Some(t)) => Ok((segment(grid, t)?, false)),
        Some(None) => Ok((RegionMask::empty(grid.rows(), grid.cols(), MaskSource::Threshold), true)),
    }
}

/// Runs every configured method on the test split.
pub fn evaluate(
    model: &ModelBundle,
    weak_model: Option<&ModelBundle>,
    data: &GeneratedDataset,
    gt: &GroundTruth,
    config: &EvalConfig,
) -> Result<MetricReport> {
    config.validate()?;
    if model.class_names != data.config.classes {
        return Err(Error::ClassMismatch {
            model: model.class_names.clone(),
            dataset: data.config.classes.clone(),
        });
    }
    if config.users.contains(&UserKind::Advanced) && weak_model.is_none() {
        return Err(Error::Usage("the advanced user needs a weak model".into()));
    }
    let size = data.config.image_size;
    let test: Vec<&SceneImage> = data.scenes.iter().filter(|s| s.annotation.split == Split::Test).collect();
    if test.is_empty() {
        return Err(scout_core::micronet::NetError::EmptyDataset.into());
    }
    let predictions: Vec<usize> = test
        .iter()
        .map(|s| model.forward(&s.image).map(|p| p.prediction()))
        .collect::<std::result::Result<_, _>>()?;

    let mut details = Vec::new();
    let mut cases = Vec::new();
    for (u, &user) in config.users.iter().enumerate() {
        for (scene, &y_star) in test.iter().zip(&predictions) {
            let id = scene.annotation.id;
            let label = scene.annotation.label;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, u as u64, id as u64]));
            let weak = weak_model.unwrap_or(model);
            let y_c = virtual_user(user, &scene.image, label, weak, &mut rng)?;
            let mut detail = ImageDetail {
                image_id: id,
                user,
                label,
                y_star,
                y_c,
                counter_image: None,
                gt_parts: Vec::new(),
                status: ImageStatus::Evaluated,
                auc: BTreeMap::new(),
                curves: BTreeMap::new(),
            };
            if y_c == y_star {
                detail.status = ImageStatus::SameClass;
                details.push(detail);
                continue;
            }
            let parts = gt.parts_for(y_star, y_c);
            if parts.is_empty() {
                detail.status = ImageStatus::NoGroundTruth;
                details.push(detail);
                continue;
            }
            let counter_id = pick_counter_image(data, config.seed, id, y_c)?;
            let counter = data.scene(counter_id).ok_or_else(|| Error::NotFound(format!("image {counter_id}")))?;
            detail.counter_image = Some(counter_id);
            detail.gt_parts = parts.clone();
            cases.push(Case {
                scene,
                counter,
                user: u,
                y_star,
                y_c,
                gt: parts,
                counter_gt: gt.parts_for(y_c, y_star),
            });
            details.push(detail);
        }
    }
    // details and cases are in the same (user, image) order; evaluated
    // details map one-to-one onto cases.
    let case_of_detail: Vec<Option<usize>> = {
        let mut next = 0;
        details
            .iter()
            .map(|d| {
                (d.status == ImageStatus::Evaluated).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };

    let mut rows = Vec::new();
    let mut auc_rows = Vec::new();
    for (method, score) in config.variants() {
        let key = variant_key(method, score);
        let maps: Vec<Option<Maps>> = if method == Method::Random {
            cases.iter().map(|_| None).collect()
        } else {
            cases
                .iter()
                .map(|c| compute_maps(model, c, method, score, config.combine).map(Some))
                .collect::<Result<_>>()?
        };
        // per case, per area
        let mut per_case: Vec<Vec<Sample>> = (0..cases.len())
            .map(|_| (0..config.areas.len()).map(|_| Sample::default()).collect())
            .collect();
        let mut query_masks: Vec<Vec<PixelMask>> = vec![Vec::new(); cases.len()];
        for (a, &area) in config.areas.iter().enumerate() {
            for (u, _) in config.users.iter().enumerate() {
                let members: Vec<usize> = (0..cases.len()).filter(|&i| cases[i].user == u).collect();
                let global = match (config.threshold_mode, method) {
                    (ThresholdMode::Global, Method::Discriminant | Method::Attributive) => {
                        Some(pooled_threshold(members.iter().filter_map(|&i| maps[i].as_ref()), area))
                    }
                    _ => None,
                };
                for &i in &members {
                    let case = &cases[i];
                    let start = Instant::now();
                    let (q, c, degenerate) = match &maps[i] {
                        Some(m) => {
                            let (q, qe) = threshold_region(m.query.as_ref().unwrap(), m.query_degenerate, area, global)?;
                            let (c, ce) =
                                threshold_region(m.counter.as_ref().unwrap(), m.counter_degenerate, area, global)?;
                            (q, c, qe as usize + ce as usize)
                        }
                        None => {
                            let salt = [config.seed, u as u64, case.scene.annotation.id as u64, a as u64];
                            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&salt));
                            let (rows, cols) = model_grid(model);
                            (
                                random_region(rows, cols, area, &mut rng)?,
                                random_region(rows, cols, area, &mut rng)?,
                                0,
                            )
                        }
                    };
                    let thresholding = start.elapsed();
                    let qp = cell_to_pixel_region(&q, size, size);
                    let cp = cell_to_pixel_region(&c, size, size);
                    let kps = &case.scene.annotation.keypoints;
                    let pr = precision_recall(&qp, kps, &case.gt).expect("cases have ground truth");
                    let truth = part_mask(size, size, kps, &case.gt, data.config.glyph_size);
                    let part_iou = piou(
                        &qp,
                        kps,
                        &case.gt,
                        &cp,
                        &case.counter.annotation.keypoints,
                        &case.counter_gt,
                    );
                    let s = &mut per_case[i][a];
                    s.pr.push(pr);
                    s.iou.push(iou(&qp, &truth).value);
                    s.piou.push(part_iou.value);
                    s.empty_piou += part_iou.empty_union as usize;
                    s.degenerate += degenerate;
                    s.elapsed = thresholding + maps[i].as_ref().map_or(Duration::ZERO, |m| m.elapsed);
                    query_masks[i].push(qp);
                }
            }
        }

        for (u, &user) in config.users.iter().enumerate() {
            let members: Vec<usize> = (0..cases.len()).filter(|&i| cases[i].user == u).collect();
            for (a, &area) in config.areas.iter().enumerate() {
                let samples: Vec<&Sample> = members.iter().map(|&i| &per_case[i][a]).collect();
                let collect = |f: &dyn Fn(&Sample) -> f64| samples.iter().map(|s| f(s)).collect::<Vec<f64>>();
                let (p, p_std) = mean_std(&collect(&|s| s.pr[0].precision));
                let (r, r_std) = mean_std(&collect(&|s| s.pr[0].recall));
                let (j, j_std) = mean_std(&collect(&|s| s.iou[0]));
                let (pi, pi_std) = mean_std(&collect(&|s| s.piou[0]));
                let n = samples.len();
                let empty_regions = samples.iter().filter(|s| s.pr[0].empty_region).count();
                let degenerate: usize = samples.iter().map(|s| s.degenerate).sum();
                let empty_piou: usize = samples.iter().map(|s| s.empty_piou).sum();
                // two maps per image
                let unreliable = n > 0 && degenerate > n;
                let elapsed: f64 = samples.iter().map(|s| s.elapsed.as_secs_f64()).sum();
                let mut flags = vec![format!("empty={empty_regions}"), format!("degenerate={degenerate}")];
                if empty_piou > 0 {
                    flags.push(format!("empty_piou={empty_piou}"));
                }
                if unreliable {
                    flags.push("unreliable".into());
                }
                rows.push(MetricRow {
                    method,
                    score,
                    user,
                    area,
                    precision: p,
                    recall: r,
                    iou: j,
                    piou: pi,
                    ips: if elapsed > 0.0 { n as f64 / elapsed } else { 0.0 },
                    n,
                    flags: flags.join(";"),
                    precision_std: p_std,
                    recall_std: r_std,
                    iou_std: j_std,
                    piou_std: pi_std,
                    empty_regions,
                    degenerate,
                    empty_piou,
                    unreliable,
                });
            }
            let mut aucs = Vec::new();
            for &i in &members {
                let curve: Vec<PrecisionRecall> = {
                    let mut order: Vec<usize> = (0..config.areas.len()).collect();
                    order.sort_by_key(|&a| query_masks[i][a].count());
                    order.into_iter().map(|a| per_case[i][a].pr[0]).collect()
                };
                aucs.push(pr_auc(&curve));
            }
            let (auc, auc_std) = mean_std(&aucs);
            auc_rows.push(AucRow {
                method,
                score,
                user,
                auc,
                auc_std,
                n: members.len(),
            });
            for (&i, &value) in members.iter().zip(&aucs) {
                let d = case_of_detail.iter().position(|&c| c == Some(i)).expect("case has a detail");
                details[d].auc.insert(key.clone(), value);
                details[d].curves.insert(
                    key.clone(),
                    per_case[i].iter().map(|s| [s.pr[0].precision, s.pr[0].recall]).collect(),
                );
            }
        }
    }

    Ok(MetricReport {
        config: config.clone(),
        dataset_seed: data.seed,
        model_seed: model.seed,
        weak_model_seed: weak_model.map(|m| m.seed),
        test_images: test.len(),
        rows,
        auc: auc_rows,
        images: details,
    })
}

fn model_grid(model: &ModelBundle) -> (usize, usize) {
    let out = model.arch.block_outputs()[model.tap];
    (out[1], out[2])
}

fn score_cell(score: Option<ScoreKind>) -> String {
    score.map_or_else(|| "-".to_string(), |s| s.to_string())
}

/// CSV with the fixed column order of [`CSV_HEADER`].
pub fn report_csv(report: &MetricReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.method.to_string(),
            score_cell(r.score),
            r.user.to_string(),
            r.area.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.iou.to_string(),
            r.piou.to_string(),
            r.ips.to_string(),
            r.n.to_string(),
            r.flags.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn emit_report(report: &MetricReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = report_csv(report)?;
    write_json(&dir.join("report.json"), report)?;
    write_atomic(&dir.join("report.csv"), csv.as_bytes())
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub method: Method,
    pub score: Option<ScoreKind>,
    pub user: UserKind,
    /// `None` for PR-AUC aggregates.
    pub area: Option<f64>,
    pub seeds: usize,
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub iou: [f64; 2],
    pub piou: [f64; 2],
    pub auc: [f64; 2],
}

/// Mean and standard deviation across per-seed reports of the same config.
pub fn aggregate_seeds(reports: &[MetricReport]) -> Vec<SeedAggregate> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    let ms = |v: Vec<f64>| {
        let (m, s) = mean_std(&v);
        [m, s]
    };
    let mut out = Vec::new();
    for row in &first.rows {
        let same: Vec<&MetricRow> = reports
            .iter()
            .filter_map(|r| r.row(row.method, row.score, row.user, row.area))
            .collect();
        out.push(SeedAggregate {
            method: row.method,
            score: row.score,
            user: row.user,
            area: Some(row.area),
            seeds: same.len(),
            precision: ms(same.iter().map(|r| r.precision).collect()),
            recall: ms(same.iter().map(|r| r.recall).collect()),
            iou: ms(same.iter().map(|r| r.iou).collect()),
            piou: ms(same.iter().map(|r| r.piou).collect()),
            auc: [0.0, 0.0],
        });
    }
    for row in &first.auc {
        let same: Vec<&AucRow> = reports
            .iter()
            .filter_map(|r| r.auc_row(row.method, row.score, row.user))
            .collect();
        out.push(SeedAggregate {
            method: row.method,
            score: row.score,
            user: row.user,
            area: None,
            seeds: same.len(),
            precision: [0.0, 0.0],
            recall: [0.0, 0.0],
            iou: [0.0, 0.0],
            piou: [0.0, 0.0],
            auc: ms(same.iter().map(|r| r.auc).collect()),
        });
    }
    out
}
