//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not hidden; the process exits non-zero on a
//! failure only when `SCOUT_ACCEPTANCE_STRICT` is set.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scout::eval::{evaluate, EvalConfig, Method, MetricReport, DEFAULT_AREAS};
use scout::explain::{Contrast, Engine, ExplainRequest};
use scout_core::attribution::{
    attribution_from_pass, complement, discriminant_from_pass, score_certainty, score_easiness, score_softmax,
    AttributionMap, CombineConfig, ScoreKind,
};
use scout_core::dataset::Split;
use scout_core::explainer::PixelMask;
use scout_core::grid::Grid;
use scout_core::metrics::{iou, piou, precision_recall};
use scout_core::micronet::{train, Architecture, ModelBundle, Selector, TrainConfig};
use scout_core::synthgen::{generate_dataset, DatasetConfig, GeneratedDataset, Keypoint, UserKind};
use scout_core::tensor::Tensor;

use common::{path, scout, scratch, stderr};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const IMAGES_PER_CLASS: usize = 200;

struct Outcome {
    failures: usize,
    total: usize,
}

impl Outcome {
    fn record(&mut self, name: &str, pass: bool, detail: String, elapsed: Duration) {
        self.total += 1;
        self.failures += (!pass) as usize;
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag}  {name}  [{:.1}s]  {detail}", elapsed.as_secs_f64());
    }
}

struct Seeded {
    seed: u64,
    data: GeneratedDataset,
    model: ModelBundle,
}

fn gradient_fidelity(models: &[&ModelBundle], out: &mut Outcome) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for (s, model) in models.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + s as u64);
        let shape = model.arch.input;
        let x = Tensor::new(shape.to_vec(), (0..shape.iter().product()).map(|_| rng.random::<f64>()).collect()).unwrap();
        let pass = model.forward(&x).unwrap();
        let tap = pass.tap_data().to_vec();
        let c = model.classes();
        let mut selectors: Vec<Selector> = (0..c).flat_map(|k| [Selector::Posterior(k), Selector::Logit(k)]).collect();
        selectors.extend([Selector::Softmax, Selector::Certainty, Selector::Easiness, Selector::Constant]);
        let cells: Vec<usize> = (0..5).map(|_| rng.random_range(0..tap.len())).collect();
        for selector in selectors {
            let grad = model.grad_wrt_tap(&pass, selector).unwrap();
            for &i in &cells {
                let eps = 1e-4;
                let (mut plus, mut minus) = (tap.clone(), tap.clone());
                plus[i] += eps;
                minus[i] -= eps;
                let fp = model.forward_from_tap(&plus).value(selector).unwrap();
                let fm = model.forward_from_tap(&minus).value(selector).unwrap();
                let fd = (fp - fm) / (2.0 * eps);
                let g = grad.data()[i];
                let scale = fd.abs().max(g.abs()).max(1e-8);
                worst = worst.max((fd - g).abs() / scale);
                checks += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    out.record(
        "gradient fidelity (central differences, 5 cells x 3 seeds, all selectors)",
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("{checks} checks, worst relative error {worst:.2e}"),
        elapsed,
    );
}

fn score_properties(models: &[&ModelBundle], out: &mut Outcome) {
    let start = Instant::now();
    let mut ok = true;
    let mut points = 0usize;
    for c in 2..=10usize {
        let uniform = vec![1.0 / c as f64; c];
        ok &= score_certainty(&uniform).abs() <= 1e-9;
        ok &= (score_softmax(&uniform) - 1.0 / c as f64).abs() <= 1e-12;
        for hot in 0..c {
            let mut one_hot = vec![0.0; c];
            one_hot[hot] = 1.0;
            ok &= (score_certainty(&one_hot) - 1.0).abs() <= 1e-9;
            ok &= score_softmax(&one_hot) == 1.0;
        }
    }
    let mut check = |h: &[f64]| {
        let c = h.len() as f64;
        let s = score_softmax(h);
        let cert = score_certainty(h);
        points += 1;
        s >= 1.0 / c - 1e-12 && s <= 1.0 && (-1e-12..=1.0 + 1e-12).contains(&cert)
    };
    // every point of a 1/100 lattice on the 3-class simplex
    for i in 0..=100 {
        for j in 0..=100 - i {
            let k = 100 - i - j;
            ok &= check(&[i as f64 / 100.0, j as f64 / 100.0, k as f64 / 100.0]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20_000 {
        let c = rng.random_range(2..=10);
        let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>().powi(4)).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            ok &= check(&raw.iter().map(|v| v / total).collect::<Vec<_>>());
        }
    }
    for i in 0..=1000 {
        let e = score_easiness(i as f64 / 1000.0);
        ok &= (0.0..=1.0).contains(&e);
    }
    ok &= score_easiness(0.0) == 1.0 && score_easiness(1.0) == 0.0;
    for model in models {
        for s in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let shape = model.arch.input;
            let x = Tensor::new(shape.to_vec(), (0..shape.iter().product()).map(|_| rng.random::<f64>()).collect())
                .unwrap();
            let pass = model.forward(&x).unwrap();
            ok &= check(pass.posteriors());
            ok &= (0.0..=1.0).contains(&score_easiness(pass.hardness()));
        }
    }
    out.record(
        "score properties (certainty 0/1 at uniform/one-hot, softmax in [1/C,1], easiness in [0,1])",
        ok,
        format!("{points} simplex points"),
        start.elapsed(),
    );
}

fn complement_algebra(out: &mut Outcome) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut ok, mut unique) = (true, 0);
    for m in 0..1000 {
        // every fourth map is quantized so ties occur
        let values: Vec<f64> = (0..64)
            .map(|_| {
                let v = rng.random_range(0.0..5.0);
                if m % 4 == 0 {
                    (v * 2.0f64).floor()
                } else {
                    v
                }
            })
            .collect();
        let a = AttributionMap {
            grid: Grid::new(8, 8, values).unwrap(),
            selector: Selector::Constant,
            tap: 0,
            image_id: None,
            rectified: true,
        };
        let c = complement(&a);
        ok &= c.grid.min() == 0.0;
        ok &= c.grid.max() == a.grid.max() - a.grid.min();
        let min = a.grid.min();
        if a.grid.values().iter().filter(|&&v| v == min).count() == 1 {
            unique += 1;
            ok &= c.grid.argmax() == a.grid.argmin();
        }
    }
    out.record(
        "complement algebra on 1000 random maps",
        ok,
        format!("{unique} maps with a unique minimum"),
        start.elapsed(),
    );
}

fn metric_oracle(out: &mut Outcome) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut ok = true;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(4..20), rng.random_range(4..20));
        let density = rng.random_range(0.0..1.0);
        let mut mask = || PixelMask {
            height: h,
            width: w,
            bits: (0..h * w).map(|_| rng.random_bool(density)).collect(),
        };
        let (q, c) = (mask(), mask());
        let parts = rng.random_range(1..7);
        let kps = |rng: &mut ChaCha8Rng| -> Vec<Keypoint> {
            (0..parts)
                .map(|part| Keypoint {
                    part,
                    x: rng.random_range(0..w),
                    y: rng.random_range(0..h),
                })
                .collect()
        };
        let (qk, ck) = (kps(&mut rng), kps(&mut rng));
        let mut gt: Vec<usize> = (0..parts).filter(|_| rng.random_bool(0.5)).collect();
        if gt.is_empty() {
            gt.push(0);
        }
        let cgt: Vec<usize> = (0..parts).filter(|_| rng.random_bool(0.5)).collect();

        let inside = |m: &PixelMask, k: &[Keypoint]| -> BTreeSet<usize> {
            k.iter().filter(|k| m.bits[k.y * w + k.x]).map(|k| k.part).collect()
        };
        let truth: BTreeSet<usize> = gt.iter().copied().collect();
        let qi = inside(&q, &qk);
        let hits = qi.intersection(&truth).count();
        let pr = precision_recall(&q, &qk, &gt).unwrap();
        ok &= pr.precision == if qi.is_empty() { 0.0 } else { hits as f64 / qi.len() as f64 };
        ok &= pr.recall == hits as f64 / truth.len() as f64;

        let both = (0..h * w).filter(|&i| q.bits[i] && c.bits[i]).count();
        let either = (0..h * w).filter(|&i| q.bits[i] || c.bits[i]).count();
        ok &= iou(&q, &c).value == if either == 0 { 0.0 } else { both as f64 / either as f64 };

        let found_q: BTreeSet<usize> = qi.intersection(&truth).copied().collect();
        let ctruth: BTreeSet<usize> = cgt.iter().copied().collect();
        let found_c: BTreeSet<usize> = inside(&c, &ck).intersection(&ctruth).copied().collect();
        let u = found_q.union(&found_c).count();
        let expect = if u == 0 { 0.0 } else { found_q.intersection(&found_c).count() as f64 / u as f64 };
        ok &= piou(&q, &qk, &gt, &c, &ck, &cgt).value == expect;
    }
    out.record(
        "metric oracle equivalence (P, R, IoU, PIoU) on 100 random instances",
        ok,
        "exact equality".into(),
        start.elapsed(),
    );
}

/// Fraction of a map's mass in the bill quadrant (rows 0-3, cols 4-7).
fn bill_mass(g: &Grid) -> f64 {
    let (mut inside, mut total) = (0.0, 0.0);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let v = g.get(r, c);
            total += v;
            if r < g.rows() / 2 && c >= g.cols() / 2 {
                inside += v;
            }
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

fn planted_discriminant(runs: &[Seeded], training: Duration, out: &mut Outcome) {
    let start = Instant::now();
    let mut lines = Vec::new();
    for score in ScoreKind::ALL {
        let mut wins = 0;
        let mut detail = Vec::new();
        for run in runs {
            let (mut d_sum, mut a_sum, mut n, mut degenerate) = (0.0, 0.0, 0, 0);
            for scene in run.data.scenes.iter().filter(|s| s.annotation.split == Split::Test) {
                let y = scene.annotation.label;
                // siblings share the crest and differ in the bill
                let sibling = y ^ 1;
                let pass = run.model.forward(&scene.image).unwrap();
                let d = discriminant_from_pass(&run.model, &pass, y, sibling, Some(score), CombineConfig::default())
                    .unwrap();
                if d.degenerate {
                    degenerate += 1;
                    continue;
                }
                let a = attribution_from_pass(&run.model, &pass, Selector::Posterior(y), true).unwrap();
                d_sum += bill_mass(&d.grid);
                a_sum += bill_mass(&a.grid);
                n += 1;
            }
            let (d, a) = (d_sum / n as f64, a_sum / n as f64);
            wins += (d > a) as usize;
            detail.push(format!("s{} {d:.3}/{a:.3} deg {degenerate}", run.seed));
        }
        lines.push((score, wins, detail));
    }
    let elapsed = start.elapsed() + training;
    for (score, wins, detail) in lines {
        out.record(
            &format!("planted discriminant vs attributive mass fraction in class-specific quadrant [{score}]"),
            wins >= 4 && elapsed < Duration::from_secs(600),
            format!("{wins}/5 seeds (discriminant/attributive: {})", detail.join(", ")),
            elapsed,
        );
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn figure4(reports: &[MetricReport], elapsed: Duration, out: &mut Outcome) {
    let auc = |method: Method, score: Option<ScoreKind>, user: UserKind| {
        mean(reports.iter().map(|r| r.auc_row(method, score, user).expect("row").auc))
    };
    for user in UserKind::ALL {
        let attributive = auc(Method::Attributive, None, user);
        let per_score: Vec<(ScoreKind, f64)> =
            ScoreKind::ALL.iter().map(|&s| (s, auc(Method::Discriminant, Some(s), user))).collect();
        let random = auc(Method::Random, None, user);
        let all_above = per_score.iter().all(|&(_, v)| v > attributive);
        let listing: Vec<String> = per_score.iter().map(|(s, v)| format!("{s} {v:.3}")).collect();
        out.record(
            &format!("PR-AUC discriminant (every score) > attributive [{user}]"),
            all_above,
            format!("{}; attributive {attributive:.3}; random {random:.3}", listing.join(", ")),
            elapsed,
        );
        let get = |k: ScoreKind| per_score.iter().find(|(s, _)| *s == k).unwrap().1;
        let e = get(ScoreKind::Easiness);
        out.record(
            &format!("PR-AUC easiness >= softmax and certainty [{user}]"),
            e >= get(ScoreKind::Softmax) && e >= get(ScoreKind::Certainty),
            format!(
                "easiness {e:.3}, softmax {:.3}, certainty {:.3}",
                get(ScoreKind::Softmax),
                get(ScoreKind::Certainty)
            ),
            elapsed,
        );
    }
    let ips = reports.iter().flat_map(|r| &r.rows).all(|r| r.ips > 0.0);
    out.record(
        "images/second reported in every metric row",
        ips,
        format!("{} rows", reports.iter().map(|r| r.rows.len()).sum::<usize>()),
        elapsed,
    );
}

fn figure5(reports: &[MetricReport], elapsed: Duration, out: &mut Outcome) {
    for user in UserKind::ALL {
        for score in ScoreKind::ALL {
            let curve: Vec<f64> = DEFAULT_AREAS
                .iter()
                .map(|&a| mean(reports.iter().map(|r| r.row(Method::Discriminant, Some(score), user, a).unwrap().piou)))
                .collect();
            let rising = curve[..4].windows(2).all(|w| w[1] >= w[0]);
            let peak = (0..curve.len()).fold(0, |best, i| if curve[i] > curve[best] { i } else { best });
            let plateau = curve[peak..].iter().all(|&v| curve[peak] - v <= 0.05);
            let shown: Vec<String> = curve.iter().map(|v| format!("{v:.3}")).collect();
            out.record(
                &format!("PIoU sweep non-decreasing over first half, no drop > 0.05 after peak [{score}, {user}]"),
                rising && plateau,
                format!("[{}]", shown.join(", ")),
                elapsed,
            );
        }
    }
}

fn speed(run: &Seeded, out: &mut Outcome) {
    let start = Instant::now();
    let engine = Engine {
        model: run.model.clone(),
        data: run.data.clone(),
        seed: 1,
    };
    let images: Vec<(u32, usize)> = run
        .data
        .ids(Split::Test)
        .into_iter()
        .take(40)
        .map(|id| {
            let p = run.model.predict(&run.data.scene(id).unwrap().image).unwrap();
            (id, (p + 1) % 4)
        })
        .collect();
    let mut best = vec![f64::INFINITY; DEFAULT_AREAS.len()];
    for repeat in 0..20 {
        for k in 0..DEFAULT_AREAS.len() {
            // rotate the order so no area always runs first
            let a = (k + repeat) % DEFAULT_AREAS.len();
            let t = Instant::now();
            for &(image_id, counter_class) in &images {
                let request = ExplainRequest {
                    image_id,
                    counter_class,
                    score_kind: ScoreKind::Easiness,
                    area: DEFAULT_AREAS[a],
                };
                std::hint::black_box(engine.explain(&request, Contrast::Scout).unwrap());
            }
            best[a] = best[a].min(t.elapsed().as_secs_f64());
        }
    }
    let (lo, hi) = best.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let variation = (hi - lo) / lo;
    out.record(
        "explain wall time varies < 10% across area targets",
        variation < 0.10,
        format!(
            "variation {:.1}%, {:.0} images/s at the fastest area",
            100.0 * variation,
            images.len() as f64 / lo
        ),
        start.elapsed(),
    );
}

fn determinism(out: &mut Outcome) {
    let start = Instant::now();
    let dir = scratch("acceptance-determinism");
    let run = |tag: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let d = dir.join(format!("data-{tag}"));
        let m = dir.join(format!("model-{tag}"));
        let w = dir.join(format!("weak-{tag}"));
        let r = dir.join(format!("report-{tag}"));
        let steps: [Vec<&str>; 4] = [
            vec!["gen", "--out", path(&d), "--seed", "12", "--images-per-class", "40"],
            vec!["train", "--data", path(&d), "--out", path(&m), "--seed", "13", "--epochs", "5", "--quiet"],
            vec!["train", "--data", path(&d), "--out", path(&w), "--seed", "14", "--epochs", "2", "--weak", "--quiet"],
            vec![
                "eval",
                "--data",
                path(&d),
                "--model",
                path(&m),
                "--weak-model",
                path(&w),
                "--seed",
                "15",
                "--out",
                path(&r),
                "--mask-timing",
            ],
        ];
        for step in &steps {
            let o = scout(step);
            if o.status.code() != Some(0) {
                return Err(format!("{step:?}: {}", stderr(&o)));
            }
        }
        let read = |f: &str| std::fs::read(r.join(f)).map_err(|e| e.to_string());
        Ok((read("report.json")?, read("report.csv")?))
    };
    let (pass, detail) = match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => (a == b, format!("report.json {} bytes, report.csv {} bytes", a.0.len(), a.1.len())),
        (Err(e), _) | (_, Err(e)) => (false, e),
    };
    out.record(
        "gen -> train -> eval twice with fixed seeds gives byte-identical reports (timing masked)",
        pass,
        detail,
        start.elapsed(),
    );
}

fn main() {
    let mut out = Outcome { failures: 0, total: 0 };
    let started = Instant::now();

    let names = || DatasetConfig::planted(1).classes;
    let fresh: Vec<ModelBundle> =
        (0..3).map(|s| ModelBundle::init(Architecture::standard(4), names(), 50 + s).unwrap()).collect();

    let training = Instant::now();
    let runs: Vec<Seeded> = SEEDS
        .iter()
        .map(|&seed| {
            let data = generate_dataset(&DatasetConfig::planted(IMAGES_PER_CLASS), seed).unwrap();
            let model = train(
                &data.labeled(Split::Train).unwrap(),
                &Architecture::standard(4),
                &TrainConfig::default(),
                seed,
            )
            .unwrap();
            Seeded { seed, data, model }
        })
        .collect();
    let training = training.elapsed();

    let mut probes: Vec<&ModelBundle> = fresh.iter().collect();
    probes.extend(runs.iter().take(3).map(|r| &r.model));
    gradient_fidelity(&probes[3..], &mut out);
    score_properties(&probes, &mut out);
    complement_algebra(&mut out);
    metric_oracle(&mut out);
    planted_discriminant(&runs, training, &mut out);

    let eval_start = Instant::now();
    let reports: Vec<MetricReport> = runs
        .iter()
        .map(|run| {
            let weak = train(
                &run.data.labeled(Split::Train).unwrap(),
                &Architecture::weak(4),
                &TrainConfig::default(),
                run.seed + 100,
            )
            .unwrap();
            let gt = run.data.ground_truth().unwrap();
            evaluate(&run.model, Some(&weak), &run.data, &gt, &EvalConfig::new(run.seed)).unwrap()
        })
        .collect();
    let eval_elapsed = eval_start.elapsed();
    figure4(&reports, eval_elapsed, &mut out);
    figure5(&reports, eval_elapsed, &mut out);
    speed(&runs[0], &mut out);
    determinism(&mut out);

    println!(
        "acceptance: {} of {} criteria passed in {:.0}s",
        out.total - out.failures,
        out.total,
        started.elapsed().as_secs_f64()
    );
    if out.failures > 0 && std::env::var_os("SCOUT_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
