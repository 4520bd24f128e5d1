//! Proxy-localization metrics: part precision/recall, PR curves, mask IoU
//! and part IoU of counterfactual pairs.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::explainer::PixelMask;
use crate::synthgen::Keypoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// Ground-truth parts inside the region.
    pub hits: usize,
    /// Annotated parts inside the region.
    pub parts_in_region: usize,
    /// The region contained no annotated part, so precision was set to 0.
    pub empty_region: bool,
}

/// Part ids whose keypoint falls inside `region`, ascending and deduplicated.
pub fn parts_in_region(region: &PixelMask, keypoints: &[Keypoint]) -> Vec<usize> {
    let mut parts: Vec<usize> = keypoints
        .iter()
        .filter(|k| region.contains(k.x, k.y))
        .map(|k| k.part)
        .collect();
    parts.sort_unstable();
    parts.dedup();
    parts
}

/// Precision and recall of a region against the ground-truth parts of one
/// class pair. Returns `None` when `gt_parts` is empty.
pub fn precision_recall(region: &PixelMask, keypoints: &[Keypoint], gt_parts: &[usize]) -> Option<PrecisionRecall> {
    if gt_parts.is_empty() {
        return None;
    }
    let inside = parts_in_region(region, keypoints);
    let hits = inside.iter().filter(|p| gt_parts.contains(p)).count();
    let mut gt: Vec<usize> = gt_parts.to_vec();
    gt.sort_unstable();
    gt.dedup();
    let empty_region = inside.is_empty();
    Some(PrecisionRecall {
        precision: if empty_region { 0.0 } else { hits as f64 / inside.len() as f64 },
        recall: hits as f64 / gt.len() as f64,
        hits,
        parts_in_region: inside.len(),
        empty_region,
    })
}

/// Points ordered by increasing region area, i.e. for a nested family of
/// regions recall is non-decreasing along the curve.
pub fn pr_curve(regions: &[PixelMask], keypoints: &[Keypoint], gt_parts: &[usize]) -> Option<Vec<PrecisionRecall>> {
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by_key(|&i| regions[i].count());
    order
        .into_iter()
        .map(|i| precision_recall(&regions[i], keypoints, gt_parts))
        .collect()
}

/// Step-wise area under a PR curve, `Σ (R_i − R_{i−1}) P_i` with `R_0 = 0`.
pub fn pr_auc(curve: &[PrecisionRecall]) -> f64 {
    let mut prev = 0.0;
    let mut auc = 0.0;
    for p in curve {
        auc += (p.recall - prev).max(0.0) * p.precision;
        prev = prev.max(p.recall);
    }
    auc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetIou {
    pub value: f64,
    /// The union was empty and the value was set to 0.
    pub empty_union: bool,
}

/// `|a ∩ b| / |a ∪ b|` over pixels.
pub fn iou(a: &PixelMask, b: &PixelMask) -> SetIou {
    assert_eq!((a.height, a.width), (b.height, b.width), "mask sizes");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    ratio(inter, union)
}

fn ratio(inter: usize, union: usize) -> SetIou {
    if union == 0 {
        SetIou {
            value: 0.0,
            empty_union: true,
        }
    } else {
        SetIou {
            value: inter as f64 / union as f64,
            empty_union: false,
        }
    }
}

/// Union of the `size × size` glyph boxes of the listed parts.
pub fn part_mask(height: usize, width: usize, keypoints: &[Keypoint], parts: &[usize], size: usize) -> PixelMask {
    let mut m = PixelMask::empty(height, width);
    let half = size / 2;
    for k in keypoints.iter().filter(|k| parts.contains(&k.part)) {
        m.fill_rect(k.x.saturating_sub(half), k.y.saturating_sub(half), k.x + size - half, k.y + size - half);
    }
    m
}

/// IoU of two part-id sets.
pub fn set_iou(a: &[usize], b: &[usize]) -> SetIou {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    let inter = a.iter().filter(|p| b.binary_search(p).is_ok()).count();
    ratio(inter, a.len() + b.len() - inter)
}

/// Part IoU of a counterfactual pair: ground-truth parts found in the query
/// region versus those found in the counter region.
pub fn piou(
    query: &PixelMask,
    query_keypoints: &[Keypoint],
    query_gt: &[usize],
    counter: &PixelMask,
    counter_keypoints: &[Keypoint],
    counter_gt: &[usize],
) -> SetIou {
    let found = |region, kps, gt: &[usize]| -> Vec<usize> {
        parts_in_region(region, kps).into_iter().filter(|p| gt.contains(p)).collect()
    };
    set_iou(
        &found(query, query_keypoints, query_gt),
        &found(counter, counter_keypoints, counter_gt),
    )
}

/// Expected precision of a uniformly random cell subset of size `k` out of
/// `n`, when each of `parts` keypoints occupies one distinct cell and `g` of
/// them are ground truth. Empty draws count as precision 0.
pub fn random_mask_expected_precision(n: usize, k: usize, parts: usize, g: usize) -> f64 {
    if parts == 0 || k == 0 {
        return 0.0;
    }
    // P(no part cell drawn) = C(n−parts, k) / C(n, k)
    let mut miss = 1.0;
    for i in 0..parts {
        if k + i >= n {
            miss = 0.0;
            break;
        }
        miss *= (n - k - i) as f64 / (n - i) as f64;
    }
    g as f64 / parts as f64 * (1.0 - miss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn kp(part: usize, x: usize, y: usize) -> Keypoint {
        Keypoint { part, x, y }
    }

    fn kps() -> Vec<Keypoint> {
        vec![kp(0, 8, 8), kp(1, 24, 8), kp(2, 8, 24), kp(3, 24, 24)]
    }

    #[test]
    fn exact_single_part() {
        let r = PixelMask::rect(32, 32, 20, 4, 28, 12);
        let pr = precision_recall(&r, &kps(), &[1]).unwrap();
        assert_eq!((pr.precision, pr.recall), (1.0, 1.0));
    }

    #[test]
    fn two_parts_one_relevant() {
        let r = PixelMask::rect(32, 32, 0, 0, 32, 12);
        let pr = precision_recall(&r, &kps(), &[1]).unwrap();
        assert_eq!((pr.precision, pr.recall), (0.5, 1.0));
    }

    #[test]
    fn full_image_boundary() {
        let r = PixelMask::rect(32, 32, 0, 0, 32, 32);
        let pr = precision_recall(&r, &kps(), &[0, 1]).unwrap();
        assert_eq!((pr.precision, pr.recall), (0.5, 1.0));
    }

    #[test]
    fn empty_region_and_missing_truth() {
        let r = PixelMask::empty(32, 32);
        let pr = precision_recall(&r, &kps(), &[1]).unwrap();
        assert!(pr.empty_region);
        assert_eq!(pr.precision, 0.0);
        assert!(precision_recall(&r, &kps(), &[]).is_none());
    }

    #[test]
    fn iou_examples() {
        let a = PixelMask::rect(1, 3, 0, 0, 2, 1);
        let b = PixelMask::rect(1, 3, 1, 0, 3, 1);
        assert_eq!(iou(&a, &a).value, 1.0);
        assert_eq!(iou(&a, &b).value, 1.0 / 3.0);
        let c = PixelMask::rect(1, 3, 2, 0, 3, 1);
        assert_eq!(iou(&a, &c).value, 0.0);
        assert!(iou(&PixelMask::empty(2, 2), &PixelMask::empty(2, 2)).empty_union);
    }

    #[test]
    fn set_iou_examples() {
        assert_eq!(set_iou(&[1, 2], &[2, 3]).value, 1.0 / 3.0);
        assert_eq!(set_iou(&[4, 1], &[1, 4]).value, 1.0);
        let e = set_iou(&[], &[]);
        assert!(e.empty_union && e.value == 0.0);
    }

    #[test]
    fn piou_is_symmetric() {
        let q = PixelMask::rect(32, 32, 0, 0, 32, 12);
        let c = PixelMask::rect(32, 32, 16, 0, 32, 32);
        let a = piou(&q, &kps(), &[0, 1, 3], &c, &kps(), &[0, 1, 3]);
        let b = piou(&c, &kps(), &[0, 1, 3], &q, &kps(), &[0, 1, 3]);
        assert_eq!(a, b);
        assert_eq!(a.value, 1.0 / 3.0);
    }

    #[test]
    fn part_mask_covers_glyph_box() {
        let m = part_mask(32, 32, &kps(), &[0], 6);
        assert_eq!(m.count(), 36);
        assert!(m.contains(5, 5) && m.contains(10, 10) && !m.contains(11, 8));
    }

    #[test]
    fn pr_auc_steps() {
        let p = |precision, recall| PrecisionRecall {
            precision,
            recall,
            hits: 0,
            parts_in_region: 0,
            empty_region: false,
        };
        assert_eq!(pr_auc(&[p(1.0, 0.5), p(0.5, 1.0)]), 0.75);
        assert_eq!(pr_auc(&[p(0.0, 0.0), p(1.0, 1.0)]), 1.0);
    }

    #[test]
    fn curve_sorted_by_area_with_monotone_recall() {
        let regions = vec![
            PixelMask::rect(32, 32, 0, 0, 32, 32),
            PixelMask::rect(32, 32, 20, 4, 28, 12),
            PixelMask::rect(32, 32, 0, 0, 32, 12),
        ];
        let curve = pr_curve(&regions, &kps(), &[1, 2]).unwrap();
        let recalls: Vec<f64> = curve.iter().map(|p| p.recall).collect();
        assert_eq!(recalls, vec![0.5, 0.5, 1.0]);
        assert_eq!(curve.last().unwrap().precision, 0.5);
    }

    #[test]
    fn random_expectation_matches_enumeration() {
        // n = 5 cells, parts in cells 0..3, gt = {0}; enumerate all 2-subsets
        let (n, k, parts, g) = (5usize, 2usize, 3usize, 1usize);
        let mut total = 0.0;
        let mut count = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                let inside: Vec<usize> = [a, b].into_iter().filter(|&c| c < parts).collect();
                let hits = inside.iter().filter(|&&c| c < g).count();
                total += if inside.is_empty() { 0.0 } else { hits as f64 / inside.len() as f64 };
                count += 1.0;
            }
        }
        let expect = random_mask_expected_precision(n, k, parts, g);
        assert!((expect - total / count).abs() < 1e-12);
    }
}
