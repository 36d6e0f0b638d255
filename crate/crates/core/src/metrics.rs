//! Layout evaluation: oriented-box IoU, per-category detection matching,
//! pose errors and occupied-space layout IoU.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
// Resolves f64 math when the crate is built without std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::geom::{wrap_angle, PlacedBox, PI};
use crate::scene::{CategoryId, Scene};

/// Default IoU threshold for counting a reconstruction as a true positive.
pub const DEFAULT_IOU_THRESH: f64 = 0.25;

/// Default voxel edge length for the occupied-space layout IoU, in meters.
pub const DEFAULT_VOXEL: f64 = 0.05;

/// Exact IoU of two yaw-rotated boxes. The intersection is the convex
/// footprint intersection area times the vertical overlap; volumes are
/// derived from the same footprint path so that `box_iou(a, a) == 1.0`
/// holds exactly.
pub fn box_iou(a: &crate::scene::ObjectInstance, b: &crate::scene::ObjectInstance) -> f64 {
    placed_iou(&a.placed(), &b.placed())
}

pub fn placed_iou(a: &PlacedBox, b: &PlacedBox) -> f64 {
    let va = crate::geom::polygon_area(&a.footprint()) * a.shape.size[2];
    let vb = crate::geom::polygon_area(&b.footprint()) * b.shape.size[2];
    let inter = a.intersection_volume(b);
    let union = va + vb - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Detection and pose-error summary for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryReport {
    pub gt_count: usize,
    pub pred_count: usize,
    pub true_positives: usize,
    /// True positives over ground-truth instances; `None` when the category
    /// never occurs in the ground truth.
    pub detection_rate: Option<f64>,
    /// Mean absolute yaw difference over true positives, degrees.
    pub angular_error_deg: Option<f64>,
    /// Mean center distance over true positives, meters.
    pub displacement_m: Option<f64>,
}

/// Scene-level match result.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchReport {
    pub per_category: BTreeMap<CategoryId, CategoryReport>,
    /// Matched `(pred index, gt index)` pairs into the scenes' object lists.
    pub matches: Vec<(usize, usize)>,
}

impl MatchReport {
    pub fn total_gt(&self) -> usize {
        self.per_category.values().map(|c| c.gt_count).sum()
    }

    pub fn total_true_positives(&self) -> usize {
        self.per_category.values().map(|c| c.true_positives).sum()
    }

    pub fn overall_detection_rate(&self) -> Option<f64> {
        let gt = self.total_gt();
        if gt == 0 {
            None
        } else {
            Some(self.total_true_positives() as f64 / gt as f64)
        }
    }

    fn weighted_mean(&self, f: impl Fn(&CategoryReport) -> Option<f64>) -> Option<f64> {
        let mut acc = 0.0;
        let mut n = 0usize;
        for c in self.per_category.values() {
            if let Some(v) = f(c) {
                acc += v * c.true_positives as f64;
                n += c.true_positives;
            }
        }
        if n == 0 {
            None
        } else {
            Some(acc / n as f64)
        }
    }

    pub fn mean_angular_error_deg(&self) -> Option<f64> {
        self.weighted_mean(|c| c.angular_error_deg)
    }

    pub fn mean_displacement_m(&self) -> Option<f64> {
        self.weighted_mean(|c| c.displacement_m)
    }
}

/// Greedy per-category matching by descending IoU. Pairs at or above the
/// threshold become true positives and contribute the angular error (the
/// wrapped yaw difference, in degrees) and the displacement error (the
/// Euclidean center distance, in meters).
pub fn match_scenes(pred: &Scene, gt: &Scene, iou_thresh: f64) -> MatchReport {
    let mut report = MatchReport::default();
    let mut cats: Vec<CategoryId> = gt
        .objects
        .iter()
        .chain(pred.objects.iter())
        .map(|o| o.category)
        .collect();
    cats.sort_unstable();
    cats.dedup();

    for cat in cats {
        let pred_idx: Vec<usize> = pred
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.category == cat)
            .map(|(i, _)| i)
            .collect();
        let gt_idx: Vec<usize> = gt
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.category == cat)
            .map(|(i, _)| i)
            .collect();

        // All candidate pairs at or above the threshold, best first; ties
        // resolve by pred then gt position for determinism.
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for &p in &pred_idx {
            for &g in &gt_idx {
                let iou = box_iou(&pred.objects[p], &gt.objects[g]);
                if iou >= iou_thresh {
                    pairs.push((iou, p, g));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut used_p: Vec<usize> = Vec::new();
        let mut used_g: Vec<usize> = Vec::new();
        let mut ang = 0.0;
        let mut disp = 0.0;
        let mut tp = 0usize;
        for (_, p, g) in pairs {
            if used_p.contains(&p) || used_g.contains(&g) {
                continue;
            }
            used_p.push(p);
            used_g.push(g);
            report.matches.push((p, g));
            tp += 1;
            let po = &pred.objects[p];
            let go = &gt.objects[g];
            ang += wrap_angle(po.pose.yaw - go.pose.yaw).abs() * 180.0 / PI;
            let d: f64 = po
                .pose
                .center
                .iter()
                .zip(go.pose.center.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            disp += d.sqrt();
        }
        report.per_category.insert(
            cat,
            CategoryReport {
                gt_count: gt_idx.len(),
                pred_count: pred_idx.len(),
                true_positives: tp,
                detection_rate: if gt_idx.is_empty() {
                    None
                } else {
                    Some(tp as f64 / gt_idx.len() as f64)
                },
                angular_error_deg: if tp == 0 { None } else { Some(ang / tp as f64) },
                displacement_m: if tp == 0 { None } else { Some(disp / tp as f64) },
            },
        );
    }
    report.matches.sort_unstable();
    report
}

/// Occupied-space IoU between two layouts on a voxel grid. The union covers
/// every object box on both sides; the intersection only counts space
/// claimed by true-positive matches on both sides.
pub fn layout_iou(pred: &Scene, gt: &Scene, iou_thresh: f64, voxel: f64) -> f64 {
    assert!(voxel > 0.0);
    if pred.objects.is_empty() && gt.objects.is_empty() {
        return 1.0;
    }
    let matches = match_scenes(pred, gt, iou_thresh).matches;
    let tp_pred: Vec<PlacedBox> = matches.iter().map(|&(p, _)| pred.objects[p].placed()).collect();
    let tp_gt: Vec<PlacedBox> = matches.iter().map(|&(_, g)| gt.objects[g].placed()).collect();
    let all_pred: Vec<PlacedBox> = pred.objects.iter().map(|o| o.placed()).collect();
    let all_gt: Vec<PlacedBox> = gt.objects.iter().map(|o| o.placed()).collect();

    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for b in all_pred.iter().chain(all_gt.iter()) {
        let (lo, hi) = b.aabb();
        for i in 0..3 {
            min[i] = min[i].min(lo[i]);
            max[i] = max[i].max(hi[i]);
        }
    }

    let steps: Vec<usize> = (0..3)
        .map(|i| (((max[i] - min[i]) / voxel).ceil() as usize).max(1))
        .collect();
    let inside = |boxes: &[PlacedBox], p: [f64; 3]| boxes.iter().any(|b| b.contains(p, 0.0));
    let mut union = 0usize;
    let mut inter = 0usize;
    for ix in 0..steps[0] {
        let x = min[0] + (ix as f64 + 0.5) * voxel;
        for iy in 0..steps[1] {
            let y = min[1] + (iy as f64 + 0.5) * voxel;
            for iz in 0..steps[2] {
                let z = min[2] + (iz as f64 + 0.5) * voxel;
                let p = [x, y, z];
                let in_pred = inside(&all_pred, p);
                let in_gt = inside(&all_gt, p);
                if in_pred || in_gt {
                    union += 1;
                }
                if !tp_pred.is_empty() && inside(&tp_pred, p) && inside(&tp_gt, p) {
                    inter += 1;
                }
            }
        }
    }
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{BoxShape, Pose};
    use crate::scene::ObjectInstance;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn boxed(cat: usize, center: [f64; 3], yaw: f64, size: [f64; 3]) -> ObjectInstance {
        ObjectInstance {
            category: cat,
            pose: Pose::new(center, yaw),
            shape: BoxShape::new(size).unwrap(),
        }
    }

    fn room() -> ObjectInstance {
        boxed(0, [0.0, 0.0, 1.5], 0.0, [8.0, 8.0, 3.0])
    }

    /// Stratified jittered Monte Carlo IoU oracle: samples inside box `a`
    /// (whose volume is exact) and estimates the intersection volume.
    pub(super) fn monte_carlo_iou(
        a: &ObjectInstance,
        b: &ObjectInstance,
        grid: usize,
        seed: u64,
    ) -> f64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pa = a.placed();
        let pb = b.placed();
        let mut hit = 0usize;
        for ix in 0..grid {
            for iy in 0..grid {
                for iz in 0..grid {
                    let u = (ix as f64 + rng.random::<f64>()) / grid as f64 - 0.5;
                    let v = (iy as f64 + rng.random::<f64>()) / grid as f64 - 0.5;
                    let w = (iz as f64 + rng.random::<f64>()) / grid as f64 - 0.5;
                    let p = pa.pose.apply([
                        u * a.shape.size[0],
                        v * a.shape.size[1],
                        w * a.shape.size[2],
                    ]);
                    if pb.contains(p, 0.0) {
                        hit += 1;
                    }
                }
            }
        }
        let va = a.shape.volume();
        let vb = b.shape.volume();
        let inter = va * hit as f64 / (grid * grid * grid) as f64;
        inter / (va + vb - inter)
    }

    #[test]
    fn identical_boxes_have_unit_iou_exactly() {
        let a = boxed(1, [0.3, -0.4, 0.5], 0.83, [1.2, 0.7, 0.4]);
        assert_eq!(box_iou(&a, &a), 1.0);
    }

    #[test]
    fn half_overlapping_unit_cubes_score_one_third() {
        let a = boxed(1, [0.0, 0.0, 0.5], 0.0, [1.0, 1.0, 1.0]);
        let b = boxed(1, [0.5, 0.0, 0.5], 0.0, [1.0, 1.0, 1.0]);
        // Overlap volume 0.5, union 1.5.
        assert!((box_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_cube_iou_matches_monte_carlo() {
        let a = boxed(1, [0.0, 0.0, 0.5], 0.0, [1.0, 1.0, 1.0]);
        let b = boxed(1, [0.0, 0.0, 0.5], PI / 4.0, [1.0, 1.0, 1.0]);
        let exact = box_iou(&a, &b);
        let mc = monte_carlo_iou(&a, &b, 60, 7);
        assert!((exact - mc).abs() < 1e-3, "exact {exact} mc {mc}");
        // The analytic value for a unit square against its 45-degree
        // rotation is 2 (sqrt(2) - 1) / ... checked via the known area
        // 4 (sqrt(2) - 1) of the octagon intersection.
        let octagon = 4.0 * (2.0f64.sqrt() - 1.0);
        let expect = octagon / (2.0 - octagon);
        assert!((exact - expect).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_matches_everything() {
        let gt = Scene::new(
            room(),
            vec![
                boxed(1, [1.0, 0.0, 0.3], 0.2, [1.6, 2.0, 0.6]),
                boxed(2, [0.0, 1.0, 0.4], -0.5, [0.5, 0.5, 0.8]),
            ],
        )
        .unwrap();
        let r = match_scenes(&gt, &gt, DEFAULT_IOU_THRESH);
        assert_eq!(r.overall_detection_rate(), Some(1.0));
        assert_eq!(r.mean_angular_error_deg(), Some(0.0));
        assert_eq!(r.mean_displacement_m(), Some(0.0));
        assert_eq!(r.matches.len(), 2);
    }

    #[test]
    fn empty_prediction_reports_zero_rate_and_absent_errors() {
        let gt = Scene::new(room(), vec![boxed(1, [0.0, 0.0, 0.3], 0.0, [1.0, 1.0, 0.6])]).unwrap();
        let pred = Scene::new(room(), vec![]).unwrap();
        let r = match_scenes(&pred, &gt, DEFAULT_IOU_THRESH);
        let cat = &r.per_category[&1];
        assert_eq!(cat.detection_rate, Some(0.0));
        assert_eq!(cat.angular_error_deg, None);
        assert_eq!(cat.displacement_m, None);
        assert_eq!(r.overall_detection_rate(), Some(0.0));
    }

    #[test]
    fn matching_is_order_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let objs: Vec<ObjectInstance> = (0..6)
            .map(|_| {
                boxed(
                    1,
                    [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.3],
                    rng.random_range(-3.0..3.0),
                    [0.8, 0.6, 0.6],
                )
            })
            .collect();
        let gt = Scene::new(room(), objs.clone()).unwrap();
        let mut shuffled = objs.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        let pred = Scene::new(room(), shuffled).unwrap();
        let r1 = match_scenes(&pred, &gt, DEFAULT_IOU_THRESH);
        let r2 = match_scenes(&gt, &gt, DEFAULT_IOU_THRESH);
        assert_eq!(r1.per_category[&1].true_positives, 6);
        assert_eq!(
            r1.per_category[&1].detection_rate,
            r2.per_category[&1].detection_rate
        );
        assert_eq!(r1.mean_angular_error_deg(), Some(0.0));
        assert_eq!(r1.mean_displacement_m(), Some(0.0));
    }

    #[test]
    fn identical_layouts_have_unit_layout_iou() {
        let s = Scene::new(
            room(),
            vec![
                boxed(1, [1.0, 0.2, 0.3], 0.4, [1.6, 2.0, 0.6]),
                boxed(2, [-1.0, 0.5, 0.25], 0.0, [0.5, 0.5, 0.5]),
            ],
        )
        .unwrap();
        let iou = layout_iou(&s, &s, DEFAULT_IOU_THRESH, DEFAULT_VOXEL);
        assert!((iou - 1.0).abs() <= 0.02, "got {iou}");
    }

    #[test]
    fn disjoint_layouts_have_zero_layout_iou() {
        let a = Scene::new(room(), vec![boxed(1, [-2.0, -2.0, 0.3], 0.0, [1.0, 1.0, 0.6])]).unwrap();
        let b = Scene::new(room(), vec![boxed(1, [2.0, 2.0, 0.3], 0.0, [1.0, 1.0, 0.6])]).unwrap();
        assert_eq!(layout_iou(&a, &b, DEFAULT_IOU_THRESH, DEFAULT_VOXEL), 0.0);
    }

    #[test]
    fn two_box_layout_matches_the_analytic_value() {
        // Axis-aligned unit cubes offset by 0.4m: per-pair IoU is
        // 0.6 / 1.4 (a true positive), intersection 0.6, union 1.4.
        let gt = Scene::new(room(), vec![boxed(1, [0.0, 0.0, 0.5], 0.0, [1.0, 1.0, 1.0])]).unwrap();
        let pred =
            Scene::new(room(), vec![boxed(1, [0.4, 0.0, 0.5], 0.0, [1.0, 1.0, 1.0])]).unwrap();
        let expect = 0.6 / 1.4;
        let got = layout_iou(&pred, &gt, DEFAULT_IOU_THRESH, DEFAULT_VOXEL);
        assert!((got - expect).abs() <= 0.02, "got {got} expect {expect}");
    }

    #[test]
    fn layout_iou_converges_with_voxel_size() {
        let gt = Scene::new(room(), vec![boxed(1, [0.0, 0.0, 0.5], 0.0, [1.0, 1.0, 1.0])]).unwrap();
        let pred =
            Scene::new(room(), vec![boxed(1, [0.4, 0.0, 0.5], 0.0, [1.0, 1.0, 1.0])]).unwrap();
        let expect = 0.6 / 1.4;
        let errs: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&v| (layout_iou(&pred, &gt, DEFAULT_IOU_THRESH, v) - expect).abs())
            .collect();
        assert!(
            errs[3] <= errs[0] + 1e-9,
            "finer voxels should approach the analytic value: {errs:?}"
        );
        assert!(errs[3] < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn iou_is_symmetric_and_rigid_invariant(
            vals in proptest::array::uniform10(-2.0..2.0f64),
        ) {
            let a = boxed(1, [vals[0], vals[1], vals[2]], vals[3], [1.0 + vals[4].abs(), 1.0 + vals[5].abs(), 0.5]);
            let b = boxed(1, [vals[6] * 0.5, vals[7] * 0.5, vals[8] * 0.2], vals[9], [1.2, 0.8, 0.7]);
            let ab = box_iou(&a, &b);
            let ba = box_iou(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));

            // Apply one rigid motion to both boxes.
            let rigid = Pose::new([0.7, -1.3, 0.4], 0.9);
            let mv = |o: &ObjectInstance| ObjectInstance {
                category: o.category,
                pose: rigid.compose(&o.pose),
                shape: o.shape,
            };
            let moved = box_iou(&mv(&a), &mv(&b));
            prop_assert!((moved - ab).abs() < 1e-9, "moved {moved} orig {ab}");
        }
    }
}
