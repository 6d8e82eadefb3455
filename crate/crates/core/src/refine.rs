//! Selective two-step classification and regression at inference time.
//!
//! The first step filters and refines anchors selectively:
//!
//! * low-level anchors whose first-step face score is below the threshold are
//!   discarded (`stc_filter`), high-level anchors are never filtered;
//! * high-level anchors are moved by their first-step deltas (`str_refine`),
//!   low-level anchors keep their original geometry.
//!
//! The second step then ranks the survivors by their second-step score, keeps
//! the top `k`, decodes the second-step deltas against the refined anchors,
//! clips to the image and runs greedy NMS down to a per-image cap.

use std::cmp::Ordering;

use crate::anchors::AnchorSet;
use crate::coding::{decode, BoxDelta};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{clip_box, iou, BoxXYXY};

/// One step's output for one anchor, as produced by a network head.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct StepPrediction {
    pub score: f32,
    pub dx: f32,
    pub dy: f32,
    pub dw: f32,
    pub dh: f32,
}

impl StepPrediction {
    pub fn new(score: f32, delta: BoxDelta) -> Self {
        StepPrediction {
            score,
            dx: delta.dx as f32,
            dy: delta.dy as f32,
            dw: delta.dw as f32,
            dh: delta.dh as f32,
        }
    }

    pub fn delta(&self) -> BoxDelta {
        BoxDelta::new(
            self.dx as f64,
            self.dy as f64,
            self.dw as f64,
            self.dh as f64,
        )
    }
}

/// First- and second-step predictions, index-aligned with an [`AnchorSet`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct StepScores {
    pub first: Vec<StepPrediction>,
    pub second: Vec<StepPrediction>,
}

impl StepScores {
    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// Checks array lengths against `anchor_count` and score ranges.
    pub fn validate(&self, anchor_count: usize) -> Result<()> {
        for arr in [&self.first, &self.second] {
            if arr.len() != anchor_count {
                return Err(Error::Misaligned {
                    expected: anchor_count,
                    got: arr.len(),
                });
            }
            if let Some(p) = arr.iter().find(|p| !(0.0..=1.0).contains(&p.score)) {
                return Err(Error::Probability(p.score as f64));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoxXYXY,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceConfig {
    /// Minimum first-step score for low-level anchors.
    pub stc_threshold: f64,
    pub top_k: usize,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            stc_threshold: 0.01,
            top_k: 2000,
            nms_iou: 0.4,
            max_detections: 750,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.stc_threshold) {
            return Err(Error::Config("stc_threshold must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config("nms_iou must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Indices of anchors that survive first-step filtering, ascending.
pub fn stc_filter(anchors: &AnchorSet, scores: &StepScores, threshold: f64) -> Result<Vec<usize>> {
    scores.validate(anchors.len())?;
    let low_end = anchors
        .level_range(
            anchors
                .low_level_count()
                .min(anchors.num_levels())
                .saturating_sub(1),
        )
        .end;
    // compare in the scores' own precision so a threshold of 0.01 keeps 0.01f32
    let threshold = threshold as f32;
    let mut keep: Vec<usize> = (0..low_end)
        .filter(|&i| scores.first[i].score >= threshold)
        .collect();
    keep.extend(low_end..anchors.len());
    debug_assert!(keep
        .iter()
        .all(|&i| i >= low_end || anchors.is_low_level(i)));
    Ok(keep)
}

#[inline]
fn refined_anchor(anchors: &AnchorSet, scores: &StepScores, i: usize) -> BoxXYXY {
    let a = anchors.boxes()[i];
    if anchors.is_low_level(i) {
        a
    } else {
        decode(&a, &scores.first[i].delta())
    }
}

/// Anchors after first-step regression: high levels decoded, low levels untouched.
pub fn str_refine(anchors: &AnchorSet, scores: &StepScores) -> Result<Vec<BoxXYXY>> {
    scores.validate(anchors.len())?;
    Ok((0..anchors.len())
        .map(|i| refined_anchor(anchors, scores, i))
        .collect())
}

fn by_score_desc(a: (f32, usize), b: (f32, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The full post-processing chain for one image.
pub fn run_inference(
    anchors: &AnchorSet,
    scores: &StepScores,
    cfg: &InferenceConfig,
    image_width: f64,
    image_height: f64,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    if !(image_width > 0.0 && image_height > 0.0) {
        return Err(Error::Config("image dimensions must be positive".into()));
    }
    let retained = stc_filter(anchors, scores, cfg.stc_threshold)?;

    let mut ranked: Vec<(f32, usize)> = retained
        .into_iter()
        .map(|i| (scores.second[i].score, i))
        .collect();
    if ranked.len() > cfg.top_k {
        if cfg.top_k == 0 {
            ranked.clear();
        } else {
            ranked.select_nth_unstable_by(cfg.top_k - 1, |a, b| by_score_desc(*a, *b));
            ranked.truncate(cfg.top_k);
        }
    }
    ranked.sort_unstable_by(|a, b| by_score_desc(*a, *b));

    let candidates: Vec<Detection> = ranked
        .into_iter()
        .filter_map(|(score, i)| {
            let refined = refined_anchor(anchors, scores, i);
            let b = clip_box(
                &decode(&refined, &scores.second[i].delta()),
                image_width,
                image_height,
            );
            b.is_proper().then_some(Detection {
                bbox: b,
                score: score as f64,
            })
        })
        .collect();

    let mut out = nms(&candidates, cfg.nms_iou);
    out.truncate(cfg.max_detections);
    Ok(out)
}

/// [`run_inference`] over many images sharing one anchor set.
pub fn run_inference_batch(
    anchors: &AnchorSet,
    batch: &[StepScores],
    cfg: &InferenceConfig,
    image_width: f64,
    image_height: f64,
    exec: Execution,
) -> Result<Vec<Vec<Detection>>> {
    exec.map_slice(batch, |s| {
        run_inference(anchors, s, cfg, image_width, image_height)
    })
    .into_iter()
    .collect()
}

/// Greedy non-maximum suppression.
///
/// Repeatedly keeps the highest-scoring remaining detection (earlier input
/// index on ties) and drops every remaining one with IoU strictly above
/// `iou_threshold`. Pairs of zero-area boxes never suppress each other.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut suppressed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(dets[i]);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox).unwrap_or(0.0) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Map detections from several test scales back to the original image
/// (box / scale), pool them, then NMS and cap.
pub fn merge_multiscale(
    sets: &[(f64, Vec<Detection>)],
    nms_iou: f64,
    max_detections: usize,
) -> Result<Vec<Detection>> {
    let mut pooled = Vec::with_capacity(sets.iter().map(|s| s.1.len()).sum());
    for (scale, dets) in sets {
        if !(scale.is_finite() && *scale > 0.0) {
            return Err(Error::Config(format!(
                "scale factor {scale} must be positive"
            )));
        }
        let inv = 1.0 / scale;
        pooled.extend(dets.iter().map(|d| Detection {
            bbox: d.bbox.scale_by(inv, inv),
            score: d.score,
        }));
    }
    let mut out = nms(&pooled, nms_iou);
    out.truncate(max_detections);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{generate_pyramid_anchors, PyramidConfig};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn det(x: f64, y: f64, s: f64, score: f64) -> Detection {
        Detection {
            bbox: BoxXYXY::from_xywh(x, y, s, s),
            score,
        }
    }

    fn close(a: &BoxXYXY, b: &BoxXYXY) -> bool {
        [a.x1 - b.x1, a.y1 - b.y1, a.x2 - b.x2, a.y2 - b.y2]
            .iter()
            .all(|d| d.abs() < 1e-9)
    }

    fn small_set() -> AnchorSet {
        let cfg = PyramidConfig {
            input_width: 64,
            input_height: 64,
            ..PyramidConfig::default()
        };
        generate_pyramid_anchors(&cfg).unwrap()
    }

    fn uniform_scores(n: usize, first: f32, second: f32) -> StepScores {
        StepScores {
            first: vec![
                StepPrediction {
                    score: first,
                    ..Default::default()
                };
                n
            ],
            second: vec![
                StepPrediction {
                    score: second,
                    ..Default::default()
                };
                n
            ],
        }
    }

    #[test]
    fn stc_threshold_rule() {
        let set = small_set();
        let scores = uniform_scores(set.len(), 0.005, 0.5);
        let kept = stc_filter(&set, &scores, 0.01).unwrap();
        let first_high = set.level_range(3).start;
        assert_eq!(kept, (first_high..set.len()).collect::<Vec<_>>());
        assert_eq!(stc_filter(&set, &scores, 0.0).unwrap().len(), set.len());
        // exactly at threshold is kept
        let at = uniform_scores(set.len(), 0.01, 0.5);
        assert_eq!(stc_filter(&set, &at, 0.01).unwrap().len(), set.len());
    }

    #[test]
    fn misaligned_scores_rejected() {
        let set = small_set();
        let scores = uniform_scores(set.len() - 1, 0.5, 0.5);
        assert!(matches!(
            stc_filter(&set, &scores, 0.01),
            Err(Error::Misaligned { .. })
        ));
        let mut bad = uniform_scores(set.len(), 0.5, 0.5);
        bad.second[3].score = 1.5;
        assert!(matches!(str_refine(&set, &bad), Err(Error::Probability(_))));
    }

    #[test]
    fn str_is_selective() {
        let set = small_set();
        let mut scores = uniform_scores(set.len(), 0.5, 0.5);
        for (r, a) in str_refine(&set, &scores).unwrap().iter().zip(set.boxes()) {
            assert!(close(r, a));
        }

        let d = BoxDelta::new(0.0, 0.0, LN_2, LN_2);
        for p in &mut scores.first {
            *p = StepPrediction::new(0.5, d);
        }
        let refined = str_refine(&set, &scores).unwrap();
        for (i, (r, a)) in refined.iter().zip(set.boxes()).enumerate() {
            if set.is_low_level(i) {
                assert_eq!(r, a);
            } else {
                // deltas are stored as f32
                assert!((r.width() / a.width() - 2.0).abs() < 1e-6);
                assert!((r.height() / a.height() - 2.0).abs() < 1e-6);
                let (c0, c1) = (a.center(), r.center());
                assert!((c0.0 - c1.0).abs() < 1e-9 && (c0.1 - c1.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_anchor_chain() {
        let a = BoxXYXY::from_xywh(10.0, 10.0, 20.0, 25.0);
        let set = AnchorSet::from_parts(vec![a], vec![1], 2, 1).unwrap();
        let scores = uniform_scores(1, 0.0, 0.9);
        let out = run_inference(&set, &scores, &InferenceConfig::default(), 100.0, 100.0).unwrap();
        assert_eq!(out.len(), 1);
        assert!(close(&out[0].bbox, &a));
        assert!((out[0].score - 0.9).abs() < 1e-7);

        // partially outside the frame: clipped
        let b = BoxXYXY::from_xywh(-5.0, 90.0, 20.0, 25.0);
        let set = AnchorSet::from_parts(vec![b], vec![1], 2, 1).unwrap();
        let out = run_inference(&set, &scores, &InferenceConfig::default(), 100.0, 100.0).unwrap();
        assert!(close(
            &out[0].bbox,
            &BoxXYXY::new(0.0, 90.0, 15.0, 100.0).unwrap()
        ));
    }

    #[test]
    fn nothing_survives() {
        let a = BoxXYXY::from_xywh(10.0, 10.0, 20.0, 25.0);
        let set = AnchorSet::from_parts(vec![a; 4], vec![0; 4], 2, 1).unwrap();
        let scores = uniform_scores(4, 0.001, 0.9);
        let out = run_inference(&set, &scores, &InferenceConfig::default(), 100.0, 100.0).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn identical_boxes_collapse() {
        let a = BoxXYXY::from_xywh(10.0, 10.0, 20.0, 25.0);
        let n = 1000;
        let set = AnchorSet::from_parts(vec![a; n], vec![1; n], 2, 1).unwrap();
        let mut scores = uniform_scores(n, 0.0, 0.0);
        for (i, p) in scores.second.iter_mut().enumerate() {
            p.score = (i as f32 + 1.0) / (n as f32 + 1.0);
        }
        let out = run_inference(&set, &scores, &InferenceConfig::default(), 100.0, 100.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, scores.second[n - 1].score as f64);
    }

    #[test]
    fn nms_examples() {
        let d = det(0.0, 0.0, 10.0, 0.5);
        assert_eq!(nms(&[d, d], 0.4), vec![d]);

        let disjoint = [
            det(0.0, 0.0, 5.0, 0.2),
            det(10.0, 0.0, 5.0, 0.9),
            det(20.0, 0.0, 5.0, 0.5),
        ];
        let out = nms(&disjoint, 0.4);
        let scores: Vec<f64> = out.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.9, 0.5, 0.2]);

        // equal scores: earlier input wins
        let a = det(0.0, 0.0, 10.0, 0.7);
        let b = det(1.0, 0.0, 10.0, 0.7);
        assert_eq!(nms(&[a, b], 0.4), vec![a]);
        assert_eq!(nms(&[b, a], 0.4), vec![b]);
    }

    #[test]
    fn multiscale_merge() {
        let d = det(10.0, 10.0, 30.0, 0.8);
        let single = merge_multiscale(&[(1.0, vec![d])], 0.4, 750).unwrap();
        assert_eq!(single, vec![d]);

        let doubled = Detection {
            bbox: d.bbox.scale_by(2.0, 2.0),
            score: 0.6,
        };
        let merged = merge_multiscale(&[(1.0, vec![d]), (2.0, vec![doubled])], 0.4, 750).unwrap();
        assert_eq!(merged, vec![d]);

        let other = det(100.0, 100.0, 30.0, 0.9);
        let merged = merge_multiscale(
            &[
                (1.0, vec![d]),
                (
                    0.5,
                    vec![Detection {
                        bbox: other.bbox.scale_by(0.5, 0.5),
                        score: 0.9,
                    }],
                ),
            ],
            0.4,
            750,
        )
        .unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].bbox, other.bbox);
        assert!(merge_multiscale(&[(0.0, vec![d])], 0.4, 750).is_err());
    }

    /// Reference NMS: a detection survives iff no higher-ranked survivor
    /// overlaps it, re-derived by scanning the full ranked list.
    fn reference_nms(dets: &[Detection], thr: f64) -> Vec<usize> {
        let n = dets.len();
        let ranks_before = |i: usize, j: usize| {
            dets[i].score > dets[j].score || (dets[i].score == dets[j].score && i < j)
        };
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.sort_by_key(|&i| (0..n).filter(|&j| ranks_before(j, i)).count());
        let mut alive: Vec<usize> = Vec::new();
        for &i in &ranked {
            let killed = alive.iter().any(|&k| {
                let inter = dets[k].bbox.intersection_area(&dets[i].bbox);
                let union = dets[k].bbox.area() + dets[i].bbox.area() - inter;
                union > 0.0 && inter / union > thr
            });
            if !killed {
                alive.push(i);
            }
        }
        alive
    }

    proptest! {
        #[test]
        fn nms_matches_reference(
            raw in prop::collection::vec((0.0..100.0f64, 0.0..100.0f64, 1.0..40.0f64, 0u8..20), 0..60),
            thr in 0.1..0.9f64,
        ) {
            let dets: Vec<Detection> = raw.iter()
                .map(|&(x, y, s, q)| det(x, y, s, q as f64 / 20.0))
                .collect();
            let got = nms(&dets, thr);
            let want: Vec<Detection> = reference_nms(&dets, thr).into_iter().map(|i| dets[i]).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn stc_monotone_in_threshold(seed_scores in prop::collection::vec(0.0..=1.0f32, 1..50), t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
            let set = small_set();
            let n = set.len();
            let mut scores = uniform_scores(n, 0.0, 0.0);
            for (i, p) in scores.first.iter_mut().enumerate() {
                p.score = seed_scores[i % seed_scores.len()];
            }
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(stc_filter(&set, &scores, hi).unwrap().len() <= stc_filter(&set, &scores, lo).unwrap().len());
        }
    }
}
