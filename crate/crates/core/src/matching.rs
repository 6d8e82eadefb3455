//! Two-threshold anchor assignment.
//!
//! An anchor whose best IoU against the ground truth is strictly above the
//! positive threshold is positive, one whose best IoU lies in `[0, negative)`
//! is negative, and everything in between (both ends included) is ignored.
//! There is no forced best-anchor-per-face assignment, so a face can end up
//! without any positive anchor; [`ClassBalance::unmatched_gts`] reports it.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{iou_unchecked, BoxXYXY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MatchLabel {
    /// Index of the best-overlapping ground-truth box.
    Positive(usize),
    Negative,
    Ignored,
}

impl MatchLabel {
    pub fn is_positive(self) -> bool {
        matches!(self, MatchLabel::Positive(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IouThresholds {
    pub positive: f64,
    pub negative: f64,
}

impl IouThresholds {
    /// First step: negatives below 0.3, positives above 0.7.
    pub const FIRST_STEP: IouThresholds = IouThresholds {
        positive: 0.7,
        negative: 0.3,
    };
    /// Second step: negatives below 0.4, positives above 0.5.
    pub const SECOND_STEP: IouThresholds = IouThresholds {
        positive: 0.5,
        negative: 0.4,
    };

    pub fn new(positive: f64, negative: f64) -> Result<Self> {
        let t = IouThresholds { positive, negative };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.negative)
            || !(0.0..=1.0).contains(&self.positive)
            || self.negative > self.positive
        {
            return Err(Error::Config(format!(
                "IoU thresholds need 0 <= negative ({}) <= positive ({}) <= 1",
                self.negative, self.positive
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn label(&self, max_iou: f64, best_gt: usize) -> MatchLabel {
        if max_iou > self.positive {
            MatchLabel::Positive(best_gt)
        } else if max_iou < self.negative {
            MatchLabel::Negative
        } else {
            MatchLabel::Ignored
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub labels: Vec<MatchLabel>,
    /// Best IoU of each anchor over all ground truths (0 without any).
    pub max_iou: Vec<f64>,
    pub thresholds: IouThresholds,
    pub num_gts: usize,
}

impl MatchResult {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn match_anchors(
    anchors: &[BoxXYXY],
    gts: &[BoxXYXY],
    thresholds: IouThresholds,
) -> Result<MatchResult> {
    match_anchors_with(anchors, gts, thresholds, Execution::default())
}

pub fn match_anchors_with(
    anchors: &[BoxXYXY],
    gts: &[BoxXYXY],
    thresholds: IouThresholds,
    exec: Execution,
) -> Result<MatchResult> {
    thresholds.validate()?;
    if let Some(g) = gts.iter().find(|g| !g.is_proper()) {
        return Err(g.degenerate("ground-truth box has no area"));
    }
    let best: Vec<(f64, usize)> = exec.map_chunks(anchors, 4096, |a| {
        let mut best = (0.0, 0usize);
        for (gi, g) in gts.iter().enumerate() {
            let v = iou_unchecked(a, g);
            if v > best.0 {
                best = (v, gi);
            }
        }
        best
    });
    let labels = best
        .iter()
        .map(|&(v, gi)| thresholds.label(v, gi))
        .collect();
    Ok(MatchResult {
        labels,
        max_iou: best.into_iter().map(|(v, _)| v).collect(),
        thresholds,
        num_gts: gts.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassBalance {
    pub positives: usize,
    pub negatives: usize,
    pub ignored: usize,
    /// `positives / negatives`; `f64::INFINITY` when there are no negatives.
    pub pos_to_neg_ratio: f64,
    /// Ground-truth boxes that no anchor was assigned to.
    pub unmatched_gts: usize,
}

impl ClassBalance {
    pub fn total(&self) -> usize {
        self.positives + self.negatives + self.ignored
    }

    /// Negatives per positive, the `1:N` form; infinite without positives.
    pub fn negatives_per_positive(&self) -> f64 {
        if self.positives == 0 {
            f64::INFINITY
        } else {
            self.negatives as f64 / self.positives as f64
        }
    }

    /// Sum of counts over several images.
    pub fn aggregate<'a>(items: impl IntoIterator<Item = &'a ClassBalance>) -> ClassBalance {
        let (mut p, mut n, mut i, mut u) = (0, 0, 0, 0);
        for c in items {
            p += c.positives;
            n += c.negatives;
            i += c.ignored;
            u += c.unmatched_gts;
        }
        ClassBalance {
            positives: p,
            negatives: n,
            ignored: i,
            pos_to_neg_ratio: ratio(p, n),
            unmatched_gts: u,
        }
    }
}

fn ratio(pos: usize, neg: usize) -> f64 {
    if neg == 0 {
        f64::INFINITY
    } else {
        pos as f64 / neg as f64
    }
}

pub fn class_balance_stats(m: &MatchResult) -> ClassBalance {
    let (mut p, mut n, mut i) = (0, 0, 0);
    let mut hit = vec![false; m.num_gts];
    for l in &m.labels {
        match *l {
            MatchLabel::Positive(g) => {
                p += 1;
                hit[g] = true;
            }
            MatchLabel::Negative => n += 1,
            MatchLabel::Ignored => i += 1,
        }
    }
    ClassBalance {
        positives: p,
        negatives: n,
        ignored: i,
        pos_to_neg_ratio: ratio(p, n),
        unmatched_gts: hit.iter().filter(|h| !**h).count(),
    }
}
