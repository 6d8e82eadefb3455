//! WIDER-style evaluation: greedy score-ordered matching, a 1000-point
//! threshold sweep and interpolated average precision per difficulty subset.
//!
//! Every ground-truth face plays one of three roles for a given subset:
//!
//! * **target**: in the subset, not flagged invalid, positive area. Targets
//!   are counted in recall and consumed by the first detection matching them.
//! * **ignore**: outside the subset or flagged invalid. A detection whose best
//!   match is an ignore face is neither a true nor a false positive. Ignore
//!   faces are never consumed.
//! * **excluded**: zero-area entries. They take no part in matching.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::{GroundTruthFace, GroundTruthSet, ImageAnnotation};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::iou;
use crate::refine::Detection;

pub const NUM_THRESHOLDS: usize = 1000;
pub const DEFAULT_EVAL_IOU: f64 = 0.5;

/// Score cut-point `k` of the sweep, ascending in `k`.
#[inline]
pub fn threshold_at(k: usize) -> f64 {
    k as f64 / (NUM_THRESHOLDS - 1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Matched the target face with this index.
    TruePositive(usize),
    FalsePositive,
    Ignored,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceRole {
    Target,
    Ignore,
    Excluded,
}

/// Roles of `faces` given per-face subset membership.
pub fn face_roles(faces: &[GroundTruthFace], include: &[bool]) -> Vec<FaceRole> {
    assert_eq!(faces.len(), include.len(), "one inclusion flag per face");
    faces
        .iter()
        .zip(include)
        .map(|(f, &inc)| {
            if !f.bbox.is_proper() {
                FaceRole::Excluded
            } else if inc && f.invalid == 0 {
                FaceRole::Target
            } else {
                FaceRole::Ignore
            }
        })
        .collect()
}

/// Greedy matching of one image's detections against its faces.
///
/// Detections are visited by descending score (input order on ties). Each
/// one takes the candidate face with the highest IoU (lowest index on ties),
/// where candidates are unconsumed targets and all ignore faces. With IoU at
/// least `iou_threshold` the detection becomes a true positive (target
/// consumed) or ignored (ignore face); otherwise it is a false positive.
/// Outcomes are returned in input order.
pub fn match_detections(
    dets: &[Detection],
    faces: &[GroundTruthFace],
    include: &[bool],
    iou_threshold: f64,
) -> Vec<Outcome> {
    let roles = face_roles(faces, include);
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut consumed = vec![false; faces.len()];
    let mut out = vec![Outcome::FalsePositive; dets.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, face) in faces.iter().enumerate() {
            let available = match roles[j] {
                FaceRole::Target => !consumed[j],
                FaceRole::Ignore => true,
                FaceRole::Excluded => false,
            };
            if !available {
                continue;
            }
            let v = iou(&dets[i].bbox, &face.bbox).unwrap_or(0.0);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        out[i] = match best {
            Some((j, v)) if v >= iou_threshold => {
                if roles[j] == FaceRole::Target {
                    consumed[j] = true;
                    Outcome::TruePositive(j)
                } else {
                    Outcome::Ignored
                }
            }
            _ => Outcome::FalsePositive,
        };
    }
    out
}

/// Per-threshold-bucket TP/FP counts; merging is element-wise addition.
///
/// A detection lands in bucket `k`, the largest index with
/// `threshold_at(k) <= score`, so it counts at every threshold up to `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreHistogram {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub total_gt: u64,
}

impl Default for ScoreHistogram {
    fn default() -> Self {
        ScoreHistogram {
            tp: vec![0; NUM_THRESHOLDS],
            fp: vec![0; NUM_THRESHOLDS],
            total_gt: 0,
        }
    }
}

fn bucket(score: f64) -> Option<usize> {
    if score.is_nan() || score < 0.0 {
        return None;
    }
    let top = NUM_THRESHOLDS - 1;
    let mut k = ((score * top as f64).floor() as usize).min(top);
    while k < top && score >= threshold_at(k + 1) {
        k += 1;
    }
    while k > 0 && score < threshold_at(k) {
        k -= 1;
    }
    Some(k)
}

impl ScoreHistogram {
    pub fn add(&mut self, dets: &[Detection], outcomes: &[Outcome]) {
        for (d, o) in dets.iter().zip(outcomes) {
            let Some(k) = bucket(d.score) else { continue };
            match o {
                Outcome::TruePositive(_) => self.tp[k] += 1,
                Outcome::FalsePositive => self.fp[k] += 1,
                Outcome::Ignored => {}
            }
        }
    }

    pub fn merge(mut self, other: &ScoreHistogram) -> Self {
        for (a, b) in self.tp.iter_mut().zip(&other.tp) {
            *a += b;
        }
        for (a, b) in self.fp.iter_mut().zip(&other.fp) {
            *a += b;
        }
        self.total_gt += other.total_gt;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalCurve {
    /// Descending from 1 to 0.
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ap: f64,
}

/// Precision/recall at each threshold and the area under the monotone
/// precision envelope. Precision is 0 at thresholds with no detections.
pub fn pr_curve(hist: &ScoreHistogram) -> Result<EvalCurve> {
    if hist.total_gt == 0 {
        return Err(Error::EmptySubset("evaluation".into()));
    }
    let mut thresholds = Vec::with_capacity(NUM_THRESHOLDS);
    let mut precision = Vec::with_capacity(NUM_THRESHOLDS);
    let mut recall = Vec::with_capacity(NUM_THRESHOLDS);
    let (mut tp, mut fp) = (0u64, 0u64);
    for k in (0..NUM_THRESHOLDS).rev() {
        tp += hist.tp[k];
        fp += hist.fp[k];
        thresholds.push(threshold_at(k));
        precision.push(if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        });
        recall.push(tp as f64 / hist.total_gt as f64);
    }
    let ap = interpolated_ap(&precision, &recall);
    Ok(EvalCurve {
        thresholds,
        precision,
        recall,
        ap,
    })
}

/// Area under the precision envelope for points with non-decreasing recall.
pub fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut mrec = Vec::with_capacity(recall.len() + 2);
    mrec.push(0.0);
    mrec.extend_from_slice(recall);
    mrec.push(1.0);
    let mut mpre = Vec::with_capacity(precision.len() + 2);
    mpre.push(0.0);
    mpre.extend_from_slice(precision);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (0..mrec.len() - 1)
        .map(|i| (mrec[i + 1] - mrec[i]) * mpre[i + 1])
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subset {
    Easy,
    Medium,
    Hard,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Easy, Subset::Medium, Subset::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Easy => "easy",
            Subset::Medium => "medium",
            Subset::Hard => "hard",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown subset {s:?}")))
    }
}

/// Explicit per-image face lists (0-based indices) for each subset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubsetLists {
    easy: HashMap<String, BTreeSet<usize>>,
    medium: HashMap<String, BTreeSet<usize>>,
    hard: HashMap<String, BTreeSet<usize>>,
}

impl SubsetLists {
    /// Fails unless every easy face is medium and every medium face is hard.
    pub fn new(
        easy: HashMap<String, BTreeSet<usize>>,
        medium: HashMap<String, BTreeSet<usize>>,
        hard: HashMap<String, BTreeSet<usize>>,
    ) -> Result<Self> {
        let nested = |inner: &HashMap<String, BTreeSet<usize>>,
                      outer: &HashMap<String, BTreeSet<usize>>,
                      what: &str| {
            for (img, faces) in inner {
                let ok = outer.get(img).is_some_and(|o| faces.is_subset(o)) || faces.is_empty();
                if !ok {
                    return Err(Error::Config(format!(
                        "{what} list is not nested for image {img}"
                    )));
                }
            }
            Ok(())
        };
        nested(&easy, &medium, "easy/medium")?;
        nested(&medium, &hard, "medium/hard")?;
        Ok(SubsetLists { easy, medium, hard })
    }

    pub fn get(&self, subset: Subset) -> &HashMap<String, BTreeSet<usize>> {
        match subset {
            Subset::Easy => &self.easy,
            Subset::Medium => &self.medium,
            Subset::Hard => &self.hard,
        }
    }

    /// Reads `easy.txt`, `medium.txt` and `hard.txt` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut maps = Vec::with_capacity(3);
        for s in Subset::ALL {
            let p = dir.join(format!("{}.txt", s.as_str()));
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            maps.push(parse_subset_list(&text).map_err(|e| e.at_path(&p))?);
        }
        let hard = maps.pop().unwrap();
        let medium = maps.pop().unwrap();
        let easy = maps.pop().unwrap();
        SubsetLists::new(easy, medium, hard)
    }
}

/// Parse one subset list: blocks of an image key line, a count line and
/// that many 1-based face index lines.
pub fn parse_subset_list(text: &str) -> Result<HashMap<String, BTreeSet<usize>>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out: HashMap<String, BTreeSet<usize>> = HashMap::new();
    let mut i = 0;
    let num = |i: usize, what: &str| -> Result<usize> {
        let t = lines
            .get(i)
            .ok_or_else(|| Error::parse(i + 1, format!("missing {what}")))?;
        t.trim()
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("invalid {what} {t:?}")))
    };
    while i < lines.len() {
        let key = lines[i].trim();
        if key.is_empty() {
            return Err(Error::parse(i + 1, "empty image key"));
        }
        let count = num(i + 1, "face count")?;
        let entry = out.entry(key.to_string()).or_default();
        for k in 0..count {
            let idx = num(i + 2 + k, "face index")?;
            if idx == 0 {
                return Err(Error::parse(i + 3 + k, "face indices are 1-based"));
            }
            entry.insert(idx - 1);
        }
        i += 2 + count;
    }
    Ok(out)
}

/// How faces are assigned to difficulty subsets.
#[derive(Clone, Debug, PartialEq)]
pub enum SubsetRule {
    /// By face height in pixels; hard contains every face.
    HeightBands {
        easy_min_height: f64,
        medium_min_height: f64,
    },
    Lists(SubsetLists),
}

impl Default for SubsetRule {
    fn default() -> Self {
        SubsetRule::HeightBands {
            easy_min_height: 50.0,
            medium_min_height: 30.0,
        }
    }
}

impl SubsetRule {
    pub fn validate(&self) -> Result<()> {
        if let SubsetRule::HeightBands {
            easy_min_height,
            medium_min_height,
        } = self
        {
            if easy_min_height.is_nan()
                || medium_min_height.is_nan()
                || easy_min_height < medium_min_height
            {
                return Err(Error::Config(
                    "easy height band must not be wider than medium".into(),
                ));
            }
        }
        Ok(())
    }

    /// Per-face inclusion flags of `img` in `subset`.
    pub fn include_flags(&self, subset: Subset, img: &ImageAnnotation) -> Result<Vec<bool>> {
        match self {
            SubsetRule::HeightBands {
                easy_min_height,
                medium_min_height,
            } => {
                let min = match subset {
                    Subset::Easy => *easy_min_height,
                    Subset::Medium => *medium_min_height,
                    Subset::Hard => f64::NEG_INFINITY,
                };
                Ok(img.faces.iter().map(|f| f.bbox.height() >= min).collect())
            }
            SubsetRule::Lists(lists) => {
                let mut flags = vec![false; img.faces.len()];
                if let Some(set) = lists.get(subset).get(&img.path) {
                    for &j in set {
                        let slot = flags.get_mut(j).ok_or_else(|| {
                            Error::Config(format!(
                                "{subset} list names face {} of {}, which has {} faces",
                                j + 1,
                                img.path,
                                img.faces.len()
                            ))
                        })?;
                        *slot = true;
                    }
                }
                Ok(flags)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub easy: EvalCurve,
    pub medium: EvalCurve,
    pub hard: EvalCurve,
}

impl EvalReport {
    pub fn get(&self, subset: Subset) -> &EvalCurve {
        match subset {
            Subset::Easy => &self.easy,
            Subset::Medium => &self.medium,
            Subset::Hard => &self.hard,
        }
    }

    /// `AP easy=0.9670 medium=0.9580 hard=0.9090`
    pub fn summary_line(&self) -> String {
        format!(
            "AP easy={:.4} medium={:.4} hard={:.4}",
            self.easy.ap, self.medium.ap, self.hard.ap
        )
    }

    /// All curve points as CSV with a `subset,threshold,precision,recall` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subset,threshold,precision,recall\n");
        for s in Subset::ALL {
            let c = self.get(s);
            for k in 0..c.thresholds.len() {
                let _ = writeln!(
                    out,
                    "{s},{:.6},{:.6},{:.6}",
                    c.thresholds[k], c.precision[k], c.recall[k]
                );
            }
        }
        out
    }
}

/// Count histograms for one image in each subset (easy, medium, hard).
pub fn image_histograms(
    img: &ImageAnnotation,
    dets: &[Detection],
    rule: &SubsetRule,
    iou_threshold: f64,
) -> Result<[ScoreHistogram; 3]> {
    let mut out: [ScoreHistogram; 3] = Default::default();
    for (slot, s) in out.iter_mut().zip(Subset::ALL) {
        let include = rule.include_flags(s, img)?;
        slot.total_gt = face_roles(&img.faces, &include)
            .iter()
            .filter(|r| **r == FaceRole::Target)
            .count() as u64;
        let outcomes = match_detections(dets, &img.faces, &include, iou_threshold);
        slot.add(dets, &outcomes);
    }
    Ok(out)
}

/// Evaluate detections keyed by image against a ground-truth set.
///
/// Images without detections count as empty. Keys not present in the
/// ground truth are an error listing every offending key.
pub fn evaluate(
    dets: &[(String, Vec<Detection>)],
    gt: &GroundTruthSet,
    rule: &SubsetRule,
    iou_threshold: f64,
    exec: Execution,
) -> Result<EvalReport> {
    rule.validate()?;
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::Config("evaluation IoU must lie in [0, 1]".into()));
    }
    let index = gt.index();
    let mut unknown: Vec<String> = dets
        .iter()
        .filter(|(k, _)| !index.contains_key(k.as_str()))
        .map(|(k, _)| k.clone())
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(Error::UnknownImages(unknown));
    }
    let mut by_image: HashMap<&str, Vec<Detection>> = HashMap::new();
    for (k, d) in dets {
        by_image.entry(k.as_str()).or_default().extend_from_slice(d);
    }

    let per_image = exec.map_slice(&gt.images, |img| {
        let d = by_image
            .get(img.path.as_str())
            .map_or(&[][..], Vec::as_slice);
        image_histograms(img, d, rule, iou_threshold)
    });
    let mut totals: [ScoreHistogram; 3] = Default::default();
    for h in per_image {
        let h = h?;
        for (t, x) in totals.iter_mut().zip(&h) {
            *t = std::mem::take(t).merge(x);
        }
    }
    let [e, m, h] = totals;
    let curve = |hist: &ScoreHistogram, s: Subset| {
        pr_curve(hist).map_err(|_| Error::EmptySubset(s.to_string()))
    };
    Ok(EvalReport {
        easy: curve(&e, Subset::Easy)?,
        medium: curve(&m, Subset::Medium)?,
        hard: curve(&h, Subset::Hard)?,
    })
}
