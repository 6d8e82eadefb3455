//! Seeded synthetic scenes: face boxes plus per-anchor scores that stand in
//! for a trained network.
//!
//! Faces are placed in-frame with log-uniform scale and pairwise IoU below
//! 0.3. An anchor counts as covering a face when their IoU exceeds 0.5;
//! covering anchors draw scores from the positive model, all others from
//! the negative model. First-step deltas encode the face against the anchor;
//! second-step deltas encode it against the first-step refined anchor (the
//! anchor itself on low levels), so a noiseless scene decodes exactly onto
//! the faces. Gaussian noise of standard deviation `delta_sigma` is added to
//! every delta component.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Normal};

use crate::anchors::AnchorSet;
use crate::coding::{decode, encode, BoxDelta};
use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BoxXYXY};
use crate::matching::{match_anchors_with, IouThresholds, MatchLabel};
use crate::refine::{StepPrediction, StepScores};
use crate::seed::{rng_from_seed, Rng};
use crate::Execution;

/// IoU above which an anchor is treated as covering a face.
pub const COVER_IOU: f64 = 0.5;
/// Maximum pairwise IoU between placed faces.
pub const MAX_FACE_OVERLAP: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScoreModel {
    /// Positives ~ Beta(a, b), negatives ~ Beta(c, d).
    Beta {
        positive: (f64, f64),
        negative: (f64, f64),
    },
    /// Positives score exactly 1, negatives exactly 0.
    Noiseless,
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel::Beta {
            positive: (8.0, 2.0),
            negative: (2.0, 8.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub num_faces: usize,
    pub min_face_scale: f64,
    pub max_face_scale: f64,
    /// Range of face height/width ratios.
    pub face_aspect: (f64, f64),
    pub score_model: ScoreModel,
    pub delta_sigma: f64,
    /// Only accept faces that at least one anchor covers, so every face is
    /// recoverable by the inference chain.
    pub require_anchor_cover: bool,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 1024,
            height: 1024,
            num_faces: 10,
            min_face_scale: 8.0,
            max_face_scale: 362.0,
            face_aspect: (1.0, 1.5),
            score_model: ScoreModel::default(),
            delta_sigma: 0.1,
            require_anchor_cover: true,
            max_attempts: 1000,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("scene dimensions must be positive");
        }
        if !(self.min_face_scale > 0.0 && self.min_face_scale <= self.max_face_scale) {
            return bad("face scales need 0 < min <= max");
        }
        if !(self.face_aspect.0 > 0.0 && self.face_aspect.0 <= self.face_aspect.1) {
            return bad("face aspect range needs 0 < lo <= hi");
        }
        if !(self.delta_sigma >= 0.0 && self.delta_sigma.is_finite()) {
            return bad("delta_sigma must be >= 0");
        }
        if let ScoreModel::Beta { positive, negative } = self.score_model {
            if [positive.0, positive.1, negative.0, negative.1]
                .iter()
                .any(|v| v.is_nan() || *v <= 0.0)
            {
                return bad("Beta parameters must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub faces: Vec<BoxXYXY>,
    pub scores: StepScores,
}

fn covered(face: &BoxXYXY, anchors: &AnchorSet) -> bool {
    anchors
        .boxes()
        .iter()
        .any(|a| iou_unchecked(a, face) > COVER_IOU)
}

/// Place faces with integer corners, in frame and mutually separated.
pub fn place_faces(spec: &SceneSpec, anchors: &AnchorSet, rng: &mut Rng) -> Result<Vec<BoxXYXY>> {
    spec.validate()?;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (ls_lo, ls_hi) = (spec.min_face_scale.ln(), spec.max_face_scale.ln());
    let mut faces: Vec<BoxXYXY> = Vec::with_capacity(spec.num_faces);
    let mut attempts = 0;
    while faces.len() < spec.num_faces {
        if attempts >= spec.max_attempts {
            return Err(Error::Placement {
                requested: spec.num_faces,
                attempts,
            });
        }
        attempts += 1;
        let scale = rng.random_range(ls_lo..=ls_hi).exp();
        let aspect = rng.random_range(spec.face_aspect.0..=spec.face_aspect.1);
        let fw = (scale / aspect.sqrt()).round().max(1.0);
        let fh = (scale * aspect.sqrt()).round().max(1.0);
        if fw > w || fh > h {
            continue;
        }
        let x = rng.random_range(0.0..=(w - fw)).floor();
        let y = rng.random_range(0.0..=(h - fh)).floor();
        let face = BoxXYXY::from_xywh(x, y, fw, fh);
        if faces
            .iter()
            .any(|f| iou_unchecked(f, &face) >= MAX_FACE_OVERLAP)
        {
            continue;
        }
        if spec.require_anchor_cover && !covered(&face, anchors) {
            continue;
        }
        faces.push(face);
    }
    Ok(faces)
}

struct Sampler {
    pos: Option<(Beta<f64>, Beta<f64>)>,
    noise: Option<Normal<f64>>,
}

impl Sampler {
    fn new(spec: &SceneSpec) -> Result<Self> {
        let pos = match spec.score_model {
            ScoreModel::Noiseless => None,
            ScoreModel::Beta { positive, negative } => {
                let mk = |p: (f64, f64)| {
                    Beta::new(p.0, p.1).map_err(|e| Error::Config(format!("Beta{p:?}: {e}")))
                };
                Some((mk(positive)?, mk(negative)?))
            }
        };
        let noise = if spec.delta_sigma > 0.0 {
            Some(Normal::new(0.0, spec.delta_sigma).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Sampler { pos, noise })
    }

    fn score(&self, positive: bool, rng: &mut Rng) -> f32 {
        match (&self.pos, positive) {
            (None, true) => 1.0,
            (None, false) => 0.0,
            (Some((p, _)), true) => p.sample(rng) as f32,
            (Some((_, n)), false) => n.sample(rng) as f32,
        }
    }

    fn jitter(&self, d: BoxDelta, rng: &mut Rng) -> BoxDelta {
        match &self.noise {
            None => d,
            Some(n) => BoxDelta::new(
                d.dx + n.sample(rng),
                d.dy + n.sample(rng),
                d.dw + n.sample(rng),
                d.dh + n.sample(rng),
            ),
        }
    }
}

/// Scores for given faces, aligned to `anchors`.
pub fn synth_scores(
    faces: &[BoxXYXY],
    anchors: &AnchorSet,
    spec: &SceneSpec,
    rng: &mut Rng,
) -> Result<StepScores> {
    spec.validate()?;
    let sampler = Sampler::new(spec)?;
    let cover = IouThresholds {
        positive: COVER_IOU,
        negative: COVER_IOU,
    };
    let m = match_anchors_with(anchors.boxes(), faces, cover, Execution::default())?;
    let n = anchors.len();
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for (i, (anchor, label)) in anchors.boxes().iter().zip(&m.labels).enumerate() {
        let positive = matches!(label, MatchLabel::Positive(_));
        let s1 = sampler.score(positive, rng);
        let s2 = sampler.score(positive, rng);
        let (d1, d2) = match *label {
            MatchLabel::Positive(g) => {
                let face = &faces[g];
                let d1 = sampler.jitter(encode(face, anchor)?, rng);
                let p1 = StepPrediction::new(s1, d1);
                // refine with the f32-rounded delta the pipeline will see
                let refined = if anchors.is_low_level(i) {
                    *anchor
                } else {
                    decode(anchor, &p1.delta())
                };
                let d2 = match encode(face, &refined) {
                    Ok(d) => sampler.jitter(d, rng),
                    Err(_) => sampler.jitter(BoxDelta::ZERO, rng),
                };
                (d1, d2)
            }
            _ => (
                sampler.jitter(BoxDelta::ZERO, rng),
                sampler.jitter(BoxDelta::ZERO, rng),
            ),
        };
        first.push(StepPrediction::new(s1, d1));
        second.push(StepPrediction::new(s2, d2));
    }
    Ok(StepScores { first, second })
}

/// A full scene from `spec.seed`.
pub fn synth_scene(spec: &SceneSpec, anchors: &AnchorSet) -> Result<SyntheticScene> {
    let mut rng = rng_from_seed(spec.seed);
    let faces = place_faces(spec, anchors, &mut rng)?;
    let scores = synth_scores(&faces, anchors, spec, &mut rng)?;
    Ok(SyntheticScene { faces, scores })
}
