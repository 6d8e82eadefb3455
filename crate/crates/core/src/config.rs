//! One flat, text-configurable view of every tunable in the toolkit.
//!
//! Config files hold `key = value` lines; `#` starts a comment. Lists are
//! comma separated, ranges are `lo,hi`. Unknown keys are rejected.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::anchors::PyramidConfig;
use crate::augment::AugmentConfig;
use crate::coding::LossConfig;
use crate::data::{SceneSpec, ScoreModel};
use crate::error::{Error, Result};
use crate::eval::{SubsetRule, DEFAULT_EVAL_IOU};
use crate::matching::IouThresholds;
use crate::refine::InferenceConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub pyramid: PyramidConfig,
    pub loss: LossConfig,
    pub first_step: IouThresholds,
    pub second_step: IouThresholds,
    pub inference: InferenceConfig,
    pub augment: AugmentConfig,
    pub eval_iou: f64,
    pub easy_min_height: f64,
    pub medium_min_height: f64,
    /// Scene template for synthetic runs; width, height and seed are
    /// taken from the pyramid and the run seed.
    pub scene: SceneSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let SubsetRule::HeightBands {
            easy_min_height,
            medium_min_height,
        } = SubsetRule::default()
        else {
            unreachable!()
        };
        RunConfig {
            seed: 0,
            pyramid: PyramidConfig::default(),
            loss: LossConfig::default(),
            first_step: IouThresholds::FIRST_STEP,
            second_step: IouThresholds::SECOND_STEP,
            inference: InferenceConfig::default(),
            augment: AugmentConfig::default(),
            eval_iou: DEFAULT_EVAL_IOU,
            easy_min_height,
            medium_min_height,
            scene: SceneSpec::default(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|t| parse_num(key, t)).collect()
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("{key}: expected \"lo,hi\""))),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn score_model_name(m: &ScoreModel) -> &'static str {
    match m {
        ScoreModel::Noiseless => "noiseless",
        ScoreModel::Beta { .. } => "beta",
    }
}

type Getter = fn(&RunConfig) -> String;
type Setter = fn(&mut RunConfig, &str, &str) -> Result<()>;

/// Every key with its accessor pair, in print order.
const FIELDS: &[(&str, Getter, Setter)] = &[
    (
        "seed",
        |c| c.seed.to_string(),
        |c, k, v| {
            c.seed = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "anchors.input_width",
        |c| c.pyramid.input_width.to_string(),
        |c, k, v| {
            c.pyramid.input_width = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "anchors.input_height",
        |c| c.pyramid.input_height.to_string(),
        |c, k, v| {
            c.pyramid.input_height = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "anchors.strides",
        |c| join(&c.pyramid.strides),
        |c, k, v| {
            c.pyramid.strides = parse_list(k, v)?;
            Ok(())
        },
    ),
    (
        "anchors.scale_multipliers",
        |c| join(&c.pyramid.scale_multipliers),
        |c, k, v| {
            c.pyramid.scale_multipliers = parse_list(k, v)?;
            Ok(())
        },
    ),
    (
        "anchors.aspect_ratio",
        |c| c.pyramid.aspect_ratio.to_string(),
        |c, k, v| {
            c.pyramid.aspect_ratio = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "anchors.low_level_count",
        |c| c.pyramid.low_level_count.to_string(),
        |c, k, v| {
            c.pyramid.low_level_count = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "match.first_positive",
        |c| c.first_step.positive.to_string(),
        |c, k, v| {
            c.first_step.positive = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "match.first_negative",
        |c| c.first_step.negative.to_string(),
        |c, k, v| {
            c.first_step.negative = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "match.second_positive",
        |c| c.second_step.positive.to_string(),
        |c, k, v| {
            c.second_step.positive = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "match.second_negative",
        |c| c.second_step.negative.to_string(),
        |c, k, v| {
            c.second_step.negative = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "loss.focal_alpha",
        |c| c.loss.focal_alpha.to_string(),
        |c, k, v| {
            c.loss.focal_alpha = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "loss.focal_gamma",
        |c| c.loss.focal_gamma.to_string(),
        |c, k, v| {
            c.loss.focal_gamma = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "loss.smooth_l1_beta",
        |c| c.loss.smooth_l1_beta.to_string(),
        |c, k, v| {
            c.loss.smooth_l1_beta = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "inference.stc_threshold",
        |c| c.inference.stc_threshold.to_string(),
        |c, k, v| {
            c.inference.stc_threshold = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "inference.top_k",
        |c| c.inference.top_k.to_string(),
        |c, k, v| {
            c.inference.top_k = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "inference.nms_iou",
        |c| c.inference.nms_iou.to_string(),
        |c, k, v| {
            c.inference.nms_iou = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "inference.max_detections",
        |c| c.inference.max_detections.to_string(),
        |c, k, v| {
            c.inference.max_detections = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "eval.iou",
        |c| c.eval_iou.to_string(),
        |c, k, v| {
            c.eval_iou = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "eval.easy_min_height",
        |c| c.easy_min_height.to_string(),
        |c, k, v| {
            c.easy_min_height = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "eval.medium_min_height",
        |c| c.medium_min_height.to_string(),
        |c, k, v| {
            c.medium_min_height = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.output_size",
        |c| c.augment.output_size.to_string(),
        |c, k, v| {
            c.augment.output_size = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.das_probability",
        |c| c.augment.das_probability.to_string(),
        |c, k, v| {
            c.augment.das_probability = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.anchor_scales",
        |c| join(&c.augment.anchor_scales),
        |c, k, v| {
            c.augment.anchor_scales = parse_list(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.das_jitter",
        |c| format!("{},{}", c.augment.das_jitter.0, c.augment.das_jitter.1),
        |c, k, v| {
            c.augment.das_jitter = parse_pair(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.expand_max_ratio",
        |c| c.augment.expand_max_ratio.to_string(),
        |c, k, v| {
            c.augment.expand_max_ratio = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.photometric_probability",
        |c| c.augment.photometric_probability.to_string(),
        |c, k, v| {
            c.augment.photometric_probability = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.brightness_delta",
        |c| c.augment.brightness_delta.to_string(),
        |c, k, v| {
            c.augment.brightness_delta = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.contrast_range",
        |c| {
            format!(
                "{},{}",
                c.augment.contrast_range.0, c.augment.contrast_range.1
            )
        },
        |c, k, v| {
            c.augment.contrast_range = parse_pair(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.saturation_range",
        |c| {
            format!(
                "{},{}",
                c.augment.saturation_range.0, c.augment.saturation_range.1
            )
        },
        |c, k, v| {
            c.augment.saturation_range = parse_pair(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.hue_delta",
        |c| c.augment.hue_delta.to_string(),
        |c, k, v| {
            c.augment.hue_delta = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.crop_min_scale",
        |c| c.augment.crop_min_scale.to_string(),
        |c, k, v| {
            c.augment.crop_min_scale = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.crop_max_trials",
        |c| c.augment.crop_max_trials.to_string(),
        |c, k, v| {
            c.augment.crop_max_trials = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "augment.allow_empty_crops",
        |c| c.augment.allow_empty_crops.to_string(),
        |c, k, v| {
            c.augment.allow_empty_crops = parse_bool(k, v)?;
            Ok(())
        },
    ),
    (
        "scene.num_faces",
        |c| c.scene.num_faces.to_string(),
        |c, k, v| {
            c.scene.num_faces = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "scene.min_face_scale",
        |c| c.scene.min_face_scale.to_string(),
        |c, k, v| {
            c.scene.min_face_scale = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "scene.max_face_scale",
        |c| c.scene.max_face_scale.to_string(),
        |c, k, v| {
            c.scene.max_face_scale = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "scene.face_aspect",
        |c| format!("{},{}", c.scene.face_aspect.0, c.scene.face_aspect.1),
        |c, k, v| {
            c.scene.face_aspect = parse_pair(k, v)?;
            Ok(())
        },
    ),
    (
        "scene.delta_sigma",
        |c| c.scene.delta_sigma.to_string(),
        |c, k, v| {
            c.scene.delta_sigma = parse_num(k, v)?;
            Ok(())
        },
    ),
    (
        "scene.score_model",
        |c| score_model_name(&c.scene.score_model).to_string(),
        |c, k, v| {
            c.scene.score_model = match v.trim() {
                "noiseless" => ScoreModel::Noiseless,
                "beta" => ScoreModel::default(),
                _ => {
                    return Err(Error::Config(format!(
                        "{k}: expected beta or noiseless, got {v:?}"
                    )))
                }
            };
            Ok(())
        },
    ),
    (
        "scene.max_attempts",
        |c| c.scene.max_attempts.to_string(),
        |c, k, v| {
            c.scene.max_attempts = parse_num(k, v)?;
            Ok(())
        },
    ),
];

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        FIELDS.iter().map(|f| f.0)
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (_, _, setter) = FIELDS
            .iter()
            .find(|f| f.0 == key)
            .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        setter(self, key, value)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        FIELDS.iter().find(|f| f.0 == key).map(|f| (f.1)(self))
    }

    /// Apply a config file's text on top of `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(k + 1, format!("expected key = value, got {line:?}"))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::parse(k + 1, msg),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text).map_err(|e| e.at_path(path))
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        self.loss.validate()?;
        self.first_step.validate()?;
        self.second_step.validate()?;
        self.inference.validate()?;
        self.augment.validate()?;
        self.subset_rule().validate()?;
        self.scene_spec(0).validate()?;
        if !(0.0..=1.0).contains(&self.eval_iou) {
            return Err(Error::Config("eval.iou must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn subset_rule(&self) -> SubsetRule {
        SubsetRule::HeightBands {
            easy_min_height: self.easy_min_height,
            medium_min_height: self.medium_min_height,
        }
    }

    /// Scene template sized to the pyramid input with the given seed.
    pub fn scene_spec(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            width: self.pyramid.input_width,
            height: self.pyramid.input_height,
            seed,
            ..self.scene.clone()
        }
    }

    /// Every key in print order, in a form [`RunConfig::apply_str`] reads back.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (key, get, _) in FIELDS {
            let _ = writeln!(out, "{key} = {}", get(self));
        }
        out
    }
}
