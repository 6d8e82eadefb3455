//! Training-time augmentation of an image and its face boxes.
//!
//! The pipeline always applies colour jitter, then takes one of two
//! geometric branches:
//!
//! * **data-anchor sampling** (probability `das_probability`): pick a face,
//!   rescale the image so that face lands near a randomly chosen anchor scale
//!   no larger than one step above its nearest one, and cut an
//!   `output_size²` window containing it;
//! * **standard**: zero-pad expansion, a random square crop, and a resize to
//!   `output_size²`.
//!
//! Geometric steps are composed into a single affine resample of the
//! source, so the expanded canvas and the rescaled image are never
//! materialized. The standalone [`expand`] and [`random_crop`] operate on
//! real buffers.

mod image;
mod photometric;

pub use image::{resample_affine, resize_bilinear, ImageBuffer};
pub use photometric::{
    adjust_brightness, adjust_contrast, adjust_hue, adjust_saturation, photometric_distort,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{clip_box, BoxXYXY};
use crate::seed::stream_rng;
use photometric::uniform;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub output_size: u32,
    pub das_probability: f64,
    /// Anchor scales the sampler aims faces at, ascending.
    pub anchor_scales: Vec<f64>,
    /// Multiplicative jitter on the target scale.
    pub das_jitter: (f64, f64),
    pub expand_max_ratio: f64,
    /// Probability of each colour adjustment.
    pub photometric_probability: f64,
    /// Maximum brightness shift in sample units.
    pub brightness_delta: f64,
    pub contrast_range: (f64, f64),
    pub saturation_range: (f64, f64),
    /// Maximum hue rotation in degrees.
    pub hue_delta: f64,
    /// Smallest crop side as a fraction of the short image side.
    pub crop_min_scale: f64,
    pub crop_max_trials: u32,
    /// Accept crops that keep no face instead of retrying.
    pub allow_empty_crops: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            output_size: 1024,
            das_probability: 0.5,
            anchor_scales: vec![16.0, 32.0, 64.0, 128.0, 256.0, 512.0],
            das_jitter: (0.75, 1.25),
            expand_max_ratio: 4.0,
            photometric_probability: 0.5,
            brightness_delta: 32.0,
            contrast_range: (0.5, 1.5),
            saturation_range: (0.5, 1.5),
            hue_delta: 18.0,
            crop_min_scale: 0.3,
            crop_max_trials: 50,
            allow_empty_crops: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.output_size == 0 {
            return bad("output_size must be at least 1");
        }
        for (p, name) in [
            (self.das_probability, "das_probability"),
            (self.photometric_probability, "photometric_probability"),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.anchor_scales.is_empty()
            || !self.anchor_scales.iter().all(|s| s.is_finite() && *s > 0.0)
            || !self.anchor_scales.windows(2).all(|w| w[0] < w[1])
        {
            return bad("anchor_scales must be positive and strictly ascending");
        }
        let (jl, jh) = self.das_jitter;
        if !(jl > 0.0 && jl <= jh && jh.is_finite()) {
            return bad("das_jitter must satisfy 0 < low <= high");
        }
        if !(self.expand_max_ratio >= 1.0 && self.expand_max_ratio.is_finite()) {
            return bad("expand_max_ratio must be at least 1");
        }
        if !(self.brightness_delta >= 0.0 && self.hue_delta >= 0.0) {
            return bad("brightness and hue deltas must be non-negative");
        }
        for (lo, hi) in [self.contrast_range, self.saturation_range] {
            if !(lo >= 0.0 && lo <= hi) {
                return bad("contrast and saturation ranges must satisfy 0 <= low <= high");
            }
        }
        if !(self.crop_min_scale > 0.0 && self.crop_min_scale <= 1.0) {
            return bad("crop_min_scale must lie in (0, 1]");
        }
        if self.crop_max_trials == 0 {
            return bad("crop_max_trials must be at least 1");
        }
        Ok(())
    }
}

/// Placement of the source on a zero-filled canvas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpandGeometry {
    pub ratio: f64,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub offset_x: u32,
    pub offset_y: u32,
}

impl ExpandGeometry {
    pub fn identity(width: u32, height: u32) -> Self {
        ExpandGeometry {
            ratio: 1.0,
            canvas_width: width,
            canvas_height: height,
            offset_x: 0,
            offset_y: 0,
        }
    }
}

pub fn draw_expand<R: Rng + ?Sized>(
    width: u32,
    height: u32,
    max_ratio: f64,
    rng: &mut R,
) -> ExpandGeometry {
    let ratio = uniform(rng, 1.0, max_ratio);
    let cw = ((width as f64 * ratio).floor() as u32).max(width);
    let ch = ((height as f64 * ratio).floor() as u32).max(height);
    ExpandGeometry {
        ratio,
        canvas_width: cw,
        canvas_height: ch,
        offset_x: rng.random_range(0..=cw - width),
        offset_y: rng.random_range(0..=ch - height),
    }
}

/// Place `img` on the canvas described by `g` and translate `boxes` with it.
pub fn expand_with(
    img: &ImageBuffer,
    boxes: &[BoxXYXY],
    g: &ExpandGeometry,
) -> (ImageBuffer, Vec<BoxXYXY>) {
    let canvas = img.crop_padded(
        -(g.offset_x as i64),
        -(g.offset_y as i64),
        g.canvas_width,
        g.canvas_height,
    );
    let moved = boxes
        .iter()
        .map(|b| b.translate(g.offset_x as f64, g.offset_y as f64))
        .collect();
    (canvas, moved)
}

/// Zero-pad expansion by a ratio drawn from `[1, expand_max_ratio]`.
pub fn expand<R: Rng + ?Sized>(
    img: &ImageBuffer,
    boxes: &[BoxXYXY],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (ImageBuffer, Vec<BoxXYXY>) {
    let g = draw_expand(img.width(), img.height(), cfg.expand_max_ratio, rng);
    expand_with(img, boxes, &g)
}

/// Square crop window in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

/// Boxes whose centre lies in `[x, x + w) x [y, y + h)`, moved into window
/// coordinates and clipped to it, with their input indices. Boxes left
/// without area are dropped.
pub fn crop_boxes(boxes: &[BoxXYXY], x: f64, y: f64, w: f64, h: f64) -> Vec<(usize, BoxXYXY)> {
    boxes
        .iter()
        .enumerate()
        .filter(|(_, b)| {
            let (cx, cy) = b.center();
            cx >= x && cx < x + w && cy >= y && cy < y + h
        })
        .map(|(i, b)| (i, clip_box(&b.translate(-x, -y), w, h)))
        .filter(|(_, b)| b.is_proper())
        .collect()
}

/// Draw a square crop of a `width x height` image.
///
/// Side is uniform in `[crop_min_scale, 1]` of the short side, position
/// uniform inside the image. Unless empty crops are allowed (or there are no
/// boxes), draws repeat until one keeps a box; after `crop_max_trials`
/// failures the centred short-side square is used.
pub fn draw_crop<R: Rng + ?Sized>(
    width: u32,
    height: u32,
    boxes: &[BoxXYXY],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> CropWindow {
    let short = width.min(height);
    let accept_any = cfg.allow_empty_crops || boxes.is_empty();
    for _ in 0..cfg.crop_max_trials {
        let side =
            ((uniform(rng, cfg.crop_min_scale, 1.0) * short as f64).round() as u32).clamp(1, short);
        let x = rng.random_range(0..=width - side);
        let y = rng.random_range(0..=height - side);
        let keeps = || !crop_boxes(boxes, x as f64, y as f64, side as f64, side as f64).is_empty();
        if accept_any || keeps() {
            return CropWindow { x, y, side };
        }
    }
    CropWindow {
        x: (width - short) / 2,
        y: (height - short) / 2,
        side: short,
    }
}

/// Random square crop; boxes follow the centre-in-patch rule.
pub fn random_crop<R: Rng + ?Sized>(
    img: &ImageBuffer,
    boxes: &[BoxXYXY],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (ImageBuffer, Vec<BoxXYXY>) {
    let w = draw_crop(img.width(), img.height(), boxes, cfg, rng);
    let patch = img.crop_padded(w.x as i64, w.y as i64, w.side, w.side);
    let kept = crop_boxes(boxes, w.x as f64, w.y as f64, w.side as f64, w.side as f64);
    (patch, kept.into_iter().map(|(_, b)| b).collect())
}

/// What the data-anchor sampler chose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DasInfo {
    /// Index of the chosen face among the input boxes.
    pub face: usize,
    pub face_scale: f64,
    pub nearest_index: usize,
    pub target_index: usize,
    pub target_scale: f64,
    pub jitter: f64,
    /// Resize factor applied to the image.
    pub factor: f64,
    /// Window origin in rescaled-image coordinates.
    pub window_x: f64,
    pub window_y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Branch {
    DataAnchor(DasInfo),
    Standard {
        expand: ExpandGeometry,
        crop: CropWindow,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub image: ImageBuffer,
    pub boxes: Vec<BoxXYXY>,
    /// Input index of each output box.
    pub sources: Vec<usize>,
    pub branch: Branch,
}

impl Augmented {
    /// Output box of input face `i`, if it survived.
    pub fn box_of(&self, i: usize) -> Option<BoxXYXY> {
        self.sources
            .iter()
            .position(|&s| s == i)
            .map(|k| self.boxes[k])
    }
}

/// Index of the scale nearest to `s` (lowest index on ties).
pub fn nearest_scale_index(scales: &[f64], s: f64) -> usize {
    let mut best = 0;
    for (i, v) in scales.iter().enumerate() {
        if (v - s).abs() < (scales[best] - s).abs() {
            best = i;
        }
    }
    best
}

/// Window origin along one axis: contains `[lo, hi]`, stays inside
/// `[0, extent]` when the extent allows, covers all of it otherwise.
fn window_origin<R: Rng + ?Sized>(lo: f64, hi: f64, extent: f64, out: f64, rng: &mut R) -> f64 {
    let a = (extent - out).min(0.0).max(hi - out);
    let b = (extent - out).max(0.0).min(lo);
    if a <= b {
        uniform(rng, a, b)
    } else {
        // face larger than the window
        (lo + hi) / 2.0 - out / 2.0
    }
}

/// Clip boxes to the image and drop those without area.
fn sanitize(boxes: &[BoxXYXY], w: u32, h: u32) -> Vec<(usize, BoxXYXY)> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| (i, clip_box(b, w as f64, h as f64)))
        .filter(|(_, b)| b.is_proper())
        .collect()
}

fn finish(kept: Vec<(usize, BoxXYXY)>, image: ImageBuffer, branch: Branch) -> Augmented {
    let (sources, boxes) = kept.into_iter().unzip();
    Augmented {
        image,
        boxes,
        sources,
        branch,
    }
}

fn das_from(
    img: &ImageBuffer,
    valid: &[(usize, BoxXYXY)],
    cfg: &AugmentConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Augmented> {
    if valid.is_empty() {
        return Err(Error::NoBoxes);
    }
    let (face, fb) = valid[rng.random_range(0..valid.len())];
    let face_scale = (fb.width() * fb.height()).sqrt();
    let scales = &cfg.anchor_scales;
    let nearest_index = nearest_scale_index(scales, face_scale);
    let target_index = rng.random_range(0..=(nearest_index + 1).min(scales.len() - 1));
    let jitter = uniform(rng, cfg.das_jitter.0, cfg.das_jitter.1);
    let target_scale = scales[target_index];
    let factor = target_scale * jitter / face_scale;

    let out = cfg.output_size as f64;
    let scaled = fb.scale_by(factor, factor);
    let window_x = window_origin(scaled.x1, scaled.x2, img.width() as f64 * factor, out, rng);
    let window_y = window_origin(scaled.y1, scaled.y2, img.height() as f64 * factor, out, rng);

    let moved: Vec<BoxXYXY> = valid
        .iter()
        .map(|(_, b)| b.scale_by(factor, factor).translate(-window_x, -window_y))
        .collect();
    let kept = crop_boxes(&moved, 0.0, 0.0, out, out)
        .into_iter()
        .map(|(k, b)| (valid[k].0, b))
        .collect();
    let inv = 1.0 / factor;
    let image = resample_affine(
        img,
        cfg.output_size,
        cfg.output_size,
        (inv, window_x * inv),
        (inv, window_y * inv),
    );
    Ok(finish(
        kept,
        image,
        Branch::DataAnchor(DasInfo {
            face,
            face_scale,
            nearest_index,
            target_index,
            target_scale,
            jitter,
            factor,
            window_x,
            window_y,
        }),
    ))
}

/// Data-anchor sampling on its own (no colour jitter).
pub fn data_anchor_sample<R: Rng + ?Sized>(
    img: &ImageBuffer,
    boxes: &[BoxXYXY],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Augmented> {
    cfg.validate()?;
    das_from(img, &sanitize(boxes, img.width(), img.height()), cfg, rng)
}

fn standard_from(
    img: &ImageBuffer,
    valid: &[(usize, BoxXYXY)],
    cfg: &AugmentConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Augmented {
    let g = draw_expand(img.width(), img.height(), cfg.expand_max_ratio, rng);
    let on_canvas: Vec<BoxXYXY> = valid
        .iter()
        .map(|(_, b)| b.translate(g.offset_x as f64, g.offset_y as f64))
        .collect();
    let crop = draw_crop(g.canvas_width, g.canvas_height, &on_canvas, cfg, rng);
    let side = crop.side as f64;
    let out = cfg.output_size as f64;
    let s = out / side;
    let kept = crop_boxes(&on_canvas, crop.x as f64, crop.y as f64, side, side)
        .into_iter()
        .map(|(k, b)| (valid[k].0, clip_box(&b.scale_by(s, s), out, out)))
        .filter(|(_, b)| b.is_proper())
        .collect();
    let a = side / out;
    let image = resample_affine(
        img,
        cfg.output_size,
        cfg.output_size,
        (a, crop.x as f64 - g.offset_x as f64),
        (a, crop.y as f64 - g.offset_y as f64),
    );
    finish(kept, image, Branch::Standard { expand: g, crop })
}

/// Full augmentation of one image.
///
/// Input boxes are clipped to the image first; boxes without area are
/// dropped. Images with no usable box always take the standard branch.
pub fn augment_pipeline<R: Rng + ?Sized>(
    img: &ImageBuffer,
    boxes: &[BoxXYXY],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Augmented> {
    cfg.validate()?;
    let jittered = photometric_distort(img, cfg, rng);
    let valid = sanitize(boxes, img.width(), img.height());
    let use_das = rng.random_bool(cfg.das_probability);
    if use_das && !valid.is_empty() {
        das_from(&jittered, &valid, cfg, rng)
    } else {
        Ok(standard_from(&jittered, &valid, cfg, rng))
    }
}

/// Augment many images; item `i` draws from stream `i` of `seed`.
pub fn augment_batch(
    items: &[(ImageBuffer, Vec<BoxXYXY>)],
    cfg: &AugmentConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Augmented>> {
    exec.map_range(items.len(), |i| {
        let (img, boxes) = &items[i];
        augment_pipeline(img, boxes, cfg, &mut stream_rng(seed, i as u64))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::RngCore;

    fn noise(w: u32, h: u32, seed: u64) -> ImageBuffer {
        let mut data = vec![0u8; (w * h * 3) as usize];
        rng_from_seed(seed).fill_bytes(&mut data);
        ImageBuffer::from_raw(w, h, data).unwrap()
    }

    fn int_box(x: u32, y: u32, w: u32, h: u32) -> BoxXYXY {
        BoxXYXY::from_xywh(x as f64, y as f64, w as f64, h as f64)
    }

    #[test]
    fn expand_ratio_one_is_identity() {
        let img = noise(20, 10, 1);
        let boxes = vec![int_box(1, 2, 5, 6)];
        let cfg = AugmentConfig {
            expand_max_ratio: 1.0,
            ..AugmentConfig::default()
        };
        let (e, b) = expand(&img, &boxes, &cfg, &mut rng_from_seed(3));
        assert_eq!(e, img);
        assert_eq!(b, boxes);
    }

    #[test]
    fn expand_zero_offset() {
        let img = noise(8, 6, 2);
        let boxes = vec![int_box(1, 1, 3, 3)];
        let g = ExpandGeometry {
            ratio: 2.0,
            canvas_width: 16,
            canvas_height: 12,
            offset_x: 0,
            offset_y: 0,
        };
        let (e, b) = expand_with(&img, &boxes, &g);
        assert_eq!((e.width(), e.height()), (16, 12));
        assert_eq!(b, boxes);
        assert_eq!(e.pixel(7, 5), img.pixel(7, 5));
        assert_eq!(e.pixel(8, 5), [0, 0, 0]);
    }

    #[test]
    fn whole_image_crop_keeps_boxes() {
        let boxes = vec![int_box(0, 0, 4, 4), int_box(10, 10, 5, 5)];
        let kept = crop_boxes(&boxes, 0.0, 0.0, 20.0, 20.0);
        assert_eq!(kept, vec![(0, boxes[0]), (1, boxes[1])]);
        // centre outside: dropped even though the box overlaps
        let kept = crop_boxes(&boxes, 0.0, 0.0, 12.0, 12.0);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn crop_falls_back_to_centre() {
        let cfg = AugmentConfig {
            crop_min_scale: 0.3,
            crop_max_trials: 1,
            ..AugmentConfig::default()
        };
        // a box whose centre no small crop can easily hit: keep drawing until fallback
        let boxes = vec![int_box(49, 0, 2, 2)];
        let mut fell_back = false;
        for seed in 0..200 {
            let w = draw_crop(100, 50, &boxes, &cfg, &mut rng_from_seed(seed));
            if w == (CropWindow {
                x: 25,
                y: 0,
                side: 50,
            }) {
                fell_back = true;
            }
            assert!(w.x + w.side <= 100 && w.y + w.side <= 50);
        }
        assert!(fell_back);
    }

    #[test]
    fn das_fixed_point_is_pure_crop() {
        let cfg = AugmentConfig {
            output_size: 64,
            anchor_scales: vec![16.0],
            das_jitter: (1.0, 1.0),
            ..AugmentConfig::default()
        };
        let img = noise(100, 80, 9);
        let boxes = vec![int_box(40, 30, 16, 16)];
        let out = data_anchor_sample(&img, &boxes, &cfg, &mut rng_from_seed(4)).unwrap();
        let Branch::DataAnchor(info) = out.branch else {
            panic!()
        };
        assert_eq!(info.factor, 1.0);
        assert_eq!(out.boxes.len(), 1);
        let b = out.boxes[0];
        assert!((b.width() - 16.0).abs() < 1e-9 && (b.height() - 16.0).abs() < 1e-9);
        // integer window: pixels copied verbatim
        if info.window_x.fract() == 0.0 && info.window_y.fract() == 0.0 {
            assert_eq!(
                out.image,
                img.crop_padded(info.window_x as i64, info.window_y as i64, 64, 64)
            );
        }
    }

    #[test]
    fn das_without_boxes_errors() {
        let img = noise(10, 10, 1);
        let r = data_anchor_sample(&img, &[], &AugmentConfig::default(), &mut rng_from_seed(1));
        assert!(matches!(r, Err(Error::NoBoxes)));
        let r = data_anchor_sample(
            &img,
            &[int_box(3, 3, 0, 4)],
            &AugmentConfig::default(),
            &mut rng_from_seed(1),
        );
        assert!(matches!(r, Err(Error::NoBoxes)));
    }

    #[test]
    fn nearest_scale() {
        let s = AugmentConfig::default().anchor_scales;
        assert_eq!(nearest_scale_index(&s, 1.0), 0);
        assert_eq!(nearest_scale_index(&s, 24.0), 0);
        assert_eq!(nearest_scale_index(&s, 25.0), 1);
        assert_eq!(nearest_scale_index(&s, 10_000.0), 5);
    }

    #[test]
    fn das_probability_zero_never_samples() {
        let cfg = AugmentConfig {
            output_size: 32,
            das_probability: 0.0,
            ..AugmentConfig::default()
        };
        let img = noise(24, 24, 5);
        for seed in 0..300 {
            let out =
                augment_pipeline(&img, &[int_box(4, 4, 8, 8)], &cfg, &mut rng_from_seed(seed))
                    .unwrap();
            assert!(matches!(out.branch, Branch::Standard { .. }));
        }
    }

    #[test]
    fn standard_branch_matches_materialized_geometry() {
        // with no expansion and a full crop the fused path is a plain resize
        let cfg = AugmentConfig {
            output_size: 48,
            das_probability: 0.0,
            expand_max_ratio: 1.0,
            crop_min_scale: 1.0,
            photometric_probability: 0.0,
            ..AugmentConfig::default()
        };
        let img = noise(30, 30, 6);
        let boxes = vec![int_box(3, 6, 9, 12)];
        let out = augment_pipeline(&img, &boxes, &cfg, &mut rng_from_seed(0)).unwrap();
        assert_eq!(out.image, resize_bilinear(&img, 48, 48));
        let want = boxes[0].scale_by(1.6, 1.6);
        let got = out.boxes[0];
        assert!((got.x1 - want.x1).abs() < 1e-9 && (got.y2 - want.y2).abs() < 1e-9);
    }

    #[test]
    fn batch_is_order_independent() {
        let cfg = AugmentConfig {
            output_size: 40,
            ..AugmentConfig::default()
        };
        let items: Vec<(ImageBuffer, Vec<BoxXYXY>)> = (0..6)
            .map(|i| {
                (
                    noise(30 + i, 20 + i, i as u64),
                    vec![int_box(2, 2, 6 + i, 6 + i)],
                )
            })
            .collect();
        let a = augment_batch(&items, &cfg, 11, Execution::Sequential).unwrap();
        let b = augment_batch(&items, &cfg, 11, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let c = augment_batch(&items, &cfg, 12, Execution::Sequential).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = [
            AugmentConfig {
                das_probability: 1.5,
                ..AugmentConfig::default()
            },
            AugmentConfig {
                output_size: 0,
                ..AugmentConfig::default()
            },
            AugmentConfig {
                anchor_scales: vec![32.0, 16.0],
                ..AugmentConfig::default()
            },
            AugmentConfig {
                expand_max_ratio: 0.5,
                ..AugmentConfig::default()
            },
            AugmentConfig {
                crop_min_scale: 0.0,
                ..AugmentConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    fn arb_boxes(w: u32, h: u32) -> impl Strategy<Value = Vec<BoxXYXY>> {
        prop::collection::vec((0..w, 0..h, 1u32..40, 1u32..40), 0..8).prop_map(move |v| {
            v.into_iter()
                .map(|(x, y, bw, bh)| int_box(x, y, bw.min(w - x).max(1), bh.min(h - y).max(1)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn expand_preserves_extents(boxes in arb_boxes(60, 40), seed in any::<u64>()) {
            let img = noise(60, 40, 0);
            let (e, moved) = expand(&img, &boxes, &AugmentConfig::default(), &mut rng_from_seed(seed));
            prop_assert!(e.width() >= 60 && e.width() <= 240);
            for (a, b) in boxes.iter().zip(&moved) {
                prop_assert_eq!(a.width(), b.width());
                prop_assert_eq!(a.height(), b.height());
            }
        }

        #[test]
        fn crop_retention_matches_centre_rule(boxes in arb_boxes(60, 40), seed in any::<u64>()) {
            let cfg = AugmentConfig::default();
            let w = draw_crop(60, 40, &boxes, &cfg, &mut rng_from_seed(seed));
            prop_assert!(w.side >= 12 && w.side <= 40);
            let kept = crop_boxes(&boxes, w.x as f64, w.y as f64, w.side as f64, w.side as f64);
            let kept_idx: Vec<usize> = kept.iter().map(|k| k.0).collect();
            let mut want = Vec::new();
            for (i, b) in boxes.iter().enumerate() {
                let cx = (b.x1 + b.x2) / 2.0;
                let cy = (b.y1 + b.y2) / 2.0;
                let (x0, y0, s) = (w.x as f64, w.y as f64, w.side as f64);
                if x0 <= cx && cx < x0 + s && y0 <= cy && cy < y0 + s {
                    want.push(i);
                }
            }
            prop_assert_eq!(kept_idx, want);
            for (_, b) in kept {
                prop_assert!(b.is_proper() && b.x2 <= w.side as f64 && b.y2 <= w.side as f64);
            }
        }

        #[test]
        fn pipeline_outputs_valid(boxes in arb_boxes(60, 40), seed in any::<u64>()) {
            let cfg = AugmentConfig { output_size: 96, ..AugmentConfig::default() };
            let img = noise(60, 40, 1);
            let out = augment_pipeline(&img, &boxes, &cfg, &mut rng_from_seed(seed)).unwrap();
            prop_assert_eq!((out.image.width(), out.image.height()), (96, 96));
            for b in &out.boxes {
                prop_assert!(b.is_proper());
                prop_assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 96.0 && b.y2 <= 96.0);
            }
            let again = augment_pipeline(&img, &boxes, &cfg, &mut rng_from_seed(seed)).unwrap();
            prop_assert_eq!(out, again);
        }

        #[test]
        fn das_face_lands_on_target_scale(boxes in arb_boxes(60, 40), seed in any::<u64>()) {
            prop_assume!(!boxes.is_empty());
            let cfg = AugmentConfig::default();
            let img = noise(60, 40, 2);
            let out = data_anchor_sample(&img, &boxes, &cfg, &mut rng_from_seed(seed)).unwrap();
            let Branch::DataAnchor(info) = out.branch else { unreachable!() };
            prop_assert!(info.target_index <= info.nearest_index + 1);
            let b = out.box_of(info.face).unwrap();
            let s = (b.width() * b.height()).sqrt() / info.target_scale;
            prop_assert!((0.75 * (1.0 - 1e-12)..=1.25 * (1.0 + 1e-12)).contains(&s), "ratio {}", s);
        }
    }
}
