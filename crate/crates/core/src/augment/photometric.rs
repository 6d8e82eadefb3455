//! Colour jitter. Every adjustment is a no-op at its neutral parameter.

use rand::Rng;

use super::image::ImageBuffer;
use super::AugmentConfig;

#[inline]
fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Add `delta` (sample units) to every sample.
pub fn adjust_brightness(img: &mut ImageBuffer, delta: f32) {
    if delta == 0.0 {
        return;
    }
    for s in img.data_mut() {
        *s = to_u8(*s as f32 + delta);
    }
}

/// Multiply every sample by `factor`.
pub fn adjust_contrast(img: &mut ImageBuffer, factor: f32) {
    if factor == 1.0 {
        return;
    }
    for s in img.data_mut() {
        *s = to_u8(*s as f32 * factor);
    }
}

/// Scale each pixel's distance from its own luma by `factor`.
pub fn adjust_saturation(img: &mut ImageBuffer, factor: f32) {
    if factor == 1.0 {
        return;
    }
    for px in img.data_mut().chunks_exact_mut(3) {
        let (r, g, b) = (px[0] as f32, px[1] as f32, px[2] as f32);
        let luma = 0.299 * r + 0.587 * g + 0.114 * b;
        px[0] = to_u8(luma + (r - luma) * factor);
        px[1] = to_u8(luma + (g - luma) * factor);
        px[2] = to_u8(luma + (b - luma) * factor);
    }
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Rotate hue by `degrees`.
pub fn adjust_hue(img: &mut ImageBuffer, degrees: f32) {
    if degrees == 0.0 {
        return;
    }
    for px in img.data_mut().chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0] as f32, px[1] as f32, px[2] as f32);
        let (r, g, b) = hsv_to_rgb(h + degrees, s, v);
        px[0] = to_u8(r);
        px[1] = to_u8(g);
        px[2] = to_u8(b);
    }
}

/// Brightness, contrast, saturation and hue jitter, each applied with
/// probability `cfg.photometric_probability`. Boxes are unaffected.
pub fn photometric_distort<R: Rng + ?Sized>(
    img: &ImageBuffer,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> ImageBuffer {
    let p = cfg.photometric_probability;
    let mut out = img.clone();
    // draw every parameter so the stream position does not depend on the image
    let apply: [bool; 4] = std::array::from_fn(|_| rng.random_bool(p));
    let brightness = uniform(rng, -cfg.brightness_delta, cfg.brightness_delta);
    let contrast = uniform(rng, cfg.contrast_range.0, cfg.contrast_range.1);
    let saturation = uniform(rng, cfg.saturation_range.0, cfg.saturation_range.1);
    let hue = uniform(rng, -cfg.hue_delta, cfg.hue_delta);
    if apply[0] {
        adjust_brightness(&mut out, brightness as f32);
    }
    if apply[1] {
        adjust_contrast(&mut out, contrast as f32);
    }
    if apply[2] {
        adjust_saturation(&mut out, saturation as f32);
    }
    if apply[3] {
        adjust_hue(&mut out, hue as f32);
    }
    out
}

/// Uniform draw on `[lo, hi]`, returning `lo` for an empty range.
pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    if hi > lo {
        lo + (hi - lo) * u
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::RngCore;

    fn noise(seed: u64) -> ImageBuffer {
        let mut rng = rng_from_seed(seed);
        let mut data = vec![0u8; 32 * 24 * 3];
        rng.fill_bytes(&mut data);
        ImageBuffer::from_raw(32, 24, data).unwrap()
    }

    #[test]
    fn zero_ranges_are_identity() {
        let cfg = AugmentConfig {
            photometric_probability: 1.0,
            brightness_delta: 0.0,
            contrast_range: (1.0, 1.0),
            saturation_range: (1.0, 1.0),
            hue_delta: 0.0,
            ..AugmentConfig::default()
        };
        let img = noise(1);
        for seed in 0..20 {
            assert_eq!(
                photometric_distort(&img, &cfg, &mut rng_from_seed(seed)),
                img
            );
        }
    }

    #[test]
    fn brightness_on_constant_field() {
        for v in [0u8, 100, 250] {
            for d in [0.0f32, 5.0, 20.0] {
                let mut img = ImageBuffer::filled(4, 4, [v; 3]);
                adjust_brightness(&mut img, d);
                let want = (v as f32 + d).min(255.0) as u8;
                assert!(img.data().iter().all(|&s| s == want));
            }
        }
    }

    #[test]
    fn hue_round_trip_and_full_turn() {
        for (r, g, b) in [
            (255.0, 0.0, 0.0),
            (10.0, 200.0, 30.0),
            (5.0, 5.0, 90.0),
            (128.0, 128.0, 128.0),
        ] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-3 && (g - g2).abs() < 1e-3 && (b - b2).abs() < 1e-3);
        }
        let img = noise(3);
        let mut turned = img.clone();
        adjust_hue(&mut turned, 360.0);
        assert_eq!(turned, img);
        // grey pixels have no hue
        let mut grey = ImageBuffer::filled(3, 3, [77; 3]);
        adjust_hue(&mut grey, 90.0);
        assert!(grey.data().iter().all(|&s| s == 77));
    }

    #[test]
    fn saturation_zero_gives_grey() {
        let mut img = noise(4);
        adjust_saturation(&mut img, 0.0);
        for px in img.data().chunks_exact(3) {
            assert!(px.iter().all(|&s| s.abs_diff(px[0]) <= 1));
        }
    }

    #[test]
    fn extreme_settings_stay_in_range() {
        // samples are u8, so the real check is that clamping (not wrapping) happens
        let img = noise(5);
        let mut hot = img.clone();
        adjust_brightness(&mut hot, 300.0);
        assert!(hot.data().iter().all(|&s| s == 255));
        let mut cold = img.clone();
        adjust_contrast(&mut cold, -1.0);
        assert!(cold.data().iter().all(|&s| s == 0));
    }
}
