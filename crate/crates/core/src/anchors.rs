//! Anchor tiling over a feature pyramid.
//!
//! Each level with total stride `S` carries one anchor per grid cell and per
//! scale multiplier `m`, centred at `(S * (i + 0.5), S * (j + 0.5))` with
//! `sqrt(area) = m * S`. The aspect ratio is height/width and is applied at
//! constant area. The default multipliers are `2` and `2 * sqrt(2)`, giving
//! scales from 8 px (stride 4) up to about 362 px (stride 128).
//!
//! Anchors are not clipped to the image.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::BoxXYXY;

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidConfig {
    pub input_width: u32,
    pub input_height: u32,
    /// Total stride per level, strictly increasing.
    pub strides: Vec<u32>,
    pub scale_multipliers: Vec<f64>,
    /// Height over width.
    pub aspect_ratio: f64,
    /// Number of leading levels treated as "low" (first-step filtering).
    pub low_level_count: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            input_width: 1024,
            input_height: 1024,
            strides: vec![4, 8, 16, 32, 64, 128],
            scale_multipliers: vec![2.0, 2.0 * std::f64::consts::SQRT_2],
            aspect_ratio: 1.25,
            low_level_count: 3,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.input_width == 0 || self.input_height == 0 {
            return bad("input dimensions must be positive");
        }
        if self.strides.is_empty() {
            return bad("at least one pyramid level is required");
        }
        if self.strides[0] == 0 || self.strides.windows(2).any(|w| w[0] >= w[1]) {
            return bad("strides must be positive and strictly increasing");
        }
        if self.scale_multipliers.is_empty()
            || self
                .scale_multipliers
                .iter()
                .any(|m| !(m.is_finite() && *m > 0.0))
        {
            return bad("scale multipliers must be positive");
        }
        if !(self.aspect_ratio.is_finite() && self.aspect_ratio > 0.0) {
            return bad("aspect ratio must be positive");
        }
        if self.low_level_count < 1 || self.low_level_count >= self.strides.len() {
            return bad("low_level_count must satisfy 1 <= n < number of levels");
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.strides.len()
    }

    pub fn grid_size(&self, level: usize) -> (usize, usize) {
        let s = self.strides[level];
        (
            self.input_width.div_ceil(s) as usize,
            self.input_height.div_ceil(s) as usize,
        )
    }

    pub fn level_count(&self, level: usize) -> usize {
        let (gw, gh) = self.grid_size(level);
        gw * gh * self.scale_multipliers.len()
    }

    /// Anchor scales (`sqrt(area)`) at a level, one per multiplier.
    pub fn level_scales(&self, level: usize) -> Vec<f64> {
        let s = self.strides[level] as f64;
        self.scale_multipliers.iter().map(|m| m * s).collect()
    }
}

/// All anchors of a pyramid, stored level-major in one flat array.
#[derive(Clone, Debug)]
pub struct AnchorSet {
    boxes: Vec<BoxXYXY>,
    levels: Vec<u8>,
    ranges: Vec<Range<usize>>,
    low_level_count: usize,
    config: Option<PyramidConfig>,
}

impl AnchorSet {
    /// Assemble an anchor set from explicit boxes and 0-based level indices.
    ///
    /// Levels must be non-decreasing so that each level is a contiguous range.
    /// Anchors on levels `< low_level_count` are treated as low-level.
    pub fn from_parts(
        boxes: Vec<BoxXYXY>,
        levels: Vec<u8>,
        num_levels: usize,
        low_level_count: usize,
    ) -> Result<Self> {
        if boxes.len() != levels.len() {
            return Err(Error::Misaligned {
                expected: boxes.len(),
                got: levels.len(),
            });
        }
        if levels.windows(2).any(|w| w[0] > w[1])
            || levels.iter().any(|&l| l as usize >= num_levels)
        {
            return Err(Error::Config(
                "anchor levels must be sorted and below num_levels".into(),
            ));
        }
        if let Some(b) = boxes.iter().find(|b| !b.is_valid()) {
            return Err(b.degenerate("anchor corners inverted"));
        }
        let mut ranges = Vec::with_capacity(num_levels);
        let mut start = 0;
        for l in 0..num_levels {
            let end = start
                + levels[start..]
                    .iter()
                    .take_while(|&&x| x as usize == l)
                    .count();
            ranges.push(start..end);
            start = end;
        }
        Ok(AnchorSet {
            boxes,
            levels,
            ranges,
            low_level_count,
            config: None,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes(&self) -> &[BoxXYXY] {
        &self.boxes
    }

    /// 0-based level of every anchor, parallel to [`boxes`](Self::boxes).
    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.ranges.len()
    }

    pub fn level(&self, level: usize) -> &[BoxXYXY] {
        &self.boxes[self.ranges[level].clone()]
    }

    pub fn level_range(&self, level: usize) -> Range<usize> {
        self.ranges[level].clone()
    }

    pub fn low_level_count(&self) -> usize {
        self.low_level_count
    }

    #[inline]
    pub fn is_low_level(&self, anchor: usize) -> bool {
        (self.levels[anchor] as usize) < self.low_level_count
    }

    /// Generating configuration, when built by [`generate_pyramid_anchors`].
    pub fn config(&self) -> Option<&PyramidConfig> {
        self.config.as_ref()
    }
}

pub fn generate_pyramid_anchors(config: &PyramidConfig) -> Result<AnchorSet> {
    config.validate()?;
    if config.num_levels() > u8::MAX as usize {
        return Err(Error::Config("too many pyramid levels".into()));
    }
    let total: usize = (0..config.num_levels())
        .map(|l| config.level_count(l))
        .sum();
    let mut boxes = Vec::with_capacity(total);
    let mut levels = Vec::with_capacity(total);
    let mut ranges = Vec::with_capacity(config.num_levels());
    let sqrt_ratio = config.aspect_ratio.sqrt();

    for level in 0..config.num_levels() {
        let start = boxes.len();
        let stride = config.strides[level] as f64;
        let (gw, gh) = config.grid_size(level);
        let shapes: Vec<(f64, f64)> = config
            .level_scales(level)
            .into_iter()
            .map(|scale| (scale / sqrt_ratio, scale * sqrt_ratio))
            .collect();
        for j in 0..gh {
            let cy = stride * (j as f64 + 0.5);
            for i in 0..gw {
                let cx = stride * (i as f64 + 0.5);
                for &(w, h) in &shapes {
                    boxes.push(BoxXYXY::from_center(cx, cy, w, h));
                    levels.push(level as u8);
                }
            }
        }
        ranges.push(start..boxes.len());
    }

    Ok(AnchorSet {
        boxes,
        levels,
        ranges,
        low_level_count: config.low_level_count,
        config: Some(config.clone()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelCensus {
    pub stride: u32,
    pub grid_width: usize,
    pub grid_height: usize,
    pub scales: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorCensus {
    pub levels: Vec<LevelCensus>,
    pub total: usize,
    pub low_level_total: usize,
    /// Share of anchors on the first `low_level_count` levels.
    pub low_level_fraction: f64,
}

impl AnchorCensus {
    pub fn per_level_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.count).collect()
    }
}

/// Exact anchor counts per level, computed without materializing anchors.
pub fn anchor_count_stats(config: &PyramidConfig) -> Result<AnchorCensus> {
    config.validate()?;
    let levels: Vec<LevelCensus> = (0..config.num_levels())
        .map(|l| {
            let (gw, gh) = config.grid_size(l);
            LevelCensus {
                stride: config.strides[l],
                grid_width: gw,
                grid_height: gh,
                scales: config.level_scales(l),
                count: config.level_count(l),
            }
        })
        .collect();
    let total: usize = levels.iter().map(|l| l.count).sum();
    let low_level_total: usize = levels[..config.low_level_count]
        .iter()
        .map(|l| l.count)
        .sum();
    Ok(AnchorCensus {
        levels,
        total,
        low_level_total,
        low_level_fraction: low_level_total as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_scale_range() {
        let cfg = PyramidConfig::default();
        assert_eq!(cfg.level_scales(0)[0], 8.0);
        let max = cfg.level_scales(5)[1];
        assert!((max - 362.038_671_968).abs() < 1e-6, "{max}");
    }

    #[test]
    fn default_census() {
        let census = anchor_count_stats(&PyramidConfig::default()).unwrap();
        assert_eq!(
            census.per_level_counts(),
            vec![131072, 32768, 8192, 2048, 512, 128]
        );
        assert_eq!(census.total, 174_720);
        assert_eq!(census.low_level_total, 172_032);
        assert!((census.low_level_fraction - 172_032.0 / 174_720.0).abs() < 1e-15);
        assert!((census.low_level_fraction - 0.9846).abs() < 1e-4);
    }

    #[test]
    fn tiny_single_level_grid() {
        // one level is rejected; a second coarse level is needed
        let single = PyramidConfig {
            input_width: 8,
            input_height: 8,
            strides: vec![4],
            scale_multipliers: vec![2.0],
            aspect_ratio: 1.0,
            low_level_count: 1,
        };
        assert!(matches!(single.validate(), Err(Error::Config(_))));

        let cfg = PyramidConfig {
            strides: vec![4, 8],
            ..single
        };
        let set = generate_pyramid_anchors(&cfg).unwrap();
        let lvl0 = set.level(0);
        assert_eq!(lvl0.len(), 4);
        let centers: Vec<_> = lvl0.iter().map(|b| b.center()).collect();
        assert_eq!(
            centers,
            vec![(2.0, 2.0), (6.0, 2.0), (2.0, 6.0), (6.0, 6.0)]
        );
        for b in lvl0 {
            assert_eq!((b.width(), b.height()), (8.0, 8.0));
        }
    }

    #[test]
    fn equal_grid_levels_split_evenly() {
        // 4x4 input: both stride 4 and stride 8 give a 1x1 grid
        let cfg = PyramidConfig {
            input_width: 4,
            input_height: 4,
            strides: vec![4, 8],
            scale_multipliers: vec![2.0],
            aspect_ratio: 1.0,
            low_level_count: 1,
        };
        let census = anchor_count_stats(&cfg).unwrap();
        assert_eq!(census.low_level_fraction, 0.5);
    }

    #[test]
    fn square_anchors_when_ratio_is_one() {
        let cfg = PyramidConfig {
            input_width: 256,
            input_height: 256,
            aspect_ratio: 1.0,
            ..PyramidConfig::default()
        };
        let set = generate_pyramid_anchors(&cfg).unwrap();
        for (b, &l) in set.boxes().iter().zip(set.levels()) {
            assert!((b.width() - b.height()).abs() < 1e-9);
            let scales = cfg.level_scales(l as usize);
            assert!(scales.iter().any(|s| (s - b.width()).abs() < 1e-9));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let base = PyramidConfig::default();
        for cfg in [
            PyramidConfig {
                strides: vec![8, 4, 16],
                ..base.clone()
            },
            PyramidConfig {
                scale_multipliers: vec![0.0],
                ..base.clone()
            },
            PyramidConfig {
                low_level_count: 6,
                ..base.clone()
            },
            PyramidConfig {
                low_level_count: 0,
                ..base.clone()
            },
            PyramidConfig {
                input_width: 0,
                ..base.clone()
            },
        ] {
            assert!(generate_pyramid_anchors(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn from_parts_ranges() {
        let b = BoxXYXY::from_xywh(0.0, 0.0, 4.0, 4.0);
        let set = AnchorSet::from_parts(vec![b; 5], vec![0, 0, 2, 2, 2], 3, 1).unwrap();
        assert_eq!(set.level_range(0), 0..2);
        assert_eq!(set.level_range(1), 2..2);
        assert_eq!(set.level_range(2), 2..5);
        assert!(set.is_low_level(1) && !set.is_low_level(2));
        assert!(AnchorSet::from_parts(vec![b; 2], vec![1, 0], 2, 1).is_err());
    }

    fn arb_config() -> impl Strategy<Value = PyramidConfig> {
        (
            1u32..300,
            1u32..300,
            prop::collection::btree_set(1u32..64, 2..5),
            prop::collection::vec(0.5..4.0f64, 1..3),
            0.5..2.0f64,
        )
            .prop_map(|(w, h, strides, mults, ratio)| {
                let strides: Vec<u32> = strides.into_iter().collect();
                PyramidConfig {
                    input_width: w,
                    input_height: h,
                    low_level_count: strides.len() - 1,
                    strides,
                    scale_multipliers: mults,
                    aspect_ratio: ratio,
                }
            })
    }

    proptest! {
        #[test]
        fn tiling_invariants(cfg in arb_config()) {
            let set = generate_pyramid_anchors(&cfg).unwrap();
            let expected: usize = cfg.strides.iter().map(|&s| {
                cfg.scale_multipliers.len()
                    * cfg.input_width.div_ceil(s) as usize
                    * cfg.input_height.div_ceil(s) as usize
            }).sum();
            prop_assert_eq!(set.len(), expected);
            prop_assert_eq!(anchor_count_stats(&cfg).unwrap().total, expected);
            for (b, &l) in set.boxes().iter().zip(set.levels()) {
                let s = cfg.strides[l as usize] as f64;
                let ratio = b.height() / b.width();
                prop_assert!((ratio - cfg.aspect_ratio).abs() < 1e-9);
                let area = b.area();
                prop_assert!(cfg.scale_multipliers.iter()
                    .any(|m| ((m * s).powi(2) - area).abs() <= 1e-6 * area));
                let (cx, cy) = b.center();
                let gi = cx / s - 0.5;
                let gj = cy / s - 0.5;
                prop_assert!((gi - gi.round()).abs() < 1e-9 && (gj - gj.round()).abs() < 1e-9);
            }
        }

        #[test]
        fn doubling_width_doubles_columns(cfg in arb_config()) {
            let wide = PyramidConfig { input_width: cfg.input_width * 2, ..cfg.clone() };
            for l in 0..cfg.num_levels() {
                let s = cfg.strides[l];
                prop_assert_eq!(wide.grid_size(l).0, (cfg.input_width * 2).div_ceil(s) as usize);
                if cfg.input_width % s == 0 {
                    prop_assert_eq!(wide.grid_size(l).0, 2 * cfg.grid_size(l).0);
                }
            }
        }
    }
}
