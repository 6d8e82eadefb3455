//! Box delta coding and the two-step training objective.
//!
//! Deltas use the usual centre/log-size parameterization:
//! `dx = (gcx - acx) / aw`, `dy = (gcy - acy) / ah`, `dw = ln(gw / aw)`,
//! `dh = ln(gh / ah)`.
//!
//! The objective sums both steps. The first step classifies only low-level
//! anchors and regresses only high-level ones; the second step does both on
//! every anchor. Each step's terms are normalized by its positive count
//! (at least 1), and ignored anchors contribute nothing.

use crate::error::{Error, Result};
use crate::geometry::BoxXYXY;
use crate::matching::MatchLabel;

/// Clamp applied to `dw`/`dh` before exponentiation.
pub const MAX_LOG_SIZE_DELTA: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Probability clamp used by [`focal_loss`].
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub const ZERO: BoxDelta = BoxDelta {
        dx: 0.0,
        dy: 0.0,
        dw: 0.0,
        dh: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        BoxDelta { dx, dy, dw, dh }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

pub fn encode(gt: &BoxXYXY, anchor: &BoxXYXY) -> Result<BoxDelta> {
    if !anchor.is_proper() {
        return Err(anchor.degenerate("anchor has no area"));
    }
    if !gt.is_proper() {
        return Err(gt.degenerate("ground-truth box has no area"));
    }
    let (acx, acy) = anchor.center();
    let (gcx, gcy) = gt.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok(BoxDelta {
        dx: (gcx - acx) / aw,
        dy: (gcy - acy) / ah,
        dw: (gt.width() / aw).ln(),
        dh: (gt.height() / ah).ln(),
    })
}

/// Inverse of [`encode`]; `dw`/`dh` are clamped to `±MAX_LOG_SIZE_DELTA`.
pub fn decode(anchor: &BoxXYXY, d: &BoxDelta) -> BoxXYXY {
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let dw = d.dw.clamp(-MAX_LOG_SIZE_DELTA, MAX_LOG_SIZE_DELTA);
    let dh = d.dh.clamp(-MAX_LOG_SIZE_DELTA, MAX_LOG_SIZE_DELTA);
    BoxXYXY::from_center(
        acx + d.dx * aw,
        acy + d.dy * ah,
        aw * dw.exp(),
        ah * dh.exp(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Smooth-L1 transition point; 0 gives plain L1.
    pub smooth_l1_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            smooth_l1_beta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        // alpha = 1 is accepted so the focal term can reduce to plain
        // cross-entropy on positives.
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return Err(Error::Config(format!(
                "focal_alpha {} outside (0, 1]",
                self.focal_alpha
            )));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "focal_gamma {} must be >= 0",
                self.focal_gamma
            )));
        }
        if !(self.smooth_l1_beta >= 0.0 && self.smooth_l1_beta.is_finite()) {
            return Err(Error::Config(format!(
                "smooth_l1_beta {} must be >= 0",
                self.smooth_l1_beta
            )));
        }
        Ok(())
    }
}

/// Binary classification target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Positive,
    Negative,
}

fn clamp_prob(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Probability(p));
    }
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS))
}

/// Binary focal loss for the face probability `p`.
///
/// Positive: `-alpha (1 - p)^gamma ln p`; negative:
/// `-(1 - alpha) p^gamma ln(1 - p)`. `p` is clamped to `[eps, 1 - eps]`.
pub fn focal_loss(p: f64, target: Target, cfg: &LossConfig) -> Result<f64> {
    let p = clamp_prob(p)?;
    let (a, g) = (cfg.focal_alpha, cfg.focal_gamma);
    Ok(match target {
        Target::Positive => -a * (1.0 - p).powf(g) * p.ln(),
        Target::Negative => -(1.0 - a) * p.powf(g) * (1.0 - p).ln(),
    })
}

/// Closed-form `d focal_loss / dp` at the clamped `p`.
pub fn focal_loss_grad(p: f64, target: Target, cfg: &LossConfig) -> Result<f64> {
    let p = clamp_prob(p)?;
    let (a, g) = (cfg.focal_alpha, cfg.focal_gamma);
    Ok(match target {
        Target::Positive => {
            let q = 1.0 - p;
            let dq = if g == 0.0 { 0.0 } else { g * q.powf(g - 1.0) };
            a * (dq * p.ln() - q.powf(g) / p)
        }
        Target::Negative => {
            let dp = if g == 0.0 { 0.0 } else { g * p.powf(g - 1.0) };
            -(1.0 - a) * (dp * (1.0 - p).ln() - p.powf(g) / (1.0 - p))
        }
    })
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let ax = x.abs();
    if ax < beta {
        0.5 * ax * ax / beta
    } else {
        ax - 0.5 * beta
    }
}

pub fn smooth_l1_delta(pred: &BoxDelta, target: &BoxDelta, beta: f64) -> f64 {
    pred.as_array()
        .iter()
        .zip(target.as_array())
        .map(|(p, t)| smooth_l1(p - t, beta))
        .sum()
}

/// One anchor's prediction and targets within one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorTerm {
    pub score: f64,
    pub label: MatchLabel,
    pub delta: BoxDelta,
    pub target: BoxDelta,
    pub low_level: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossBreakdown {
    pub first_cls: f64,
    pub first_reg: f64,
    pub second_cls: f64,
    pub second_reg: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.first_cls + self.first_reg + self.second_cls + self.second_reg
    }
}

fn step_loss(
    terms: &[AnchorTerm],
    cfg: &LossConfig,
    classify: impl Fn(&AnchorTerm) -> bool,
    regress: impl Fn(&AnchorTerm) -> bool,
) -> Result<(f64, f64)> {
    let npos = terms
        .iter()
        .filter(|t| t.label.is_positive())
        .count()
        .max(1) as f64;
    let (mut cls, mut reg) = (0.0, 0.0);
    for t in terms {
        let target = match t.label {
            MatchLabel::Positive(_) => Target::Positive,
            MatchLabel::Negative => Target::Negative,
            MatchLabel::Ignored => continue,
        };
        if classify(t) {
            cls += focal_loss(t.score, target, cfg)?;
        }
        if target == Target::Positive && regress(t) {
            reg += smooth_l1_delta(&t.delta, &t.target, cfg.smooth_l1_beta);
        }
    }
    Ok((cls / npos, reg / npos))
}

/// Sum of the first-step (selective) and second-step losses.
pub fn total_loss(
    first: &[AnchorTerm],
    second: &[AnchorTerm],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let (first_cls, first_reg) = step_loss(first, cfg, |t| t.low_level, |t| !t.low_level)?;
    let (second_cls, second_reg) = step_loss(second, cfg, |_| true, |_| true)?;
    Ok(LossBreakdown {
        first_cls,
        first_reg,
        second_cls,
        second_reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxXYXY {
        BoxXYXY::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn encode_examples() {
        let a = bx(10.0, 20.0, 30.0, 60.0);
        assert_eq!(encode(&a, &a).unwrap(), BoxDelta::ZERO);
        let g = bx(0.0, 0.0, 40.0, 80.0);
        let d = encode(&g, &a).unwrap();
        assert_eq!(d, BoxDelta::new(0.0, 0.0, LN_2, LN_2));
        assert!(encode(&bx(1.0, 1.0, 1.0, 5.0), &a).is_err());
        assert!(encode(&a, &bx(1.0, 1.0, 5.0, 1.0)).is_err());
    }

    #[test]
    fn decode_examples() {
        let a = bx(10.0, 20.0, 30.0, 60.0);
        assert_eq!(decode(&a, &BoxDelta::ZERO), a);
        assert_eq!(
            decode(&a, &BoxDelta::new(1.0, 0.0, 0.0, 0.0)),
            a.translate(20.0, 0.0)
        );
        let huge = decode(&a, &BoxDelta::new(0.0, 0.0, 1e6, -1e6));
        assert!(huge.is_valid());
        assert!(huge.width() <= a.width() * 1000.0 / 16.0 * (1.0 + 1e-12));
        assert!(huge.height() >= a.height() * 16.0 / 1000.0 * (1.0 - 1e-12));
        assert!((MAX_LOG_SIZE_DELTA - (1000.0f64 / 16.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn focal_examples() {
        let ce = LossConfig {
            focal_alpha: 1.0,
            focal_gamma: 0.0,
            ..LossConfig::default()
        };
        let v = focal_loss(0.5, Target::Positive, &ce).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

        let v = focal_loss(0.5, Target::Positive, &LossConfig::default()).unwrap();
        // 0.25 * 0.5^2 * ln 2
        assert!((v - 0.043_321_698_784_996_6).abs() < 1e-12, "{v}");

        let near_one = focal_loss(1.0 - 1e-9, Target::Positive, &LossConfig::default()).unwrap();
        assert!(near_one < 1e-12);
        assert!(focal_loss(1.5, Target::Positive, &ce).is_err());
        assert!(focal_loss(f64::NAN, Target::Negative, &ce).is_err());
    }

    #[test]
    fn smooth_l1_shape() {
        assert_eq!(smooth_l1(0.5, 1.0), 0.125);
        assert_eq!(smooth_l1(-2.0, 1.0), 1.5);
        assert_eq!(smooth_l1(-2.0, 0.0), 2.0);
    }

    fn term(score: f64, label: MatchLabel, low: bool) -> AnchorTerm {
        AnchorTerm {
            score,
            label,
            delta: BoxDelta::ZERO,
            target: BoxDelta::ZERO,
            low_level: low,
        }
    }

    #[test]
    fn total_loss_limits() {
        let cfg = LossConfig::default();
        let negs: Vec<_> = (0..10)
            .map(|i| term(0.0, MatchLabel::Negative, i % 2 == 0))
            .collect();
        let l = total_loss(&negs, &negs, &cfg).unwrap();
        assert!(l.total() < 1e-12);

        let one = [term(1.0, MatchLabel::Positive(0), false)];
        assert!(total_loss(&one, &one, &cfg).unwrap().total() < 1e-12);
    }

    #[test]
    fn total_loss_matches_hand_sum() {
        let cfg = LossConfig::default();
        let d = BoxDelta::new(0.1, -0.2, 0.3, 2.0);
        let t = BoxDelta::new(0.0, 0.0, 0.0, 0.5);
        let first = [
            AnchorTerm {
                score: 0.8,
                label: MatchLabel::Positive(0),
                delta: d,
                target: t,
                low_level: true,
            },
            AnchorTerm {
                score: 0.3,
                label: MatchLabel::Negative,
                delta: d,
                target: t,
                low_level: true,
            },
            AnchorTerm {
                score: 0.6,
                label: MatchLabel::Positive(1),
                delta: d,
                target: t,
                low_level: false,
            },
            AnchorTerm {
                score: 0.9,
                label: MatchLabel::Ignored,
                delta: d,
                target: t,
                low_level: false,
            },
        ];
        let second = first;

        // independent arithmetic: focal by formula, smooth-L1 by cases
        let fp = |p: f64| -0.25 * (1.0 - p).powi(2) * p.ln();
        let fnp = |p: f64| -0.75 * p.powi(2) * (1.0 - p).ln();
        // |0.1|, |-0.2|, |0.3| < 1 -> 0.5 x^2; |1.5| >= 1 -> 1.5 - 0.5
        let reg = 0.5 * 0.01 + 0.5 * 0.04 + 0.5 * 0.09 + 1.0;
        let npos = 2.0;

        let l = total_loss(&first, &second, &cfg).unwrap();
        assert!((l.first_cls - (fp(0.8) + fnp(0.3)) / npos).abs() < 1e-12);
        assert!((l.first_reg - reg / npos).abs() < 1e-12);
        assert!((l.second_cls - (fp(0.8) + fnp(0.3) + fp(0.6)) / npos).abs() < 1e-12);
        assert!((l.second_reg - 2.0 * reg / npos).abs() < 1e-12);
    }

    /// Pairs whose size ratios stay inside the decode clamp.
    fn arb_pair() -> impl Strategy<Value = (BoxXYXY, BoxXYXY)> {
        (
            (
                -300.0..300.0f64,
                -300.0..300.0f64,
                1.0..400.0f64,
                1.0..400.0f64,
            ),
            (
                -300.0..300.0f64,
                -300.0..300.0f64,
                -3.9..3.9f64,
                -3.9..3.9f64,
            ),
        )
            .prop_map(|((x, y, w, h), (gx, gy, lw, lh))| {
                (
                    BoxXYXY::from_xywh(gx, gy, w * lw.exp(), h * lh.exp()),
                    BoxXYXY::from_xywh(x, y, w, h),
                )
            })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip((g, a) in arb_pair()) {
            let back = decode(&a, &encode(&g, &a).unwrap());
            let scale = g.width().max(g.height()).max(g.x1.abs()).max(g.y1.abs()).max(1.0);
            for (x, y) in [(back.x1, g.x1), (back.y1, g.y1), (back.x2, g.x2), (back.y2, g.y2)] {
                prop_assert!((x - y).abs() <= 1e-6 * scale);
            }
        }

        #[test]
        fn focal_monotone(p in 0.001..0.998f64, dp in 0.0005..0.001f64, g in 0.0..5.0f64, a in 0.05..0.95f64) {
            let cfg = LossConfig { focal_alpha: a, focal_gamma: g, ..LossConfig::default() };
            let q = p + dp;
            prop_assert!(focal_loss(q, Target::Positive, &cfg).unwrap() < focal_loss(p, Target::Positive, &cfg).unwrap());
            prop_assert!(focal_loss(q, Target::Negative, &cfg).unwrap() > focal_loss(p, Target::Negative, &cfg).unwrap());
        }

        #[test]
        fn half_alpha_is_half_bce(p in 0.0..=1.0f64) {
            let cfg = LossConfig { focal_alpha: 0.5, focal_gamma: 0.0, ..LossConfig::default() };
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            prop_assert!((focal_loss(p, Target::Positive, &cfg).unwrap() + 0.5 * pc.ln()).abs() < 1e-9);
            prop_assert!((focal_loss(p, Target::Negative, &cfg).unwrap() + 0.5 * (1.0 - pc).ln()).abs() < 1e-9);
        }

        #[test]
        fn total_loss_non_negative(
            scores in prop::collection::vec((0.0..=1.0f64, 0u8..3, any::<bool>(), -2.0..2.0f64), 0..40)
        ) {
            let terms: Vec<AnchorTerm> = scores.iter().map(|&(s, l, low, d)| AnchorTerm {
                score: s,
                label: match l { 0 => MatchLabel::Positive(0), 1 => MatchLabel::Negative, _ => MatchLabel::Ignored },
                delta: BoxDelta::new(d, 0.0, 0.0, d),
                target: BoxDelta::ZERO,
                low_level: low,
            }).collect();
            let l = total_loss(&terms, &terms, &LossConfig::default()).unwrap();
            prop_assert!(l.total() >= 0.0);
        }
    }
}
