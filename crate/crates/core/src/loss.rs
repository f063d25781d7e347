//! Silent-object-aware training objective: bipartite matching of
//! predictions to ground truth, focal/dice/cross-entropy segmentation
//! terms, a background-classification penalty over unmatched predictions,
//! an overlap penalty against the ground-truth union, and a
//! finite-difference oracle for every analytic gradient.

use crate::assign::{solve_assignment, AssignError};
use crate::mask::{union_of, BinaryMask, MaskError};
use thiserror::Error;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any
/// logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// Smoothing constant used by the dice term inside matching costs and the
/// segmentation loss.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{got} predictions cannot cover {expected} ground truths")]
    TooFewPredictions { got: usize, expected: usize },
    #[error("prediction {index}: class_probs has {got} entries, expected {expected}")]
    ClassProbsLength {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("prediction {index}: mask_probs has {got} entries, expected {expected}")]
    MaskProbsLength {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("prediction {index}: class_probs sum to {sum}, expected 1 within 1e-9")]
    ClassProbsSum { index: usize, sum: f64 },
    #[error("{context}: probability {value} outside [0, 1]")]
    ProbabilityRange { context: String, value: f64 },
    #[error("ground truth {index}: class id {class_id} outside [0, {num_classes})")]
    ClassIdRange {
        index: usize,
        class_id: usize,
        num_classes: usize,
    },
    #[error("silent label {label} outside [0, {num_classes})")]
    SilentLabelRange { label: usize, num_classes: usize },
    #[error("class index {index} out of range for {len} class probabilities")]
    ClassIndexRange { index: usize, len: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Assign(#[from] AssignError),
}

/// One query's output: a (C+1)-way class distribution (last entry is the
/// "no object" class) and per-pixel mask probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_probs: Vec<f64>,
    pub mask_probs: Vec<f64>,
}

impl Prediction {
    /// Check ranges, the pixel count, and that the class distribution sums
    /// to 1 within 1e-9.
    pub fn validate(&self, index: usize, pixels: usize) -> Result<(), LossError> {
        if self.mask_probs.len() != pixels {
            return Err(LossError::MaskProbsLength {
                index,
                got: self.mask_probs.len(),
                expected: pixels,
            });
        }
        for &p in self.class_probs.iter().chain(&self.mask_probs) {
            if !(0.0..=1.0).contains(&p) {
                return Err(LossError::ProbabilityRange {
                    context: format!("prediction {index}"),
                    value: p,
                });
            }
        }
        let sum: f64 = self.class_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LossError::ClassProbsSum { index, sum });
        }
        Ok(())
    }

    /// Index of the most likely non-background class, with its probability.
    pub fn top_object_class(&self) -> Option<(usize, f64)> {
        let object = &self.class_probs[..self.class_probs.len().saturating_sub(1)];
        object
            .iter()
            .enumerate()
            .fold(None, |best, (i, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((i, p)),
            })
    }

    pub fn background_prob(&self) -> f64 {
        *self.class_probs.last().expect("class_probs is non-empty")
    }
}

/// An annotated object: class id (never background) and binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub class_id: usize,
    pub mask: BinaryMask,
}

/// Weights and knobs of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda_focal: f64,
    pub lambda_dice: f64,
    pub lambda_cls: f64,
    pub lambda_ins: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Minimum top-class probability for an unmatched prediction to count
    /// as aligned with a silent object.
    pub silent_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_focal: 20.0,
            lambda_dice: 1.0,
            lambda_cls: 1.0,
            lambda_ins: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            silent_threshold: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [
            ("lambda_focal", self.lambda_focal),
            ("lambda_dice", self.lambda_dice),
            ("lambda_cls", self.lambda_cls),
            ("lambda_ins", self.lambda_ins),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !self.focal_gamma.is_finite() || !self.focal_alpha.is_finite() {
            return Err(LossError::Config(
                "focal_gamma and focal_alpha must be finite".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.silent_threshold) {
            return Err(LossError::Config(format!(
                "silent_threshold must lie in [0, 1], got {}",
                self.silent_threshold
            )));
        }
        Ok(())
    }
}

#[inline]
fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_pixels(mask_probs: &[f64], gt: &BinaryMask) -> Result<(), LossError> {
    if mask_probs.len() != gt.pixel_count() {
        return Err(LossError::MaskProbsLength {
            index: 0,
            got: mask_probs.len(),
            expected: gt.pixel_count(),
        });
    }
    Ok(())
}

/// Mean focal loss over pixels: `-alpha_t (1 - p_t)^gamma log p_t` with
/// `p_t = p` on object pixels and `1 - p` elsewhere.
pub fn focal_loss(
    mask_probs: &[f64],
    gt: &BinaryMask,
    gamma: f64,
    alpha: f64,
) -> Result<f64, LossError> {
    check_pixels(mask_probs, gt)?;
    let mut sum = 0.0;
    for (&raw, g) in mask_probs.iter().zip(gt.pixels()) {
        let p = clamp(raw);
        let (p_t, a_t) = if g { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
        sum += -a_t * (1.0 - p_t).powf(gamma) * p_t.ln();
    }
    Ok(sum / mask_probs.len() as f64)
}

/// Gradient of [`focal_loss`] with respect to each pixel probability.
/// Pixels pushed outside the clamp range get a zero gradient.
pub fn focal_grad(
    mask_probs: &[f64],
    gt: &BinaryMask,
    gamma: f64,
    alpha: f64,
) -> Result<Vec<f64>, LossError> {
    check_pixels(mask_probs, gt)?;
    let n = mask_probs.len() as f64;
    let mut grad = Vec::with_capacity(mask_probs.len());
    for (&raw, g) in mask_probs.iter().zip(gt.pixels()) {
        if raw < PROB_CLAMP || raw > 1.0 - PROB_CLAMP {
            grad.push(0.0);
            continue;
        }
        let p = raw;
        let d = if g {
            alpha * gamma * (1.0 - p).powf(gamma - 1.0) * p.ln() - alpha * (1.0 - p).powf(gamma) / p
        } else {
            -(1.0 - alpha) * gamma * p.powf(gamma - 1.0) * (1.0 - p).ln()
                + (1.0 - alpha) * p.powf(gamma) / (1.0 - p)
        };
        grad.push(d / n);
    }
    Ok(grad)
}

/// Dice loss `1 - 2(sum(p*g) + smooth) / (sum(p) + sum(g) + 2*smooth)`,
/// bounded in [0, 1].
pub fn dice_loss(mask_probs: &[f64], gt: &BinaryMask, smooth: f64) -> Result<f64, LossError> {
    check_pixels(mask_probs, gt)?;
    let (mut dot, mut sum_p, mut sum_g) = (0.0, 0.0, 0.0);
    for (&raw, g) in mask_probs.iter().zip(gt.pixels()) {
        let p = clamp(raw);
        sum_p += p;
        if g {
            dot += p;
            sum_g += 1.0;
        }
    }
    Ok(1.0 - (2.0 * dot + 2.0 * smooth) / (sum_p + sum_g + 2.0 * smooth))
}

/// Gradient of [`dice_loss`] with respect to each pixel probability.
pub fn dice_grad(
    mask_probs: &[f64],
    gt: &BinaryMask,
    smooth: f64,
) -> Result<Vec<f64>, LossError> {
    check_pixels(mask_probs, gt)?;
    let (mut dot, mut sum_p, mut sum_g) = (0.0, 0.0, 0.0);
    for (&raw, g) in mask_probs.iter().zip(gt.pixels()) {
        let p = clamp(raw);
        sum_p += p;
        if g {
            dot += p;
            sum_g += 1.0;
        }
    }
    let numer = 2.0 * dot + 2.0 * smooth;
    let denom = sum_p + sum_g + 2.0 * smooth;
    let grad = mask_probs
        .iter()
        .zip(gt.pixels())
        .map(|(&raw, g)| {
            if raw < PROB_CLAMP || raw > 1.0 - PROB_CLAMP {
                return 0.0;
            }
            let dg = if g { 2.0 } else { 0.0 };
            (numer - dg * denom) / (denom * denom)
        })
        .collect();
    Ok(grad)
}

/// Negative log likelihood of the target class, with clamped probability.
pub fn cross_entropy(class_probs: &[f64], class_index: usize) -> Result<f64, LossError> {
    if class_index >= class_probs.len() {
        return Err(LossError::ClassIndexRange {
            index: class_index,
            len: class_probs.len(),
        });
    }
    Ok(-clamp(class_probs[class_index]).ln())
}

/// Gradient of [`cross_entropy`] with respect to the class probabilities.
pub fn cross_entropy_grad(
    class_probs: &[f64],
    class_index: usize,
) -> Result<Vec<f64>, LossError> {
    if class_index >= class_probs.len() {
        return Err(LossError::ClassIndexRange {
            index: class_index,
            len: class_probs.len(),
        });
    }
    let mut grad = vec![0.0; class_probs.len()];
    let p = class_probs[class_index];
    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        grad[class_index] = -1.0 / p;
    }
    Ok(grad)
}

/// Soft overlap ratio of a predicted mask against a binary region:
/// `sum(min(p, u)) / sum(max(p, u))`, 0 when the denominator vanishes.
pub fn instance_overlap_soft(mask_probs: &[f64], union: &BinaryMask) -> Result<f64, LossError> {
    check_pixels(mask_probs, union)?;
    let (mut numer, mut denom) = (0.0, 0.0);
    for (&p, u) in mask_probs.iter().zip(union.pixels()) {
        let u = if u { 1.0 } else { 0.0 };
        numer += p.min(u);
        denom += p.max(u);
    }
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(numer / denom)
}

/// Gradient of [`instance_overlap_soft`]; exact for probabilities strictly
/// inside (0, 1), where min/max have no kinks against a binary region.
pub fn instance_overlap_soft_grad(
    mask_probs: &[f64],
    union: &BinaryMask,
) -> Result<Vec<f64>, LossError> {
    check_pixels(mask_probs, union)?;
    let (mut numer, mut denom) = (0.0, 0.0);
    for (&p, u) in mask_probs.iter().zip(union.pixels()) {
        let u = if u { 1.0 } else { 0.0 };
        numer += p.min(u);
        denom += p.max(u);
    }
    if denom == 0.0 {
        return Ok(vec![0.0; mask_probs.len()]);
    }
    let grad = union
        .pixels()
        .map(|u| {
            if u {
                1.0 / denom
            } else {
                -numer / (denom * denom)
            }
        })
        .collect();
    Ok(grad)
}

/// Hard overlap ratio: thresholds the mask at 0.5 and computes binary IoU
/// against the region.
pub fn instance_overlap_hard(mask_probs: &[f64], union: &BinaryMask) -> Result<f64, LossError> {
    check_pixels(mask_probs, union)?;
    let bytes: Vec<u8> = mask_probs.iter().map(|&p| (p >= 0.5) as u8).collect();
    let hard = BinaryMask::from_pixels(union.height(), union.width(), &bytes)?;
    Ok(crate::mask::iou(&hard, union)?)
}

/// Matching cost of one prediction against one ground truth, reusing the
/// segmentation-loss weights.
pub fn pair_cost(
    pred: &Prediction,
    gt: &GroundTruth,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    let focal = focal_loss(&pred.mask_probs, &gt.mask, cfg.focal_gamma, cfg.focal_alpha)?;
    let dice = dice_loss(&pred.mask_probs, &gt.mask, DICE_SMOOTH)?;
    let ce = cross_entropy(&pred.class_probs, gt.class_id)?;
    Ok(cfg.lambda_focal * focal + cfg.lambda_dice * dice + ce)
}

/// Minimum-cost injective assignment of ground truths to predictions.
/// Returns the prediction index chosen for each ground truth.
pub fn match_predictions(
    preds: &[Prediction],
    gts: &[GroundTruth],
    cfg: &LossConfig,
) -> Result<Vec<usize>, LossError> {
    if preds.len() < gts.len() {
        return Err(LossError::TooFewPredictions {
            got: preds.len(),
            expected: gts.len(),
        });
    }
    let mut cost = Vec::with_capacity(gts.len());
    for gt in gts {
        let mut row = Vec::with_capacity(preds.len());
        for pred in preds {
            row.push(pair_cost(pred, gt, cfg)?);
        }
        cost.push(row);
    }
    Ok(solve_assignment(&cost)?)
}

/// Background-classification penalty over unmatched predictions, skipping
/// those aligned with a known silent object (top object class in
/// `silent_labels` at probability >= `silent_threshold`).
pub fn classification_loss(
    preds: &[Prediction],
    silent_labels: &[usize],
    matched: &[usize],
    silent_threshold: f64,
) -> f64 {
    let mut is_matched = vec![false; preds.len()];
    for &m in matched {
        is_matched[m] = true;
    }
    let mut sum = 0.0;
    for (i, pred) in preds.iter().enumerate() {
        if is_matched[i] {
            continue;
        }
        let aligned = pred
            .top_object_class()
            .is_some_and(|(class, p)| silent_labels.contains(&class) && p >= silent_threshold);
        if aligned {
            continue;
        }
        sum += -clamp(pred.background_prob()).ln();
    }
    sum
}

/// Soft overlap penalty of every unmatched prediction against the union of
/// ground-truth masks; 0 when there are no ground truths.
pub fn instance_loss_soft(
    preds: &[Prediction],
    gts: &[GroundTruth],
    matched: &[usize],
) -> Result<f64, LossError> {
    instance_loss_with(preds, gts, matched, instance_overlap_soft)
}

/// Evaluation-mode counterpart of [`instance_loss_soft`] using hard masks.
pub fn instance_loss_hard(
    preds: &[Prediction],
    gts: &[GroundTruth],
    matched: &[usize],
) -> Result<f64, LossError> {
    instance_loss_with(preds, gts, matched, instance_overlap_hard)
}

fn instance_loss_with(
    preds: &[Prediction],
    gts: &[GroundTruth],
    matched: &[usize],
    overlap: impl Fn(&[f64], &BinaryMask) -> Result<f64, LossError>,
) -> Result<f64, LossError> {
    let Some(first) = gts.first() else {
        return Ok(0.0);
    };
    let masks: Vec<BinaryMask> = gts.iter().map(|g| g.mask.clone()).collect();
    let union = union_of(first.mask.height(), first.mask.width(), &masks)?;
    let mut is_matched = vec![false; preds.len()];
    for &m in matched {
        is_matched[m] = true;
    }
    let mut sum = 0.0;
    for (i, pred) in preds.iter().enumerate() {
        if !is_matched[i] {
            sum += overlap(&pred.mask_probs, &union)?;
        }
    }
    Ok(sum)
}

/// Per-term breakdown of the full objective. `total` is always exactly
/// `seg + lambda_cls * cls + lambda_ins * ins`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub seg: f64,
    pub cls: f64,
    pub ins: f64,
    pub total: f64,
}

/// Evaluate the full objective. Returns the breakdown and the assignment
/// of ground truths to predictions.
pub fn total_loss(
    preds: &[Prediction],
    gts: &[GroundTruth],
    silent_labels: &[usize],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<usize>), LossError> {
    cfg.validate()?;
    validate_frame(preds, gts, silent_labels)?;
    let assignment = match_predictions(preds, gts, cfg)?;
    let mut seg = 0.0;
    for (gt, &pred_idx) in gts.iter().zip(&assignment) {
        seg += pair_cost(&preds[pred_idx], gt, cfg)?;
    }
    let cls = classification_loss(preds, silent_labels, &assignment, cfg.silent_threshold);
    let ins = instance_loss_soft(preds, gts, &assignment)?;
    let total = seg + cfg.lambda_cls * cls + cfg.lambda_ins * ins;
    Ok((LossBreakdown { seg, cls, ins, total }, assignment))
}

/// Cross-check prediction shapes, probability ranges, and label ranges.
pub fn validate_frame(
    preds: &[Prediction],
    gts: &[GroundTruth],
    silent_labels: &[usize],
) -> Result<(), LossError> {
    let Some(first_pred) = preds.first() else {
        if gts.is_empty() {
            return Ok(());
        }
        return Err(LossError::TooFewPredictions {
            got: 0,
            expected: gts.len(),
        });
    };
    let classes_len = first_pred.class_probs.len();
    if classes_len < 2 {
        return Err(LossError::Config(
            "predictions need at least one object class plus background".to_string(),
        ));
    }
    let pixels = first_pred.mask_probs.len();
    for (i, pred) in preds.iter().enumerate() {
        if pred.class_probs.len() != classes_len {
            return Err(LossError::ClassProbsLength {
                index: i,
                got: pred.class_probs.len(),
                expected: classes_len,
            });
        }
        pred.validate(i, pixels)?;
    }
    let num_classes = classes_len - 1;
    for (i, gt) in gts.iter().enumerate() {
        if gt.class_id >= num_classes {
            return Err(LossError::ClassIdRange {
                index: i,
                class_id: gt.class_id,
                num_classes,
            });
        }
        if gt.mask.pixel_count() != pixels {
            return Err(LossError::MaskProbsLength {
                index: i,
                got: pixels,
                expected: gt.mask.pixel_count(),
            });
        }
        if !gt.mask.same_dims(&gts[0].mask) {
            return Err(MaskError::DimensionMismatch(
                gts[0].mask.height(),
                gts[0].mask.width(),
                gt.mask.height(),
                gt.mask.width(),
            )
            .into());
        }
    }
    for &label in silent_labels {
        if label >= num_classes {
            return Err(LossError::SilentLabelRange {
                label,
                num_classes,
            });
        }
    }
    Ok(())
}

/// One gradient-checkable loss instance.
#[derive(Debug)]
pub enum GradCheckCase<'a> {
    Focal {
        mask_probs: &'a [f64],
        gt: &'a BinaryMask,
        gamma: f64,
        alpha: f64,
    },
    Dice {
        mask_probs: &'a [f64],
        gt: &'a BinaryMask,
        smooth: f64,
    },
    CrossEntropy {
        class_probs: &'a [f64],
        class_index: usize,
    },
    InstanceOverlapSoft {
        mask_probs: &'a [f64],
        union: &'a BinaryMask,
    },
}

/// Compare the analytic gradient against central finite differences over
/// every input probability; returns the maximum relative error.
pub fn finite_diff_check(case: &GradCheckCase<'_>, step: f64) -> Result<f64, LossError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(LossError::InvalidStep(step));
    }
    let (base, analytic): (Vec<f64>, Vec<f64>) = match case {
        GradCheckCase::Focal {
            mask_probs,
            gt,
            gamma,
            alpha,
        } => (
            mask_probs.to_vec(),
            focal_grad(mask_probs, gt, *gamma, *alpha)?,
        ),
        GradCheckCase::Dice {
            mask_probs,
            gt,
            smooth,
        } => (mask_probs.to_vec(), dice_grad(mask_probs, gt, *smooth)?),
        GradCheckCase::CrossEntropy {
            class_probs,
            class_index,
        } => (
            class_probs.to_vec(),
            cross_entropy_grad(class_probs, *class_index)?,
        ),
        GradCheckCase::InstanceOverlapSoft { mask_probs, union } => (
            mask_probs.to_vec(),
            instance_overlap_soft_grad(mask_probs, union)?,
        ),
    };

    let eval = |x: &[f64]| -> Result<f64, LossError> {
        match case {
            GradCheckCase::Focal { gt, gamma, alpha, .. } => focal_loss(x, gt, *gamma, *alpha),
            GradCheckCase::Dice { gt, smooth, .. } => dice_loss(x, gt, *smooth),
            GradCheckCase::CrossEntropy { class_index, .. } => cross_entropy(x, *class_index),
            GradCheckCase::InstanceOverlapSoft { union, .. } => instance_overlap_soft(x, union),
        }
    };

    let mut x = base.clone();
    let mut max_err = 0.0f64;
    for i in 0..x.len() {
        x[i] = base[i] + step;
        let plus = eval(&x)?;
        x[i] = base[i] - step;
        let minus = eval(&x)?;
        x[i] = base[i];
        let numeric = (plus - minus) / (2.0 * step);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(LossError::NonFinite("finite-difference check"));
        }
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checker_mask(h: u32, w: u32) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| (r + c) % 2 == 0).unwrap()
    }

    #[test]
    fn focal_perfect_prediction_is_near_zero() {
        let gt = checker_mask(4, 4);
        let probs: Vec<f64> = gt.pixels().map(|g| if g { 1.0 } else { 0.0 }).collect();
        let loss = focal_loss(&probs, &gt, 2.0, 0.25).unwrap();
        assert!(loss >= 0.0 && loss < 1e-6, "loss = {loss}");
    }

    #[test]
    fn focal_uniform_half_closed_form() {
        // gt all ones, probs all 0.5: per pixel 0.25 * 0.25 * ln 2
        let gt = BinaryMask::from_fn(4, 4, |_, _| true).unwrap();
        let probs = vec![0.5; 16];
        let loss = focal_loss(&probs, &gt, 2.0, 0.25).unwrap();
        let expected = 0.25 * 0.25 * 2.0f64.ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.043321).abs() < 1e-6);
    }

    #[test]
    fn dice_perfect_no_smoothing_is_near_zero() {
        let gt = checker_mask(4, 4);
        let probs: Vec<f64> = gt.pixels().map(|g| if g { 1.0 } else { 0.0 }).collect();
        let loss = dice_loss(&probs, &gt, 0.0).unwrap();
        assert!(loss.abs() < 1e-6, "loss = {loss}");
    }

    #[test]
    fn dice_all_zero_prediction_formula() {
        let gt = checker_mask(4, 4); // 8 object pixels
        let probs = vec![0.0; 16];
        let loss = dice_loss(&probs, &gt, 1.0).unwrap();
        let expected = 1.0 - 2.0 / (8.0 + 1.0 + 1.0);
        assert!((loss - expected).abs() < 1e-5, "loss = {loss}");
    }

    #[test]
    fn dice_bounded_in_unit_interval() {
        let gt = checker_mask(3, 3);
        for p in [0.0, 0.3, 0.9, 1.0] {
            let loss = dice_loss(&vec![p; 9], &gt, 1.0).unwrap();
            assert!((0.0..=1.0).contains(&loss));
        }
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), -(1.0f64 - PROB_CLAMP).ln());
        let half = cross_entropy(&[0.5, 0.5], 0).unwrap();
        assert!((half - 2.0f64.ln()).abs() < 1e-12);
        assert!(matches!(
            cross_entropy(&[1.0], 3),
            Err(LossError::ClassIndexRange { .. })
        ));
    }

    #[test]
    fn overlap_hard_extremes() {
        let gt = checker_mask(4, 4);
        let disjoint: Vec<f64> = gt.pixels().map(|g| if g { 0.0 } else { 1.0 }).collect();
        assert_eq!(instance_overlap_hard(&disjoint, &gt).unwrap(), 0.0);
        let equal: Vec<f64> = gt.pixels().map(|g| if g { 1.0 } else { 0.0 }).collect();
        assert_eq!(instance_overlap_hard(&equal, &gt).unwrap(), 1.0);
    }

    #[test]
    fn overlap_soft_zero_denominator() {
        let empty = BinaryMask::zeros(2, 2).unwrap();
        assert_eq!(instance_overlap_soft(&[0.0; 4], &empty).unwrap(), 0.0);
    }

    fn grad_check_inputs(n: usize, seed: u64) -> Vec<f64> {
        // deterministic "random" interior probabilities
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                0.05 + 0.9 * ((state >> 11) as f64 / (1u64 << 53) as f64)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let gt = checker_mask(8, 8);
        let probs = grad_check_inputs(64, 7);
        for case in [
            GradCheckCase::Focal {
                mask_probs: &probs,
                gt: &gt,
                gamma: 2.0,
                alpha: 0.25,
            },
            GradCheckCase::Dice {
                mask_probs: &probs,
                gt: &gt,
                smooth: 1.0,
            },
            GradCheckCase::InstanceOverlapSoft {
                mask_probs: &probs,
                union: &gt,
            },
        ] {
            let err = finite_diff_check(&case, 1e-5).unwrap();
            assert!(err < 1e-4, "{case:?}: relative error {err}");
        }
        let class_probs = [0.3, 0.25, 0.25, 0.2];
        let err = finite_diff_check(
            &GradCheckCase::CrossEntropy {
                class_probs: &class_probs,
                class_index: 1,
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4);
    }

    #[test]
    fn zero_step_is_an_error() {
        let gt = checker_mask(2, 2);
        let probs = vec![0.5; 4];
        assert_eq!(
            finite_diff_check(
                &GradCheckCase::Dice {
                    mask_probs: &probs,
                    gt: &gt,
                    smooth: 1.0
                },
                0.0
            )
            .unwrap_err(),
            LossError::InvalidStep(0.0)
        );
    }

    fn pred(class_probs: Vec<f64>, mask_probs: Vec<f64>) -> Prediction {
        Prediction {
            class_probs,
            mask_probs,
        }
    }

    #[test]
    fn matching_prefers_exact_reproduction() {
        let gt_mask = checker_mask(4, 4);
        let gt = GroundTruth {
            class_id: 0,
            mask: gt_mask.clone(),
        };
        let exact: Vec<f64> = gt_mask.pixels().map(|g| if g { 1.0 } else { 0.0 }).collect();
        let preds = vec![
            pred(vec![0.0, 0.0, 1.0], vec![0.5; 16]),
            pred(vec![1.0, 0.0, 0.0], exact),
        ];
        let cfg = LossConfig::default();
        let assignment = match_predictions(&preds, &[gt], &cfg).unwrap();
        assert_eq!(assignment, vec![1]);
    }

    #[test]
    fn matching_single_pair_forced() {
        let gt = GroundTruth {
            class_id: 0,
            mask: checker_mask(2, 2),
        };
        let preds = vec![pred(vec![0.5, 0.5], vec![0.5; 4])];
        let assignment = match_predictions(&preds, &[gt], &LossConfig::default()).unwrap();
        assert_eq!(assignment, vec![0]);
    }

    #[test]
    fn matching_requires_enough_predictions() {
        let gts = vec![
            GroundTruth {
                class_id: 0,
                mask: checker_mask(2, 2),
            };
            2
        ];
        let preds = vec![pred(vec![0.5, 0.5], vec![0.5; 4])];
        assert_eq!(
            match_predictions(&preds, &gts, &LossConfig::default()).unwrap_err(),
            LossError::TooFewPredictions {
                got: 1,
                expected: 2
            }
        );
    }

    #[test]
    fn classification_loss_cases() {
        // all matched: empty sum
        let preds = vec![pred(vec![0.5, 0.5], vec![0.5; 4])];
        assert_eq!(classification_loss(&preds, &[], &[0], 0.5), 0.0);

        // unmatched, fully background: -log(1 - clamp) ~ 0
        let preds = vec![pred(vec![0.0, 1.0], vec![0.5; 4])];
        let loss = classification_loss(&preds, &[], &[], 0.5);
        assert!(loss < 1e-6);

        // unmatched, background prob 0.5, not silent-aligned: ln 2
        let preds = vec![pred(vec![0.5, 0.5], vec![0.5; 4])];
        let loss = classification_loss(&preds, &[], &[], 0.9);
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);

        // aligned with a silent label: excluded from the sum
        let preds = vec![pred(vec![0.6, 0.4], vec![0.5; 4])];
        assert_eq!(classification_loss(&preds, &[0], &[], 0.5), 0.0);
    }

    #[test]
    fn silent_labels_never_increase_classification_loss() {
        let preds = vec![
            pred(vec![0.6, 0.1, 0.3], vec![0.5; 4]),
            pred(vec![0.1, 0.7, 0.2], vec![0.5; 4]),
        ];
        let base = classification_loss(&preds, &[], &[], 0.5);
        let one = classification_loss(&preds, &[0], &[], 0.5);
        let both = classification_loss(&preds, &[0, 1], &[], 0.5);
        assert!(one <= base);
        assert!(both <= one);
    }

    #[test]
    fn total_loss_weight_zeroing_and_identity() {
        let gt = GroundTruth {
            class_id: 0,
            mask: checker_mask(4, 4),
        };
        let preds = vec![
            pred(vec![0.7, 0.2, 0.1], grad_check_inputs(16, 3)),
            pred(vec![0.1, 0.1, 0.8], grad_check_inputs(16, 4)),
        ];
        let mut cfg = LossConfig::default();
        cfg.lambda_cls = 0.0;
        cfg.lambda_ins = 0.0;
        let (breakdown, _) = total_loss(&preds, std::slice::from_ref(&gt), &[], &cfg).unwrap();
        assert_eq!(breakdown.total, breakdown.seg);

        let cfg = LossConfig::default();
        let (b, _) = total_loss(&preds, &[gt], &[1], &cfg).unwrap();
        assert_eq!(b.total, b.seg + cfg.lambda_cls * b.cls + cfg.lambda_ins * b.ins);
    }

    #[test]
    fn total_loss_perfect_predictions_vanish() {
        let gt_mask = checker_mask(4, 4);
        let exact: Vec<f64> = gt_mask.pixels().map(|g| if g { 1.0 } else { 0.0 }).collect();
        let gts = vec![GroundTruth {
            class_id: 1,
            mask: gt_mask,
        }];
        let preds = vec![
            pred(vec![0.0, 1.0, 0.0], exact),
            pred(vec![0.0, 0.0, 1.0], vec![0.0; 16]),
        ];
        let (b, _) = total_loss(&preds, &gts, &[], &LossConfig::default()).unwrap();
        assert!(b.total.abs() < 1e-5, "total = {}", b.total);
    }

    #[test]
    fn empty_ground_truth_frame() {
        let preds = vec![pred(vec![0.2, 0.8], vec![0.3; 4])];
        let (b, assignment) = total_loss(&preds, &[], &[], &LossConfig::default()).unwrap();
        assert!(assignment.is_empty());
        assert_eq!(b.seg, 0.0);
        assert_eq!(b.ins, 0.0);
        assert!(b.cls > 0.0);
    }

    proptest! {
        #[test]
        fn losses_nonnegative_and_finite(
            probs in proptest::collection::vec(0.0f64..=1.0, 16),
            bits in proptest::collection::vec(any::<bool>(), 16),
        ) {
            let bytes: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
            let gt = BinaryMask::from_pixels(4, 4, &bytes).unwrap();
            let f = focal_loss(&probs, &gt, 2.0, 0.25).unwrap();
            let d = dice_loss(&probs, &gt, 1.0).unwrap();
            let o = instance_overlap_soft(&probs, &gt).unwrap();
            prop_assert!(f.is_finite() && f >= 0.0);
            prop_assert!(d.is_finite() && (0.0..=1.0).contains(&d));
            prop_assert!(o.is_finite() && (0.0..=1.0).contains(&o));
        }

        #[test]
        fn matching_cost_is_permutation_invariant(
            perm_seed in any::<u64>(),
            flat in proptest::collection::vec(0.05f64..0.95, 3 * 16),
        ) {
            let gt = GroundTruth { class_id: 0, mask: checker_mask(4, 4) };
            let mut preds: Vec<Prediction> = flat
                .chunks(16)
                .map(|c| pred(vec![0.4, 0.3, 0.3], c.to_vec()))
                .collect();
            let cfg = LossConfig::default();
            let gts = vec![gt];
            let (a, _) = total_loss(&preds, &gts, &[0], &cfg).unwrap();

            // Fisher-Yates with a toy LCG
            let mut state = perm_seed;
            for i in (1..preds.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                preds.swap(i, (state >> 33) as usize % (i + 1));
            }
            let (b, _) = total_loss(&preds, &gts, &[0], &cfg).unwrap();
            prop_assert!((a.total - b.total).abs() <= 1e-9 * a.total.abs().max(1.0));
        }
    }
}
