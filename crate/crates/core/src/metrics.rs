//! Evaluation metrics: Jaccard index and F-score over binary masks,
//! per frame and dataset-averaged.

use crate::mask::{BinaryMask, MaskError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("beta^2 must be non-negative, got {0}")]
    NegativeBeta2(f64),
    #[error("cannot aggregate an empty frame list")]
    EmptyDataset,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Pixel counts and derived scores for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameEval {
    pub j: f64,
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// `(1 + beta2) * p * r / (beta2 * p + r)`, 0 when both p and r are 0.
pub fn f_measure(precision: f64, recall: f64, beta2: f64) -> f64 {
    if precision == 0.0 && recall == 0.0 {
        return 0.0;
    }
    (1.0 + beta2) * precision * recall / (beta2 * precision + recall)
}

/// Intersection over union; both masks empty counts as perfect agreement
/// (1.0), unlike the filtering-side convention.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MaskError> {
    let union = pred.union_count(gt)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(pred.intersection_count(gt)? as f64 / union as f64)
}

/// F-score at the given beta^2; both masks empty scores 1.0.
pub fn fscore(pred: &BinaryMask, gt: &BinaryMask, beta2: f64) -> Result<f64, MetricsError> {
    Ok(evaluate_frame(pred, gt, beta2)?.f)
}

/// Full per-frame evaluation from exact pixel counts.
pub fn evaluate_frame(
    pred: &BinaryMask,
    gt: &BinaryMask,
    beta2: f64,
) -> Result<FrameEval, MetricsError> {
    if beta2 < 0.0 || !beta2.is_finite() {
        return Err(MetricsError::NegativeBeta2(beta2));
    }
    let tp = pred.intersection_count(gt)?;
    let fp = pred.difference_count(gt)?;
    let fn_ = gt.difference_count(pred)?;
    if tp == 0 && fp == 0 && fn_ == 0 {
        // both empty: perfect agreement on absence
        return Ok(FrameEval {
            j: 1.0,
            f: 1.0,
            precision: 1.0,
            recall: 1.0,
            tp,
            fp,
            fn_,
        });
    }
    let j = tp as f64 / (tp + fp + fn_) as f64;
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Ok(FrameEval {
        j,
        f: f_measure(precision, recall, beta2),
        precision,
        recall,
        tp,
        fp,
        fn_,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub mean_j: f64,
    pub mean_f: f64,
    pub frames: Vec<FrameEval>,
}

/// Unweighted frame mean of J and F.
pub fn evaluate_dataset(
    frames: &[(BinaryMask, BinaryMask)],
    beta2: f64,
) -> Result<DatasetSummary, MetricsError> {
    if frames.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let evals: Vec<FrameEval> = frames
        .iter()
        .map(|(pred, gt)| evaluate_frame(pred, gt, beta2))
        .collect::<Result<_, _>>()?;
    let n = evals.len() as f64;
    Ok(DatasetSummary {
        mean_j: evals.iter().map(|e| e.j).sum::<f64>() / n,
        mean_f: evals.iter().map(|e| e.f).sum::<f64>() / n,
        frames: evals,
    })
}
