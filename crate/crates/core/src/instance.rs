//! Scored instance masks and the two-phase filter that reduces a raw
//! prediction set to the potential-sounding object set.

use crate::mask::{iou, BinaryMask, MaskError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("instance {label:?} has confidence {value} outside [0, 1]")]
    ConfidenceRange { label: String, value: f64 },
    #[error("IoU threshold {0} outside [0, 1]")]
    ThresholdRange(f64),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// A candidate object: category label, confidence, and binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInstance {
    pub label: String,
    pub confidence: f64,
    pub mask: BinaryMask,
}

impl ScoredInstance {
    pub fn new(
        label: impl Into<String>,
        confidence: f64,
        mask: BinaryMask,
    ) -> Result<Self, InstanceError> {
        let label = label.into();
        if !(0.0..=1.0).contains(&confidence) {
            return Err(InstanceError::ConfidenceRange {
                label,
                value: confidence,
            });
        }
        Ok(Self {
            label,
            confidence,
            mask,
        })
    }
}

/// JSON schema for an instance file: frame dimensions plus RLE-encoded
/// instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub height: u32,
    pub width: u32,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub label: String,
    pub confidence: f64,
    pub mask_rle: Vec<u64>,
}

impl InstanceFile {
    pub fn decode(&self) -> Result<Vec<ScoredInstance>, InstanceError> {
        self.instances
            .iter()
            .map(|rec| {
                let mask = BinaryMask::from_run_lengths(self.height, self.width, &rec.mask_rle)?;
                ScoredInstance::new(rec.label.clone(), rec.confidence, mask)
            })
            .collect()
    }

    pub fn encode(height: u32, width: u32, instances: &[ScoredInstance]) -> Self {
        Self {
            height,
            width,
            instances: instances
                .iter()
                .map(|inst| InstanceRecord {
                    label: inst.label.clone(),
                    confidence: inst.confidence,
                    mask_rle: inst.mask.to_run_lengths(),
                })
                .collect(),
        }
    }
}

/// Candidate priority: descending confidence, then label, then input index.
fn priority_order(candidates: &[ScoredInstance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .confidence
            .partial_cmp(&candidates[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| candidates[a].label.cmp(&candidates[b].label))
            .then_with(|| a.cmp(&b))
    });
    order
}

/// Two-phase filter. Phase one keeps the single highest-confidence
/// candidate per label; phase two re-admits remaining candidates, in
/// priority order, whose IoU with every mask selected so far stays
/// strictly below `threshold`.
///
/// Candidates carrying a background label are expected to be excluded by
/// the caller. The output is sorted by the same priority order.
pub fn two_phase_filter(
    candidates: &[ScoredInstance],
    threshold: f64,
) -> Result<Vec<ScoredInstance>, InstanceError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(InstanceError::ThresholdRange(threshold));
    }
    for c in candidates.iter().skip(1) {
        if !c.mask.same_dims(&candidates[0].mask) {
            return Err(MaskError::DimensionMismatch(
                candidates[0].mask.height(),
                candidates[0].mask.width(),
                c.mask.height(),
                c.mask.width(),
            )
            .into());
        }
    }

    let order = priority_order(candidates);

    // Phase 1: first candidate in priority order per distinct label.
    let mut selected: Vec<usize> = Vec::new();
    let mut seen_labels: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for &i in &order {
        if seen_labels.insert(candidates[i].label.as_str()) {
            selected.push(i);
        }
    }

    // Phase 2: remaining candidates gated by IoU against everything
    // selected so far.
    for &i in &order {
        if selected.contains(&i) {
            continue;
        }
        let mut admit = true;
        for &s in &selected {
            if iou(&candidates[i].mask, &candidates[s].mask)? >= threshold {
                admit = false;
                break;
            }
        }
        if admit {
            selected.push(i);
        }
    }

    let rank: std::collections::HashMap<usize, usize> =
        order.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    selected.sort_by_key(|i| rank[i]);
    Ok(selected.into_iter().map(|i| candidates[i].clone()).collect())
}
