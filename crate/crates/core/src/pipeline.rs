//! File-level orchestration: the end-to-end integration flow, the noise
//! injection harness, and front-ends for evaluation, loss checking, and
//! alignment.
//!
//! All JSON output is canonical: object keys sorted (the default
//! `serde_json` map) and floats rounded to 9 significant digits, so equal
//! inputs produce byte-identical files.

use crate::align::{canonicalize_nouns, silent_labels, AlignError, EmbeddingTable};
use crate::instance::{two_phase_filter, InstanceError, InstanceFile, ScoredInstance};
use crate::integrate::{integrate, IntegrationResult, MatchKind};
use crate::loss::{
    finite_diff_check, total_loss, GradCheckCase, GroundTruth, LossConfig, LossError, Prediction,
};
use crate::mask::{union_of, BinaryMask, MaskError};
use crate::metrics::{evaluate_frame, FrameEval, MetricsError};
use crate::tree::{aggregate_tag_scores, AudioVisualTree, TagScores, TreeError};
use serde::Deserialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("{0}")]
    Validation(String),
}

impl PipelineError {
    /// 2 for I/O failures, 1 for anything the inputs got wrong.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io { .. } => 2,
            _ => 1,
        }
    }

    fn data(path: &Path, message: impl ToString) -> Self {
        PipelineError::Data {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

/// Thresholds shared across the pipeline subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Per-tag confidence gate before aggregation.
    pub tau_tag: f64,
    /// IoU gate of the two-phase filter.
    pub iou_threshold: f64,
    /// Alignment gate for silent-object exclusion in the objective.
    pub silent_threshold: f64,
    /// F-score beta^2.
    pub beta2: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau_tag: 0.1,
            iou_threshold: 0.5,
            silent_threshold: 0.5,
            beta2: 0.3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [
            ("tau-tag", self.tau_tag),
            ("iou-threshold", self.iou_threshold),
            ("silent threshold", self.silent_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PipelineError::Validation(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if self.beta2 < 0.0 || !self.beta2.is_finite() {
            return Err(PipelineError::Validation(format!(
                "beta2 must be non-negative, got {}",
                self.beta2
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------
// canonical JSON

/// Round to 9 significant digits; keeps diffs reproducible across runs.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("scientific float round-trips")
}

fn num(x: f64) -> Value {
    Value::from(round_sig(x))
}

/// Canonical rendering: sorted keys, pretty-printed, trailing newline.
pub fn to_canonical_string(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values serialize");
    s.push('\n');
    s
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), PipelineError> {
    std::fs::write(path, to_canonical_string(value)).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------
// loaders

fn read_to_string(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_tree(path: &Path) -> Result<AudioVisualTree, PipelineError> {
    let text = read_to_string(path)?;
    AudioVisualTree::parse(&text).map_err(|e| PipelineError::data(path, e))
}

pub fn load_tag_scores(path: &Path) -> Result<TagScores, PipelineError> {
    let text = read_to_string(path)?;
    let raw: BTreeMap<String, f64> =
        serde_json::from_str(&text).map_err(|source| PipelineError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    TagScores::from_entries(raw).map_err(|e| PipelineError::data(path, e))
}

pub fn load_instance_file(path: &Path) -> Result<InstanceFile, PipelineError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, PipelineError> {
    let text = read_to_string(path)?;
    EmbeddingTable::parse(&text).map_err(|e| PipelineError::data(path, e))
}

pub fn load_word_list(path: &Path) -> Result<Vec<String>, PipelineError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------
// integrate

/// Result of running one frame through filter -> aggregate -> integrate.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationOutput {
    pub height: u32,
    pub width: u32,
    pub result: IntegrationResult,
    /// Tags the tree does not know; diagnostics only, never serialized
    /// into the result file.
    pub unknown_tags: Vec<String>,
}

/// Pure per-frame integration over already-loaded inputs.
pub fn integrate_frame(
    tree: &AudioVisualTree,
    instances: &InstanceFile,
    tags: &TagScores,
    cfg: &PipelineConfig,
) -> Result<IntegrationOutput, PipelineError> {
    cfg.validate()?;
    let candidates = instances
        .decode()
        .map_err(|e: InstanceError| PipelineError::Validation(e.to_string()))?;
    let filtered = two_phase_filter(&candidates, cfg.iou_threshold)
        .map_err(|e| PipelineError::Validation(e.to_string()))?;
    let category_scores = aggregate_tag_scores(tree, tags, cfg.tau_tag)
        .map_err(|e: TreeError| PipelineError::Validation(e.to_string()))?;
    let result = integrate(&filtered, &category_scores, tree);
    Ok(IntegrationOutput {
        height: instances.height,
        width: instances.width,
        result,
        unknown_tags: category_scores.unknown_tags().to_vec(),
    })
}

fn instances_to_json(instances: &[ScoredInstance]) -> Value {
    Value::Array(
        instances
            .iter()
            .map(|inst| {
                json!({
                    "label": inst.label,
                    "confidence": num(inst.confidence),
                    "mask_rle": inst.mask.to_run_lengths(),
                })
            })
            .collect(),
    )
}

/// The integration result file: dimensions, partition, and trace.
pub fn integration_to_json(output: &IntegrationOutput) -> Value {
    let trace: Vec<Value> = output
        .result
        .trace
        .iter()
        .map(|rec| {
            json!({
                "instance_label": rec.instance_label,
                "matched_category": rec.matched_category,
                "kind": match rec.kind {
                    MatchKind::Direct => "direct",
                    MatchKind::Sibling => "sibling",
                    MatchKind::None => "none",
                },
            })
        })
        .collect();
    json!({
        "height": output.height,
        "width": output.width,
        "sounding": instances_to_json(&output.result.sounding),
        "silent": instances_to_json(&output.result.silent),
        "trace": trace,
    })
}

/// File-level integration: load, run, and return the canonical JSON value.
pub fn run_integrate(
    tree: &AudioVisualTree,
    instances_path: &Path,
    tags_path: &Path,
    cfg: &PipelineConfig,
) -> Result<(Value, IntegrationOutput), PipelineError> {
    let instances = load_instance_file(instances_path)?;
    let tags = load_tag_scores(tags_path)?;
    let output = integrate_frame(tree, &instances, &tags, cfg)?;
    Ok((integration_to_json(&output), output))
}

// ---------------------------------------------------------------------
// noise injection

/// Overlay the spec's tag confidences on a base vector; everything else is
/// untouched.
pub fn inject_noise(tags: &TagScores, spec: &TagScores) -> TagScores {
    let mut merged = tags.clone();
    for (tag, confidence) in spec.iter() {
        merged
            .set(tag, confidence)
            .expect("both inputs already validated");
    }
    merged
}

/// Spec tags the tree does not know, for explicit-unknown gating.
pub fn unknown_spec_tags(tree: &AudioVisualTree, spec: &TagScores) -> Vec<String> {
    spec.iter()
        .filter(|(tag, _)| !tree.contains_tag(tag))
        .map(|(tag, _)| tag.to_string())
        .collect()
}

pub fn tag_scores_to_json(tags: &TagScores) -> Value {
    Value::Object(
        tags.iter()
            .map(|(tag, confidence)| (tag.to_string(), num(confidence)))
            .collect(),
    )
}

// ---------------------------------------------------------------------
// evaluation

/// Union of all instance masks in a file, the binary reduction used for
/// mask-level evaluation.
pub fn file_union_mask(file: &InstanceFile) -> Result<BinaryMask, PipelineError> {
    let instances = file
        .decode()
        .map_err(|e| PipelineError::Validation(e.to_string()))?;
    let masks: Vec<BinaryMask> = instances.into_iter().map(|i| i.mask).collect();
    union_of(file.height, file.width, &masks)
        .map_err(|e: MaskError| PipelineError::Validation(e.to_string()))
}

fn frame_eval_to_json(eval: &FrameEval) -> Value {
    json!({
        "j": num(eval.j),
        "f": num(eval.f),
        "precision": num(eval.precision),
        "recall": num(eval.recall),
        "tp": eval.tp,
        "fp": eval.fp,
        "fn": eval.fn_,
    })
}

fn union_by_label(file: &InstanceFile, label: &str) -> Result<BinaryMask, PipelineError> {
    let instances = file
        .decode()
        .map_err(|e| PipelineError::Validation(e.to_string()))?;
    let masks: Vec<BinaryMask> = instances
        .into_iter()
        .filter(|i| i.label == label)
        .map(|i| i.mask)
        .collect();
    union_of(file.height, file.width, &masks)
        .map_err(|e: MaskError| PipelineError::Validation(e.to_string()))
}

/// Evaluate one prediction file against one ground-truth file. With
/// `per_class`, a per-label breakdown over the union of label sets is
/// included.
pub fn run_eval_frame(
    pred_path: &Path,
    gt_path: &Path,
    beta2: f64,
    per_class: bool,
) -> Result<(Value, FrameEval), PipelineError> {
    let pred_file = load_instance_file(pred_path)?;
    let gt_file = load_instance_file(gt_path)?;
    let pred = file_union_mask(&pred_file)?;
    let gt = file_union_mask(&gt_file)?;
    let eval = evaluate_frame(&pred, &gt, beta2)
        .map_err(|e: MetricsError| PipelineError::Validation(e.to_string()))?;

    let mut value = frame_eval_to_json(&eval);
    if per_class {
        let mut labels: Vec<String> = pred_file
            .instances
            .iter()
            .chain(&gt_file.instances)
            .map(|r| r.label.clone())
            .collect();
        labels.sort();
        labels.dedup();
        let mut per_class_map = serde_json::Map::new();
        for label in labels {
            let p = union_by_label(&pred_file, &label)?;
            let g = union_by_label(&gt_file, &label)?;
            let e = evaluate_frame(&p, &g, beta2)
                .map_err(|e: MetricsError| PipelineError::Validation(e.to_string()))?;
            per_class_map.insert(label, frame_eval_to_json(&e));
        }
        value["per_class"] = Value::Object(per_class_map);
    }
    value["beta2"] = num(beta2);
    Ok((value, eval))
}

/// Evaluate directories paired by file name, reducing in sorted order.
pub fn run_eval_batch(
    pred_dir: &Path,
    gt_dir: &Path,
    beta2: f64,
) -> Result<Value, PipelineError> {
    let pairs = paired_files(pred_dir, gt_dir)?;
    if pairs.is_empty() {
        return Err(PipelineError::Validation(format!(
            "no JSON frame files found under {}",
            pred_dir.display()
        )));
    }
    let mut frames = Vec::new();
    let mut sum_j = 0.0;
    let mut sum_f = 0.0;
    for (name, pred_path, gt_path) in &pairs {
        let (mut value, eval) = run_eval_frame(pred_path, gt_path, beta2, false)?;
        value.as_object_mut().expect("frame eval is an object").remove("beta2");
        value["name"] = Value::from(name.clone());
        sum_j += eval.j;
        sum_f += eval.f;
        frames.push(value);
    }
    let n = pairs.len() as f64;
    Ok(json!({
        "beta2": num(beta2),
        "mean_j": num(sum_j / n),
        "mean_f": num(sum_f / n),
        "frames": frames,
    }))
}

/// `.json` files present in `a`, paired with the same name under `b`.
pub fn paired_files(a: &Path, b: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, PipelineError> {
    let mut names: Vec<String> = Vec::new();
    let entries = std::fs::read_dir(a).map_err(|source| PipelineError::Io {
        path: a.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| PipelineError::Io {
            path: a.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "json") {
            names.push(
                path.file_name()
                    .expect("directory entries have names")
                    .to_string_lossy()
                    .into_owned(),
            );
        }
    }
    names.sort();
    let mut pairs = Vec::new();
    for name in names {
        let other = b.join(&name);
        if !other.exists() {
            return Err(PipelineError::Validation(format!(
                "{} has no counterpart under {}",
                name,
                b.display()
            )));
        }
        pairs.push((name.clone(), a.join(&name), other));
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------
// loss check

#[derive(Debug, Deserialize)]
pub struct LossFrameFile {
    pub height: u32,
    pub width: u32,
    pub num_classes: usize,
    pub predictions: Vec<PredictionRecord>,
    pub ground_truths: Vec<GroundTruthRecord>,
    #[serde(default)]
    pub silent_labels: Vec<usize>,
}

#[derive(Debug, Deserialize)]
pub struct PredictionRecord {
    pub class_probs: Vec<f64>,
    pub mask_probs: Vec<f64>,
}

#[derive(Debug, Deserialize)]
pub struct GroundTruthRecord {
    pub class_id: usize,
    pub mask_rle: Vec<u64>,
}

#[derive(Debug)]
pub struct LossFrame {
    pub predictions: Vec<Prediction>,
    pub ground_truths: Vec<GroundTruth>,
    pub silent_labels: Vec<usize>,
}

pub fn load_loss_frame(path: &Path) -> Result<LossFrame, PipelineError> {
    let text = read_to_string(path)?;
    let file: LossFrameFile = serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let pixels = file.height as usize * file.width as usize;
    let mut predictions = Vec::with_capacity(file.predictions.len());
    for (i, rec) in file.predictions.into_iter().enumerate() {
        if rec.class_probs.len() != file.num_classes + 1 {
            return Err(PipelineError::data(
                path,
                format!(
                    "predictions[{i}]: class_probs has {} entries, expected num_classes + 1 = {}",
                    rec.class_probs.len(),
                    file.num_classes + 1
                ),
            ));
        }
        let pred = Prediction {
            class_probs: rec.class_probs,
            mask_probs: rec.mask_probs,
        };
        pred.validate(i, pixels)
            .map_err(|e| PipelineError::data(path, e))?;
        predictions.push(pred);
    }
    let mut ground_truths = Vec::with_capacity(file.ground_truths.len());
    for (i, rec) in file.ground_truths.into_iter().enumerate() {
        if rec.class_id >= file.num_classes {
            return Err(PipelineError::data(
                path,
                format!(
                    "ground_truths[{i}]: class_id {} outside [0, {})",
                    rec.class_id, file.num_classes
                ),
            ));
        }
        let mask = BinaryMask::from_run_lengths(file.height, file.width, &rec.mask_rle)
            .map_err(|e| PipelineError::data(path, format!("ground_truths[{i}]: {e}")))?;
        ground_truths.push(GroundTruth {
            class_id: rec.class_id,
            mask,
        });
    }
    for &label in &file.silent_labels {
        if label >= file.num_classes {
            return Err(PipelineError::data(
                path,
                format!("silent label {label} outside [0, {})", file.num_classes),
            ));
        }
    }
    Ok(LossFrame {
        predictions,
        ground_truths,
        silent_labels: file.silent_labels,
    })
}

/// Run the objective plus per-term gradient checks on a frame.
///
/// Returns the report and whether every gradient check passed the
/// tolerance. Loss kinds without an applicable pair in the frame are
/// reported as null and do not fail the check.
pub fn run_losscheck(
    frame: &LossFrame,
    loss_cfg: &LossConfig,
    step: f64,
    tolerance: f64,
) -> Result<(Value, bool), PipelineError> {
    let (breakdown, assignment) = total_loss(
        &frame.predictions,
        &frame.ground_truths,
        &frame.silent_labels,
        loss_cfg,
    )
    .map_err(|e: LossError| PipelineError::Validation(e.to_string()))?;

    let mut focal_err: Option<f64> = None;
    let mut dice_err: Option<f64> = None;
    let mut ce_err: Option<f64> = None;
    let mut overlap_err: Option<f64> = None;
    let track = |slot: &mut Option<f64>, err: f64| {
        *slot = Some(slot.map_or(err, |prev| prev.max(err)));
    };

    for (gt, &pred_idx) in frame.ground_truths.iter().zip(&assignment) {
        let pred = &frame.predictions[pred_idx];
        let err = finite_diff_check(
            &GradCheckCase::Focal {
                mask_probs: &pred.mask_probs,
                gt: &gt.mask,
                gamma: loss_cfg.focal_gamma,
                alpha: loss_cfg.focal_alpha,
            },
            step,
        )
        .map_err(|e| PipelineError::Validation(e.to_string()))?;
        track(&mut focal_err, err);
        let err = finite_diff_check(
            &GradCheckCase::Dice {
                mask_probs: &pred.mask_probs,
                gt: &gt.mask,
                smooth: crate::loss::DICE_SMOOTH,
            },
            step,
        )
        .map_err(|e| PipelineError::Validation(e.to_string()))?;
        track(&mut dice_err, err);
        let err = finite_diff_check(
            &GradCheckCase::CrossEntropy {
                class_probs: &pred.class_probs,
                class_index: gt.class_id,
            },
            step,
        )
        .map_err(|e| PipelineError::Validation(e.to_string()))?;
        track(&mut ce_err, err);
    }

    if let Some(first) = frame.ground_truths.first() {
        let masks: Vec<BinaryMask> = frame.ground_truths.iter().map(|g| g.mask.clone()).collect();
        let union = union_of(first.mask.height(), first.mask.width(), &masks)
            .map_err(|e| PipelineError::Validation(e.to_string()))?;
        for (i, pred) in frame.predictions.iter().enumerate() {
            if assignment.contains(&i) {
                continue;
            }
            let err = finite_diff_check(
                &GradCheckCase::InstanceOverlapSoft {
                    mask_probs: &pred.mask_probs,
                    union: &union,
                },
                step,
            )
            .map_err(|e| PipelineError::Validation(e.to_string()))?;
            track(&mut overlap_err, err);
        }
    }

    let errors = [focal_err, dice_err, ce_err, overlap_err];
    let passed = errors.iter().flatten().all(|&e| e < tolerance);
    let max_err = errors.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let opt = |e: Option<f64>| e.map_or(Value::Null, num);

    let report = json!({
        "breakdown": {
            "l_seg": num(breakdown.seg),
            "l_cls": num(breakdown.cls),
            "l_ins": num(breakdown.ins),
            "total": num(breakdown.total),
        },
        "assignment": assignment,
        "gradient_checks": {
            "focal": opt(focal_err),
            "dice": opt(dice_err),
            "cross_entropy": opt(ce_err),
            "instance_overlap": opt(overlap_err),
        },
        "max_relative_error": num(max_err),
        "step": num(step),
        "tolerance": num(tolerance),
        "passed": passed,
    });
    Ok((report, passed))
}

// ---------------------------------------------------------------------
// alignment

/// Canonicalize nouns against a category vocabulary and subtract the
/// sounding labels.
pub fn run_align(
    table: &EmbeddingTable,
    nouns: &[String],
    categories: &[String],
    sounding: &[String],
    min_similarity: Option<f64>,
) -> Result<Value, PipelineError> {
    let canonical = canonicalize_nouns(nouns, categories, table, min_similarity)
        .map_err(|e: AlignError| PipelineError::Validation(e.to_string()))?;
    let silent = silent_labels(&canonical.nouns, sounding);
    Ok(json!({
        "canonical": canonical.nouns,
        "dropped": canonical.dropped,
        "silent": silent,
    }))
}
