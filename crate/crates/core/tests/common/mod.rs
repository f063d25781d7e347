//! Shared random-fixture generators for the integration suites.
#![allow(dead_code)] // each suite uses a different subset

use avseg_core::instance::ScoredInstance;
use avseg_core::loss::{GroundTruth, Prediction};
use avseg_core::mask::BinaryMask;
use avseg_core::tree::{AudioVisualTree, TagScores};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(rel)
}

/// Random well-formed tree: 2-5 groups, 4-12 categories, 1-3 tags each.
pub fn random_tree(rng: &mut ChaCha8Rng) -> AudioVisualTree {
    let n_groups = rng.random_range(2..=5);
    let n_categories = rng.random_range(4..=12);
    let mut text = String::new();
    for g in 0..n_groups {
        text.push_str(&format!("group g{g}\n"));
    }
    for c in 0..n_categories {
        let g = rng.random_range(0..n_groups);
        text.push_str(&format!("category c{c} -> g{g}\n"));
    }
    let mut tag_id = 0;
    for c in 0..n_categories {
        for _ in 0..rng.random_range(1..=3) {
            text.push_str(&format!("tag t{tag_id} -> c{c}\n"));
            tag_id += 1;
        }
    }
    AudioVisualTree::parse(&text).expect("generated tree is well-formed")
}

pub fn random_mask(rng: &mut ChaCha8Rng, height: u32, width: u32) -> BinaryMask {
    let pixels: Vec<u8> = (0..height * width)
        .map(|_| rng.random_bool(0.4) as u8)
        .collect();
    BinaryMask::from_pixels(height, width, &pixels).expect("valid dimensions")
}

/// Confidences quantized to multiples of 1/256 so sums stay exact in f64.
pub fn dyadic(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0..=256) as f64 / 256.0
}

/// Random scores over a subset of the tree's tags (dyadic values); with
/// `extra_unknown`, adds tags the tree does not know.
pub fn random_tag_scores(
    rng: &mut ChaCha8Rng,
    tree: &AudioVisualTree,
    extra_unknown: usize,
) -> TagScores {
    let mut scores = TagScores::new();
    let tags: Vec<String> = tree.tag_names().map(String::from).collect();
    for tag in &tags {
        if rng.random_bool(0.5) {
            scores.set(tag.clone(), dyadic(rng)).unwrap();
        }
    }
    for i in 0..extra_unknown {
        scores.set(format!("unknown-{i}"), dyadic(rng)).unwrap();
    }
    scores
}

/// Random instances labelled from the tree's category layer (sometimes an
/// out-of-tree label), sharing `height` x `width`.
pub fn random_instances(
    rng: &mut ChaCha8Rng,
    tree: &AudioVisualTree,
    height: u32,
    width: u32,
    max_count: usize,
) -> Vec<ScoredInstance> {
    let categories: Vec<String> = tree.category_names().map(String::from).collect();
    let count = rng.random_range(0..=max_count);
    (0..count)
        .map(|_| {
            let label = if rng.random_bool(0.9) {
                categories[rng.random_range(0..categories.len())].clone()
            } else {
                "offscreen-object".to_string()
            };
            ScoredInstance::new(label, dyadic(rng), random_mask(rng, height, width))
                .expect("dyadic confidence is in range")
        })
        .collect()
}

/// Interior probabilities, away from the clamp boundaries and min/max
/// crossings, for gradient checks.
pub fn interior_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.05..0.95)).collect()
}

/// Random normalized class distribution with interior entries.
pub fn random_class_probs(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(0.1..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

pub fn random_prediction(rng: &mut ChaCha8Rng, num_classes: usize, pixels: usize) -> Prediction {
    Prediction {
        class_probs: random_class_probs(rng, num_classes + 1),
        mask_probs: interior_probs(rng, pixels),
    }
}

pub fn random_ground_truth(
    rng: &mut ChaCha8Rng,
    num_classes: usize,
    height: u32,
    width: u32,
) -> GroundTruth {
    GroundTruth {
        class_id: rng.random_range(0..num_classes),
        mask: random_mask(rng, height, width),
    }
}
