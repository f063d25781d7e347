//! Audio-visual semantic integration: match filtered instance masks
//! against the audio-derived category set, with sibling-group fallback,
//! to split a frame into sounding and silent objects.

use crate::instance::ScoredInstance;
use crate::tree::{AudioVisualTree, CategoryScores};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    /// Instance label itself carried audio evidence.
    Direct,
    /// A category sharing the label's group carried the evidence.
    Sibling,
    /// No remaining audio evidence; the instance is silent.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub instance_label: String,
    pub matched_category: Option<String>,
    pub kind: MatchKind,
}

/// Partition of the input instances plus one trace record per instance,
/// in matching order.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationResult {
    pub sounding: Vec<ScoredInstance>,
    pub silent: Vec<ScoredInstance>,
    pub trace: Vec<MatchRecord>,
}

/// Match instances against the audio evidence in `t_c`.
///
/// Instances are visited in descending confidence (ties: label, then input
/// index). Each instance first claims its own category if present in the
/// working copy of `t_c`; otherwise it claims the highest-scored remaining
/// sibling category (ties: lexicographically smaller name). A claimed
/// category is consumed, so one category licenses at most one instance.
/// Labels outside the tree can only be silent.
pub fn integrate(
    p_c: &[ScoredInstance],
    t_c: &CategoryScores,
    tree: &AudioVisualTree,
) -> IntegrationResult {
    let mut remaining: BTreeMap<&str, f64> = t_c.iter().collect();

    let mut order: Vec<usize> = (0..p_c.len()).collect();
    order.sort_by(|&a, &b| {
        p_c[b]
            .confidence
            .partial_cmp(&p_c[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| p_c[a].label.cmp(&p_c[b].label))
            .then_with(|| a.cmp(&b))
    });

    let mut result = IntegrationResult {
        sounding: Vec::new(),
        silent: Vec::new(),
        trace: Vec::new(),
    };

    for &i in &order {
        let instance = &p_c[i];
        let label = instance.label.as_str();

        if remaining.remove(label).is_some() {
            result.sounding.push(instance.clone());
            result.trace.push(MatchRecord {
                instance_label: instance.label.clone(),
                matched_category: Some(instance.label.clone()),
                kind: MatchKind::Direct,
            });
            continue;
        }

        if let Ok(siblings) = tree.sibling_categories(label) {
            // highest remaining score, ties broken by name; BTreeMap
            // iteration keeps this deterministic
            let best = remaining
                .iter()
                .filter(|(cat, _)| siblings.iter().any(|s| s == **cat))
                .fold(None::<(&str, f64)>, |best, (cat, &score)| match best {
                    Some((_, s)) if s >= score => best,
                    _ => Some((cat, score)),
                });
            if let Some((cat, _)) = best {
                let cat = cat.to_string();
                remaining.remove(cat.as_str());
                result.sounding.push(instance.clone());
                result.trace.push(MatchRecord {
                    instance_label: instance.label.clone(),
                    matched_category: Some(cat),
                    kind: MatchKind::Sibling,
                });
                continue;
            }
        }

        result.silent.push(instance.clone());
        result.trace.push(MatchRecord {
            instance_label: instance.label.clone(),
            matched_category: None,
            kind: MatchKind::None,
        });
    }

    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;
    use crate::tree::{aggregate_tag_scores, CategoryScores, TagScores};

    const TREE: &str = "\
group weapon
group human
group \"road vehicle\"
category gun -> weapon
category man -> human
category woman -> human
category ambulance -> \"road vehicle\"
category bus -> \"road vehicle\"
category car -> \"road vehicle\"
tag gunshot -> gun
tag speech -> man
tag \"ambulance siren\" -> ambulance
tag \"bus engine\" -> bus
tag \"car horn\" -> car
";

    fn tree() -> AudioVisualTree {
        AudioVisualTree::parse(TREE).unwrap()
    }

    fn inst(label: &str, conf: f64) -> ScoredInstance {
        ScoredInstance::new(label, conf, BinaryMask::zeros(2, 2).unwrap()).unwrap()
    }

    #[test]
    fn direct_match_marks_sounding_and_rest_silent() {
        let p_c = vec![inst("gun", 0.95), inst("man", 0.9)];
        let t_c = CategoryScores::from_scores([("gun", 0.8)]);
        let out = integrate(&p_c, &t_c, &tree());
        assert_eq!(out.sounding, vec![p_c[0].clone()]);
        assert_eq!(out.silent, vec![p_c[1].clone()]);
        assert_eq!(
            out.trace,
            vec![
                MatchRecord {
                    instance_label: "gun".into(),
                    matched_category: Some("gun".into()),
                    kind: MatchKind::Direct,
                },
                MatchRecord {
                    instance_label: "man".into(),
                    matched_category: None,
                    kind: MatchKind::None,
                },
            ]
        );
    }

    #[test]
    fn sibling_fallback_matches_ambulance_to_bus() {
        let p_c = vec![inst("ambulance", 0.9)];
        let t_c = CategoryScores::from_scores([("bus", 0.6)]);
        let out = integrate(&p_c, &t_c, &tree());
        assert_eq!(out.sounding.len(), 1);
        assert_eq!(
            out.trace[0],
            MatchRecord {
                instance_label: "ambulance".into(),
                matched_category: Some("bus".into()),
                kind: MatchKind::Sibling,
            }
        );
    }

    #[test]
    fn empty_input_yields_empty_result() {
        let t_c = CategoryScores::from_scores([("gun", 0.8)]);
        let out = integrate(&[], &t_c, &tree());
        assert!(out.sounding.is_empty());
        assert!(out.silent.is_empty());
        assert!(out.trace.is_empty());
    }

    #[test]
    fn sibling_choice_takes_highest_score_then_name() {
        let p_c = vec![inst("ambulance", 0.9)];
        let t_c = CategoryScores::from_scores([("bus", 0.3), ("car", 0.7)]);
        let out = integrate(&p_c, &t_c, &tree());
        assert_eq!(out.trace[0].matched_category.as_deref(), Some("car"));

        let tied = CategoryScores::from_scores([("bus", 0.5), ("car", 0.5)]);
        let out = integrate(&p_c, &tied, &tree());
        assert_eq!(out.trace[0].matched_category.as_deref(), Some("bus"));
    }

    #[test]
    fn unknown_labels_fall_through_to_silent() {
        let p_c = vec![inst("zeppelin", 0.9)];
        let t_c = CategoryScores::from_scores([("gun", 0.8)]);
        let out = integrate(&p_c, &t_c, &tree());
        assert_eq!(out.silent.len(), 1);
        assert_eq!(out.trace[0].kind, MatchKind::None);
    }

    #[test]
    fn each_category_licenses_one_instance() {
        let p_c = vec![inst("gun", 0.95), inst("gun", 0.9)];
        let t_c = CategoryScores::from_scores([("gun", 0.8)]);
        let out = integrate(&p_c, &t_c, &tree());
        assert_eq!(out.sounding.len(), 1);
        assert_eq!(out.silent.len(), 1);
        assert_eq!(out.sounding[0].confidence, 0.95);
    }

    #[test]
    fn higher_confidence_gets_first_claim() {
        // ambulance (lower conf) would also match bus via sibling, but the
        // bus instance claims it directly first
        let p_c = vec![inst("bus", 0.9), inst("ambulance", 0.5)];
        let t_c = CategoryScores::from_scores([("bus", 0.6)]);
        let out = integrate(&p_c, &t_c, &tree());
        assert_eq!(out.sounding.len(), 1);
        assert_eq!(out.sounding[0].label, "bus");
        assert_eq!(out.silent[0].label, "ambulance");
    }

    #[test]
    fn noise_categories_do_not_change_partition() {
        let p_c = vec![inst("gun", 0.95), inst("man", 0.9)];
        let tree = tree();
        let base = TagScores::from_entries([("gunshot", 0.92)]).unwrap();
        let noisy = TagScores::from_entries([("gunshot", 0.92), ("car horn", 0.9)]).unwrap();
        // "car" is neither an instance label nor a sibling of gun/man
        let a = integrate(&p_c, &aggregate_tag_scores(&tree, &base, 0.1).unwrap(), &tree);
        let b = integrate(&p_c, &aggregate_tag_scores(&tree, &noisy, 0.1).unwrap(), &tree);
        assert_eq!(a, b);
    }
}
