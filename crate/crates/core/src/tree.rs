//! Three-layer audio-visual tree: high-level groups, visual categories,
//! and audio tags, with score aggregation from tags up to categories.
//!
//! The file format is line oriented:
//!
//! ```text
//! # comment
//! group <group-name>
//! category <category-name> -> <group-name>
//! tag <tag-name> -> <category-name>
//! ```
//!
//! Names containing spaces (or `#`, `"`, `\`) are double-quoted; `\"` and
//! `\\` escape inside quotes. Records may appear in any order; parents are
//! resolved after the whole file is read.

use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: duplicate {layer} name {name:?}")]
    DuplicateName {
        line: usize,
        layer: &'static str,
        name: String,
    },
    #[error("line {line}: {child_layer} {child:?} references unknown {parent_layer} {parent:?}")]
    DanglingReference {
        line: usize,
        child_layer: &'static str,
        child: String,
        parent_layer: &'static str,
        parent: String,
    },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("tag {tag:?} has confidence {value} outside [0, 1]")]
    ConfidenceRange { tag: String, value: f64 },
    #[error("threshold {0} outside [0, 1]")]
    ThresholdRange(f64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CategoryNode {
    name: String,
    group: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TagNode {
    name: String,
    category: usize,
}

/// Validated three-layer hierarchy. Immutable after parse; all queries are
/// pure reads.
#[derive(Debug, Clone)]
pub struct AudioVisualTree {
    groups: Vec<String>,
    categories: Vec<CategoryNode>,
    tags: Vec<TagNode>,
    category_index: HashMap<String, usize>,
    tag_index: HashMap<String, usize>,
}

impl PartialEq for AudioVisualTree {
    fn eq(&self, other: &Self) -> bool {
        self.groups == other.groups
            && self.categories == other.categories
            && self.tags == other.tags
    }
}

impl Eq for AudioVisualTree {}

impl AudioVisualTree {
    /// Number of nodes per layer: (groups, categories, tags).
    pub fn layer_sizes(&self) -> (usize, usize, usize) {
        (self.groups.len(), self.categories.len(), self.tags.len())
    }

    pub fn group_names(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(String::as_str)
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.name.as_str())
    }

    pub fn tag_names(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(|t| t.name.as_str())
    }

    pub fn contains_category(&self, name: &str) -> bool {
        self.category_index.contains_key(name)
    }

    pub fn contains_tag(&self, name: &str) -> bool {
        self.tag_index.contains_key(name)
    }

    /// Category a tag feeds into, if the tag is in the tree.
    pub fn category_of_tag(&self, tag: &str) -> Option<&str> {
        self.tag_index
            .get(tag)
            .map(|&i| self.categories[self.tags[i].category].name.as_str())
    }

    /// Group a category belongs to.
    pub fn group_of_category(&self, category: &str) -> Option<&str> {
        self.category_index
            .get(category)
            .map(|&i| self.groups[self.categories[i].group].as_str())
    }

    /// Categories sharing the query's group, excluding the query itself.
    pub fn sibling_categories(&self, category: &str) -> Result<Vec<String>, TreeError> {
        let &idx = self
            .category_index
            .get(category)
            .ok_or_else(|| TreeError::UnknownCategory(category.to_string()))?;
        let group = self.categories[idx].group;
        Ok(self
            .categories
            .iter()
            .enumerate()
            .filter(|(i, c)| *i != idx && c.group == group)
            .map(|(_, c)| c.name.clone())
            .collect())
    }

    /// Parse the line-oriented tree format.
    pub fn parse(text: &str) -> Result<Self, TreeError> {
        let mut groups: Vec<String> = Vec::new();
        let mut group_lines: Vec<usize> = Vec::new();
        let mut pending_categories: Vec<(String, String, usize)> = Vec::new();
        let mut pending_tags: Vec<(String, String, usize)> = Vec::new();
        let mut group_index: HashMap<String, usize> = HashMap::new();

        for (line_no, raw) in text.lines().enumerate() {
            let line_no = line_no + 1;
            let tokens = tokenize(raw, line_no)?;
            let Some((keyword, kw_col)) = tokens.first().cloned() else {
                continue; // blank or comment-only line
            };
            match keyword.as_str() {
                "group" => {
                    let name = expect_name(&tokens, 1, raw, line_no)?;
                    expect_end(&tokens, 2, line_no)?;
                    if group_index.contains_key(&name) {
                        return Err(TreeError::DuplicateName {
                            line: line_no,
                            layer: "group",
                            name,
                        });
                    }
                    group_index.insert(name.clone(), groups.len());
                    groups.push(name);
                    group_lines.push(line_no);
                }
                "category" => {
                    let (name, parent) = parse_child(&tokens, raw, line_no)?;
                    pending_categories.push((name, parent, line_no));
                }
                "tag" => {
                    let (name, parent) = parse_child(&tokens, raw, line_no)?;
                    pending_tags.push((name, parent, line_no));
                }
                other => {
                    return Err(TreeError::Syntax {
                        line: line_no,
                        column: kw_col,
                        message: format!(
                            "expected \"group\", \"category\", or \"tag\", found {other:?}"
                        ),
                    });
                }
            }
        }

        let mut categories = Vec::with_capacity(pending_categories.len());
        let mut category_index = HashMap::new();
        for (name, parent, line) in pending_categories {
            if category_index.contains_key(&name) {
                return Err(TreeError::DuplicateName {
                    line,
                    layer: "category",
                    name,
                });
            }
            let &group = group_index
                .get(&parent)
                .ok_or_else(|| TreeError::DanglingReference {
                    line,
                    child_layer: "category",
                    child: name.clone(),
                    parent_layer: "group",
                    parent: parent.clone(),
                })?;
            category_index.insert(name.clone(), categories.len());
            categories.push(CategoryNode { name, group });
        }

        let mut tags = Vec::with_capacity(pending_tags.len());
        let mut tag_index = HashMap::new();
        for (name, parent, line) in pending_tags {
            if tag_index.contains_key(&name) {
                return Err(TreeError::DuplicateName {
                    line,
                    layer: "tag",
                    name,
                });
            }
            let &category =
                category_index
                    .get(&parent)
                    .ok_or_else(|| TreeError::DanglingReference {
                        line,
                        child_layer: "tag",
                        child: name.clone(),
                        parent_layer: "category",
                        parent: parent.clone(),
                    })?;
            tag_index.insert(name.clone(), tags.len());
            tags.push(TagNode { name, category });
        }

        Ok(Self {
            groups,
            categories,
            tags,
            category_index,
            tag_index,
        })
    }

    /// Render back to the file format; `parse(serialize(t)) == t`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            out.push_str("group ");
            out.push_str(&quote_name(g));
            out.push('\n');
        }
        for c in &self.categories {
            out.push_str("category ");
            out.push_str(&quote_name(&c.name));
            out.push_str(" -> ");
            out.push_str(&quote_name(&self.groups[c.group]));
            out.push('\n');
        }
        for t in &self.tags {
            out.push_str("tag ");
            out.push_str(&quote_name(&t.name));
            out.push_str(" -> ");
            out.push_str(&quote_name(&self.categories[t.category].name));
            out.push('\n');
        }
        out
    }
}

fn parse_child(
    tokens: &[(String, usize)],
    raw: &str,
    line: usize,
) -> Result<(String, String), TreeError> {
    let name = expect_name(tokens, 1, raw, line)?;
    match tokens.get(2) {
        Some((arrow, _)) if arrow == "->" => {}
        Some((other, col)) => {
            return Err(TreeError::Syntax {
                line,
                column: *col,
                message: format!("expected \"->\", found {other:?}"),
            });
        }
        None => {
            return Err(TreeError::Syntax {
                line,
                column: raw.len() + 1,
                message: "expected \"->\" and a parent name".to_string(),
            });
        }
    }
    let parent = expect_name(tokens, 3, raw, line)?;
    expect_end(tokens, 4, line)?;
    Ok((name, parent))
}

fn expect_name(
    tokens: &[(String, usize)],
    idx: usize,
    raw: &str,
    line: usize,
) -> Result<String, TreeError> {
    match tokens.get(idx) {
        Some((name, col)) if name == "->" => Err(TreeError::Syntax {
            line,
            column: *col,
            message: "expected a name, found \"->\"".to_string(),
        }),
        Some((name, _)) => Ok(name.clone()),
        None => Err(TreeError::Syntax {
            line,
            column: raw.len() + 1,
            message: "expected a name".to_string(),
        }),
    }
}

fn expect_end(tokens: &[(String, usize)], len: usize, line: usize) -> Result<(), TreeError> {
    if let Some((extra, col)) = tokens.get(len) {
        return Err(TreeError::Syntax {
            line,
            column: *col,
            message: format!("unexpected trailing token {extra:?}"),
        });
    }
    Ok(())
}

/// Split a line into (token, 1-based column) pairs. `#` outside quotes
/// starts a comment.
fn tokenize(line: &str, line_no: usize) -> Result<Vec<(String, usize)>, TreeError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            break;
        } else if c == '"' {
            let start = i + 1;
            let mut name = String::new();
            let mut j = i + 1;
            loop {
                match chars.get(j) {
                    None => {
                        return Err(TreeError::Syntax {
                            line: line_no,
                            column: start,
                            message: "unterminated quoted name".to_string(),
                        });
                    }
                    Some('"') => {
                        j += 1;
                        break;
                    }
                    Some('\\') => match chars.get(j + 1) {
                        Some(&e @ ('"' | '\\')) => {
                            name.push(e);
                            j += 2;
                        }
                        _ => {
                            return Err(TreeError::Syntax {
                                line: line_no,
                                column: j + 1,
                                message: "invalid escape in quoted name".to_string(),
                            });
                        }
                    },
                    Some(&ch) => {
                        name.push(ch);
                        j += 1;
                    }
                }
            }
            tokens.push((name, i + 1));
            i = j;
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '#' {
                i += 1;
            }
            tokens.push((chars[start..i].iter().collect(), start + 1));
        }
    }
    Ok(tokens)
}

fn quote_name(name: &str) -> String {
    let needs_quotes = name.is_empty()
        || name == "->"
        || name.contains(|c: char| c.is_whitespace() || c == '#' || c == '"' || c == '\\');
    if !needs_quotes {
        return name.to_string();
    }
    let mut out = String::with_capacity(name.len() + 2);
    out.push('"');
    for c in name.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Per-tag confidence scores for one audio clip.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TagScores {
    entries: BTreeMap<String, f64>,
}

impl TagScores {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a confidence, replacing any previous value for the tag.
    pub fn set(&mut self, tag: impl Into<String>, confidence: f64) -> Result<(), TreeError> {
        let tag = tag.into();
        if !(0.0..=1.0).contains(&confidence) {
            return Err(TreeError::ConfidenceRange {
                tag,
                value: confidence,
            });
        }
        self.entries.insert(tag, confidence);
        Ok(())
    }

    pub fn from_entries<I, S>(entries: I) -> Result<Self, TreeError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut scores = Self::new();
        for (tag, confidence) in entries {
            scores.set(tag, confidence)?;
        }
        Ok(scores)
    }

    pub fn get(&self, tag: &str) -> Option<f64> {
        self.entries.get(tag).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Categories with nonzero aggregated audio evidence (the potential
/// sounding-source set), plus diagnostics for tags the tree does not know.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryScores {
    scores: BTreeMap<String, f64>,
    unknown_tags: Vec<String>,
}

impl CategoryScores {
    pub fn score(&self, category: &str) -> Option<f64> {
        self.scores.get(category).copied()
    }

    pub fn contains(&self, category: &str) -> bool {
        self.scores.contains_key(category)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Categories in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scores.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Tags from the score vector that are absent from the tree, sorted.
    pub fn unknown_tags(&self) -> &[String] {
        &self.unknown_tags
    }

    /// Build directly from category scores. Non-positive entries are
    /// dropped (the set only ever holds positive evidence); negative or
    /// non-finite values are rejected.
    pub fn from_scores<S: Into<String>>(
        scores: impl IntoIterator<Item = (S, f64)>,
    ) -> Result<Self, TreeError> {
        let mut map = BTreeMap::new();
        for (category, score) in scores {
            let category: String = category.into();
            if !score.is_finite() || score < 0.0 {
                return Err(TreeError::ConfidenceRange {
                    tag: category,
                    value: score,
                });
            }
            if score > 0.0 {
                map.insert(category, score);
            }
        }
        Ok(Self {
            scores: map,
            unknown_tags: Vec::new(),
        })
    }
}

/// Sum tag confidences up to their categories. Tags below `tau_tag` are
/// dropped before summation and categories only appear with a strictly
/// positive total. Tags missing from the tree are collected as diagnostics
/// rather than errors.
pub fn aggregate_tag_scores(
    tree: &AudioVisualTree,
    scores: &TagScores,
    tau_tag: f64,
) -> Result<CategoryScores, TreeError> {
    if !(0.0..=1.0).contains(&tau_tag) {
        return Err(TreeError::ThresholdRange(tau_tag));
    }
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut unknown = Vec::new();
    for (tag, confidence) in scores.iter() {
        match tree.category_of_tag(tag) {
            Some(category) => {
                if confidence >= tau_tag {
                    *sums.entry(category.to_string()).or_insert(0.0) += confidence;
                }
            }
            None => unknown.push(tag.to_string()),
        }
    }
    sums.retain(|_, v| *v > 0.0);
    Ok(CategoryScores {
        scores: sums,
        unknown_tags: unknown,
    })
}
