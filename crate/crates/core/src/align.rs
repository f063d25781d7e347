//! Semantic alignment of caption nouns to the category vocabulary via
//! word-embedding cosine similarity, and derivation of per-frame
//! silent-object labels.

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("embedding line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("embedding line {line}: vector has {got} components, expected {expected}")]
    DimensionCount {
        line: usize,
        got: usize,
        expected: usize,
    },
    #[error("embedding line {line}: word {word:?} has an all-zero vector")]
    ZeroVector { line: usize, word: String },
    #[error("embedding line {line}: duplicate word {word:?}")]
    DuplicateWord { line: usize, word: String },
    #[error("embedding file contains no entries")]
    EmptyTable,
    #[error("vectors have mismatched dimensions {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine is undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("no usable category vocabulary for alignment")]
    EmptyCategories,
}

/// Word -> D-vector lookup, loaded from the standard text layout
/// (`word f1 f2 ... fD`, one entry per line).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn parse(text: &str) -> Result<Self, AlignError> {
        let mut dimension = None;
        let mut entries: HashMap<String, Vec<f64>> = HashMap::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = line_no + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let mut parts = raw.split_whitespace();
            let word = parts.next().expect("non-empty line").to_lowercase();
            let mut vector = Vec::new();
            for part in parts {
                let value: f64 = part.parse().map_err(|_| AlignError::Parse {
                    line,
                    message: format!("invalid number {part:?}"),
                })?;
                if !value.is_finite() {
                    return Err(AlignError::Parse {
                        line,
                        message: format!("non-finite component {value}"),
                    });
                }
                vector.push(value);
            }
            if vector.is_empty() {
                return Err(AlignError::Parse {
                    line,
                    message: "expected at least one vector component".to_string(),
                });
            }
            let expected = *dimension.get_or_insert(vector.len());
            if vector.len() != expected {
                return Err(AlignError::DimensionCount {
                    line,
                    got: vector.len(),
                    expected,
                });
            }
            if vector.iter().all(|&v| v == 0.0) {
                return Err(AlignError::ZeroVector { line, word });
            }
            if entries.contains_key(&word) {
                return Err(AlignError::DuplicateWord { line, word });
            }
            entries.insert(word, vector);
        }
        let dimension = dimension.ok_or(AlignError::EmptyTable)?;
        Ok(Self {
            dimension,
            entries,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// Embed a (possibly multi-word) term as the mean of its word vectors.
    /// Returns None when any word is out of vocabulary, or when the mean
    /// degenerates to a zero vector.
    pub fn term_vector(&self, term: &str) -> Option<Vec<f64>> {
        let words: Vec<&str> = term.split_whitespace().collect();
        if words.is_empty() {
            return None;
        }
        let mut mean = vec![0.0; self.dimension];
        for word in &words {
            let v = self.get(word)?;
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= words.len() as f64;
        }
        if mean.iter().all(|&v| v == 0.0) {
            return None;
        }
        Some(mean)
    }
}

/// Cosine similarity `dot(a, b) / (|a| |b|)`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, AlignError> {
    if a.len() != b.len() {
        return Err(AlignError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(AlignError::ZeroNorm);
    }
    Ok(dot / (norm_a * norm_b))
}

/// Result of canonicalizing a noun set against the category vocabulary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Canonicalized {
    /// Category labels in first-occurrence order, deduplicated.
    pub nouns: Vec<String>,
    /// Inputs dropped for missing embeddings or a similarity below the
    /// floor, in input order.
    pub dropped: Vec<String>,
}

/// Replace each noun by its most similar category label. Ties go to the
/// lexicographically smaller category; `min_similarity`, when set, drops
/// nouns whose best match falls below the floor. All tokens are lowercased
/// before lookup.
pub fn canonicalize_nouns(
    nouns: &[String],
    categories: &[String],
    table: &EmbeddingTable,
    min_similarity: Option<f64>,
) -> Result<Canonicalized, AlignError> {
    if categories.is_empty() {
        return Err(AlignError::EmptyCategories);
    }
    let mut out = Canonicalized::default();

    let mut category_vectors: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for cat in categories {
        let cat = cat.to_lowercase();
        if !seen.insert(cat.clone()) {
            continue;
        }
        match table.term_vector(&cat) {
            Some(v) => category_vectors.push((cat, v)),
            None => out.dropped.push(cat),
        }
    }
    if category_vectors.is_empty() {
        return Err(AlignError::EmptyCategories);
    }

    let mut seen_nouns = std::collections::HashSet::new();
    for noun in nouns {
        let noun = noun.to_lowercase();
        if !seen_nouns.insert(noun.clone()) {
            continue;
        }
        let Some(vector) = table.term_vector(&noun) else {
            out.dropped.push(noun);
            continue;
        };
        let mut best: Option<(&str, f64)> = None;
        for (cat, cat_vec) in &category_vectors {
            let score = cosine(&vector, cat_vec)?;
            best = match best {
                Some((bc, bs)) if score > bs || (score == bs && cat.as_str() < bc) => {
                    Some((cat, score))
                }
                None => Some((cat, score)),
                keep => keep,
            };
        }
        let (category, score) = best.expect("category_vectors is non-empty");
        if min_similarity.is_some_and(|floor| score < floor) {
            out.dropped.push(noun);
            continue;
        }
        let category = category.to_string();
        if !out.nouns.contains(&category) {
            out.nouns.push(category);
        }
    }
    Ok(out)
}

/// Order-stable set difference `canonical \ sounding`.
pub fn silent_labels(canonical: &[String], sounding: &[String]) -> Vec<String> {
    let sounding: std::collections::HashSet<String> =
        sounding.iter().map(|s| s.to_lowercase()).collect();
    canonical
        .iter()
        .map(|s| s.to_lowercase())
        .filter(|c| !sounding.contains(c))
        .collect()
}
