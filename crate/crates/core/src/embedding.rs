//! Word vectors, class name vectors and similarity class embeddings.
//!
//! A class embedding holds one entry per seen reference class: the shifted
//! similarity `sim(c, ref_k) + 1` between the class name vectors. With unit
//! name vectors every entry lies in `[0, 2]` and a class scored against itself
//! gives exactly 2.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercased token → dense vector map.
#[derive(Debug, Clone)]
pub struct VectorTable {
    entries: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl VectorTable {
    /// Builds a table from in-memory pairs. Later duplicates are ignored.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("vector dimension must be positive".into()));
        }
        let mut map = HashMap::new();
        for (token, v) in entries {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if v.iter().all(|x| *x == 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "token `{}` has an all-zero vector",
                    token.as_ref()
                )));
            }
            map.entry(token.as_ref().to_lowercase()).or_insert(v);
        }
        Ok(VectorTable { entries: map, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(&token.to_lowercase()).map(Vec::as_slice)
    }
}

/// Loads a text vector file: one `token v1 .. vD` line per word, with an
/// optional leading `N D` header line.
pub fn load_word_vectors(path: impl AsRef<Path>, expected_dim: usize) -> Result<VectorTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(&text, expected_dim, path)
}

pub(crate) fn parse_word_vectors(text: &str, expected_dim: usize, path: &Path) -> Result<VectorTable> {
    if expected_dim == 0 {
        return Err(Error::InvalidArgument("expected_dim must be positive".into()));
    }
    let mut entries: HashMap<String, Vec<f64>> = HashMap::new();
    let mut first_content = true;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if first_content {
            first_content = false;
            if is_header(&fields, expected_dim) {
                continue;
            }
        }
        let token = fields[0].to_lowercase();
        let values = &fields[1..];
        if values.len() != expected_dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {expected_dim} values, found {}", values.len()),
            ));
        }
        let vector = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, lineno, format!("bad number: {e}")))?;
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(path, lineno, "non-finite value"));
        }
        if vector.iter().all(|x| *x == 0.0) {
            return Err(Error::parse(path, lineno, format!("all-zero vector for `{token}`")));
        }
        entries.entry(token).or_insert(vector);
    }
    if entries.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(VectorTable {
        entries,
        dim: expected_dim,
    })
}

fn is_header(fields: &[&str], expected_dim: usize) -> bool {
    fields.len() == 2
        && fields[0].parse::<usize>().is_ok()
        && fields[1].parse::<usize>().ok() == Some(expected_dim)
}

/// Reads a class list: one name per line, blank lines and `#` comments skipped.
pub fn load_class_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_class_list(&text))
}

pub fn parse_class_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .collect()
}

/// What to do with class-name words missing from the vector table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    #[default]
    Error,
    /// Average the words that are present; fail only if none are.
    Skip,
}

/// How two class name vectors are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKernel {
    /// Unit-normalize name vectors first, giving entries in `[0, 2]`.
    #[default]
    Cosine,
    /// Raw averaged word vectors, no normalization.
    Dot,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingOptions {
    pub oov: OovPolicy,
    pub kernel: SimilarityKernel,
}

fn mean_word_vector(name: &str, table: &VectorTable, oov: OovPolicy) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; table.dim()];
    let mut count = 0usize;
    let mut first_missing = None;
    for word in name.split_whitespace() {
        match table.get(word) {
            Some(v) => {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                count += 1;
            }
            None => {
                if oov == OovPolicy::Error {
                    return Err(Error::MissingToken(word.to_lowercase()));
                }
                first_missing.get_or_insert_with(|| word.to_lowercase());
            }
        }
    }
    if count == 0 {
        return Err(Error::MissingToken(
            first_missing.unwrap_or_else(|| name.to_string()),
        ));
    }
    for s in &mut sum {
        *s /= count as f64;
    }
    Ok(sum)
}

/// Unit-normalized mean of the word vectors of a (possibly multi-word) class name.
pub fn class_name_vector(name: &str, table: &VectorTable) -> Result<Vec<f64>> {
    class_name_vector_with(name, table, OovPolicy::Error)
}

pub fn class_name_vector_with(name: &str, table: &VectorTable, oov: OovPolicy) -> Result<Vec<f64>> {
    let mut v = mean_word_vector(name, table, oov)?;
    let norm = l2_norm(&v);
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

fn name_vector(name: &str, table: &VectorTable, opts: EmbeddingOptions) -> Result<Vec<f64>> {
    match opts.kernel {
        SimilarityKernel::Cosine => class_name_vector_with(name, table, opts.oov),
        SimilarityKernel::Dot => mean_word_vector(name, table, opts.oov),
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-class vector of shifted similarities to the seen reference classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEmbedding {
    #[serde(rename = "class")]
    pub class_name: String,
    pub values: Vec<f64>,
    #[serde(default)]
    pub mask: BTreeSet<usize>,
}

impl ClassEmbedding {
    pub fn new(class_name: impl Into<String>, values: Vec<f64>) -> Self {
        ClassEmbedding {
            class_name: class_name.into(),
            values,
            mask: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Zeroes the given reference entries and records them in the mask.
    pub fn mask_simulated_unseen(&self, indices: &BTreeSet<usize>) -> Result<ClassEmbedding> {
        let mut out = self.clone();
        for &i in indices {
            if i >= out.values.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: out.values.len(),
                });
            }
            out.values[i] = 0.0;
            out.mask.insert(i);
        }
        Ok(out)
    }
}

pub fn mask_simulated_unseen(e: &ClassEmbedding, indices: &BTreeSet<usize>) -> Result<ClassEmbedding> {
    e.mask_simulated_unseen(indices)
}

/// The ordered seen-class reference set with its precomputed name vectors.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    classes: Vec<String>,
    vectors: Vec<Vec<f64>>,
    opts: EmbeddingOptions,
}

impl ReferenceSet {
    pub fn new(seen_classes: &[String], table: &VectorTable, opts: EmbeddingOptions) -> Result<Self> {
        if seen_classes.is_empty() {
            return Err(Error::InvalidArgument("seen class list is empty".into()));
        }
        let vectors = seen_classes
            .iter()
            .map(|c| name_vector(c, table, opts))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReferenceSet {
            classes: seen_classes.to_vec(),
            vectors,
            opts,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn embed(&self, class: &str, table: &VectorTable) -> Result<ClassEmbedding> {
        let v = name_vector(class, table, self.opts)?;
        let values = self
            .vectors
            .iter()
            .map(|r| match self.opts.kernel {
                // Rounding can push a unit-vector dot product just past 1.
                SimilarityKernel::Cosine => dot(&v, r).clamp(-1.0, 1.0) + 1.0,
                SimilarityKernel::Dot => dot(&v, r) + 1.0,
            })
            .collect();
        Ok(ClassEmbedding::new(class, values))
    }

    /// Indices of the given class names in the reference ordering.
    pub fn indices_of<'a, I>(&self, classes: I) -> Result<BTreeSet<usize>>
    where
        I: IntoIterator<Item = &'a String>,
    {
        classes
            .into_iter()
            .map(|c| self.index_of(c).ok_or_else(|| Error::UnknownClass(c.clone())))
            .collect()
    }
}

/// Similarity embedding of `class` against `seen_classes` with default options.
pub fn similarity_embedding(
    class: &str,
    seen_classes: &[String],
    table: &VectorTable,
) -> Result<ClassEmbedding> {
    ReferenceSet::new(seen_classes, table, EmbeddingOptions::default())?.embed(class, table)
}

/// Ordered collection of class embeddings sharing one reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    embeddings: Vec<ClassEmbedding>,
}

impl EmbeddingSet {
    pub fn new(embeddings: Vec<ClassEmbedding>) -> Result<Self> {
        if let Some(first) = embeddings.first() {
            let len = first.len();
            if let Some(bad) = embeddings.iter().find(|e| e.len() != len) {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    actual: bad.len(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for e in &embeddings {
            if !seen.insert(e.class_name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate class `{}`",
                    e.class_name
                )));
            }
        }
        Ok(EmbeddingSet { embeddings })
    }

    /// Embeds every class in `classes` against `refs`.
    pub fn build(classes: &[String], refs: &ReferenceSet, table: &VectorTable) -> Result<Self> {
        let embeddings = classes
            .iter()
            .map(|c| refs.embed(c, table))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSet::new(embeddings)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ClassEmbedding> {
        self.embeddings.iter()
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.embeddings.first().map(ClassEmbedding::len)
    }

    pub fn get(&self, class: &str) -> Option<&ClassEmbedding> {
        self.embeddings.iter().find(|e| e.class_name == class)
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.embeddings.iter().position(|e| e.class_name == class)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.embeddings.iter().map(|e| e.class_name.clone()).collect()
    }

    pub fn as_slice(&self) -> &[ClassEmbedding] {
        &self.embeddings
    }

    /// Keeps only the named classes, in this set's order.
    pub fn subset(&self, classes: &BTreeSet<String>) -> EmbeddingSet {
        EmbeddingSet {
            embeddings: self
                .embeddings
                .iter()
                .filter(|e| classes.contains(&e.class_name))
                .cloned()
                .collect(),
        }
    }

    /// Concatenates two sets, rejecting duplicate classes.
    pub fn merged(&self, other: &EmbeddingSet) -> Result<EmbeddingSet> {
        let mut all = self.embeddings.clone();
        all.extend(other.embeddings.iter().cloned());
        EmbeddingSet::new(all)
    }

    pub fn masked(&self, indices: &BTreeSet<usize>) -> Result<EmbeddingSet> {
        let embeddings = self
            .embeddings
            .iter()
            .map(|e| e.mask_simulated_unseen(indices))
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingSet { embeddings })
    }

    /// JSON-lines serialization, one embedding per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.embeddings {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let embeddings = crate::io::parse_jsonl(text, path)?;
        EmbeddingSet::new(embeddings)
    }
}

impl<'a> IntoIterator for &'a EmbeddingSet {
    type Item = &'a ClassEmbedding;
    type IntoIter = std::slice::Iter<'a, ClassEmbedding>;

    fn into_iter(self) -> Self::IntoIter {
        self.embeddings.iter()
    }
}
