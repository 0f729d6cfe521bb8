//! Corpus construction: CSV ingestion, a synthetic review generator, and
//! deterministic train/test splits.
//!
//! Documents are bags of words over a shared [`Vocabulary`] plus an encoded
//! side-information vector described by a [`SideSchema`]. Vocabulary ids and
//! side levels are assigned in sorted order, so they are stable under row
//! reordering of the same file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bidirectional term <-> id map. Ids are the rank of the term in sorted
/// order over the distinct terms of the source corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct Vocabulary {
    terms: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from any iterator of terms; duplicates collapse.
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let unique: BTreeSet<String> = terms.into_iter().map(Into::into).collect();
        let terms: Vec<String> = unique.into_iter().collect();
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { terms, index }
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.terms
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(terms: Vec<String>) -> Result<Self> {
        let rebuilt = Vocabulary::from_terms(terms.iter().cloned());
        if rebuilt.terms != terms {
            return Err(Error::Schema(
                "vocabulary terms must be sorted and distinct".into(),
            ));
        }
        Ok(rebuilt)
    }
}

/// One categorical side feature: a named column and its sorted level set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideFeature {
    pub name: String,
    pub levels: Vec<String>,
}

/// Ordered list of side features; defines the one-hot encoding layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideSchema {
    pub features: Vec<SideFeature>,
}

impl SideSchema {
    pub fn empty() -> Self {
        SideSchema { features: vec![] }
    }

    /// Total encoded dimension (sum of level counts across features).
    pub fn dim(&self) -> usize {
        self.features.iter().map(|f| f.levels.len()).sum()
    }

    /// Encodes one raw value per feature, in schema order, as concatenated
    /// one-hot blocks.
    pub fn encode(&self, values: &[&str]) -> Result<Vec<f64>> {
        if values.len() != self.features.len() {
            return Err(Error::Schema(format!(
                "expected {} side values, got {}",
                self.features.len(),
                values.len()
            )));
        }
        let mut out = vec![0.0; self.dim()];
        let mut offset = 0;
        for (feature, &value) in self.features.iter().zip(values) {
            let pos = feature
                .levels
                .iter()
                .position(|l| l == value)
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "unknown level {value:?} for side feature {:?} (known: {:?})",
                        feature.name, feature.levels
                    ))
                })?;
            out[offset + pos] = 1.0;
            offset += feature.levels.len();
        }
        Ok(out)
    }

    /// Encodes `name=value` pairs; every feature must be covered exactly once.
    pub fn encode_pairs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        let mut values = Vec::with_capacity(self.features.len());
        for feature in &self.features {
            let matches: Vec<&str> = pairs
                .iter()
                .filter(|(n, _)| n == &feature.name)
                .map(|(_, v)| v.as_str())
                .collect();
            match matches.as_slice() {
                [one] => values.push(*one),
                [] => {
                    return Err(Error::Schema(format!(
                        "missing value for side feature {:?}",
                        feature.name
                    )))
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "side feature {:?} given more than once",
                        feature.name
                    )))
                }
            }
        }
        for (name, _) in pairs {
            if !self.features.iter().any(|f| &f.name == name) {
                return Err(Error::Schema(format!(
                    "unknown side feature {name:?} (schema has: {:?})",
                    self.features.iter().map(|f| &f.name).collect::<Vec<_>>()
                )));
            }
        }
        self.encode(&values)
    }

    /// Recovers the raw level per feature from an encoded vector; the vector
    /// must be exactly one-hot within each feature block.
    pub fn decode(&self, side: &[f64]) -> Result<Vec<String>> {
        if side.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "side vector has {} entries, schema dimension is {}",
                side.len(),
                self.dim()
            )));
        }
        let mut out = Vec::with_capacity(self.features.len());
        let mut offset = 0;
        for feature in &self.features {
            let block = &side[offset..offset + feature.levels.len()];
            let hot: Vec<usize> = block
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, _)| i)
                .collect();
            match hot.as_slice() {
                [i] if block[*i] == 1.0 => out.push(feature.levels[*i].clone()),
                _ => {
                    return Err(Error::Schema(format!(
                        "side block for feature {:?} is not one-hot: {block:?}",
                        feature.name
                    )))
                }
            }
            offset += feature.levels.len();
        }
        Ok(out)
    }
}

/// A bag-of-words document with encoded side information.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    /// (word id, count) pairs, sorted by id, counts >= 1.
    pub counts: Vec<(u32, u32)>,
    /// Encoded side vector (concatenated one-hot blocks), possibly empty.
    pub side: Vec<f64>,
    /// Optional classification label (e.g. a rating).
    pub label: Option<String>,
    /// Optional ground-truth group for clustering evaluation.
    pub group: Option<String>,
}

impl Document {
    /// Total token count N_d.
    pub fn num_tokens(&self) -> u32 {
        self.counts.iter().map(|&(_, c)| c).sum()
    }
}

/// A set of documents over one vocabulary and one side schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub docs: Vec<Document>,
    pub vocabulary: Vocabulary,
    pub side_schema: SideSchema,
}

impl Corpus {
    /// Validates document ids, counts, and side dimensions against the
    /// vocabulary and schema.
    pub fn new(docs: Vec<Document>, vocabulary: Vocabulary, side_schema: SideSchema) -> Result<Self> {
        let corpus = Corpus {
            docs,
            vocabulary,
            side_schema,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vocabulary.len() as u32;
        let q = self.side_schema.dim();
        for (d, doc) in self.docs.iter().enumerate() {
            if doc.counts.is_empty() {
                return Err(Error::Schema(format!("document {d} has no words")));
            }
            let mut prev: Option<u32> = None;
            for &(id, count) in &doc.counts {
                if id >= v {
                    return Err(Error::Dimension(format!(
                        "document {d} references word id {id}, vocabulary size is {v}"
                    )));
                }
                if count == 0 {
                    return Err(Error::Schema(format!(
                        "document {d} has a zero count for word id {id}"
                    )));
                }
                if prev.is_some_and(|p| p >= id) {
                    return Err(Error::Schema(format!(
                        "document {d} counts are not sorted by distinct word id"
                    )));
                }
                prev = Some(id);
            }
            if doc.side.len() != q {
                return Err(Error::Dimension(format!(
                    "document {d} has side dimension {}, schema dimension is {q}",
                    doc.side.len()
                )));
            }
        }
        Ok(())
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn side_dim(&self) -> usize {
        self.side_schema.dim()
    }

    /// Total token count over all documents.
    pub fn total_tokens(&self) -> u64 {
        self.docs.iter().map(|d| d.num_tokens() as u64).sum()
    }
}

/// Lowercases and splits on whitespace, trimming punctuation from token
/// edges; tokens that become empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Column mapping for CSV ingestion.
#[derive(Clone, Debug)]
pub struct CsvColumns {
    pub text: String,
    pub side: Vec<String>,
    pub label: Option<String>,
    pub group: Option<String>,
}

impl CsvColumns {
    pub fn text_only(text: &str) -> Self {
        CsvColumns {
            text: text.to_string(),
            side: vec![],
            label: None,
            group: None,
        }
    }
}

/// Result of an ingestion pass: the corpus plus how many rows were skipped
/// for having no usable tokens.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub corpus: Corpus,
    pub skipped_rows: usize,
}

struct RawDoc {
    tokens: Vec<String>,
    side_values: Vec<String>,
    label: Option<String>,
    group: Option<String>,
}

fn read_raw_docs(path: &Path, cols: &CsvColumns) -> Result<(Vec<RawDoc>, usize)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Schema(format!(
                "column {name:?} not found in {path:?} (headers: {:?})",
                headers.iter().collect::<Vec<_>>()
            ))
        })
    };
    let text_idx = find(&cols.text)?;
    let side_idx: Vec<usize> = cols
        .side
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = cols.label.as_deref().map(find).transpose()?;
    let group_idx = cols.group.as_deref().map(find).transpose()?;

    let mut docs = Vec::new();
    let mut skipped = 0usize;
    for record in reader.records() {
        let record = record?;
        let tokens = tokenize(record.get(text_idx).unwrap_or(""));
        if tokens.is_empty() {
            skipped += 1;
            continue;
        }
        let side_values = side_idx
            .iter()
            .map(|&i| record.get(i).unwrap_or("").to_string())
            .collect();
        docs.push(RawDoc {
            tokens,
            side_values,
            label: label_idx.map(|i| record.get(i).unwrap_or("").to_string()),
            group: group_idx.map(|i| record.get(i).unwrap_or("").to_string()),
        });
    }
    if skipped > 0 {
        log::info!("skipped {skipped} rows with no usable tokens in {path:?}");
    }
    Ok((docs, skipped))
}

fn encode_raw_docs(
    raw: Vec<RawDoc>,
    vocabulary: Vocabulary,
    side_schema: SideSchema,
) -> Result<Ingested> {
    let mut docs = Vec::with_capacity(raw.len());
    for rd in raw {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for token in &rd.tokens {
            let id = vocabulary.id(token).ok_or_else(|| {
                Error::Schema(format!("term {token:?} is not in the model vocabulary"))
            })?;
            *counts.entry(id).or_insert(0) += 1;
        }
        let side_refs: Vec<&str> = rd.side_values.iter().map(String::as_str).collect();
        docs.push(Document {
            counts: counts.into_iter().collect(),
            side: side_schema.encode(&side_refs)?,
            label: rd.label,
            group: rd.group,
        });
    }
    let corpus = Corpus::new(docs, vocabulary, side_schema)?;
    Ok(Ingested {
        corpus,
        skipped_rows: 0,
    })
}

/// Ingests a CSV file, building the vocabulary and side schema from the
/// file's own contents (sorted distinct terms and levels).
pub fn ingest_csv<P: AsRef<Path>>(path: P, cols: &CsvColumns) -> Result<Ingested> {
    let (raw, skipped) = read_raw_docs(path.as_ref(), cols)?;
    let vocabulary = Vocabulary::from_terms(raw.iter().flat_map(|d| d.tokens.iter().cloned()));
    let features = cols
        .side
        .iter()
        .enumerate()
        .map(|(i, name)| SideFeature {
            name: name.clone(),
            levels: raw
                .iter()
                .map(|d| d.side_values[i].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        })
        .collect();
    let mut ingested = encode_raw_docs(raw, vocabulary, SideSchema { features })?;
    ingested.skipped_rows = skipped;
    Ok(ingested)
}

/// Ingests a CSV file against a fixed vocabulary and side schema (for
/// evaluating against an already-trained model). Terms or levels absent
/// from the model are errors.
pub fn ingest_csv_bound<P: AsRef<Path>>(
    path: P,
    cols: &CsvColumns,
    vocabulary: &Vocabulary,
    side_schema: &SideSchema,
) -> Result<Ingested> {
    if cols.side.len() != side_schema.features.len()
        || cols
            .side
            .iter()
            .zip(&side_schema.features)
            .any(|(c, f)| c != &f.name)
    {
        return Err(Error::Schema(format!(
            "side columns {:?} do not match the model schema {:?}",
            cols.side,
            side_schema
                .features
                .iter()
                .map(|f| &f.name)
                .collect::<Vec<_>>()
        )));
    }
    let (raw, skipped) = read_raw_docs(path.as_ref(), cols)?;
    let mut ingested = encode_raw_docs(raw, vocabulary.clone(), side_schema.clone())?;
    ingested.skipped_rows = skipped;
    Ok(ingested)
}

/// Writes a corpus back to CSV. Text is reconstructed from the bag of words
/// (terms repeated by count, in id order); side columns are decoded via the
/// schema; label and group columns appear when any document has them.
pub fn write_csv<P: AsRef<Path>>(corpus: &Corpus, path: P) -> Result<()> {
    let has_label = corpus.docs.iter().any(|d| d.label.is_some());
    let has_group = corpus.docs.iter().any(|d| d.group.is_some());
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["text".to_string()];
    header.extend(corpus.side_schema.features.iter().map(|f| f.name.clone()));
    if has_label {
        header.push("label".into());
    }
    if has_group {
        header.push("group".into());
    }
    writer.write_record(&header)?;
    for doc in &corpus.docs {
        let mut words = Vec::with_capacity(doc.num_tokens() as usize);
        for &(id, count) in &doc.counts {
            let term = corpus.vocabulary.term(id).ok_or_else(|| {
                Error::Dimension(format!("word id {id} outside the vocabulary"))
            })?;
            for _ in 0..count {
                words.push(term);
            }
        }
        let mut record = vec![words.join(" ")];
        record.extend(corpus.side_schema.decode(&doc.side)?);
        if has_label {
            record.push(doc.label.clone().unwrap_or_default());
        }
        if has_group {
            record.push(doc.group.clone().unwrap_or_default());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// One (product, description) category pair and its word bag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryBag {
    pub product: String,
    pub description: String,
    pub words: Vec<String>,
}

/// Configuration for the synthetic review generator.
///
/// Document lengths are drawn uniformly from `min_len..=max_len`; the
/// Gaussian length parameters of the source protocol are recorded here for
/// completeness but never sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_docs: usize,
    pub min_len: u32,
    pub max_len: u32,
    pub seed: u64,
    pub bags: Vec<CategoryBag>,
    pub gaussian_mu: f64,
    pub gaussian_sigma: f64,
}

impl SyntheticConfig {
    /// Default four category pairs (burger/TV crossed with price/quality)
    /// and their word bags; multi-word entries are underscore-joined so each
    /// bag entry is a single token.
    pub fn with_default_bags(num_docs: usize, seed: u64) -> Self {
        let bag = |product: &str, description: &str, words: &[&str]| CategoryBag {
            product: product.into(),
            description: description.into(),
            words: words
                .iter()
                .map(|w| w.split_whitespace().collect::<Vec<_>>().join("_"))
                .collect(),
        };
        SyntheticConfig {
            num_docs,
            min_len: 1,
            max_len: 5,
            seed,
            bags: vec![
                bag(
                    "burger",
                    "price",
                    &[
                        "value",
                        "pricey",
                        "ouch",
                        "steep",
                        "cheap",
                        "value",
                        "reason",
                        "accept",
                        "unreason",
                        "unacceptable",
                    ],
                ),
                bag(
                    "burger",
                    "quality",
                    &[
                        "nasty",
                        "fantastic",
                        "delicious",
                        "tasty",
                        "juicy",
                        "unreason",
                        "unacceptable",
                        "reason",
                        "accept",
                        "fresh",
                    ],
                ),
                bag(
                    "TV",
                    "price",
                    &[
                        "promotion",
                        "affordable",
                        "value",
                        "increase",
                        "expensive",
                        "tasty",
                        "economical",
                        "fancy",
                        "okay",
                    ],
                ),
                bag(
                    "TV",
                    "quality",
                    &[
                        "fabulous",
                        "fantastic",
                        "promising",
                        "sharp",
                        "large",
                        "clear",
                        "eco friendly",
                        "fresh",
                        "pixilated",
                    ],
                ),
            ],
            gaussian_mu: 3.0,
            gaussian_sigma: 1.0,
        }
    }
}

/// Generates a synthetic corpus: each document picks a category pair
/// uniformly, a length uniformly in `min_len..=max_len`, and words uniformly
/// with replacement from the pair's bag. Side features are `product` and
/// `description`; `group` is `product_description`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Corpus> {
    if config.bags.is_empty() {
        return Err(Error::Config("synthetic bags must be non-empty".into()));
    }
    if config.num_docs == 0 {
        return Err(Error::Config("num_docs must be at least 1".into()));
    }
    if config.min_len < 1 || config.min_len > config.max_len {
        return Err(Error::Config(format!(
            "need 1 <= min_len <= max_len, got {}..{}",
            config.min_len, config.max_len
        )));
    }
    let bags: Vec<CategoryBag> = config
        .bags
        .iter()
        .map(|b| CategoryBag {
            product: b.product.clone(),
            description: b.description.clone(),
            words: b
                .words
                .iter()
                .map(|w| w.split_whitespace().collect::<Vec<_>>().join("_"))
                .collect(),
        })
        .collect();
    for bag in &bags {
        if bag.words.is_empty() || bag.words.iter().any(|w| w.is_empty()) {
            return Err(Error::Config(format!(
                "bag ({}, {}) has an empty word list or empty entries",
                bag.product, bag.description
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut drawn: Vec<(Vec<String>, usize)> = Vec::with_capacity(config.num_docs);
    for _ in 0..config.num_docs {
        let bag_idx = rng.random_range(0..bags.len());
        let len = rng.random_range(config.min_len..=config.max_len);
        let words = (0..len)
            .map(|_| bags[bag_idx].words[rng.random_range(0..bags[bag_idx].words.len())].clone())
            .collect();
        drawn.push((words, bag_idx));
    }

    let vocabulary = Vocabulary::from_terms(drawn.iter().flat_map(|(w, _)| w.iter().cloned()));
    let present: BTreeSet<usize> = drawn.iter().map(|&(_, b)| b).collect();
    let feature = |name: &str, value: fn(&CategoryBag) -> &String| SideFeature {
        name: name.into(),
        levels: present
            .iter()
            .map(|&b| value(&bags[b]).clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let side_schema = SideSchema {
        features: vec![
            feature("product", |b| &b.product),
            feature("description", |b| &b.description),
        ],
    };

    let mut docs = Vec::with_capacity(config.num_docs);
    for (words, bag_idx) in drawn {
        let bag = &bags[bag_idx];
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for w in &words {
            *counts.entry(vocabulary.id(w).expect("generated word")).or_insert(0) += 1;
        }
        docs.push(Document {
            counts: counts.into_iter().collect(),
            side: side_schema.encode(&[&bag.product, &bag.description])?,
            label: None,
            group: Some(format!("{}_{}", bag.product, bag.description)),
        });
    }
    Corpus::new(docs, vocabulary, side_schema)
}

/// How to split a corpus: hold out a fraction, or take one of `num_folds`
/// cross-validation folds as the test side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSpec {
    HeldOutFraction(f64),
    Fold { fold: usize, num_folds: usize },
}

/// Splits into (train, test). The shuffle is a pure function of the seed, so
/// the fold test sets for a fixed seed partition the corpus exactly; within
/// each side, documents keep their original corpus order. Both sides share
/// the vocabulary and side schema.
pub fn split(corpus: &Corpus, spec: SplitSpec, seed: u64) -> Result<(Corpus, Corpus)> {
    let m = corpus.num_docs();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut test_idx: Vec<usize> = match spec {
        SplitSpec::HeldOutFraction(frac) => {
            if !(frac > 0.0 && frac < 1.0) {
                return Err(Error::Config(format!(
                    "held-out fraction must be in (0, 1), got {frac}"
                )));
            }
            if m < 2 {
                return Err(Error::Config(
                    "need at least 2 documents to split by fraction".into(),
                ));
            }
            let n_test = ((frac * m as f64).round() as usize).clamp(1, m - 1);
            order[..n_test].to_vec()
        }
        SplitSpec::Fold { fold, num_folds } => {
            if num_folds < 2 {
                return Err(Error::Config(format!(
                    "num_folds must be at least 2, got {num_folds}"
                )));
            }
            if fold >= num_folds {
                return Err(Error::Config(format!(
                    "fold {fold} out of range for {num_folds} folds"
                )));
            }
            if m < num_folds {
                return Err(Error::Config(format!(
                    "corpus has {m} documents, fewer than {num_folds} folds"
                )));
            }
            let base = m / num_folds;
            let rem = m % num_folds;
            let start = fold * base + fold.min(rem);
            let size = base + usize::from(fold < rem);
            order[start..start + size].to_vec()
        }
    };
    test_idx.sort_unstable();
    let in_test = {
        let mut mask = vec![false; m];
        for &i in &test_idx {
            mask[i] = true;
        }
        mask
    };
    let take = |keep: &dyn Fn(usize) -> bool| Corpus {
        docs: corpus
            .docs
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, d)| d.clone())
            .collect(),
        vocabulary: corpus.vocabulary.clone(),
        side_schema: corpus.side_schema.clone(),
    };
    let train = take(&|i| !in_test[i]);
    let test = take(&|i| in_test[i]);
    Ok((train, test))
}
