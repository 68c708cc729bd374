//! Token-level augmentation features: a per-post max-normalized TF-IDF weight
//! and a binary word-list membership flag.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Dataset, Token};
use crate::error::{Error, Result};

pub const TFIDF_FORMAT_VERSION: u32 = 1;

/// Which extra features are appended to each token vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    #[default]
    None,
    #[value(name = "tfidf")]
    #[serde(rename = "tfidf")]
    TfIdf,
    WordList,
    Both,
}

impl AugmentMode {
    /// Number of appended coordinates.
    pub fn extra_dims(self) -> usize {
        match self {
            AugmentMode::None => 0,
            AugmentMode::TfIdf | AugmentMode::WordList => 1,
            AugmentMode::Both => 2,
        }
    }

    pub fn uses_tfidf(self) -> bool {
        matches!(self, AugmentMode::TfIdf | AugmentMode::Both)
    }

    pub fn uses_word_list(self) -> bool {
        matches!(self, AugmentMode::WordList | AugmentMode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TokenFeatures {
    /// In `[0, 1]`.
    pub tfidf: f64,
    /// 0 or 1.
    pub in_word_list: u8,
}

/// Document frequencies of case-folded whole-word terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    pub n_docs: usize,
    pub document_frequency: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TfIdfRecord {
    version: u32,
    n_docs: usize,
    terms: Vec<(String, usize)>,
}

impl TfIdfModel {
    pub fn df(&self, term: &str) -> usize {
        self.document_frequency.get(term).copied().unwrap_or(0)
    }

    /// Smoothed inverse document frequency, `ln((1 + n) / (1 + df)) + 1`.
    pub fn idf(&self, term: &str) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.df(term) as f64)).ln() + 1.0
    }

    pub fn to_json(&self) -> String {
        let record = TfIdfRecord {
            version: TFIDF_FORMAT_VERSION,
            n_docs: self.n_docs,
            terms: self
                .document_frequency
                .iter()
                .map(|(t, &df)| (t.clone(), df))
                .collect(),
        };
        serde_json::to_string(&record).expect("plain data serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let record: TfIdfRecord =
            serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
        if record.version != TFIDF_FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "tf-idf model version {} (expected {TFIDF_FORMAT_VERSION})",
                record.version
            )));
        }
        if record.n_docs == 0 {
            return Err(Error::Format("tf-idf model with zero documents".into()));
        }
        let mut document_frequency = BTreeMap::new();
        for (term, df) in record.terms {
            if df == 0 || df > record.n_docs {
                return Err(Error::Format(format!(
                    "document frequency {df} of {term:?} outside [1, {}]",
                    record.n_docs
                )));
            }
            document_frequency.insert(term, df);
        }
        Ok(TfIdfModel {
            n_docs: record.n_docs,
            document_frequency,
        })
    }
}

pub fn fit_tfidf(training: &Dataset) -> Result<TfIdfModel> {
    if training.is_empty() {
        return Err(Error::Invalid("cannot fit tf-idf on an empty dataset".into()));
    }
    let mut document_frequency = BTreeMap::new();
    for post in &training.posts {
        let terms: BTreeSet<String> = tokenize(&post.text).iter().map(Token::folded).collect();
        for term in terms {
            *document_frequency.entry(term).or_insert(0) += 1;
        }
    }
    Ok(TfIdfModel {
        n_docs: training.len(),
        document_frequency,
    })
}

/// Raw term counts of a post's tokens, keyed by case-folded surface.
pub fn term_counts(tokens: &[Token]) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for token in tokens {
        *counts.entry(token.folded()).or_insert(0) += 1;
    }
    counts
}

fn raw_weight(model: &TfIdfModel, term: &str, doc_term_counts: &HashMap<String, usize>) -> f64 {
    let tf = doc_term_counts.get(term).copied().unwrap_or(0) as f64;
    tf * model.idf(term)
}

/// Normalized TF-IDF weight of `token` within the post whose term counts are
/// `doc_term_counts`: raw weight divided by the largest raw weight in the post.
pub fn tfidf_weight(model: &TfIdfModel, token: &Token, doc_term_counts: &HashMap<String, usize>) -> f64 {
    let max = doc_term_counts
        .keys()
        .map(|term| raw_weight(model, term, doc_term_counts))
        .fold(0.0, f64::max);
    if max > 0.0 {
        raw_weight(model, &token.folded(), doc_term_counts) / max
    } else {
        0.0
    }
}

/// Normalized TF-IDF weights for every token of one post.
pub fn tfidf_weights(model: &TfIdfModel, tokens: &[Token]) -> Vec<f64> {
    let counts = term_counts(tokens);
    let raw: Vec<f64> = tokens
        .iter()
        .map(|t| raw_weight(model, &t.folded(), &counts))
        .collect();
    max_normalize(&raw)
}

pub(crate) fn max_normalize(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        raw.iter().map(|r| r / max).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

/// Case-folded lexicon of toxic terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordList {
    pub terms: BTreeSet<String>,
}

impl WordList {
    /// Parses one term per line; blank lines and `#` comments are skipped.
    pub fn parse(contents: &str) -> Result<Self> {
        let mut terms = BTreeSet::new();
        for line in contents.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!("word list term {line:?} contains whitespace")));
            }
            terms.insert(line.to_lowercase());
        }
        if terms.is_empty() {
            return Err(Error::Invalid("empty word list".into()));
        }
        Ok(WordList { terms })
    }

    pub fn contains(&self, token: &Token) -> bool {
        let folded = token.folded();
        let stripped = folded.trim_matches(|c: char| !c.is_alphanumeric());
        self.terms.contains(stripped)
    }
}

/// Lexicon shipped with the crate and used when no list is given.
pub const DEFAULT_WORD_LIST: &str = include_str!("../data/default_wordlist.txt");

pub fn load_word_list(path: &Path) -> Result<WordList> {
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    WordList::parse(&contents)
}

pub fn word_list_flag(list: &WordList, token: &Token) -> u8 {
    u8::from(list.contains(token))
}

/// Appends the features selected by `mode` to `vector` (tf-idf first, then
/// the flag).
pub fn augment(vector: &[f64], features: TokenFeatures, mode: AugmentMode) -> Vec<f64> {
    let mut out = Vec::with_capacity(vector.len() + mode.extra_dims());
    out.extend_from_slice(vector);
    if mode.uses_tfidf() {
        out.push(features.tfidf);
    }
    if mode.uses_word_list() {
        out.push(f64::from(features.in_word_list));
    }
    out
}

/// Fitted feature models carried alongside a trained classifier.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureModels {
    pub tfidf: Option<TfIdfModel>,
    pub word_list: Option<WordList>,
}

impl FeatureModels {
    /// Per-token features for one post. Features whose model is absent are 0.
    pub fn token_features(&self, tokens: &[Token]) -> Vec<TokenFeatures> {
        let tfidf = match &self.tfidf {
            Some(model) => tfidf_weights(model, tokens),
            None => vec![0.0; tokens.len()],
        };
        tokens
            .iter()
            .zip(tfidf)
            .map(|(token, tfidf)| TokenFeatures {
                tfidf,
                in_word_list: self
                    .word_list
                    .as_ref()
                    .map_or(0, |list| word_list_flag(list, token)),
            })
            .collect()
    }
}
