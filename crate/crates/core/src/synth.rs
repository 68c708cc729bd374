//! Seeded synthetic corpus: pseudo-word posts whose gold spans are exactly
//! the hits of a hidden toxic lexicon (adjacent hits separated only by
//! whitespace form one span).

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Post};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub posts: usize,
    /// Distinct words, lexicon included.
    pub vocab: usize,
    pub lexicon: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a word slot is drawn from the lexicon.
    pub toxic_rate: f64,
    /// Probability of a punctuation mark after a word.
    pub punct_rate: f64,
    /// Fractions of posts in the train and validation splits; the rest is
    /// test.
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 2021,
            posts: 2000,
            vocab: 500,
            lexicon: 30,
            min_words: 4,
            max_words: 16,
            toxic_rate: 0.1,
            punct_rate: 0.12,
            train_fraction: 0.7,
            validation_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// The toxic lexicon, in generation order.
    pub lexicon: Vec<String>,
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "gr", "st", "tr", "pl", "sn",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const PUNCT: &[&str] = &[",", ".", "!", "?"];

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    if rng.gen_bool(0.3) {
        w.push_str(["n", "k", "x", "sh"].choose(rng).unwrap());
    }
    w
}

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    assert!(config.lexicon <= config.vocab, "lexicon larger than vocabulary");
    assert!(config.min_words >= 1 && config.min_words <= config.max_words);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut seen = HashSet::new();
    let mut vocab = Vec::with_capacity(config.vocab);
    while vocab.len() < config.vocab {
        let w = pseudo_word(&mut rng);
        if seen.insert(w.clone()) {
            vocab.push(w);
        }
    }
    let (lexicon, benign) = vocab.split_at(config.lexicon);

    let mut posts = Vec::with_capacity(config.posts);
    for index in 0..config.posts {
        let words = rng.gen_range(config.min_words..=config.max_words);
        let mut text: Vec<char> = Vec::new();
        let mut gold = BTreeSet::new();
        // whether the previous word was toxic and nothing but a space follows it
        let mut open_span = false;
        for slot in 0..words {
            if slot > 0 {
                if open_span {
                    gold.insert(text.len());
                }
                text.push(' ');
            }
            let toxic = !lexicon.is_empty() && (benign.is_empty() || rng.gen_bool(config.toxic_rate));
            let mut word = if toxic {
                lexicon.choose(&mut rng).unwrap().clone()
            } else {
                benign.choose(&mut rng).unwrap().clone()
            };
            match rng.gen_range(0..20) {
                0 => word = word.to_uppercase(),
                1 | 2 => {
                    let mut c = word.chars();
                    let first = c.next().unwrap().to_uppercase().collect::<String>();
                    word = first + c.as_str();
                }
                _ => {}
            }
            let start = text.len();
            text.extend(word.chars());
            if toxic {
                gold.extend(start..text.len());
            } else if open_span {
                // the space before a non-toxic word is not part of a span
                gold.remove(&(start - 1));
            }
            open_span = toxic;
            if rng.gen_bool(config.punct_rate) {
                text.extend(PUNCT.choose(&mut rng).unwrap().chars());
                open_span = false;
            }
        }
        let text: String = text.into_iter().collect();
        posts.push(Post {
            id: index.to_string(),
            text,
            gold_offsets: Some(gold),
        });
    }

    let n_train = (config.posts as f64 * config.train_fraction).round() as usize;
    let n_val = (config.posts as f64 * config.validation_fraction).round() as usize;
    let n_val = n_val.min(config.posts - n_train.min(config.posts));
    let test = posts.split_off((n_train + n_val).min(posts.len()));
    let validation = posts.split_off(n_train.min(posts.len()));
    SynthCorpus {
        train: Dataset::new(posts, "train").expect("unique ids"),
        validation: Dataset::new(validation, "validation").expect("unique ids"),
        test: Dataset::new(test, "test").expect("unique ids"),
        lexicon: lexicon.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, TokenizedPost};
    use crate::spans::labels_to_spans;

    #[test]
    fn sizes_and_determinism() {
        let config = SynthConfig::default();
        let a = generate(&config);
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (1400, 300, 300));
        assert_eq!(a.lexicon.len(), 30);
        let b = generate(&config);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = generate(&SynthConfig { seed: 7, ..config });
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn gold_is_decodable_from_lexicon_hits() {
        let corpus = generate(&SynthConfig::default());
        let lexicon: HashSet<&str> = corpus.lexicon.iter().map(String::as_str).collect();
        let mut toxic_posts = 0;
        for post in corpus.train.posts.iter().chain(&corpus.test.posts) {
            let tokens = tokenize(&post.text);
            let labels: Vec<usize> = tokens
                .iter()
                .map(|t| usize::from(lexicon.contains(t.folded().as_str())))
                .collect();
            let decoded = labels_to_spans(&tokens, &labels, &post.text).unwrap();
            assert_eq!(decoded.offsets(), post.gold_offsets.as_ref().unwrap(), "post {}", post.id);
            let projected = TokenizedPost::from_post(post.clone()).gold_indices().unwrap();
            assert_eq!(projected, labels);
            toxic_posts += usize::from(labels.contains(&1));
        }
        assert!(toxic_posts > 500);
    }
}
