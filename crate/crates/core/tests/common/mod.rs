//! Brute-force oracles shared by the integration and acceptance tests. They
//! deliberately avoid the library's own scoring paths.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use toxspan::corpus::{Dataset, Post, Token};
use toxspan::encoder::{TrainableConfig, TrainableEncoder};
use toxspan::features::{AugmentMode, TokenFeatures};
use toxspan::model::{CrfParameters, EmissionScores, HeadKind, Network, PostInput, TokenSource};

/// Every label sequence of length `t` over `l` labels, in lexicographic order.
pub fn all_paths(t: usize, l: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![Vec::new()];
    for _ in 0..t {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..l).map(move |label| {
                    let mut q = p.clone();
                    q.push(label);
                    q
                })
            })
            .collect();
    }
    paths
}

pub fn path_score(crf: &CrfParameters, e: &EmissionScores, y: &[usize]) -> f64 {
    let l = crf.num_labels;
    let mut s = 0.0;
    for (t, &label) in y.iter().enumerate() {
        s += e.as_slice()[t * l + label];
    }
    for w in y.windows(2) {
        s += crf.transitions[w[0] * l + w[1]];
    }
    if let (Some(&a), Some(&b)) = (y.first(), y.last()) {
        s += crf.start[a] + crf.end[b];
    }
    s
}

/// `ln Σ exp(score)` over every path, by enumeration.
pub fn brute_log_partition(crf: &CrfParameters, e: &EmissionScores) -> f64 {
    let scores: Vec<f64> = all_paths(e.num_tokens(), crf.num_labels)
        .iter()
        .map(|y| path_score(crf, e, y))
        .collect();
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Best path by enumeration. Among equal scores the winner has the lowest
/// label at the last position, then at the one before, and so on.
pub fn brute_viterbi(crf: &CrfParameters, e: &EmissionScores) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for y in all_paths(e.num_tokens(), crf.num_labels) {
        let s = path_score(crf, e, &y);
        let better = match &best {
            None => true,
            Some((bs, by)) => s > *bs || (s == *bs && y.iter().rev().lt(by.iter().rev())),
        };
        if better {
            best = Some((s, y));
        }
    }
    best.map(|(_, y)| y).unwrap_or_default()
}

pub fn random_crf<R: Rng>(rng: &mut R, l: usize, lo: f64, hi: f64) -> CrfParameters {
    let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(lo..=hi)).collect::<Vec<f64>>();
    let transitions = draw(l * l);
    let start = draw(l);
    let end = draw(l);
    CrfParameters::new(l, transitions, start, end).unwrap()
}

pub fn random_emissions<R: Rng>(rng: &mut R, t: usize, l: usize, lo: f64, hi: f64) -> EmissionScores {
    EmissionScores::new(t, l, (0..t * l).map(|_| rng.gen_range(lo..=hi)).collect()).unwrap()
}

/// Integer-valued parameters in `[-k, k]`, so that exact ties are common.
pub fn integer_crf<R: Rng>(rng: &mut R, l: usize, k: i32) -> CrfParameters {
    let mut draw = |n: usize| (0..n).map(|_| f64::from(rng.gen_range(-k..=k))).collect::<Vec<f64>>();
    let transitions = draw(l * l);
    let start = draw(l);
    let end = draw(l);
    CrfParameters::new(l, transitions, start, end).unwrap()
}

pub fn integer_emissions<R: Rng>(rng: &mut R, t: usize, l: usize, k: i32) -> EmissionScores {
    EmissionScores::new(t, l, (0..t * l).map(|_| f64::from(rng.gen_range(-k..=k))).collect()).unwrap()
}

/// Per-character span F1 with boolean masks, averaged over posts.
pub fn naive_macro_f1(posts: &[(usize, BTreeSet<usize>, BTreeSet<usize>)]) -> f64 {
    let mut total = 0.0;
    for (len, gold, pred) in posts {
        let extent = gold.iter().chain(pred).map(|&o| o + 1).max().unwrap_or(0).max(*len);
        let g: Vec<bool> = (0..extent).map(|i| gold.contains(&i)).collect();
        let p: Vec<bool> = (0..extent).map(|i| pred.contains(&i)).collect();
        let (mut tp, mut ng, mut np) = (0.0, 0.0, 0.0);
        for i in 0..extent {
            if g[i] {
                ng += 1.0;
            }
            if p[i] {
                np += 1.0;
            }
            if g[i] && p[i] {
                tp += 1.0;
            }
        }
        let f1 = if ng == 0.0 && np == 0.0 {
            1.0
        } else if ng == 0.0 || np == 0.0 {
            0.0
        } else {
            let precision = tp / np;
            let recall = tp / ng;
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        };
        total += f1;
    }
    total / posts.len() as f64
}

/// Random post text from a small alphabet with spaces and punctuation.
pub fn random_text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'c', 'X', 'é', '1', ' ', ' ', ' ', '.', ',', '!', '\'', '’'];
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

pub fn random_offsets<R: Rng>(rng: &mut R, len: usize, density: f64) -> BTreeSet<usize> {
    (0..len).filter(|_| rng.gen_bool(density)).collect()
}

/// Dataset and prediction map built from `(text, gold, pred)` triples.
pub fn dataset_and_predictions(
    items: &[(String, BTreeSet<usize>, BTreeSet<usize>)],
) -> (Dataset, HashMap<String, toxspan::spans::SpanSet>) {
    let posts = items
        .iter()
        .enumerate()
        .map(|(i, (text, gold, _))| Post::new(i.to_string(), text.clone(), Some(gold.clone())).unwrap())
        .collect();
    let preds = items
        .iter()
        .enumerate()
        .map(|(i, (_, _, pred))| (i.to_string(), toxspan::spans::SpanSet::new(pred.clone())))
        .collect();
    (Dataset::new(posts, "oracle").unwrap(), preds)
}

/// Small network with every parameter drawn at random, so that no gradient
/// is trivially zero.
pub fn random_network<R: Rng>(rng: &mut R, mode: AugmentMode, head: HeadKind, config: TrainableConfig) -> Network {
    let encoder = TrainableEncoder::init(config, rng).unwrap();
    let mut net = Network::new(mode, head, Some(encoder), 0, 2);
    for (_, group) in net.param_groups_mut() {
        for x in group.iter_mut() {
            *x = rng.gen_range(-0.5..=0.5);
        }
    }
    net
}

pub fn random_input<R: Rng>(rng: &mut R, len: usize, table_size: usize) -> PostInput {
    let tokens: Vec<Token> = (0..len).map(|i| Token::new(format!("w{i}"), 3 * i, 3 * i + 2)).collect();
    let features = (0..len)
        .map(|_| TokenFeatures {
            tfidf: rng.gen_range(0.0..=1.0),
            in_word_list: rng.gen_range(0..=1),
        })
        .collect();
    let rows = (0..len).map(|_| rng.gen_range(0..table_size)).collect();
    PostInput {
        id: "p".into(),
        text: tokens.iter().map(|t| format!("{} ", t.surface)).collect(),
        tokens,
        features,
        source: TokenSource::Hashed(rows),
    }
}

/// Central-difference derivative of `f` at `x[i]`.
pub fn central_difference(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Relative error with a floor on the denominator: below 1e-6 in magnitude
/// both values are at the level of finite-difference noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
