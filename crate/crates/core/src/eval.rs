//! Span-level scoring, token confusion matrices and pairwise model
//! comparison, with plain-text and line-delimited JSON renderings.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{Dataset, Label, TokenizedPost};
use crate::error::{Error, Result};
use crate::spans::SpanSet;

/// Default cap on listed disagreement examples.
pub const DEFAULT_DISAGREEMENT_CAP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Character-set precision, recall and F1. Two empty sets score 1; exactly
/// one empty set scores 0.
pub fn span_f1(gold: &BTreeSet<usize>, pred: &BTreeSet<usize>) -> Prf {
    match (gold.is_empty(), pred.is_empty()) {
        (true, true) => {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            }
        }
        (true, false) | (false, true) => {
            return Prf {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            }
        }
        _ => {}
    }
    let overlap = gold.intersection(pred).count() as f64;
    let precision = overlap / pred.len() as f64;
    let recall = overlap / gold.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PostScore {
    pub id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanF1Result {
    pub per_post: Vec<PostScore>,
    pub macro_f1: f64,
}

/// Mean per-post span F1 over every post of `dataset`.
pub fn macro_f1(dataset: &Dataset, predictions: &HashMap<String, SpanSet>) -> Result<SpanF1Result> {
    let missing: Vec<String> = dataset
        .posts
        .iter()
        .filter(|p| !predictions.contains_key(&p.id))
        .map(|p| p.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    let per_post = dataset
        .posts
        .iter()
        .map(|post| {
            let gold = post
                .gold_offsets
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("post {:?} has no gold offsets", post.id)))?;
            let prf = span_f1(gold, predictions[&post.id].offsets());
            Ok(PostScore {
                id: post.id.clone(),
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpanF1Result {
        macro_f1: mean(per_post.iter().map(|p| p.f1)),
        per_post,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Token-level counts with Toxic as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, gold: usize, pred: usize) {
        let toxic = Label::Toxic.index();
        match (gold == toxic, pred == toxic) {
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (true, true) => self.tp += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.tn + self.tp) as f64 / self.total() as f64
        }
    }
}

pub fn token_confusion(gold: &[usize], pred: &[usize]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::Length {
            expected: gold.len(),
            found: pred.len(),
        });
    }
    let mut m = ConfusionMatrix::default();
    for (&g, &p) in gold.iter().zip(pred) {
        m.record(g, p);
    }
    Ok(m)
}

/// Per-cell `b - a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CellDeltas {
    pub tn: i64,
    pub fp: i64,
    #[serde(rename = "fn")]
    pub fn_: i64,
    pub tp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Disagreement {
    pub post_id: String,
    pub char_start: usize,
    pub surface: String,
    pub gold: Label,
    pub pred_a: Label,
    pub pred_b: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparison {
    pub matrix_a: ConfusionMatrix,
    pub matrix_b: ConfusionMatrix,
    pub deltas: CellDeltas,
    /// Tokens remaining after dropping those both models correctly left
    /// non-toxic.
    pub retained: u64,
    /// Retained tokens where at least one model disagrees with gold, before
    /// capping.
    pub disagreement_total: usize,
    pub disagreements: Vec<Disagreement>,
}

impl ModelComparison {
    /// Accuracy gain of model B over model A on the retained subset, in
    /// percentage points.
    pub fn accuracy_gain_points(&self) -> f64 {
        100.0 * (self.matrix_b.accuracy() - self.matrix_a.accuracy())
    }
}

/// Orders ids numerically when both are integers, otherwise as strings.
pub(crate) fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

fn label(index: usize) -> Label {
    Label::from_index(index).unwrap_or(Label::Toxic)
}

/// Confusion matrices of two models over the tokens that are not
/// "gold non-toxic and predicted non-toxic by both".
pub fn filtered_pairwise_comparison(
    posts: &[TokenizedPost],
    gold: &[Vec<usize>],
    preds_a: &[Vec<usize>],
    preds_b: &[Vec<usize>],
    cap: usize,
) -> Result<ModelComparison> {
    for streams in [gold, preds_a, preds_b] {
        if streams.len() != posts.len() {
            return Err(Error::Length {
                expected: posts.len(),
                found: streams.len(),
            });
        }
    }
    let non_toxic = Label::NonToxic.index();
    let mut matrix_a = ConfusionMatrix::default();
    let mut matrix_b = ConfusionMatrix::default();
    let mut disagreements = Vec::new();
    for (i, post) in posts.iter().enumerate() {
        let n = post.tokens.len();
        for stream in [&gold[i], &preds_a[i], &preds_b[i]] {
            if stream.len() != n {
                return Err(Error::Invalid(format!(
                    "post {:?}: {} labels for {n} tokens",
                    post.post.id,
                    stream.len()
                )));
            }
        }
        for (t, token) in post.tokens.iter().enumerate() {
            let (g, a, b) = (gold[i][t], preds_a[i][t], preds_b[i][t]);
            if g == non_toxic && a == non_toxic && b == non_toxic {
                continue;
            }
            matrix_a.record(g, a);
            matrix_b.record(g, b);
            if a != g || b != g {
                disagreements.push(Disagreement {
                    post_id: post.post.id.clone(),
                    char_start: token.char_start,
                    surface: token.surface.clone(),
                    gold: label(g),
                    pred_a: label(a),
                    pred_b: label(b),
                });
            }
        }
    }
    disagreements.sort_by(|x, y| {
        compare_ids(&x.post_id, &y.post_id).then(x.char_start.cmp(&y.char_start))
    });
    let disagreement_total = disagreements.len();
    disagreements.truncate(cap);
    let delta = |a: u64, b: u64| b as i64 - a as i64;
    Ok(ModelComparison {
        deltas: CellDeltas {
            tn: delta(matrix_a.tn, matrix_b.tn),
            fp: delta(matrix_a.fp, matrix_b.fp),
            fn_: delta(matrix_a.fn_, matrix_b.fn_),
            tp: delta(matrix_a.tp, matrix_b.tp),
        },
        retained: matrix_a.total(),
        matrix_a,
        matrix_b,
        disagreement_total,
        disagreements,
    })
}

/// Scores in the five-decimal layout of a results table.
pub fn format_score(value: f64) -> String {
    format!("{value:.5}")
}

pub fn render_f1_text(name: &str, result: &SpanF1Result, per_post: bool) -> String {
    let mut out = String::new();
    writeln!(out, "{:<32} {:>8}", "Model", "F1").unwrap();
    writeln!(out, "{:<32} {:>8}", name, format_score(result.macro_f1)).unwrap();
    if per_post {
        writeln!(out).unwrap();
        writeln!(out, "{:<16} {:>9} {:>9} {:>9}", "id", "precision", "recall", "f1").unwrap();
        for p in &result.per_post {
            writeln!(
                out,
                "{:<16} {:>9} {:>9} {:>9}",
                p.id,
                format_score(p.precision),
                format_score(p.recall),
                format_score(p.f1)
            )
            .unwrap();
        }
    }
    out
}

pub fn render_f1_jsonl(name: &str, result: &SpanF1Result, per_post: bool) -> String {
    #[derive(Serialize)]
    struct Summary<'a> {
        record: &'static str,
        model: &'a str,
        macro_f1: f64,
        posts: usize,
    }
    #[derive(Serialize)]
    struct Row<'a> {
        record: &'static str,
        #[serde(flatten)]
        score: &'a PostScore,
    }
    let mut out = String::new();
    let summary = Summary {
        record: "macro_f1",
        model: name,
        macro_f1: result.macro_f1,
        posts: result.per_post.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&summary).unwrap()).unwrap();
    if per_post {
        for score in &result.per_post {
            let row = Row { record: "post", score };
            writeln!(out, "{}", serde_json::to_string(&row).unwrap()).unwrap();
        }
    }
    out
}

fn render_matrix(out: &mut String, title: &str, m: &ConfusionMatrix) {
    writeln!(out, "{title}").unwrap();
    writeln!(out, "{:<18} {:>10} {:>10}", "True \\ Predicted", "Non-Toxic", "Toxic").unwrap();
    writeln!(out, "{:<18} {:>10} {:>10}", "Non-Toxic", m.tn, m.fp).unwrap();
    writeln!(out, "{:<18} {:>10} {:>10}", "Toxic", m.fn_, m.tp).unwrap();
}

pub fn render_comparison_text(name_a: &str, name_b: &str, cmp: &ModelComparison) -> String {
    let mut out = String::new();
    writeln!(out, "Pairwise comparison: A = {name_a}, B = {name_b}").unwrap();
    writeln!(
        out,
        "Tokens: gold non-toxic tokens predicted non-toxic by both models removed"
    )
    .unwrap();
    if cmp.retained == 0 {
        return out;
    }
    writeln!(out, "Retained tokens: {}", cmp.retained).unwrap();
    writeln!(out).unwrap();
    render_matrix(&mut out, &format!("A: {name_a}"), &cmp.matrix_a);
    writeln!(out).unwrap();
    render_matrix(&mut out, &format!("B: {name_b}"), &cmp.matrix_b);
    writeln!(out).unwrap();
    let d = &cmp.deltas;
    writeln!(
        out,
        "Delta (B - A): tn {:+} fp {:+} fn {:+} tp {:+}",
        d.tn, d.fp, d.fn_, d.tp
    )
    .unwrap();
    writeln!(
        out,
        "Accuracy on subset: A {} B {} (change {:+.3} points)",
        format_score(cmp.matrix_a.accuracy()),
        format_score(cmp.matrix_b.accuracy()),
        cmp.accuracy_gain_points()
    )
    .unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "Errors ({} shown of {}):",
        cmp.disagreements.len(),
        cmp.disagreement_total
    )
    .unwrap();
    writeln!(out, "{:<12} {:>6} {:<20} {:<9} {:<9} {:<9}", "id", "offset", "token", "gold", "A", "B").unwrap();
    for x in &cmp.disagreements {
        writeln!(
            out,
            "{:<12} {:>6} {:<20} {:<9} {:<9} {:<9}",
            x.post_id,
            x.char_start,
            x.surface,
            x.gold.name(),
            x.pred_a.name(),
            x.pred_b.name()
        )
        .unwrap();
    }
    out
}

pub fn render_comparison_jsonl(name_a: &str, name_b: &str, cmp: &ModelComparison) -> String {
    #[derive(Serialize)]
    struct Summary<'a> {
        record: &'static str,
        model_a: &'a str,
        model_b: &'a str,
        retained: u64,
        matrix_a: ConfusionMatrix,
        matrix_b: ConfusionMatrix,
        deltas: CellDeltas,
        accuracy_a: f64,
        accuracy_b: f64,
        disagreement_total: usize,
    }
    #[derive(Serialize)]
    struct Row<'a> {
        record: &'static str,
        #[serde(flatten)]
        item: &'a Disagreement,
    }
    let mut out = String::new();
    let summary = Summary {
        record: "comparison",
        model_a: name_a,
        model_b: name_b,
        retained: cmp.retained,
        matrix_a: cmp.matrix_a,
        matrix_b: cmp.matrix_b,
        deltas: cmp.deltas,
        accuracy_a: cmp.matrix_a.accuracy(),
        accuracy_b: cmp.matrix_b.accuracy(),
        disagreement_total: cmp.disagreement_total,
    };
    writeln!(out, "{}", serde_json::to_string(&summary).unwrap()).unwrap();
    for item in &cmp.disagreements {
        writeln!(out, "{}", serde_json::to_string(&Row { record: "error", item }).unwrap()).unwrap();
    }
    out
}
