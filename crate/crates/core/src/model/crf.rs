//! Linear-chain CRF: path scores, log-partition via the log-domain forward
//! recursion, forward-backward marginals, negative log-likelihood gradients
//! and Viterbi decoding. Everything is generic in the number of labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T x L` matrix of per-token label scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionScores {
    tokens: usize,
    labels: usize,
    data: Vec<f64>,
}

impl EmissionScores {
    pub fn new(tokens: usize, labels: usize, data: Vec<f64>) -> Result<Self> {
        if labels == 0 {
            return Err(Error::Invalid("emission scores need at least one label".into()));
        }
        if data.len() != tokens * labels {
            return Err(Error::Length {
                expected: tokens * labels,
                found: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!("non-finite emission score {bad}")));
        }
        Ok(EmissionScores { tokens, labels, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let labels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != labels) {
            return Err(Error::Invalid("ragged emission rows".into()));
        }
        Self::new(rows.len(), labels, rows.concat())
    }

    pub fn zeros(tokens: usize, labels: usize) -> Self {
        EmissionScores {
            tokens,
            labels,
            data: vec![0.0; tokens * labels],
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens
    }

    pub fn num_labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, t: usize, label: usize) -> f64 {
        self.data[t * self.labels + label]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.labels..(t + 1) * self.labels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParameters {
    pub num_labels: usize,
    /// `transitions[i * L + j]` scores label `i` followed by label `j`.
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfParameters {
    pub fn zeros(num_labels: usize) -> Self {
        CrfParameters {
            num_labels,
            transitions: vec![0.0; num_labels * num_labels],
            start: vec![0.0; num_labels],
            end: vec![0.0; num_labels],
        }
    }

    pub fn new(num_labels: usize, transitions: Vec<f64>, start: Vec<f64>, end: Vec<f64>) -> Result<Self> {
        if transitions.len() != num_labels * num_labels {
            return Err(Error::Length {
                expected: num_labels * num_labels,
                found: transitions.len(),
            });
        }
        for v in [&start, &end] {
            if v.len() != num_labels {
                return Err(Error::Length {
                    expected: num_labels,
                    found: v.len(),
                });
            }
        }
        if transitions.iter().chain(&start).chain(&end).any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite CRF parameter".into()));
        }
        Ok(CrfParameters {
            num_labels,
            transitions,
            start,
            end,
        })
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.num_labels + to]
    }

    fn check(&self, e: &EmissionScores) -> Result<()> {
        if e.num_labels() != self.num_labels {
            return Err(Error::Dimension {
                expected: self.num_labels,
                found: e.num_labels(),
            });
        }
        Ok(())
    }
}

/// Gradient with respect to the CRF's own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParamGradients {
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfParamGradients {
    pub fn zeros(num_labels: usize) -> Self {
        CrfParamGradients {
            transitions: vec![0.0; num_labels * num_labels],
            start: vec![0.0; num_labels],
            end: vec![0.0; num_labels],
        }
    }
}

/// Negative log-likelihood gradient of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradients {
    /// `T x L`, row-major.
    pub emissions: Vec<f64>,
    pub params: CrfParamGradients,
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Unnormalized score of label path `y`.
pub fn sequence_score(crf: &CrfParameters, e: &EmissionScores, y: &[usize]) -> Result<f64> {
    crf.check(e)?;
    if y.len() != e.num_tokens() {
        return Err(Error::Length {
            expected: e.num_tokens(),
            found: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= crf.num_labels) {
        return Err(Error::Invalid(format!("label index {bad} out of range")));
    }
    let (Some(&first), Some(&last)) = (y.first(), y.last()) else {
        return Ok(0.0);
    };
    let mut score = crf.start[first] + crf.end[last];
    for (t, &label) in y.iter().enumerate() {
        score += e.get(t, label);
        if t > 0 {
            score += crf.transition(y[t - 1], label);
        }
    }
    Ok(score)
}

/// Forward log-messages: `alpha[t][j]` is the log-sum of scores of all
/// prefixes ending in label `j` at position `t`.
fn forward(crf: &CrfParameters, e: &EmissionScores) -> Vec<Vec<f64>> {
    let l = crf.num_labels;
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(e.num_tokens());
    if e.num_tokens() == 0 {
        return alpha;
    }
    alpha.push((0..l).map(|j| crf.start[j] + e.get(0, j)).collect());
    let mut scratch = vec![0.0; l];
    for t in 1..e.num_tokens() {
        let prev = &alpha[t - 1];
        let row = (0..l)
            .map(|j| {
                for i in 0..l {
                    scratch[i] = prev[i] + crf.transition(i, j);
                }
                log_sum_exp(&scratch) + e.get(t, j)
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// Backward log-messages: `beta[t][i]` is the log-sum of scores of all
/// suffixes after position `t`, given label `i` at `t`, including the end
/// score.
fn backward(crf: &CrfParameters, e: &EmissionScores) -> Vec<Vec<f64>> {
    let l = crf.num_labels;
    let n = e.num_tokens();
    let mut beta = vec![vec![0.0; l]; n];
    if n == 0 {
        return beta;
    }
    beta[n - 1].copy_from_slice(&crf.end);
    let mut scratch = vec![0.0; l];
    for t in (0..n - 1).rev() {
        for i in 0..l {
            for j in 0..l {
                scratch[j] = crf.transition(i, j) + e.get(t + 1, j) + beta[t + 1][j];
            }
            beta[t][i] = log_sum_exp(&scratch);
        }
    }
    beta
}

fn log_z_from_alpha(crf: &CrfParameters, alpha: &[Vec<f64>]) -> f64 {
    match alpha.last() {
        Some(last) => {
            let terms: Vec<f64> = last.iter().zip(&crf.end).map(|(a, b)| a + b).collect();
            log_sum_exp(&terms)
        }
        None => 0.0,
    }
}

/// `ln Σ_y exp(sequence_score(y))` over all `L^T` label paths. An empty
/// sequence has a single empty path of score 0.
pub fn log_partition(crf: &CrfParameters, e: &EmissionScores) -> Result<f64> {
    crf.check(e)?;
    Ok(log_z_from_alpha(crf, &forward(crf, e)))
}

/// Posterior marginals from forward-backward.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub log_partition: f64,
    /// `P(y_t = l)`, `T x L` row-major.
    pub unary: Vec<f64>,
    /// `Σ_t P(y_{t-1} = i, y_t = j)`, `L x L` row-major.
    pub pairwise_sum: Vec<f64>,
}

pub fn marginals(crf: &CrfParameters, e: &EmissionScores) -> Result<Marginals> {
    crf.check(e)?;
    let l = crf.num_labels;
    let n = e.num_tokens();
    let alpha = forward(crf, e);
    let beta = backward(crf, e);
    let log_z = log_z_from_alpha(crf, &alpha);
    let mut unary = vec![0.0; n * l];
    for t in 0..n {
        for j in 0..l {
            unary[t * l + j] = (alpha[t][j] + beta[t][j] - log_z).exp();
        }
    }
    let mut pairwise_sum = vec![0.0; l * l];
    for t in 1..n {
        for i in 0..l {
            for j in 0..l {
                pairwise_sum[i * l + j] +=
                    (alpha[t - 1][i] + crf.transition(i, j) + e.get(t, j) + beta[t][j] - log_z).exp();
            }
        }
    }
    Ok(Marginals {
        log_partition: log_z,
        unary,
        pairwise_sum,
    })
}

/// `log Z - score(gold)` and its gradient with respect to the emissions and
/// the CRF parameters.
pub fn crf_nll(crf: &CrfParameters, e: &EmissionScores, gold: &[usize]) -> Result<(f64, CrfGradients)> {
    let gold_score = sequence_score(crf, e, gold)?;
    let m = marginals(crf, e)?;
    let l = crf.num_labels;
    let n = e.num_tokens();
    let mut emissions = m.unary.clone();
    let mut params = CrfParamGradients::zeros(l);
    params.transitions.copy_from_slice(&m.pairwise_sum);
    if n > 0 {
        params.start.copy_from_slice(&m.unary[..l]);
        params.end.copy_from_slice(&m.unary[(n - 1) * l..]);
        params.start[gold[0]] -= 1.0;
        params.end[gold[n - 1]] -= 1.0;
    }
    for (t, &y) in gold.iter().enumerate() {
        emissions[t * l + y] -= 1.0;
        if t > 0 {
            params.transitions[gold[t - 1] * l + y] -= 1.0;
        }
    }
    Ok((m.log_partition - gold_score, CrfGradients { emissions, params }))
}

/// Highest-scoring label path. Ties go to the lowest label index: first for
/// the final position, then for each back-pointer while backtracking.
pub fn viterbi(crf: &CrfParameters, e: &EmissionScores) -> Result<Vec<usize>> {
    crf.check(e)?;
    let l = crf.num_labels;
    let n = e.num_tokens();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut delta: Vec<f64> = (0..l).map(|j| crf.start[j] + e.get(0, j)).collect();
    let mut back = vec![0usize; n * l];
    for t in 1..n {
        let next: Vec<f64> = (0..l)
            .map(|j| {
                let (best_i, best) = argmax((0..l).map(|i| delta[i] + crf.transition(i, j)));
                back[t * l + j] = best_i;
                best + e.get(t, j)
            })
            .collect();
        delta = next;
    }
    let (mut label, _) = argmax(delta.iter().zip(&crf.end).map(|(d, b)| d + b));
    let mut path = vec![0; n];
    for t in (0..n).rev() {
        path[t] = label;
        label = back[t * l + label];
    }
    Ok(path)
}

/// First index of the maximum.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(rows: &[&[f64]]) -> EmissionScores {
        EmissionScores::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn score_examples() {
        let crf = CrfParameters::zeros(2);
        assert_eq!(sequence_score(&crf, &e(&[&[0.3, -1.5]]), &[1]).unwrap(), -1.5);
        let mut crf = CrfParameters::zeros(2);
        crf.transitions[1] = 5.0;
        assert_eq!(sequence_score(&crf, &EmissionScores::zeros(2, 2), &[0, 1]).unwrap(), 5.0);
        assert!(sequence_score(&crf, &EmissionScores::zeros(2, 2), &[0]).is_err());
        assert!(sequence_score(&crf, &EmissionScores::zeros(1, 2), &[2]).is_err());
    }

    #[test]
    fn partition_examples() {
        let crf = CrfParameters::zeros(2);
        let z = log_partition(&crf, &EmissionScores::zeros(1, 2)).unwrap();
        assert!((z - 2f64.ln()).abs() < 1e-15);
        let z = log_partition(&crf, &EmissionScores::zeros(2, 2)).unwrap();
        assert!((z - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn partition_is_stable_for_large_scores() {
        let crf = CrfParameters::zeros(2);
        let z = log_partition(&crf, &e(&[&[1e4, -1e4], &[1e4, 1e4]])).unwrap();
        assert!((z - (2e4 + 2f64.ln())).abs() < 1e-9);
        let z = log_partition(&crf, &e(&[&[-1e4, -1e4]])).unwrap();
        assert!((z - (-1e4 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn nll_closed_form() {
        let crf = CrfParameters::zeros(2);
        let (loss, g) = crf_nll(&crf, &EmissionScores::zeros(1, 2), &[1]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!((g.emissions[1] + 0.5).abs() < 1e-15);
        assert!((g.emissions[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nll_vanishes_with_separation() {
        let crf = CrfParameters::zeros(2);
        let (loss, _) = crf_nll(&crf, &e(&[&[0.0, 60.0], &[60.0, 0.0]]), &[1, 0]).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn viterbi_examples() {
        let crf = CrfParameters::zeros(2);
        let em = e(&[&[0.1, 0.2], &[3.0, -1.0], &[0.0, 0.0]]);
        assert_eq!(viterbi(&crf, &em).unwrap(), vec![1, 0, 0]);
        let mut crf = CrfParameters::zeros(2);
        crf.transitions[0] = 10.0;
        assert_eq!(viterbi(&crf, &EmissionScores::zeros(3, 2)).unwrap(), vec![0, 0, 0]);
        assert!(viterbi(&crf, &EmissionScores::zeros(0, 2)).unwrap().is_empty());
    }

    #[test]
    fn marginals_sum_to_one() {
        let mut crf = CrfParameters::zeros(3);
        crf.transitions = vec![0.5, -1.0, 0.2, 0.0, 1.0, -0.3, 0.7, 0.1, 0.0];
        crf.start = vec![0.1, 0.0, -0.2];
        let em = e(&[&[0.3, -0.2, 1.0], &[0.0, 0.5, -1.0], &[2.0, 0.0, 0.1]]);
        let m = marginals(&crf, &em).unwrap();
        for t in 0..3 {
            let s: f64 = m.unary[t * 3..(t + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let pairs: f64 = m.pairwise_sum.iter().sum();
        assert!((pairs - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(EmissionScores::new(2, 2, vec![0.0; 3]).is_err());
        assert!(EmissionScores::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(CrfParameters::new(2, vec![0.0; 4], vec![0.0; 2], vec![0.0]).is_err());
        let crf = CrfParameters::zeros(3);
        assert!(log_partition(&crf, &EmissionScores::zeros(2, 2)).is_err());
    }
}
