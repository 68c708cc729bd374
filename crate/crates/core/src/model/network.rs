//! The full token classifier: embeddings, feature augmentation, the linear
//! head and an optional CRF layer, with joint gradients for every trainable
//! parameter.

use serde::{Deserialize, Serialize};

use super::crf::{crf_nll, viterbi, CrfParamGradients, CrfParameters, EmissionScores};
use super::head::{argmax_labels, softmax_nll, ClassifierHead, HeadGradients};
use crate::corpus::Token;
use crate::encoder::{add_into, EncoderGradients, TrainableEncoder};
use crate::error::{Error, Result};
use crate::features::{augment, AugmentMode, TokenFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    #[default]
    Softmax,
    Crf,
}

/// Where a post's base token vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenSource {
    /// Embedding-table rows for the trainable encoder.
    Hashed(Vec<usize>),
    /// Fixed imported vectors.
    Vectors(Vec<Vec<f64>>),
}

/// A post prepared for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct PostInput {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub features: Vec<TokenFeatures>,
    pub source: TokenSource,
}

impl PostInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub mode: AugmentMode,
    /// Present when token vectors come from the trainable encoder.
    pub encoder: Option<TrainableEncoder>,
    pub head: ClassifierHead,
    pub crf: Option<CrfParameters>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Option<EncoderGradients>,
    pub head: HeadGradients,
    pub crf: Option<CrfParamGradients>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            encoder: net.encoder.as_ref().map(|e| EncoderGradients::zeros(&e.config)),
            head: HeadGradients::zeros(net.head.input_dim, net.head.num_labels),
            crf: net.crf.as_ref().map(|c| CrfParamGradients::zeros(c.num_labels)),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        if let (Some(a), Some(b)) = (&mut self.encoder, &other.encoder) {
            a.add_assign(b);
        }
        add_into(&mut self.head.weights, &other.head.weights);
        add_into(&mut self.head.bias, &other.head.bias);
        if let (Some(a), Some(b)) = (&mut self.crf, &other.crf) {
            add_into(&mut a.transitions, &b.transitions);
            add_into(&mut a.start, &b.start);
            add_into(&mut a.end, &b.end);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        if let Some(e) = &mut self.encoder {
            e.scale(factor);
        }
        let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= factor);
        scale(&mut self.head.weights);
        scale(&mut self.head.bias);
        if let Some(c) = &mut self.crf {
            scale(&mut c.transitions);
            scale(&mut c.start);
            scale(&mut c.end);
        }
    }

    /// Dense gradient groups in the order of [`Network::param_groups_mut`].
    pub fn dense_groups(&self, net: &Network) -> Vec<(&'static str, Vec<f64>)> {
        let mut out = Vec::new();
        if let (Some(enc), Some(g)) = (&net.encoder, &self.encoder) {
            let e = enc.config.embed_dim;
            let mut table = vec![0.0; enc.table.len()];
            for (&row, grad) in &g.table_rows {
                table[row * e..(row + 1) * e].copy_from_slice(grad);
            }
            out.push(("encoder.table", table));
            out.push(("encoder.projection", g.projection.clone()));
        }
        out.push(("head.weights", self.head.weights.clone()));
        out.push(("head.bias", self.head.bias.clone()));
        if let Some(c) = &self.crf {
            out.push(("crf.transitions", c.transitions.clone()));
            out.push(("crf.start", c.start.clone()));
            out.push(("crf.end", c.end.clone()));
        }
        out
    }
}

impl Network {
    /// Zero-initialized head (and CRF when requested) on top of `encoder`,
    /// or on top of imported vectors of width `base_dim`.
    pub fn new(
        mode: AugmentMode,
        head: HeadKind,
        encoder: Option<TrainableEncoder>,
        base_dim: usize,
        num_labels: usize,
    ) -> Self {
        let base_dim = encoder.as_ref().map_or(base_dim, |e| e.config.output_dim);
        Network {
            mode,
            encoder,
            head: ClassifierHead::zeros(base_dim + mode.extra_dims(), num_labels),
            crf: matches!(head, HeadKind::Crf).then(|| CrfParameters::zeros(num_labels)),
        }
    }

    pub fn head_kind(&self) -> HeadKind {
        if self.crf.is_some() {
            HeadKind::Crf
        } else {
            HeadKind::Softmax
        }
    }

    pub fn base_dim(&self) -> usize {
        self.head.input_dim - self.mode.extra_dims()
    }

    fn base_vectors(&self, input: &PostInput) -> Result<Vec<Vec<f64>>> {
        let vectors = match (&input.source, &self.encoder) {
            (TokenSource::Hashed(rows), Some(enc)) => enc.forward_rows(rows).vectors,
            (TokenSource::Vectors(v), None) => v.clone(),
            (TokenSource::Hashed(_), None) => {
                return Err(Error::Incompatible("hashed input for a model without an encoder".into()))
            }
            (TokenSource::Vectors(_), Some(_)) => {
                return Err(Error::Incompatible("imported vectors for a model with a trainable encoder".into()))
            }
        };
        if vectors.len() != input.len() || input.features.len() != input.len() {
            return Err(Error::Length {
                expected: input.len(),
                found: vectors.len().min(input.features.len()),
            });
        }
        Ok(vectors)
    }

    /// Base vectors with the configured features appended.
    pub fn augmented(&self, input: &PostInput) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .base_vectors(input)?
            .iter()
            .zip(&input.features)
            .map(|(v, f)| augment(v, *f, self.mode))
            .collect())
    }

    pub fn emissions(&self, input: &PostInput) -> Result<EmissionScores> {
        self.head.emissions(&self.augmented(input)?)
    }

    /// Loss of one post and the gradient of every trainable parameter.
    pub fn loss_and_gradients(&self, input: &PostInput, gold: &[usize]) -> Result<(f64, Gradients)> {
        let augmented = self.augmented(input)?;
        let e = self.head.emissions(&augmented)?;
        let (loss, grad_e, crf_grads) = match &self.crf {
            Some(crf) => {
                let (loss, g) = crf_nll(crf, &e, gold)?;
                (loss, g.emissions, Some(g.params))
            }
            None => {
                let (loss, g) = softmax_nll(&e, gold)?;
                (loss, g, None)
            }
        };
        let (head, grad_inputs) = self.head.backward(&augmented, &grad_e);
        let encoder = match (&self.encoder, &input.source) {
            (Some(enc), TokenSource::Hashed(rows)) => {
                let d = self.base_dim();
                let grad_base: Vec<Vec<f64>> = grad_inputs.iter().map(|g| g[..d].to_vec()).collect();
                Some(enc.backward(rows, &grad_base))
            }
            _ => None,
        };
        Ok((
            loss,
            Gradients {
                encoder,
                head,
                crf: crf_grads,
            },
        ))
    }

    /// Softmax head: per-token argmax. CRF head: Viterbi path.
    pub fn predict(&self, input: &PostInput) -> Result<Vec<usize>> {
        if input.is_empty() {
            return Ok(Vec::new());
        }
        let e = self.emissions(input)?;
        match &self.crf {
            Some(crf) => viterbi(crf, &e),
            None => Ok(argmax_labels(&e)),
        }
    }

    /// Plain gradient step.
    pub fn apply(&mut self, grads: &Gradients, step: f64) {
        if let (Some(enc), Some(g)) = (&mut self.encoder, &grads.encoder) {
            enc.apply(g, step);
        }
        self.head.apply(&grads.head, step);
        if let (Some(crf), Some(g)) = (&mut self.crf, &grads.crf) {
            let descend = |p: &mut [f64], g: &[f64]| {
                for (x, gi) in p.iter_mut().zip(g) {
                    *x -= step * gi;
                }
            };
            descend(&mut crf.transitions, &g.transitions);
            descend(&mut crf.start, &g.start);
            descend(&mut crf.end, &g.end);
        }
    }

    /// Every trainable parameter tensor, named.
    pub fn param_groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = Vec::new();
        if let Some(enc) = &mut self.encoder {
            out.push(("encoder.table", &mut enc.table));
            out.push(("encoder.projection", &mut enc.projection));
        }
        out.push(("head.weights", &mut self.head.weights));
        out.push(("head.bias", &mut self.head.bias));
        if let Some(crf) = &mut self.crf {
            out.push(("crf.transitions", &mut crf.transitions));
            out.push(("crf.start", &mut crf.start));
            out.push(("crf.end", &mut crf.end));
        }
        out
    }
}

/// CRF negative log-likelihood of `gold` with gradients for all parameters.
pub fn crf_nll_and_gradients(net: &Network, input: &PostInput, gold: &[usize]) -> Result<(f64, Gradients)> {
    if net.crf.is_none() {
        return Err(Error::Invalid("network has no CRF layer".into()));
    }
    net.loss_and_gradients(input, gold)
}

/// Token cross-entropy of `gold` with gradients for all parameters.
pub fn softmax_nll_and_gradients(net: &Network, input: &PostInput, gold: &[usize]) -> Result<(f64, Gradients)> {
    if net.crf.is_some() {
        return Err(Error::Invalid("network has a CRF layer".into()));
    }
    net.loss_and_gradients(input, gold)
}
