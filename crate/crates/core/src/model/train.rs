//! Mini-batch gradient descent with best-epoch selection on validation span
//! F1, and the multi-seed sweep built on top of it.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bundle::ModelBundle;
use super::network::{Gradients, HeadKind, Network, PostInput, TokenSource};
use crate::corpus::{tokenize, Dataset, Label, Post, TokenizedPost};
use crate::encoder::{EncodedSequence, EncoderConfig, TrainableEncoder};
use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::features::{fit_tfidf, FeatureModels, WordList, DEFAULT_WORD_LIST};
use crate::par::{self, Execution};
use crate::spans::{labels_to_spans, SpanSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub mode: crate::features::AugmentMode,
    pub head: HeadKind,
    pub encoder: EncoderConfig,
    /// How per-post work inside a batch is scheduled. Results are identical
    /// either way.
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            epochs: 8,
            step_size: 0.5,
            batch_size: 8,
            mode: Default::default(),
            head: HeadKind::Softmax,
            encoder: EncoderConfig::default(),
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Invalid("step size must be a non-negative finite number".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        match &self.encoder {
            EncoderConfig::Trainable(c) => c.validate(),
            EncoderConfig::Precomputed { dim: 0 } => Err(Error::Invalid("embedding dimension must be positive".into())),
            EncoderConfig::Precomputed { .. } => Ok(()),
        }
    }
}

/// Inputs beyond the datasets: the word list for the lexicon feature (the
/// bundled default is used when absent) and imported token vectors keyed by
/// post id.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub word_list: Option<WordList>,
    pub embeddings: Option<HashMap<String, EncodedSequence>>,
}

/// A labeled, prepared post.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub input: PostInput,
    pub gold: Vec<usize>,
}

/// Builds the network input for `post`.
pub fn prepare_input(
    post: &Post,
    features: &FeatureModels,
    encoder: Option<&TrainableEncoder>,
    embeddings: Option<&HashMap<String, EncodedSequence>>,
    dim: usize,
) -> Result<PostInput> {
    let tokens = tokenize(&post.text);
    let source = match encoder {
        Some(enc) => TokenSource::Hashed(enc.hash_rows(&tokens)),
        None => {
            let seq = embeddings
                .ok_or_else(|| Error::Invalid("model needs imported embeddings".into()))?
                .get(&post.id)
                .ok_or_else(|| Error::Invalid(format!("no embeddings for post {:?}", post.id)))?;
            if seq.dim != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: seq.dim,
                });
            }
            if seq.len() != tokens.len() {
                return Err(Error::Length {
                    expected: tokens.len(),
                    found: seq.len(),
                });
            }
            TokenSource::Vectors(seq.vectors.clone())
        }
    };
    Ok(PostInput {
        id: post.id.clone(),
        text: post.text.clone(),
        features: features.token_features(&tokens),
        tokens,
        source,
    })
}

/// Mean loss and mean gradient over a batch. Per-post work may run in
/// parallel; the sum is always taken in batch order.
pub fn batch_gradients(net: &Network, batch: &[&TrainingExample], exec: Execution) -> Result<(f64, Gradients)> {
    let per_post = par::map(exec, batch, |ex| net.loss_and_gradients(&ex.input, &ex.gold));
    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0;
    for result in per_post {
        let (l, g) = result?;
        loss += l;
        total.add_assign(&g);
    }
    if !batch.is_empty() {
        let scale = 1.0 / batch.len() as f64;
        total.scale(scale);
        loss *= scale;
    }
    Ok((loss, total))
}

/// Predicted labels for every input, in order.
pub fn predict_inputs(net: &Network, inputs: &[PostInput], exec: Execution) -> Result<Vec<Vec<usize>>> {
    par::map(exec, inputs, |input| net.predict(input)).into_iter().collect()
}

/// Decoded span sets for every input, keyed by post id.
pub fn predict_spans(net: &Network, inputs: &[PostInput], exec: Execution) -> Result<Vec<(String, SpanSet)>> {
    let labels = predict_inputs(net, inputs, exec)?;
    inputs
        .iter()
        .zip(labels)
        .map(|(input, labels)| Ok((input.id.clone(), labels_to_spans(&input.tokens, &labels, &input.text)?)))
        .collect()
}

pub fn span_f1_on(net: &Network, inputs: &[PostInput], dataset: &Dataset, exec: Execution) -> Result<f64> {
    let predictions: HashMap<String, SpanSet> = predict_spans(net, inputs, exec)?.into_iter().collect();
    Ok(macro_f1(dataset, &predictions)?.macro_f1)
}

fn feature_models(config: &TrainConfig, train: &Dataset, resources: &Resources) -> Result<FeatureModels> {
    let tfidf = if config.mode.uses_tfidf() {
        Some(fit_tfidf(train)?)
    } else {
        None
    };
    let word_list = if config.mode.uses_word_list() {
        Some(match &resources.word_list {
            Some(list) => list.clone(),
            None => WordList::parse(DEFAULT_WORD_LIST)?,
        })
    } else {
        None
    };
    Ok(FeatureModels { tfidf, word_list })
}

/// Trains one model. Deterministic for a fixed config and data, whatever the
/// execution mode.
pub fn train(config: &TrainConfig, train: &Dataset, validation: &Dataset, resources: &Resources) -> Result<ModelBundle> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let features = feature_models(config, train, resources)?;
    let num_labels = Label::ALL.len();
    let (encoder, base_dim) = match config.encoder {
        EncoderConfig::Trainable(c) => (Some(TrainableEncoder::init(c, &mut rng)?), c.output_dim),
        EncoderConfig::Precomputed { dim } => (None, dim),
    };
    let mut net = Network::new(config.mode, config.head, encoder, base_dim, num_labels);
    let embeddings = resources.embeddings.as_ref();

    let prepare = |post: &Post| prepare_input(post, &features, net.encoder.as_ref(), embeddings, base_dim);
    let examples: Vec<TrainingExample> = train
        .posts
        .iter()
        .map(|post| {
            let input = prepare(post)?;
            let gold = TokenizedPost::from_post(post.clone())
                .gold_indices()
                .ok_or_else(|| Error::Invalid(format!("training post {:?} has no gold offsets", post.id)))?;
            Ok(TrainingExample { input, gold })
        })
        .filter(|ex: &Result<TrainingExample>| ex.as_ref().map_or(true, |ex| !ex.input.is_empty()))
        .collect::<Result<_>>()?;
    let validation_inputs: Vec<PostInput> = validation.posts.iter().map(prepare).collect::<Result<_>>()?;

    let mut best: Option<(usize, f64, Network)> = None;
    let mut epoch_f1 = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (_, grads) = batch_gradients(&net, &batch, config.execution)?;
            net.apply(&grads, config.step_size);
        }
        let f1 = if validation.is_empty() {
            0.0
        } else {
            span_f1_on(&net, &validation_inputs, validation, config.execution)?
        };
        epoch_f1.push(f1);
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, net.clone()));
        }
    }
    let (best_epoch, validation_f1, network) = best.expect("at least one epoch");
    Ok(ModelBundle::new(
        config.clone(),
        features,
        network,
        best_epoch,
        epoch_f1,
        validation_f1,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub validation_f1: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub best: ModelBundle,
    pub best_index: usize,
    pub runs: Vec<SeedResult>,
}

impl SweepResult {
    pub fn min(&self) -> f64 {
        self.runs.iter().map(|r| r.validation_f1).fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.runs.iter().map(|r| r.validation_f1).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }
}

/// Trains once per seed and keeps the model with the best validation F1;
/// ties go to the earliest seed in list order.
pub fn seed_sweep(
    template: &TrainConfig,
    seeds: &[u64],
    train_set: &Dataset,
    validation: &Dataset,
    resources: &Resources,
) -> Result<SweepResult> {
    if seeds.is_empty() {
        return Err(Error::Invalid("seed list is empty".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    let mut best: Option<(usize, ModelBundle)> = None;
    for (i, &seed) in seeds.iter().enumerate() {
        let config = TrainConfig { seed, ..template.clone() };
        let bundle = train(&config, train_set, validation, resources)?;
        runs.push(SeedResult {
            seed,
            validation_f1: bundle.validation_f1,
        });
        if best.as_ref().is_none_or(|(_, b)| bundle.validation_f1 > b.validation_f1) {
            best = Some((i, bundle));
        }
    }
    let (best_index, best) = best.expect("nonempty seeds");
    Ok(SweepResult {
        best,
        best_index,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TrainableConfig;
    use crate::synth::{generate, SynthConfig};

    fn tiny() -> (Dataset, Dataset, TrainConfig) {
        let corpus = generate(&SynthConfig {
            posts: 120,
            vocab: 60,
            lexicon: 6,
            ..SynthConfig::default()
        });
        let config = TrainConfig {
            epochs: 2,
            encoder: EncoderConfig::Trainable(TrainableConfig {
                table_size: 512,
                embed_dim: 4,
                window: 1,
                output_dim: 6,
            }),
            ..TrainConfig::default()
        };
        (corpus.train, corpus.validation, config)
    }

    #[test]
    fn zero_step_leaves_parameters_at_init() {
        let (tr, va, mut config) = tiny();
        config.epochs = 1;
        config.step_size = 0.0;
        config.head = HeadKind::Crf;
        let bundle = train(&config, &tr, &va, &Resources::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let EncoderConfig::Trainable(c) = config.encoder else { unreachable!() };
        let init = TrainableEncoder::init(c, &mut rng).unwrap();
        assert_eq!(bundle.network.encoder.as_ref().unwrap(), &init);
        assert!(bundle.network.head.weights.iter().all(|&w| w == 0.0));
        assert!(bundle.network.crf.as_ref().unwrap().transitions.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn training_is_deterministic_across_execution_modes() {
        let (tr, va, mut config) = tiny();
        config.head = HeadKind::Crf;
        config.mode = crate::features::AugmentMode::Both;
        config.execution = Execution::Parallel;
        let a = train(&config, &tr, &va, &Resources::default()).unwrap();
        config.execution = Execution::Sequential;
        let b = train(&config, &tr, &va, &Resources::default()).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn sweep_tie_goes_to_first_seed() {
        let (tr, va, mut config) = tiny();
        config.epochs = 1;
        config.step_size = 0.0;
        let sweep = seed_sweep(&config, &[5, 3, 9], &tr, &va, &Resources::default()).unwrap();
        // zero step: every seed predicts all NonToxic, so all F1s tie
        assert!(sweep.runs.iter().all(|r| r.validation_f1 == sweep.runs[0].validation_f1));
        assert_eq!(sweep.best_index, 0);
        assert_eq!(sweep.best.config.seed, 5);
        assert_eq!(sweep.range(), 0.0);

        let one = seed_sweep(&config, &[4], &tr, &va, &Resources::default()).unwrap();
        assert_eq!(one.best.config.seed, 4);
        assert!(seed_sweep(&config, &[], &tr, &va, &Resources::default()).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let (tr, va, config) = tiny();
        let empty = Dataset::new(vec![], "train").unwrap();
        assert!(train(&config, &empty, &va, &Resources::default()).is_err());
        let bad = TrainConfig { epochs: 0, ..config.clone() };
        assert!(train(&bad, &tr, &va, &Resources::default()).is_err());
        let bad = TrainConfig { step_size: -1.0, ..config };
        assert!(train(&bad, &tr, &va, &Resources::default()).is_err());
    }
}
