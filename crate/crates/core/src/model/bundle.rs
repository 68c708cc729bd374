//! Trained model bundles and their binary container.
//!
//! Layout: the 8-byte magic `TOXSPANB`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header (config,
//! fingerprint, label order, feature models, tensor names and shapes), then
//! every tensor as little-endian `f64` in header order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::crf::CrfParameters;
use super::head::ClassifierHead;
use super::network::{HeadKind, Network};
use super::train::{prepare_input, predict_spans, TrainConfig};
use crate::corpus::{Dataset, Label, Post};
use crate::encoder::{fnv1a64, EncodedSequence, EncoderConfig, TrainableEncoder};
use crate::error::{Error, Result};
use crate::features::{AugmentMode, FeatureModels};
use crate::par::Execution;
use crate::spans::SpanSet;

const MAGIC: &[u8; 8] = b"TOXSPANB";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub fingerprint: String,
    pub labels: Vec<Label>,
    pub features: FeatureModels,
    pub network: Network,
    pub best_epoch: usize,
    pub epoch_f1: Vec<f64>,
    pub validation_f1: f64,
}

/// Hash of the architecture-defining settings: label order, augmentation
/// mode, head kind and encoder shape. Training hyperparameters and the seed
/// are excluded.
pub fn fingerprint(mode: AugmentMode, head: HeadKind, encoder: &EncoderConfig) -> String {
    #[derive(Serialize)]
    struct Arch<'a> {
        version: u32,
        labels: [Label; 2],
        mode: AugmentMode,
        head: HeadKind,
        encoder: &'a EncoderConfig,
    }
    let json = serde_json::to_string(&Arch {
        version: BUNDLE_VERSION,
        labels: Label::ALL,
        mode,
        head,
        encoder,
    })
    .expect("plain data serializes");
    format!("{:016x}", fnv1a64(json.as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    config: TrainConfig,
    labels: Vec<Label>,
    features: FeatureModels,
    best_epoch: usize,
    epoch_f1: Vec<f64>,
    validation_f1: f64,
    tensors: Vec<TensorMeta>,
}

impl ModelBundle {
    pub fn new(
        config: TrainConfig,
        features: FeatureModels,
        network: Network,
        best_epoch: usize,
        epoch_f1: Vec<f64>,
        validation_f1: f64,
    ) -> Self {
        ModelBundle {
            fingerprint: fingerprint(config.mode, config.head, &config.encoder),
            config,
            labels: Label::ALL.to_vec(),
            features,
            network,
            best_epoch,
            epoch_f1,
            validation_f1,
        }
    }

    /// Errors with [`Error::Incompatible`] when `expected` differs from this
    /// bundle's fingerprint.
    pub fn check_fingerprint(&self, expected: &str) -> Result<()> {
        if self.fingerprint != expected {
            return Err(Error::Incompatible(format!(
                "bundle fingerprint {} does not match configuration fingerprint {expected}",
                self.fingerprint
            )));
        }
        Ok(())
    }

    fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let net = &self.network;
        let mut out: Vec<(&'static str, Vec<usize>, &[f64])> = Vec::new();
        if let Some(enc) = &net.encoder {
            let c = enc.config;
            out.push(("encoder.table", vec![c.table_size, c.embed_dim], &enc.table));
            out.push(("encoder.projection", vec![c.concat_dim(), c.output_dim], &enc.projection));
        }
        let h = &net.head;
        out.push(("head.weights", vec![h.input_dim, h.num_labels], &h.weights));
        out.push(("head.bias", vec![h.num_labels], &h.bias));
        if let Some(crf) = &net.crf {
            let l = crf.num_labels;
            out.push(("crf.transitions", vec![l, l], &crf.transitions));
            out.push(("crf.start", vec![l], &crf.start));
            out.push(("crf.end", vec![l], &crf.end));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.tensors();
        let header = Header {
            fingerprint: self.fingerprint.clone(),
            config: self.config.clone(),
            labels: self.labels.clone(),
            features: self.features.clone(),
            best_epoch: self.best_epoch,
            epoch_f1: self.epoch_f1.clone(),
            validation_f1: self.validation_f1,
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| TensorMeta {
                    name: name.to_string(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let data_len: usize = tensors.iter().map(|(_, _, d)| d.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + header.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, _, data) in tensors {
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("model bundle: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a model bundle"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != BUNDLE_VERSION {
            return Err(Error::Incompatible(format!(
                "bundle format version {version} (expected {BUNDLE_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..header_end]).map_err(|e| bad(&e.to_string()))?;
        if header.labels != Label::ALL {
            return Err(Error::Incompatible(format!("unsupported label order {:?}", header.labels)));
        }

        let mut cursor = header_end;
        let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        for meta in header.tensors {
            let n: usize = meta.shape.iter().product();
            let end = cursor
                .checked_add(n * 8)
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| bad("truncated tensor data"))?;
            let data = bytes[cursor..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor = end;
            tensors.insert(meta.name, (meta.shape, data));
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let (found, data) = tensors.remove(name).ok_or_else(|| bad(&format!("missing tensor {name}")))?;
            if found != shape {
                return Err(bad(&format!("tensor {name} has shape {found:?}, expected {shape:?}")));
            }
            Ok(data)
        };

        let config = header.config;
        let num_labels = Label::ALL.len();
        let encoder = match config.encoder {
            EncoderConfig::Trainable(c) => Some(TrainableEncoder {
                config: c,
                table: take("encoder.table", &[c.table_size, c.embed_dim])?,
                projection: take("encoder.projection", &[c.concat_dim(), c.output_dim])?,
            }),
            EncoderConfig::Precomputed { .. } => None,
        };
        let input_dim = config.encoder.output_dim() + config.mode.extra_dims();
        let head = ClassifierHead::new(
            input_dim,
            num_labels,
            take("head.weights", &[input_dim, num_labels])?,
            take("head.bias", &[num_labels])?,
        )?;
        let crf = match config.head {
            HeadKind::Crf => Some(CrfParameters::new(
                num_labels,
                take("crf.transitions", &[num_labels, num_labels])?,
                take("crf.start", &[num_labels])?,
                take("crf.end", &[num_labels])?,
            )?),
            HeadKind::Softmax => None,
        };
        let expected = fingerprint(config.mode, config.head, &config.encoder);
        if header.fingerprint != expected {
            return Err(bad("stored fingerprint does not match stored configuration"));
        }
        if config.mode.uses_tfidf() && header.features.tfidf.is_none()
            || config.mode.uses_word_list() && header.features.word_list.is_none()
        {
            return Err(bad("feature model missing for augmentation mode"));
        }
        Ok(ModelBundle {
            network: Network {
                mode: config.mode,
                encoder,
                head,
                crf,
            },
            config,
            fingerprint: header.fingerprint,
            labels: header.labels,
            features: header.features,
            best_epoch: header.best_epoch,
            epoch_f1: header.epoch_f1,
            validation_f1: header.validation_f1,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn prepare(
        &self,
        post: &Post,
        embeddings: Option<&HashMap<String, EncodedSequence>>,
    ) -> Result<super::network::PostInput> {
        prepare_input(
            post,
            &self.features,
            self.network.encoder.as_ref(),
            embeddings,
            self.config.encoder.output_dim(),
        )
    }

    /// Decoded spans for every post of `dataset`, in dataset order.
    pub fn predict_dataset(
        &self,
        dataset: &Dataset,
        embeddings: Option<&HashMap<String, EncodedSequence>>,
        exec: Execution,
    ) -> Result<Vec<(String, SpanSet)>> {
        let inputs = dataset
            .posts
            .iter()
            .map(|p| self.prepare(p, embeddings))
            .collect::<Result<Vec<_>>>()?;
        predict_spans(&self.network, &inputs, exec)
    }
}

/// Label sequence for one post with a trainable-encoder bundle.
pub fn predict(bundle: &ModelBundle, post: &Post) -> Result<Vec<usize>> {
    bundle.network.predict(&bundle.prepare(post, None)?)
}
