//! Per-token embedding providers.
//!
//! Two sources exist: contextual vectors imported from a sidecar file (one
//! record per subword, pooled onto word tokens), and a small trainable
//! contextualizer made of a hashed embedding table followed by a linear
//! projection of the concatenated `2w + 1` token window.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Dataset, Token};
use crate::error::{Error, Result};

pub const SIDECAR_FORMAT: &str = "toxspan-embeddings";
pub const SIDECAR_VERSION: u32 = 1;

/// One vector per token, all of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub vectors: Vec<Vec<f64>>,
    pub dim: usize,
}

impl EncodedSequence {
    pub fn zeros(len: usize, dim: usize) -> Self {
        EncodedSequence {
            vectors: vec![vec![0.0; dim]; len],
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainableConfig {
    /// Rows of the hashed embedding table (H).
    pub table_size: usize,
    /// Width of each table row.
    pub embed_dim: usize,
    /// Context radius w; the window covers `2w + 1` tokens.
    pub window: usize,
    /// Output dimension d.
    pub output_dim: usize,
}

impl Default for TrainableConfig {
    fn default() -> Self {
        TrainableConfig {
            table_size: 65_536,
            embed_dim: 32,
            window: 2,
            output_dim: 64,
        }
    }
}

impl TrainableConfig {
    pub fn validate(&self) -> Result<()> {
        if self.table_size == 0 || self.embed_dim == 0 || self.output_dim == 0 {
            return Err(Error::Invalid(
                "encoder table size, embedding width and output dimension must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        2 * self.window + 1
    }

    /// Rows of the projection matrix, `embed_dim * (2w + 1)`.
    pub fn concat_dim(&self) -> usize {
        self.embed_dim * self.window_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncoderConfig {
    Trainable(TrainableConfig),
    Precomputed { dim: usize },
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Trainable(TrainableConfig::default())
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        match self {
            EncoderConfig::Trainable(c) => c.output_dim,
            EncoderConfig::Precomputed { dim } => *dim,
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |hash, &b| (hash ^ u64::from(b)).wrapping_mul(PRIME))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableEncoder {
    pub config: TrainableConfig,
    /// `table_size x embed_dim`, row-major.
    pub table: Vec<f64>,
    /// `concat_dim x output_dim`, row-major.
    pub projection: Vec<f64>,
}

/// Gradient of a scalar loss with respect to a [`TrainableEncoder`]. Table
/// rows are sparse; only rows touched by the batch are present.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncoderGradients {
    pub table_rows: BTreeMap<usize, Vec<f64>>,
    pub projection: Vec<f64>,
}

impl EncoderGradients {
    pub fn zeros(config: &TrainableConfig) -> Self {
        EncoderGradients {
            table_rows: BTreeMap::new(),
            projection: vec![0.0; config.concat_dim() * config.output_dim],
        }
    }

    pub fn add_assign(&mut self, other: &EncoderGradients) {
        for (&row, grad) in &other.table_rows {
            let entry = self
                .table_rows
                .entry(row)
                .or_insert_with(|| vec![0.0; grad.len()]);
            add_into(entry, grad);
        }
        add_into(&mut self.projection, &other.projection);
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.table_rows.values_mut() {
            row.iter_mut().for_each(|g| *g *= factor);
        }
        self.projection.iter_mut().for_each(|g| *g *= factor);
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl TrainableEncoder {
    /// Table entries uniform in `[-0.1, 0.1]`; projection Glorot-uniform.
    pub fn init<R: Rng>(config: TrainableConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let table = (0..config.table_size * config.embed_dim)
            .map(|_| rng.gen_range(-0.1..=0.1))
            .collect();
        let limit = (6.0 / (config.concat_dim() + config.output_dim) as f64).sqrt();
        let projection = (0..config.concat_dim() * config.output_dim)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Ok(TrainableEncoder {
            config,
            table,
            projection,
        })
    }

    pub fn row_of(&self, token: &Token) -> usize {
        (fnv1a64(token.folded().as_bytes()) % self.config.table_size as u64) as usize
    }

    pub fn hash_rows(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.row_of(t)).collect()
    }

    fn row(&self, row: usize) -> &[f64] {
        let e = self.config.embed_dim;
        &self.table[row * e..(row + 1) * e]
    }

    /// Window slots of position `t`: `(slot, token index)` for every slot
    /// that falls inside the sequence. Missing slots are zero padding.
    fn window_slots(&self, t: usize, len: usize) -> impl Iterator<Item = (usize, usize)> {
        let w = self.config.window;
        (0..self.config.window_len()).filter_map(move |slot| {
            let pos = (t + slot).checked_sub(w)?;
            (pos < len).then_some((slot, pos))
        })
    }

    pub fn encode(&self, tokens: &[Token]) -> EncodedSequence {
        self.forward_rows(&self.hash_rows(tokens))
    }

    pub fn forward_rows(&self, rows: &[usize]) -> EncodedSequence {
        let e = self.config.embed_dim;
        let d = self.config.output_dim;
        let vectors = (0..rows.len())
            .map(|t| {
                let mut out = vec![0.0; d];
                for (slot, pos) in self.window_slots(t, rows.len()) {
                    for (j, &x) in self.row(rows[pos]).iter().enumerate() {
                        let p = &self.projection[(slot * e + j) * d..(slot * e + j + 1) * d];
                        for (o, w) in out.iter_mut().zip(p) {
                            *o += x * w;
                        }
                    }
                }
                out
            })
            .collect();
        EncodedSequence { vectors, dim: d }
    }

    /// Back-propagates `grad_out` (one gradient per output vector).
    pub fn backward(&self, rows: &[usize], grad_out: &[Vec<f64>]) -> EncoderGradients {
        let e = self.config.embed_dim;
        let d = self.config.output_dim;
        let mut grads = EncoderGradients::zeros(&self.config);
        for (t, g) in grad_out.iter().enumerate() {
            for (slot, pos) in self.window_slots(t, rows.len()) {
                let row = rows[pos];
                let emb = self.row(row);
                let row_grad = grads.table_rows.entry(row).or_insert_with(|| vec![0.0; e]);
                for j in 0..e {
                    let base = (slot * e + j) * d;
                    let p = &self.projection[base..base + d];
                    row_grad[j] += p.iter().zip(g).map(|(w, gi)| w * gi).sum::<f64>();
                    let x = emb[j];
                    for (pg, gi) in grads.projection[base..base + d].iter_mut().zip(g) {
                        *pg += x * gi;
                    }
                }
            }
        }
        grads
    }

    pub fn apply(&mut self, grads: &EncoderGradients, step: f64) {
        let e = self.config.embed_dim;
        for (&row, g) in &grads.table_rows {
            for (p, gi) in self.table[row * e..(row + 1) * e].iter_mut().zip(g) {
                *p -= step * gi;
            }
        }
        for (p, gi) in self.projection.iter_mut().zip(&grads.projection) {
            *p -= step * gi;
        }
    }
}

/// One imported subword vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubwordRecord {
    pub id: String,
    pub start: usize,
    pub end: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarHeader {
    format: String,
    version: u32,
    dim: usize,
}

/// Writes a sidecar: a header line declaring `dim`, then one JSON record per
/// subword. Floats are written in shortest round-trip form, so reading the
/// file back is bit-exact.
pub fn write_sidecar<W: Write>(dim: usize, records: &[SubwordRecord], mut writer: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(e.to_string());
    let header = SidecarHeader {
        format: SIDECAR_FORMAT.into(),
        version: SIDECAR_VERSION,
        dim,
    };
    writeln!(writer, "{}", serde_json::to_string(&header).expect("header")).map_err(io)?;
    for record in records {
        if record.vector.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: record.vector.len(),
            });
        }
        writeln!(writer, "{}", serde_json::to_string(record).expect("record")).map_err(io)?;
    }
    Ok(())
}

/// Reads a sidecar, returning the declared dimension and subword records
/// grouped by post id (file order preserved within a post).
pub fn read_sidecar<R: Read>(reader: R) -> Result<(usize, HashMap<String, Vec<SubwordRecord>>)> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let header: SidecarHeader = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line.map_err(|e| Error::Parse { row: i + 1, message: e.to_string() })?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::Parse {
                    row: i + 1,
                    message: format!("bad sidecar header: {e}"),
                })?;
            }
            None => return Err(Error::Parse { row: 0, message: "empty sidecar".into() }),
        }
    };
    if header.format != SIDECAR_FORMAT || header.version != SIDECAR_VERSION {
        return Err(Error::Incompatible(format!(
            "sidecar format {} v{} (expected {SIDECAR_FORMAT} v{SIDECAR_VERSION})",
            header.format, header.version
        )));
    }
    if header.dim == 0 {
        return Err(Error::Invalid("sidecar declares dimension 0".into()));
    }
    let mut grouped: HashMap<String, Vec<SubwordRecord>> = HashMap::new();
    for (i, line) in lines {
        let row = i + 1;
        let line = line.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SubwordRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if record.vector.len() != header.dim {
            return Err(Error::Dimension {
                expected: header.dim,
                found: record.vector.len(),
            });
        }
        if record.start >= record.end {
            return Err(Error::Parse {
                row,
                message: format!("empty subword span [{}, {})", record.start, record.end),
            });
        }
        grouped.entry(record.id.clone()).or_default().push(record);
    }
    Ok((header.dim, grouped))
}

/// Mean of the subword vectors overlapping each token; zero when none do.
pub fn pool_subwords(tokens: &[Token], subwords: &[SubwordRecord], dim: usize) -> EncodedSequence {
    let vectors = tokens
        .iter()
        .map(|token| {
            let mut sum = vec![0.0; dim];
            let mut count = 0usize;
            for sw in subwords
                .iter()
                .filter(|sw| sw.start < token.char_end && token.char_start < sw.end)
            {
                add_into(&mut sum, &sw.vector);
                count += 1;
            }
            if count > 0 {
                let n = count as f64;
                sum.iter_mut().for_each(|x| *x /= n);
            }
            sum
        })
        .collect();
    EncodedSequence { vectors, dim }
}

/// Loads a sidecar and pools it onto the word tokens of every post in
/// `dataset`.
pub fn load_precomputed(path: &Path, dataset: &Dataset) -> Result<HashMap<String, EncodedSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (dim, grouped) = read_sidecar(file)?;
    pool_dataset(dim, &grouped, dataset)
}

pub fn pool_dataset(
    dim: usize,
    grouped: &HashMap<String, Vec<SubwordRecord>>,
    dataset: &Dataset,
) -> Result<HashMap<String, EncodedSequence>> {
    dataset
        .posts
        .iter()
        .map(|post| {
            let subwords = grouped.get(&post.id).ok_or_else(|| {
                Error::Invalid(format!("post {:?} missing from embedding sidecar", post.id))
            })?;
            let tokens = tokenize(&post.text);
            Ok((post.id.clone(), pool_subwords(&tokens, subwords, dim)))
        })
        .collect()
}
