//! Byte-level text corpora, language-model batching and synthetic
//! classification data.
//!
//! Every random draw is a pure function of `(seed, step)`: batch streams are
//! ChaCha8 streams selected by the step index, so no RNG state is carried
//! between steps.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};

use crate::error::{Error, Result};

/// Byte-level vocabulary size.
pub const BYTE_VOCAB: usize = 256;

/// One batch of model inputs with class targets.
#[derive(Clone, Debug, PartialEq)]
pub enum Batch {
    /// `inputs` and `targets` are `[batch, seq_len]` row-major, with
    /// `targets[b][t] == inputs[b][t + 1]` inside the source text.
    Tokens {
        inputs: Vec<usize>,
        targets: Vec<usize>,
        batch: usize,
        seq_len: usize,
    },
    /// `features` is `[batch, dim]` row-major.
    Features {
        features: Vec<f64>,
        labels: Vec<usize>,
        batch: usize,
        dim: usize,
    },
}

impl Batch {
    /// One class target per prediction position, row-major.
    pub fn targets(&self) -> &[usize] {
        match self {
            Batch::Tokens { targets, .. } => targets,
            Batch::Features { labels, .. } => labels,
        }
    }

    /// Number of sequences or examples.
    pub fn size(&self) -> usize {
        match self {
            Batch::Tokens { batch, .. } | Batch::Features { batch, .. } => *batch,
        }
    }
}

/// Contiguous train/eval split of a byte stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextCorpus {
    train: Vec<u8>,
    eval: Vec<u8>,
}

impl TextCorpus {
    /// The last `eval_fraction` of the bytes (rounded) becomes the eval split.
    pub fn from_bytes(mut bytes: Vec<u8>, eval_fraction: f64) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Corpus("corpus is empty".into()));
        }
        if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
            return Err(Error::Corpus(format!("eval fraction {eval_fraction} outside (0, 1)")));
        }
        let eval_len = ((bytes.len() as f64) * eval_fraction).round() as usize;
        if eval_len == 0 || eval_len == bytes.len() {
            return Err(Error::Corpus(format!(
                "{} bytes cannot be split at fraction {eval_fraction}",
                bytes.len()
            )));
        }
        let eval = bytes.split_off(bytes.len() - eval_len);
        Ok(TextCorpus { train: bytes, eval })
    }

    pub fn train(&self) -> &[u8] {
        &self.train
    }

    pub fn eval(&self) -> &[u8] {
        &self.eval
    }

    pub fn vocab(&self) -> usize {
        BYTE_VOCAB
    }
}

/// Reads a byte corpus and splits it; see [`TextCorpus::from_bytes`].
pub fn load_corpus(path: impl AsRef<Path>, eval_fraction: f64) -> Result<TextCorpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TextCorpus::from_bytes(bytes, eval_fraction)
}

/// The RNG for draw number `step` of the stream identified by `seed`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// `batch_size` windows at uniform random offsets, with next-byte targets.
pub fn next_batch(bytes: &[u8], batch_size: usize, seq_len: usize, rng: &mut impl Rng) -> Result<Batch> {
    if seq_len == 0 || batch_size == 0 {
        return Err(Error::Config("batch size and sequence length must be positive".into()));
    }
    if bytes.len() <= seq_len + 1 {
        return Err(Error::Corpus(format!(
            "{} bytes is too short for sequences of {seq_len}",
            bytes.len()
        )));
    }
    let max_offset = bytes.len() - seq_len - 1;
    let offsets: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..=max_offset)).collect();
    Ok(windows(bytes, &offsets, seq_len))
}

/// Deterministic evaluation batches: up to `max_batches` batches of
/// windows spread evenly across `bytes`.
pub fn eval_batches(bytes: &[u8], batch_size: usize, seq_len: usize, max_batches: usize) -> Result<Vec<Batch>> {
    if bytes.len() <= seq_len + 1 {
        return Err(Error::Corpus(format!(
            "eval split of {} bytes is too short for sequences of {seq_len}",
            bytes.len()
        )));
    }
    let available = (bytes.len() - 1) / seq_len;
    let count = available.min(batch_size * max_batches).max(1);
    let last = bytes.len() - seq_len - 1;
    let offsets: Vec<usize> = (0..count).map(|i| if count == 1 { 0 } else { i * last / (count - 1) }).collect();
    Ok(offsets
        .chunks(batch_size)
        .map(|chunk| windows(bytes, chunk, seq_len))
        .collect())
}

fn windows(bytes: &[u8], offsets: &[usize], seq_len: usize) -> Batch {
    let mut inputs = Vec::with_capacity(offsets.len() * seq_len);
    let mut targets = Vec::with_capacity(offsets.len() * seq_len);
    for &o in offsets {
        inputs.extend(bytes[o..o + seq_len].iter().map(|&b| b as usize));
        targets.extend(bytes[o + 1..o + seq_len + 1].iter().map(|&b| b as usize));
    }
    Batch::Tokens {
        inputs,
        targets,
        batch: offsets.len(),
        seq_len,
    }
}

/// Gaussian class-conditional clusters with unit within-class covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationData {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub classes: usize,
}

impl ClassificationData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(&self.features[i * self.dim..(i + 1) * self.dim]);
        }
        Batch::Features {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            batch: indices.len(),
            dim: self.dim,
        }
    }

    /// Examples drawn uniformly with replacement.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut impl Rng) -> Batch {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..self.len())).collect();
        self.batch(&idx)
    }

    pub fn full_batch(&self) -> Batch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// `n` examples in `d` dimensions over `k` classes. Class means are
/// `separation / sqrt(2)` times random unit vectors, so two independent means
/// sit about `separation` standard deviations apart. Labels cycle through the
/// classes before shuffling, hence are balanced to within one.
pub fn synth_classification(n: usize, d: usize, k: usize, separation: f64, seed: u64) -> Result<ClassificationData> {
    if n == 0 || d == 0 || k == 0 {
        return Err(Error::Config("n, d and k must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            u.into_iter().map(|x| scale * x / norm).collect()
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * d);
    for &y in &labels {
        for &m in &means[y] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(m + z);
        }
    }
    Ok(ClassificationData {
        features,
        labels,
        dim: d,
        classes: k,
    })
}

/// Pseudo-English text with Zipfian word frequencies and a sparse random
/// bigram structure, so byte-level models have something to learn at every
/// scale from spelling up to word transitions.
pub fn synthetic_text(len: usize, seed: u64) -> Vec<u8> {
    const SYLLABLES: [&str; 24] = [
        "ka", "lo", "mi", "ne", "ru", "ta", "shi", "po", "da", "ve", "an", "or", "el", "is", "um", "tr", "qu", "ing",
        "est", "ch", "th", "er", "on", "al",
    ];
    const WORDS: usize = 2000;
    const SUCCESSORS: usize = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..WORDS)
        .map(|_| {
            let n = rng.gen_range(1..=3);
            (0..n).map(|_| *SYLLABLES.choose(&mut rng).expect("syllables")).collect()
        })
        .collect();
    let successors: Vec<Vec<usize>> = (0..WORDS)
        .map(|_| (0..SUCCESSORS).map(|_| rng.gen_range(0..WORDS)).collect())
        .collect();
    let start = Zipf::new(WORDS as u64, 1.1).expect("valid zipf");
    let pick = Zipf::new(SUCCESSORS as u64, 1.3).expect("valid zipf");
    let mut out = Vec::with_capacity(len + 32);
    let mut word = start.sample(&mut rng) as usize - 1;
    let mut sentence_len = 0;
    while out.len() < len {
        let w = &words[word];
        if sentence_len == 0 {
            let mut chars = w.chars();
            if let Some(c) = chars.next() {
                out.extend(c.to_uppercase().to_string().bytes());
                out.extend(chars.as_str().bytes());
            }
        } else {
            out.extend(w.bytes());
        }
        sentence_len += 1;
        if sentence_len > 4 && rng.gen_bool(0.15) {
            out.extend_from_slice(if rng.gen_bool(0.2) { b".\n" } else { b". " });
            sentence_len = 0;
            word = start.sample(&mut rng) as usize - 1;
        } else {
            if rng.gen_bool(0.05) {
                out.push(b',');
            }
            out.push(b' ');
            word = if rng.gen_bool(0.9) {
                successors[word][pick.sample(&mut rng) as usize - 1]
            } else {
                start.sample(&mut rng) as usize - 1
            };
        }
    }
    out.truncate(len);
    out
}
