use sharpmin_core::data::{
    eval_batches, load_corpus, next_batch, step_rng, synth_classification, synthetic_text, ClassificationData,
    TextCorpus,
};
use sharpmin_core::{Batch, ModelConfig, ParamVector, Problem, Real, Result};

use crate::config::{DataConfig, RunConfig};

/// Stream id for the probe batch, far away from any training step.
const PROBE_STREAM: u64 = u64::MAX;

/// Training data plus the fixed eval and probe batches of one run.
pub struct Workload {
    pub model: ModelConfig,
    source: Source,
    eval: Vec<Batch>,
    probe: Batch,
    seed: u64,
}

enum Source {
    Text { corpus: TextCorpus, batch_size: usize, seq_len: usize },
    Classification { train: ClassificationData, batch_size: usize },
}

impl Workload {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let seed = cfg.run.seed;
        let (source, eval, probe) = match &cfg.data {
            DataConfig::Text(t) => {
                let corpus = match &t.path {
                    Some(path) => load_corpus(path, t.eval_fraction)?,
                    None => TextCorpus::from_bytes(synthetic_text(t.synthetic_bytes, t.synthetic_seed), t.eval_fraction)?,
                };
                let eval = eval_batches(corpus.eval(), t.batch_size, t.seq_len, t.eval_batches)?;
                let probe_size = cfg.run.probe_batch_size.unwrap_or(t.batch_size);
                let probe = next_batch(corpus.train(), probe_size, t.seq_len, &mut step_rng(seed, PROBE_STREAM))?;
                let source = Source::Text {
                    corpus,
                    batch_size: t.batch_size,
                    seq_len: t.seq_len,
                };
                (source, eval, probe)
            }
            DataConfig::Classification(c) => {
                let train = synth_classification(c.train_examples, c.dim, c.classes, c.separation, c.data_seed)?;
                // Same cluster means, fresh noise and labels.
                let held_out = synth_classification(
                    c.train_examples + c.eval_examples,
                    c.dim,
                    c.classes,
                    c.separation,
                    c.data_seed,
                )?;
                let eval_idx: Vec<usize> = (c.train_examples..c.train_examples + c.eval_examples).collect();
                let eval = vec![held_out.batch(&eval_idx)];
                let probe_size = cfg.run.probe_batch_size.unwrap_or(c.batch_size);
                let probe = train.sample_batch(probe_size, &mut step_rng(seed, PROBE_STREAM));
                let source = Source::Classification {
                    train,
                    batch_size: c.batch_size,
                };
                (source, eval, probe)
            }
        };
        Ok(Workload {
            model: cfg.model.clone(),
            source,
            eval,
            probe,
            seed,
        })
    }

    /// The batch for update `step`, a pure function of `(seed, step)`.
    pub fn train_batch(&self, step: u64) -> Result<Batch> {
        let mut rng = step_rng(self.seed, step);
        match &self.source {
            Source::Text {
                corpus,
                batch_size,
                seq_len,
            } => next_batch(corpus.train(), *batch_size, *seq_len, &mut rng),
            Source::Classification { train, batch_size } => Ok(train.sample_batch(*batch_size, &mut rng)),
        }
    }

    /// Fixed batch the diagnostics are measured on.
    pub fn probe(&self) -> &Batch {
        &self.probe
    }

    pub fn probe_problem(&self) -> Problem<'_> {
        Problem::new(&self.model, &self.probe)
    }

    pub fn eval_set(&self) -> &[Batch] {
        &self.eval
    }

    /// Mean per-target loss over the eval set.
    pub fn eval_loss<T: Real>(&self, params: &ParamVector<T>) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in &self.eval {
            let n = batch.targets().len();
            total += Problem::new(&self.model, batch).evaluate(params)?.loss() * n as f64;
            count += n;
        }
        Ok(total / count as f64)
    }
}
