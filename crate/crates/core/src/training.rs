//! Batching, the two-phase SGD schedule, multitask interleaving,
//! checkpoints and telemetry.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{clip_grad_norm, read_checkpoint, sgd_step, write_checkpoint, Graph, ParameterStore};
use crate::corpus::{ConversationPair, NliExample, NliLabel};
use crate::dual_model::{param_group, DualModelConfig, Model, ParamGroup};
use crate::text::{featurize_text, FeatureSequence, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size_initial: usize,
    pub batch_size_late: usize,
    pub lr_initial: f64,
    pub lr_late: f64,
    /// First step that uses the late learning rate and batch size.
    /// Defaults to 75% of `total_steps`.
    pub switch_step: Option<usize>,
    pub total_steps: usize,
    pub nli_task_fraction: f64,
    pub seed: u64,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size_initial: 128,
            batch_size_late: 256,
            lr_initial: 0.01,
            lr_late: 0.001,
            switch_step: None,
            total_steps: 20_000,
            nli_task_fraction: 0.05,
            seed: 0,
            checkpoint_every: 0,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainingConfig {
    pub fn resolved_switch_step(&self) -> usize {
        self.switch_step.unwrap_or(self.total_steps * 3 / 4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nli_task_fraction) {
            return Err(Error::Config(format!("nli_task_fraction {} is outside [0, 1]", self.nli_task_fraction)));
        }
        if self.resolved_switch_step() > self.total_steps {
            return Err(Error::Config("switch_step exceeds total_steps".into()));
        }
        if self.batch_size_initial < 2 || self.batch_size_late < 2 {
            return Err(Error::Config("batch sizes must be at least 2".into()));
        }
        if !(self.lr_initial >= 0.0 && self.lr_late >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        Ok(())
    }

    /// `(learning rate, batch size)` in effect at `step`.
    pub fn schedule(&self, step: usize) -> (f64, usize) {
        if step < self.resolved_switch_step() {
            (self.lr_initial, self.batch_size_initial)
        } else {
            (self.lr_late, self.batch_size_late)
        }
    }
}

/// SplitMix64 finaliser used to derive independent RNG seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(stream)) ^ index)
}

const STREAM_REDDIT: u64 = 1;
const STREAM_NLI: u64 = 2;
const STREAM_TASK: u64 = 3;

fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, epoch)));
    order
}

/// Index batches for one epoch: a seeded shuffle cut into `k`-sized chunks,
/// dropping the partial tail.
pub fn make_batches(len: usize, k: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || len < k {
        return Err(Error::DatasetTooSmall { needed: k.max(1), have: len });
    }
    Ok(epoch_order(len, seed, epoch).chunks_exact(k).map(<[usize]>::to_vec).collect())
}

/// Endless batch stream over a dataset of `len` items. The batch size may
/// change between calls; a new epoch starts whenever the current one
/// cannot fill a full batch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    len: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        Self { len, seed, epoch: 0, order: epoch_order(len, seed, 0), pos: 0 }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self, k: usize) -> Result<Vec<usize>> {
        if k == 0 || self.len < k {
            return Err(Error::DatasetTooSmall { needed: k.max(1), have: self.len });
        }
        if self.pos + k > self.len {
            self.epoch += 1;
            self.order = epoch_order(self.len, self.seed, self.epoch);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + k].to_vec();
        self.pos += k;
        Ok(batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Reddit,
    Nli,
}

/// One line of the training telemetry log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub step: usize,
    pub task: Task,
    pub loss: f64,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// Featurized input/response pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub input: FeatureSequence,
    pub response: FeatureSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NliFeatures {
    pub premise: FeatureSequence,
    pub hypothesis: FeatureSequence,
    pub label: NliLabel,
}

/// Featurizes pairs, skipping any whose input or response has no tokens.
/// Returns the features and the number skipped.
pub fn featurize_pairs(
    pairs: &[ConversationPair],
    vocab: &Vocabulary,
    use_bigrams: bool,
) -> (Vec<PairFeatures>, usize) {
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let input = featurize_text(&p.input_text, vocab, use_bigrams);
        let response = featurize_text(&p.response_text, vocab, use_bigrams);
        if !input.is_empty() && !response.is_empty() {
            out.push(PairFeatures { input, response });
        }
    }
    let skipped = pairs.len() - out.len();
    (out, skipped)
}

pub fn featurize_nli(examples: &[NliExample], vocab: &Vocabulary, use_bigrams: bool) -> (Vec<NliFeatures>, usize) {
    let mut out = Vec::with_capacity(examples.len());
    for e in examples {
        let premise = featurize_text(&e.premise, vocab, use_bigrams);
        let hypothesis = featurize_text(&e.hypothesis, vocab, use_bigrams);
        if !premise.is_empty() && !hypothesis.is_empty() {
            out.push(NliFeatures { premise, hypothesis, label: e.label });
        }
    }
    let skipped = examples.len() - out.len();
    (out, skipped)
}

/// What the observer sees after every step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub record: TelemetryRecord,
    pub grad_norm: f64,
    /// Parameters with a nonzero gradient this step, when tracking is on.
    pub nonzero_grads: Option<Vec<String>>,
}

/// Copies every encoder and response-DNN tensor of `pretrained` into
/// `store`. Returns the number of tensors copied.
pub fn init_shared_from(store: &mut ParameterStore, pretrained: &ParameterStore) -> Result<usize> {
    let mut copied = 0;
    for (name, p) in pretrained.iter() {
        if !matches!(param_group(name), ParamGroup::Encoder | ParamGroup::ResponseDnn) {
            continue;
        }
        if !store.contains(name) {
            return Err(Error::Config(format!("pretrained tensor `{name}` does not exist in the new model")));
        }
        store.set_value(name, p.value.clone())?;
        copied += 1;
    }
    Ok(copied)
}

/// Runs the training loop.
pub struct Trainer<'a> {
    model: &'a DualModelConfig,
    config: TrainingConfig,
    reddit: &'a [PairFeatures],
    nli: Option<&'a [NliFeatures]>,
    track_grads: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a DualModelConfig,
        config: TrainingConfig,
        reddit: &'a [PairFeatures],
        nli: Option<&'a [NliFeatures]>,
    ) -> Result<Self> {
        config.validate()?;
        let nli = nli.filter(|n| !n.is_empty());
        let mut config = config;
        if nli.is_none() {
            config.nli_task_fraction = 0.0;
        }
        let k_max = config.batch_size_initial.max(config.batch_size_late);
        if reddit.len() < k_max && config.nli_task_fraction < 1.0 {
            return Err(Error::DatasetTooSmall { needed: k_max, have: reddit.len() });
        }
        if let Some(n) = nli {
            if n.len() < k_max && config.nli_task_fraction > 0.0 {
                return Err(Error::DatasetTooSmall { needed: k_max, have: n.len() });
            }
        }
        Ok(Self { model, config, reddit, nli, track_grads: false })
    }

    /// Report the set of nonzero-gradient tensors on every step.
    pub fn track_gradients(mut self, on: bool) -> Self {
        self.track_grads = on;
        self
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    /// Trains `store` in place from `start_step` up to `total_steps`,
    /// calling `observer` after each update. Resuming at `start_step`
    /// reproduces the batches an uninterrupted run would have drawn. A non-finite loss aborts
    /// before the update, leaving `store` at its last good state.
    pub fn run<F>(&self, store: &mut ParameterStore, start_step: usize, mut observer: F) -> Result<Vec<TelemetryRecord>>
    where
        F: FnMut(&StepReport, &ParameterStore) -> Result<()>,
    {
        let seed = self.config.seed;
        let mut reddit_sampler = BatchSampler::new(self.reddit.len(), derive_seed(seed, STREAM_REDDIT, 0));
        let mut nli_sampler = self.nli.map(|n| BatchSampler::new(n.len(), derive_seed(seed, STREAM_NLI, 0)));
        let mut task_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TASK, 0));
        let mut log = Vec::new();
        let fraction = self.config.nli_task_fraction;
        let mut draw_task = |has_nli: bool| match has_nli {
            true if task_rng.gen::<f64>() < fraction => Task::Nli,
            _ => Task::Reddit,
        };

        // Replay the sampling streams so a resumed run sees the same batches.
        for step in 0..start_step.min(self.config.total_steps) {
            let (_, k) = self.config.schedule(step);
            match draw_task(nli_sampler.is_some()) {
                Task::Reddit => reddit_sampler.next_batch(k)?,
                Task::Nli => nli_sampler.as_mut().expect("nli task implies sampler").next_batch(k)?,
            };
        }

        for step in start_step..self.config.total_steps {
            let (lr, k) = self.config.schedule(step);
            let task = draw_task(nli_sampler.is_some());
            let (loss, accuracy, grads) = {
                let mut g = Graph::new(store);
                let (loss, accuracy) = match task {
                    Task::Reddit => {
                        let batch = reddit_sampler.next_batch(k)?;
                        let inputs: Vec<&FeatureSequence> = batch.iter().map(|&i| &self.reddit[i].input).collect();
                        let responses: Vec<&FeatureSequence> =
                            batch.iter().map(|&i| &self.reddit[i].response).collect();
                        let s = self.model.score_batch(&mut g, &inputs, &responses)?;
                        (self.model.response_loss(&mut g, s)?, None)
                    }
                    Task::Nli => {
                        let data = self.nli.expect("nli sampler implies data");
                        let batch = nli_sampler.as_mut().expect("checked above").next_batch(k)?;
                        let premises: Vec<&FeatureSequence> = batch.iter().map(|&i| &data[i].premise).collect();
                        let hypotheses: Vec<&FeatureSequence> = batch.iter().map(|&i| &data[i].hypothesis).collect();
                        let labels: Vec<NliLabel> = batch.iter().map(|&i| data[i].label).collect();
                        let (loss, acc) = self.model.nli_loss(&mut g, &premises, &hypotheses, &labels)?;
                        (loss, Some(acc))
                    }
                };
                let value = g.scalar(loss);
                if !value.is_finite() || g.ensure_finite().is_err() {
                    return Err(Error::NonFinite(format!(
                        "{task:?} loss at step {step} (lr {lr}, batch {k}); parameters left at step {step} state"
                    )));
                }
                (value, accuracy, g.backward(loss)?)
            };

            store.accumulate(&grads)?;
            let nonzero_grads = self.track_grads.then(|| store.nonzero_grad_names());
            let grad_norm = match self.config.clip_norm {
                Some(max) => clip_grad_norm(store, max),
                None => store.grad_norm(),
            };
            sgd_step(store, lr)?;

            let record = TelemetryRecord { step, task, loss, lr, batch_size: k, accuracy };
            observer(&StepReport { record: record.clone(), grad_norm, nonzero_grads }, store)?;
            log.push(record);
        }
        Ok(log)
    }
}

/// Writes telemetry as JSON lines: a header echoing the run configuration,
/// then one record per step.
pub struct TelemetryWriter<W: Write> {
    out: W,
}

impl TelemetryWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: &serde_json::Value) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufWriter::new(file), header)
    }
}

impl<W: Write> TelemetryWriter<W> {
    pub fn new(mut out: W, header: &serde_json::Value) -> Result<Self> {
        let line = serde_json::json!({ "run_config": header });
        writeln!(out, "{line}")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, r: &TelemetryRecord) -> Result<()> {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Parses a telemetry log, skipping the header line.
pub fn read_telemetry(text: &str) -> Result<Vec<TelemetryRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("{\"run_config\""))
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("telemetry line: {e}"))))
        .collect()
}

/// Steps at which the learning rate or batch size differs from the previous record.
pub fn schedule_switches(records: &[TelemetryRecord]) -> Vec<usize> {
    records.windows(2).filter(|w| w[0].lr != w[1].lr || w[0].batch_size != w[1].batch_size).map(|w| w[1].step).collect()
}

pub const METRICS_TAIL: usize = 100;
const CHECKPOINT_FORMAT: &str = "convsim-checkpoint";

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    step: usize,
    rng_seed: u64,
    model: DualModelConfig,
    training: TrainingConfig,
    vocab: String,
    metrics_tail: Vec<TelemetryRecord>,
    #[serde(default)]
    frozen: Vec<String>,
}

/// Parameters plus everything needed to rebuild and resume the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub store: ParameterStore,
    pub model: DualModelConfig,
    pub training: TrainingConfig,
    pub vocab: Vocabulary,
    pub metrics_tail: Vec<TelemetryRecord>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            step: self.step,
            rng_seed: self.store.rng_seed,
            model: self.model.clone(),
            training: self.training.clone(),
            vocab: self.vocab.to_text(),
            metrics_tail: self.metrics_tail.clone(),
            frozen: self.store.iter().filter(|(_, p)| !p.trainable).map(|(n, _)| n.to_string()).collect(),
        };
        let json = serde_json::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &json, &self.store)?;
        Ok(buf)
    }

    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let (json, mut store) = read_checkpoint(r)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&json).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unexpected checkpoint format `{}`", meta.format)));
        }
        store.rng_seed = meta.rng_seed;
        for name in &meta.frozen {
            store.set_trainable(name, false)?;
        }
        Ok(Self {
            step: meta.step,
            store,
            model: meta.model,
            training: meta.training,
            vocab: Vocabulary::from_text(&meta.vocab)?,
            metrics_tail: meta.metrics_tail,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn into_model(self) -> Model {
        Model { config: self.model, store: self.store, vocab: self.vocab }
    }
}
