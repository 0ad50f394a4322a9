use std::collections::VecDeque;
use std::fs::{self, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use convsim::compute::{Activation, ParameterStore};
use convsim::corpus::{load_nli, load_pairs};
use convsim::dual_model::{DualModelConfig, NliHeadConfig, ResponseDnnConfig};
use convsim::encoders::{DanConfig, EncoderConfig, TransformerConfig};
use convsim::text::{build_vocab, normalize_tokenize, Vocabulary};
use convsim::training::{
    featurize_nli, featurize_pairs, init_shared_from, Checkpoint, Task, TelemetryRecord, TelemetryWriter, Trainer,
    TrainingConfig, METRICS_TAIL,
};
use convsim::{Error, Result};
use serde_json::json;

use crate::config::{input_path, optional_input, require, resolve_seed};
use crate::{EncoderKind, TrainArgs};

fn has_model_keys(a: &TrainArgs) -> bool {
    a.encoder.is_some()
        || a.embed_dim.is_some()
        || a.dan_layers.is_some()
        || a.layers.is_some()
        || a.heads.is_some()
        || a.hidden.is_some()
        || a.filter.is_some()
        || a.output_dim.is_some()
        || a.response_layers.is_some()
        || a.nli_hidden.is_some()
}

fn model_config(a: &TrainArgs) -> DualModelConfig {
    let defaults = DualModelConfig::default();
    let encoder = match a.encoder.unwrap_or(EncoderKind::Dan) {
        EncoderKind::Dan => {
            let d = DanConfig::default();
            EncoderConfig::Dan(DanConfig {
                embed_dim: a.embed_dim.unwrap_or(d.embed_dim),
                hidden_layers: a.dan_layers.clone().unwrap_or(d.hidden_layers),
                activation: d.activation,
            })
        }
        EncoderKind::Transformer => {
            let t = TransformerConfig::default();
            EncoderConfig::Transformer(TransformerConfig {
                layers: a.layers.unwrap_or(t.layers),
                heads: a.heads.unwrap_or(t.heads),
                hidden: a.hidden.unwrap_or(t.hidden),
                filter: a.filter.unwrap_or(t.filter),
                output_dim: a.output_dim.unwrap_or(t.output_dim),
            })
        }
    };
    DualModelConfig {
        encoder,
        response_dnn: ResponseDnnConfig {
            hidden_layers: a.response_layers.clone().unwrap_or(defaults.response_dnn.hidden_layers),
            activation: Activation::Tanh,
        },
        nli_head: NliHeadConfig {
            hidden: a.nli_hidden.unwrap_or(defaults.nli_head.hidden),
            activation: Activation::Tanh,
        },
    }
}

fn training_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let d = TrainingConfig::default();
    Ok(TrainingConfig {
        batch_size_initial: a.batch_size_initial.unwrap_or(d.batch_size_initial),
        batch_size_late: a.batch_size_late.unwrap_or(d.batch_size_late),
        lr_initial: a.lr_initial.unwrap_or(d.lr_initial),
        lr_late: a.lr_late.unwrap_or(d.lr_late),
        switch_step: a.switch_step.or(d.switch_step),
        total_steps: a.total_steps.unwrap_or(d.total_steps),
        nli_task_fraction: a.nli_fraction.unwrap_or(d.nli_task_fraction),
        seed: resolve_seed(a.seed)?,
        checkpoint_every: a.checkpoint_every.unwrap_or(d.checkpoint_every),
        clip_norm: match a.clip_norm {
            Some(0.0) => None,
            Some(c) => Some(c),
            None => d.clip_norm,
        },
    })
}

struct Setup {
    model: DualModelConfig,
    training: TrainingConfig,
    vocab: Vocabulary,
    store: ParameterStore,
    start_step: usize,
    tail: Vec<TelemetryRecord>,
}

fn fresh_setup(a: &TrainArgs, texts: impl Fn() -> Vec<String>) -> Result<Setup> {
    let training = training_config(a)?;
    let pretrained = optional_input(&a.init_from, "init_from")?.map(Checkpoint::load).transpose()?;
    if pretrained.is_some() && has_model_keys(a) {
        return Err(Error::Config(
            "architecture options cannot be combined with --init-from; the checkpoint defines them".into(),
        ));
    }
    let vocab = match (optional_input(&a.vocab, "vocab")?, &pretrained) {
        (Some(path), _) => Vocabulary::load(path)?,
        (None, Some(ckpt)) => ckpt.vocab.clone(),
        (None, None) => build_vocab(
            texts().iter().map(|t| normalize_tokenize(t)),
            a.min_count.unwrap_or(1),
            a.max_vocab.unwrap_or(usize::MAX),
        )?,
    };
    let model = match &pretrained {
        Some(ckpt) => ckpt.model.clone(),
        None => model_config(a),
    };
    let mut store = model.init_store(vocab.word_size(), vocab.bigram_size(), training.seed)?;
    if let Some(ckpt) = &pretrained {
        let copied = init_shared_from(&mut store, &ckpt.store)?;
        eprintln!("initialised {copied} shared tensors from the pretrained checkpoint");
    }
    Ok(Setup { model, training, vocab, store, start_step: 0, tail: Vec::new() })
}

fn resume_setup(a: &TrainArgs, path: &Path) -> Result<Setup> {
    if has_model_keys(a) || a.init_from.is_some() || a.vocab.is_some() {
        return Err(Error::Config("--resume takes the model and vocabulary from the checkpoint".into()));
    }
    let ckpt = Checkpoint::load(path)?;
    let mut training = ckpt.training.clone();
    if let Some(t) = a.total_steps {
        training.total_steps = t;
    }
    Ok(Setup {
        model: ckpt.model,
        training,
        vocab: ckpt.vocab,
        store: ckpt.store,
        start_step: ckpt.step,
        tail: ckpt.metrics_tail,
    })
}

fn checkpoint(setup: &Setup, store: &ParameterStore, step: usize, tail: &VecDeque<TelemetryRecord>) -> Checkpoint {
    Checkpoint {
        step,
        store: store.clone(),
        model: setup.model.clone(),
        training: setup.training.clone(),
        vocab: setup.vocab.clone(),
        metrics_tail: tail.iter().cloned().collect(),
    }
}

pub fn train(args: TrainArgs, threads: usize) -> Result<()> {
    let pairs_path = input_path(&args.pairs, "pairs")?;
    let nli_path = optional_input(&args.nli, "nli")?;
    let out_dir: PathBuf = require(&args.out_dir, "out_dir")?;

    let pairs = load_pairs(&pairs_path)?;
    if pairs.dropped > 0 {
        eprintln!("skipped {} malformed pair lines", pairs.dropped);
    }
    let nli = nli_path.as_deref().map(load_nli).transpose()?;
    if let Some(n) = nli.as_ref().filter(|n| n.dropped > 0) {
        eprintln!("skipped {} NLI lines", n.dropped);
    }

    let mut setup = match optional_input(&args.resume, "resume")? {
        Some(path) => resume_setup(&args, &path)?,
        None => fresh_setup(&args, || {
            let mut texts = Vec::new();
            for p in &pairs.records {
                texts.push(p.input_text.clone());
                texts.push(p.response_text.clone());
            }
            for ex in nli.iter().flat_map(|n| &n.records) {
                texts.push(ex.premise.clone());
                texts.push(ex.hypothesis.clone());
            }
            texts
        })?,
    };

    let bigrams = setup.model.encoder.uses_bigrams();
    let (reddit, skipped) = featurize_pairs(&pairs.records, &setup.vocab, bigrams);
    if skipped > 0 {
        eprintln!("skipped {skipped} pairs with an empty side after tokenization");
    }
    let nli_features = nli.as_ref().map(|n| featurize_nli(&n.records, &setup.vocab, bigrams).0);
    let trainer = Trainer::new(&setup.model, setup.training.clone(), &reddit, nli_features.as_deref())?;
    setup.training = trainer.config().clone();

    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let header = json!({
        "command": "train",
        "args": args,
        "threads": threads,
        "model": setup.model,
        "training": setup.training,
        "vocab": { "words": setup.vocab.word_size(), "bigrams": setup.vocab.bigram_size() },
        "reddit_pairs": reddit.len(),
        "nli_examples": nli_features.as_ref().map_or(0, |n| n.len()),
        "start_step": setup.start_step,
    });
    let telemetry_path = out_dir.join("telemetry.jsonl");
    let mut telemetry = if setup.start_step > 0 {
        let file = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&telemetry_path)
            .map_err(|e| Error::io(&telemetry_path, e))?;
        TelemetryWriter::new(BufWriter::new(file), &header)?
    } else {
        TelemetryWriter::create(&telemetry_path, &header)?
    };

    let mut tail: VecDeque<TelemetryRecord> = setup.tail.iter().cloned().collect();
    let mut completed = setup.start_step;
    let mut nli_steps = 0;
    let mut store = setup.store.clone();
    let every = setup.training.checkpoint_every;
    let outcome = trainer.run(&mut store, setup.start_step, |report, current| {
        telemetry.record(&report.record)?;
        if tail.len() == METRICS_TAIL {
            tail.pop_front();
        }
        tail.push_back(report.record.clone());
        if report.record.task == Task::Nli {
            nli_steps += 1;
        }
        completed = report.record.step + 1;
        if every > 0 && completed % every == 0 {
            telemetry.flush()?;
            checkpoint(&setup, current, completed, &tail).save(out_dir.join(format!("checkpoint-{completed}.ckpt")))?;
        }
        Ok(())
    });
    telemetry.flush()?;

    match outcome {
        Ok(_) => {
            let path = out_dir.join("model.ckpt");
            checkpoint(&setup, &store, completed, &tail).save(&path)?;
            let last = tail.back();
            let summary = json!({
                "steps": completed,
                "nli_steps": nli_steps,
                "final_loss": last.map(|r| r.loss),
                "checkpoint": path,
                "telemetry": telemetry_path,
            });
            println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?);
            Ok(())
        }
        // Any numeric failure means the run diverged; keep the last good state.
        Err(e) if e.exit_code() == 3 => {
            let path = out_dir.join("diagnostic.ckpt");
            setup.store = store;
            checkpoint(&setup, &setup.store, completed, &tail).save(&path)?;
            eprintln!("wrote last finite parameters to {}", path.display());
            Err(e)
        }
        Err(e) => Err(e),
    }
}
