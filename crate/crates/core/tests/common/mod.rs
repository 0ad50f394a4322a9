#![allow(dead_code)]

use convsim::compute::{Activation, ParameterStore};
use convsim::corpus::ConversationPair;
use convsim::dual_model::{DualModelConfig, Model, NliHeadConfig, ResponseDnnConfig};
use convsim::encoders::{DanConfig, EncoderConfig};
use convsim::evaluation::{cosine, precision_at_n};
use convsim::synthetic::{SyntheticConfig, SyntheticCorpus};
use convsim::text::{build_vocab, normalize_tokenize, Vocabulary};
use convsim::training::{featurize_nli, featurize_pairs, StepReport, Trainer, TrainingConfig};
use convsim::Result;

pub fn dan_config(d: usize) -> DualModelConfig {
    DualModelConfig {
        encoder: EncoderConfig::Dan(DanConfig {
            embed_dim: d,
            hidden_layers: vec![d, d, d],
            activation: Activation::Tanh,
        }),
        response_dnn: ResponseDnnConfig { hidden_layers: vec![d, d], activation: Activation::Tanh },
        nli_head: NliHeadConfig { hidden: d, activation: Activation::Tanh },
    }
}

pub fn vocab_for(texts: &[&str]) -> Vocabulary {
    let tokens: Vec<Vec<String>> = texts.iter().map(|t| normalize_tokenize(t)).collect();
    build_vocab(&tokens, 1, 100_000).unwrap()
}

pub struct SyntheticRun {
    pub corpus: SyntheticCorpus,
    pub model: Model,
    pub nli_steps: usize,
    pub reports: Vec<StepReport>,
}

pub fn synthetic_training(
    steps: usize,
    nli_fraction: f64,
    training: TrainingConfig,
    track_gradients: bool,
) -> Result<SyntheticRun> {
    let corpus = SyntheticCorpus::generate(SyntheticConfig::default())?;
    let nli = corpus.nli_examples(960, 7);
    let mut texts: Vec<&str> = Vec::new();
    for p in &corpus.train {
        texts.push(&p.pair.input_text);
        texts.push(&p.pair.response_text);
    }
    for e in &nli {
        texts.push(&e.premise);
        texts.push(&e.hypothesis);
    }
    let vocab = vocab_for(&texts);
    let config = dan_config(64);
    let mut store = config.init_store(vocab.word_size(), vocab.bigram_size(), training.seed)?;
    let (reddit, _) = featurize_pairs(&corpus.train_pairs(), &vocab, true);
    let (nli, _) = featurize_nli(&nli, &vocab, true);
    let training = TrainingConfig { total_steps: steps, nli_task_fraction: nli_fraction, ..training };
    let trainer = Trainer::new(&config, training, &reddit, Some(&nli))?.track_gradients(track_gradients);
    let mut reports = Vec::new();
    trainer.run(&mut store, 0, |r, _| {
        reports.push(r.clone());
        Ok(())
    })?;
    let nli_steps = reports.iter().filter(|r| r.record.task == convsim::training::Task::Nli).count();
    Ok(SyntheticRun { corpus, model: Model { config, store, vocab }, nli_steps, reports })
}

/// Mean held-out P@1 over rounds of one pair per cluster (1 positive, 19 negatives).
pub fn held_out_p_at_1(run: &SyntheticRun) -> Result<f64> {
    let rounds = run.corpus.held_out_rounds();
    let mut total = 0.0;
    for (i, round) in rounds.iter().enumerate() {
        total += round_p_at_1(&run.model, round, i as u64)?;
    }
    Ok(total / rounds.len() as f64)
}

fn round_p_at_1(model: &Model, round: &[ConversationPair], seed: u64) -> Result<f64> {
    let inputs: Vec<&str> = round.iter().map(|p| p.input_text.as_str()).collect();
    let responses: Vec<&str> = round.iter().map(|p| p.response_text.as_str()).collect();
    let u = model.embed_all(&inputs)?;
    let v = model.response_vectors(&model.embed_all(&responses)?)?;
    let n = round.len();
    let p =
        precision_at_n(n, n, n - 1, &[1], seed, |q, c| u[q].as_slice().iter().zip(&v[c]).map(|(a, b)| a * b).sum())?;
    Ok(p[0].value)
}

/// (mean intra-cluster cosine, mean inter-cluster cosine) of held-out input embeddings.
pub fn cluster_cosines(run: &SyntheticRun) -> Result<(f64, f64)> {
    let texts: Vec<&str> = run.corpus.held_out.iter().map(|p| p.pair.input_text.as_str()).collect();
    let emb = run.model.embed_all(&texts)?;
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let c = cosine(emb[i].as_slice(), emb[j].as_slice())?;
            if run.corpus.held_out[i].cluster == run.corpus.held_out[j].cluster {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    Ok((intra / n_intra as f64, inter / n_inter as f64))
}

pub fn store_names(store: &ParameterStore) -> Vec<String> {
    store.names().map(String::from).collect()
}
