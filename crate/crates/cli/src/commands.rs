use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use convsim::corpus::{self, load_cqa, load_pairs, load_sts, read_comments, write_pairs, Split};
use convsim::dual_model::Model;
use convsim::evaluation::{
    self, cosine, embed_sts, fit_adaptation, raw_from_cosine, scaled_from_cosine, sts_metric_records, write_sts_csv,
    AdaptationConfig, MetricRecord, DEFAULT_NUM_NEGATIVES, DEFAULT_PRECISION_RANKS,
};
use convsim::synthetic::{SyntheticConfig, SyntheticCorpus};
use convsim::text::{self, normalize_tokenize};
use convsim::training::Checkpoint;
use convsim::{Error, Result};
use serde::Serialize;

use crate::config::{input_path, optional_input, require, resolve_seed};
use crate::{
    BuildVocabArgs, EmbedArgs, EvalCqaArgs, EvalResponseArgs, EvalStsArgs, ExtractArgs, SimArgs, SyntheticArgs,
};

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(Box::new(BufReader::new(file)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_model(path: &Option<std::path::PathBuf>) -> Result<Model> {
    Ok(Checkpoint::load(input_path(path, "checkpoint")?)?.into_model())
}

fn note_dropped(what: &str, dropped: usize) {
    if dropped > 0 {
        eprintln!("skipped {dropped} malformed {what} lines");
    }
}

fn split_label(given: &Option<String>, path: &Path, fallback: Split) -> Result<String> {
    match given {
        Some(s) => Ok(s.parse::<Split>()?.as_str().to_string()),
        None => Ok(Split::from_path(path).unwrap_or(fallback).as_str().to_string()),
    }
}

pub fn extract(args: ExtractArgs) -> Result<()> {
    let input = input_path(&args.comments, "comments")?;
    let out = require(&args.out, "out")?;
    let (comments, malformed) = read_comments(open_input(&input)?)?;
    let (pairs, mut stats) = corpus::extract_pairs(&comments);
    stats.malformed = malformed;
    let mut w = create(&out)?;
    write_pairs(&mut w, &pairs)?;
    w.flush().map_err(|e| Error::io(&out, e))?;
    print_json(&stats)
}

pub fn build_vocab(args: BuildVocabArgs) -> Result<()> {
    let pairs = input_path(&args.pairs, "pairs")?;
    let nli = optional_input(&args.nli, "nli")?;
    let out = require(&args.out, "out")?;
    let mut texts = Vec::new();
    let loaded = load_pairs(&pairs)?;
    note_dropped("pair", loaded.dropped);
    for p in loaded.records {
        texts.push(p.input_text);
        texts.push(p.response_text);
    }
    if let Some(path) = nli {
        let loaded = corpus::load_nli(&path)?;
        note_dropped("NLI", loaded.dropped);
        for ex in loaded.records {
            texts.push(ex.premise);
            texts.push(ex.hypothesis);
        }
    }
    let vocab = text::build_vocab(
        texts.iter().map(|t| normalize_tokenize(t)),
        args.min_count.unwrap_or(1),
        args.max_vocab.unwrap_or(usize::MAX),
    )?;
    vocab.save(&out)?;
    print_json(&serde_json::json!({
        "words": vocab.word_size(),
        "bigrams": vocab.bigram_size(),
    }))
}

pub fn eval_response(args: EvalResponseArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let path = input_path(&args.pairs, "pairs")?;
    let loaded = load_pairs(&path)?;
    note_dropped("pair", loaded.dropped);
    let ns = args.ns.clone().unwrap_or_else(|| DEFAULT_PRECISION_RANKS.to_vec());
    let results = evaluation::eval_response(
        &model,
        &loaded.records,
        args.negatives.unwrap_or(DEFAULT_NUM_NEGATIVES),
        &ns,
        resolve_seed(args.seed)?,
    )?;
    let split = split_label(&args.split, &path, Split::Test)?;
    let records: Vec<MetricRecord> =
        results.iter().map(|p| MetricRecord::new(format!("p@{}", p.n), &split, "all", p.value)).collect();
    print_json(&records)
}

pub fn eval_sts(args: EvalStsArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let path = input_path(&args.data, "data")?;
    let split = split_label(&args.split, &path, Split::Test)?;
    let loaded = load_sts(&path, split.parse()?)?;
    note_dropped("STS", loaded.dropped);
    let pairs = embed_sts(&model, &loaded.records)?;

    let matrix = if args.tune_matrix {
        let train = load_sts(input_path(&args.train, "train")?, Split::Train)?;
        let dev = load_sts(input_path(&args.dev, "dev")?, Split::Dev)?;
        let defaults = AdaptationConfig::default();
        let cfg = AdaptationConfig {
            learning_rate: args.adapt_lr.unwrap_or(defaults.learning_rate),
            max_steps: args.adapt_steps.unwrap_or(defaults.max_steps),
            patience: args.adapt_patience.unwrap_or(defaults.patience),
        };
        let fit = fit_adaptation(&embed_sts(&model, &train.records)?, &embed_sts(&model, &dev.records)?, &cfg)?;
        eprintln!(
            "adaptation: dev r {:.4} -> {:.4} (best step {} of {})",
            fit.initial_dev_r, fit.best_dev_r, fit.best_step, fit.steps_run
        );
        Some(fit.matrix)
    } else {
        None
    };

    let report = evaluation::eval_sts(&pairs, matrix.as_ref())?;
    if let Some(csv) = &args.emit_csv {
        let mut w = create(csv)?;
        write_sts_csv(&mut w, &report.rows)?;
        w.flush().map_err(|e| Error::io(csv, e))?;
    }
    print_json(&sts_metric_records(&report, &split))
}

pub fn eval_cqa(args: EvalCqaArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let path = input_path(&args.data, "data")?;
    let loaded = load_cqa(&path)?;
    note_dropped("CQA", loaded.dropped);
    let report = evaluation::eval_cqa(&model, &loaded.records, args.include_zero_good)?;
    let split = split_label(&args.split, &path, Split::Test)?;
    eprintln!("scored {} queries, excluded {}", report.scored, report.excluded);
    print_json(&[MetricRecord::new("map", &split, "all", report.map)])
}

pub fn sim(args: SimArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let u = model.embed(&require(&args.first, "first")?)?;
    let v = model.embed(&require(&args.second, "second")?)?;
    let c = cosine(&u.0, &v.0)?;
    let out = if args.raw {
        serde_json::json!({ "scaled": scaled_from_cosine(c), "raw": raw_from_cosine(c) })
    } else {
        serde_json::json!({ "scaled": scaled_from_cosine(c) })
    };
    print_json(&out)
}

pub fn embed(args: EmbedArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let input = input_path(&args.input, "input")?;
    let mut text = String::new();
    open_input(&input)?.read_to_string(&mut text).map_err(|e| Error::io(&input, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let vectors = model.embed_all(&lines)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for v in &vectors {
        let line: Vec<String> = v.0.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn generate_synthetic(args: SyntheticArgs) -> Result<()> {
    let dir = require(&args.out_dir, "out_dir")?;
    let seed = resolve_seed(args.seed)?;
    let config = SyntheticConfig {
        seed,
        clusters: args.clusters.unwrap_or(SyntheticConfig::default().clusters),
        ..Default::default()
    };
    let corpus = SyntheticCorpus::generate(config)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let train = dir.join("train.tsv");
    let mut w = create(&train)?;
    write_pairs(&mut w, &corpus.train_pairs())?;
    w.flush().map_err(|e| Error::io(&train, e))?;

    let held_out = dir.join("held_out.tsv");
    let pairs: Vec<_> = corpus.held_out.iter().map(|p| p.pair.clone()).collect();
    let mut w = create(&held_out)?;
    write_pairs(&mut w, &pairs)?;
    w.flush().map_err(|e| Error::io(&held_out, e))?;

    let nli = dir.join("nli.jsonl");
    let mut w = create(&nli)?;
    let count = args.nli_examples.unwrap_or(960);
    for ex in corpus.nli_examples(count, seed.wrapping_add(1)) {
        let line = serde_json::json!({
            "sentence1": ex.premise,
            "sentence2": ex.hypothesis,
            "gold_label": ex.label,
        });
        writeln!(w, "{line}").map_err(|e| Error::io(&nli, e))?;
    }
    w.flush().map_err(|e| Error::io(&nli, e))?;

    print_json(&serde_json::json!({
        "train_pairs": corpus.train.len(),
        "held_out_pairs": corpus.held_out.len(),
        "nli_examples": count,
    }))
}
