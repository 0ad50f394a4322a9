//! Response ranking (P@N), angular STS scoring with Pearson r and an
//! optional adaptation matrix, and CQA mean average precision.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConversationPair, CqaQuery, Genre, StsExample};
use crate::dual_model::Model;
use crate::encoders::dot;
use crate::training::derive_seed;
use crate::{Error, Result};

pub const DEFAULT_NUM_NEGATIVES: usize = 99;
pub const DEFAULT_PRECISION_RANKS: [usize; 3] = [1, 3, 10];

/// Rank of a positive among negatives, 1-based. Ties count against the positive.
pub fn pessimistic_rank(positive: f64, negatives: impl IntoIterator<Item = f64>) -> usize {
    1 + negatives.into_iter().filter(|&s| s >= positive).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtN {
    pub n: usize,
    pub value: f64,
}

/// Negatives for query `q`: `count` distinct pool indices other than `q`.
pub fn sample_negatives(pool_size: usize, q: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 17, q as u64));
    sample(&mut rng, pool_size - 1, count).into_iter().map(|i| if i >= q { i + 1 } else { i }).collect()
}

/// P@N for `n_queries` queries whose true candidate is the pool entry with
/// the same index. `score(q, c)` scores candidate `c` for query `q`.
pub fn precision_at_n<F>(
    n_queries: usize,
    pool_size: usize,
    num_negatives: usize,
    ns: &[usize],
    seed: u64,
    score: F,
) -> Result<Vec<PrecisionAtN>>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if n_queries == 0 {
        return Err(Error::EmptyInput);
    }
    if pool_size < num_negatives + 1 || pool_size < n_queries {
        return Err(Error::DatasetTooSmall { needed: (num_negatives + 1).max(n_queries), have: pool_size });
    }
    let ranks: Vec<usize> = (0..n_queries)
        .into_par_iter()
        .map(|q| {
            let negatives = sample_negatives(pool_size, q, num_negatives, seed);
            pessimistic_rank(score(q, q), negatives.into_iter().map(|c| score(q, c)))
        })
        .collect();
    Ok(ns
        .iter()
        .map(|&n| PrecisionAtN { n, value: ranks.iter().filter(|&&r| r <= n).count() as f64 / n_queries as f64 })
        .collect())
}

/// P@N of a model on held-out pairs; each pair's response is the positive,
/// the other pairs' responses form the negative pool.
pub fn eval_response(
    model: &Model,
    pairs: &[ConversationPair],
    num_negatives: usize,
    ns: &[usize],
    seed: u64,
) -> Result<Vec<PrecisionAtN>> {
    let inputs: Vec<&str> = pairs.iter().map(|p| p.input_text.as_str()).collect();
    let responses: Vec<&str> = pairs.iter().map(|p| p.response_text.as_str()).collect();
    let u = model.embed_all(&inputs)?;
    let v = model.response_vectors(&model.embed_all(&responses)?)?;
    precision_at_n(pairs.len(), pairs.len(), num_negatives, ns, seed, |q, c| dot(u[q].as_slice(), &v[c]))
}

/// Cosine of two vectors, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!("cosine of {} and {} dims", u.len(), v.len())));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu < 1e-12 || nv < 1e-12 {
        return Err(Error::DegenerateNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Negative angle for a cosine value, in [-pi, 0]. Identical vectors give
/// +0.0, not -0.0.
pub fn raw_from_cosine(c: f64) -> f64 {
    0.0 - c.clamp(-1.0, 1.0).acos()
}

/// Angle mapped onto the 0..5 similarity scale.
pub fn scaled_from_cosine(c: f64) -> f64 {
    5.0 * (1.0 - c.clamp(-1.0, 1.0).acos() / PI)
}

pub fn sts_score_raw(u: &[f64], v: &[f64]) -> Result<f64> {
    cosine(u, v).map(raw_from_cosine)
}

pub fn sts_score_scaled(u: &[f64], v: &[f64]) -> Result<f64> {
    cosine(u, v).map(scaled_from_cosine)
}

/// Sample Pearson correlation (two-pass).
pub fn pearson_r(preds: &[f64], golds: &[f64]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} gold scores", preds.len(), golds.len())));
    }
    let n = preds.len();
    if n < 2 {
        return Err(Error::UndefinedCorrelation(format!("{n} points")));
    }
    let mx = preds.iter().sum::<f64>() / n as f64;
    let my = golds.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in preds.iter().zip(golds) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Linear map applied to both sentence embeddings before STS scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationMatrix {
    dim: usize,
    /// Row-major `dim x dim`.
    data: Vec<f64>,
}

impl AdaptationMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("adaptation matrix must be square".into()));
        }
        let data: Vec<f64> = rows.concat();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("adaptation matrix".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `M x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn score(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        if u.len() != self.dim || v.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding dim {} for a {}-dim adaptation matrix",
                u.len(),
                self.dim
            )));
        }
        sts_score_scaled(&self.apply(u), &self.apply(v))
    }
}

/// Embedded STS pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StsVectors {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub gold: f64,
    pub genre: Genre,
}

pub fn embed_sts(model: &Model, examples: &[StsExample]) -> Result<Vec<StsVectors>> {
    let s1: Vec<&str> = examples.iter().map(|e| e.sentence1.as_str()).collect();
    let s2: Vec<&str> = examples.iter().map(|e| e.sentence2.as_str()).collect();
    let u = model.embed_all(&s1)?;
    let v = model.embed_all(&s2)?;
    Ok(examples
        .iter()
        .zip(u.into_iter().zip(v))
        .map(|(e, (u, v))| StsVectors { u: u.0, v: v.0, gold: e.gold, genre: e.genre })
        .collect())
}

pub fn score_sts(pairs: &[StsVectors], matrix: &AdaptationMatrix) -> Result<Vec<f64>> {
    pairs.par_iter().map(|p| matrix.score(&p.u, &p.v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Stop after this many steps without a dev improvement.
    pub patience: usize,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self { learning_rate: 0.5, max_steps: 2000, patience: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptationFit {
    pub matrix: AdaptationMatrix,
    pub initial_dev_r: f64,
    pub best_dev_r: f64,
    pub best_step: usize,
    pub steps_run: usize,
}

/// Mean squared error of the scaled scores and its gradient with respect to `M`.
pub fn adaptation_loss_and_grad(matrix: &AdaptationMatrix, train: &[StsVectors]) -> Result<(f64, Vec<f64>)> {
    let d = matrix.dim;
    let n = train.len() as f64;
    let mut grad = vec![0.0; d * d];
    let mut loss = 0.0;
    // The derivative of acos is unbounded at +-1.
    const EDGE: f64 = 1e-6;
    for p in train {
        let a = matrix.apply(&p.u);
        let b = matrix.apply(&p.v);
        let na = dot(&a, &a).sqrt();
        let nb = dot(&b, &b).sqrt();
        if na < 1e-12 || nb < 1e-12 {
            return Err(Error::DegenerateNorm);
        }
        let c = (dot(&a, &b) / (na * nb)).clamp(-1.0, 1.0);
        let err = scaled_from_cosine(c) - p.gold;
        loss += err * err / n;
        let cc = c.clamp(-1.0 + EDGE, 1.0 - EDGE);
        let ds_dc = 5.0 / (PI * (1.0 - cc * cc).sqrt());
        let w = 2.0 * err * ds_dc / n;
        for i in 0..d {
            let dc_da = b[i] / (na * nb) - c * a[i] / (na * na);
            let dc_db = a[i] / (na * nb) - c * b[i] / (nb * nb);
            let row = &mut grad[i * d..(i + 1) * d];
            for ((r, uj), vj) in row.iter_mut().zip(&p.u).zip(&p.v) {
                *r += w * (dc_da * uj + dc_db * vj);
            }
        }
    }
    Ok((loss, grad))
}

/// Fits `M` by full-batch gradient descent from the identity, keeping the
/// iterate with the best dev Pearson r.
pub fn fit_adaptation(train: &[StsVectors], dev: &[StsVectors], config: &AdaptationConfig) -> Result<AdaptationFit> {
    let dim = train.first().or(dev.first()).map(|p| p.u.len()).ok_or(Error::EmptyInput)?;
    let golds: Vec<f64> = dev.iter().map(|p| p.gold).collect();
    let dev_r = |m: &AdaptationMatrix| -> Result<f64> { pearson_r(&score_sts(dev, m)?, &golds) };

    let mut current = AdaptationMatrix::identity(dim);
    let initial_dev_r = dev_r(&current)?;
    let mut best = (current.clone(), initial_dev_r, 0);
    let mut steps_run = 0;
    for step in 1..=config.max_steps {
        let (_, grad) = adaptation_loss_and_grad(&current, train)?;
        for (m, g) in current.data.iter_mut().zip(&grad) {
            *m -= config.learning_rate * g;
        }
        if current.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("adaptation matrix at step {step}")));
        }
        steps_run = step;
        let r = dev_r(&current)?;
        if r > best.1 {
            best = (current.clone(), r, step);
        } else if step - best.2 >= config.patience {
            break;
        }
    }
    let (matrix, best_dev_r, best_step) = best;
    Ok(AdaptationFit { matrix, initial_dev_r, best_dev_r, best_step, steps_run })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsRow {
    pub gold: f64,
    pub pred: f64,
    pub genre: Genre,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenreResult {
    pub count: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StsReport {
    pub overall: f64,
    pub count: usize,
    pub per_genre: BTreeMap<Genre, GenreResult>,
    pub rows: Vec<StsRow>,
}

/// Pearson r overall and per genre for scored rows. Genres with fewer than
/// two rows are omitted from the breakdown.
pub fn sts_report(rows: Vec<StsRow>) -> Result<StsReport> {
    let preds: Vec<f64> = rows.iter().map(|r| r.pred).collect();
    let golds: Vec<f64> = rows.iter().map(|r| r.gold).collect();
    let overall = pearson_r(&preds, &golds)?;
    let mut per_genre = BTreeMap::new();
    for genre in Genre::ALL {
        let (p, g): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.genre == genre).map(|r| (r.pred, r.gold)).unzip();
        if p.len() >= 2 {
            per_genre.insert(genre, GenreResult { count: p.len(), r: pearson_r(&p, &g)? });
        }
    }
    Ok(StsReport { overall, count: rows.len(), per_genre, rows })
}

/// Scores embedded pairs with `matrix` (identity when absent) and reports r.
pub fn eval_sts(pairs: &[StsVectors], matrix: Option<&AdaptationMatrix>) -> Result<StsReport> {
    let dim = pairs.first().ok_or(Error::EmptyInput)?.u.len();
    let identity;
    let matrix = match matrix {
        Some(m) => m,
        None => {
            identity = AdaptationMatrix::identity(dim);
            &identity
        }
    };
    let preds = score_sts(pairs, matrix)?;
    sts_report(pairs.iter().zip(preds).map(|(p, pred)| StsRow { gold: p.gold, pred, genre: p.genre }).collect())
}

/// Writes `gold,pred,genre` rows. Floats use the shortest round-trip form.
pub fn write_sts_csv<W: Write>(mut w: W, rows: &[StsRow]) -> Result<()> {
    writeln!(w, "gold,pred,genre")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.gold, r.pred, r.genre.as_str())?;
    }
    Ok(())
}

/// A candidate after ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub index: usize,
    pub score: f64,
    pub good: bool,
}

/// Candidates sorted by descending score; ties keep their original order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub ranked: Vec<RankedCandidate>,
}

impl RankingResult {
    pub fn new(scores: &[f64], good: &[bool]) -> Self {
        let mut ranked: Vec<RankedCandidate> = scores
            .iter()
            .zip(good)
            .enumerate()
            .map(|(index, (&score, &good))| RankedCandidate { index, score, good })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
        Self { ranked }
    }

    pub fn average_precision(&self) -> Option<f64> {
        let flags: Vec<bool> = self.ranked.iter().map(|c| c.good).collect();
        average_precision(&flags)
    }
}

/// AP of a relevance list in rank order; `None` when nothing is relevant.
pub fn average_precision(good_in_rank_order: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &g) in good_in_rank_order.iter().enumerate() {
        if g {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqaReport {
    /// Mean AP times 100.
    pub map: f64,
    pub scored: usize,
    pub excluded: usize,
}

/// MAP x 100 over rankings. Queries without good candidates are skipped
/// unless `include_zero_good` counts them as AP 0.
pub fn mean_average_precision(rankings: &[RankingResult], include_zero_good: bool) -> Result<CqaReport> {
    if rankings.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    let mut scored = 0;
    let mut excluded = 0;
    for r in rankings {
        match r.average_precision() {
            Some(ap) => {
                sum += ap;
                scored += 1;
            }
            None if include_zero_good => scored += 1,
            None => excluded += 1,
        }
    }
    if scored == 0 {
        return Err(Error::Data("no query has a relevant candidate".into()));
    }
    Ok(CqaReport { map: 100.0 * sum / scored as f64, scored, excluded })
}

/// Ranks each query's candidates by cosine to the original question.
pub fn eval_cqa(model: &Model, queries: &[CqaQuery], include_zero_good: bool) -> Result<CqaReport> {
    if queries.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rankings: Vec<RankingResult> = queries
        .par_iter()
        .map(|q| {
            let u = model.embed(&q.original)?;
            let texts: Vec<&str> = q.candidates.iter().map(|c| c.text.as_str()).collect();
            let scores =
                texts.iter().map(|t| cosine(u.as_slice(), model.embed(t)?.as_slice())).collect::<Result<Vec<f64>>>()?;
            let good: Vec<bool> = q.candidates.iter().map(|c| c.relevance.is_good()).collect();
            Ok(RankingResult::new(&scores, &good))
        })
        .collect::<Result<_>>()?;
    mean_average_precision(&rankings, include_zero_good)
}

/// One entry of the metrics summary JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub split: String,
    pub genre: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(metric: impl Into<String>, split: impl Into<String>, genre: impl Into<String>, value: f64) -> Self {
        Self { metric: metric.into(), split: split.into(), genre: genre.into(), value }
    }
}

pub fn sts_metric_records(report: &StsReport, split: &str) -> Vec<MetricRecord> {
    let mut out = vec![MetricRecord::new("pearson_r", split, "all", report.overall)];
    for (genre, g) in &report.per_genre {
        out.push(MetricRecord::new("pearson_r", split, genre.as_str(), g.r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rel(x: f64, y: f64) -> bool {
        (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()))
    }

    #[test]
    fn oracle_and_adversarial_scorers() {
        let ns = DEFAULT_PRECISION_RANKS;
        let best = precision_at_n(200, 200, 99, &ns, 1, |q, c| if q == c { 1.0 } else { 0.0 }).unwrap();
        assert!(best.iter().all(|p| p.value == 1.0));
        let worst = precision_at_n(200, 200, 99, &ns, 1, |q, c| if q == c { -1.0 } else { 0.0 }).unwrap();
        assert!(worst.iter().all(|p| p.value == 0.0));
        // a tie with every negative is a loss for the positive
        let flat = precision_at_n(200, 200, 99, &ns, 1, |_, _| 0.5).unwrap();
        assert!(flat.iter().all(|p| p.value == 0.0));
    }

    #[test]
    fn random_scorer_hits_chance() {
        // Hash-based random scores, independent per (q, c).
        let score = |q: usize, c: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(((q as u64) << 32) | c as u64);
            rng.gen::<f64>()
        };
        let p = precision_at_n(10_000, 10_000, 99, &[1], 5, score).unwrap();
        assert!((p[0].value - 0.01).abs() < 0.003, "{}", p[0].value);
    }

    #[test]
    fn pool_too_small() {
        assert!(matches!(
            precision_at_n(50, 50, 99, &[1], 0, |_, _| 0.0),
            Err(Error::DatasetTooSmall { needed: 100, have: 50 })
        ));
    }

    #[test]
    fn negatives_are_distinct_and_exclude_positive() {
        for q in [0, 5, 99] {
            let negs = sample_negatives(100, q, 99, 3);
            let mut sorted = negs.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 99);
            assert!(!negs.contains(&q));
        }
    }

    #[test]
    fn similarity_anchor_values() {
        assert_eq!(raw_from_cosine(1.0), 0.0);
        assert_eq!(raw_from_cosine(0.0), -PI / 2.0);
        assert_eq!(raw_from_cosine(-1.0), -PI);
        assert_eq!(scaled_from_cosine(1.0), 5.0);
        assert_eq!(scaled_from_cosine(0.0), 2.5);
        assert_eq!(scaled_from_cosine(-1.0), 0.0);
        // drift past the domain is clamped
        assert_eq!(scaled_from_cosine(1.0 + 1e-15), 5.0);
        assert_eq!(sts_score_scaled(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 2.5);
        assert!(matches!(sts_score_raw(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateNorm)));
    }

    #[test]
    fn pearson_examples() {
        assert!(rel(pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0));
        assert!(rel(pearson_r(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0));
        // closed form: cov = 3/2, sd_x = 1, sd_y = sqrt(7/3) -> 1.5 / sqrt(7/3)
        let expected = 1.5 / (7.0f64 / 3.0).sqrt();
        let r = pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 0.98198).abs() < 1e-5);
        assert!(matches!(pearson_r(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson_r(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(average_precision(&[true, true, false, false]), Some(1.0));
        let ap = average_precision(&[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[false, false]), None);
    }

    #[test]
    fn ranking_ties_keep_original_order() {
        let r = RankingResult::new(&[0.5, 0.9, 0.5, 0.1], &[false, true, true, false]);
        let order: Vec<usize> = r.ranked.iter().map(|c| c.index).collect();
        assert_eq!(order, vec![1, 0, 2, 3]);
    }

    #[test]
    fn map_exclusion_policy() {
        let good = RankingResult::new(&[0.9, 0.1], &[true, false]);
        let none = RankingResult::new(&[0.9, 0.1], &[false, false]);
        let excl = mean_average_precision(&[good.clone(), none.clone()], false).unwrap();
        assert_eq!((excl.map, excl.scored, excl.excluded), (100.0, 1, 1));
        let incl = mean_average_precision(&[good, none], true).unwrap();
        assert_eq!((incl.map, incl.scored), (50.0, 2));
        assert!(mean_average_precision(&[], false).is_err());
    }

    #[test]
    fn identity_adaptation_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = AdaptationMatrix::identity(7);
        for _ in 0..100 {
            let u: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(m.apply(&u), u);
            assert_eq!(m.score(&u, &v).unwrap().to_bits(), sts_score_scaled(&u, &v).unwrap().to_bits());
        }
    }

    fn random_pairs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<StsVectors> {
        (0..n)
            .map(|i| StsVectors {
                u: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                v: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                gold: rng.gen_range(0.0..5.0),
                genre: Genre::ALL[i % 3],
            })
            .collect()
    }

    #[test]
    fn adaptation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train = random_pairs(&mut rng, 12, 4);
        let mut m = AdaptationMatrix::identity(4);
        for x in m.data.iter_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
        let (_, grad) = adaptation_loss_and_grad(&m, &train).unwrap();
        let h = 1e-6;
        for (k, &g) in grad.iter().enumerate() {
            let mut plus = m.clone();
            plus.data[k] += h;
            let mut minus = m.clone();
            minus.data[k] -= h;
            let fd = (adaptation_loss_and_grad(&plus, &train).unwrap().0
                - adaptation_loss_and_grad(&minus, &train).unwrap().0)
                / (2.0 * h);
            assert!((fd - g).abs() < 1e-6 * (1.0 + fd.abs()), "{k}: {fd} vs {g}");
        }
    }

    #[test]
    fn zero_step_fit_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let train = random_pairs(&mut rng, 20, 5);
        let dev = random_pairs(&mut rng, 20, 5);
        let cfg = AdaptationConfig { max_steps: 0, ..Default::default() };
        let fit = fit_adaptation(&train, &dev, &cfg).unwrap();
        assert_eq!(fit.matrix, AdaptationMatrix::identity(5));
        assert_eq!(fit.best_dev_r, fit.initial_dev_r);
        let fitted = fit_adaptation(&train, &dev, &AdaptationConfig::default()).unwrap();
        assert!(fitted.best_dev_r >= fitted.initial_dev_r);
    }

    #[test]
    fn genres_partition_rows_and_csv_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs = random_pairs(&mut rng, 30, 6);
        let report = eval_sts(&pairs, None).unwrap();
        let total: usize = report.per_genre.values().map(|g| g.count).sum();
        assert_eq!(total, report.count);
        let mut csv = Vec::new();
        write_sts_csv(&mut csv, &report.rows).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("gold,pred,genre"));
        let (p, g): (Vec<f64>, Vec<f64>) = lines
            .map(|l| {
                let cols: Vec<&str> = l.split(',').collect();
                (cols[1].parse::<f64>().unwrap(), cols[0].parse::<f64>().unwrap())
            })
            .unzip();
        assert_eq!(pearson_r(&p, &g).unwrap(), report.overall);
    }

    #[test]
    fn constant_predictions_are_undefined() {
        let pairs: Vec<StsVectors> = (0..4)
            .map(|i| StsVectors { u: vec![1.0, 0.0], v: vec![1.0, 0.0], gold: i as f64, genre: Genre::News })
            .collect();
        assert!(matches!(eval_sts(&pairs, None), Err(Error::UndefinedCorrelation(_))));
    }

    proptest! {
        #[test]
        fn precision_is_monotone_in_n(seed in 0u64..1000) {
            let score = |q: usize, c: usize| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((q as u64) << 20) ^ c as u64);
                rng.gen_range(0..5) as f64
            };
            let p = precision_at_n(40, 40, 20, &[1, 3, 10], seed, score).unwrap();
            prop_assert!(p[0].value <= p[1].value && p[1].value <= p[2].value);
        }

        #[test]
        fn pearson_is_affine_invariant(
            xs in proptest::collection::vec(-10.0f64..10.0, 3..40),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
            seed in 0u64..100,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ys: Vec<f64> = xs.iter().map(|x| x + rng.gen_range(-5.0..5.0)).collect();
            if let Ok(r) = pearson_r(&xs, &ys) {
                let shifted: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let r2 = pearson_r(&shifted, &ys).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
            }
        }

        #[test]
        fn scaled_score_is_decreasing_in_angle(c1 in -1.0f64..1.0, c2 in -1.0f64..1.0) {
            if c1 < c2 {
                prop_assert!(scaled_from_cosine(c1) < scaled_from_cosine(c2));
            }
        }

        #[test]
        fn map_ignores_input_order_for_distinct_scores(
            items in proptest::collection::vec((0u32..1_000_000, any::<bool>()), 1..10),
            rot in 0usize..10,
        ) {
            let mut seen = std::collections::HashSet::new();
            let items: Vec<(u32, bool)> = items.into_iter().filter(|(s, _)| seen.insert(*s)).collect();
            let scores: Vec<f64> = items.iter().map(|(s, _)| *s as f64).collect();
            let good: Vec<bool> = items.iter().map(|(_, g)| *g).collect();
            let a = RankingResult::new(&scores, &good).average_precision();
            let mut rotated = items.clone();
            rotated.rotate_left(rot % items.len());
            let scores: Vec<f64> = rotated.iter().map(|(s, _)| *s as f64).collect();
            let good: Vec<bool> = rotated.iter().map(|(_, g)| *g).collect();
            prop_assert_eq!(a, RankingResult::new(&scores, &good).average_precision());
        }
    }
}
