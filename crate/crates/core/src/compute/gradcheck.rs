use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, Graph, NodeId};
use super::store::ParameterStore;
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates probed per tensor. Half are drawn from coordinates with a
    /// nonzero analytic gradient, the rest uniformly.
    pub coords_per_tensor: usize,
    pub tolerance: f64,
    /// Denominator floor of the relative error,
    /// `|a - n| / max(|a|, |n|, scale_floor)`.
    pub scale_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-3, coords_per_tensor: 6, tolerance: 1e-3, scale_floor: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates passed over because a step of `h` crossed a relu or abs kink.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// `(flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }

    pub fn skipped_kinks(&self) -> usize {
        self.tensors.iter().map(|t| t.skipped_kinks).sum()
    }

    pub fn worst_tensor(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Checks the analytic gradient of the scalar built by `loss_fn` against
/// central finite differences on a seeded subset of every trainable tensor.
/// Coordinates whose `x +- h` evaluations land on a different side of a
/// relu or abs kink than `x` are skipped and replaced, since the central
/// difference there does not estimate the derivative.
pub fn grad_check<F>(store: &mut ParameterStore, config: &GradCheckConfig, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };
    compare_gradients(store, &analytic, config, loss_fn)
}

/// Like [`grad_check`] but against caller-supplied gradients.
pub fn compare_gradients<F>(
    store: &mut ParameterStore,
    analytic: &Gradients,
    config: &GradCheckConfig,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<NodeId>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let targets: Vec<(String, usize)> =
        store.iter().filter(|(_, p)| p.trainable).map(|(n, p)| (n.to_string(), p.value.len())).collect();

    let mut eval = |store: &ParameterStore| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        g.ensure_finite()?;
        Ok((g.scalar(loss), g.kink_signature()))
    };
    let (_, base_signature) = eval(store)?;

    let mut tensors = Vec::with_capacity(targets.len());
    for (name, len) in targets {
        let grad = analytic.get(&name);
        let mut nonzero: Vec<usize> =
            grad.map(|g| (0..len).filter(|&i| g.data()[i] != 0.0).collect()).unwrap_or_default();
        nonzero.shuffle(&mut rng);
        let mut all: Vec<usize> = (0..len).collect();
        all.shuffle(&mut rng);

        let wanted = config.coords_per_tensor.min(len);
        let mut check =
            TensorCheck { name: name.clone(), checked: 0, skipped_kinks: 0, max_rel_error: 0.0, worst: None };
        let mut tried = std::collections::HashSet::new();
        let mut nonzero = nonzero.into_iter();
        let mut all = all.into_iter();
        while check.checked < wanted {
            let next = if check.checked < wanted / 2 { nonzero.next().or_else(|| all.next()) } else { all.next() };
            let Some(i) = next else { break };
            if !tried.insert(i) {
                continue;
            }
            let base = store.value(&name)?.data()[i];
            store.poke(&name, i, base + config.step)?;
            let plus = eval(store);
            store.poke(&name, i, base - config.step)?;
            let minus = eval(store);
            store.poke(&name, i, base)?;
            let ((plus, sig_plus), (minus, sig_minus)) = (plus?, minus?);
            if sig_plus != base_signature || sig_minus != base_signature {
                check.skipped_kinks += 1;
                continue;
            }
            check.checked += 1;
            let numeric = (plus - minus) / (2.0 * config.step);
            let a = grad.map_or(0.0, |g| g.data()[i]);
            let denom = a.abs().max(numeric.abs()).max(config.scale_floor);
            let rel = (a - numeric).abs() / denom;
            if rel > check.max_rel_error || check.worst.is_none() {
                check.max_rel_error = check.max_rel_error.max(rel);
                check.worst = Some((i, a, numeric));
            }
        }
        tensors.push(check);
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { tensors, max_rel_error, tolerance: config.tolerance })
}
