//! Capacity-swept mappings from one embedding space to another.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cf::normal_init;
use crate::contrastive::{contrastive_grad, ContrastiveBatch, Positive};
use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{adam_step_array, AdamState};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProbeArch {
    Identity,
    Linear,
    Mlp0,
    Mlp1,
    Mlp2,
    Mlp3,
}

impl ProbeArch {
    pub const ALL: [ProbeArch; 6] = [
        ProbeArch::Identity,
        ProbeArch::Linear,
        ProbeArch::Mlp0,
        ProbeArch::Mlp1,
        ProbeArch::Mlp2,
        ProbeArch::Mlp3,
    ];

    /// Hidden-layer widths.
    pub fn hidden(self) -> &'static [usize] {
        match self {
            ProbeArch::Identity | ProbeArch::Linear => &[],
            ProbeArch::Mlp0 => &[64],
            ProbeArch::Mlp1 => &[256],
            ProbeArch::Mlp2 => &[256, 256],
            ProbeArch::Mlp3 => &[256, 256, 256],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ProbeArch::Identity => "Identity",
            ProbeArch::Linear => "Linear Map",
            ProbeArch::Mlp0 => "MLP-0 (Small)",
            ProbeArch::Mlp1 => "MLP-1 (1-Hidden)",
            ProbeArch::Mlp2 => "MLP-2 (2-Hidden)",
            ProbeArch::Mlp3 => "MLP-3 (3-Hidden)",
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ProbeArch::Identity => "identity",
            ProbeArch::Linear => "linear",
            ProbeArch::Mlp0 => "mlp0",
            ProbeArch::Mlp1 => "mlp1",
            ProbeArch::Mlp2 => "mlp2",
            ProbeArch::Mlp3 => "mlp3",
        }
    }

    pub fn parse(s: &str) -> Option<ProbeArch> {
        let t = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        ProbeArch::ALL.into_iter().find(|a| a.tag() == t)
    }
}

impl std::fmt::Display for ProbeArch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One affine layer `x Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// A fitted mapping: affine layers with ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeMapping {
    pub arch: ProbeArch,
    pub d_in: usize,
    pub d_out: usize,
    pub layers: Vec<Dense>,
}

struct Cache {
    /// Input of every layer.
    inputs: Vec<Array2<f64>>,
}

impl ProbeMapping {
    pub fn init(arch: ProbeArch, d_in: usize, d_out: usize, rng: &mut Rng) -> Result<Self> {
        if arch == ProbeArch::Identity {
            if d_in != d_out {
                return Err(Error::Config(format!(
                    "identity mapping needs equal dimensions, got {d_in} -> {d_out}"
                )));
            }
            return Ok(Self { arch, d_in, d_out, layers: Vec::new() });
        }
        let mut widths = vec![d_in];
        widths.extend_from_slice(arch.hidden());
        widths.push(d_out);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let gain = if k < last { 2.0 } else { 1.0 };
                Dense {
                    weights: normal_init(w[1], w[0], (gain / w[0] as f64).sqrt(), rng),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self { arch, d_in, d_out, layers })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, Cache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = linalg::affine(h.view(), layer.weights.view(), Some(layer.bias.view()));
            if k + 1 < self.layers.len() {
                out.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut h, out));
        }
        (h, Cache { inputs })
    }

    /// Per-layer `(dW, db)` given `dL/d output`.
    fn backward(&self, cache: &Cache, mut grad: Array2<f64>) -> Vec<(Array2<f64>, Array1<f64>)> {
        let mut out = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let input = &cache.inputs[k];
            out.push((grad.t().dot(input), grad.sum_axis(Axis(0))));
            if k > 0 {
                let mut g_in = grad.dot(&self.layers[k].weights);
                // the input of layer k is a ReLU output
                g_in.zip_mut_with(input, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                grad = g_in;
            }
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Above this many training rows, fit in mini-batches of this size.
    pub full_batch_limit: usize,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub item_fraction: f64,
    pub seed: u64,
    pub geo_k: usize,
    pub rank_sample: usize,
    pub k: usize,
    pub recall_mode: crate::probe::RecallMode,
    /// Contrastive-alignment settings.
    pub align_tau: f64,
    pub align_batch: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 2000,
            full_batch_limit: 65_536,
            plateau_window: 50,
            plateau_tol: 1e-6,
            item_fraction: 0.8,
            seed: 0,
            geo_k: 10,
            rank_sample: 500,
            k: 20,
            recall_mode: crate::probe::RecallMode::Restricted,
            align_tau: 0.15,
            align_batch: 256,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("probe lr must be positive, got {}", self.lr)));
        }
        if !(self.item_fraction > 0.0 && self.item_fraction < 1.0) {
            return Err(Error::Config(format!("item fraction must be in (0, 1), got {}", self.item_fraction)));
        }
        if self.full_batch_limit == 0 || self.align_batch == 0 || self.k == 0 || self.geo_k == 0 {
            return Err(Error::Config("probe batch sizes and cutoffs must be positive".into()));
        }
        if !(self.align_tau > 0.0) {
            return Err(Error::Config("alignment temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n`; the first `⌈fraction·n⌉` go to train.
pub fn split_items(n_items: usize, fraction: f64, seed: u64) -> Result<(Vec<u32>, Vec<u32>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("item fraction must be in (0, 1), got {fraction}")));
    }
    let mut ids: Vec<u32> = (0..n_items as u32).collect();
    ids.shuffle(&mut rng::substream(seed, "item-split"));
    let cut = ((fraction * n_items as f64).ceil() as usize).min(n_items);
    let test = ids.split_off(cut);
    Ok((ids, test))
}

/// Plateau detector on a loss history.
fn plateaued(history: &[f64], window: usize, tol: f64) -> bool {
    let n = history.len();
    if n == 0 {
        return false;
    }
    if history[n - 1] == 0.0 {
        return true;
    }
    if window == 0 || n <= window {
        return false;
    }
    let before = history[n - 1 - window];
    (before - history[n - 1]) / before.abs().max(f64::MIN_POSITIVE) < tol
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub mapping: ProbeMapping,
    pub epochs: usize,
    pub final_loss: f64,
}

/// Mean over rows of `‖T(x) − y‖²` and its gradient.
fn mse_step(mapping: &ProbeMapping, x: ArrayView2<f64>, y: ArrayView2<f64>) -> (f64, Vec<(Array2<f64>, Array1<f64>)>) {
    let (pred, cache) = mapping.forward(x);
    let diff = pred - &y;
    let n = x.nrows().max(1) as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
    let grads = mapping.backward(&cache, diff * (2.0 / n));
    (loss, grads)
}

/// Probe loss of `mapping` on rows `x` against `y`.
pub fn probe_loss(mapping: &ProbeMapping, x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let diff = mapping.apply(x) - &y;
    diff.iter().map(|v| v * v).sum::<f64>() / x.nrows().max(1) as f64
}

/// Gradient of [`probe_loss`] per layer as `(dW, db)`.
pub fn probe_loss_grad(mapping: &ProbeMapping, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Vec<(Array2<f64>, Array1<f64>)> {
    mse_step(mapping, x, y).1
}

struct LayerAdam(Vec<(AdamState, AdamState)>);

impl LayerAdam {
    fn new(m: &ProbeMapping) -> Self {
        Self(
            m.layers
                .iter()
                .map(|l| (AdamState::new(l.weights.len()), AdamState::new(l.bias.len())))
                .collect(),
        )
    }

    fn step(&mut self, m: &mut ProbeMapping, grads: &[(Array2<f64>, Array1<f64>)], lr: f64) -> Result<()> {
        for ((layer, (gw, gb)), (sw, sb)) in m.layers.iter_mut().zip(grads).zip(self.0.iter_mut()) {
            adam_step_array(&mut layer.weights, gw, sw, lr, 0.0)?;
            adam_step_array(&mut layer.bias, gb, sb, lr, 0.0)?;
        }
        Ok(())
    }
}

/// Fits `arch` from `sem` rows to `cf` rows over `train_ids` by mean squared error.
pub fn fit_probe(
    sem: &EmbeddingMatrix,
    cf: &EmbeddingMatrix,
    train_ids: &[u32],
    arch: ProbeArch,
    cfg: &ProbeConfig,
) -> Result<ProbeFit> {
    cfg.validate()?;
    if sem.n() != cf.n() {
        return Err(Error::Shape(format!("{} source rows vs {} target rows", sem.n(), cf.n())));
    }
    if train_ids.is_empty() {
        return Err(Error::Config("probe needs at least one training item".into()));
    }
    let mut init_rng = rng::substream(rng::derive_seed(cfg.seed, "probe-init", arch as u64), "init");
    let mut mapping = ProbeMapping::init(arch, sem.d(), cf.d(), &mut init_rng)?;
    let rows: Vec<usize> = train_ids.iter().map(|&i| i as usize).collect();
    let x = sem.view().select(Axis(0), &rows);
    let y = cf.view().select(Axis(0), &rows);
    if mapping.layers.is_empty() {
        let loss = probe_loss(&mapping, x.view(), y.view());
        return Ok(ProbeFit { mapping, epochs: 0, final_loss: loss });
    }
    let mut adam = LayerAdam::new(&mapping);
    let mut order_rng = rng::substream(rng::derive_seed(cfg.seed, "probe-order", arch as u64), "order");
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut history = Vec::new();
    for _ in 0..cfg.max_epochs {
        let loss = if rows.len() <= cfg.full_batch_limit {
            let (loss, grads) = mse_step(&mapping, x.view(), y.view());
            adam.step(&mut mapping, &grads, cfg.lr)?;
            loss
        } else {
            order.shuffle(&mut order_rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.full_batch_limit) {
                let xb = x.select(Axis(0), chunk);
                let yb = y.select(Axis(0), chunk);
                let (loss, grads) = mse_step(&mapping, xb.view(), yb.view());
                adam.step(&mut mapping, &grads, cfg.lr)?;
                total += loss * chunk.len() as f64;
            }
            total / rows.len() as f64
        };
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("probe loss diverged for {arch}")));
        }
        history.push(loss);
        if plateaued(&history, cfg.plateau_window, cfg.plateau_tol) {
            break;
        }
    }
    let final_loss = probe_loss(&mapping, x.view(), y.view());
    log::debug!("probe {arch}: {} epochs, train mse {final_loss:.6}", history.len());
    Ok(ProbeFit { mapping, epochs: history.len(), final_loss })
}

/// Two linear heads mapping both spaces into a shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentHeads {
    pub g_cf: ProbeMapping,
    pub g_sem: ProbeMapping,
    pub epochs: usize,
    pub final_loss: f64,
}

/// Jointly trains linear heads with in-batch InfoNCE: anchor `Norm(g_cf(cf_i))`,
/// positive `Norm(g_sem(sem_i))`, negatives the other items in the batch.
pub fn train_contrastive_alignment(
    sem: &EmbeddingMatrix,
    cf: &EmbeddingMatrix,
    train_ids: &[u32],
    tau: f64,
    cfg: &ProbeConfig,
) -> Result<AlignmentHeads> {
    cfg.validate()?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if sem.n() != cf.n() {
        return Err(Error::Shape(format!("{} source rows vs {} target rows", sem.n(), cf.n())));
    }
    let d = cf.d();
    let mut init_rng = rng::substream(cfg.seed, "align-init");
    let mut g_cf = ProbeMapping::init(ProbeArch::Linear, cf.d(), d, &mut init_rng)?;
    let mut g_sem = ProbeMapping::init(ProbeArch::Linear, sem.d(), d, &mut init_rng)?;
    let mut adam_cf = LayerAdam::new(&g_cf);
    let mut adam_sem = LayerAdam::new(&g_sem);
    let mut order_rng = rng::substream(cfg.seed, "align-order");
    let mut order: Vec<usize> = train_ids.iter().map(|&i| i as usize).collect();
    let mut history = Vec::new();
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.align_batch) {
            let (loss, gc, gs) = alignment_step(&g_cf, &g_sem, cf, sem, chunk, tau)?;
            adam_cf.step(&mut g_cf, &gc, cfg.lr)?;
            adam_sem.step(&mut g_sem, &gs, cfg.lr)?;
            total += loss * chunk.len() as f64;
        }
        let loss = total / order.len().max(1) as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical("alignment loss diverged".into()));
        }
        history.push(loss);
        if plateaued(&history, cfg.plateau_window, cfg.plateau_tol) {
            break;
        }
    }
    Ok(AlignmentHeads { g_cf, g_sem, epochs: history.len(), final_loss: history.last().copied().unwrap_or(0.0) })
}

type LayerGrads = Vec<(Array2<f64>, Array1<f64>)>;

/// In-batch alignment loss over `rows` and gradients for both heads.
pub fn alignment_step(
    g_cf: &ProbeMapping,
    g_sem: &ProbeMapping,
    cf: &EmbeddingMatrix,
    sem: &EmbeddingMatrix,
    rows: &[usize],
    tau: f64,
) -> Result<(f64, LayerGrads, LayerGrads)> {
    let xc = cf.view().select(Axis(0), rows);
    let xs = sem.view().select(Axis(0), rows);
    let (mut a, cache_c) = g_cf.forward(xc.view());
    let (mut p, cache_s) = g_sem.forward(xs.view());
    let na = linalg::normalize_rows(&mut a);
    let np = linalg::normalize_rows(&mut p);
    let positives: Vec<Positive> = (0..rows.len()).map(Positive::Shared).collect();
    let empty = Array2::<f64>::zeros((0, a.ncols()));
    let g = contrastive_grad(&ContrastiveBatch {
        anchors: a.view(),
        shared: p.view(),
        own: empty.view(),
        positives: &positives,
        own_lists: &[],
        masked: &[],
        tau,
    })?;
    let (mut ga, mut gp) = (g.anchors, g.shared);
    linalg::norm_backward_rows(a.view(), &na, &mut ga);
    linalg::norm_backward_rows(p.view(), &np, &mut gp);
    Ok((g.loss, g_cf.backward(&cache_c, ga), g_sem.backward(&cache_s, gp)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn split_counts_and_determinism() {
        let (tr, te) = split_items(10, 0.8, 5).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split_items(10, 0.8, 5).unwrap(), (tr.clone(), te.clone()));
        let mut all: Vec<u32> = tr.into_iter().chain(te).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split_items(10, 1.0, 0).is_err());
    }

    #[test]
    fn arch_names_round_trip() {
        for a in ProbeArch::ALL {
            assert_eq!(ProbeArch::parse(a.tag()), Some(a));
        }
        assert_eq!(ProbeArch::parse("MLP-2"), Some(ProbeArch::Mlp2));
        assert_eq!(ProbeArch::parse("mlp9"), None);
    }

    #[test]
    fn identity_needs_square() {
        let mut rng = rng::substream(0, "t");
        assert!(matches!(ProbeMapping::init(ProbeArch::Identity, 3, 4, &mut rng), Err(Error::Config(_))));
        let m = ProbeMapping::init(ProbeArch::Identity, 2, 2, &mut rng).unwrap();
        let x = array![[1.0, 2.0]];
        assert_eq!(m.apply(x.view()), x);
        assert_eq!(m.n_params(), 0);
    }

    #[test]
    fn layer_shapes() {
        let mut rng = rng::substream(0, "t");
        let m = ProbeMapping::init(ProbeArch::Mlp2, 8, 4, &mut rng).unwrap();
        let shapes: Vec<(usize, usize)> = m.layers.iter().map(|l| l.weights.dim()).collect();
        assert_eq!(shapes, vec![(256, 8), (256, 256), (4, 256)]);
        let m0 = ProbeMapping::init(ProbeArch::Mlp0, 8, 4, &mut rng).unwrap();
        assert_eq!(m0.layers[0].weights.dim(), (64, 8));
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = rng::substream(1, "t");
        let mut m = ProbeMapping::init(ProbeArch::Mlp1, 3, 2, &mut rng).unwrap();
        m.layers.iter_mut().for_each(|l| l.bias.mapv_inplace(|_| 0.1));
        let x = Array2::from_shape_simple_fn((5, 3), || StandardNormal.sample(&mut rng));
        let y = Array2::from_shape_simple_fn((5, 2), || StandardNormal.sample(&mut rng));
        let grads = probe_loss_grad(&m, x.view(), y.view());
        let h = 1e-6;
        for (k, (gw, _)) in grads.iter().enumerate() {
            for idx in [(0, 0), (1, 1), (gw.nrows() - 1, gw.ncols() - 1)] {
                let mut up = m.clone();
                up.layers[k].weights[idx] += h;
                let mut dn = m.clone();
                dn.layers[k].weights[idx] -= h;
                let num = (probe_loss(&up, x.view(), y.view()) - probe_loss(&dn, x.view(), y.view())) / (2.0 * h);
                assert!((num - gw[idx]).abs() < 1e-6 * (1.0 + num.abs()), "layer {k} {idx:?}: {num} vs {}", gw[idx]);
            }
        }
    }

    #[test]
    fn plateau_rule() {
        assert!(!plateaued(&[3.0, 2.0], 1, 1e-6));
        assert!(plateaued(&[1.0, 1.0, 1.0], 2, 1e-6));
        assert!(!plateaued(&[1.0, 0.9, 0.8], 2, 1e-6));
        assert!(plateaued(&[0.5, 0.0], 50, 1e-6));
    }
}
