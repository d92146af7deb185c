//! The pure content view: a linear projection over frozen item vectors,
//! with users as the mean of their train history.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::cf::normal_init;
use crate::contrastive::{contrastive_grad, ContrastiveBatch, Positive};
use crate::dataset::{EmbeddingMatrix, Part, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::{self, DotScorer};
use crate::linalg;
use crate::optim::{adam_step_array, AdamState};
use crate::rng::{self, Rng};
use crate::train::{fit_with_early_stopping, TrainConfig, TrainOutcome, Trainer};

/// `Norm(mean of history rows)`; an empty history gives the zero vector.
pub fn user_semantic_input(history: &[u32], items: &EmbeddingMatrix) -> Array1<f64> {
    let mut acc = Array1::<f64>::zeros(items.d());
    if history.is_empty() {
        return acc;
    }
    for &i in history {
        acc += &items.row(i as usize);
    }
    acc /= history.len() as f64;
    let n = acc.dot(&acc).sqrt();
    if n > 0.0 {
        acc /= n;
    }
    acc
}

/// [`user_semantic_input`] for every user, pooled over train interactions.
pub fn user_semantic_inputs(split: &SplitDataset, items: &EmbeddingMatrix) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((split.n_users(), items.d()));
    for (u, mut row) in out.outer_iter_mut().enumerate() {
        row.assign(&user_semantic_input(split.user_items(Part::Train, u as u32), items));
    }
    out
}

/// Linear projection `W x + b` of content vectors into the shared scoring space.
#[derive(Debug, Clone, PartialEq)]
pub struct SemModel {
    /// `d × d_sem`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub use_bias: bool,
}

impl SemModel {
    pub fn init(d_sem: usize, dim: usize, use_bias: bool, rng: &mut Rng) -> Self {
        Self {
            weights: normal_init(dim, d_sem, 1.0 / (d_sem as f64).sqrt(), rng),
            bias: Array1::zeros(dim),
            use_bias,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Pre-normalization projections of `x` rows.
    pub fn project(&self, x: ArrayView2<f64>) -> Array2<f64> {
        linalg::affine(x, self.weights.view(), self.use_bias.then(|| self.bias.view()))
    }

    /// Unit-normalized projections of `x` rows; zero projections stay zero.
    pub fn embed(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut p = self.project(x);
        linalg::normalize_rows(&mut p);
        p
    }

    pub fn item_embeddings(&self, items: &EmbeddingMatrix) -> EmbeddingMatrix {
        EmbeddingMatrix::new(self.embed(items.view())).expect("finite projections")
    }

    /// User embeddings. Cold users have a zero input and stay at the zero vector,
    /// so every item scores 0 for them.
    pub fn user_embeddings(&self, split: &SplitDataset, items: &EmbeddingMatrix) -> EmbeddingMatrix {
        let inputs = user_semantic_inputs(split, items);
        let mut e = self.embed(inputs.view());
        for (u, mut row) in e.outer_iter_mut().enumerate() {
            if split.user_items(Part::Train, u as u32).is_empty() {
                row.fill(0.0);
            }
        }
        EmbeddingMatrix::new(e).expect("finite projections")
    }

    pub fn scorer(&self, split: &SplitDataset, items: &EmbeddingMatrix) -> DotScorer {
        DotScorer::new(
            self.user_embeddings(split, items).into_values(),
            self.item_embeddings(items).into_values(),
        )
    }
}

/// Gradients of a [`SemModel`] batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SemGrad {
    pub loss: f64,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Mean InfoNCE over `(user_input_row, positive_item)` pairs with a shared
/// negative set. A negative equal to an anchor's positive is dropped from that
/// anchor's denominator.
pub fn sem_batch(
    model: &SemModel,
    user_inputs: ArrayView2<f64>,
    items: &EmbeddingMatrix,
    pairs: &[(u32, u32)],
    negatives: &[u32],
    tau: f64,
) -> Result<SemGrad> {
    let urows: Vec<usize> = pairs.iter().map(|&(u, _)| u as usize).collect();
    let prows: Vec<usize> = pairs.iter().map(|&(_, i)| i as usize).collect();
    let nrows: Vec<usize> = negatives.iter().map(|&i| i as usize).collect();
    let su = user_inputs.select(Axis(0), &urows);
    let xp = items.view().select(Axis(0), &prows);
    let xn = items.view().select(Axis(0), &nrows);
    let mut a = model.project(su.view());
    let mut p = model.project(xp.view());
    let mut n = model.project(xn.view());
    let na = linalg::normalize_rows(&mut a);
    let np = linalg::normalize_rows(&mut p);
    let nn = linalg::normalize_rows(&mut n);
    let positives: Vec<Positive> = (0..pairs.len()).map(Positive::Own).collect();
    let masked: Vec<Vec<usize>> = pairs
        .iter()
        .map(|&(_, i)| {
            let mut m: Vec<usize> = negatives.iter().enumerate().filter(|&(_, &j)| j == i).map(|(k, _)| k).collect();
            m.sort_unstable();
            m
        })
        .collect();
    let g = contrastive_grad(&ContrastiveBatch {
        anchors: a.view(),
        shared: n.view(),
        own: p.view(),
        positives: &positives,
        own_lists: &[],
        masked: &masked,
        tau,
    })?;
    let (mut ga, mut gn, mut gp) = (g.anchors, g.shared, g.own);
    linalg::norm_backward_rows(a.view(), &na, &mut ga);
    linalg::norm_backward_rows(n.view(), &nn, &mut gn);
    linalg::norm_backward_rows(p.view(), &np, &mut gp);
    let weights = ga.t().dot(&su) + gp.t().dot(&xp) + gn.t().dot(&xn);
    let bias = if model.use_bias {
        ga.sum_axis(Axis(0)) + gp.sum_axis(Axis(0)) + gn.sum_axis(Axis(0))
    } else {
        Array1::zeros(model.dim())
    };
    Ok(SemGrad { loss: g.loss, weights, bias })
}

/// Draws `count` items uniformly over the catalog (with replacement).
pub(crate) fn global_negatives(n_items: usize, count: usize, rng: &mut Rng) -> Vec<u32> {
    (0..count).map(|_| rng.random_range(0..n_items as u32)).collect()
}

pub struct SemTrainer<'a> {
    split: &'a SplitDataset,
    items: &'a EmbeddingMatrix,
    cfg: TrainConfig,
    model: SemModel,
    user_inputs: Array2<f64>,
    adam_w: AdamState,
    adam_b: AdamState,
    train: Vec<(u32, u32)>,
    order_rng: Rng,
    neg_rng: Rng,
}

impl<'a> SemTrainer<'a> {
    pub fn new(split: &'a SplitDataset, items: &'a EmbeddingMatrix, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        items.expect_rows(split.n_items(), "item vectors")?;
        let mut init_rng = rng::substream(cfg.seed, "init");
        let model = SemModel::init(items.d(), cfg.dim, cfg.use_bias, &mut init_rng);
        Ok(Self {
            split,
            items,
            adam_w: AdamState::new(model.weights.len()),
            adam_b: AdamState::new(model.bias.len()),
            user_inputs: user_semantic_inputs(split, items),
            model,
            train: split.pairs(Part::Train),
            cfg: cfg.clone(),
            order_rng: rng::substream(cfg.seed, "order"),
            neg_rng: rng::substream(cfg.seed, "negatives"),
        })
    }

    pub fn model(&self) -> &SemModel {
        &self.model
    }
}

impl Trainer for SemTrainer<'_> {
    type Model = SemModel;

    fn run_epoch(&mut self) -> Result<f64> {
        self.train.shuffle(&mut self.order_rng);
        let mut total = 0.0;
        for batch in self.train.chunks(self.cfg.batch_size) {
            let negatives = global_negatives(self.split.n_items(), self.cfg.n_neg, &mut self.neg_rng);
            let g = sem_batch(
                &self.model,
                self.user_inputs.view(),
                self.items,
                batch,
                &negatives,
                self.cfg.temperature,
            )?;
            adam_step_array(&mut self.model.weights, &g.weights, &mut self.adam_w, self.cfg.lr, self.cfg.weight_decay)?;
            if self.model.use_bias {
                adam_step_array(&mut self.model.bias, &g.bias, &mut self.adam_b, self.cfg.lr, self.cfg.weight_decay)?;
            }
            total += g.loss * batch.len() as f64;
        }
        Ok(total / self.train.len().max(1) as f64)
    }

    fn evaluate(&self) -> f64 {
        eval::val_recall(&self.model.scorer(self.split, self.items), self.split, self.cfg.eval_k)
    }

    fn snapshot(&self) -> SemModel {
        self.model.clone()
    }
}

/// Trains the semantic projection with InfoNCE over global negatives and
/// validation early stopping; returns the best checkpoint.
pub fn train_sem(split: &SplitDataset, items: &EmbeddingMatrix, cfg: &TrainConfig) -> Result<TrainOutcome<SemModel>> {
    if split.users_with(Part::Val).is_empty() {
        return Err(Error::Config("no validation users to drive early stopping".into()));
    }
    let mut trainer = SemTrainer::new(split, items, cfg)?;
    let out = fit_with_early_stopping(cfg, &mut trainer)?;
    log::info!(
        "sem: best val recall@{} {:.4} at epoch {} ({} epochs run)",
        cfg.eval_k,
        out.best_metric,
        out.best_epoch,
        out.epochs_run
    );
    Ok(out)
}
