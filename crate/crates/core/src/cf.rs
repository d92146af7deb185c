//! The collaborative view: LightGCN propagation trained with BPR.

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::{EmbeddingMatrix, Part, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::{self, DotScorer};
use crate::graph::BipartiteGraph;
use crate::optim::{adam_step_array, AdamState};
use crate::rng::{self, Rng};
use crate::train::{fit_with_early_stopping, TrainConfig, TrainOutcome, Trainer};

/// Ego embeddings of every user and item plus the propagation depth.
#[derive(Debug, Clone, PartialEq)]
pub struct CfModel {
    n_users: usize,
    layers: usize,
    /// Users stacked above items.
    embeddings: Array2<f64>,
}

pub(crate) fn normal_init(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl CfModel {
    /// `N(0, std²)` initialization.
    pub fn init(n_users: usize, n_items: usize, dim: usize, layers: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            n_users,
            layers,
            embeddings: normal_init(n_users + n_items, dim, std, rng),
        }
    }

    pub fn from_embeddings(users: &EmbeddingMatrix, items: &EmbeddingMatrix, layers: usize) -> Result<Self> {
        if users.d() != items.d() {
            return Err(Error::Shape(format!(
                "user dim {} != item dim {}",
                users.d(),
                items.d()
            )));
        }
        let embeddings = ndarray::concatenate(ndarray::Axis(0), &[users.view(), items.view()])
            .expect("matching widths");
        Ok(Self {
            n_users: users.n(),
            layers,
            embeddings,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.embeddings.nrows() - self.n_users
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn stacked(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn stacked_mut(&mut self) -> &mut Array2<f64> {
        &mut self.embeddings
    }

    pub fn user_embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.slice(s![..self.n_users, ..])
    }

    pub fn item_embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.slice(s![self.n_users.., ..])
    }

    fn check_graph(&self, graph: &BipartiteGraph) -> Result<()> {
        if graph.n_users() != self.n_users || graph.n_items() != self.n_items() {
            return Err(Error::Shape(format!(
                "model covers {}x{}, graph {}x{}",
                self.n_users,
                self.n_items(),
                graph.n_users(),
                graph.n_items()
            )));
        }
        Ok(())
    }

    /// Layer-averaged stacked representations.
    pub fn propagated(&self, graph: &BipartiteGraph) -> Result<Array2<f64>> {
        self.check_graph(graph)?;
        graph.propagate(&self.embeddings, self.layers)
    }

    /// Final (user, item) representations.
    pub fn propagate(&self, graph: &BipartiteGraph) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
        let f = self.propagated(graph)?;
        let users = f.slice(s![..self.n_users, ..]).to_owned();
        let items = f.slice(s![self.n_users.., ..]).to_owned();
        Ok((EmbeddingMatrix::new(users)?, EmbeddingMatrix::new(items)?))
    }

    /// Dot-product scorer over the propagated representations.
    pub fn scorer(&self, graph: &BipartiteGraph) -> Result<DotScorer> {
        let f = self.propagated(graph)?;
        Ok(DotScorer::new(
            f.slice(s![..self.n_users, ..]).to_owned(),
            f.slice(s![self.n_users.., ..]).to_owned(),
        ))
    }
}

/// `−ln σ(pos − neg)` and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BprTerm {
    pub loss: f64,
    pub grad_pos: f64,
    pub grad_neg: f64,
}

/// Numerically stable `ln(1 + eˣ)`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn bpr_loss(score_pos: f64, score_neg: f64) -> BprTerm {
    let delta = score_pos - score_neg;
    let g = sigmoid(-delta); // 1 − σ(Δ)
    BprTerm {
        loss: softplus(-delta),
        grad_pos: -g,
        grad_neg: g,
    }
}

/// Mean BPR loss over `(user, pos, neg)` triples and its gradient with
/// respect to the stacked ego embeddings.
pub fn bpr_batch(model: &CfModel, graph: &BipartiteGraph, triples: &[(u32, u32, u32)]) -> Result<(f64, Array2<f64>)> {
    let f = model.propagated(graph)?;
    let nu = model.n_users;
    let mut grad_f = Array2::<f64>::zeros(f.raw_dim());
    let scale = 1.0 / triples.len().max(1) as f64;
    let mut loss = 0.0;
    for &(u, i, j) in triples {
        let (u, i, j) = (u as usize, nu + i as usize, nu + j as usize);
        let fu = f.row(u);
        let diff = &f.row(i) - &f.row(j);
        let term = bpr_loss(fu.dot(&f.row(i)), fu.dot(&f.row(j)));
        loss += term.loss * scale;
        // dL/dΔ = grad_pos; Δ = fu · (fi − fj)
        let g = term.grad_pos * scale;
        grad_f.row_mut(u).scaled_add(g, &diff);
        grad_f.row_mut(i).scaled_add(g, &fu);
        grad_f.row_mut(j).scaled_add(-g, &fu);
    }
    let grad = graph.propagate(&grad_f, model.layers)?;
    Ok((loss, grad))
}

/// Uniform item not among `user`'s train positives, or `None` if the user
/// has interacted with everything.
pub(crate) fn sample_negative(split: &SplitDataset, user: u32, rng: &mut Rng) -> Option<u32> {
    let seen = split.user_items(Part::Train, user);
    if seen.len() >= split.n_items() {
        return None;
    }
    loop {
        let j = rng.random_range(0..split.n_items() as u32);
        if seen.binary_search(&j).is_err() {
            return Some(j);
        }
    }
}

/// Epoch-at-a-time BPR trainer.
pub struct CfTrainer<'a> {
    split: &'a SplitDataset,
    cfg: TrainConfig,
    graph: BipartiteGraph,
    model: CfModel,
    adam: AdamState,
    train: Vec<(u32, u32)>,
    order_rng: Rng,
    neg_rng: Rng,
}

impl<'a> CfTrainer<'a> {
    pub fn new(split: &'a SplitDataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let train = split.pairs(Part::Train);
        let graph = BipartiteGraph::from_pairs(split.n_users(), split.n_items(), &train)?;
        let mut init_rng = rng::substream(cfg.seed, "init");
        let model = CfModel::init(
            split.n_users(),
            split.n_items(),
            cfg.dim,
            cfg.layers,
            cfg.init_std(),
            &mut init_rng,
        );
        Ok(Self {
            split,
            cfg: cfg.clone(),
            adam: AdamState::new(model.embeddings.len()),
            graph,
            model,
            train,
            order_rng: rng::substream(cfg.seed, "order"),
            neg_rng: rng::substream(cfg.seed, "negatives"),
        })
    }

    pub fn model(&self) -> &CfModel {
        &self.model
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }
}

impl Trainer for CfTrainer<'_> {
    type Model = CfModel;

    fn run_epoch(&mut self) -> Result<f64> {
        self.train.shuffle(&mut self.order_rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in self.train.chunks(self.cfg.batch_size) {
            let triples: Vec<(u32, u32, u32)> = batch
                .iter()
                .filter_map(|&(u, i)| sample_negative(self.split, u, &mut self.neg_rng).map(|j| (u, i, j)))
                .collect();
            if triples.is_empty() {
                continue;
            }
            let (loss, grad) = bpr_batch(&self.model, &self.graph, &triples)?;
            adam_step_array(
                &mut self.model.embeddings,
                &grad,
                &mut self.adam,
                self.cfg.lr,
                self.cfg.weight_decay,
            )?;
            total += loss * triples.len() as f64;
            count += triples.len();
        }
        Ok(if count > 0 { total / count as f64 } else { 0.0 })
    }

    fn evaluate(&self) -> f64 {
        let scorer = self.model.scorer(&self.graph).expect("graph matches model");
        eval::val_recall(&scorer, self.split, self.cfg.eval_k)
    }

    fn snapshot(&self) -> CfModel {
        self.model.clone()
    }
}

/// Trains LightGCN with BPR and validation early stopping; returns the best checkpoint.
pub fn train_cf(split: &SplitDataset, cfg: &TrainConfig) -> Result<TrainOutcome<CfModel>> {
    if split.users_with(Part::Val).is_empty() {
        return Err(Error::Config("no validation users to drive early stopping".into()));
    }
    let mut trainer = CfTrainer::new(split, cfg)?;
    let out = fit_with_early_stopping(cfg, &mut trainer)?;
    log::info!(
        "cf: best val recall@{} {:.4} at epoch {} ({} epochs run)",
        cfg.eval_k,
        out.best_metric,
        out.best_epoch,
        out.epochs_run
    );
    Ok(out)
}
