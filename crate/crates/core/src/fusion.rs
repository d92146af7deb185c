//! Norm-Concat-Norm fusion of a semantic projection branch and a LightGCN
//! branch, trained end-to-end with InfoNCE and dynamic hard negatives.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::cf::CfModel;
use crate::contrastive::{contrastive_grad, ContrastiveBatch, Positive};
use crate::dataset::{EmbeddingMatrix, Part, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::{self, DotScorer};
use crate::graph::BipartiteGraph;
use crate::linalg;
use crate::metrics::top_k_from;
use crate::optim::{adam_step_array, AdamState};
use crate::rng::{self, Rng};
use crate::semantic::{user_semantic_inputs, SemModel};
use crate::train::{fit_with_early_stopping, TrainConfig, TrainOutcome, Trainer};

/// `Norm(h_cf ⊕ h_sem)`.
pub fn fuse(h_cf: ArrayView1<f64>, h_sem: ArrayView1<f64>) -> Array1<f64> {
    let c = concatenate(Axis(0), &[h_cf, h_sem]).expect("1-d");
    Array1::from(linalg::norm(c.as_slice().expect("contiguous")))
}

/// Which part of the fused representation to score with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Fused,
    Cf,
    Sem,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Fused => "fused",
            Branch::Cf => "cf",
            Branch::Sem => "sem",
        }
    }

    pub fn parse(s: &str) -> Option<Branch> {
        match s {
            "fused" => Some(Branch::Fused),
            "cf" => Some(Branch::Cf),
            "sem" => Some(Branch::Sem),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub sem: SemModel,
    pub cf: CfModel,
    /// When set, training leaves the semantic branch untouched.
    pub freeze_semantic: bool,
}

/// Per-row intermediates of the fused encoder.
struct Encoded {
    h_cf: Array2<f64>,
    n_cf: Vec<f64>,
    h_sem: Array2<f64>,
    n_sem: Vec<f64>,
    z: Array2<f64>,
    n_z: Vec<f64>,
}

fn encode(cf_rows: Array2<f64>, sem_rows: Array2<f64>, sem_off: Option<&[bool]>) -> Encoded {
    let mut h_cf = cf_rows;
    let n_cf = linalg::normalize_rows(&mut h_cf);
    let mut h_sem = sem_rows;
    let mut n_sem = linalg::normalize_rows(&mut h_sem);
    if let Some(off) = sem_off {
        for (r, &o) in off.iter().enumerate() {
            if o {
                h_sem.row_mut(r).fill(0.0);
                n_sem[r] = 0.0;
            }
        }
    }
    let mut z = concatenate(Axis(1), &[h_cf.view(), h_sem.view()]).expect("same rows");
    let n_z = linalg::normalize_rows(&mut z);
    Encoded { h_cf, n_cf, h_sem, n_sem, z, n_z }
}

impl Encoded {
    /// Back-propagates `dL/dz` to the pre-normalization CF and SEM rows.
    fn backward(&self, mut dz: Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        linalg::norm_backward_rows(self.z.view(), &self.n_z, &mut dz);
        let d = self.h_cf.ncols();
        let mut d_cf = dz.slice(s![.., ..d]).to_owned();
        let mut d_sem = dz.slice(s![.., d..]).to_owned();
        linalg::norm_backward_rows(self.h_cf.view(), &self.n_cf, &mut d_cf);
        linalg::norm_backward_rows(self.h_sem.view(), &self.n_sem, &mut d_sem);
        (d_cf, d_sem)
    }
}

impl FusionModel {
    pub fn init(split: &SplitDataset, items: &EmbeddingMatrix, cfg: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        items.expect_rows(split.n_items(), "item vectors")?;
        let sem = SemModel::init(items.d(), cfg.dim, cfg.use_bias, rng);
        let cf = CfModel::init(split.n_users(), split.n_items(), cfg.dim, cfg.layers, cfg.init_std(), rng);
        Ok(Self { sem, cf, freeze_semantic: false })
    }

    /// Zeroes the semantic projection and freezes it, reducing the model to its CF branch.
    pub fn disable_semantic(&mut self) {
        self.sem.weights.fill(0.0);
        self.sem.bias.fill(0.0);
        self.freeze_semantic = true;
    }

    pub fn dim(&self) -> usize {
        self.cf.dim()
    }

    /// Fused (or branch-only) user and item representations. A branch-only
    /// view zeroes the other half before the outer normalization.
    pub fn representations(
        &self,
        graph: &BipartiteGraph,
        split: &SplitDataset,
        items: &EmbeddingMatrix,
        branch: Branch,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        items.expect_rows(self.cf.n_items(), "item vectors")?;
        let nu = self.cf.n_users();
        let prop = self.cf.propagated(graph)?;
        let cold: Vec<bool> = (0..nu)
            .map(|u| split.user_items(Part::Train, u as u32).is_empty())
            .collect();
        let sem_users = self.sem.project(user_semantic_inputs(split, items).view());
        let sem_items = self.sem.project(items.view());
        let mut cf_users = prop.slice(s![..nu, ..]).to_owned();
        let mut cf_items = prop.slice(s![nu.., ..]).to_owned();
        let (mut sem_users, mut sem_items) = (sem_users, sem_items);
        match branch {
            Branch::Fused => {}
            Branch::Cf => {
                sem_users.fill(0.0);
                sem_items.fill(0.0);
            }
            Branch::Sem => {
                cf_users.fill(0.0);
                cf_items.fill(0.0);
            }
        }
        let u = encode(cf_users, sem_users, Some(&cold));
        let i = encode(cf_items, sem_items, None);
        Ok((u.z, i.z))
    }

    pub fn scorer(
        &self,
        graph: &BipartiteGraph,
        split: &SplitDataset,
        items: &EmbeddingMatrix,
        branch: Branch,
    ) -> Result<DotScorer> {
        let (u, i) = self.representations(graph, split, items, branch)?;
        Ok(DotScorer::new(u, i))
    }
}

/// Dot product of fused representations; ½(cos_cf + cos_sem) when all four halves are non-zero.
pub fn fusion_score(u_cf: ArrayView1<f64>, u_sem: ArrayView1<f64>, i_cf: ArrayView1<f64>, i_sem: ArrayView1<f64>) -> f64 {
    let hu = (linalg::norm(&u_cf.to_vec()), linalg::norm(&u_sem.to_vec()));
    let hi = (linalg::norm(&i_cf.to_vec()), linalg::norm(&i_sem.to_vec()));
    let zu = fuse(ArrayView1::from(&hu.0), ArrayView1::from(&hu.1));
    let zi = fuse(ArrayView1::from(&hi.0), ArrayView1::from(&hi.1));
    zu.dot(&zi)
}

/// Top-`m` pool items by score against `anchor`, skipping `exclusions`
/// (sorted); ties by ascending item id. `pool_z` rows align with `pool`.
pub fn mine_hard_negatives(
    anchor: ArrayView1<f64>,
    pool: &[u32],
    pool_z: ArrayView2<f64>,
    m: usize,
    exclusions: &[u32],
) -> Vec<u32> {
    debug_assert_eq!(pool.len(), pool_z.nrows());
    let candidates: Vec<(u32, f64)> = pool
        .iter()
        .zip(pool_z.outer_iter())
        .filter(|(i, _)| exclusions.binary_search(i).is_err())
        .map(|(&i, z)| (i, anchor.dot(&z)))
        .collect();
    if candidates.len() < m {
        log::warn!("hard-negative pool has {} candidates, fewer than m = {}", candidates.len(), m);
    }
    top_k_from(candidates, m)
}

/// Loss and gradients of one fusion batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrad {
    pub loss: f64,
    /// Gradient on the stacked ego embeddings.
    pub cf: Array2<f64>,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Forward state reused by mining and the loss within one step.
struct BatchForward<'g> {
    graph: &'g BipartiteGraph,
    prop: Array2<f64>,
}

impl<'g> BatchForward<'g> {
    fn new(model: &FusionModel, graph: &'g BipartiteGraph) -> Result<Self> {
        Ok(Self { graph, prop: model.cf.propagated(graph)? })
    }

    fn encode_users(&self, model: &FusionModel, user_inputs: ArrayView2<f64>, users: &[usize]) -> (Encoded, Array2<f64>) {
        let cf = self.prop.select(Axis(0), users);
        let x = user_inputs.select(Axis(0), users);
        (encode(cf, model.sem.project(x.view()), None), x)
    }

    fn encode_items(&self, model: &FusionModel, items: &EmbeddingMatrix, ids: &[usize]) -> (Encoded, Array2<f64>) {
        let nu = model.cf.n_users();
        let rows: Vec<usize> = ids.iter().map(|&i| nu + i).collect();
        let cf = self.prop.select(Axis(0), &rows);
        let x = items.view().select(Axis(0), ids);
        (encode(cf, model.sem.project(x.view()), None), x)
    }
}

/// InfoNCE over `pairs` with the in-batch positives as shared negatives and
/// `mined[a]` as pair `a`'s extra negatives (held constant). In-batch items
/// that are train positives of the anchor's user are masked, as are mined items
/// already present in the batch.
#[allow(clippy::too_many_arguments)]
pub fn fusion_batch(
    model: &FusionModel,
    graph: &BipartiteGraph,
    split: &SplitDataset,
    user_inputs: ArrayView2<f64>,
    items: &EmbeddingMatrix,
    pairs: &[(u32, u32)],
    mined: &[Vec<u32>],
    tau: f64,
) -> Result<FusionGrad> {
    if mined.len() != pairs.len() {
        return Err(Error::Shape(format!("{} pairs but {} mined lists", pairs.len(), mined.len())));
    }
    let fwd = BatchForward::new(model, graph)?;
    fusion_batch_with(model, &fwd, split, user_inputs, items, pairs, mined, tau)
}

#[allow(clippy::too_many_arguments)]
fn fusion_batch_with(
    model: &FusionModel,
    fwd: &BatchForward<'_>,
    split: &SplitDataset,
    user_inputs: ArrayView2<f64>,
    items: &EmbeddingMatrix,
    pairs: &[(u32, u32)],
    mined: &[Vec<u32>],
    tau: f64,
) -> Result<FusionGrad> {
    let nu = model.cf.n_users();
    let users: Vec<usize> = BTreeSet::from_iter(pairs.iter().map(|&(u, _)| u as usize)).into_iter().collect();
    let user_slot: BTreeMap<usize, usize> = users.iter().enumerate().map(|(k, &u)| (u, k)).collect();
    let pos_items: Vec<usize> = BTreeSet::from_iter(pairs.iter().map(|&(_, i)| i as usize)).into_iter().collect();
    let pos_slot: BTreeMap<usize, usize> = pos_items.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mined_items: Vec<usize> = BTreeSet::from_iter(
        mined.iter().flatten().map(|&i| i as usize).filter(|i| !pos_slot.contains_key(i)),
    )
    .into_iter()
    .collect();
    let mined_slot: BTreeMap<usize, usize> = mined_items.iter().enumerate().map(|(k, &i)| (i, k)).collect();

    let (eu, xu) = fwd.encode_users(model, user_inputs, &users);
    let (ep, xp) = fwd.encode_items(model, items, &pos_items);
    let (em, xm) = fwd.encode_items(model, items, &mined_items);

    let anchor_rows: Vec<usize> = pairs.iter().map(|&(u, _)| user_slot[&(u as usize)]).collect();
    let anchors = eu.z.select(Axis(0), &anchor_rows);
    let positives: Vec<Positive> = pairs.iter().map(|&(_, i)| Positive::Shared(pos_slot[&(i as usize)])).collect();
    let masked: Vec<Vec<usize>> = pairs
        .iter()
        .map(|&(u, i)| {
            pos_items
                .iter()
                .enumerate()
                .filter(|&(_, &j)| j != i as usize && split.contains(Part::Train, u, j as u32))
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    let own_lists: Vec<Vec<usize>> = mined
        .iter()
        .map(|list| list.iter().filter_map(|&i| mined_slot.get(&(i as usize)).copied()).collect())
        .collect();
    let g = contrastive_grad(&ContrastiveBatch {
        anchors: anchors.view(),
        shared: ep.z.view(),
        own: em.z.view(),
        positives: &positives,
        own_lists: &own_lists,
        masked: &masked,
        tau,
    })?;

    let mut dzu = Array2::<f64>::zeros(eu.z.raw_dim());
    for (a, &r) in anchor_rows.iter().enumerate() {
        let mut row = dzu.row_mut(r);
        row += &g.anchors.row(a);
    }
    let mut d_prop = Array2::<f64>::zeros(fwd.prop.raw_dim());
    let d = model.dim();
    let mut weights = Array2::<f64>::zeros(model.sem.weights.raw_dim());
    let mut bias = Array1::<f64>::zeros(d);
    let mut accumulate = |enc: &Encoded, dz: Array2<f64>, x: &Array2<f64>, rows: &mut dyn Iterator<Item = usize>| {
        let (d_cf, d_sem) = enc.backward(dz);
        for (k, node) in rows.enumerate() {
            let mut r = d_prop.row_mut(node);
            r += &d_cf.row(k);
        }
        weights += &d_sem.t().dot(x);
        bias += &d_sem.sum_axis(Axis(0));
    };
    accumulate(&eu, dzu, &xu, &mut users.iter().copied());
    accumulate(&ep, g.shared, &xp, &mut pos_items.iter().map(|&i| nu + i));
    accumulate(&em, g.own, &xm, &mut mined_items.iter().map(|&i| nu + i));
    if !model.sem.use_bias {
        bias.fill(0.0);
    }
    // the layer-mean operator is symmetric, so it is its own adjoint
    let cf = fwd.graph.propagate(&d_prop, model.cf.layers())?;
    Ok(FusionGrad { loss: g.loss, cf, weights, bias })
}

pub struct FusionTrainer<'a> {
    split: &'a SplitDataset,
    items: &'a EmbeddingMatrix,
    cfg: TrainConfig,
    graph: BipartiteGraph,
    model: FusionModel,
    user_inputs: Array2<f64>,
    adam_cf: AdamState,
    adam_w: AdamState,
    adam_b: AdamState,
    train: Vec<(u32, u32)>,
    order_rng: Rng,
    mining_rng: Rng,
}

impl<'a> FusionTrainer<'a> {
    pub fn new(split: &'a SplitDataset, items: &'a EmbeddingMatrix, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let train = split.pairs(Part::Train);
        let graph = BipartiteGraph::from_pairs(split.n_users(), split.n_items(), &train)?;
        let mut init_rng = rng::substream(cfg.seed, "init");
        let model = FusionModel::init(split, items, cfg, &mut init_rng)?;
        Ok(Self::with_model(split, items, cfg, graph, model, train))
    }

    /// Starts from a given model, e.g. one with the semantic branch disabled.
    pub fn from_model(split: &'a SplitDataset, items: &'a EmbeddingMatrix, cfg: &TrainConfig, model: FusionModel) -> Result<Self> {
        cfg.validate()?;
        items.expect_rows(split.n_items(), "item vectors")?;
        let train = split.pairs(Part::Train);
        let graph = BipartiteGraph::from_pairs(split.n_users(), split.n_items(), &train)?;
        Ok(Self::with_model(split, items, cfg, graph, model, train))
    }

    fn with_model(
        split: &'a SplitDataset,
        items: &'a EmbeddingMatrix,
        cfg: &TrainConfig,
        graph: BipartiteGraph,
        model: FusionModel,
        train: Vec<(u32, u32)>,
    ) -> Self {
        Self {
            split,
            items,
            cfg: cfg.clone(),
            graph,
            user_inputs: user_semantic_inputs(split, items),
            adam_cf: AdamState::new(model.cf.stacked().len()),
            adam_w: AdamState::new(model.sem.weights.len()),
            adam_b: AdamState::new(model.sem.bias.len()),
            model,
            train,
            order_rng: rng::substream(cfg.seed, "order"),
            mining_rng: rng::substream(cfg.seed, "mining"),
        }
    }

    pub fn model(&self) -> &FusionModel {
        &self.model
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    fn candidate_pool(&mut self) -> Vec<u32> {
        let n = self.split.n_items();
        if self.cfg.hard_pool >= n {
            return (0..n as u32).collect();
        }
        let mut pool: Vec<u32> = index::sample(&mut self.mining_rng, n, self.cfg.hard_pool)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        pool.sort_unstable();
        pool
    }

    fn mine(&self, fwd: &BatchForward<'_>, pool: &[u32], batch: &[(u32, u32)]) -> Vec<Vec<u32>> {
        if self.cfg.hard_negatives == 0 {
            return vec![Vec::new(); batch.len()];
        }
        let pool_idx: Vec<usize> = pool.iter().map(|&i| i as usize).collect();
        let (pool_enc, _) = fwd.encode_items(&self.model, self.items, &pool_idx);
        let users: Vec<usize> = BTreeSet::from_iter(batch.iter().map(|&(u, _)| u as usize)).into_iter().collect();
        let (user_enc, _) = fwd.encode_users(&self.model, self.user_inputs.view(), &users);
        let per_user: BTreeMap<u32, Vec<u32>> = users
            .iter()
            .enumerate()
            .map(|(k, &u)| {
                let u = u as u32;
                let list = mine_hard_negatives(
                    user_enc.z.row(k),
                    pool,
                    pool_enc.z.view(),
                    self.cfg.hard_negatives,
                    self.split.user_items(Part::Train, u),
                );
                (u, list)
            })
            .collect();
        batch.iter().map(|(u, _)| per_user[u].clone()).collect()
    }
}

impl Trainer for FusionTrainer<'_> {
    type Model = FusionModel;

    fn run_epoch(&mut self) -> Result<f64> {
        let mut order = std::mem::take(&mut self.train);
        order.shuffle(&mut self.order_rng);
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            let pool = if self.cfg.hard_negatives > 0 { self.candidate_pool() } else { Vec::new() };
            let fwd = BatchForward::new(&self.model, &self.graph)?;
            let mined = self.mine(&fwd, &pool, batch);
            let g = fusion_batch_with(
                &self.model,
                &fwd,
                self.split,
                self.user_inputs.view(),
                self.items,
                batch,
                &mined,
                self.cfg.temperature,
            )?;
            let (lr, wd) = (self.cfg.lr, self.cfg.weight_decay);
            adam_step_array(self.model.cf.stacked_mut(), &g.cf, &mut self.adam_cf, lr, wd)?;
            if !self.model.freeze_semantic {
                adam_step_array(&mut self.model.sem.weights, &g.weights, &mut self.adam_w, lr, wd)?;
                if self.model.sem.use_bias {
                    adam_step_array(&mut self.model.sem.bias, &g.bias, &mut self.adam_b, lr, wd)?;
                }
            }
            total += g.loss * batch.len() as f64;
        }
        let n = order.len();
        self.train = order;
        Ok(total / n.max(1) as f64)
    }

    fn evaluate(&self) -> f64 {
        let scorer = self
            .model
            .scorer(&self.graph, self.split, self.items, Branch::Fused)
            .expect("model matches data");
        eval::val_recall(&scorer, self.split, self.cfg.eval_k)
    }

    fn snapshot(&self) -> FusionModel {
        self.model.clone()
    }
}

/// Trains the fused model end-to-end; returns the best checkpoint by fused validation recall.
pub fn train_fusion(split: &SplitDataset, items: &EmbeddingMatrix, cfg: &TrainConfig) -> Result<TrainOutcome<FusionModel>> {
    if split.users_with(Part::Val).is_empty() {
        return Err(Error::Config("no validation users to drive early stopping".into()));
    }
    let mut trainer = FusionTrainer::new(split, items, cfg)?;
    let out = fit_with_early_stopping(cfg, &mut trainer)?;
    log::info!(
        "fusion: best val recall@{} {:.4} at epoch {} ({} epochs run)",
        cfg.eval_k,
        out.best_metric,
        out.best_epoch,
        out.epochs_run
    );
    Ok(out)
}
