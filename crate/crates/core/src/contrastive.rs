//! Cosine InfoNCE over unit-normalized rows, with analytic gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg;

/// Where an anchor's positive lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positive {
    /// Row of the shared candidate block.
    Shared(usize),
    /// Row of the per-anchor block.
    Own(usize),
}

/// A batch of contrastive terms. Every anchor sees all `shared` rows except
/// those listed in its `masked` entry, plus the `own` rows listed for it.
/// All rows must already be unit vectors (or zero), so dot products are cosines.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<'a> {
    pub anchors: ArrayView2<'a, f64>,
    pub shared: ArrayView2<'a, f64>,
    pub own: ArrayView2<'a, f64>,
    pub positives: &'a [Positive],
    /// Per-anchor own-row indices in the denominator (positive excluded).
    pub own_lists: &'a [Vec<usize>],
    /// Per-anchor sorted shared-row indices left out of the denominator.
    pub masked: &'a [Vec<usize>],
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub loss: f64,
    pub anchors: Array2<f64>,
    pub shared: Array2<f64>,
    pub own: Array2<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean InfoNCE loss over the batch and its gradient with respect to every
/// row of `anchors`, `shared`, and `own`.
pub fn contrastive_grad(batch: &ContrastiveBatch<'_>) -> Result<ContrastiveGrad> {
    let b = batch.anchors.nrows();
    if !(batch.tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {}", batch.tau)));
    }
    if batch.positives.len() != b {
        return Err(Error::Shape(format!("{} anchors but {} positives", b, batch.positives.len())));
    }
    let empty_lists = batch.own_lists.is_empty();
    let empty_masks = batch.masked.is_empty();
    if (!empty_lists && batch.own_lists.len() != b) || (!empty_masks && batch.masked.len() != b) {
        return Err(Error::Shape("per-anchor lists do not match the anchor count".into()));
    }
    let d = batch.anchors.ncols();
    if batch.shared.ncols() != d || batch.own.ncols() != d {
        return Err(Error::Shape("candidate dimension differs from anchors".into()));
    }
    let mut g_anchor = Array2::<f64>::zeros((b, d));
    let mut g_shared = Array2::<f64>::zeros(batch.shared.raw_dim());
    let mut g_own = Array2::<f64>::zeros(batch.own.raw_dim());
    if b == 0 {
        return Ok(ContrastiveGrad { loss: 0.0, anchors: g_anchor, shared: g_shared, own: g_own });
    }
    let inv_tau = 1.0 / batch.tau;
    let shared_sims = batch.anchors.dot(&batch.shared.t());
    // dL/dsim for the shared block, accumulated then pushed through two GEMMs
    let mut coef_shared = Array2::<f64>::zeros(shared_sims.raw_dim());
    let mut total = 0.0;
    let mut logits = Vec::new();
    let mut own_idx = Vec::new();
    for a in 0..b {
        let anchor = batch.anchors.row(a);
        let masked: &[usize] = if empty_masks { &[] } else { &batch.masked[a] };
        let own_list: &[usize] = if empty_lists { &[] } else { &batch.own_lists[a] };
        logits.clear();
        own_idx.clear();
        let mut pos_slot = usize::MAX;
        let mut m = masked.iter().peekable();
        let mut shared_idx = Vec::with_capacity(batch.shared.nrows());
        for j in 0..batch.shared.nrows() {
            while m.peek().is_some_and(|&&x| x < j) {
                m.next();
            }
            let is_pos = batch.positives[a] == Positive::Shared(j);
            if !is_pos && m.peek() == Some(&&j) {
                continue;
            }
            if is_pos {
                pos_slot = logits.len();
            }
            shared_idx.push(j);
            logits.push(shared_sims[[a, j]] * inv_tau);
        }
        let n_shared = shared_idx.len();
        if let Positive::Own(p) = batch.positives[a] {
            pos_slot = logits.len();
            own_idx.push(p);
            logits.push(anchor.dot(&batch.own.row(p)) * inv_tau);
        }
        for &k in own_list {
            if batch.positives[a] == Positive::Own(k) {
                continue;
            }
            own_idx.push(k);
            logits.push(anchor.dot(&batch.own.row(k)) * inv_tau);
        }
        if pos_slot == usize::MAX {
            return Err(Error::Shape(format!("positive of anchor {a} out of range")));
        }
        let lse = log_sum_exp(&logits);
        total += lse - logits[pos_slot];
        for (slot, &logit) in logits.iter().enumerate() {
            let p = (logit - lse).exp();
            let c = (p - f64::from(u8::from(slot == pos_slot))) * inv_tau;
            if slot < n_shared {
                coef_shared[[a, shared_idx[slot]]] = c;
            } else {
                let k = own_idx[slot - n_shared];
                let row = batch.own.row(k);
                g_anchor.row_mut(a).scaled_add(c, &row);
                g_own.row_mut(k).scaled_add(c, &anchor);
            }
        }
    }
    g_anchor += &coef_shared.dot(&batch.shared);
    g_shared += &coef_shared.t().dot(&batch.anchors);
    let scale = 1.0 / b as f64;
    g_anchor *= scale;
    g_shared *= scale;
    g_own *= scale;
    Ok(ContrastiveGrad { loss: total * scale, anchors: g_anchor, shared: g_shared, own: g_own })
}

/// InfoNCE term and gradients for one anchor against raw (unnormalized) vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceTerm {
    pub loss: f64,
    pub grad_anchor: Array1<f64>,
    pub grad_positive: Array1<f64>,
    pub grad_negatives: Array2<f64>,
}

/// `−ln softmax` of the positive's cosine similarity among positive and negatives, at temperature `tau`.
pub fn infonce_loss(
    anchor: ArrayView1<f64>,
    positive: ArrayView1<f64>,
    negatives: ArrayView2<f64>,
    tau: f64,
) -> Result<InfoNceTerm> {
    if negatives.nrows() == 0 {
        return Err(Error::Undefined("InfoNCE needs at least one negative".into()));
    }
    let d = anchor.len();
    if positive.len() != d || negatives.ncols() != d {
        return Err(Error::Shape("InfoNCE vectors differ in dimension".into()));
    }
    let a_raw = anchor.insert_axis(Axis(0)).to_owned();
    let mut a = a_raw.clone();
    let a_norm = linalg::normalize_rows(&mut a);
    let mut own = ndarray::concatenate(Axis(0), &[positive.insert_axis(Axis(0)), negatives]).expect("same width");
    let own_norms = linalg::normalize_rows(&mut own);
    let lists = [(1..own.nrows()).collect::<Vec<_>>()];
    let empty = Array2::<f64>::zeros((0, d));
    let g = contrastive_grad(&ContrastiveBatch {
        anchors: a.view(),
        shared: empty.view(),
        own: own.view(),
        positives: &[Positive::Own(0)],
        own_lists: &lists,
        masked: &[],
        tau,
    })?;
    let mut ga = g.anchors;
    linalg::norm_backward_rows(a.view(), &a_norm, &mut ga);
    let mut go = g.own;
    linalg::norm_backward_rows(own.view(), &own_norms, &mut go);
    Ok(InfoNceTerm {
        loss: g.loss,
        grad_anchor: ga.row(0).to_owned(),
        grad_positive: go.row(0).to_owned(),
        grad_negatives: go.slice(ndarray::s![1.., ..]).to_owned(),
    })
}
