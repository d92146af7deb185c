//! Small dense helpers shared by the trainers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `v / ‖v‖₂`; the zero vector maps to itself.
pub fn norm(v: &[f64]) -> Vec<f64> {
    let n = l2_norm(v);
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Cosine similarity; zero if either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na > 0.0 && nb > 0.0 {
        dot(a, b) / (na * nb)
    } else {
        0.0
    }
}

/// Normalizes every row in place and returns the pre-normalization norms.
pub fn normalize_rows(m: &mut Array2<f64>) -> Vec<f64> {
    m.axis_iter_mut(Axis(0))
        .map(|mut row| {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row.mapv_inplace(|x| x / n);
            }
            n
        })
        .collect()
}

/// Row-normalized copy.
pub fn normalized_rows(m: ArrayView2<f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    normalize_rows(&mut out);
    out
}

/// Back-propagates through `h = p / ‖p‖`: given `h`, `‖p‖` and `dL/dh`,
/// overwrites `grad` with `dL/dp = (I − h hᵀ) dL/dh / ‖p‖`.
pub fn norm_backward(h: ArrayView1<f64>, norm: f64, mut grad: ArrayViewMut1<f64>) {
    if norm > 0.0 {
        let proj = h.dot(&grad);
        grad.zip_mut_with(&h, |g, &hv| *g = (*g - proj * hv) / norm);
    } else {
        grad.fill(0.0);
    }
}

/// Row-wise version of [`norm_backward`].
pub fn norm_backward_rows(h: ArrayView2<f64>, norms: &[f64], grad: &mut Array2<f64>) {
    for ((h_row, g_row), &n) in h.outer_iter().zip(grad.outer_iter_mut()).zip(norms) {
        norm_backward(h_row, n, g_row);
    }
}

/// `x W^T + b` for a batch of row vectors.
pub fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: Option<ArrayView1<f64>>) -> Array2<f64> {
    let mut out = x.dot(&w.t());
    if let Some(b) = b {
        out += &b;
    }
    out
}

pub fn column_means(m: ArrayView2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(m.ncols()))
}

/// Gram–Schmidt orthonormalization of the columns of `m` (full column rank assumed).
pub fn orthonormal_columns(m: &Array2<f64>) -> Array2<f64> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for k in 0..j {
                let proj = q.column(j).dot(&q.column(k));
                let qk = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-proj, &qk);
            }
        }
        let n = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|x| x / n);
    }
    q
}
