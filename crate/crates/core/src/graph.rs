//! Symmetrically normalized user–item adjacency and LightGCN-style propagation.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// `Â = D^{-1/2} A D^{-1/2}` over the stacked node space (users first, then
/// items), stored as CSR. No self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    n_users: usize,
    n_items: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

impl BipartiteGraph {
    /// Builds the operator from (user, item) train pairs. Duplicate pairs are
    /// counted once.
    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[(u32, u32)]) -> Result<Self> {
        let n = n_users + n_items;
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(u, i) in pairs {
            if u as usize >= n_users || i as usize >= n_items {
                return Err(Error::Shape(format!("edge ({u}, {i}) outside {n_users}x{n_items}")));
            }
            adj[u as usize].push((n_users + i as usize) as u32);
            adj[n_users + i as usize].push(u);
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let deg: Vec<f64> = adj.iter().map(|a| a.len() as f64).collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for (r, a) in adj.iter().enumerate() {
            for &c in a {
                cols.push(c);
                weights.push(1.0 / (deg[r] * deg[c as usize]).sqrt());
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n_users,
            n_items,
            row_ptr,
            cols,
            weights,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    /// Undirected edge count.
    pub fn n_edges(&self) -> usize {
        self.cols.len() / 2
    }

    /// Weight of the entry `(row, col)` in node space, zero if absent.
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&(col as u32)) {
            Ok(pos) => self.weights[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// `(user, item, weight)` for every edge.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.n_users).flat_map(move |u| {
            (self.row_ptr[u]..self.row_ptr[u + 1])
                .map(move |e| (u as u32, self.cols[e] - self.n_users as u32, self.weights[e]))
        })
    }

    /// `Â x`.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let d = x.ncols();
        let src = x.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut out = Array2::zeros((x.nrows(), d));
        out.as_slice_mut()
            .expect("fresh array")
            .par_chunks_mut(d.max(1))
            .enumerate()
            .for_each(|(r, row)| {
                for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                    let w = self.weights[e];
                    let c = self.cols[e] as usize;
                    for (o, s) in row.iter_mut().zip(&src[c * d..(c + 1) * d]) {
                        *o += w * s;
                    }
                }
            });
        out
    }

    /// Layer-averaged propagation `(1/(L+1)) Σ_{l=0..L} Âˡ x` over the
    /// stacked user‖item table.
    ///
    /// The operator is symmetric, so the same call back-propagates a gradient
    /// on the output to a gradient on `x`.
    pub fn propagate(&self, x: &Array2<f64>, layers: usize) -> Result<Array2<f64>> {
        if x.nrows() != self.n_nodes() {
            return Err(Error::Shape(format!(
                "propagation input has {} rows, graph has {} nodes",
                x.nrows(),
                self.n_nodes()
            )));
        }
        let mut acc = x.to_owned();
        let mut cur = x.to_owned();
        for _ in 0..layers {
            cur = self.apply(&cur);
            acc += &cur;
        }
        acc /= (layers + 1) as f64;
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_edge() {
        let g = BipartiteGraph::from_pairs(1, 1, &[(0, 0)]).unwrap();
        let x = array![[1.0, 2.0], [5.0, -1.0]];
        let y = g.propagate(&x, 1).unwrap();
        assert_eq!(y, array![[3.0, 0.5], [3.0, 0.5]]);
        assert_eq!(g.propagate(&x, 0).unwrap(), x);
    }

    #[test]
    fn weights_are_symmetric() {
        let g = BipartiteGraph::from_pairs(2, 3, &[(0, 0), (0, 1), (1, 1), (1, 2), (1, 1)]).unwrap();
        assert_eq!(g.n_edges(), 4);
        for (u, i, w) in g.edges() {
            let (r, c) = (u as usize, 2 + i as usize);
            assert_eq!(g.weight(r, c), g.weight(c, r));
            assert_eq!(g.weight(r, c), w);
        }
        assert!((g.weight(0, 3) - 1.0 / (2.0f64 * 2.0).sqrt()).abs() < 1e-15);
        assert_eq!(g.weight(0, 4), 0.0);
    }

    #[test]
    fn shape_errors() {
        assert!(BipartiteGraph::from_pairs(1, 1, &[(0, 1)]).is_err());
        let g = BipartiteGraph::from_pairs(1, 1, &[(0, 0)]).unwrap();
        assert!(matches!(g.propagate(&Array2::zeros((3, 2)), 1), Err(Error::Shape(_))));
    }
}
