//! Symmetric positive-definite systems with 6×6 blocks, solved by block
//! elimination in a greedy minimum-degree order.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BlockSparse {
    pub diag: Vec<Matrix6<f64>>,
    /// `upper[i][j]` holds block `(i, j)` for `j > i`; `(j, i)` is its transpose.
    pub upper: Vec<BTreeMap<usize, Matrix6<f64>>>,
}

impl BlockSparse {
    pub fn new(n: usize) -> Self {
        Self {
            diag: vec![Matrix6::zeros(); n],
            upper: vec![BTreeMap::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Adds `m` to block `(i, j)` (and its transpose to `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, m: &Matrix6<f64>) {
        if i == j {
            self.diag[i] += m;
        } else if i < j {
            *self.upper[i].entry(j).or_insert_with(Matrix6::zeros) += m;
        } else {
            *self.upper[j].entry(i).or_insert_with(Matrix6::zeros) += m.transpose();
        }
    }

    pub fn mul(&self, x: &[Vector6<f64>]) -> Vec<Vector6<f64>> {
        let mut y: Vec<Vector6<f64>> = self.diag.iter().zip(x).map(|(d, v)| d * v).collect();
        for (i, row) in self.upper.iter().enumerate() {
            for (&j, m) in row {
                y[i] += m * x[j];
                y[j] += m.transpose() * x[i];
            }
        }
        y
    }

    fn adjacency(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.len()];
        for (i, row) in self.upper.iter().enumerate() {
            for &j in row.keys() {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
        adj
    }

    /// Solves `A x = b`. Fails if a pivot block is not positive definite.
    pub fn solve(&self, b: &[Vector6<f64>]) -> Result<Vec<Vector6<f64>>> {
        assert_eq!(b.len(), self.len());
        let order = min_degree_order(&self.adjacency());

        // Working copy with full (both-direction) off-diagonal rows.
        let mut diag = self.diag.clone();
        let mut rows: Vec<BTreeMap<usize, Matrix6<f64>>> = vec![BTreeMap::new(); self.len()];
        for (i, row) in self.upper.iter().enumerate() {
            for (&j, m) in row {
                rows[i].insert(j, *m);
                rows[j].insert(i, m.transpose());
            }
        }

        struct Step {
            k: usize,
            pivot_inv: Matrix6<f64>,
            /// `(i, A_ki)` for neighbours still present when `k` was eliminated.
            coupling: Vec<(usize, Matrix6<f64>)>,
        }
        let mut steps = Vec::with_capacity(self.len());
        let mut rhs = b.to_vec();
        for &k in &order {
            let pivot = diag[k];
            let chol = pivot
                .cholesky()
                .ok_or_else(|| Error::Singular(format!("pivot block {k} is not positive definite")))?;
            let pivot_inv = chol.inverse();
            let coupling: Vec<(usize, Matrix6<f64>)> = std::mem::take(&mut rows[k]).into_iter().collect();
            let rhs_k = rhs[k];
            for (i, a_ki) in &coupling {
                let a_ik = a_ki.transpose();
                let t = a_ik * pivot_inv;
                rhs[*i] -= t * rhs_k;
                diag[*i] -= t * a_ki;
                for (j, a_kj) in &coupling {
                    if j != i {
                        *rows[*i].entry(*j).or_insert_with(Matrix6::zeros) -= t * a_kj;
                    }
                }
                rows[*i].remove(&k);
            }
            steps.push(Step { k, pivot_inv, coupling });
        }

        let mut x = vec![Vector6::zeros(); self.len()];
        for s in steps.iter().rev() {
            let mut v = rhs[s.k];
            for (i, a_ki) in &s.coupling {
                v -= a_ki * x[*i];
            }
            x[s.k] = s.pivot_inv * v;
        }
        Ok(x)
    }
}

/// Greedy minimum-degree elimination order on the block graph. Ties go to
/// the lowest index, so the order is deterministic.
pub fn min_degree_order(adj: &[BTreeSet<usize>]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = adj.to_vec();
    let mut queue: BTreeSet<(usize, usize)> = adj.iter().enumerate().map(|(i, a)| (a.len(), i)).collect();
    let mut order = Vec::with_capacity(adj.len());
    while let Some((_, k)) = queue.pop_first() {
        order.push(k);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[k]).into_iter().collect();
        for &i in &nbrs {
            queue.remove(&(adj[i].len(), i));
            adj[i].remove(&k);
            for &j in &nbrs {
                if j != i {
                    adj[i].insert(j);
                }
            }
            queue.insert((adj[i].len(), i));
        }
    }
    order
}
