//! Fixed-radius neighbour search.
//!
//! The naive double loop is the reference; the cell list bins agents into
//! cubes of edge slightly above `R`, so every in-radius pair sits in the same or
//! an adjacent cell. Both return pairs sorted lexicographically.

use std::collections::HashMap;

use crate::model::distance;
use crate::scalar::Scalar;

/// Below this agent count the naive loop is used.
const CELL_LIST_MIN_AGENTS: usize = 64;

/// All `(i, j)` with `i < j` and `‖x_i − x_j‖ ≤ radius`, by brute force.
pub fn naive_neighbor_pairs<T: Scalar>(positions: &[T], dim: usize, radius: T) -> Vec<(usize, usize)> {
    let n = positions.len() / dim;
    let mut out = Vec::new();
    for i in 0..n {
        let xi = &positions[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            if distance(xi, &positions[j * dim..(j + 1) * dim]) <= radius {
                out.push((i, j));
            }
        }
    }
    out
}

/// Uniform cell list over the occupied region.
pub struct CellList {
    dim: usize,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl CellList {
    pub fn build<T: Scalar>(positions: &[T], dim: usize, radius: T) -> Self {
        let edge = radius * T::lit(1.0 + 1e-9);
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, x) in positions.chunks(dim).enumerate() {
            let key: Vec<i64> = x
                .iter()
                .map(|&c| (c / edge).floor().to_i64().unwrap_or(i64::MAX))
                .collect();
            cells.entry(key).or_default().push(i);
        }
        CellList { dim, cells }
    }

    pub fn pairs<T: Scalar>(&self, positions: &[T], radius: T) -> Vec<(usize, usize)> {
        let d = self.dim;
        let offsets = stencil_offsets(d);
        let mut out = Vec::new();
        let mut probe = vec![0i64; d];
        for (key, members) in &self.cells {
            for off in &offsets {
                for a in 0..d {
                    probe[a] = key[a].saturating_add(off[a]);
                }
                let Some(others) = self.cells.get(&probe) else { continue };
                for &i in members {
                    let xi = &positions[i * d..(i + 1) * d];
                    for &j in others {
                        if i < j && distance(xi, &positions[j * d..(j + 1) * d]) <= radius {
                            out.push((i, j));
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// `{-1, 0, 1}^d`.
fn stencil_offsets(d: usize) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::with_capacity(d)];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|v| {
                (-1..=1).map(move |o| {
                    let mut w = v.clone();
                    w.push(o);
                    w
                })
            })
            .collect();
    }
    out
}

/// In-radius pairs `(i, j)`, `i < j`, sorted; uses the cell list for larger systems.
pub fn neighbor_pairs<T: Scalar>(positions: &[T], dim: usize, radius: T) -> Vec<(usize, usize)> {
    let n = positions.len() / dim;
    if n < CELL_LIST_MIN_AGENTS {
        naive_neighbor_pairs(positions, dim, radius)
    } else {
        CellList::build(positions, dim, radius).pairs(positions, radius)
    }
}

/// Per-agent ascending neighbour lists (excluding the agent itself).
pub fn neighbor_lists<T: Scalar>(positions: &[T], dim: usize, radius: T) -> Vec<Vec<usize>> {
    let n = positions.len() / dim;
    let mut lists = vec![Vec::new(); n];
    // pairs are sorted by (i, j): pushing j onto i and i onto j keeps both lists ascending
    for (i, j) in neighbor_pairs(positions, dim, radius) {
        lists[i].push(j);
        lists[j].push(i);
    }
    for l in &mut lists {
        l.sort_unstable();
    }
    lists
}
