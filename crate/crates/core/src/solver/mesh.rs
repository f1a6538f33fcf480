//! Kuhn (Freudenthal) subdivision of the grid cells into simplices.
//!
//! Every cell is split into `N!` simplices, one per axis permutation. The
//! simplex for permutation `pi` walks from the lower cell corner through
//! `+e_{pi(0)}`, `+e_{pi(1)}`, ... to the upper corner, so the piecewise-linear
//! interpolant has gradient component `pi(k)` equal to the forward difference
//! along step `k` divided by `h`.

use crate::geometry::Grid;

#[derive(Debug, Clone)]
pub(crate) struct SimplexPattern {
    /// Axis walked by step `k`.
    pub axes: Vec<usize>,
    /// Flat offsets of the `N + 1` vertices relative to the cell corner.
    pub vertices: Vec<usize>,
}

/// Cell list and simplex patterns for one grid.
#[derive(Debug, Clone)]
pub struct Mesh {
    grid: Grid,
    pub(crate) cells: Vec<usize>,
    pub(crate) patterns: Vec<SimplexPattern>,
    pub(crate) weights: Vec<f64>,
    simplex_volume: f64,
}

impl Mesh {
    pub fn new(grid: &Grid) -> Self {
        let dim = grid.dim();
        let last = grid.nodes_per_side() - 2;
        let cells = grid.nodes_in_index_box(&vec![0; dim], &vec![last; dim]);
        let patterns = permutations(dim)
            .into_iter()
            .map(|axes| {
                let mut vertices = Vec::with_capacity(dim + 1);
                let mut off = 0;
                vertices.push(off);
                for &a in &axes {
                    off += grid.stride(a);
                    vertices.push(off);
                }
                SimplexPattern { axes, vertices }
            })
            .collect::<Vec<_>>();
        let simplex_volume = grid.h().powi(dim as i32) / patterns.len() as f64;
        Self {
            grid: grid.clone(),
            cells,
            patterns,
            weights: grid.node_weights(),
            simplex_volume,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    pub fn simplices_per_cell(&self) -> usize {
        self.patterns.len()
    }

    pub fn simplex_count(&self) -> usize {
        self.cells.len() * self.patterns.len()
    }

    pub fn simplex_volume(&self) -> f64 {
        self.simplex_volume
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Gradient of the interpolant of `u` on simplex `pat` of the cell with
    /// lower corner `corner`.
    #[inline]
    pub(crate) fn simplex_gradient(&self, u: &[f64], corner: usize, pat: &SimplexPattern, g: &mut [f64]) {
        let inv_h = 1.0 / self.grid.h();
        for (k, &a) in pat.axes.iter().enumerate() {
            g[a] = (u[corner + pat.vertices[k + 1]] - u[corner + pat.vertices[k]]) * inv_h;
        }
    }

    /// Adds `scale * D^T t` to `out` for one simplex.
    #[inline]
    pub(crate) fn scatter(&self, out: &mut [f64], corner: usize, pat: &SimplexPattern, t: &[f64], scale: f64) {
        let s = scale / self.grid.h();
        for (k, &a) in pat.axes.iter().enumerate() {
            let v = s * t[a];
            out[corner + pat.vertices[k + 1]] += v;
            out[corner + pat.vertices[k]] -= v;
        }
    }

    /// Weighted integral of the piecewise-linear interpolant of `values`
    /// (trapezoidal rule).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// All permutations of `0..n` in lexicographic order.
pub(crate) fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_counts() {
        assert_eq!(permutations(2).len(), 2);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(3)[0], vec![0, 1, 2]);
    }

    #[test]
    fn simplex_volumes_fill_the_box() {
        for dim in [2, 3] {
            let g = Grid::cube(vec![0.0; dim], 1.5, 6).unwrap();
            let m = Mesh::new(&g);
            let total = m.simplex_count() as f64 * m.simplex_volume();
            assert!((total - g.volume()).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_fields_have_exact_gradients() {
        let g = Grid::cube(vec![-1.0, 0.0, 0.5], 2.0, 5).unwrap();
        let m = Mesh::new(&g);
        let u = g.sample(|x| 3.0 * x[0] - 2.0 * x[1] + 0.5 * x[2] + 1.0);
        let mut grad = [0.0; 3];
        for &c in &m.cells {
            for pat in &m.patterns {
                m.simplex_gradient(&u, c, pat, &mut grad);
                assert!((grad[0] - 3.0).abs() < 1e-12);
                assert!((grad[1] + 2.0).abs() < 1e-12);
                assert!((grad[2] - 0.5).abs() < 1e-12);
            }
        }
    }
}
