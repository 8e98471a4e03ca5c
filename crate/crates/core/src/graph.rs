//! Adjacency construction, symmetric normalization, and top-k sparsification.

use alloc::vec::Vec;

use crate::geometry::DistanceMatrix;
use crate::mat::{Mat, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("neighbor index {index} out of range for {n} nodes")]
    IndexError { index: usize, n: usize },
    #[error("zero distance between distinct electrodes {i} and {j}")]
    DegenerateDistance { i: usize, j: usize },
    #[error("sparsity factor must be positive")]
    InvalidDelta,
    #[error("node {node} has zero incident weight and cannot be normalized")]
    IsolatedNode { node: usize },
    #[error("adjacency entry ({i}, {j}) is negative or non-finite")]
    InvalidWeight { i: usize, j: usize },
    #[error("adjacency must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// Square matrix of non-negative, finite edge weights.
#[derive(Clone, PartialEq)]
pub struct Adjacency<F>(Mat<F>);

impl<F: Scalar> core::fmt::Debug for Adjacency<F> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Adjacency({:?})", self.0)
    }
}

impl<F: Scalar> Adjacency<F> {
    /// Validates shape, finiteness, and non-negativity.
    pub fn new(a: Mat<F>) -> Result<Self, GraphError> {
        if a.rows() != a.cols() {
            return Err(GraphError::NotSquare { rows: a.rows(), cols: a.cols() });
        }
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                let w = a[(i, j)];
                if !w.is_finite() || w < F::zero() {
                    return Err(GraphError::InvalidWeight { i, j });
                }
            }
        }
        Ok(Adjacency(a))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn as_mat(&self) -> &Mat<F> {
        &self.0
    }

    pub fn into_mat(self) -> Mat<F> {
        self.0
    }

    /// True when the whole diagonal is zero, i.e. normalization should add
    /// self-loops before computing degrees.
    pub fn needs_self_loops(&self) -> bool {
        (0..self.n()).all(|i| self.0[(i, i)] == F::zero())
    }
}

/// Symmetrically normalized adjacency, the propagation operator of one graph
/// convolution.
#[derive(Clone, PartialEq)]
pub struct Laplacian<F>(Mat<F>);

impl<F: Scalar> core::fmt::Debug for Laplacian<F> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Laplacian({:?})", self.0)
    }
}

impl<F: Scalar> Laplacian<F> {
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn as_mat(&self) -> &Mat<F> {
        &self.0
    }

    pub fn into_mat(self) -> Mat<F> {
        self.0
    }
}

/// 0/1 adjacency from explicit per-node neighbor sets.
pub fn binary_adjacency<F: Scalar>(
    neighbors: &[Vec<usize>],
    n: usize,
) -> Result<Adjacency<F>, GraphError> {
    let mut a = Mat::zeros(n, n);
    for (i, set) in neighbors.iter().enumerate() {
        if i >= n {
            return Err(GraphError::IndexError { index: i, n });
        }
        for &j in set {
            if j >= n {
                return Err(GraphError::IndexError { index: j, n });
            }
            a[(i, j)] = F::one();
        }
    }
    Adjacency::new(a)
}

/// Inverse-square-distance adjacency: off-diagonal weights are
/// `delta / d²` clipped to `[0.1, 1]`, and each diagonal entry is 1 (the
/// self-distance of zero falls on the upper clip).
pub fn init_distance_adjacency<F: Scalar>(
    d: &DistanceMatrix,
    delta: F,
) -> Result<Adjacency<F>, GraphError> {
    if !(delta > F::zero()) {
        return Err(GraphError::InvalidDelta);
    }
    let n = d.n();
    let lo = F::from_f64(0.1);
    let hi = F::one();
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = F::one();
        for j in 0..n {
            if i == j {
                continue;
            }
            let dist = F::from_f64(d.get(i, j));
            if dist == F::zero() {
                return Err(GraphError::DegenerateDistance { i, j });
            }
            let w = delta / (dist * dist);
            a[(i, j)] = w.min(hi).max(lo);
        }
    }
    Adjacency::new(a)
}

/// Symmetric normalization `D̃^{-1/2} Ã D̃^{-1/2}`, where `Ã` is the input
/// plus identity when `add_self_loops` is set and `D̃` its row-sum degrees.
pub fn sym_normalize<F: Scalar>(
    a: &Adjacency<F>,
    add_self_loops: bool,
) -> Result<Laplacian<F>, GraphError> {
    let n = a.n();
    let at = |i: usize, j: usize| {
        let base = a.as_mat()[(i, j)];
        if add_self_loops && i == j {
            base + F::one()
        } else {
            base
        }
    };
    let mut inv_sqrt_deg = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = F::zero();
        for j in 0..n {
            s = s + at(i, j);
        }
        if s <= F::zero() {
            return Err(GraphError::IsolatedNode { node: i });
        }
        inv_sqrt_deg.push(F::one() / s.sqrt());
    }
    let l = Mat::from_fn(n, n, |i, j| at(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j]);
    Ok(Laplacian(l))
}

/// Row-major 0/1 mask marking the diagonal plus the `floor(fraction·n·(n−1))`
/// largest off-diagonal entries (ties broken toward the smaller row-major
/// index).
pub fn topk_mask<F: Scalar>(a: &Mat<F>, fraction: f64) -> Mat<F> {
    assert!(a.rows() == a.cols(), "top-k mask requires a square matrix");
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1]");
    let n = a.rows();
    let count = n * (n - 1);
    // Tiny nudge so fractions like 0.3 of 10 entries resolve to the intended
    // integer despite binary rounding of the product.
    let k = ((fraction * count as f64) + 1e-9) as usize;
    let mut entries: Vec<(F, usize)> = Vec::with_capacity(count);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                entries.push((a[(i, j)], i * n + j));
            }
        }
    }
    entries.sort_unstable_by(|x, y| {
        y.0.partial_cmp(&x.0).expect("finite weights").then(x.1.cmp(&y.1))
    });
    let mut mask = Mat::identity(n);
    for &(_, flat) in entries.iter().take(k) {
        mask.as_mut_slice()[flat] = F::one();
    }
    mask
}

/// Keeps only the globally largest `fraction` of off-diagonal connections;
/// the diagonal passes through unchanged.
pub fn topk_sparsify<F: Scalar>(a: &Adjacency<F>, fraction: f64) -> Adjacency<F> {
    let mask = topk_mask(a.as_mat(), fraction);
    Adjacency(a.as_mat().zip(&mask, |w, m| w * m))
}

/// Per-node distance to the closest other node.
pub fn nearest_neighbor_distances(d: &DistanceMatrix) -> Vec<f64> {
    let n = d.n();
    (0..n)
        .map(|i| {
            let mut best = f64::INFINITY;
            for j in 0..n {
                if i != j && d.get(i, j) < best {
                    best = d.get(i, j);
                }
            }
            best
        })
        .collect()
}

/// Neighbor radius for the baseline binary graph: 1.3 times the median
/// nearest-neighbor distance, so each electrode connects to its immediate
/// spatial ring but not across the scalp.
pub fn default_neighbor_radius(d: &DistanceMatrix) -> f64 {
    let mut nn = nearest_neighbor_distances(d);
    nn.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = nn.len();
    let median = if n % 2 == 1 { nn[n / 2] } else { 0.5 * (nn[n / 2 - 1] + nn[n / 2]) };
    1.3 * median
}

/// Neighbor sets containing every distinct node within `radius`.
pub fn neighbors_within(d: &DistanceMatrix, radius: f64) -> Vec<Vec<usize>> {
    let n = d.n();
    (0..n)
        .map(|i| (0..n).filter(|&j| j != i && d.get(i, j) <= radius).collect())
        .collect()
}
