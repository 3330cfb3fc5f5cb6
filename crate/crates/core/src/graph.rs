//! Proximity and distance matrices, connected components, degree matrix and
//! the two spectral decompositions used by the identifiability checks.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io;
use crate::linalg;

/// Default relative tolerance for deciding whether two eigenvalues differ.
pub const DEFAULT_EIG_TOL: f64 = 1e-8;

/// Asymmetry above this is reported when a matrix is symmetrized on ingestion.
pub const ASYM_WARN: f64 = 1e-12;

/// Symmetric nonnegative matrix with zero diagonal. Holds either adjacency
/// weights (areal models) or pairwise distances (geostatistical models).
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    entries: DMatrix<f64>,
    warnings: Vec<String>,
}

impl ProximityMatrix {
    /// Validates and stores `m`. Asymmetric input is averaged with its
    /// transpose; a warning is kept if the asymmetry exceeded [`ASYM_WARN`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::InvalidMatrix(format!(
                "expected a nonempty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let x = m[(i, j)];
                if !x.is_finite() {
                    return Err(Error::InvalidMatrix(format!("entry ({i},{j}) is not finite")));
                }
                if x < 0.0 {
                    return Err(Error::InvalidMatrix(format!("entry ({i},{j}) = {x} is negative")));
                }
            }
            if m[(i, i)] != 0.0 {
                return Err(Error::InvalidMatrix(format!(
                    "diagonal entry ({i},{i}) = {} is not zero",
                    m[(i, i)]
                )));
            }
        }
        let mut warnings = Vec::new();
        let asym = linalg::max_abs_diff(&m, &m.transpose());
        let entries = if asym == 0.0 {
            m
        } else {
            if asym > ASYM_WARN {
                let msg = format!("input matrix asymmetric by {asym:e}; symmetrized");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            linalg::symmetrize(&m)
        };
        Ok(Self { entries, warnings })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// All entries are exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.entries.iter().all(|&x| x == 0.0 || x == 1.0)
    }

    /// Binary with every off-diagonal entry equal to 1.
    pub fn is_complete_binary(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| i == j || self.entries[(i, j)] == 1.0))
    }

    /// Sorted distinct positive off-diagonal values (exact comparison).
    pub fn off_diagonal_values(&self) -> Vec<f64> {
        let n = self.n();
        let mut v: Vec<f64> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| self.entries[(i, j)])
            .filter(|&x| x > 0.0)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn max_entry(&self) -> f64 {
        linalg::max_abs(&self.entries)
    }

    /// Principal submatrix on `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.entries[(idx[a], idx[b])])
    }

    /// Simultaneous row/column permutation: new index `k` is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(self.submatrix(perm))
    }
}

/// Diagonal of column sums of a proximity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeMatrix {
    pub diag: Vec<f64>,
}

impl DegreeMatrix {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.diag))
    }

    /// Errors with the first index whose degree is zero.
    pub fn require_positive(&self) -> Result<()> {
        match self.diag.iter().position(|&d| d <= 0.0) {
            Some(index) => Err(Error::ZeroDegree { index }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentPartition {
    /// Index sets, each sorted, ordered by smallest member.
    pub blocks: Vec<Vec<usize>>,
    pub component_of: Vec<usize>,
}

/// Eigenpairs with eigenvalues in descending order; eigenvectors are columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        linalg::from_spectral(&self.eigenvectors, &self.eigenvalues)
    }

    /// Frobenius norm of `M - V diag(λ) Vᵀ`.
    pub fn reconstruction_error(&self, m: &DMatrix<f64>) -> f64 {
        (m - self.reconstruct()).norm()
    }

    /// Frobenius norm of `VᵀV - I`.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.eigenvalues.len();
        (self.eigenvectors.transpose() * &self.eigenvectors - DMatrix::identity(n, n)).norm()
    }
}

pub fn degree_matrix(w: &ProximityMatrix) -> DegreeMatrix {
    let m = w.entries();
    DegreeMatrix {
        diag: (0..w.n()).map(|j| m.column(j).sum()).collect(),
    }
}

/// Partition of the locations into components joined by positive weights.
/// Iterative BFS, so large graphs do not recurse.
pub fn connected_components(w: &ProximityMatrix) -> ComponentPartition {
    let n = w.n();
    let m = w.entries();
    let mut component_of = vec![usize::MAX; n];
    let mut blocks = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if component_of[start] != usize::MAX {
            continue;
        }
        let id = blocks.len();
        let mut block = vec![start];
        component_of[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if component_of[j] == usize::MAX && (m[(i, j)] > 0.0 || m[(j, i)] > 0.0) {
                    component_of[j] = id;
                    block.push(j);
                    queue.push_back(j);
                }
            }
        }
        block.sort_unstable();
        blocks.push(block);
    }
    ComponentPartition {
        blocks,
        component_of,
    }
}

fn embed_block_spectra(n: usize, parts: Vec<(Vec<usize>, DVector<f64>, DMatrix<f64>)>) -> SpectralDecomposition {
    let mut pairs: Vec<(f64, DVector<f64>)> = Vec::with_capacity(n);
    for (idx, vals, vecs) in parts {
        for k in 0..idx.len() {
            let mut v = DVector::zeros(n);
            for (a, &i) in idx.iter().enumerate() {
                v[i] = vecs[(a, k)];
            }
            pairs.push((vals[k], v));
        }
    }
    // Stable sort keeps component order for tied eigenvalues.
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (k, (_, v)) in pairs.iter().enumerate() {
        eigenvectors.set_column(k, v);
    }
    SpectralDecomposition {
        eigenvalues: pairs.into_iter().map(|p| p.0).collect(),
        eigenvectors,
    }
}

/// The matrix `D^{-1/2} W D^{-1/2}`.
pub fn normalized_matrix(w: &ProximityMatrix, d: &DegreeMatrix) -> Result<DMatrix<f64>> {
    d.require_positive()?;
    let s: Vec<f64> = d.diag.iter().map(|x| 1.0 / x.sqrt()).collect();
    Ok(linalg::diag_scale(&s, w.entries(), &s))
}

/// Eigendecomposition of `D^{-1/2} W D^{-1/2}`, computed per connected
/// component so every eigenvector is supported on a single component.
pub fn normalized_spectrum(w: &ProximityMatrix, d: &DegreeMatrix) -> Result<SpectralDecomposition> {
    let full = normalized_matrix(w, d)?;
    let parts = connected_components(w)
        .blocks
        .into_iter()
        .map(|idx| {
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| full[(idx[a], idx[b])]);
            let (vals, vecs) = linalg::sym_eigen(&sub);
            (idx, vals, vecs)
        })
        .collect();
    Ok(embed_block_spectra(w.n(), parts))
}

/// The graph Laplacian `D - W`.
pub fn laplacian(w: &ProximityMatrix) -> DMatrix<f64> {
    degree_matrix(w).to_matrix() - w.entries()
}

/// Eigendecomposition of `D - W`.
pub fn laplacian_spectrum(w: &ProximityMatrix) -> SpectralDecomposition {
    let (vals, vecs) = linalg::sym_eigen(&laplacian(w));
    SpectralDecomposition {
        eigenvalues: vals.iter().copied().collect(),
        eigenvectors: vecs,
    }
}

/// Number of clusters after sorting `values` and merging neighbours whose
/// gap is at most `rel_tol * max(1, spread)`.
pub fn count_distinct(values: &[f64], rel_tol: f64) -> usize {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let spread = v[v.len() - 1] - v[0];
    let thr = rel_tol * spread.max(1.0);
    1 + v.windows(2).filter(|p| p[1] - p[0] > thr).count()
}

/// Parses an edge list: one `i j [w]` triple per line with 0-based indices.
/// Missing weights default to 1. The symmetric closure is taken; `n` defaults
/// to one more than the largest index.
pub fn parse_edge_list(text: &str, n: Option<usize>) -> Result<ProximityMatrix> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        if !(2..=3).contains(&toks.len()) {
            return Err(Error::Parse(format!("line {}: expected `i j [w]`", lineno + 1)));
        }
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("line {}: bad index {s:?}", lineno + 1)))
        };
        let i = idx(toks[0])?;
        let j = idx(toks[1])?;
        let wt = match toks.get(2) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {}: bad weight {s:?}", lineno + 1)))?,
            None => 1.0,
        };
        edges.push((i, j, wt));
    }
    let max_idx = edges.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
    let n = n.unwrap_or(max_idx);
    if max_idx > n {
        return Err(Error::Parse(format!("index {} out of range for n={n}", max_idx - 1)));
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, j, wt) in edges {
        if i == j {
            return Err(Error::InvalidMatrix(format!("self-loop at {i}")));
        }
        m[(i, j)] = wt;
        m[(j, i)] = wt;
    }
    ProximityMatrix::new(m)
}

/// Reads a graph file. Text containing a comma is read as a dense CSV matrix,
/// anything else as an edge list.
pub fn load_graph(path: &Path) -> Result<ProximityMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    if text.contains(',') {
        ProximityMatrix::new(io::parse_matrix_csv(&text)?)
    } else {
        parse_edge_list(&text, None)
    }
}

fn from_edges(n: usize, edges: &[(usize, usize)]) -> ProximityMatrix {
    let mut m = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        m[(i, j)] = 1.0;
        m[(j, i)] = 1.0;
    }
    ProximityMatrix::new(m).expect("generated graph is valid")
}

/// Binary cycle on `n` nodes.
pub fn ring(n: usize) -> ProximityMatrix {
    assert!(n >= 3, "ring needs at least 3 nodes");
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    from_edges(n, &edges)
}

/// Complete binary graph on `n` nodes.
pub fn complete(n: usize) -> ProximityMatrix {
    let edges: Vec<_> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    from_edges(n, &edges)
}

/// Circulant binary graph: node `i` is joined to `i ± k` for each offset `k`.
pub fn circulant(n: usize, offsets: &[usize]) -> ProximityMatrix {
    let mut edges = Vec::new();
    for i in 0..n {
        for &k in offsets {
            let j = (i + k) % n;
            if j != i {
                edges.push((i, j));
            }
        }
    }
    from_edges(n, &edges)
}

/// The four six-node example graphs, labelled `'a'..='d'`:
/// (a) three disjoint edges, (b) complete graph, (c) an edge plus a triangle
/// with a pendant node, (d) a ring.
pub fn example_graph(label: char) -> Option<ProximityMatrix> {
    match label {
        'a' => Some(from_edges(6, &[(0, 1), (2, 3), (4, 5)])),
        'b' => Some(complete(6)),
        'c' => Some(from_edges(6, &[(0, 1), (2, 3), (3, 4), (2, 4), (2, 5)])),
        'd' => Some(ring(6)),
        _ => None,
    }
}

/// Euclidean distance matrix between points given as rows of `coords`.
pub fn distance_matrix(coords: &DMatrix<f64>) -> Result<ProximityMatrix> {
    let n = coords.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| (coords.row(i) - coords.row(j)).norm());
    ProximityMatrix::new(m)
}
