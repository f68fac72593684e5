//! Symmetric eigendecomposition, graph Fourier transform, vertex
//! coordinates and rank-preserving polynomial filter design.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{lstsq, Mat, SignalMatrix};

const SYMMETRY_TOL: f64 = 1e-10;
const JACOBI_REL_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const DISTINCT_TOL: f64 = 1e-9;
const VANDERMONDE_RESIDUAL_TOL: f64 = 1e-8;

/// Default coordinate dimension, clamped to `N` by callers.
pub const DEFAULT_COORD_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisSource {
    Adjacency,
    Laplacian,
    Other,
}

/// Eigenvalues (descending) with matching orthonormal eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    eigenvalues: Vec<f64>,
    eigenvectors: Mat,
    source: BasisSource,
}

impl SpectralBasis {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Column `i` pairs with `eigenvalues()[i]`.
    pub fn eigenvectors(&self) -> &Mat {
        &self.eigenvectors
    }

    pub fn source(&self) -> BasisSource {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn with_source(mut self, source: BasisSource) -> Self {
        self.source = source;
        self
    }

    /// Same basis with eigenpairs in ascending eigenvalue order.
    pub fn ascending(&self) -> (Vec<f64>, Mat) {
        let n = self.dim();
        let vals: Vec<f64> = self.eigenvalues.iter().rev().copied().collect();
        let vecs = Mat::from_fn(n, n, |i, j| self.eigenvectors[(i, n - 1 - j)]);
        (vals, vecs)
    }
}

/// Cyclic Jacobi eigendecomposition of a dense symmetric matrix, sweeping
/// the pairs in round-robin order.
pub fn eig_sym(matrix: &Mat) -> Result<SpectralBasis> {
    let n = matrix.rows();
    if n == 0 || matrix.cols() != n {
        return Err(Error::validation(format!(
            "eigendecomposition needs a nonempty square matrix, got {:?}",
            matrix.shape()
        )));
    }
    if !matrix.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::validation("matrix is not symmetric"));
    }
    let mut a = matrix.data().to_vec();
    // rows of vt are the eigenvectors
    let mut vt = Mat::identity(n).into_data();
    let total_sq: f64 = a.iter().map(|v| v * v).sum();
    let target = JACOBI_REL_TOL * total_sq.sqrt();

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    // Round-robin ordering: each round is a set of disjoint (p, q) pairs,
    // so all its rotations commute and can be applied row-wise in one pass.
    let m = n + n % 2;
    let rounds: Vec<Vec<(usize, usize)>> = (0..m.saturating_sub(1))
        .map(|r| {
            let seat = |i: usize| if i == 0 { 0 } else { 1 + (i - 1 + r) % (m - 1) };
            (0..m / 2)
                .map(|i| {
                    let (x, y) = (seat(i), seat(m - 1 - i));
                    (x.min(y), x.max(y))
                })
                .filter(|&(_, q)| q < n)
                .collect()
        })
        .collect();

    let mut converged = off_norm(&a) <= target;
    let mut sweeps = 0;
    let mut rots: Vec<(usize, usize, f64, f64, f64)> = Vec::with_capacity(m / 2);
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for pairs in &rounds {
            rots.clear();
            for &(p, q) in pairs {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // skip rotations that cannot change the diagonal in f64
                if sweeps > 3 && apq.abs() < 1e-18 * (app.abs() + aqq.abs()) {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                rots.push((p, q, c, t * c, t));
            }
            if rots.is_empty() {
                continue;
            }
            let diag: Vec<(f64, f64, f64)> = rots
                .iter()
                .map(|&(p, q, _, _, _)| (a[p * n + p], a[q * n + q], a[p * n + q]))
                .collect();
            for &(p, q, c, s, _) in &rots {
                let (head, tail) = a.split_at_mut(q * n);
                rotate(&mut head[p * n..(p + 1) * n], &mut tail[..n], c, s);
                let (head, tail) = vt.split_at_mut(q * n);
                rotate(&mut head[p * n..(p + 1) * n], &mut tail[..n], c, s);
            }
            for row in a.chunks_exact_mut(n) {
                for &(p, q, c, s, _) in &rots {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
            for (&(p, q, _, _, t), &(app, aqq, apq)) in rots.iter().zip(&diag) {
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
            }
        }
        converged = off_norm(&a) <= target;
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge after {JACOBI_MAX_SWEEPS} sweeps (off-diagonal norm {:e})",
            off_norm(&a)
        )));
    }
    log::debug!("Jacobi converged in {sweeps} sweeps for N={n}");

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut eigenvectors = Mat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let v = &mut vt[src * n..(src + 1) * n];
        apply_sign_convention(v);
        eigenvectors.set_column(col, v);
    }
    Ok(SpectralBasis {
        eigenvalues,
        eigenvectors,
        source: BasisSource::Other,
    })
}

fn rotate(xs: &mut [f64], ys: &mut [f64], c: f64, s: f64) {
    for (x, y) in xs.iter_mut().zip(ys.iter_mut()) {
        let (u, v) = (*x, *y);
        *x = c * u - s * v;
        *y = s * u + c * v;
    }
}

/// Flips `v` so its largest-magnitude entry is positive; near-ties go to
/// the lowest index.
fn apply_sign_convention(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let pivot = v.iter().position(|x| x.abs() >= max * (1.0 - 1e-10)).unwrap();
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Basis of the graph's adjacency (the shift).
pub fn adjacency_basis(g: &Graph) -> Result<SpectralBasis> {
    Ok(eig_sym(&g.adjacency().to_dense())?.with_source(BasisSource::Adjacency))
}

/// Basis of the combinatorial Laplacian `D − A`.
pub fn laplacian_basis(g: &Graph) -> Result<SpectralBasis> {
    Ok(eig_sym(&g.laplacian())?.with_source(BasisSource::Laplacian))
}

/// Per-vertex coordinates: row `i` holds the first `p` entries of row `i`
/// of the eigenvector matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexCoords {
    coords: Mat,
}

impl VertexCoords {
    pub fn from_matrix(coords: Mat) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }

    pub fn n_vertices(&self) -> usize {
        self.coords.rows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.coords.row(i)
    }

    /// `p_j − p_i`.
    pub fn difference(&self, i: usize, j: usize) -> Vec<f64> {
        self.point(j).iter().zip(self.point(i)).map(|(a, b)| a - b).collect()
    }

    /// Stacks `p_j − p_i` for each `(i, j)` into an `|pairs| x p` matrix.
    pub fn differences(&self, pairs: &[(usize, usize)]) -> Mat {
        let p = self.dim();
        let mut out = Mat::zeros(pairs.len(), p);
        for (r, &(i, j)) in pairs.iter().enumerate() {
            let (pi, pj) = (self.point(i), self.point(j));
            for (k, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = pj[k] - pi[k];
            }
        }
        out
    }
}

pub fn vertex_coordinates(basis: &SpectralBasis, p: usize) -> Result<VertexCoords> {
    let n = basis.dim();
    if p < 1 || p > n {
        return Err(Error::validation(format!("coordinate dimension {p} outside 1..={n}")));
    }
    Ok(VertexCoords {
        coords: basis.eigenvectors().left_columns(p),
    })
}

/// `Vᵀx`.
pub fn gft(basis: &SpectralBasis, x: &SignalMatrix) -> Result<SignalMatrix> {
    if x.rows() != basis.dim() {
        return Err(Error::shape(
            "gft",
            format!("signal has {} rows, basis has {}", x.rows(), basis.dim()),
        ));
    }
    basis.eigenvectors().tmatmul(x)
}

/// `Vx̂`.
pub fn igft(basis: &SpectralBasis, coeffs: &SignalMatrix) -> Result<SignalMatrix> {
    if coeffs.rows() != basis.dim() {
        return Err(Error::shape(
            "igft",
            format!("coefficients have {} rows, basis has {}", coeffs.rows(), basis.dim()),
        ));
    }
    basis.eigenvectors().matmul(coeffs)
}

/// Distinct values under a `DISTINCT_TOL` clustering of the sorted list.
pub fn distinct_eigenvalues(eigenvalues: &[f64]) -> Vec<f64> {
    let mut sorted = eigenvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for v in sorted {
        match out.last() {
            Some(&last) if (v - last).abs() <= DISTINCT_TOL => {}
            _ => out.push(v),
        }
    }
    out
}

/// Coefficients `h` with `Σ_ℓ h_ℓ λ^ℓ = 1` (ℓ = 1..L) on every distinct
/// eigenvalue, so `Σ_ℓ h_ℓ A^ℓ = I`.
pub fn design_rank_preserving_filter(eigenvalues: &[f64], length: usize) -> Result<Vec<f64>> {
    if eigenvalues.iter().any(|v| v.abs() <= DISTINCT_TOL) {
        return Err(Error::validation(
            "rank-preserving filter design requires a nonzero spectrum",
        ));
    }
    let distinct = distinct_eigenvalues(eigenvalues);
    let q = distinct.len();
    if length < q {
        return Err(Error::validation(format!(
            "filter length {length} is below the {q} distinct eigenvalues"
        )));
    }
    // row q: (λ_q, λ_q², …, λ_q^L)
    let system = Mat::from_fn(q, length, |r, c| distinct[r].powi(c as i32 + 1));
    let ones = vec![1.0; q];
    let h = if q == length {
        lstsq(&system, &ones)?
    } else {
        // minimum-norm solution h = Mᵀ w with (M Mᵀ) w = 1
        let gram = system.matmul(&system.transpose())?;
        let w = lstsq(&gram, &ones)?;
        system.transpose().matvec(&w)
    };
    let residual = system.matvec(&h).iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
    if residual >= VANDERMONDE_RESIDUAL_TOL {
        return Err(Error::Numerical(format!(
            "Vandermonde system residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(h)
}
