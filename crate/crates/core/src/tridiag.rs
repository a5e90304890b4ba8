//! Symmetric tridiagonal eigensolver: implicit-shift QL with optional
//! eigenvector accumulation.
//!
//! The plane-wave Hamiltonian of a single-harmonic lattice is exactly
//! tridiagonal in this basis, so no general dense solver is needed. The
//! implementation follows the classic QL iteration with implicit shifts;
//! eigenvalues are returned in ascending order.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 50;

/// Eigendecomposition of a symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct TridiagEigen {
    /// Eigenvalues, ascending.
    pub values: Vec<f64>,
    /// `vectors[j]` is the normalized eigenvector of `values[j]`, if requested.
    pub vectors: Option<Vec<Vec<f64>>>,
}

/// Diagonalize the symmetric tridiagonal matrix with main diagonal `diag`
/// and sub/super-diagonal `off_diag` (`off_diag.len() == diag.len() - 1`).
pub fn eigh_tridiagonal(diag: &[f64], off_diag: &[f64], want_vectors: bool) -> Result<TridiagEigen> {
    let n = diag.len();
    assert!(
        n == 0 || off_diag.len() == n - 1,
        "off-diagonal length {} does not match dimension {}",
        off_diag.len(),
        n
    );
    if n == 0 {
        return Ok(TridiagEigen { values: Vec::new(), vectors: want_vectors.then(Vec::new) });
    }

    let mut d = diag.to_vec();
    // e[i] couples rows i and i+1; e[n-1] is scratch.
    let mut e = Vec::with_capacity(n);
    e.extend_from_slice(off_diag);
    e.push(0.0);

    // Row-major n x n; columns are eigenvectors.
    let mut z: Vec<f64> = if want_vectors {
        let mut ident = vec![0.0; n * n];
        for i in 0..n {
            ident[i * n + i] = 1.0;
        }
        ident
    } else {
        Vec::new()
    };

    for l in 0..n {
        let mut sweeps = 0;
        loop {
            // Find the first negligible off-diagonal element at or after l.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > MAX_SWEEPS {
                return Err(Error::EigenNoConverge { k: f64::NAN, index: l });
            }

            // Implicit shift from the 2x2 block at l.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0_f64, 1.0_f64);
            let mut p = 0.0;
            let mut underflow = false;

            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;

                if want_vectors {
                    for row in 0..n {
                        f = z[row * n + i + 1];
                        z[row * n + i + 1] = s * z[row * n + i] + c * f;
                        z[row * n + i] = c * z[row * n + i] - s * f;
                    }
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    // Sort ascending, permuting eigenvector columns alongside.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let vectors = want_vectors.then(|| {
        order
            .iter()
            .map(|&col| (0..n).map(|row| z[row * n + col]).collect())
            .collect()
    });

    Ok(TridiagEigen { values, vectors })
}

/// Eigenvalues only (skips rotation accumulation).
pub fn eigvals_tridiagonal(diag: &[f64], off_diag: &[f64]) -> Result<Vec<f64>> {
    Ok(eigh_tridiagonal(diag, off_diag, false)?.values)
}
