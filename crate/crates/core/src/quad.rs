//! Quadrature helpers: Gauss–Legendre nodes and a vector-valued adaptive
//! Simpson rule (used for the slowly accumulating dynamical phases).

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess, refined by Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        x.iter().map(|&xi| mid + half * xi).collect(),
        w.iter().map(|&wi| wi * half).collect(),
    )
}

const SIMPSON_MAX_DEPTH: usize = 24;

/// Adaptive Simpson integration of a vector-valued integrand over `[a, b]`.
///
/// The error is controlled in the max norm across components; `tol` is an
/// absolute tolerance on the whole interval.
pub fn adaptive_simpson_vec<F>(f: &mut F, a: f64, b: f64, tol: f64, dim: usize) -> Vec<f64>
where
    F: FnMut(f64, &mut [f64]),
{
    if a == b {
        return vec![0.0; dim];
    }
    let mut fa = vec![0.0; dim];
    let mut fm = vec![0.0; dim];
    let mut fb = vec![0.0; dim];
    f(a, &mut fa);
    f(0.5 * (a + b), &mut fm);
    f(b, &mut fb);
    let whole = simpson(&fa, &fm, &fb, b - a);
    let mut out = vec![0.0; dim];
    recurse(f, a, b, &fa, &fm, &fb, &whole, tol, 0, &mut out);
    out
}

fn simpson(fa: &[f64], fm: &[f64], fb: &[f64], h: f64) -> Vec<f64> {
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((&ya, &ym), &yb)| h / 6.0 * (ya + 4.0 * ym + yb))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn recurse<F>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: &[f64],
    fm: &[f64],
    fb: &[f64],
    whole: &[f64],
    tol: f64,
    depth: usize,
    out: &mut [f64],
) where
    F: FnMut(f64, &mut [f64]),
{
    let m = 0.5 * (a + b);
    let dim = fa.len();
    let mut fl = vec![0.0; dim];
    let mut fr = vec![0.0; dim];
    f(0.5 * (a + m), &mut fl);
    f(0.5 * (m + b), &mut fr);
    let left = simpson(fa, &fl, fm, m - a);
    let right = simpson(fm, &fr, fb, b - m);

    let mut err: f64 = 0.0;
    for i in 0..dim {
        err = err.max((left[i] + right[i] - whole[i]).abs());
    }
    if err <= 15.0 * tol || depth >= SIMPSON_MAX_DEPTH {
        for i in 0..dim {
            // Richardson extrapolation of the two levels.
            out[i] += left[i] + right[i] + (left[i] + right[i] - whole[i]) / 15.0;
        }
        return;
    }
    recurse(f, a, m, fa, &fl, fm, &left, 0.5 * tol, depth + 1, out);
    recurse(f, m, b, fm, &fr, fb, &right, 0.5 * tol, depth + 1, out);
}
