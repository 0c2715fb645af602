//! Gauss rules on the reference interval, box and simplex.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::elements::{CellKind, ReferenceCell};
use crate::error::{config, Error, Result};
use crate::kernels::Form;

const MAX_POINTS: usize = 64;
const NEWTON_ITERS: usize = 100;

/// Points and positive weights on a reference cell. Built in binary64 and
/// treated as exact input by the kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    /// Row-major `n_q x dim`.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly.
    pub degree: usize,
}

impl QuadratureRule {
    pub fn n_q(&self) -> usize {
        self.weights.len()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.n_q()).map(|q| self.weights[q] * f(self.point(q))).sum()
    }
}

/// `n`-point Gauss-Legendre rule on [0, 1].
pub fn gauss_legendre_1d(n: usize) -> Result<QuadratureRule> {
    let (x, w) = gauss_jacobi_01(n, 0)?;
    Ok(QuadratureRule {
        dim: 1,
        points: x,
        weights: w,
        degree: 2 * n - 1,
    })
}

/// Legendre P_n and its derivative at `x` in [-1, 1].
fn legendre(n: usize, x: f64) -> (f64, f64) {
    jacobi(n, 0.0, 0.0, x)
}

/// Jacobi polynomial P_n^(a,b)(x) and its derivative.
fn jacobi(n: usize, a: f64, b: f64, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p0 = 1.0;
    let mut p1 = 0.5 * ((a + b + 2.0) * x + (a - b));
    for k in 2..=n {
        let k = k as f64;
        let s = 2.0 * k + a + b;
        let c1 = 2.0 * k * (k + a + b) * (s - 2.0);
        let c2 = (s - 1.0) * (s * (s - 2.0) * x + a * a - b * b);
        let c3 = 2.0 * (k + a - 1.0) * (k + b - 1.0) * s;
        let p2 = (c2 * p1 - c3 * p0) / c1;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let s = 2.0 * nf + a + b;
    let dp = (nf * ((a - b) - s * x) * p1 + 2.0 * (nf + a) * (nf + b) * p0) / (s * (1.0 - x * x));
    (p1, dp)
}

/// Roots of P_n^(a,b) on (-1, 1), ascending. Eigenvalues of the Jacobi
/// matrix give starting values, Newton polishes them.
fn jacobi_roots(n: usize, a: f64, b: f64) -> Result<Vec<f64>> {
    let mut t = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let s = 2.0 * kf + a + b;
        t[(k, k)] = if k == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        };
        if k + 1 < n {
            let j = kf + 1.0;
            let s = 2.0 * j + a + b;
            let off = (4.0 * j * (j + a) * (j + b) * (j + a + b) / (s * s * (s + 1.0) * (s - 1.0))).sqrt();
            t[(k, k + 1)] = off;
            t[(k + 1, k)] = off;
        }
    }
    let mut x: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
    x.sort_by(f64::total_cmp);
    for xi in x.iter_mut() {
        let mut converged = false;
        for _ in 0..NEWTON_ITERS {
            let (p, dp) = jacobi(n, a, b, *xi);
            let dx = p / dp;
            *xi -= dx;
            if dx.abs() <= 4.0 * f64::EPSILON * xi.abs().max(1e-3) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Internal(format!("Newton iteration for a {n}-point rule did not converge")));
        }
    }
    Ok(x)
}

/// Gauss-Jacobi rule on [0, 1] for the weight `(1 - x)^alpha`.
fn gauss_jacobi_01(n: usize, alpha: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > MAX_POINTS {
        return config(format!("quadrature needs 1..={MAX_POINTS} points, got {n}"));
    }
    let a = alpha as f64;
    if n == 1 {
        // Centroid of (1-x)^alpha on [0, 1].
        return Ok((vec![1.0 / (a + 2.0)], vec![1.0 / (a + 1.0)]));
    }
    let roots = if alpha == 0 {
        legendre_roots(n)?
    } else {
        jacobi_roots(n, a, 0.0)?
    };
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for &r in &roots {
        let (_, dp) = jacobi(n, a, 0.0, r);
        x.push(0.5 * (1.0 + r));
        // [-1,1] weight 2^(a+1)/((1-r^2) P'^2), rescaled to [0,1]
        w.push(1.0 / ((1.0 - r * r) * dp * dp));
    }
    Ok((x, w))
}

/// Legendre roots by Newton from Chebyshev-like guesses, symmetric by construction.
fn legendre_roots(n: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = -(std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut converged = false;
        for _ in 0..NEWTON_ITERS {
            let (p, dp) = legendre(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() <= 2.0 * f64::EPSILON {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Internal(format!("Newton iteration for a {n}-point rule did not converge")));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    Ok(x)
}

/// Gauss-Lobatto-Legendre nodes on [0, 1]: the endpoints plus the roots of P'_{n-1}.
pub fn gauss_lobatto_nodes(n: usize) -> Result<Vec<f64>> {
    if !(2..=MAX_POINTS).contains(&n) {
        return config(format!("Lobatto rule needs 2..={MAX_POINTS} points, got {n}"));
    }
    let mut x = vec![0.0];
    if n > 2 {
        let interior = jacobi_roots(n - 2, 1.0, 1.0)?;
        x.extend(interior.iter().map(|r| 0.5 * (1.0 + r)));
    }
    x.push(1.0);
    Ok(x)
}

/// Tensor-product Gauss rule on [0, 1]^d, first coordinate fastest.
pub fn box_rule(d: usize, n_1d: usize) -> Result<QuadratureRule> {
    let g = gauss_legendre_1d(n_1d)?;
    let n_q = n_1d.pow(d as u32);
    let mut points = Vec::with_capacity(n_q * d);
    let mut weights = Vec::with_capacity(n_q);
    for q in 0..n_q {
        let mut w = 1.0;
        let mut r = q;
        for _ in 0..d {
            let i = r % n_1d;
            r /= n_1d;
            points.push(g.points[i]);
            w *= g.weights[i];
        }
        weights.push(w);
    }
    Ok(QuadratureRule {
        dim: d,
        points,
        weights,
        degree: g.degree,
    })
}

/// Collapsed-coordinate rule on the unit simplex. Direction `k` carries the
/// Jacobi weight `(1 - x)^(d-1-k)` so the collapse Jacobian is absorbed and the
/// rule keeps `n_1d^d` points with 1D exactness `2 n_1d - 1`.
pub fn simplex_rule(d: usize, n_1d: usize) -> Result<QuadratureRule> {
    let rules: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
        .map(|k| gauss_jacobi_01(n_1d, (d - 1 - k) as u32))
        .collect::<Result<_>>()?;
    let n_q = n_1d.pow(d as u32);
    let mut points = Vec::with_capacity(n_q * d);
    let mut weights = Vec::with_capacity(n_q);
    let mut idx = vec![0usize; d];
    for q in 0..n_q {
        let mut r = q;
        for i in idx.iter_mut() {
            *i = r % n_1d;
            r /= n_1d;
        }
        // x_1 = u_1, x_2 = (1-u_1) u_2, x_3 = (1-u_1)(1-u_2) u_3
        let mut rest = 1.0;
        let mut w = 1.0;
        for k in 0..d {
            let (ref xs, ref ws) = rules[k];
            points.push(rest * xs[idx[k]]);
            rest *= 1.0 - xs[idx[k]];
            w *= ws[idx[k]];
        }
        weights.push(w);
    }
    Ok(QuadratureRule {
        dim: d,
        points,
        weights,
        degree: 2 * n_1d - 1,
    })
}

/// The rule used by the kernels: `p + 1` points per direction.
pub fn rule_for(cell: ReferenceCell, p: usize, _form: Form) -> Result<QuadratureRule> {
    rule_with_points(cell, p + 1)
}

pub fn rule_with_points(cell: ReferenceCell, n_1d: usize) -> Result<QuadratureRule> {
    match cell.kind {
        CellKind::Box => box_rule(cell.dim, n_1d),
        CellKind::Simplex => simplex_rule(cell.dim, n_1d),
    }
}
