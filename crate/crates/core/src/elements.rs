//! Nodal Lagrange bases on reference simplices and boxes, stored as
//! products of affine factors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::quadrature::{gauss_lobatto_nodes, QuadratureRule};
use crate::softfloat::{dispatch, Flags, FloatFormat, FpContext, Rounding, SoftScalar, WithRounding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Simplex,
    Box,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ReferenceCell {
    pub kind: CellKind,
    pub dim: usize,
}

impl ReferenceCell {
    pub fn new(kind: CellKind, dim: usize) -> Result<ReferenceCell> {
        if !(1..=3).contains(&dim) {
            return config(format!("cell dimension must be 1, 2 or 3, got {dim}"));
        }
        Ok(ReferenceCell { kind, dim })
    }

    pub fn tet() -> ReferenceCell {
        ReferenceCell {
            kind: CellKind::Simplex,
            dim: 3,
        }
    }

    pub fn hex() -> ReferenceCell {
        ReferenceCell {
            kind: CellKind::Box,
            dim: 3,
        }
    }

    pub fn volume(&self) -> f64 {
        match self.kind {
            CellKind::Box => 1.0,
            CellKind::Simplex => 1.0 / (1..=self.dim).product::<usize>() as f64,
        }
    }

    /// Vertices in local order, row-major `n_v x dim`.
    pub fn vertices(&self) -> Vec<f64> {
        let d = self.dim;
        match self.kind {
            CellKind::Simplex => {
                let mut v = vec![0.0; (d + 1) * d];
                for j in 0..d {
                    v[(j + 1) * d + j] = 1.0;
                }
                v
            }
            CellKind::Box => (0..1usize << d)
                .flat_map(|i| (0..d).map(move |s| ((i >> s) & 1) as f64))
                .collect(),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self.kind {
            CellKind::Box => x.iter().all(|&v| v >= -tol && v <= 1.0 + tol),
            CellKind::Simplex => x.iter().all(|&v| v >= -tol) && x.iter().sum::<f64>() <= 1.0 + tol,
        }
    }

    /// Uniform random points, row-major.
    pub fn random_points(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(n * d);
        let mut x = [0.0f64; 3];
        while out.len() < n * d {
            for v in x.iter_mut().take(d) {
                *v = rng.gen::<f64>();
            }
            if self.kind == CellKind::Simplex && x[..d].iter().sum::<f64>() > 1.0 {
                continue;
            }
            out.extend_from_slice(&x[..d]);
        }
        out
    }
}

/// 1D node family for box lattices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeFamily {
    #[default]
    Equispaced,
    GaussLobatto,
}

/// Which coordinate a factor reads: a Cartesian axis or the barycentric
/// coordinate `lambda_0 = 1 - sum(x)` of a simplex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorVar {
    Axis(usize),
    Bary0,
}

/// An affine factor `a . x + b`, stored as `sign * y + offset` where `y` is
/// the coordinate named by `var`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonomialFactor {
    pub var: FactorVar,
    pub sign: f64,
    pub offset: f64,
}

impl MonomialFactor {
    /// Coefficient vector `a`.
    pub fn a(&self, d: usize) -> Vec<f64> {
        (0..d).map(|s| self.derivative(s)).collect()
    }

    /// Constant term `b`.
    pub fn b(&self) -> f64 {
        match self.var {
            FactorVar::Axis(_) => self.offset,
            FactorVar::Bary0 => self.sign + self.offset,
        }
    }

    /// `d ell / d x_s`, one of -1, 0, 1.
    pub fn derivative(&self, s: usize) -> f64 {
        match self.var {
            FactorVar::Axis(a) if a == s => self.sign,
            FactorVar::Axis(_) => 0.0,
            FactorVar::Bary0 => -self.sign,
        }
    }

    #[inline(always)]
    fn exact(&self, y: &[f64; 4]) -> f64 {
        self.sign * y[self.slot()] + self.offset
    }

    #[inline(always)]
    fn slot(&self) -> usize {
        match self.var {
            FactorVar::Axis(s) => s,
            FactorVar::Bary0 => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasisFunction {
    pub weight: f64,
    pub factors: Vec<MonomialFactor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LagrangeBasis {
    pub cell: ReferenceCell,
    pub p: usize,
    pub family: NodeFamily,
    /// Row-major `n_phi x d`.
    pub nodes: Vec<f64>,
    pub functions: Vec<BasisFunction>,
}

/// Extended coordinates: `x_1..x_d` in slots 0..3 and `lambda_0` in slot 3.
#[inline]
fn extend(x: &[f64]) -> [f64; 4] {
    let mut y = [0.0; 4];
    y[..x.len()].copy_from_slice(x);
    y[3] = 1.0 - x.iter().sum::<f64>();
    y
}

pub fn build_basis(cell: ReferenceCell, p: usize) -> Result<LagrangeBasis> {
    build_basis_with(cell, p, NodeFamily::Equispaced)
}

pub fn build_basis_with(cell: ReferenceCell, p: usize, family: NodeFamily) -> Result<LagrangeBasis> {
    if p == 0 {
        return config("basis degree must be at least 1");
    }
    if p > 16 {
        return config(format!("basis degree {p} is not supported (max 16)"));
    }
    if !(1..=3).contains(&cell.dim) {
        return config(format!("cell dimension {} is not supported", cell.dim));
    }
    match cell.kind {
        CellKind::Box => Ok(build_box(cell, p, family)?),
        CellKind::Simplex => {
            if family != NodeFamily::Equispaced {
                return config("simplex bases use the equispaced lattice only");
            }
            Ok(build_simplex(cell, p))
        }
    }
}

fn build_box(cell: ReferenceCell, p: usize, family: NodeFamily) -> Result<LagrangeBasis> {
    let d = cell.dim;
    let t: Vec<f64> = match family {
        NodeFamily::Equispaced => (0..=p).map(|k| k as f64 / p as f64).collect(),
        NodeFamily::GaussLobatto => gauss_lobatto_nodes(p + 1)?,
    };
    let n1 = p + 1;
    let n_phi = n1.pow(d as u32);
    let mut nodes = Vec::with_capacity(n_phi * d);
    let mut functions = Vec::with_capacity(n_phi);
    for i in 0..n_phi {
        let mut weight = 1.0;
        let mut factors = Vec::with_capacity(p * d);
        let mut r = i;
        for s in 0..d {
            let j = r % n1;
            r /= n1;
            nodes.push(t[j]);
            for k in (0..n1).filter(|&k| k != j) {
                // Oriented so the factor is positive at its own node.
                let sign = if t[j] > t[k] { 1.0 } else { -1.0 };
                factors.push(MonomialFactor {
                    var: FactorVar::Axis(s),
                    sign,
                    offset: -sign * t[k],
                });
                weight /= (t[j] - t[k]).abs();
            }
        }
        functions.push(BasisFunction { weight, factors });
    }
    Ok(LagrangeBasis {
        cell,
        p,
        family,
        nodes,
        functions,
    })
}

fn build_simplex(cell: ReferenceCell, p: usize) -> LagrangeBasis {
    let d = cell.dim;
    let pf = p as f64;
    let mut nodes = Vec::new();
    let mut functions = Vec::new();
    let fact = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
    for idx in simplex_lattice(d, p) {
        let a0 = p - idx.iter().sum::<usize>();
        let mut alpha = vec![a0];
        alpha.extend_from_slice(&idx);
        let mut factors = Vec::with_capacity(p);
        for (j, &aj) in alpha.iter().enumerate() {
            for k in 0..aj {
                let var = if j == 0 { FactorVar::Bary0 } else { FactorVar::Axis(j - 1) };
                factors.push(MonomialFactor {
                    var,
                    sign: 1.0,
                    offset: -(k as f64) / pf,
                });
            }
        }
        let weight = pf.powi(p as i32) / alpha.iter().map(|&a| fact(a)).product::<f64>();
        nodes.extend(idx.iter().map(|&i| i as f64 / pf));
        functions.push(BasisFunction { weight, factors });
    }
    LagrangeBasis {
        cell,
        p,
        family: NodeFamily::Equispaced,
        nodes,
        functions,
    }
}

/// Multi-indices with sum at most `p`, first index fastest.
fn simplex_lattice(d: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        if idx.iter().sum::<usize>() <= p {
            out.push(idx.clone());
        }
        let mut s = 0;
        while s < d {
            idx[s] += 1;
            if idx[s] <= p {
                break;
            }
            idx[s] = 0;
            s += 1;
        }
        if s == d {
            break;
        }
    }
    out
}

impl LagrangeBasis {
    pub fn dim(&self) -> usize {
        self.cell.dim
    }

    pub fn n_phi(&self) -> usize {
        self.functions.len()
    }

    /// Factors per basis function.
    pub fn m(&self) -> usize {
        match self.cell.kind {
            CellKind::Box => self.p * self.cell.dim,
            CellKind::Simplex => self.p,
        }
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.nodes[i * d..(i + 1) * d]
    }

    /// `phi_i(x)` with every factor rounded once, the product formed left to
    /// right and the weight applied last.
    #[inline]
    pub fn eval_with<R: Rounding>(&self, r: R, i: usize, x: &[f64], flags: &mut Flags) -> f64 {
        let y = extend(x);
        self.eval_y(r, i, &y, flags)
    }

    #[inline]
    fn eval_y<R: Rounding>(&self, r: R, i: usize, y: &[f64; 4], flags: &mut Flags) -> f64 {
        let f = &self.functions[i];
        let mut prod = 1.0;
        for (n, fac) in f.factors.iter().enumerate() {
            let l = r.round(fac.exact(y), flags);
            prod = if n == 0 { l } else { r.mul(prod, l, flags) };
        }
        r.mul(f.weight, prod, flags)
    }

    /// `d phi_i / d x_s` as the weighted sum over factors with nonzero slope of
    /// the product of the remaining factors.
    pub fn grad_with<R: Rounding>(&self, r: R, i: usize, x: &[f64], s: usize, flags: &mut Flags) -> f64 {
        let y = extend(x);
        let mut lhat = [0.0f64; 48];
        self.grad_y(r, i, &y, s, &mut lhat, flags)
    }

    #[inline]
    fn grad_y<R: Rounding>(&self, r: R, i: usize, y: &[f64; 4], s: usize, lhat: &mut [f64], flags: &mut Flags) -> f64 {
        let f = &self.functions[i];
        let m = f.factors.len();
        for (n, fac) in f.factors.iter().enumerate() {
            lhat[n] = r.round(fac.exact(y), flags);
        }
        let mut sum = 0.0;
        let mut first = true;
        for (j, fj) in f.factors.iter().enumerate() {
            let dj = fj.derivative(s);
            if dj == 0.0 {
                continue;
            }
            let mut prod = 1.0;
            let mut started = false;
            for (n, &l) in lhat[..m].iter().enumerate() {
                if n == j {
                    continue;
                }
                prod = if started { r.mul(prod, l, flags) } else { l };
                started = true;
            }
            let term = dj * prod;
            sum = if first { term } else { r.add(sum, term, flags) };
            first = false;
        }
        r.mul(f.weight, sum, flags)
    }

    /// `sum_i z_i phi_i(x)` (or its `s` derivative) accumulated as
    /// `c = rnd(c + rnd(z_i * phi_i))` from `+0`.
    pub fn eval_fe_with<R: Rounding>(
        &self,
        r: R,
        z: &[f64],
        x: &[f64],
        derivative: Option<usize>,
        flags: &mut Flags,
    ) -> f64 {
        let y = extend(x);
        let mut lhat = [0.0f64; 48];
        let mut c = 0.0;
        for (i, &zi) in z.iter().enumerate() {
            let phi = match derivative {
                None => self.eval_y(r, i, &y, flags),
                Some(s) => self.grad_y(r, i, &y, s, &mut lhat, flags),
            };
            c = r.madd(c, zi, phi, flags);
        }
        c
    }

    /// Binary64 value of every basis function at `x`.
    pub fn values_f64(&self, x: &[f64]) -> Vec<f64> {
        let mut fl = Flags::NONE;
        let y = extend(x);
        (0..self.n_phi())
            .map(|i| self.eval_y(crate::softfloat::Fp64::default(), i, &y, &mut fl))
            .collect()
    }

    /// Binary64 `s` derivative of every basis function at `x`.
    pub fn gradients_f64(&self, x: &[f64], s: usize) -> Vec<f64> {
        let mut fl = Flags::NONE;
        let y = extend(x);
        let mut lhat = [0.0f64; 48];
        (0..self.n_phi())
            .map(|i| self.grad_y(crate::softfloat::Fp64::default(), i, &y, s, &mut lhat, &mut fl))
            .collect()
    }

    /// `sum_j |phi_i / ell_j|` over factors with nonzero `s` slope, in binary64.
    pub fn derivative_magnitude(&self, i: usize, x: &[f64], s: usize) -> f64 {
        let y = extend(x);
        let f = &self.functions[i];
        let l: Vec<f64> = f.factors.iter().map(|fac| fac.exact(&y)).collect();
        let mut total = 0.0;
        for (j, fj) in f.factors.iter().enumerate() {
            if fj.derivative(s) == 0.0 {
                continue;
            }
            let prod: f64 = l.iter().enumerate().filter(|&(n, _)| n != j).map(|(_, v)| v).product();
            total += (f.weight * prod).abs();
        }
        total
    }
}

struct EvalBasis<'a> {
    basis: &'a LagrangeBasis,
    i: usize,
    x: &'a [f64],
    deriv: Option<usize>,
    flags: &'a mut Flags,
}

impl WithRounding for EvalBasis<'_> {
    type Output = f64;
    fn run<R: Rounding>(self, r: R) -> f64 {
        match self.deriv {
            None => self.basis.eval_with(r, self.i, self.x, self.flags),
            Some(s) => self.basis.grad_with(r, self.i, self.x, s, self.flags),
        }
    }
}

pub fn eval_basis(basis: &LagrangeBasis, i: usize, x: &[f64], fmt: FloatFormat, ctx: &mut FpContext) -> SoftScalar {
    let value = dispatch(
        fmt,
        false,
        EvalBasis {
            basis,
            i,
            x,
            deriv: None,
            flags: &mut ctx.flags,
        },
    );
    SoftScalar { value, format: fmt }
}

pub fn eval_gradient(
    basis: &LagrangeBasis,
    i: usize,
    x: &[f64],
    s: usize,
    fmt: FloatFormat,
    ctx: &mut FpContext,
) -> SoftScalar {
    let value = dispatch(
        fmt,
        false,
        EvalBasis {
            basis,
            i,
            x,
            deriv: Some(s),
            flags: &mut ctx.flags,
        },
    );
    SoftScalar { value, format: fmt }
}

struct EvalFe<'a> {
    basis: &'a LagrangeBasis,
    z: &'a [f64],
    x: &'a [f64],
    deriv: Option<usize>,
    flags: &'a mut Flags,
}

impl WithRounding for EvalFe<'_> {
    type Output = f64;
    fn run<R: Rounding>(self, r: R) -> f64 {
        self.basis.eval_fe_with(r, self.z, self.x, self.deriv, self.flags)
    }
}

/// `z^T Phi(x)` or `z^T d_s Phi(x)` at precision `fmt`.
pub fn eval_fe_function(
    basis: &LagrangeBasis,
    z: &[f64],
    x: &[f64],
    fmt: FloatFormat,
    derivative: Option<usize>,
    ctx: &mut FpContext,
) -> SoftScalar {
    let value = dispatch(
        fmt,
        false,
        EvalFe {
            basis,
            z,
            x,
            deriv: derivative,
            flags: &mut ctx.flags,
        },
    );
    SoftScalar { value, format: fmt }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Want {
    Values,
    Gradients,
}

/// Basis values or gradients at quadrature points, `B[s][k][q]`.
#[derive(Clone, Debug)]
pub struct Tabulation {
    pub n_d: usize,
    pub n_phi: usize,
    pub n_q: usize,
    pub data: Vec<f64>,
    pub u_p: FloatFormat,
    pub u_s: FloatFormat,
    pub want: Want,
    pub flags: Flags,
}

impl Tabulation {
    #[inline]
    pub fn get(&self, s: usize, k: usize, q: usize) -> f64 {
        self.data[(s * self.n_phi + k) * self.n_q + q]
    }

    /// Row `B_s[k, :]` over quadrature points.
    pub fn row(&self, s: usize, k: usize) -> &[f64] {
        let o = (s * self.n_phi + k) * self.n_q;
        &self.data[o..o + self.n_q]
    }

    /// The `n_phi x n_q` block for direction `s`.
    pub fn block(&self, s: usize) -> &[f64] {
        let o = s * self.n_phi * self.n_q;
        &self.data[o..o + self.n_phi * self.n_q]
    }
}

struct TabulateRows<'a> {
    basis: &'a LagrangeBasis,
    points: &'a [f64],
    n_q: usize,
    want: Want,
    u_s: FloatFormat,
}

impl WithRounding for TabulateRows<'_> {
    type Output = (Vec<f64>, Flags);
    fn run<R: Rounding>(self, r: R) -> (Vec<f64>, Flags) {
        let basis = self.basis;
        let d = basis.dim();
        let n_phi = basis.n_phi();
        let n_d = if self.want == Want::Values { 1 } else { d };
        let n_q = self.n_q;
        let ys: Vec<[f64; 4]> = (0..n_q).map(|q| extend(&self.points[q * d..(q + 1) * d])).collect();
        let mut data = vec![0.0; n_d * n_phi * n_q];
        let u_s = self.u_s;
        let flags = data
            .par_chunks_mut(n_q)
            .enumerate()
            .map(|(row, out)| {
                let (s, k) = (row / n_phi, row % n_phi);
                let mut fl = Flags::NONE;
                let mut lhat = [0.0f64; 48];
                for (q, y) in ys.iter().enumerate() {
                    let v = match self.want {
                        Want::Values => basis.eval_y(r, k, y, &mut fl),
                        Want::Gradients => basis.grad_y(r, k, y, s, &mut lhat, &mut fl),
                    };
                    out[q] = u_s.round(v, &mut fl);
                }
                fl
            })
            .reduce(|| Flags::NONE, |a, b| a | b);
        (data, flags)
    }
}

/// Evaluates at `u_p` and stores at `u_s`.
pub fn tabulate(
    basis: &LagrangeBasis,
    points: &[f64],
    u_p: FloatFormat,
    u_s: FloatFormat,
    want: Want,
) -> Result<Tabulation> {
    let d = basis.dim();
    if points.len() % d != 0 {
        return Err(crate::error::Error::Shape(format!(
            "point array of length {} is not a multiple of dimension {d}",
            points.len()
        )));
    }
    let n_q = points.len() / d;
    let (data, flags) = dispatch(
        u_p,
        false,
        TabulateRows {
            basis,
            points,
            n_q,
            want,
            u_s,
        },
    );
    Ok(Tabulation {
        n_d: if want == Want::Values { 1 } else { d },
        n_phi: basis.n_phi(),
        n_q,
        data,
        u_p,
        u_s,
        want,
        flags,
    })
}

pub fn tabulate_rule(
    basis: &LagrangeBasis,
    rule: &QuadratureRule,
    u_p: FloatFormat,
    u_s: FloatFormat,
    want: Want,
) -> Result<Tabulation> {
    tabulate(basis, &rule.points, u_p, u_s, want)
}

/// Sampled lower bounds on the basis conditioning constants.
#[derive(Clone, Debug, Serialize)]
pub struct BasisConditioning {
    /// `max_x ||Phi(x)||_1`.
    pub kappa_v: f64,
    /// `max_x ||d_s Phi(x)||_1` per direction.
    pub kappa_dv: Vec<f64>,
    /// `max_i kappa(d_s phi_i)` per direction.
    pub kappa_dphi: Vec<f64>,
    /// `kappa(d_s phi_i)` as `[s][i]`.
    pub kappa_dphi_i: Vec<Vec<f64>>,
    pub n_samples: usize,
}

pub fn basis_condition_numbers(basis: &LagrangeBasis, samples: &[f64]) -> Result<BasisConditioning> {
    let d = basis.dim();
    let n = samples.len() / d;
    if n == 0 {
        return config("condition numbers need at least one sample point");
    }
    let n_phi = basis.n_phi();
    let mut kappa_v = 0.0f64;
    let mut kappa_dv = vec![0.0f64; d];
    let mut max_mag = vec![vec![0.0f64; n_phi]; d];
    let mut max_grad = vec![vec![0.0f64; n_phi]; d];
    for q in 0..n {
        let x = &samples[q * d..(q + 1) * d];
        kappa_v = kappa_v.max(basis.values_f64(x).iter().map(|v| v.abs()).sum());
        for s in 0..d {
            let g = basis.gradients_f64(x, s);
            kappa_dv[s] = kappa_dv[s].max(g.iter().map(|v| v.abs()).sum());
            for i in 0..n_phi {
                max_grad[s][i] = max_grad[s][i].max(g[i].abs());
                max_mag[s][i] = max_mag[s][i].max(basis.derivative_magnitude(i, x, s));
            }
        }
    }
    let kappa_dphi_i: Vec<Vec<f64>> = (0..d)
        .map(|s| {
            (0..n_phi)
                .map(|i| {
                    if max_grad[s][i] > 0.0 {
                        max_mag[s][i] / max_grad[s][i]
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect();
    let kappa_dphi = kappa_dphi_i.iter().map(|v| v.iter().fold(1.0f64, |a, &b| a.max(b))).collect();
    Ok(BasisConditioning {
        kappa_v,
        kappa_dv,
        kappa_dphi,
        kappa_dphi_i,
        n_samples: n,
    })
}

/// Quadrature points followed by `n_random` seeded uniform points.
pub fn sample_points(cell: ReferenceCell, rule: &QuadratureRule, n_random: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = rule.points.clone();
    pts.extend(cell.random_points(n_random, &mut rng));
    pts
}
