//! A-priori rounding error bounds for the local kernels, in binary64.
//!
//! Constants hidden in `<~` relations are set to one. The bound reported for
//! a cell is `(u_s + n_q u_q) kappa_q + u_p kappa_p + u_g kappa_g`, plus
//! `u_s kappa_cast` when coefficients are cast to storage precision before
//! evaluation.

use serde::Serialize;

use crate::elements::{basis_condition_numbers, sample_points, BasisConditioning};
use crate::error::{Error, Result};
use crate::geometry::{condition_numbers, CellDiagnostics, Form};
use crate::kernels::{Coefficient, FeEval, KernelPlan, LocalTensor, Mode};
use crate::softfloat::FloatFormat;

/// `gamma_n = n u / (1 - n u)`.
pub fn gamma(n: usize, fmt: FloatFormat) -> Result<f64> {
    let nu = n as f64 * fmt.u();
    if nu >= 1.0 {
        return Err(Error::BoundInvalid(nu));
    }
    Ok(nu / (1.0 - nu))
}

/// Random points added to the quadrature points when sampling basis
/// condition numbers.
pub const CONDITIONING_SAMPLES: usize = 256;

/// Per-plan data shared by every cell: the binary64 plan and sampled basis
/// conditioning.
#[derive(Clone, Debug)]
pub struct BoundsContext {
    pub exact: KernelPlan,
    pub conditioning: BasisConditioning,
    pub precisions: crate::kernels::Precisions,
    pub fe_eval: FeEval,
}

impl BoundsContext {
    pub fn new(plan: &KernelPlan) -> Result<BoundsContext> {
        let exact = plan.reference()?;
        let samples = sample_points(plan.basis.cell, &plan.rule, CONDITIONING_SAMPLES, 0x5eed);
        let conditioning = basis_condition_numbers(&plan.basis, &samples)?;
        Ok(BoundsContext {
            exact,
            conditioning,
            precisions: plan.config.precisions,
            fe_eval: plan.config.fe_eval,
        })
    }

    fn pd(&self) -> f64 {
        (self.exact.basis.p as f64).powi(self.exact.dim() as i32)
    }
}

/// Every bound quantity for one cell.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub form: Form,
    pub mode: Mode,
    pub n_q: usize,
    pub n_d: usize,
    /// `Theta^B[(s n_phi + k) n_q + q]`.
    pub theta_b: Vec<f64>,
    /// `Theta^C`, `Gamma^C` as `[(s n_d + t) n_q + q]` (bilinear only).
    pub theta_c: Vec<f64>,
    pub gamma_c: Vec<f64>,
    /// `Theta^R`, `Gamma^R` as `[s n_q + q]` (action only).
    pub theta_r: Vec<f64>,
    pub gamma_r: Vec<f64>,
    /// `sum |B||H|` or `sum |B||r|`.
    pub q_sum: Vec<f64>,
    /// `Theta^A` or `Theta^v`.
    pub theta: Vec<f64>,
    /// `Gamma^A` or `Gamma^v`.
    pub gamma: Vec<f64>,
    /// Extra term from casting coefficients and basis values to `u_s`.
    pub cast: Vec<f64>,
    /// `||A||_max` or `||v||_inf` of the exact tensor.
    pub norm: f64,
    pub kappa_q: f64,
    pub kappa_p: f64,
    pub kappa_g: f64,
    pub kappa_cast: f64,
    /// Predicted relative error; `None` when the exact tensor is zero.
    pub relative: Option<f64>,
    pub max_kappa2: f64,
    pub kappa_k: f64,
    pub kappa_v: f64,
}

impl BoundReport {
    /// Contributions of the `u_q`, `u_p`, `u_g` and cast terms to the bound.
    pub fn terms(&self, pr: &crate::kernels::Precisions) -> [f64; 4] {
        [
            (pr.u_s.u() + self.n_q as f64 * pr.u_q.u()) * self.kappa_q,
            pr.u_p.u() * self.kappa_p,
            pr.u_g.u() * self.kappa_g,
            pr.u_s.u() * self.kappa_cast,
        ]
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `out[i][j] += sum_q |X[i][q]| Y[j][q]` for `n x n_q` row blocks.
fn abs_product_into(out: &mut [f64], x: &[f64], y: &[f64], n: usize, n_q: usize) {
    for i in 0..n {
        let xi = &x[i * n_q..(i + 1) * n_q];
        for j in 0..n {
            let yj = &y[j * n_q..(j + 1) * n_q];
            out[i * n + j] += xi.iter().zip(yj).map(|(a, b)| a.abs() * b).sum::<f64>();
        }
    }
}

/// `out[c][i] += sum_q X[i][q] y[q]` with `X` nonnegative.
fn abs_matvec_into(out: &mut [f64], x: &[f64], y: &[f64], n: usize, n_q: usize) {
    for i in 0..n {
        out[i] += x[i * n_q..(i + 1) * n_q].iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn theta_b(ctx: &BoundsContext, b: &[f64], n_d: usize, n_phi: usize, n_q: usize) -> Vec<f64> {
    let d = ctx.exact.dim() as f64;
    let p = ctx.exact.basis.p as f64;
    match ctx.exact.config.form {
        Form::Mass => b.iter().map(|v| d * p * v.abs()).collect(),
        Form::Poisson => {
            let mut out = vec![0.0; b.len()];
            for s in 0..n_d {
                for k in 0..n_phi {
                    let o = (s * n_phi + k) * n_q;
                    let row = &b[o..o + n_q];
                    let m = max_abs(row);
                    let kap = ctx.conditioning.kappa_dphi_i[s][k];
                    out[o..o + n_q].fill(d * p * kap * m);
                }
            }
            out
        }
    }
}

fn coefficient_norm(z: &Coefficient) -> f64 {
    match z {
        Coefficient::Constant(_) => 0.0,
        Coefficient::Nodal(v) => max_abs(v),
    }
}

/// All bound quantities for one cell. `w` is required for actions.
pub fn kernel_bounds(ctx: &BoundsContext, coords: &[f64], w: Option<&[f64]>, z: &Coefficient) -> Result<BoundReport> {
    let plan = &ctx.exact;
    let cfg = plan.config;
    let (n_d, n_phi, n_q) = (plan.n_d(), plan.n_phi(), plan.n_q());
    let diag: CellDiagnostics = condition_numbers(&plan.map, coords, cfg.form)?;
    let inter = plan.intermediates(coords, w, z)?;
    let exact: LocalTensor = plan.run(coords, w, z)?;
    let b = &plan.b.data;
    let tb = theta_b(ctx, b, n_d, n_phi, n_q);
    let pd = ctx.pd();
    let kv = ctx.conditioning.kappa_v;
    let z_norm = coefficient_norm(z);
    let wts = &plan.rule.weights;
    let norm = exact.max_abs();

    let mut report = BoundReport {
        form: cfg.form,
        mode: cfg.mode,
        n_q,
        n_d,
        theta_b: Vec::new(),
        theta_c: Vec::new(),
        gamma_c: Vec::new(),
        theta_r: Vec::new(),
        gamma_r: Vec::new(),
        q_sum: Vec::new(),
        theta: Vec::new(),
        gamma: Vec::new(),
        cast: Vec::new(),
        norm,
        kappa_q: 0.0,
        kappa_p: 0.0,
        kappa_g: 0.0,
        kappa_cast: 0.0,
        relative: None,
        max_kappa2: diag.max_kappa2(),
        kappa_k: diag.kappa_k,
        kappa_v: kv,
    };

    match cfg.mode {
        Mode::Bilinear => {
            let mut theta_c = vec![0.0; n_d * n_d * n_q];
            let mut gamma_c = vec![0.0; n_d * n_d * n_q];
            for q in 0..n_q {
                let g = &diag.exact.at(q).g;
                let pdq = diag.at(q);
                for s in 0..n_d {
                    for t in 0..n_d {
                        let i = (s * n_d + t) * n_q + q;
                        theta_c[i] = pd * kv * z_norm * (wts[q] * g[s][t]).abs();
                        gamma_c[i] = pdq.kappa_k * pdq.kappa2 * (wts[q] * pdq.gtilde[s][t] * inter.z[q]).abs();
                    }
                }
            }
            let mut q_sum = vec![0.0; n_phi * n_phi];
            let mut theta = vec![0.0; n_phi * n_phi];
            let mut gamma = vec![0.0; n_phi * n_phi];
            let mut h = vec![0.0; n_phi * n_q];
            let mut th = vec![0.0; n_phi * n_q];
            let mut gh = vec![0.0; n_phi * n_q];
            for s in 0..n_d {
                let bs = plan.b.block(s);
                let tbs = &tb[s * n_phi * n_q..(s + 1) * n_phi * n_q];
                for t in 0..n_d {
                    let bt = plan.b.block(t);
                    let tbt = &tb[t * n_phi * n_q..(t + 1) * n_phi * n_q];
                    let o = (s * n_d + t) * n_q;
                    for k in 0..n_phi {
                        for q in 0..n_q {
                            let i = k * n_q + q;
                            let c = inter.c[o + q];
                            h[i] = (c * bt[i]).abs();
                            th[i] = theta_c[o + q] * bt[i].abs() + c.abs() * tbt[i];
                            gh[i] = gamma_c[o + q] * bt[i].abs();
                        }
                    }
                    abs_product_into(&mut q_sum, bs, &h, n_phi, n_q);
                    abs_product_into(&mut theta, bs, &th, n_phi, n_q);
                    abs_product_into(&mut theta, tbs, &h, n_phi, n_q);
                    abs_product_into(&mut gamma, bs, &gh, n_phi, n_q);
                }
            }
            report.theta_c = theta_c;
            report.gamma_c = gamma_c;
            report.q_sum = q_sum;
            report.theta = theta;
            report.gamma = gamma;
        }
        Mode::Action => {
            let w = w.ok_or_else(|| Error::Config("action bounds need a coefficient vector".into()))?;
            let w_norm = max_abs(w);
            let mut theta_r = vec![0.0; n_d * n_q];
            let mut gamma_r = vec![0.0; n_d * n_q];
            let mut cast_r = vec![0.0; n_d * n_q];
            let kdphi = &ctx.conditioning.kappa_dphi;
            let kdv = &ctx.conditioning.kappa_dv;
            for q in 0..n_q {
                let g = &diag.exact.at(q).g;
                let pdq = diag.at(q);
                let zq = inter.z[q];
                let wq = wts[q];
                match cfg.form {
                    Form::Mass => {
                        let wv = inter.w[q];
                        let wg = (wq * g[0][0]).abs();
                        theta_r[q] = pd * kv * (wv.abs() * z_norm + zq.abs() * w_norm) * wg;
                        gamma_r[q] = pdq.kappa_k * pdq.kappa2 * inter.r[q].abs();
                        cast_r[q] = 2.0 * kv * w_norm * (wg * zq).abs();
                    }
                    Form::Poisson => {
                        let grad: Vec<f64> = (0..n_d).map(|t| inter.w[t * n_q + q]).collect();
                        for s in 0..n_d {
                            let g_grad: f64 = (0..n_d).map(|t| g[s][t] * grad[t]).sum();
                            let lebesgue: f64 = (0..n_d).map(|k| g[s][k].abs() * kdphi[k] * kdv[k]).sum();
                            let gt_grad: f64 = (0..n_d).map(|t| pdq.gtilde[s][t] * grad[t].abs()).sum();
                            let cast: f64 = (0..n_d).map(|k| g[s][k].abs() * kdv[k]).sum();
                            let i = s * n_q + q;
                            theta_r[i] = pd * wq.abs() * (kv * z_norm * g_grad.abs() + zq.abs() * w_norm * lebesgue);
                            gamma_r[i] = pdq.kappa_k * pdq.kappa2 * (wq * zq).abs() * gt_grad;
                            cast_r[i] = 2.0 * (wq * zq).abs() * w_norm * cast;
                        }
                    }
                }
            }
            let mut q_sum = vec![0.0; n_phi];
            let mut theta = vec![0.0; n_phi];
            let mut gamma = vec![0.0; n_phi];
            let mut cast = vec![0.0; n_phi];
            for s in 0..n_d {
                let bs: Vec<f64> = plan.b.block(s).iter().map(|v| v.abs()).collect();
                let tbs = &tb[s * n_phi * n_q..(s + 1) * n_phi * n_q];
                let rs: Vec<f64> = inter.r[s * n_q..(s + 1) * n_q].iter().map(|v| v.abs()).collect();
                abs_matvec_into(&mut q_sum, &bs, &rs, n_phi, n_q);
                abs_matvec_into(&mut theta, &bs, &theta_r[s * n_q..(s + 1) * n_q], n_phi, n_q);
                abs_matvec_into(&mut theta, tbs, &rs, n_phi, n_q);
                abs_matvec_into(&mut gamma, &bs, &gamma_r[s * n_q..(s + 1) * n_q], n_phi, n_q);
                abs_matvec_into(&mut cast, &bs, &cast_r[s * n_q..(s + 1) * n_q], n_phi, n_q);
            }
            report.theta_r = theta_r;
            report.gamma_r = gamma_r;
            report.q_sum = q_sum;
            report.theta = theta;
            report.gamma = gamma;
            if ctx.fe_eval == FeEval::Storage {
                report.cast = cast;
            }
        }
    }
    report.theta_b = tb;
    if norm > 0.0 {
        report.kappa_q = max_abs(&report.q_sum) / norm;
        report.kappa_p = max_abs(&report.theta) / norm;
        report.kappa_g = max_abs(&report.gamma) / norm;
        report.kappa_cast = max_abs(&report.cast) / norm;
        report.relative = Some(report.terms(&ctx.precisions).iter().sum());
    }
    Ok(report)
}

/// `m_K^2` for matrices, `m_K` for vectors.
pub fn assembly_factor(m_k: usize, mode: Mode) -> f64 {
    match mode {
        Mode::Bilinear => (m_k * m_k) as f64,
        Mode::Action => m_k as f64,
    }
}

/// Global relative bound from per-cell reports: the scaled maximum of the
/// per-cell absolute bounds, divided by the global norm.
pub fn assembly_bounds(reports: &[BoundReport], global_norm: f64, m_k: usize, mode: Mode) -> Option<f64> {
    if global_norm <= 0.0 {
        return None;
    }
    let mut worst = 0.0f64;
    for r in reports {
        worst = worst.max(r.relative? * r.norm);
    }
    Some(assembly_factor(m_k, mode) * worst / global_norm)
}
