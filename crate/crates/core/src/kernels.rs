//! Local mass and Poisson kernels under a configurable precision assignment.
//!
//! Bilinear: `A = sum_{s,t} B_s H_st`, `H_st = C_st B_t^T`.
//! Action:   `v = sum_s B_s r_s`, with `n_batch` cells processed as one
//! matrix product per direction.

use serde::{Deserialize, Serialize};

use crate::elements::{build_basis, tabulate, LagrangeBasis, ReferenceCell, Tabulation, Want};
use crate::error::{Error, Result};
use crate::geometry::{cell_geometry, GeometryData, GeometryMap};
use crate::mm_units::{blocked_matmul_nt, transpose, MatRef, MatmulUnitSpec};
use crate::quadrature::{rule_for, QuadratureRule};
use crate::softfloat::{Flags, FloatFormat, Rounding};

pub use crate::geometry::Form;
pub use crate::mm_units::Engine;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bilinear,
    Action,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Bilinear => "bilinear",
            Mode::Action => "action",
        }
    }
}

/// How FE coefficient functions are evaluated at quadrature points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeEval {
    /// Scalar multiply-adds at `u_p`.
    Working,
    /// Coefficients and basis values rounded to `u_s`, then one engine
    /// product accumulated at `u_q`.
    Storage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Precisions {
    pub u_p: FloatFormat,
    pub u_g: FloatFormat,
    pub u_q: FloatFormat,
    pub u_s: FloatFormat,
}

impl Precisions {
    pub fn uniform(f: FloatFormat) -> Precisions {
        Precisions {
            u_p: f,
            u_g: f,
            u_q: f,
            u_s: f,
        }
    }

    pub fn fp64() -> Precisions {
        Precisions::uniform(FloatFormat::FP64)
    }

    /// bf16 storage, fp32 everywhere else.
    pub fn mixed() -> Precisions {
        Precisions {
            u_s: FloatFormat::BF16,
            ..Precisions::uniform(FloatFormat::FP32)
        }
    }

    /// fp16 storage, tabulation and accumulation; fp32 geometry.
    pub fn fp16() -> Precisions {
        Precisions {
            u_g: FloatFormat::FP32,
            ..Precisions::uniform(FloatFormat::FP16)
        }
    }

    /// fp16 accumulation, fp32 everywhere else.
    pub fn fp16_accumulate() -> Precisions {
        Precisions {
            u_q: FloatFormat::FP16,
            ..Precisions::uniform(FloatFormat::FP32)
        }
    }

    pub fn label(&self) -> String {
        format!("p={},g={},q={},s={}", self.u_p, self.u_g, self.u_q, self.u_s)
    }
}

fn same_format(a: FloatFormat, b: FloatFormat) -> bool {
    a.t == b.t && a.exponent_bits == b.exponent_bits
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig {
    pub form: Form,
    pub mode: Mode,
    pub precisions: Precisions,
    pub engine: Engine,
    pub n_batch: usize,
    pub fe_eval: FeEval,
}

impl KernelConfig {
    pub const DEFAULT_BATCH: usize = 64;

    /// Validated config; FE evaluation goes through the engine for the
    /// hardware engines and stays scalar otherwise.
    pub fn new(form: Form, mode: Mode, precisions: Precisions, engine: Engine) -> Result<KernelConfig> {
        let fe_eval = match engine {
            Engine::Scalar => FeEval::Working,
            Engine::Vector | Engine::Matrix => FeEval::Storage,
        };
        let c = KernelConfig {
            form,
            mode,
            precisions,
            engine,
            n_batch: Self::DEFAULT_BATCH,
            fe_eval,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn reference(form: Form, mode: Mode) -> KernelConfig {
        KernelConfig {
            form,
            mode,
            precisions: Precisions::fp64(),
            engine: Engine::Scalar,
            n_batch: Self::DEFAULT_BATCH,
            fe_eval: FeEval::Working,
        }
    }

    pub fn with_batch(mut self, n_batch: usize) -> Result<KernelConfig> {
        self.n_batch = n_batch;
        self.validate()?;
        Ok(self)
    }

    pub fn with_fe_eval(mut self, fe_eval: FeEval) -> KernelConfig {
        self.fe_eval = fe_eval;
        self
    }

    /// Storage must be the coarsest of `u_p`, `u_g`, `u_s`. A coarser `u_q`
    /// is allowed so accumulation error can be studied on its own.
    pub fn validate(&self) -> Result<()> {
        let p = &self.precisions;
        if self.n_batch == 0 {
            return Err(Error::Config("n_batch must be at least 1".into()));
        }
        for (name, f) in [("u_p", p.u_p), ("u_g", p.u_g)] {
            if p.u_s.finer_than(&f) {
                return Err(Error::Config(format!(
                    "{name} = {f} is coarser than the storage format u_s = {}",
                    p.u_s
                )));
            }
        }
        if self.engine != Engine::Scalar {
            let unit = MatmulUnitSpec::default();
            if !same_format(p.u_s, unit.input) || !same_format(p.u_q, unit.accumulate) {
                return Err(Error::Config(format!(
                    "the {} engine needs u_s = {} and u_q = {}",
                    self.engine.name(),
                    unit.input,
                    unit.accumulate
                )));
            }
        }
        Ok(())
    }

    pub fn n_d(&self, dim: usize) -> usize {
        self.form.n_d(dim)
    }
}

/// A coefficient function `z` (or `w`) given by constant or nodal values.
#[derive(Clone, Debug, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Nodal(Vec<f64>),
}

impl Default for Coefficient {
    fn default() -> Self {
        Coefficient::Constant(1.0)
    }
}

/// One cell's local matrix (row-major `n_phi x n_phi`) or vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTensor {
    pub n_phi: usize,
    pub mode: Mode,
    pub values: Vec<f64>,
    pub flags: Flags,
}

impl LocalTensor {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_phi + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `||self - other||_max`.
    pub fn max_diff(&self, other: &LocalTensor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `||A_hat - A||_max / ||A||_max` with `other` the exact tensor.
    pub fn relative_error(&self, exact: &LocalTensor) -> f64 {
        let n = exact.max_abs();
        if n == 0.0 {
            if self.max_abs() == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.max_diff(exact) / n
        }
    }
}

/// Per-cell intermediates of one kernel evaluation.
#[derive(Clone, Debug, Default)]
pub struct Intermediates {
    /// `z_check` at `u_g`, one value per point.
    pub z: Vec<f64>,
    /// `C[(s n_d + t) n_q + q]` at `u_s`.
    pub c: Vec<f64>,
    /// `w_check` (mass) or its reference gradient `[t n_q + q]` (Poisson) at `u_g`.
    pub w: Vec<f64>,
    /// `R[s n_q + q]` at `u_s`.
    pub r: Vec<f64>,
}

/// Tabulations and rules shared by every cell of one configuration.
#[derive(Clone, Debug)]
pub struct KernelPlan {
    pub config: KernelConfig,
    pub basis: LagrangeBasis,
    pub rule: QuadratureRule,
    pub map: GeometryMap,
    /// Values (mass) or gradients (Poisson) at `u_p`, stored at `u_s`.
    pub b: Tabulation,
    /// Values at `u_p` for coefficient evaluation.
    pub phi: Tabulation,
    /// Gradients at `u_p`, Poisson only.
    pub dphi: Option<Tabulation>,
    /// `n_q x n_phi` transposes rounded to `u_s` for the storage FE path:
    /// values first, then each gradient direction.
    fe_storage: Vec<Vec<f64>>,
}

impl KernelPlan {
    pub fn new(cell: ReferenceCell, p: usize, config: KernelConfig) -> Result<KernelPlan> {
        let basis = build_basis(cell, p)?;
        let rule = rule_for(cell, p, config.form)?;
        KernelPlan::with_basis(basis, rule, config)
    }

    pub fn with_basis(basis: LagrangeBasis, rule: QuadratureRule, config: KernelConfig) -> Result<KernelPlan> {
        config.validate()?;
        let pr = config.precisions;
        let want = match config.form {
            Form::Mass => Want::Values,
            Form::Poisson => Want::Gradients,
        };
        let b = tabulate(&basis, &rule.points, pr.u_p, pr.u_s, want)?;
        let phi = tabulate(&basis, &rule.points, pr.u_p, pr.u_p, Want::Values)?;
        let dphi = match config.form {
            Form::Poisson => Some(tabulate(&basis, &rule.points, pr.u_p, pr.u_p, Want::Gradients)?),
            Form::Mass => None,
        };
        let map = GeometryMap::new(basis.cell, &rule.points)?;
        let mut plan = KernelPlan {
            config,
            basis,
            rule,
            map,
            b,
            phi,
            dphi,
            fe_storage: Vec::new(),
        };
        if config.fe_eval == FeEval::Storage && config.mode == Mode::Action {
            let (n_phi, n_q) = (plan.n_phi(), plan.n_q());
            let mut fl = Flags::NONE;
            let mut blocks = vec![plan.phi.block(0).to_vec()];
            if let Some(d) = &plan.dphi {
                blocks.extend((0..d.n_d).map(|s| d.block(s).to_vec()));
            }
            plan.fe_storage = blocks
                .into_iter()
                .map(|blk| {
                    let t: Vec<f64> = transpose(&blk, n_phi, n_q);
                    t.into_iter().map(|v| pr.u_s.round(v, &mut fl)).collect()
                })
                .collect();
        }
        Ok(plan)
    }

    /// The all-binary64 plan for the same basis and rule.
    pub fn reference(&self) -> Result<KernelPlan> {
        KernelPlan::with_basis(
            self.basis.clone(),
            self.rule.clone(),
            KernelConfig::reference(self.config.form, self.config.mode),
        )
    }

    pub fn n_phi(&self) -> usize {
        self.basis.n_phi()
    }

    pub fn n_q(&self) -> usize {
        self.rule.n_q()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn n_d(&self) -> usize {
        self.config.n_d(self.dim())
    }

    pub fn geometry(&self, coords: &[f64]) -> Result<GeometryData> {
        let expect = self.map.n_psi() * self.dim();
        if coords.len() != expect {
            return Err(Error::Shape(format!(
                "cell has {} coordinates, expected {expect}",
                coords.len()
            )));
        }
        cell_geometry(&self.map, coords, self.config.form, self.config.precisions.u_g)
    }

    fn check_nodal(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.n_phi() {
            return Err(Error::Shape(format!(
                "{what} has {} nodal values, expected {}",
                v.len(),
                self.n_phi()
            )));
        }
        Ok(())
    }

    /// `sum_i v_i T[i][q]` at `u_p` for each point, cast to `u_g`.
    fn fe_working(&self, v: &[f64], tab: &[f64], flags: &mut Flags) -> Vec<f64> {
        let pr = self.config.precisions;
        let n_q = self.n_q();
        let mut acc = vec![0.0; n_q];
        for (i, &vi) in v.iter().enumerate() {
            let row = &tab[i * n_q..(i + 1) * n_q];
            for (a, &t) in acc.iter_mut().zip(row) {
                *a = pr.u_p.madd(*a, vi, t, flags);
            }
        }
        acc.into_iter().map(|a| pr.u_g.round(a, flags)).collect()
    }

    /// `z_check` at each point, evaluated at `u_p` and cast to `u_g`.
    pub fn eval_coefficient(&self, z: &Coefficient, flags: &mut Flags) -> Result<Vec<f64>> {
        let pr = self.config.precisions;
        match z {
            Coefficient::Constant(c) => {
                let v = pr.u_g.round(pr.u_p.round(*c, flags), flags);
                Ok(vec![v; self.n_q()])
            }
            Coefficient::Nodal(v) => {
                self.check_nodal(v, "coefficient")?;
                Ok(self.fe_working(v, self.phi.block(0), flags))
            }
        }
    }

    /// `C_stq = rnd_s(rnd_g(rnd_g(w_q G_st) z_q))`, upper triangle mirrored.
    pub fn build_c(&self, geo: &GeometryData, z: &[f64], flags: &mut Flags) -> Vec<f64> {
        let pr = self.config.precisions;
        let (n_d, n_q) = (self.n_d(), self.n_q());
        let mut c = vec![0.0; n_d * n_d * n_q];
        for q in 0..n_q {
            let g = &geo.at(q).g;
            let w = self.rule.weights[q];
            for s in 0..n_d {
                for t in s..n_d {
                    let wg = pr.u_g.mul(w, g[s][t], flags);
                    let v = pr.u_s.round(pr.u_g.mul(wg, z[q], flags), flags);
                    c[(s * n_d + t) * n_q + q] = v;
                    c[(t * n_d + s) * n_q + q] = v;
                }
            }
        }
        c
    }

    /// `H_st[k][q] = rnd_s(C_stq B_t[k][q])` for one `(s, t)` pair.
    pub fn build_h_block(&self, c: &[f64], s: usize, t: usize, flags: &mut Flags) -> Vec<f64> {
        let u_s = self.config.precisions.u_s;
        let (n_d, n_q) = (self.n_d(), self.n_q());
        let cst = &c[(s * n_d + t) * n_q..(s * n_d + t + 1) * n_q];
        let bt = self.b.block(t);
        let mut h = vec![0.0; bt.len()];
        for (hrow, brow) in h.chunks_mut(n_q).zip(bt.chunks(n_q)) {
            for q in 0..n_q {
                hrow[q] = u_s.mul(cst[q], brow[q], flags);
            }
        }
        h
    }

    /// All `H_st`, `s`-major, each `n_phi x n_q`.
    pub fn build_h(&self, c: &[f64], flags: &mut Flags) -> Vec<f64> {
        let n_d = self.n_d();
        let mut out = Vec::with_capacity(n_d * n_d * self.n_phi() * self.n_q());
        for s in 0..n_d {
            for t in 0..n_d {
                out.extend(self.build_h_block(c, s, t, flags));
            }
        }
        out
    }

    /// `w_check` (mass) or `grad w_check` (Poisson) on the working path.
    fn w_working(&self, w: &[f64], flags: &mut Flags) -> Vec<f64> {
        match &self.dphi {
            None => self.fe_working(w, self.phi.block(0), flags),
            Some(d) => (0..d.n_d).flat_map(|t| self.fe_working(w, d.block(t), flags)).collect(),
        }
    }

    /// Storage-path FE evaluation for a batch of coefficient vectors; returns
    /// one `w` layout per cell.
    fn w_storage(&self, ws: &[&[f64]], flags: &mut Flags) -> Result<Vec<Vec<f64>>> {
        let pr = self.config.precisions;
        let (n_phi, n_q, nb) = (self.n_phi(), self.n_q(), ws.len());
        let wmat: Vec<f64> = ws
            .iter()
            .flat_map(|w| w.iter().map(|&v| pr.u_s.round(v, flags)).collect::<Vec<_>>())
            .collect();
        let a = MatRef::new(&wmat, nb, n_phi)?;
        let mut per_cell = vec![Vec::with_capacity(n_q * self.fe_storage.len().max(1)); nb];
        let blocks = if self.dphi.is_some() {
            &self.fe_storage[1..]
        } else {
            &self.fe_storage[..1]
        };
        for blk in blocks {
            let mut out = vec![0.0; nb * n_q];
            blocked_matmul_nt(
                a,
                MatRef::new(blk, n_q, n_phi)?,
                &mut out,
                self.config.engine,
                pr.u_q,
                flags,
            )?;
            for (cell, row) in per_cell.iter_mut().zip(out.chunks(n_q)) {
                cell.extend(row.iter().map(|&v| pr.u_g.round(v, flags)));
            }
        }
        Ok(per_cell)
    }

    /// `R` from geometry, `z_check` and the evaluated `w` layout.
    pub fn build_r(&self, geo: &GeometryData, z: &[f64], w: &[f64], flags: &mut Flags) -> Vec<f64> {
        let pr = self.config.precisions;
        let (n_d, n_q) = (self.n_d(), self.n_q());
        let g_ = pr.u_g;
        let mut r = vec![0.0; n_d * n_q];
        for q in 0..n_q {
            let pg = geo.at(q);
            let wq = self.rule.weights[q];
            match self.config.form {
                Form::Mass => {
                    let a = g_.mul(wq, pg.g[0][0], flags);
                    let b = g_.mul(a, z[q], flags);
                    r[q] = pr.u_s.round(g_.mul(b, w[q], flags), flags);
                }
                Form::Poisson => {
                    let wz = g_.mul(wq, z[q], flags);
                    for s in 0..n_d {
                        let mut gw = 0.0;
                        for t in 0..n_d {
                            gw = g_.madd(gw, pg.g[s][t], w[t * n_q + q], flags);
                        }
                        r[s * n_q + q] = pr.u_s.round(g_.mul(wz, gw, flags), flags);
                    }
                }
            }
        }
        r
    }

    /// `acc = rnd_q(acc + part)` entrywise, or a copy for the first term.
    fn accumulate(&self, acc: &mut Option<Vec<f64>>, part: Vec<f64>, flags: &mut Flags) {
        let u_q = self.config.precisions.u_q;
        match acc {
            None => *acc = Some(part),
            Some(a) => {
                for (x, y) in a.iter_mut().zip(part) {
                    *x = u_q.add(*x, y, flags);
                }
            }
        }
    }

    /// Local matrix of one cell.
    pub fn bilinear(&self, coords: &[f64], z: &Coefficient) -> Result<LocalTensor> {
        if self.config.mode != Mode::Bilinear {
            return Err(Error::Config("plan was built for the action mode".into()));
        }
        let mut flags = Flags::NONE;
        let geo = self.geometry(coords)?;
        flags |= geo.flags;
        let zq = self.eval_coefficient(z, &mut flags)?;
        let c = self.build_c(&geo, &zq, &mut flags);
        let (n_d, n_phi, n_q) = (self.n_d(), self.n_phi(), self.n_q());
        let mut acc = None;
        for s in 0..n_d {
            let bs = MatRef::new(self.b.block(s), n_phi, n_q)?;
            for t in 0..n_d {
                let h = self.build_h_block(&c, s, t, &mut flags);
                let mut p = vec![0.0; n_phi * n_phi];
                blocked_matmul_nt(
                    bs,
                    MatRef::new(&h, n_phi, n_q)?,
                    &mut p,
                    self.config.engine,
                    self.config.precisions.u_q,
                    &mut flags,
                )?;
                self.accumulate(&mut acc, p, &mut flags);
            }
        }
        Ok(LocalTensor {
            n_phi,
            mode: Mode::Bilinear,
            values: acc.unwrap_or_default(),
            flags,
        })
    }

    /// Local vectors for one batch of cells.
    fn action_batch(&self, coords: &[&[f64]], ws: &[&[f64]], z: &Coefficient) -> Result<Vec<LocalTensor>> {
        let nb = coords.len();
        let (n_d, n_phi, n_q) = (self.n_d(), self.n_phi(), self.n_q());
        let mut flags = Flags::NONE;
        let mut cell_flags = vec![Flags::NONE; nb];
        let wv = match self.config.fe_eval {
            FeEval::Working => ws.iter().map(|w| self.w_working(w, &mut flags)).collect(),
            FeEval::Storage => self.w_storage(ws, &mut flags)?,
        };
        let mut rb = vec![vec![0.0; nb * n_q]; n_d];
        for (k, (x, w)) in coords.iter().zip(&wv).enumerate() {
            let fl = &mut cell_flags[k];
            let geo = self.geometry(x)?;
            *fl |= geo.flags;
            let zq = self.eval_coefficient(z, fl)?;
            let r = self.build_r(&geo, &zq, w, fl);
            for s in 0..n_d {
                rb[s][k * n_q..(k + 1) * n_q].copy_from_slice(&r[s * n_q..(s + 1) * n_q]);
            }
        }
        let mut acc = None;
        for (s, rs) in rb.iter().enumerate() {
            let mut part = vec![0.0; nb * n_phi];
            blocked_matmul_nt(
                MatRef::new(rs, nb, n_q)?,
                MatRef::new(self.b.block(s), n_phi, n_q)?,
                &mut part,
                self.config.engine,
                self.config.precisions.u_q,
                &mut flags,
            )?;
            self.accumulate(&mut acc, part, &mut flags);
        }
        let v = acc.unwrap_or_default();
        Ok(v.chunks(n_phi)
            .zip(cell_flags)
            .map(|(col, fl)| LocalTensor {
                n_phi,
                mode: Mode::Action,
                values: col.to_vec(),
                flags: fl | flags,
            })
            .collect())
    }

    /// Local vectors for any number of cells, batched by `n_batch`.
    pub fn action(&self, coords: &[&[f64]], ws: &[&[f64]], z: &Coefficient) -> Result<Vec<LocalTensor>> {
        if self.config.mode != Mode::Action {
            return Err(Error::Config("plan was built for the bilinear mode".into()));
        }
        if coords.len() != ws.len() {
            return Err(Error::Shape(format!(
                "{} cells but {} coefficient vectors",
                coords.len(),
                ws.len()
            )));
        }
        for w in ws {
            self.check_nodal(w, "action coefficient")?;
        }
        let mut out = Vec::with_capacity(coords.len());
        for (xc, wc) in coords.chunks(self.config.n_batch).zip(ws.chunks(self.config.n_batch)) {
            out.extend(self.action_batch(xc, wc, z)?);
        }
        Ok(out)
    }

    /// Bilinear or single-cell action, whichever the plan was built for.
    pub fn run(&self, coords: &[f64], w: Option<&[f64]>, z: &Coefficient) -> Result<LocalTensor> {
        match self.config.mode {
            Mode::Bilinear => self.bilinear(coords, z),
            Mode::Action => {
                let w = w.ok_or_else(|| Error::Config("action kernels need a coefficient vector".into()))?;
                Ok(self.action(&[coords], &[w], z)?.remove(0))
            }
        }
    }

    /// Intermediates for one cell as the kernel computes them.
    pub fn intermediates(&self, coords: &[f64], w: Option<&[f64]>, z: &Coefficient) -> Result<Intermediates> {
        let mut flags = Flags::NONE;
        let geo = self.geometry(coords)?;
        let zq = self.eval_coefficient(z, &mut flags)?;
        let c = self.build_c(&geo, &zq, &mut flags);
        let (wv, r) = match (self.config.mode, w) {
            (Mode::Action, Some(w)) => {
                self.check_nodal(w, "action coefficient")?;
                let wv = match self.config.fe_eval {
                    FeEval::Working => self.w_working(w, &mut flags),
                    FeEval::Storage => self.w_storage(&[w], &mut flags)?.remove(0),
                };
                let r = self.build_r(&geo, &zq, &wv, &mut flags);
                (wv, r)
            }
            _ => (Vec::new(), Vec::new()),
        };
        Ok(Intermediates { z: zq, c, w: wv, r })
    }
}

/// One-shot local matrix.
pub fn bilinear_kernel(
    cell: ReferenceCell,
    p: usize,
    coords: &[f64],
    z: &Coefficient,
    config: KernelConfig,
) -> Result<LocalTensor> {
    KernelPlan::new(cell, p, config)?.bilinear(coords, z)
}

/// One-shot batched local vectors.
pub fn action_kernel(
    cell: ReferenceCell,
    p: usize,
    coords: &[&[f64]],
    ws: &[&[f64]],
    z: &Coefficient,
    config: KernelConfig,
) -> Result<Vec<LocalTensor>> {
    KernelPlan::new(cell, p, config)?.action(coords, ws, z)
}

/// The binary64 baseline for one cell.
pub fn reference_kernel(
    cell: ReferenceCell,
    p: usize,
    form: Form,
    mode: Mode,
    coords: &[f64],
    w: Option<&[f64]>,
    z: &Coefficient,
) -> Result<LocalTensor> {
    KernelPlan::new(cell, p, KernelConfig::reference(form, mode))?.run(coords, w, z)
}
