//! Error sweeps: geometry conditioning, quadrature size, polynomial degree,
//! and bound dominance checks, with CSV and SVG output.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{kernel_bounds, BoundsContext};
use crate::elements::ReferenceCell;
use crate::error::{config, Error, Result};
use crate::geometry::{cell_geometry, condition_numbers, kappa2, Form, GeometryMap};
use crate::kernels::{Coefficient, Engine, FeEval, KernelConfig, KernelPlan, LocalTensor, Mode, Precisions};
use crate::mesh::{epsilon_tet, Mesh};
use crate::softfloat::{Flags, FloatFormat};

pub const CSV_HEADER: [&str; 12] = [
    "param",
    "config",
    "form",
    "mode",
    "p",
    "n_q",
    "kappa2J",
    "kappaK",
    "err_rel_normalized",
    "bound_rel",
    "slope_window",
    "seed",
];

/// Least-squares line through `(log10 x, log10 y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in decades.
    pub residual: f64,
}

pub fn fit_loglog(points: &[(f64, f64)]) -> Result<LogFit> {
    if points.len() < 4 {
        return config(format!("a log-log fit needs at least 4 points, got {}", points.len()));
    }
    if let Some((x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return config(format!("log-log fit needs positive data, got ({x}, {y})"));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.log10()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.log10()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return config("log-log fit needs at least two distinct x values");
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(LogFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
    })
}

/// Runs `f` on a pool capped by `MPFEM_THREADS` (unset or 0 means all cores).
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let n = match std::env::var("MPFEM_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("MPFEM_THREADS must be a non-negative integer, got {s:?}")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    Ok(pool.install(f))
}

/// One row of sweep output, matching [`CSV_HEADER`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub param: String,
    pub config: String,
    pub form: String,
    pub mode: String,
    pub p: String,
    pub n_q: String,
    #[serde(rename = "kappa2J")]
    pub kappa2_j: String,
    #[serde(rename = "kappaK")]
    pub kappa_k: String,
    pub err_rel_normalized: String,
    pub bound_rel: String,
    pub slope_window: String,
    pub seed: String,
}

/// One sweep point aggregated over cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param: f64,
    pub p: Option<usize>,
    pub n_q: Option<usize>,
    pub kappa2: f64,
    pub kappa_k: f64,
    /// Max-over-cells relative error divided by `normalizer`.
    pub err: f64,
    pub bound: Option<f64>,
    pub flags: Flags,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    pub config: String,
    pub form: Option<Form>,
    pub mode: Option<Mode>,
    pub normalizer: f64,
    pub points: Vec<SweepPoint>,
    pub fit: Option<LogFit>,
    pub seed: u64,
}

fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

impl ErrorReport {
    /// Ratio of the largest to the smallest normalized error.
    pub fn spread(&self) -> f64 {
        let hi = self.points.iter().map(|p| p.err).fold(0.0, f64::max);
        let lo = self.points.iter().map(|p| p.err).fold(f64::INFINITY, f64::min);
        hi / lo
    }

    pub fn max_err(&self) -> f64 {
        self.points.iter().map(|p| p.err).fold(0.0, f64::max)
    }

    pub fn at_p(&self, p: usize) -> Option<&SweepPoint> {
        self.points.iter().find(|pt| pt.p == Some(p))
    }

    /// Fits `err` against `x(point)` over all points.
    pub fn fit_against(&mut self, x: impl Fn(&SweepPoint) -> f64) -> Result<LogFit> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (x(p), p.err)).collect();
        let fit = fit_loglog(&pts)?;
        self.fit = Some(fit);
        Ok(fit)
    }

    pub fn rows(&self) -> Vec<CsvRow> {
        let form = self.form.map(|f| f.name().to_string()).unwrap_or_default();
        let mode = self.mode.map(|m| m.name().to_string()).unwrap_or_default();
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut rows: Vec<CsvRow> = self
            .points
            .iter()
            .map(|pt| CsvRow {
                param: fmt_num(pt.param),
                config: self.config.clone(),
                form: form.clone(),
                mode: mode.clone(),
                p: opt(pt.p),
                n_q: opt(pt.n_q),
                kappa2_j: fmt_num(pt.kappa2),
                kappa_k: fmt_num(pt.kappa_k),
                err_rel_normalized: fmt_num(pt.err),
                bound_rel: pt.bound.map(fmt_num).unwrap_or_default(),
                slope_window: String::new(),
                seed: self.seed.to_string(),
            })
            .collect();
        if let Some(fit) = self.fit {
            let lo = self.points.iter().map(|p| p.param).fold(f64::INFINITY, f64::min);
            let hi = self.points.iter().map(|p| p.param).fold(0.0, f64::max);
            rows.push(CsvRow {
                param: "slope".into(),
                config: self.config.clone(),
                form,
                mode,
                p: String::new(),
                n_q: String::new(),
                kappa2_j: String::new(),
                kappa_k: String::new(),
                err_rel_normalized: fmt_num(fit.slope),
                bound_rel: String::new(),
                slope_window: format!("{}:{}", fmt_num(lo), fmt_num(hi)),
                seed: self.seed.to_string(),
            });
        }
        rows
    }
}

/// Writes the header and every report's rows in order.
pub fn write_csv(reports: &[&ErrorReport], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        for row in r.rows() {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(input: impl std::io::Read) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return config(format!("unexpected CSV header: {}", headers.iter().collect::<Vec<_>>().join(",")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Log-log line chart of `err_rel_normalized` against `param`, one series
/// per `(config, form, mode)`.
pub fn render_svg(rows: &[CsvRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        let (Ok(x), Ok(y)) = (r.param.parse::<f64>(), r.err_rel_normalized.parse::<f64>()) else {
            continue;
        };
        if !(x > 0.0 && y > 0.0) {
            continue;
        }
        let key = [r.config.as_str(), r.form.as_str(), r.mode.as_str()]
            .iter()
            .filter(|s| !s.is_empty())
            .cloned()
            .collect::<Vec<_>>()
            .join(" ");
        match series.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push((x, y)),
            None => series.push((key, vec![(x, y)])),
        }
    }
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if all.is_empty() {
        svg.push_str("<text x=\"20\" y=\"40\">no data</text>\n</svg>\n");
        return svg;
    }
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = all.iter().map(f).fold(f64::INFINITY, f64::min).log10().floor();
        let hi = all.iter().map(f).fold(0.0, f64::max).log10().ceil();
        (lo, if hi > lo { hi } else { lo + 1.0 })
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let sx = |x: f64| M + (x.log10() - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y.log10() - y0) / (y1 - y0) * (H - 2.0 * M);
    svg.push_str(&format!(
        "<g stroke=\"black\" fill=\"none\"><line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\"/><line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\"/></g>\n",
        b = H - M,
        r = W - M
    ));
    for e in x0 as i32..=x1 as i32 {
        let x = sx(10f64.powi(e));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">1e{e}</text>\n",
            H - M + 16.0
        ));
    }
    for e in y0 as i32..=y1 as i32 {
        let y = sy(10f64.powi(e));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" font-size=\"11\" text-anchor=\"end\">1e{e}</text>\n",
            M - 6.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">param</text>\n",
        W / 2.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" font-size=\"12\" transform=\"rotate(-90 14 {:.1})\" text-anchor=\"middle\">normalized error</text>\n",
        H / 2.0,
        H / 2.0
    ));
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in pts {
            svg.push_str(&format!("<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{c}\"/>\n", sx(x), sy(y)));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"{c}\">{}</text>\n",
            M + 10.0,
            M + 14.0 * (i as f64 + 1.0),
            escape(name)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

// ---------------------------------------------------------------------------
// Geometry sweep

/// `eps` values such that the scaled epsilon-tet has `kappa_2(J)` at each
/// target, by bisection in `log eps`.
pub fn epsilon_for_kappa(targets: &[f64]) -> Result<Vec<f64>> {
    let k = |eps: f64| -> Result<f64> {
        let m = epsilon_tet(eps, true)?;
        let map = GeometryMap::new(m.cell, &[])?;
        let g = cell_geometry(&map, &m.cell_coords(0), Form::Mass, FloatFormat::FP64)?;
        Ok(kappa2(&g.at(0).j, 3))
    };
    targets
        .iter()
        .map(|&t| {
            let (mut lo, mut hi) = (-16.0f64, 0.0f64);
            if k(10f64.powf(hi))? > t || k(10f64.powf(lo))? < t {
                return config(format!("kappa_2 = {t} is outside the reachable range of the family"));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if k(10f64.powf(mid))? > t {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(10f64.powf(0.5 * (lo + hi)))
        })
        .collect()
}

/// Poisson geometry tensor error on the scaled, translated epsilon-tet,
/// normalized by `u(fmt)`, against `kappa_2(J)`.
pub fn geometry_sweep(eps: &[f64], fmt: FloatFormat) -> Result<ErrorReport> {
    let mut points = Vec::with_capacity(eps.len());
    for &e in eps {
        let m = epsilon_tet(e, true)?;
        let x = m.cell_coords(0);
        let map = GeometryMap::new(m.cell, &[])?;
        let exact = condition_numbers(&map, &x, Form::Poisson)?;
        let approx = cell_geometry(&map, &x, Form::Poisson, fmt)?;
        let g = &exact.exact.at(0).g;
        let gh = &approx.at(0).g;
        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                diff = diff.max((g[a][b] - gh[a][b]).abs());
                norm = norm.max(g[a][b].abs());
            }
        }
        points.push(SweepPoint {
            param: exact.max_kappa2(),
            p: None,
            n_q: None,
            kappa2: exact.max_kappa2(),
            kappa_k: exact.kappa_k,
            err: diff / (fmt.u() * norm),
            bound: None,
            flags: approx.flags,
        });
    }
    let mut report = ErrorReport {
        config: format!("u_g={fmt}"),
        form: Some(Form::Poisson),
        mode: None,
        normalizer: fmt.u(),
        points,
        fit: None,
        seed: 0,
    };
    if report.points.len() >= 4 && report.points.iter().all(|p| p.err > 0.0) {
        report.fit_against(|p| p.kappa2)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Kernel sweeps

/// Uniform `[-1, 1]` nodal coefficients for cell `c`, fixed by `seed`.
pub fn cell_coefficients(seed: u64, c: usize, n_phi: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..n_phi).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// A named precision assignment and engine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NamedConfig {
    pub name: &'static str,
    pub precisions: Precisions,
    pub engine: Engine,
}

impl NamedConfig {
    pub const FP64: NamedConfig = NamedConfig {
        name: "fp64",
        precisions: Precisions {
            u_p: FloatFormat::FP64,
            u_g: FloatFormat::FP64,
            u_q: FloatFormat::FP64,
            u_s: FloatFormat::FP64,
        },
        engine: Engine::Scalar,
    };
    pub const FP32: NamedConfig = NamedConfig {
        name: "fp32",
        precisions: Precisions {
            u_p: FloatFormat::FP32,
            u_g: FloatFormat::FP32,
            u_q: FloatFormat::FP32,
            u_s: FloatFormat::FP32,
        },
        engine: Engine::Scalar,
    };
    /// bf16 storage with the matrix unit.
    pub const MIXED: NamedConfig = NamedConfig {
        name: "mixed",
        precisions: Precisions {
            u_p: FloatFormat::FP32,
            u_g: FloatFormat::FP32,
            u_q: FloatFormat::FP32,
            u_s: FloatFormat::BF16,
        },
        engine: Engine::Matrix,
    };
    pub const FP16: NamedConfig = NamedConfig {
        name: "fp16",
        precisions: Precisions {
            u_p: FloatFormat::FP16,
            u_g: FloatFormat::FP32,
            u_q: FloatFormat::FP16,
            u_s: FloatFormat::FP16,
        },
        engine: Engine::Scalar,
    };
    /// fp16 accumulation only.
    pub const FP16Q: NamedConfig = NamedConfig {
        name: "fp16q",
        precisions: Precisions {
            u_p: FloatFormat::FP32,
            u_g: FloatFormat::FP32,
            u_q: FloatFormat::FP16,
            u_s: FloatFormat::FP32,
        },
        engine: Engine::Scalar,
    };
    pub const BF16: NamedConfig = NamedConfig {
        name: "bf16",
        precisions: Precisions {
            u_p: FloatFormat::BF16,
            u_g: FloatFormat::BF16,
            u_q: FloatFormat::BF16,
            u_s: FloatFormat::BF16,
        },
        engine: Engine::Scalar,
    };

    pub const ALL: [NamedConfig; 6] = [
        NamedConfig::FP64,
        NamedConfig::FP32,
        NamedConfig::MIXED,
        NamedConfig::FP16,
        NamedConfig::FP16Q,
        NamedConfig::BF16,
    ];

    pub fn by_name(name: &str) -> Result<NamedConfig> {
        NamedConfig::ALL
            .into_iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("unknown config {name:?}")))
    }

    pub fn kernel(&self, form: Form, mode: Mode) -> Result<KernelConfig> {
        KernelConfig::new(form, mode, self.precisions, self.engine)
    }
}

/// Which unit roundoff divides the measured error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalize {
    Accumulate,
    Storage,
}

/// Per-cell relative errors of `plan` against its binary64 reference.
pub fn cell_errors(plan: &KernelPlan, mesh: &Mesh, cells: &[usize], seed: u64) -> Result<Vec<f64>> {
    let reference = plan.reference()?;
    let z = Coefficient::default();
    let chunk = plan.config.n_batch.max(1);
    let groups: Vec<&[usize]> = cells.chunks(chunk).collect();
    let per_group: Result<Vec<Vec<f64>>> = groups
        .par_iter()
        .map(|group| {
            let coords: Vec<Vec<f64>> = group.iter().map(|&c| mesh.cell_coords(c)).collect();
            let xr: Vec<&[f64]> = coords.iter().map(|v| v.as_slice()).collect();
            let (got, want): (Vec<LocalTensor>, Vec<LocalTensor>) = match plan.config.mode {
                Mode::Bilinear => (
                    xr.iter().map(|x| plan.bilinear(x, &z)).collect::<Result<_>>()?,
                    xr.iter().map(|x| reference.bilinear(x, &z)).collect::<Result<_>>()?,
                ),
                Mode::Action => {
                    let ws: Vec<Vec<f64>> = group.iter().map(|&c| cell_coefficients(seed, c, plan.n_phi())).collect();
                    let wr: Vec<&[f64]> = ws.iter().map(|v| v.as_slice()).collect();
                    (plan.action(&xr, &wr, &z)?, reference.action(&xr, &wr, &z)?)
                }
            };
            Ok(got.iter().zip(&want).map(|(g, w)| g.relative_error(w)).collect())
        })
        .collect();
    Ok(per_group?.into_iter().flatten().collect())
}

/// Max-over-cells normalized error for each degree in `ps`.
#[allow(clippy::too_many_arguments)]
pub fn degree_sweep(
    form: Form,
    mode: Mode,
    mesh: &Mesh,
    ps: &[usize],
    config: NamedConfig,
    fe_eval: Option<FeEval>,
    normalize: Normalize,
    seed: u64,
) -> Result<ErrorReport> {
    let cells: Vec<usize> = (0..mesh.n_cells()).collect();
    let mut kcfg = config.kernel(form, mode)?;
    if let Some(f) = fe_eval {
        kcfg = kcfg.with_fe_eval(f);
    }
    let u = match normalize {
        Normalize::Accumulate => kcfg.precisions.u_q.u(),
        Normalize::Storage => kcfg.precisions.u_s.u(),
    };
    let map_geo = |p: usize| -> Result<(f64, f64)> {
        let plan = KernelPlan::new(mesh.cell, p.max(1), KernelConfig::reference(form, Mode::Bilinear))?;
        let mut k2 = 0.0f64;
        let mut kk = 0.0f64;
        for &c in &cells {
            let d = condition_numbers(&plan.map, &mesh.cell_coords(c), form)?;
            k2 = k2.max(d.max_kappa2());
            kk = kk.max(d.kappa_k);
        }
        Ok((k2, kk))
    };
    let mut points = Vec::with_capacity(ps.len());
    for &p in ps {
        let plan = KernelPlan::new(mesh.cell, p, kcfg)?;
        let errs = cell_errors(&plan, mesh, &cells, seed)?;
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        let (k2, kk) = map_geo(p)?;
        points.push(SweepPoint {
            param: p as f64,
            p: Some(p),
            n_q: Some(plan.n_q()),
            kappa2: k2,
            kappa_k: kk,
            err: worst / u,
            bound: None,
            flags: plan.b.flags,
        });
    }
    Ok(ErrorReport {
        config: config.name.to_string(),
        form: Some(form),
        mode: Some(mode),
        normalizer: u,
        points,
        fit: None,
        seed,
    })
}

/// Accumulation-only sweep: error normalized by `u_q` and fitted against `n_q`.
pub fn nq_sweep(form: Form, mode: Mode, mesh: &Mesh, ps: &[usize], config: NamedConfig, seed: u64) -> Result<ErrorReport> {
    let mut r = degree_sweep(form, mode, mesh, ps, config, None, Normalize::Accumulate, seed)?;
    for pt in &mut r.points {
        pt.param = pt.n_q.unwrap_or(0) as f64;
    }
    if r.points.len() >= 4 {
        r.fit_against(|p| p.n_q.unwrap_or(0) as f64)?;
    }
    Ok(r)
}

/// Mixed (bf16 storage, matrix unit) against fp16, both normalized by `u_s`.
pub fn precision_comparison(form: Form, mode: Mode, mesh: &Mesh, ps: &[usize], seed: u64) -> Result<[ErrorReport; 2]> {
    Ok([
        degree_sweep(form, mode, mesh, ps, NamedConfig::MIXED, None, Normalize::Storage, seed)?,
        degree_sweep(form, mode, mesh, ps, NamedConfig::FP16, None, Normalize::Storage, seed)?,
    ])
}

// ---------------------------------------------------------------------------
// Bound checks

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheckRow {
    pub config: String,
    pub form: Form,
    pub mode: Mode,
    pub cell: usize,
    pub observed: f64,
    pub bound: Option<f64>,
    /// Largest of the accumulate, basis, geometry and cast terms.
    pub dominant: &'static str,
    pub pass: bool,
}

impl BoundCheckRow {
    pub fn ratio(&self) -> Option<f64> {
        self.bound.map(|b| self.observed / b)
    }
}

pub const TERM_NAMES: [&str; 4] = ["q", "p", "g", "cast"];

/// Observed relative error against the predicted bound on each listed cell.
#[allow(clippy::too_many_arguments)]
pub fn bound_check(
    mesh: &Mesh,
    cells: &[usize],
    p: usize,
    configs: &[NamedConfig],
    forms: &[Form],
    modes: &[Mode],
    slack: f64,
    seed: u64,
) -> Result<Vec<BoundCheckRow>> {
    let mut rows = Vec::new();
    let z = Coefficient::default();
    for &form in forms {
        for &mode in modes {
            for nc in configs {
                let plan = KernelPlan::new(mesh.cell, p, nc.kernel(form, mode)?)?;
                let ctx = BoundsContext::new(&plan)?;
                let out: Result<Vec<BoundCheckRow>> = cells
                    .par_iter()
                    .map(|&c| {
                        let x = mesh.cell_coords(c);
                        let w = cell_coefficients(seed, c, plan.n_phi());
                        let got = plan.run(&x, Some(&w), &z)?;
                        let want = ctx.exact.run(&x, Some(&w), &z)?;
                        let report = kernel_bounds(&ctx, &x, Some(&w), &z)?;
                        let observed = got.relative_error(&want);
                        let terms = report.terms(&nc.precisions);
                        let dominant = TERM_NAMES[(0..4).fold(0, |b, i| if terms[i] > terms[b] { i } else { b })];
                        let pass = match report.relative {
                            Some(b) => observed <= slack * b,
                            None => observed == 0.0,
                        };
                        Ok(BoundCheckRow {
                            config: nc.name.to_string(),
                            form,
                            mode,
                            cell: c,
                            observed,
                            bound: report.relative,
                            dominant,
                            pass,
                        })
                    })
                    .collect();
                rows.extend(out?);
            }
        }
    }
    Ok(rows)
}

/// `n` distinct cell indices drawn with `seed` (all cells if `n` exceeds the count).
pub fn random_cells(mesh: &Mesh, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..mesh.n_cells()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx.truncate(n.min(mesh.n_cells()));
    idx.sort_unstable();
    idx
}

pub fn reference_for(cell: ReferenceCell) -> Mesh {
    Mesh::reference(cell)
}
