use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use mpfem::assembly::{assemble_matrix, assemble_vector};
use mpfem::bounds::{assembly_bounds, kernel_bounds, BoundsContext};
use mpfem::config::{CellName, MeshSpec, RunConfig};
use mpfem::elements::{basis_condition_numbers, build_basis, sample_points};
use mpfem::errorlab::{
    bound_check, cell_coefficients, cell_errors, epsilon_for_kappa, geometry_sweep, nq_sweep, precision_comparison,
    random_cells, read_csv, render_svg, with_thread_cap, write_csv, ErrorReport, NamedConfig, SweepPoint,
};
use mpfem::geometry::condition_numbers;
use mpfem::kernels::{Coefficient, Form, KernelPlan, LocalTensor, Mode};
use mpfem::mesh::{build_dofmap, Continuity, Mesh};
use mpfem::quadrature::rule_for;
use mpfem::{Error, FloatFormat};

const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "mpfem", version, about = "Mixed-precision finite element kernel error laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump a basis tabulation and its condition numbers as JSON.
    Basis(BasisArgs),
    /// Run one configuration on one mesh and report the error against binary64.
    Kernel(KernelArgs),
    /// Geometry tensor error on flattening tets, against kappa_2(J).
    SweepGeometry(GeometryArgs),
    /// Error growth with the number of quadrature points.
    SweepNq(NqArgs),
    /// Mixed against fp16 over polynomial degree, one CSV per form and mode.
    SweepDegree(DegreeArgs),
    /// Assemble a global matrix or vector and compare with binary64.
    Assemble(AssembleArgs),
    /// Compare observed errors with the a-priori bounds.
    CheckBounds(CheckArgs),
    /// Render sweep CSV files as an SVG line chart.
    Report(ReportArgs),
}

#[derive(Args)]
struct BasisArgs {
    #[arg(long, default_value = "tet")]
    cell: String,
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Random points added to the quadrature points for the condition numbers.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long)]
    config: PathBuf,
    /// Exit with status 3 if the normalized error exceeds this value.
    #[arg(long)]
    max_err: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GeometryArgs {
    #[arg(long, default_value = "fp32")]
    fmt: String,
    /// Range of the flattening parameter, `hi:lo`.
    #[arg(long, default_value = "1e-1:1e-7", conflicts_with = "kappa_decades")]
    eps_decades: String,
    /// Range of target kappa_2 values, `lo:hi`; eps is solved for each.
    #[arg(long)]
    kappa_decades: Option<String>,
    #[arg(long, default_value_t = 13)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, default_value = "tet")]
    cell: String,
    /// Cells per direction.
    #[arg(long, value_delimiter = ',', default_value = "2,2,2")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    extent: Vec<f64>,
    /// Vertex displacement as a fraction of the spacing.
    #[arg(long)]
    jitter: Option<f64>,
    /// Mesh JSON file; overrides the structured mesh options.
    #[arg(long)]
    mesh_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct NqArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[arg(long, default_value = "mass")]
    form: String,
    #[arg(long, default_value = "action")]
    mode: String,
    /// Named precision configuration.
    #[arg(long, default_value = "fp16q")]
    precision: String,
    /// Degrees, `lo:hi`.
    #[arg(long, default_value = "2:8")]
    p: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DegreeArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[arg(long, value_delimiter = ',', default_value = "mass,poisson")]
    forms: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "bilinear,action")]
    modes: Vec<String>,
    #[arg(long, default_value = "2:6")]
    p: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write an SVG next to each CSV.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct AssembleArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "continuous")]
    continuity: String,
    /// Write the assembled matrix (`row col value`) or vector (`row value`).
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[arg(long, default_value_t = 100)]
    cells: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, value_delimiter = ',', default_value = "fp64,fp32,mixed,fp16,fp16q,bf16")]
    configs: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "mass,poisson")]
    forms: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "bilinear,action")]
    modes: Vec<String>,
    /// Allowed ratio of observed error to bound.
    #[arg(long, default_value_t = 1.0)]
    slack: f64,
    /// Per-cell rows as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

/// Parses a lowercase enum name through its serde representation.
fn parse_name<T: DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(json!(s)).map_err(|_| bad(format!("unknown {what} {s:?}")))
}

fn parse_list<T: DeserializeOwned>(what: &str, items: &[String]) -> Result<Vec<T>> {
    items.iter().map(|s| parse_name(what, s)).collect()
}

fn parse_format(s: &str) -> Result<FloatFormat> {
    Ok(s.parse::<FloatFormat>()?)
}

fn parse_degrees(s: &str) -> Result<Vec<usize>> {
    let (lo, hi) = s.split_once(':').unwrap_or((s, s));
    let lo: usize = lo.trim().parse().map_err(|_| bad(format!("bad degree range {s:?}")))?;
    let hi: usize = hi.trim().parse().map_err(|_| bad(format!("bad degree range {s:?}")))?;
    if lo == 0 || hi < lo {
        return Err(bad(format!("bad degree range {s:?}")));
    }
    Ok((lo..=hi).collect())
}

/// `n` log-spaced values from `a` to `b` given as `a:b`.
fn parse_decades(s: &str, n: usize) -> Result<Vec<f64>> {
    let err = || bad(format!("bad range {s:?}, expected e.g. 1e-1:1e-7"));
    let (a, b) = s.split_once(':').ok_or_else(err)?;
    let a: f64 = a.trim().parse().map_err(|_| err())?;
    let b: f64 = b.trim().parse().map_err(|_| err())?;
    if !(a > 0.0 && b > 0.0) || n < 2 {
        return Err(err());
    }
    let (la, lb) = (a.log10(), b.log10());
    Ok((0..n).map(|k| 10f64.powf(la + (lb - la) * k as f64 / (n - 1) as f64)).collect())
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn build_mesh(a: &MeshArgs) -> Result<Mesh> {
    let cell: CellName = parse_name("cell", &a.cell)?;
    let spec = match &a.mesh_file {
        Some(path) => MeshSpec::File { path: path.clone() },
        None => {
            let n: [usize; 3] = a.n.clone().try_into().map_err(|_| bad("--n needs three values"))?;
            let extent: [f64; 3] = a.extent.clone().try_into().map_err(|_| bad("--extent needs three values"))?;
            MeshSpec::Structured {
                n,
                extent,
                jitter: a.jitter,
                jitter_seed: None,
            }
        }
    };
    Ok(spec.build(cell, a.seed, None)?)
}

fn load_config(path: &Path) -> Result<(RunConfig, Mesh)> {
    let cfg = RunConfig::load(path)?;
    let mesh = cfg.mesh.build(cfg.cell, cfg.seed, path.parent())?;
    Ok((cfg, mesh))
}

fn cell_w(mode: Mode, seed: u64, c: usize, n_phi: usize) -> Option<Vec<f64>> {
    match mode {
        Mode::Action => Some(cell_coefficients(seed, c, n_phi)),
        Mode::Bilinear => None,
    }
}

fn cmd_basis(a: BasisArgs) -> Result<ExitCode> {
    let cell: CellName = parse_name("cell", &a.cell)?;
    let basis = build_basis(cell.cell(), a.p)?;
    let rule = rule_for(cell.cell(), a.p, Form::Mass)?;
    let d = basis.dim();
    let samples = sample_points(cell.cell(), &rule, a.samples, a.seed);
    let cond = basis_condition_numbers(&basis, &samples)?;
    let points: Vec<&[f64]> = (0..rule.n_q()).map(|q| rule.point(q)).collect();
    let values: Vec<Vec<f64>> = points.iter().map(|x| basis.values_f64(x)).collect();
    let gradients: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|s| points.iter().map(|x| basis.gradients_f64(x, s)).collect())
        .collect();
    let nodes: Vec<&[f64]> = (0..basis.n_phi()).map(|i| basis.node(i)).collect();
    let doc = json!({
        "cell": cell,
        "p": a.p,
        "n_phi": basis.n_phi(),
        "m": basis.m(),
        "nodes": nodes,
        "quadrature": {"n_q": rule.n_q(), "points": points, "weights": rule.weights},
        "values": values,
        "gradients": gradients,
        "conditioning": cond,
    });
    let mut out = sink(&a.out)?;
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_kernel(a: KernelArgs) -> Result<ExitCode> {
    let (cfg, mesh) = load_config(&a.config)?;
    let plan = KernelPlan::new(mesh.cell, cfg.p, cfg.kernel()?)?;
    let ctx = BoundsContext::new(&plan)?;
    let cells: Vec<usize> = (0..mesh.n_cells()).collect();
    let errs = cell_errors(&plan, &mesh, &cells, cfg.seed)?;
    let z = Coefficient::default();
    let (mut k2, mut kk, mut bound) = (0.0f64, 0.0f64, Some(0.0f64));
    for &c in &cells {
        let x = mesh.cell_coords(c);
        let diag = condition_numbers(&plan.map, &x, cfg.form)?;
        k2 = k2.max(diag.max_kappa2());
        kk = kk.max(diag.kappa_k);
        let w = cell_w(cfg.mode, cfg.seed, c, plan.n_phi());
        let r = kernel_bounds(&ctx, &x, w.as_deref(), &z)?;
        bound = match (bound, r.relative) {
            (Some(b), Some(r)) => Some(b.max(r)),
            _ => None,
        };
    }
    let pr = cfg.precisions;
    let u = pr.u_q.u().max(pr.u_s.u());
    let err = errs.iter().cloned().fold(0.0, f64::max) / u;
    let name = NamedConfig::ALL
        .iter()
        .find(|n| n.precisions == pr && n.engine == cfg.engine)
        .map(|n| n.name.to_string())
        .unwrap_or_else(|| format!("{} {}", pr.label(), cfg.engine.name()));
    let report = ErrorReport {
        config: name,
        form: Some(cfg.form),
        mode: Some(cfg.mode),
        normalizer: u,
        points: vec![SweepPoint {
            param: cfg.p as f64,
            p: Some(cfg.p),
            n_q: Some(plan.n_q()),
            kappa2: k2,
            kappa_k: kk,
            err,
            bound,
            flags: plan.b.flags,
        }],
        fit: None,
        seed: cfg.seed,
    };
    let mut out = sink(&a.out)?;
    write_csv(&[&report], &mut out)?;
    out.flush()?;
    match a.max_err {
        Some(limit) if !(err <= limit) => {
            eprintln!("normalized error {err:e} exceeds {limit:e}");
            Ok(ExitCode::from(EXIT_CHECK))
        }
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn cmd_sweep_geometry(a: GeometryArgs) -> Result<ExitCode> {
    let fmt = parse_format(&a.fmt)?;
    let eps = match &a.kappa_decades {
        Some(k) => epsilon_for_kappa(&parse_decades(k, a.points)?)?,
        None => parse_decades(&a.eps_decades, a.points)?,
    };
    let report = geometry_sweep(&eps, fmt)?;
    if let Some(fit) = report.fit {
        eprintln!("slope {:.3} (residual {:.3} decades)", fit.slope, fit.residual);
    }
    let mut out = sink(&a.out)?;
    write_csv(&[&report], &mut out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep_nq(a: NqArgs) -> Result<ExitCode> {
    let mesh = build_mesh(&a.mesh)?;
    let form: Form = parse_name("form", &a.form)?;
    let mode: Mode = parse_name("mode", &a.mode)?;
    let nc = NamedConfig::by_name(&a.precision)?;
    let report = nq_sweep(form, mode, &mesh, &parse_degrees(&a.p)?, nc, a.mesh.seed)?;
    if let Some(fit) = report.fit {
        eprintln!("slope {:.3} against n_q", fit.slope);
    }
    let mut out = sink(&a.out)?;
    write_csv(&[&report], &mut out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep_degree(a: DegreeArgs) -> Result<ExitCode> {
    let mesh = build_mesh(&a.mesh)?;
    let forms: Vec<Form> = parse_list("form", &a.forms)?;
    let modes: Vec<Mode> = parse_list("mode", &a.modes)?;
    let ps = parse_degrees(&a.p)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for &form in &forms {
        for &mode in &modes {
            let reports = precision_comparison(form, mode, &mesh, &ps, a.mesh.seed)?;
            let stem = format!("{}-{}", form.name(), mode.name());
            let path = a.out_dir.join(format!("{stem}.csv"));
            let mut buf = Vec::new();
            write_csv(&[&reports[0], &reports[1]], &mut buf)?;
            std::fs::write(&path, &buf)?;
            if a.svg {
                let rows = read_csv(buf.as_slice())?;
                std::fs::write(a.out_dir.join(format!("{stem}.svg")), render_svg(&rows))?;
            }
            eprintln!(
                "{stem}: mixed max {:.3e} spread {:.2}, fp16 max {:.3e} -> {}",
                reports[0].max_err(),
                reports[0].spread(),
                reports[1].max_err(),
                path.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_assemble(a: AssembleArgs) -> Result<ExitCode> {
    let (cfg, mesh) = load_config(&a.config)?;
    let continuity: Continuity = parse_name("continuity", &a.continuity)?;
    let plan = KernelPlan::new(mesh.cell, cfg.p, cfg.kernel()?)?;
    let ctx = BoundsContext::new(&plan)?;
    let dofmap = build_dofmap(&mesh, &plan.basis, continuity)?;
    let z = Coefficient::default();
    let mut got: Vec<LocalTensor> = Vec::with_capacity(mesh.n_cells());
    let mut want: Vec<LocalTensor> = Vec::with_capacity(mesh.n_cells());
    let mut reports = Vec::with_capacity(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let x = mesh.cell_coords(c);
        let w = cell_w(cfg.mode, cfg.seed, c, plan.n_phi());
        got.push(plan.run(&x, w.as_deref(), &z)?);
        want.push(ctx.exact.run(&x, w.as_deref(), &z)?);
        reports.push(kernel_bounds(&ctx, &x, w.as_deref(), &z)?);
    }
    let local = got
        .iter()
        .zip(&want)
        .map(|(g, w)| g.relative_error(w))
        .fold(0.0, f64::max);
    let u_q = cfg.precisions.u_q;
    let (diff, norm, nnz) = match cfg.mode {
        Mode::Bilinear => {
            let ga = assemble_matrix(&got, &dofmap, u_q)?;
            let ge = assemble_matrix(&want, &dofmap, FloatFormat::FP64)?;
            if let Some(p) = &a.dump {
                ga.write_coo(BufWriter::new(File::create(p)?))?;
            }
            let diff = ga
                .to_dense()
                .iter()
                .zip(ge.to_dense())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            (diff, ge.max_abs(), ga.nnz())
        }
        Mode::Action => {
            let (va, _) = assemble_vector(&got, &dofmap, u_q)?;
            let (ve, _) = assemble_vector(&want, &dofmap, FloatFormat::FP64)?;
            if let Some(p) = &a.dump {
                let mut f = BufWriter::new(File::create(p)?);
                for (i, v) in va.iter().enumerate() {
                    writeln!(f, "{i} {v:e}")?;
                }
                f.flush()?;
            }
            let diff = va.iter().zip(&ve).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            (diff, ve.iter().fold(0.0f64, |m, v| m.max(v.abs())), va.len())
        }
    };
    let doc = json!({
        "cells": mesh.n_cells(),
        "n_global": dofmap.n_global,
        "m_k": dofmap.m_k,
        "stored": nnz,
        "local_rel_err": local,
        "global_rel_err": if norm > 0.0 { diff / norm } else { diff },
        "global_rel_bound": assembly_bounds(&reports, norm, dofmap.m_k, cfg.mode),
    });
    let mut out = sink(&a.out)?;
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_check_bounds(a: CheckArgs) -> Result<ExitCode> {
    let mesh = build_mesh(&a.mesh)?;
    let configs: Vec<NamedConfig> = a.configs.iter().map(|s| NamedConfig::by_name(s)).collect::<mpfem::Result<_>>()?;
    let forms: Vec<Form> = parse_list("form", &a.forms)?;
    let modes: Vec<Mode> = parse_list("mode", &a.modes)?;
    let cells = random_cells(&mesh, a.cells, a.mesh.seed);
    let rows = bound_check(&mesh, &cells, a.p, &configs, &forms, &modes, a.slack, a.mesh.seed)?;
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_path(path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let mut failures = 0;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{:<7} {:<8} {:<9} {:>6} {:>6} {:>10} dominant", "config", "form", "mode", "cells", "fail", "max ratio")?;
    for group in rows.chunk_by(|x, y| x.config == y.config && x.form == y.form && x.mode == y.mode) {
        let fail = group.iter().filter(|r| !r.pass).count();
        failures += fail;
        let worst = group.iter().filter_map(|r| r.ratio()).fold(0.0, f64::max);
        let mut tally = [0usize; 4];
        for r in group {
            if let Some(i) = mpfem::errorlab::TERM_NAMES.iter().position(|t| *t == r.dominant) {
                tally[i] += 1;
            }
        }
        let dom = (0..4).max_by_key(|&i| tally[i]).map(|i| mpfem::errorlab::TERM_NAMES[i]).unwrap_or("-");
        let r = &group[0];
        writeln!(
            out,
            "{:<7} {:<8} {:<9} {:>6} {:>6} {:>10.3e} {dom}",
            r.config,
            r.form.name(),
            r.mode.name(),
            group.len(),
            fail,
            worst
        )?;
    }
    writeln!(out, "{} of {} checks failed", failures, rows.len())?;
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_CHECK) })
}

fn cmd_report(a: ReportArgs) -> Result<ExitCode> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        rows.extend(read_csv(f)?);
    }
    let mut out = sink(&a.out)?;
    out.write_all(render_svg(&rows).as_bytes())?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Basis(a) => cmd_basis(a),
        Command::Kernel(a) => cmd_kernel(a),
        Command::SweepGeometry(a) => cmd_sweep_geometry(a),
        Command::SweepNq(a) => cmd_sweep_nq(a),
        Command::SweepDegree(a) => cmd_sweep_degree(a),
        Command::Assemble(a) => cmd_assemble(a),
        Command::CheckBounds(a) => cmd_check_bounds(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn exit_code_for(e: &anyhow::Error) -> ExitCode {
    let config = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(Error::Config(_) | Error::Json(_) | Error::Mesh(_) | Error::BoundInvalid(_))
        )
    });
    ExitCode::from(if config { EXIT_CONFIG } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_thread_cap(|| run(cli)) {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            exit_code_for(&e)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
