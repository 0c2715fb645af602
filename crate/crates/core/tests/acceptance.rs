//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p mpfem --test acceptance`. Pass criterion numbers
//! as arguments to run a subset.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mpfem::assembly::assemble_matrix;
use mpfem::elements::{build_basis, ReferenceCell};
use mpfem::errorlab::{
    bound_check, degree_sweep, epsilon_for_kappa, geometry_sweep, nq_sweep, random_cells, NamedConfig, Normalize,
};
use mpfem::kernels::{Coefficient, Engine, FeEval, Form, KernelConfig, KernelPlan, LocalTensor, Mode, Precisions};
use mpfem::mesh::{build_dofmap, structured_box_mesh, structured_tet_mesh, Continuity, Jitter, Mesh};
use mpfem::softfloat::{FloatFormat, OpKind};
use mpfem::Flags;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{oracle, Layout};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> mpfem::Result<Outcome>;

const FORMS: [Form; 2] = [Form::Mass, Form::Poisson];
const MODES: [Mode; 2] = [Mode::Bilinear, Mode::Action];

fn within(t: Duration, limit: Duration) -> bool {
    t <= limit
}

// Cells of side 16 keep fp16 products of basis values and weights out of the
// subnormal range.
fn scaled_tets(n: [usize; 3], seed: u64) -> mpfem::Result<Mesh> {
    let e = [16.0 * n[0] as f64, 16.0 * n[1] as f64, 16.0 * n[2] as f64];
    structured_tet_mesh(n, e, Some(Jitter::new(seed)))
}

fn c1_softfloat() -> mpfem::Result<Outcome> {
    const PAIRS: usize = 1_000_000;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0usize;
    let mut first = String::new();
    let mut cases = 0usize;
    for fmt in FloatFormat::ALL {
        let l = Layout::of(fmt);
        for kind in OpKind::ALL {
            for i in 0..PAIRS {
                // Half the pairs span the full range, half stay near 1 where
                // additions actually interact.
                let (a, b) = if i % 2 == 0 {
                    (l.random(&mut rng), l.random(&mut rng))
                } else {
                    (l.random_moderate(&mut rng, 12), l.random_moderate(&mut rng, 12))
                };
                let mut f = Flags::NONE;
                let got = fmt.apply(a, b, kind, &mut f);
                let want = oracle(a, b, kind, l);
                if got.to_bits() != want.to_bits() {
                    mismatches += 1;
                    if first.is_empty() {
                        first = format!(" first: {fmt} {kind:?} {a:e} {b:e} got {got:e} want {want:e}");
                    }
                }
                cases += 1;
            }
        }
    }
    let t = start.elapsed();
    Ok(outcome(
        mismatches == 0 && within(t, Duration::from_secs(30)),
        format!("{cases} cases, {mismatches} mismatches, {:.1} s{first}", t.as_secs_f64()),
    ))
}

fn c2_geometry() -> mpfem::Result<Outcome> {
    let start = Instant::now();
    let targets: Vec<f64> = (0..13).map(|k| 10f64.powf(1.0 + 0.5 * k as f64)).collect();
    let eps = epsilon_for_kappa(&targets)?;
    let r = geometry_sweep(&eps, FloatFormat::FP32)?;
    let t = start.elapsed();
    let slope = r.fit.map(|f| f.slope).unwrap_or(f64::NAN);
    let e10 = r.points[0].err;
    Ok(outcome(
        (0.85..=1.15).contains(&slope) && e10 <= 10.0 && within(t, Duration::from_secs(5)),
        format!("slope {slope:.3}, error at kappa2=10 {e10:.3}, {:.2} s", t.as_secs_f64()),
    ))
}

fn c3_nq_growth() -> mpfem::Result<Outcome> {
    let start = Instant::now();
    let mesh = scaled_tets([5, 5, 4], 31)?;
    let ps: Vec<usize> = (2..=8).collect();
    let action = nq_sweep(Form::Mass, Mode::Action, &mesh, &ps, NamedConfig::FP16Q, 3)?;
    let bilinear = nq_sweep(Form::Mass, Mode::Bilinear, &mesh, &ps, NamedConfig::FP16Q, 3)?;
    let t = start.elapsed();
    let sa = action.fit.unwrap().slope;
    let sb = bilinear.fit.unwrap().slope;
    Ok(outcome(
        mesh.n_cells() >= 500 && (0.8..=1.1).contains(&sa) && (0.5..=1.0).contains(&sb) && within(t, Duration::from_secs(600)),
        format!(
            "{} cells, action slope {sa:.3}, bilinear slope {sb:.3}, {:.1} s",
            mesh.n_cells(),
            t.as_secs_f64()
        ),
    ))
}

fn c4_mixed_constancy() -> mpfem::Result<Outcome> {
    let hexes = structured_box_mesh([2, 2, 2], [2.0, 2.0, 2.0], Some(Jitter::new(41)))?;
    let tets = scaled_tets([2, 2, 2], 42)?;
    let mut worst_spread = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut notes = Vec::new();
    for (mesh, ps, name) in [(&hexes, 2..=6, "hex"), (&tets, 2..=8, "tet")] {
        let ps: Vec<usize> = ps.collect();
        for form in FORMS {
            for mode in MODES {
                let r = degree_sweep(form, mode, mesh, &ps, NamedConfig::MIXED, None, Normalize::Storage, 4)?;
                let spread = r.spread();
                worst_spread = worst_spread.max(spread);
                worst_abs = worst_abs.max(r.max_err());
                notes.push(format!("{name}/{}/{} {:.2}", form.name(), mode.name(), r.max_err()));
            }
        }
    }
    Ok(outcome(
        worst_spread <= 10.0 && worst_abs <= 10.0,
        format!("max spread {worst_spread:.2}, max error {worst_abs:.2} [{}]", notes.join(", ")),
    ))
}

fn c5_fp16_degradation() -> mpfem::Result<Outcome> {
    let tets = scaled_tets([2, 2, 2], 42)?;
    let ps: Vec<usize> = (2..=8).collect();
    let mixed = degree_sweep(Form::Mass, Mode::Bilinear, &tets, &ps, NamedConfig::MIXED, None, Normalize::Storage, 5)?;
    let fp16 = degree_sweep(Form::Mass, Mode::Bilinear, &tets, &ps, NamedConfig::FP16, None, Normalize::Storage, 5)?;
    let growth = fp16.at_p(8).unwrap().err / fp16.at_p(2).unwrap().err;
    let abs = |r: &mpfem::errorlab::ErrorReport| r.at_p(8).unwrap().err * r.normalizer;
    let ratio = abs(&fp16) / abs(&mixed);
    Ok(outcome(
        growth >= 5.0 && ratio >= 10.0,
        format!(
            "fp16 growth p=2..8 {growth:.2}x, fp16/mixed absolute error at p=8 {ratio:.1}x (fp16 {:.2e}, mixed {:.2e})",
            abs(&fp16),
            abs(&mixed)
        ),
    ))
}

fn c6_bound_dominance() -> mpfem::Result<Outcome> {
    let mesh = structured_tet_mesh([5, 5, 4], [1.0, 1.0, 1.0], Some(Jitter::new(61)))?;
    let cells = random_cells(&mesh, 100, 6);
    let rows = bound_check(&mesh, &cells, 2, &NamedConfig::ALL, &FORMS, &MODES, 1.0, 6)?;
    let fails: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
    let worst = rows.iter().filter_map(|r| r.ratio()).fold(0.0, f64::max);
    let mut detail = format!(
        "{} cases, {} violations, max observed/bound {worst:.3}",
        rows.len(),
        fails.len()
    );
    if let Some(r) = fails.first() {
        detail += &format!(" first: {} {:?} {:?} cell {}", r.config, r.form, r.mode, r.cell);
    }
    Ok(outcome(rows.len() == 100 * 6 * 4 && fails.is_empty(), detail))
}

fn c7_assembly() -> mpfem::Result<Outcome> {
    let mesh = structured_box_mesh([3, 3, 3], [1.0, 1.0, 1.0], Some(Jitter::new(71)))?;
    let basis = build_basis(ReferenceCell::hex(), 1)?;
    let cg = build_dofmap(&mesh, &basis, Continuity::Continuous)?;
    let dg = build_dofmap(&mesh, &basis, Continuity::Discontinuous)?;
    let m_k = cg.multiplicity.iter().copied().max().unwrap_or(0);
    let u_q = FloatFormat::FP32;
    let mut worst = 0.0f64;
    let mut dg_ok = true;
    for form in FORMS {
        let plan = KernelPlan::new(ReferenceCell::hex(), 1, NamedConfig::MIXED.kernel(form, Mode::Bilinear)?)?;
        let locals: Vec<LocalTensor> = (0..mesh.n_cells())
            .map(|c| plan.bilinear(&mesh.cell_coords(c), &Coefficient::default()))
            .collect::<mpfem::Result<_>>()?;
        let a = assemble_matrix(&locals, &cg, u_q)?;
        let n = cg.n_global;
        let mut exact = vec![0.0; n * n];
        let mut abs = vec![0.0; n * n];
        for (t, dofs) in locals.iter().zip(&cg.cells) {
            for (i, &gi) in dofs.iter().enumerate() {
                for (j, &gj) in dofs.iter().enumerate() {
                    exact[gi * n + gj] += t.get(i, j);
                    abs[gi * n + gj] += t.get(i, j).abs();
                }
            }
        }
        let dense = a.to_dense();
        for k in 0..n * n {
            if abs[k] > 0.0 {
                // Relative to the entry, or to its contributions where they cancel.
                let scale = exact[k].abs().max(abs[k] * u_q.u());
                worst = worst.max((dense[k] - exact[k]).abs() / scale / (m_k as f64 * u_q.u()));
            } else if dense[k] != 0.0 {
                worst = f64::INFINITY;
            }
        }
        let ad = assemble_matrix(&locals, &dg, u_q)?;
        for (t, dofs) in locals.iter().zip(&dg.cells) {
            for (i, &gi) in dofs.iter().enumerate() {
                for (j, &gj) in dofs.iter().enumerate() {
                    dg_ok &= ad.get(gi, gj).to_bits() == t.get(i, j).to_bits();
                }
            }
        }
    }
    Ok(outcome(
        worst <= 10.0 && dg_ok && m_k == 8,
        format!("m_K {m_k}, max entry error {worst:.3} m_K u_q, DG bit-identical: {dg_ok}"),
    ))
}

fn c8_kernel_oracles() -> mpfem::Result<Outcome> {
    let h = 0.5;
    let cube = structured_box_mesh([1, 1, 1], [h, h, h], None)?;
    let x = cube.cell_coords(0);
    let mass = mpfem::kernels::reference_kernel(ReferenceCell::hex(), 1, Form::Mass, Mode::Bilinear, &x, None, &Coefficient::default())?;
    let mut mass_err = 0.0f64;
    for i in 0..8 {
        for j in 0..8 {
            let shared = 3 - (i ^ j as usize).count_ones();
            let want = h * h * h * [1.0, 2.0, 4.0, 8.0][shared as usize] / 216.0;
            mass_err = mass_err.max((mass.get(i, j) - want).abs());
        }
    }
    let jittered = structured_box_mesh([2, 2, 2], [1.0, 1.0, 1.0], Some(Jitter::new(81)))?;
    let mut null = 0.0f64;
    for c in 0..jittered.n_cells() {
        let k = mpfem::kernels::reference_kernel(
            ReferenceCell::hex(),
            2,
            Form::Poisson,
            Mode::Bilinear,
            &jittered.cell_coords(c),
            None,
            &Coefficient::default(),
        )?;
        for i in 0..k.n_phi {
            null = null.max((0..k.n_phi).map(|j| k.get(i, j)).sum::<f64>().abs());
        }
    }
    let tets = structured_tet_mesh([2, 2, 2], [1.0, 1.0, 1.0], Some(Jitter::new(82)))?;
    let mut batch_ok = true;
    for form in FORMS {
        let cfg = NamedConfig::MIXED.kernel(form, Mode::Action)?;
        let batched = KernelPlan::new(ReferenceCell::tet(), 3, cfg.with_batch(16)?)?;
        let single = KernelPlan::new(ReferenceCell::tet(), 3, cfg.with_batch(1)?)?;
        let coords: Vec<Vec<f64>> = (0..tets.n_cells()).map(|c| tets.cell_coords(c)).collect();
        let ws: Vec<Vec<f64>> = (0..tets.n_cells())
            .map(|c| mpfem::errorlab::cell_coefficients(8, c, batched.n_phi()))
            .collect();
        let xr: Vec<&[f64]> = coords.iter().map(|v| v.as_slice()).collect();
        let wr: Vec<&[f64]> = ws.iter().map(|v| v.as_slice()).collect();
        let a = batched.action(&xr, &wr, &Coefficient::default())?;
        for (c, t) in a.iter().enumerate() {
            let b = single.action(&xr[c..c + 1], &wr[c..c + 1], &Coefficient::default())?;
            batch_ok &= t.values.iter().zip(&b[0].values).all(|(p, q)| p.to_bits() == q.to_bits());
        }
    }
    Ok(outcome(
        mass_err <= 1e-13 && null <= 1e-12 && batch_ok,
        format!("mass entry error {mass_err:.1e}, |K 1| {null:.1e}, batched action bit-identical: {batch_ok}"),
    ))
}

fn c9_engines() -> mpfem::Result<Outcome> {
    let mesh = structured_tet_mesh([4, 4, 4], [1.0, 1.0, 1.0], Some(Jitter::new(91)))?;
    let cells = random_cells(&mesh, 50, 9);
    let mut compared = 0usize;
    let mut differing = 0usize;
    for form in FORMS {
        for mode in MODES {
            for fe in [FeEval::Storage, FeEval::Working] {
                let tensors: Vec<Vec<LocalTensor>> = [Engine::Scalar, Engine::Vector, Engine::Matrix]
                    .into_iter()
                    .map(|e| {
                        let cfg = KernelConfig::new(form, mode, Precisions::mixed(), e)?.with_fe_eval(fe);
                        let plan = KernelPlan::new(ReferenceCell::tet(), 3, cfg)?;
                        cells
                            .iter()
                            .map(|&c| {
                                let w = mpfem::errorlab::cell_coefficients(9, c, plan.n_phi());
                                plan.run(&mesh.cell_coords(c), Some(&w), &Coefficient::default())
                            })
                            .collect()
                    })
                    .collect::<mpfem::Result<_>>()?;
                for k in 0..cells.len() {
                    compared += 1;
                    let bits = |t: &LocalTensor| t.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                    let s = bits(&tensors[0][k]);
                    if s != bits(&tensors[1][k]) || s != bits(&tensors[2][k]) {
                        differing += 1;
                    }
                }
            }
        }
    }
    Ok(outcome(
        differing == 0 && compared == 50 * 8,
        format!("{compared} cell comparisons across 3 engines, {differing} differ"),
    ))
}

fn c10_basis_bf16() -> mpfem::Result<Outcome> {
    const SAMPLES: usize = 10_000;
    let fmt = FloatFormat::BF16;
    let u = fmt.u();
    let r = 1.0;
    let mut worst_value = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut skipped = 0usize;
    for cell in [ReferenceCell::hex(), ReferenceCell::tet()] {
        for p in 1..=8 {
            let basis = build_basis(cell, p)?;
            let m = basis.m() as f64;
            let value_tol = 10.0 * (m * (r + 1.0) + 1.0) * u;
            let n = ((m - 1.0) * (r + 1.0)) as usize;
            let grad_gamma = 10.0 * mpfem::bounds::gamma(n, fmt)?;
            let mut rng = ChaCha8Rng::seed_from_u64(100 + p as u64);
            let pts = cell.random_points(SAMPLES, &mut rng);
            for k in 0..SAMPLES {
                let x = &pts[k * 3..k * 3 + 3];
                let i = rng.gen_range(0..basis.n_phi());
                let mut fl = Flags::NONE;
                let exact = basis.values_f64(x)[i];
                let got = basis.eval_with(fmt, i, x, &mut fl);
                if exact.abs() < fmt.x_min() {
                    skipped += 1;
                } else {
                    worst_value = worst_value.max((got - exact).abs() / exact.abs() / value_tol);
                }
                let s = rng.gen_range(0..3);
                let g_exact = basis.gradients_f64(x, s)[i];
                let g = basis.grad_with(fmt, i, x, s, &mut fl);
                let scale = basis.derivative_magnitude(i, x, s);
                let err = (g - g_exact).abs();
                if scale > 0.0 {
                    worst_grad = worst_grad.max(err / (grad_gamma * scale));
                } else if err > 0.0 {
                    worst_grad = f64::INFINITY;
                }
            }
        }
    }
    Ok(outcome(
        worst_value <= 1.0 && worst_grad <= 1.0,
        format!(
            "max value error {worst_value:.3} of tolerance, max gradient error {worst_grad:.3} of tolerance, {skipped} values below the normal range skipped"
        ),
    ))
}

const CHECKS: [(&str, Check); 10] = [
    ("softfloat conformance", c1_softfloat),
    ("geometry error law", c2_geometry),
    ("n_q growth", c3_nq_growth),
    ("mixed-precision constancy", c4_mixed_constancy),
    ("fp16 degradation", c5_fp16_degradation),
    ("bound dominance", c6_bound_dominance),
    ("assembly structure", c7_assembly),
    ("kernel oracles", c8_kernel_oracles),
    ("engine equivalence", c9_engines),
    ("bf16 basis evaluation", c10_basis_bf16),
];

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, check)) in CHECKS.iter().enumerate() {
        let id = k + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
