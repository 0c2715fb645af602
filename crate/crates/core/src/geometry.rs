//! Jacobians, determinants, inverses and geometry tensors at precision `u_g`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::elements::{build_basis, CellKind, LagrangeBasis, ReferenceCell};
use crate::error::{Error, Result};
use crate::softfloat::{dispatch, Flags, FloatFormat, Rounding, WithRounding};

pub type Mat = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Mass,
    Poisson,
}

impl Form {
    pub fn n_d(&self, dim: usize) -> usize {
        match self {
            Form::Mass => 1,
            Form::Poisson => dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Form::Mass => "mass",
            Form::Poisson => "poisson",
        }
    }
}

/// Geometry at one evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointGeometry {
    pub j: Mat,
    pub det: f64,
    pub abs_det: f64,
    pub jinv: Mat,
    /// Poisson tensor `|det| J^-1 J^-T` (upper triangle mirrored); `g[0][0]`
    /// holds `|det|` for the mass form.
    pub g: Mat,
}

/// Binary64 diagnostics at one evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointDiagnostics {
    pub kappa2: f64,
    pub kappa_k: f64,
    /// `|det| |J^-1| |J^-T|`.
    pub gtilde: Mat,
}

#[derive(Clone, Debug)]
pub struct GeometryData {
    pub dim: usize,
    pub form: Form,
    /// One entry for affine cells, one per quadrature point otherwise.
    pub points: Vec<PointGeometry>,
    pub flags: Flags,
    pub format: FloatFormat,
}

impl GeometryData {
    pub fn is_affine(&self) -> bool {
        self.points.len() == 1
    }

    #[inline]
    pub fn at(&self, q: usize) -> &PointGeometry {
        if self.points.len() == 1 {
            &self.points[0]
        } else {
            &self.points[q]
        }
    }
}

/// Degree-1 geometry basis and its gradients at the evaluation points.
#[derive(Clone, Debug)]
pub struct GeometryMap {
    pub cell: ReferenceCell,
    pub basis: LagrangeBasis,
    /// `x` points where J is needed; a single point for simplices.
    pub points: Vec<f64>,
}

impl GeometryMap {
    pub fn new(cell: ReferenceCell, quad_points: &[f64]) -> Result<GeometryMap> {
        let basis = build_basis(cell, 1)?;
        let points = match cell.kind {
            CellKind::Simplex => vec![0.0; cell.dim],
            CellKind::Box => quad_points.to_vec(),
        };
        Ok(GeometryMap { cell, basis, points })
    }

    pub fn n_points(&self) -> usize {
        self.points.len() / self.cell.dim
    }

    pub fn n_psi(&self) -> usize {
        self.basis.n_phi()
    }
}

/// `J_ij = sum_k rnd(x_i^k d_j psi_k)` with coordinates and gradients rounded first.
pub fn jacobian_with<R: Rounding>(
    r: R,
    geom: &LagrangeBasis,
    coords: &[f64],
    x: &[f64],
    flags: &mut Flags,
) -> Mat {
    let d = geom.dim();
    let n_psi = geom.n_phi();
    let mut j = [[0.0; 3]; 3];
    for col in 0..d {
        let mut dpsi = [0.0f64; 8];
        for (k, v) in dpsi.iter_mut().enumerate().take(n_psi) {
            *v = geom.grad_with(r, k, x, col, flags);
        }
        for (row, jrow) in j.iter_mut().enumerate().take(d) {
            let mut c = 0.0;
            for k in 0..n_psi {
                let xk = r.round(coords[k * d + row], flags);
                c = r.madd(c, xk, dpsi[k], flags);
            }
            jrow[col] = c;
        }
    }
    j
}

/// LU with partial pivoting; returns `(lu, perm, sign)` or a singular-cell error.
fn lu_with<R: Rounding>(r: R, a: &Mat, d: usize, flags: &mut Flags) -> Result<(Mat, [usize; 3], f64)> {
    let mut lu = *a;
    let mut perm = [0usize, 1, 2];
    let mut sign = 1.0;
    for k in 0..d {
        let p = (k..d)
            .max_by(|&x, &y| lu[x][k].abs().total_cmp(&lu[y][k].abs()))
            .unwrap_or(k);
        if lu[p][k] == 0.0 {
            return Err(Error::Singular(format!("zero pivot in column {k}")));
        }
        if p != k {
            lu.swap(p, k);
            perm.swap(p, k);
            sign = -sign;
        }
        for i in k + 1..d {
            let l = r.round(lu[i][k] / lu[k][k], flags);
            lu[i][k] = l;
            for jj in k + 1..d {
                let prod = r.mul(l, lu[k][jj], flags);
                lu[i][jj] = r.round(lu[i][jj] - prod, flags);
            }
        }
    }
    Ok((lu, perm, sign))
}

fn det_from_lu<R: Rounding>(r: R, lu: &Mat, sign: f64, d: usize, flags: &mut Flags) -> f64 {
    let mut det = lu[0][0];
    for k in 1..d {
        det = r.mul(det, lu[k][k], flags);
    }
    sign * det
}

fn inverse_from_lu<R: Rounding>(r: R, lu: &Mat, perm: &[usize; 3], d: usize, flags: &mut Flags) -> Mat {
    let mut inv = [[0.0; 3]; 3];
    for col in 0..d {
        let mut y = [0.0f64; 3];
        for i in 0..d {
            let mut v = if perm[i] == col { 1.0 } else { 0.0 };
            for k in 0..i {
                let prod = r.mul(lu[i][k], y[k], flags);
                v = r.round(v - prod, flags);
            }
            y[i] = v;
        }
        for i in (0..d).rev() {
            let mut v = y[i];
            for k in i + 1..d {
                let prod = r.mul(lu[i][k], y[k], flags);
                v = r.round(v - prod, flags);
            }
            y[i] = r.round(v / lu[i][i], flags);
        }
        for i in 0..d {
            inv[i][col] = y[i];
        }
    }
    inv
}

/// Signed determinant via LU at `u_g`.
pub fn det_lu(j: &Mat, d: usize, fmt: FloatFormat, flags: &mut Flags) -> Result<f64> {
    struct Det<'a>(&'a Mat, usize, &'a mut Flags);
    impl WithRounding for Det<'_> {
        type Output = Result<f64>;
        fn run<R: Rounding>(self, r: R) -> Result<f64> {
            let (lu, _, sign) = lu_with(r, self.0, self.1, self.2)?;
            Ok(det_from_lu(r, &lu, sign, self.1, self.2))
        }
    }
    dispatch(fmt, false, Det(j, d, flags))
}

/// `J^-1` via LU solves against unit vectors at `u_g`.
pub fn inverse_lu(j: &Mat, d: usize, fmt: FloatFormat, flags: &mut Flags) -> Result<Mat> {
    struct Inv<'a>(&'a Mat, usize, &'a mut Flags);
    impl WithRounding for Inv<'_> {
        type Output = Result<Mat>;
        fn run<R: Rounding>(self, r: R) -> Result<Mat> {
            let (lu, perm, _) = lu_with(r, self.0, self.1, self.2)?;
            Ok(inverse_from_lu(r, &lu, &perm, self.1, self.2))
        }
    }
    dispatch(fmt, false, Inv(j, d, flags))
}

fn point_geometry<R: Rounding>(r: R, j: Mat, d: usize, form: Form, flags: &mut Flags) -> Result<PointGeometry> {
    let (lu, perm, sign) = lu_with(r, &j, d, flags)?;
    let det = det_from_lu(r, &lu, sign, d, flags);
    let abs_det = det.abs();
    let jinv = inverse_from_lu(r, &lu, &perm, d, flags);
    let mut g = [[0.0; 3]; 3];
    match form {
        Form::Mass => g[0][0] = abs_det,
        Form::Poisson => {
            for a in 0..d {
                for b in a..d {
                    let mut dot = 0.0;
                    for k in 0..d {
                        dot = r.madd(dot, jinv[a][k], jinv[b][k], flags);
                    }
                    g[a][b] = r.mul(abs_det, dot, flags);
                    g[b][a] = g[a][b];
                }
            }
        }
    }
    Ok(PointGeometry {
        j,
        det,
        abs_det,
        jinv,
        g,
    })
}

/// Mass or Poisson geometry tensor from a Jacobian, at `u_g`.
pub fn geometry_tensor(j: &Mat, d: usize, form: Form, fmt: FloatFormat, flags: &mut Flags) -> Result<PointGeometry> {
    struct Run<'a>(&'a Mat, usize, Form, &'a mut Flags);
    impl WithRounding for Run<'_> {
        type Output = Result<PointGeometry>;
        fn run<R: Rounding>(self, r: R) -> Result<PointGeometry> {
            point_geometry(r, *self.0, self.1, self.2, self.3)
        }
    }
    dispatch(fmt, false, Run(j, d, form, flags))
}

struct CellRun<'a> {
    map: &'a GeometryMap,
    coords: &'a [f64],
    form: Form,
}

impl WithRounding for CellRun<'_> {
    type Output = Result<(Vec<PointGeometry>, Flags)>;
    fn run<R: Rounding>(self, r: R) -> Self::Output {
        let d = self.map.cell.dim;
        let mut flags = Flags::NONE;
        let mut out = Vec::with_capacity(self.map.n_points());
        for x in self.map.points.chunks(d) {
            let j = jacobian_with(r, &self.map.basis, self.coords, x, &mut flags);
            out.push(point_geometry(r, j, d, self.form, &mut flags)?);
        }
        Ok((out, flags))
    }
}

/// Full geometry of one cell at `u_g`.
pub fn cell_geometry(map: &GeometryMap, coords: &[f64], form: Form, fmt: FloatFormat) -> Result<GeometryData> {
    let (points, flags) = dispatch(fmt, false, CellRun { map, coords, form })?;
    Ok(GeometryData {
        dim: map.cell.dim,
        form,
        points,
        flags,
        format: fmt,
    })
}

/// `kappa_2(J)` in binary64 from the eigenvalues of `J^T J`; the smallest
/// singular value is recovered from `|det|` for stability.
pub fn kappa2(j: &Mat, d: usize) -> f64 {
    let m = to_na(j, d);
    let ev = (m.transpose() * m).symmetric_eigenvalues();
    let mut s: Vec<f64> = ev.iter().take(d).map(|v| v.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let det = match d {
        1 => j[0][0],
        2 => j[0][0] * j[1][1] - j[0][1] * j[1][0],
        _ => crate::mesh::det3(j),
    }
    .abs();
    let smin = match d {
        1 => s[0],
        2 => det / s[0],
        _ => det / (s[0] * s[1]),
    };
    s[0] / smin
}

fn to_na(j: &Mat, d: usize) -> Matrix3<f64> {
    let mut m = Matrix3::identity();
    for a in 0..d {
        for b in 0..d {
            m[(a, b)] = j[a][b];
        }
    }
    m
}

/// `kappa_inf(J) = ||J||_inf ||J^-1||_inf`, binary64.
pub fn kappa_inf(j: &Mat, d: usize) -> f64 {
    let inv = to_na(j, d).try_inverse().map(|m| {
        let mut o = [[0.0; 3]; 3];
        for a in 0..d {
            for b in 0..d {
                o[a][b] = m[(a, b)];
            }
        }
        o
    });
    match inv {
        Some(inv) => norm_inf(j, d) * norm_inf(&inv, d),
        None => f64::INFINITY,
    }
}

pub fn norm_inf(m: &Mat, d: usize) -> f64 {
    (0..d).map(|a| (0..d).map(|b| m[a][b].abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `kappa(K) = n_psi ||X||_inf / ||J||_inf` with `X` the `d x n_psi` vertex matrix.
pub fn kappa_k(coords: &[f64], d: usize, j: &Mat) -> f64 {
    let n_psi = coords.len() / d;
    let x_norm = (0..d)
        .map(|i| (0..n_psi).map(|k| coords[k * d + i].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    n_psi as f64 * x_norm / norm_inf(j, d)
}

/// `|det J| |J^-1| |J^-T|` entrywise, binary64.
pub fn gtilde(p: &PointGeometry, d: usize) -> Mat {
    let mut g = [[0.0; 3]; 3];
    for a in 0..d {
        for b in 0..d {
            g[a][b] = p.abs_det * (0..d).map(|k| p.jinv[a][k].abs() * p.jinv[b][k].abs()).sum::<f64>();
        }
    }
    g
}

/// Binary64 geometry and diagnostics of one cell.
#[derive(Clone, Debug)]
pub struct CellDiagnostics {
    pub exact: GeometryData,
    pub points: Vec<PointDiagnostics>,
    pub kappa_k: f64,
}

impl CellDiagnostics {
    pub fn at(&self, q: usize) -> &PointDiagnostics {
        if self.points.len() == 1 {
            &self.points[0]
        } else {
            &self.points[q]
        }
    }

    pub fn max_kappa2(&self) -> f64 {
        self.points.iter().map(|p| p.kappa2).fold(0.0, f64::max)
    }
}

pub fn condition_numbers(map: &GeometryMap, coords: &[f64], form: Form) -> Result<CellDiagnostics> {
    let exact = cell_geometry(map, coords, form, FloatFormat::FP64)?;
    let d = map.cell.dim;
    let points: Vec<PointDiagnostics> = exact
        .points
        .iter()
        .map(|p| PointDiagnostics {
            kappa2: kappa2(&p.j, d),
            kappa_k: kappa_k(coords, d, &p.j),
            gtilde: match form {
                Form::Mass => {
                    let mut g = [[0.0; 3]; 3];
                    g[0][0] = p.abs_det;
                    g
                }
                Form::Poisson => gtilde(p, d),
            },
        })
        .collect();
    let kappa_k = points.iter().map(|p| p.kappa_k).fold(0.0, f64::max);
    Ok(CellDiagnostics {
        exact,
        points,
        kappa_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{epsilon_tet, Mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const I3: Mat = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn tet_geometry(mesh: &Mesh, fmt: FloatFormat, form: Form) -> GeometryData {
        let map = GeometryMap::new(mesh.cell, &[]).unwrap();
        cell_geometry(&map, &mesh.cell_coords(0), form, fmt).unwrap()
    }

    #[test]
    fn reference_cells_have_identity_jacobian() {
        for cell in [ReferenceCell::tet(), ReferenceCell::hex()] {
            let mesh = Mesh::reference(cell);
            let map = GeometryMap::new(cell, &[0.5, 0.25, 0.75]).unwrap();
            for fmt in FloatFormat::ALL {
                let g = cell_geometry(&map, &mesh.cell_coords(0), Form::Poisson, fmt).unwrap();
                let p = g.at(0);
                assert_eq!(p.j, I3);
                assert_eq!(p.det, 1.0);
                assert_eq!(p.g, I3);
            }
            let g = cell_geometry(&map, &mesh.cell_coords(0), Form::Mass, FloatFormat::BF16).unwrap();
            assert_eq!(g.at(0).g[0][0], 1.0);
        }
    }

    #[test]
    fn diagonal_jacobian() {
        let j = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        let mut fl = Flags::NONE;
        let inv = inverse_lu(&j, 3, FloatFormat::FP16, &mut fl).unwrap();
        assert_eq!(inv, [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]]);
        let p = geometry_tensor(&j, 3, Form::Poisson, FloatFormat::FP32, &mut fl).unwrap();
        assert_eq!(p.g, [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]);
        assert_eq!(kappa2(&I3, 3), 1.0);
    }

    #[test]
    fn singular_is_an_error() {
        let j = [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]];
        let mut fl = Flags::NONE;
        assert!(matches!(det_lu(&j, 3, FloatFormat::FP64, &mut fl), Err(Error::Singular(_))));
    }

    #[test]
    fn epsilon_tet_jacobian_and_det() {
        let eps = 1e-3;
        let g = tet_geometry(&epsilon_tet(eps, false).unwrap(), FloatFormat::FP64, Form::Mass);
        assert_eq!(g.at(0).j, [[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [eps, 1.0, -1.0]]);
        assert!((g.at(0).det - eps).abs() < 1e-12);
        let k = kappa_inf(&g.at(0).j, 3);
        assert!((k / ((2.0 + eps) * (3.0 + eps) / eps) - 1.0).abs() < 1e-10);
        let s = tet_geometry(&epsilon_tet(eps, true).unwrap(), FloatFormat::FP64, Form::Mass);
        assert!((s.at(0).det / (eps * 3f64.powf(-1.5)) - 1.0).abs() < 1e-10);
        assert!((kappa_inf(&s.at(0).j, 3) / k - 1.0).abs() < 1e-10);
        let one = tet_geometry(&epsilon_tet(1.0, false).unwrap(), FloatFormat::FP64, Form::Mass);
        assert_eq!(one.at(0).det, 1.0);
    }

    fn jacobi_svd(j: &Mat) -> (f64, f64) {
        // One-sided Jacobi on the columns.
        let mut a = *j;
        for _ in 0..60 {
            for p in 0..3 {
                for q in p + 1..3 {
                    let alpha: f64 = (0..3).map(|i| a[i][p] * a[i][p]).sum();
                    let beta: f64 = (0..3).map(|i| a[i][q] * a[i][q]).sum();
                    let gamma: f64 = (0..3).map(|i| a[i][p] * a[i][q]).sum();
                    if gamma.abs() < 1e-300 {
                        continue;
                    }
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for row in a.iter_mut() {
                        let (x, y) = (row[p], row[q]);
                        row[p] = c * x - s * y;
                        row[q] = s * x + c * y;
                    }
                }
            }
        }
        let sv: Vec<f64> = (0..3).map(|k| (0..3).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt()).collect();
        (sv.iter().cloned().fold(0.0, f64::max), sv.iter().cloned().fold(f64::INFINITY, f64::min))
    }

    #[test]
    fn kappa2_matches_jacobi_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut j = [[0.0; 3]; 3];
            for row in j.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let (smax, smin) = jacobi_svd(&j);
            let k = kappa2(&j, 3);
            if smax / smin < 1e8 {
                assert!((k / (smax / smin) - 1.0).abs() < 1e-10, "{k} vs {}", smax / smin);
            }
        }
    }

    #[test]
    fn kappa2_scales_inversely_with_eps() {
        let k1 = kappa2(&tet_geometry(&epsilon_tet(1e-3, true).unwrap(), FloatFormat::FP64, Form::Mass).at(0).j, 3);
        let k2 = kappa2(&tet_geometry(&epsilon_tet(1e-5, true).unwrap(), FloatFormat::FP64, Form::Mass).at(0).j, 3);
        let slope = (k2 / k1).log10() / (1e-5f64 / 1e-3).log10();
        assert!((slope + 1.0).abs() < 0.01, "{slope}");
    }

    #[test]
    fn det_scaling_covariance() {
        let j = [[1.0, 0.3, -0.2], [0.1, 0.9, 0.4], [0.0, -0.5, 1.2]];
        let mut fl = Flags::NONE;
        let d0 = det_lu(&j, 3, FloatFormat::FP64, &mut fl).unwrap();
        let a = 1.7;
        let ja = j.map(|r| r.map(|v| v * a));
        let d1 = det_lu(&ja, 3, FloatFormat::FP64, &mut fl).unwrap();
        assert!((d1 / (a * a * a * d0) - 1.0).abs() < 1e-12);
    }
}
