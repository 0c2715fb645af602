//! Emulated multiply-add units: a tiled matrix unit, a paired-lane vector
//! unit, and a plain scalar loop. All three accumulate each output in the
//! same order (depth index ascending, every product and sum rounded to the
//! accumulate format), so they agree bit for bit unless the matrix unit's
//! output flush fires.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::softfloat::{dispatch, Flags, FloatFormat, Rounding, SubnormalPolicy, WithRounding};

pub const TILE_M: usize = 16;
pub const TILE_N: usize = 16;
pub const TILE_K: usize = 32;
pub const VECTOR_IN: usize = 32;
pub const VECTOR_OUT: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Scalar,
    Vector,
    Matrix,
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Scalar => "scalar",
            Engine::Vector => "vector",
            Engine::Matrix => "matrix",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatmulUnitSpec {
    pub input: FloatFormat,
    pub accumulate: FloatFormat,
    pub output_subnormals: SubnormalPolicy,
}

impl Default for MatmulUnitSpec {
    fn default() -> Self {
        MatmulUnitSpec {
            input: FloatFormat::BF16,
            accumulate: FloatFormat::FP32,
            output_subnormals: SubnormalPolicy::FlushToZero,
        }
    }
}

impl MatmulUnitSpec {
    pub fn new(input: FloatFormat, accumulate: FloatFormat) -> Result<MatmulUnitSpec> {
        if !accumulate.finer_than(&input) {
            return Err(Error::Config(format!(
                "accumulate format {accumulate} must be more precise than input format {input}"
            )));
        }
        Ok(MatmulUnitSpec {
            input,
            accumulate,
            output_subnormals: SubnormalPolicy::FlushToZero,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VectorUnitSpec {
    pub input: FloatFormat,
    pub accumulate: FloatFormat,
}

impl Default for VectorUnitSpec {
    fn default() -> Self {
        VectorUnitSpec {
            input: FloatFormat::BF16,
            accumulate: FloatFormat::FP32,
        }
    }
}

/// Row-major matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Result<MatRef<'a>> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer of length {} is not {rows}x{cols}",
                data.len()
            )));
        }
        Ok(MatRef { data, rows, cols })
    }
}

/// `c += a * b` for one output, depth ascending.
#[inline(always)]
fn dot_into<R: Rounding, F: Rounding>(r: R, f: F, c: f64, a: &[f64], b: &[f64], flags: &mut Flags) -> f64 {
    let mut c = c;
    for (x, y) in a.iter().zip(b) {
        let p = r.mul(*x, *y, flags);
        c = f.add(c, p, flags);
    }
    c
}

/// Four independent output chains sharing one row of `a`.
#[inline(always)]
fn dot4_into<R: Rounding>(r: R, c: [f64; 4], a: &[f64], b: [&[f64]; 4], flags: &mut Flags) -> [f64; 4] {
    let [mut c0, mut c1, mut c2, mut c3] = c;
    let n = a.len();
    let (b0, b1, b2, b3) = (&b[0][..n], &b[1][..n], &b[2][..n], &b[3][..n]);
    for k in 0..n {
        let x = a[k];
        c0 = r.madd(c0, x, b0[k], flags);
        c1 = r.madd(c1, x, b1[k], flags);
        c2 = r.madd(c2, x, b2[k], flags);
        c3 = r.madd(c3, x, b3[k], flags);
    }
    [c0, c1, c2, c3]
}

/// `C += A B^T` on the scalar path: `a` is `m x k`, `bt` is `n x k`, `c` is `m x n`.
pub fn matmul_nt_with<R: Rounding>(
    r: R,
    a: &[f64],
    bt: &[f64],
    m: usize,
    n: usize,
    k: usize,
    c: &mut [f64],
    flags: &mut Flags,
) {
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        let ci = &mut c[i * n..(i + 1) * n];
        let mut j = 0;
        while j + 4 <= n {
            let b = [
                &bt[j * k..(j + 1) * k],
                &bt[(j + 1) * k..(j + 2) * k],
                &bt[(j + 2) * k..(j + 3) * k],
                &bt[(j + 3) * k..(j + 4) * k],
            ];
            let out = dot4_into(r, [ci[j], ci[j + 1], ci[j + 2], ci[j + 3]], ai, b, flags);
            ci[j..j + 4].copy_from_slice(&out);
            j += 4;
        }
        for jj in j..n {
            ci[jj] = dot_into(r, r, ci[jj], ai, &bt[jj * k..(jj + 1) * k], flags);
        }
    }
}

/// One tile step `C += A B` on `M x K` by `K x N` operands stored as `a`
/// (`rows x depth`) and `bt` (`cols x depth`). Entries beyond the given
/// extents are treated as zero padding. Sums use `f`, which may flush.
#[allow(clippy::too_many_arguments)]
#[inline]
fn tile_step<R: Rounding, F: Rounding>(
    r: R,
    f: F,
    a: &[f64],
    bt: &[f64],
    lda: usize,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    depth: std::ops::Range<usize>,
    c: &mut [f64],
    ldc: usize,
    flags: &mut Flags,
) {
    for i in rows {
        let ai = &a[i * lda + depth.start..i * lda + depth.end];
        for j in cols.clone() {
            let bj = &bt[j * lda + depth.start..j * lda + depth.end];
            let cij = &mut c[i * ldc + j];
            *cij = dot_into(r, f, *cij, ai, bj, flags);
        }
    }
}

/// `C += A B^T` on the matrix unit: 16 x 16 output tiles, depth in 32-wide
/// steps, outputs flushed to zero when subnormal.
#[allow(clippy::too_many_arguments)]
pub fn matmul_nt_tiles_with<R: Rounding, F: Rounding>(
    r: R,
    f: F,
    a: &[f64],
    bt: &[f64],
    m: usize,
    n: usize,
    k: usize,
    c: &mut [f64],
    flags: &mut Flags,
) {
    for i0 in (0..m).step_by(TILE_M) {
        for j0 in (0..n).step_by(TILE_N) {
            for k0 in (0..k).step_by(TILE_K) {
                tile_step(
                    r,
                    f,
                    a,
                    bt,
                    k,
                    i0..(i0 + TILE_M).min(m),
                    j0..(j0 + TILE_N).min(n),
                    k0..(k0 + TILE_K).min(k),
                    c,
                    n,
                    flags,
                );
            }
        }
    }
}

/// `c_i += a_{2i} b_{2i} + a_{2i+1} b_{2i+1}` for 16 lanes, even term first.
pub fn vector_mdot_with<R: Rounding>(r: R, c: &mut [f64], a: &[f64], b: &[f64], flags: &mut Flags) -> Result<()> {
    if c.len() != VECTOR_OUT || a.len() != VECTOR_IN || b.len() != VECTOR_IN {
        return Err(Error::Shape(format!(
            "vector unit expects {VECTOR_OUT} outputs and {VECTOR_IN} inputs, got {}, {}, {}",
            c.len(),
            a.len(),
            b.len()
        )));
    }
    for (i, ci) in c.iter_mut().enumerate() {
        let t = r.madd(*ci, a[2 * i], b[2 * i], flags);
        *ci = r.madd(t, a[2 * i + 1], b[2 * i + 1], flags);
    }
    Ok(())
}

/// `C += A B^T` on the vector unit: each lane owns one output of a row and
/// consumes two depth entries per step; an odd tail is zero padded.
pub fn matmul_nt_vector_with<R: Rounding>(
    r: R,
    a: &[f64],
    bt: &[f64],
    m: usize,
    n: usize,
    k: usize,
    c: &mut [f64],
    flags: &mut Flags,
) {
    let mut lane_a = [0.0f64; VECTOR_IN];
    let mut lane_b = [0.0f64; VECTOR_IN];
    for i in 0..m {
        for j0 in (0..n).step_by(VECTOR_OUT) {
            let lanes = (n - j0).min(VECTOR_OUT);
            let mut acc = [0.0f64; VECTOR_OUT];
            acc[..lanes].copy_from_slice(&c[i * n + j0..i * n + j0 + lanes]);
            for k0 in (0..k).step_by(2) {
                for l in 0..VECTOR_OUT {
                    for t in 0..2 {
                        let kk = k0 + t;
                        let live = l < lanes && kk < k;
                        lane_a[2 * l + t] = if live { a[i * k + kk] } else { 0.0 };
                        lane_b[2 * l + t] = if live { bt[(j0 + l) * k + kk] } else { 0.0 };
                    }
                }
                // Widths are fixed above, so the shape check cannot fail.
                let _ = vector_mdot_with(r, &mut acc, &lane_a, &lane_b, flags);
            }
            c[i * n + j0..i * n + j0 + lanes].copy_from_slice(&acc[..lanes]);
        }
    }
}

struct Blocked<'a> {
    a: MatRef<'a>,
    bt: MatRef<'a>,
    c: &'a mut [f64],
    engine: Engine,
    flags: &'a mut Flags,
}

impl WithRounding for Blocked<'_> {
    type Output = ();
    fn run<R: Rounding>(self, r: R) {
        let (m, k, n) = (self.a.rows, self.a.cols, self.bt.rows);
        match self.engine {
            Engine::Scalar => matmul_nt_with(r, self.a.data, self.bt.data, m, n, k, self.c, self.flags),
            Engine::Vector => matmul_nt_vector_with(r, self.a.data, self.bt.data, m, n, k, self.c, self.flags),
            Engine::Matrix => {
                struct Flush<'b, R: Rounding>(R, Blocked<'b>);
                impl<R: Rounding> WithRounding for Flush<'_, R> {
                    type Output = ();
                    fn run<F: Rounding>(self, f: F) {
                        let b = self.1;
                        let (m, k, n) = (b.a.rows, b.a.cols, b.bt.rows);
                        matmul_nt_tiles_with(self.0, f, b.a.data, b.bt.data, m, n, k, b.c, b.flags);
                    }
                }
                let fmt = r.format();
                dispatch(fmt, true, Flush(r, self));
            }
        }
    }
}

/// `C += A B^T` at accumulate precision `fmt_q` on the chosen engine.
/// Operands must already be rounded to the engine's input format.
pub fn blocked_matmul_nt(
    a: MatRef<'_>,
    bt: MatRef<'_>,
    c: &mut [f64],
    engine: Engine,
    fmt_q: FloatFormat,
    flags: &mut Flags,
) -> Result<()> {
    if a.cols != bt.cols || c.len() != a.rows * bt.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by ({}x{})^T into {} entries",
            a.rows,
            a.cols,
            bt.rows,
            bt.cols,
            c.len()
        )));
    }
    dispatch(
        fmt_q,
        false,
        Blocked {
            a,
            bt,
            c,
            engine,
            flags,
        },
    );
    Ok(())
}

/// `A B` for `a: m x k`, `b: k x n`, returning a fresh `m x n` result.
pub fn blocked_matmul(
    a: MatRef<'_>,
    b: MatRef<'_>,
    engine: Engine,
    fmt_q: FloatFormat,
    flags: &mut Flags,
) -> Result<Vec<f64>> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "inner dimensions differ: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let bt = transpose(b.data, b.rows, b.cols);
    let mut c = vec![0.0; a.rows * b.cols];
    blocked_matmul_nt(a, MatRef::new(&bt, b.cols, b.rows)?, &mut c, engine, fmt_q, flags)?;
    Ok(c)
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// One matrix-unit instruction on full tiles: `c` is `16 x 16`, `a` is
/// `16 x 32` and `b` is `32 x 16`, all row-major.
pub fn tile_fmma(c: &mut [f64], a: &[f64], b: &[f64], spec: &MatmulUnitSpec, flags: &mut Flags) -> Result<()> {
    if c.len() != TILE_M * TILE_N || a.len() != TILE_M * TILE_K || b.len() != TILE_K * TILE_N {
        return Err(Error::Shape(format!(
            "tile shapes must be 16x16, 16x32, 32x16; got {}, {}, {}",
            c.len(),
            a.len(),
            b.len()
        )));
    }
    let bt = transpose(b, TILE_K, TILE_N);
    struct Tile<'a> {
        c: &'a mut [f64],
        a: &'a [f64],
        bt: &'a [f64],
        ftz: bool,
        fmt: FloatFormat,
        flags: &'a mut Flags,
    }
    impl WithRounding for Tile<'_> {
        type Output = ();
        fn run<R: Rounding>(self, r: R) {
            struct Inner<'b, R: Rounding>(R, Tile<'b>);
            impl<R: Rounding> WithRounding for Inner<'_, R> {
                type Output = ();
                fn run<F: Rounding>(self, f: F) {
                    let t = self.1;
                    tile_step(self.0, f, t.a, t.bt, TILE_K, 0..TILE_M, 0..TILE_N, 0..TILE_K, t.c, TILE_N, t.flags);
                }
            }
            let (fmt, ftz) = (self.fmt, self.ftz);
            dispatch(fmt, ftz, Inner(r, self));
        }
    }
    let fmt = spec.accumulate;
    dispatch(
        fmt,
        false,
        Tile {
            c,
            a,
            bt: &bt,
            ftz: spec.output_subnormals == SubnormalPolicy::FlushToZero,
            fmt,
            flags,
        },
    );
    Ok(())
}

/// The vector-unit instruction at the spec's accumulate precision.
pub fn vector_mdot(c: &mut [f64], a: &[f64], b: &[f64], spec: &VectorUnitSpec, flags: &mut Flags) -> Result<()> {
    struct V<'a>(&'a mut [f64], &'a [f64], &'a [f64], &'a mut Flags);
    impl WithRounding for V<'_> {
        type Output = Result<()>;
        fn run<R: Rounding>(self, r: R) -> Result<()> {
            vector_mdot_with(r, self.0, self.1, self.2, self.3)
        }
    }
    dispatch(spec.accumulate, false, V(c, a, b, flags))
}
