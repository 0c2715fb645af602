//! Scatter-add of local tensors into global coordinate-format tensors.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::kernels::LocalTensor;
use crate::mesh::DofMap;
use crate::softfloat::{Flags, FloatFormat};

/// Sorted, deduplicated coordinate-format matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CooMatrix {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
    pub flags: Flags,
}

impl CooMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.rows.partition_point(|&r| r < i);
        let hi = self.rows.partition_point(|&r| r <= i);
        match self.cols[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for k in 0..self.nnz() {
            d[self.rows[k] * self.n + self.cols[k]] = self.values[k];
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// One `row col value` line per stored entry.
    pub fn write_coo(&self, mut out: impl Write) -> Result<()> {
        for k in 0..self.nnz() {
            writeln!(out, "{} {} {:e}", self.rows[k], self.cols[k], self.values[k])?;
        }
        Ok(())
    }
}

fn check(locals: &[LocalTensor], dofmap: &DofMap) -> Result<()> {
    if locals.len() != dofmap.cells.len() {
        return Err(Error::Shape(format!(
            "{} local tensors for {} cells",
            locals.len(),
            dofmap.cells.len()
        )));
    }
    for (c, (t, dofs)) in locals.iter().zip(&dofmap.cells).enumerate() {
        if t.n_phi != dofs.len() {
            return Err(Error::Shape(format!(
                "cell {c}: local tensor has {} dofs, map has {}",
                t.n_phi,
                dofs.len()
            )));
        }
        if let Some(&g) = dofs.iter().find(|&&g| g >= dofmap.n_global) {
            return Err(Error::Shape(format!(
                "cell {c}: global index {g} out of range {}",
                dofmap.n_global
            )));
        }
    }
    Ok(())
}

/// `A^g = L D L^T` by scatter-add at `u_q`, cells in ascending order. The
/// first contribution to an entry is stored as is.
pub fn assemble_matrix(locals: &[LocalTensor], dofmap: &DofMap, u_q: FloatFormat) -> Result<CooMatrix> {
    check(locals, dofmap)?;
    let mut flags = Flags::NONE;
    let mut entries: HashMap<(usize, usize), f64> = HashMap::new();
    for (t, dofs) in locals.iter().zip(&dofmap.cells) {
        let n = t.n_phi;
        for (i, &gi) in dofs.iter().enumerate() {
            for (j, &gj) in dofs.iter().enumerate() {
                let v = t.values[i * n + j];
                entries
                    .entry((gi, gj))
                    .and_modify(|e| *e = u_q.add(*e, v, &mut flags))
                    .or_insert(v);
            }
        }
    }
    let mut keys: Vec<_> = entries.into_iter().collect();
    keys.sort_unstable_by_key(|&(k, _)| k);
    Ok(CooMatrix {
        n: dofmap.n_global,
        rows: keys.iter().map(|((r, _), _)| *r).collect(),
        cols: keys.iter().map(|((_, c), _)| *c).collect(),
        values: keys.iter().map(|(_, v)| *v).collect(),
        flags,
    })
}

/// `v^g = L b` by scatter-add at `u_q`.
pub fn assemble_vector(locals: &[LocalTensor], dofmap: &DofMap, u_q: FloatFormat) -> Result<(Vec<f64>, Flags)> {
    check(locals, dofmap)?;
    let mut flags = Flags::NONE;
    let mut v = vec![0.0; dofmap.n_global];
    let mut seen = vec![false; dofmap.n_global];
    for (t, dofs) in locals.iter().zip(&dofmap.cells) {
        for (i, &g) in dofs.iter().enumerate() {
            if seen[g] {
                v[g] = u_q.add(v[g], t.values[i], &mut flags);
            } else {
                v[g] = t.values[i];
                seen[g] = true;
            }
        }
    }
    Ok((v, flags))
}
