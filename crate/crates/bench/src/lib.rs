//! Shared fixtures for the benchmarks.

use mpfem::errorlab::{cell_coefficients, NamedConfig};
use mpfem::kernels::{Form, KernelPlan, Mode};
use mpfem::mesh::{structured_box_mesh, structured_tet_mesh, Jitter, Mesh};
use mpfem::elements::ReferenceCell;

/// Jittered unit-cube mesh of the given cell type with `n^3` boxes.
pub fn mesh(cell: ReferenceCell, n: usize) -> Mesh {
    let j = Some(Jitter::new(1));
    if cell == ReferenceCell::hex() {
        structured_box_mesh([n; 3], [1.0; 3], j).unwrap()
    } else {
        structured_tet_mesh([n; 3], [1.0; 3], j).unwrap()
    }
}

pub fn plan(cell: ReferenceCell, p: usize, form: Form, mode: Mode, config: NamedConfig) -> KernelPlan {
    KernelPlan::new(cell, p, config.kernel(form, mode).unwrap()).unwrap()
}

/// Cell coordinates and action coefficients for every cell of `mesh`.
pub fn cell_inputs(mesh: &Mesh, n_phi: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let coords = (0..mesh.n_cells()).map(|c| mesh.cell_coords(c)).collect();
    let ws = (0..mesh.n_cells()).map(|c| cell_coefficients(7, c, n_phi)).collect();
    (coords, ws)
}

/// `n` operands in `[-1, 1]`, in binary64.
pub fn operands(n: usize, seed: u64) -> Vec<f64> {
    cell_coefficients(seed, 0, n)
}
