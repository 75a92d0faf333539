//! Configuration, energies and output files.

pub mod config;
pub mod records;
pub mod vtk;

use crate::constitutive::MaterialModel;
use crate::fem::{CellGeometry, ShapeTable};
use crate::mesh::QuadMesh;

/// Elastic energy `(μ/2) ∫ g(φ) W(∇Φ, φ)`, 3x3 Gauss.
pub fn bulk_energy(mesh: &QuadMesh, airy: &[f64], phi: &[f64], material: &MaterialModel) -> f64 {
    let table = ShapeTable::gauss(3);
    let mut total = 0.0;
    for k in 0..mesh.n_active() {
        let geo = CellGeometry::new(mesh, k);
        let a = geo.gather(airy);
        let p = geo.gather(phi);
        let jac = geo.h * geo.h;
        for q in 0..table.rule.len() {
            let ph = table.value(q, &p);
            let w = material.energy_density(table.gradient(q, &a, geo.h), ph);
            total += table.rule.weights[q] * jac * material.degradation(ph) * w;
        }
    }
    0.5 * material.mu * total
}
