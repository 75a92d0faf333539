//! Q1 finite elements on quadtree meshes.

pub mod dofs;
pub mod quadrature;
pub mod sparse;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use dofs::DofMap;
pub use quadrature::{shape_gradients, shape_values, QuadratureRule, ShapeTable};
pub use sparse::{solve, SolveError, SparseSystem, SparsityPattern};

use crate::mesh::{CellId, QuadMesh, VertexId};

/// Geometry of one active cell as seen by an element kernel.
#[derive(Clone, Copy, Debug)]
pub struct CellGeometry {
    pub id: CellId,
    /// Position in the mesh's active-cell list.
    pub ordinal: usize,
    pub origin: [f64; 2],
    pub h: f64,
    pub vertices: [VertexId; 4],
}

impl CellGeometry {
    pub fn new(mesh: &QuadMesh, ordinal: usize) -> Self {
        let id = mesh.active_cells()[ordinal];
        let cell = mesh.cell(id);
        CellGeometry { id, ordinal, origin: cell.key.origin(), h: cell.size(), vertices: cell.vertices }
    }

    /// Corner values of a nodal field.
    pub fn gather(&self, nodal: &[f64]) -> [f64; 4] {
        self.vertices.map(|v| nodal[v])
    }

    /// Physical coordinates of a reference point.
    pub fn map(&self, p: [f64; 2]) -> [f64; 2] {
        [self.origin[0] + self.h * p[0], self.origin[1] + self.h * p[1]]
    }
}

pub type LocalMatrix = [[f64; 4]; 4];

/// Element matrix and load vector.
#[derive(Clone, Copy, Debug, Default)]
pub struct LocalSystem {
    pub matrix: LocalMatrix,
    pub rhs: [f64; 4],
}

/// Dirichlet values by DOF index.
pub type Dirichlet = BTreeMap<usize, f64>;

/// Assembles the condensed global system without boundary conditions.
/// Element kernels run in parallel; the scatter is sequential in cell
/// order, so the result does not depend on the thread count.
pub fn assemble_unconstrained<K>(mesh: &QuadMesh, dofs: &DofMap, kernel: K) -> SparseSystem
where
    K: Fn(&CellGeometry) -> LocalSystem + Sync,
{
    let locals: Vec<LocalSystem> =
        (0..mesh.n_active()).into_par_iter().map(|k| kernel(&CellGeometry::new(mesh, k))).collect();
    let mut sys = SparseSystem::zeros(dofs.pattern().clone());
    for (k, local) in locals.iter().enumerate() {
        let verts = mesh.cell(mesh.active_cells()[k]).vertices;
        for a in 0..4 {
            let ea = dofs.expansion(verts[a]);
            for &(da, wa) in ea {
                sys.rhs[da] += wa * local.rhs[a];
                for b in 0..4 {
                    let kab = local.matrix[a][b];
                    if kab == 0.0 {
                        continue;
                    }
                    for &(db, wb) in dofs.expansion(verts[b]) {
                        sys.add(da, db, wa * wb * kab);
                    }
                }
            }
        }
    }
    sys
}

/// Assembles the condensed system and imposes `dirichlet` by symmetric
/// elimination.
pub fn assemble<K>(mesh: &QuadMesh, dofs: &DofMap, dirichlet: &Dirichlet, kernel: K) -> SparseSystem
where
    K: Fn(&CellGeometry) -> LocalSystem + Sync,
{
    let mut sys = assemble_unconstrained(mesh, dofs, kernel);
    sys.eliminate_dirichlet(dirichlet);
    sys
}

/// Weighted Laplacian element matrix `∫ a ∇N_a·∇N_b` with the coefficient
/// given at the quadrature points of `table`. On square cells the size
/// cancels.
pub fn diffusion_matrix(table: &ShapeTable, coeff: &[f64]) -> LocalMatrix {
    let mut m = [[0.0; 4]; 4];
    for q in 0..table.rule.len() {
        let g = &table.gradients[q];
        let s = coeff[q] * table.rule.weights[q];
        for a in 0..4 {
            for b in 0..4 {
                m[a][b] += s * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_uniform;

    fn laplace(_: &CellGeometry) -> LocalSystem {
        let t = ShapeTable::gauss(2);
        LocalSystem { matrix: diffusion_matrix(&t, &[1.0; 4]), rhs: [0.0; 4] }
    }

    fn boundary_pins(mesh: &QuadMesh, dofs: &DofMap, f: impl Fn([f64; 2]) -> f64) -> Dirichlet {
        (0..mesh.n_vertices())
            .filter(|&v| !mesh.vertex_boundaries(v).is_empty())
            .filter_map(|v| dofs.dof_of(v).map(|d| (d, f(mesh.vertex(v)))))
            .collect()
    }

    #[test]
    fn two_by_two_interior_diagonal() {
        let mesh = build_uniform(2, 0).unwrap();
        let dofs = DofMap::new(&mesh);
        let pins = boundary_pins(&mesh, &dofs, |_| 0.0);
        let sys = assemble(&mesh, &dofs, &pins, laplace);
        let centre = mesh.find_vertex([0.5, 0.5]).unwrap();
        let d = dofs.dof_of(centre).unwrap();
        assert!((sys.get(d, d) - 8.0 / 3.0).abs() < 1e-14);
        assert_eq!(sys.asymmetry(), 0.0);
    }

    #[test]
    fn linear_field_reproduced_with_hanging_nodes() {
        let mesh = build_uniform(4, 2).unwrap();
        let c = mesh.locate([0.4, 0.6]);
        let (mesh, _) = mesh.refine_and_coarsen(&[c].into(), &Default::default());
        let c = mesh.locate([0.3, 0.7]);
        let (mesh, _) = mesh.refine_and_coarsen(&[c].into(), &Default::default());
        assert!(!mesh.hanging_nodes().is_empty());
        let dofs = DofMap::new(&mesh);
        let exact = |p: [f64; 2]| 0.3 + 2.0 * p[0] - 0.7 * p[1];
        let pins = boundary_pins(&mesh, &dofs, exact);
        let sys = assemble(&mesh, &dofs, &pins, laplace);
        let x = dofs.to_nodal(&solve(&sys, 1e-12).unwrap());
        for (v, p) in mesh.vertices().iter().enumerate() {
            assert!((x[v] - exact(*p)).abs() < 1e-11, "vertex {v}");
        }
    }
}
