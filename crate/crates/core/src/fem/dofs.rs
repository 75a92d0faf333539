//! Degrees of freedom on a quadtree mesh.
//!
//! Every vertex that is not hanging carries one DOF. A hanging vertex is
//! constrained to the mean of the endpoints of the coarse edge it lies on;
//! chains of such constraints are resolved down to free DOFs.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::sparse::SparsityPattern;
use crate::mesh::{QuadMesh, VertexId};

#[derive(Clone, Debug)]
pub struct DofMap {
    n_dofs: usize,
    vertex_dof: Vec<Option<usize>>,
    dof_vertex: Vec<VertexId>,
    constraints: BTreeMap<VertexId, [VertexId; 2]>,
    exp_ptr: Vec<usize>,
    exp: Vec<(usize, f64)>,
    pattern: Arc<SparsityPattern>,
}

impl DofMap {
    pub fn new(mesh: &QuadMesh) -> Self {
        let nv = mesh.n_vertices();
        let constraints: BTreeMap<VertexId, [VertexId; 2]> = mesh.hanging_nodes().iter().copied().collect();
        let mut vertex_dof = vec![None; nv];
        let mut dof_vertex = Vec::with_capacity(nv - constraints.len());
        for (v, slot) in vertex_dof.iter_mut().enumerate() {
            if !constraints.contains_key(&v) {
                *slot = Some(dof_vertex.len());
                dof_vertex.push(v);
            }
        }

        let mut memo: Vec<Option<Vec<(usize, f64)>>> = vec![None; nv];
        fn resolve(
            v: VertexId,
            vertex_dof: &[Option<usize>],
            constraints: &BTreeMap<VertexId, [VertexId; 2]>,
            memo: &mut Vec<Option<Vec<(usize, f64)>>>,
        ) -> Vec<(usize, f64)> {
            if let Some(e) = &memo[v] {
                return e.clone();
            }
            let out = match vertex_dof[v] {
                Some(d) => vec![(d, 1.0)],
                None => {
                    let [a, b] = constraints[&v];
                    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                    for p in [a, b] {
                        for (d, w) in resolve(p, vertex_dof, constraints, memo) {
                            *acc.entry(d).or_insert(0.0) += 0.5 * w;
                        }
                    }
                    acc.into_iter().collect()
                }
            };
            memo[v] = Some(out.clone());
            out
        }
        let mut exp_ptr = Vec::with_capacity(nv + 1);
        let mut exp = Vec::with_capacity(nv + 2 * constraints.len());
        exp_ptr.push(0);
        for v in 0..nv {
            exp.extend(resolve(v, &vertex_dof, &constraints, &mut memo));
            exp_ptr.push(exp.len());
        }

        let n_dofs = dof_vertex.len();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_dofs];
        let mut local: Vec<usize> = Vec::with_capacity(16);
        for &c in mesh.active_cells() {
            local.clear();
            for &v in &mesh.cell(c).vertices {
                local.extend(exp[exp_ptr[v]..exp_ptr[v + 1]].iter().map(|e| e.0));
            }
            for &a in &local {
                rows[a].extend_from_slice(&local);
            }
        }
        let pattern = Arc::new(SparsityPattern::from_rows(rows));
        DofMap { n_dofs, vertex_dof, dof_vertex, constraints, exp_ptr, exp, pattern }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_vertices(&self) -> usize {
        self.vertex_dof.len()
    }

    pub fn dof_of(&self, v: VertexId) -> Option<usize> {
        self.vertex_dof[v]
    }

    pub fn vertex_of(&self, d: usize) -> VertexId {
        self.dof_vertex[d]
    }

    pub fn is_hanging(&self, v: VertexId) -> bool {
        self.vertex_dof[v].is_none()
    }

    /// Hanging vertices and the two vertices each one averages.
    pub fn constraints(&self) -> &BTreeMap<VertexId, [VertexId; 2]> {
        &self.constraints
    }

    /// Vertex value as a combination of free DOFs.
    pub fn expansion(&self, v: VertexId) -> &[(usize, f64)] {
        &self.exp[self.exp_ptr[v]..self.exp_ptr[v + 1]]
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    /// Restricts a nodal field to the DOFs.
    pub fn to_dofs(&self, nodal: &[f64]) -> Vec<f64> {
        self.dof_vertex.iter().map(|&v| nodal[v]).collect()
    }

    /// Extends DOF values to all vertices, filling hanging vertices from
    /// their constraints.
    pub fn to_nodal(&self, dofs: &[f64]) -> Vec<f64> {
        (0..self.n_vertices()).map(|v| self.expansion(v).iter().map(|&(d, w)| w * dofs[d]).sum()).collect()
    }

    /// Re-imposes the hanging-node constraints on a nodal field.
    pub fn conform(&self, nodal: &[f64]) -> Vec<f64> {
        self.to_nodal(&self.to_dofs(nodal))
    }
}
