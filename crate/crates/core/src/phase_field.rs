//! AT1 damage subproblem.
//!
//! For frozen Φ the damage field minimizes
//! `∫ (μ/2) g(φ) W + (Gc/c_v) [(1 - φ)/ξ + ξ |∇φ|²]`
//! subject to `0 ≤ φ ≤ φ_old`, with φ pinned to zero on the crack mask. The
//! stationarity system is
//! `∫ μ(1-κ) W φ ψ + (2 Gc/c_v) ξ ∇φ·∇ψ = ∫ (Gc/c_v) ψ / ξ`,
//! and the bounds are enforced with a primal-dual active set iteration.

use log::warn;

use crate::constitutive::MaterialModel;
use crate::fem::{
    assemble_unconstrained, diffusion_matrix, solve, CellGeometry, Dirichlet, DofMap, LocalSystem, ShapeTable,
    SolveError, SparseSystem,
};
use crate::length_scale::{LengthScaleConfig, XiField};
use crate::mesh::QuadMesh;

/// Damage field with its irreversibility mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    /// Nodal values, 1 intact and 0 broken.
    pub phi: Vec<f64>,
    /// Nodes permanently pinned to zero.
    pub crack_mask: Vec<bool>,
    /// Values below this join the mask.
    pub threshold: f64,
}

impl PhaseState {
    pub fn intact(n_vertices: usize, threshold: f64) -> Self {
        PhaseState { phi: vec![1.0; n_vertices], crack_mask: vec![false; n_vertices], threshold }
    }

    /// Mask restricted to DOFs, as Dirichlet zeros.
    pub fn mask_pins(&self, dofs: &DofMap) -> Dirichlet {
        (0..dofs.n_dofs()).filter(|&d| self.crack_mask[dofs.vertex_of(d)]).map(|d| (d, 0.0)).collect()
    }
}

/// Assembles the damage system without the mask constraint.
pub fn assemble_phase_unconstrained(
    mesh: &QuadMesh,
    dofs: &DofMap,
    airy: &[f64],
    phi_prev: &[f64],
    xi: &XiField,
    material: &MaterialModel,
    lsc: &LengthScaleConfig,
) -> SparseSystem {
    let table = ShapeTable::gauss(2);
    let k = material.gc / lsc.c_v;
    assemble_unconstrained(mesh, dofs, |geo: &CellGeometry| {
        let xi_e = xi.values[geo.ordinal];
        let a = geo.gather(airy);
        let p = geo.gather(phi_prev);
        let jac = geo.h * geo.h;
        let mut m = diffusion_matrix(&table, &[2.0 * k * xi_e; 4]);
        let mut rhs = [0.0; 4];
        for q in 0..table.rule.len() {
            let w = table.rule.weights[q] * jac;
            let n = &table.values[q];
            let r = material.phase_reaction_coefficient(table.gradient(q, &a, geo.h), table.value(q, &p));
            for i in 0..4 {
                rhs[i] += w * k / xi_e * n[i];
                for j in 0..4 {
                    m[i][j] += w * r * n[i] * n[j];
                }
            }
        }
        LocalSystem { matrix: m, rhs }
    })
}

/// Damage system with crack-mask nodes eliminated as zero Dirichlet values.
#[allow(clippy::too_many_arguments)]
pub fn assemble_phase_system(
    mesh: &QuadMesh,
    dofs: &DofMap,
    airy: &[f64],
    phi_prev: &[f64],
    xi: &XiField,
    material: &MaterialModel,
    lsc: &LengthScaleConfig,
    state: &PhaseState,
) -> SparseSystem {
    let mut sys = assemble_phase_unconstrained(mesh, dofs, airy, phi_prev, xi, material, lsc);
    sys.eliminate_dirichlet(&state.mask_pins(dofs));
    sys
}

/// Per-DOF state of the damage bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Free,
    Upper,
    Lower,
}

/// Result of the bound-constrained solve.
#[derive(Clone, Debug)]
pub struct BoundedSolution {
    /// DOF values.
    pub phi: Vec<f64>,
    /// Final active set, usable as a warm start.
    pub active: Vec<Bound>,
    pub iterations: usize,
    pub converged: bool,
}

const MAX_ACTIVE_SET_ITERATIONS: usize = 60;

/// Solves `K φ = b` subject to `0 ≤ φ ≤ upper` and `φ = 0` on `mask` by a
/// primal-dual active set method, starting from `initial` (all free if
/// absent). Starting from the unconstrained solution settles in a few
/// iterations; starting with every DOF on its bound only frees one ring of
/// nodes per iteration.
pub fn solve_phase_bounded(
    raw: &SparseSystem,
    mask: &Dirichlet,
    upper: &[f64],
    initial: Option<&[Bound]>,
    tol: f64,
) -> Result<BoundedSolution, SolveError> {
    let n = raw.n();
    match initial {
        Some(s) if s.len() == n => active_set_iteration(raw, mask, upper, s.to_vec(), tol),
        // without pins and reaction the all-free system is singular
        _ => match active_set_iteration(raw, mask, upper, vec![Bound::Free; n], tol) {
            Err(SolveError::NotPositiveDefinite(_)) => {
                active_set_iteration(raw, mask, upper, vec![Bound::Upper; n], tol)
            }
            r => r,
        },
    }
}

fn active_set_iteration(
    raw: &SparseSystem,
    mask: &Dirichlet,
    upper: &[f64],
    mut set: Vec<Bound>,
    tol: f64,
) -> Result<BoundedSolution, SolveError> {
    let n = raw.n();
    let mut last = vec![0.0; n];
    for it in 1..=MAX_ACTIVE_SET_ITERATIONS {
        let mut pins = mask.clone();
        for (i, b) in set.iter().enumerate() {
            match b {
                Bound::Upper => pins.entry(i).or_insert(upper[i].max(0.0)),
                Bound::Lower => pins.entry(i).or_insert(0.0),
                Bound::Free => continue,
            };
        }
        let mut sys = raw.clone();
        sys.eliminate_dirichlet(&pins);
        let x = solve(&sys, tol)?;
        let kx = raw.matvec(&x);
        let mut changed = false;
        for i in 0..n {
            if mask.contains_key(&i) {
                continue;
            }
            let lambda = raw.rhs[i] - kx[i];
            let eps = 1e-9 * raw.rhs[i].abs().max(f64::MIN_POSITIVE);
            let next = match set[i] {
                Bound::Upper if lambda < -eps => Bound::Free,
                Bound::Lower if lambda > eps => Bound::Free,
                Bound::Free if x[i] > upper[i] => Bound::Upper,
                Bound::Free if x[i] < 0.0 => Bound::Lower,
                b => b,
            };
            if next != set[i] {
                set[i] = next;
                changed = true;
            }
        }
        last = x;
        if !changed {
            return Ok(BoundedSolution { phi: last, active: set, iterations: it, converged: true });
        }
    }
    warn!("damage active set did not settle in {MAX_ACTIVE_SET_ITERATIONS} iterations; clamping");
    for (x, u) in last.iter_mut().zip(upper) {
        *x = x.clamp(0.0, u.max(0.0));
    }
    Ok(BoundedSolution { phi: last, active: set, iterations: MAX_ACTIVE_SET_ITERATIONS, converged: false })
}

/// Enforces `0 ≤ φ ≤ min(1, φ_old)` at free DOFs, zeroes masked nodes and
/// adds nodes that fall below the threshold to the mask. Hanging nodes are
/// refilled from their constraints and are masked when all their masters are.
pub fn clamp_and_project(phi_new: &[f64], phi_old_step: &[f64], state: &PhaseState, dofs: &DofMap) -> PhaseState {
    let nv = dofs.n_vertices();
    let mut phi = phi_new.to_vec();
    let mut mask = state.crack_mask.clone();
    for v in 0..nv {
        if dofs.is_hanging(v) {
            continue;
        }
        let mut p = phi[v].clamp(0.0, 1.0).min(phi_old_step[v]);
        if mask[v] || p < state.threshold {
            p = 0.0;
            mask[v] = true;
        }
        phi[v] = p;
    }
    let phi = dofs.conform(&phi);
    for v in 0..nv {
        if dofs.is_hanging(v) {
            mask[v] = dofs.expansion(v).iter().all(|&(d, _)| mask[dofs.vertex_of(d)]);
        }
    }
    PhaseState { phi, crack_mask: mask, threshold: state.threshold }
}

/// `(Gc/c_v) ∫ [(1 - φ + η [include_eta]) / ξ + ξ |∇φ|²]`, 3x3 Gauss.
pub fn surface_energy(
    mesh: &QuadMesh,
    phi: &[f64],
    xi: &XiField,
    lsc: &LengthScaleConfig,
    gc: f64,
    include_eta: bool,
) -> f64 {
    let table = ShapeTable::gauss(3);
    let eta = if include_eta { lsc.eta } else { 0.0 };
    let mut total = 0.0;
    for k in 0..mesh.n_active() {
        let geo = CellGeometry::new(mesh, k);
        let nodal = geo.gather(phi);
        let xi_e = xi.values[k];
        let jac = geo.h * geo.h;
        for q in 0..table.rule.len() {
            let g = table.gradient(q, &nodal, geo.h);
            let f = (1.0 - table.value(q, &nodal) + eta) / xi_e + xi_e * (g[0] * g[0] + g[1] * g[1]);
            total += table.rule.weights[q] * jac * f;
        }
    }
    gc / lsc.c_v * total
}
