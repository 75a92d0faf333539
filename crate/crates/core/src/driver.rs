//! Staggered quasi-static time stepping with adaptive remeshing.
//!
//! Each load step alternates a Picard-linearized solve for the stress
//! function Φ with a bound-constrained damage solve until both fields
//! settle. Afterwards ξ is updated, the mesh adapted and the fields
//! transferred; the step is not re-solved on the new mesh unless requested.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use serde::Serialize;
use thiserror::Error;

use crate::constitutive::MaterialModel;
use crate::fem::{assemble, diffusion_matrix, solve, Dirichlet, DofMap, LocalSystem, ShapeTable, SolveError};
use crate::io::config::{ConfigError, RunConfig};
use crate::io::records::{CsvLog, EnergyRecord};
use crate::io::{bulk_energy, vtk};
use crate::length_scale::{mark_cells, xi_field_local, xi_global_optimal, LengthScaleConfig, XiField, XiMode, XiStats};
use crate::mesh::{build_uniform, CellCorrespondence, CellOrigin, MeshError, QuadMesh};
use crate::phase_field::{
    assemble_phase_unconstrained, clamp_and_project, solve_phase_bounded, surface_energy, Bound, PhaseState,
};

#[derive(Debug, Error)]
pub enum StepError {
    #[error("{stage} solve failed: {source}")]
    Solve { stage: &'static str, source: SolveError },
    #[error("Picard iteration stalled after {} iterations (last relative change {:.3e})", history.len(), history.last().copied().unwrap_or(f64::NAN))]
    Picard { history: Vec<f64> },
    #[error("staggered iteration did not converge in {iterations} iterations (Φ {err_airy:.3e}, φ {err_phase:.3e})")]
    Stagger { iterations: usize, err_airy: f64, err_phase: f64 },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("step {step}: {source}")]
    Step { step: usize, source: StepError },
    #[error("output directory {0} is in use by another run")]
    Locked(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Boundary loading: Φ = -c t on the top edge left of `x_split`, +c t to
/// its right. The node at `x_split` itself is left free.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadProgram {
    pub c: f64,
    pub dt: f64,
    pub x_split: f64,
}

impl LoadProgram {
    pub fn top_value(&self, x: f64, t: f64) -> Option<f64> {
        if x < self.x_split {
            Some(-self.c * t)
        } else if x > self.x_split {
            Some(self.c * t)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub tol_stagger: f64,
    pub max_stagger: usize,
    pub tol_picard: f64,
    pub max_picard: usize,
    pub linear_tol: f64,
    pub reequilibrate_after_amr: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_stagger: 1e-5,
            max_stagger: 200,
            tol_picard: 1e-8,
            max_picard: 30,
            linear_tol: 1e-10,
            reequilibrate_after_amr: false,
        }
    }
}

/// Solution fields on the current mesh.
#[derive(Clone, Debug)]
pub struct FieldState {
    pub airy: Vec<f64>,
    pub phase: PhaseState,
    pub xi: XiField,
    pub step: usize,
    pub time: f64,
    /// Nodes of the seeded notch. The reported surface energy is measured
    /// against the cheapest damage field that only contains the notch.
    pub seed_mask: Vec<bool>,
}

/// Dirichlet values for Φ at time `t` on the top edge. The split node stays
/// free; the set does not depend on later damage, so a damaged top edge
/// still carries its load.
pub fn airy_dirichlet(mesh: &QuadMesh, dofs: &DofMap, load: &LoadProgram, t: f64) -> Dirichlet {
    let mut pins = Dirichlet::new();
    for v in 0..mesh.n_vertices() {
        if !mesh.on_boundary(v, crate::mesh::Boundary::Top) {
            continue;
        }
        if let (Some(d), Some(g)) = (dofs.dof_of(v), load.top_value(mesh.vertex(v)[0], t)) {
            pins.insert(d, g);
        }
    }
    pins
}

fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let diff = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm = new.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

/// Converged Picard iterate and the relative change after each solve.
#[derive(Clone, Debug)]
pub struct PicardSolution {
    pub airy: Vec<f64>,
    pub history: Vec<f64>,
}

/// Picard iteration for Φ with the damage field frozen.
pub fn picard_solve_airy(
    mesh: &QuadMesh,
    dofs: &DofMap,
    phi: &[f64],
    guess: &[f64],
    material: &MaterialModel,
    pins: &Dirichlet,
    solver: &SolverConfig,
) -> Result<PicardSolution, StepError> {
    let table = ShapeTable::gauss(2);
    let mut prev = guess.to_vec();
    let mut history = Vec::new();
    for _ in 0..solver.max_picard {
        let sys = assemble(mesh, dofs, pins, |geo| {
            let a = geo.gather(&prev);
            let p = geo.gather(phi);
            let coeff: Vec<f64> = (0..table.rule.len())
                .map(|q| material.picard_coefficient(table.value(q, &p), table.gradient(q, &a, geo.h)))
                .collect();
            LocalSystem { matrix: diffusion_matrix(&table, &coeff), rhs: [0.0; 4] }
        });
        let x = dofs.to_nodal(&solve(&sys, solver.linear_tol).map_err(|source| StepError::Solve { stage: "Φ", source })?);
        let change = rel_change(&x, &prev);
        history.push(change);
        prev = x;
        if material.beta == 0.0 || change <= solver.tol_picard {
            return Ok(PicardSolution { airy: prev, history });
        }
    }
    Err(StepError::Picard { history })
}

/// Moves the fields to a new mesh. Vertices shared with the old mesh keep
/// their values, new vertices are interpolated. On coarsened cells the
/// corner damage takes the minimum over the replaced cells' nodes so the
/// transferred field never exceeds the old one. The crack mask spreads to
/// new vertices whose interpolation stencil is fully masked.
pub fn transfer_solution(
    old: &QuadMesh,
    new: &QuadMesh,
    corr: &CellCorrespondence,
    state: &FieldState,
    new_dofs: &DofMap,
) -> FieldState {
    let nv = new.n_vertices();
    let mut airy = vec![0.0; nv];
    let mut phi = vec![0.0; nv];
    let mut seed = vec![false; nv];
    let mut mask = vec![false; nv];
    for v in 0..nv {
        let p = new.vertex(v);
        if let Some(ov) = old.find_vertex(p) {
            airy[v] = state.airy[ov];
            phi[v] = state.phase.phi[ov];
            seed[v] = state.seed_mask[ov];
            mask[v] = state.phase.crack_mask[ov];
        } else {
            let c = old.locate(p);
            let w = old.local_weights(c, p);
            let vs = old.cell(c).vertices;
            let interp = |f: &[f64]| (0..4).map(|a| w[a] * f[vs[a]]).sum::<f64>();
            airy[v] = interp(&state.airy);
            phi[v] = interp(&state.phase.phi);
            mask[v] = (0..4).filter(|&a| w[a] > 1e-12).all(|a| state.phase.crack_mask[vs[a]]);
            seed[v] = (0..4).filter(|&a| w[a] > 1e-12).all(|a| state.seed_mask[vs[a]]);
        }
    }
    for (k, origin) in corr.origin.iter().enumerate() {
        if let CellOrigin::Coarsened(olds) = origin {
            let nodes = || olds.iter().flat_map(|&o| old.cell(o).vertices);
            let m = nodes().map(|v| state.phase.phi[v]).fold(f64::INFINITY, f64::min);
            for v in new.cell(new.active_cells()[k]).vertices {
                phi[v] = phi[v].min(m);
            }
        }
    }
    for v in 0..nv {
        if mask[v] && !new_dofs.is_hanging(v) {
            phi[v] = 0.0;
        }
    }
    let airy = new_dofs.conform(&airy);
    let phi = new_dofs.conform(&phi);
    for v in 0..nv {
        if new_dofs.is_hanging(v) {
            mask[v] = new_dofs.expansion(v).iter().all(|&(d, _)| mask[new_dofs.vertex_of(d)]);
            seed[v] = new_dofs.expansion(v).iter().all(|&(d, _)| seed[new_dofs.vertex_of(d)]);
        }
    }
    let old_xi = |c: usize| state.xi.values[old.active_ordinal(c).expect("old active cell")];
    let xi = corr
        .origin
        .iter()
        .map(|o| match o {
            CellOrigin::Same(c) | CellOrigin::Refined(c) => old_xi(*c),
            CellOrigin::Coarsened(cs) => cs.iter().map(|&c| old_xi(c)).sum::<f64>() / 4.0,
        })
        .collect();
    FieldState {
        airy,
        phase: PhaseState { phi, crack_mask: mask, threshold: state.phase.threshold },
        xi: XiField { values: xi },
        step: state.step,
        time: state.time,
        seed_mask: seed,
    }
}

/// True if masked vertices connect the top edge to the bottom edge.
pub fn crack_spans(mesh: &QuadMesh, mask: &[bool]) -> bool {
    let nv = mesh.n_vertices();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for &c in mesh.active_cells() {
        let vs = mesh.cell(c).vertices;
        for &a in &vs {
            for &b in &vs {
                if a != b && mask[a] && mask[b] {
                    adj[a].push(b);
                }
            }
        }
    }
    let mut seen = vec![false; nv];
    let mut queue: VecDeque<usize> = (0..nv)
        .filter(|&v| mask[v] && mesh.on_boundary(v, crate::mesh::Boundary::Top))
        .inspect(|&v| seen[v] = true)
        .collect();
    while let Some(v) = queue.pop_front() {
        if mesh.on_boundary(v, crate::mesh::Boundary::Bottom) {
            return true;
        }
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    false
}

/// Outcome of one staggered solve.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StaggerStats {
    pub iterations: usize,
    pub picard_solves: usize,
    pub active_set_iterations: usize,
}

/// Summary of a finished run.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub steps: usize,
    pub final_time: f64,
    pub termination: String,
    pub fracture_step: Option<usize>,
    pub peak_bulk: f64,
    pub peak_bulk_time: f64,
    pub final_bulk: f64,
    pub final_surface: f64,
    pub final_total: f64,
    pub final_xi: XiStats,
    pub finest_level: u8,
    pub dof_steps: usize,
    pub wall_seconds: f64,
}

/// A simulation advanced one load step at a time.
pub struct Simulation {
    pub config: RunConfig,
    pub material: MaterialModel,
    pub lsc: LengthScaleConfig,
    pub solver: SolverConfig,
    pub load: LoadProgram,
    mesh: QuadMesh,
    dofs: DofMap,
    state: FieldState,
    records: Vec<EnergyRecord>,
    fracture_step: Option<usize>,
    finest_level: u8,
    /// Global ξ scalar (global and fixed modes).
    xi_scalar: f64,
    /// Damage active set of the last bounded solve on the current mesh.
    active_set: Option<Vec<Bound>>,
    /// Same for the reference damage profile.
    reference_active: Option<Vec<Bound>>,
}

impl Simulation {
    /// Builds the mesh, seeds the crack, relaxes the damage profile around it
    /// at zero load and records step 0.
    pub fn new(config: RunConfig) -> Result<Self, RunError> {
        config.validate()?;
        let material = config.material;
        let lsc = config.length_scale_config();
        let s = &config.solver;
        let solver = SolverConfig {
            tol_stagger: s.tol_stagger,
            max_stagger: s.max_stagger,
            tol_picard: s.tol_picard,
            max_picard: s.max_picard,
            linear_tol: s.linear_tol,
            reequilibrate_after_amr: s.reequilibrate_after_amr,
        };
        let load = LoadProgram { c: config.loading.c, dt: config.loading.dt, x_split: config.crack.x0 };
        let extra = if config.mesh.amr || config.mesh.initial_refinement { config.mesh.max_extra_levels } else { 0 };
        let mut mesh = build_uniform(config.mesh.divisions_per_side, extra)?;
        let cr = &config.crack;
        if config.mesh.initial_refinement {
            loop {
                let flagged: std::collections::BTreeSet<_> = mesh
                    .crack_line_cells(cr.x0, cr.y_top, cr.y_bot)?
                    .into_iter()
                    .filter(|&c| mesh.cell(c).level() < mesh.max_level())
                    .collect();
                if flagged.is_empty() {
                    break;
                }
                mesh = mesh.refine_and_coarsen(&flagged, &Default::default()).0;
            }
        }
        let dofs = DofMap::new(&mesh);
        let nv = mesh.n_vertices();
        let mut phase = PhaseState::intact(nv, cr.threshold);
        for c in mesh.crack_line_cells(cr.x0, cr.y_top, cr.y_bot)? {
            let cell = mesh.cell(c);
            for v in cell.vertices {
                let [x, y] = mesh.vertex(v);
                let dy = if y > cr.y_top { y - cr.y_top } else if y < cr.y_bot { cr.y_bot - y } else { 0.0 };
                let dist = ((x - cr.x0).powi(2) + dy * dy).sqrt();
                if dist <= 0.5 * cell.size() * (1.0 + 1e-12) {
                    phase.crack_mask[v] = true;
                    phase.phi[v] = 0.0;
                }
            }
        }
        let phase = clamp_and_project(&phase.phi.clone(), &vec![1.0; nv], &phase, &dofs);
        let xi_scalar = lsc.xi_iv;
        let xi = match lsc.mode {
            XiMode::Local => xi_field_local(&mesh, &phase.phi, &lsc, material.gc),
            _ => XiField::constant(&mesh, xi_scalar),
        };
        let seed_mask = phase.crack_mask.clone();
        let state = FieldState { airy: vec![0.0; nv], phase, xi, step: 0, time: 0.0, seed_mask };
        let finest_level = mesh.active_cells().iter().map(|&c| mesh.cell(c).level()).max().unwrap_or(0);
        let mut sim = Simulation {
            config,
            material,
            lsc,
            solver,
            load,
            mesh,
            dofs,
            state,
            records: Vec::new(),
            fracture_step: None,
            finest_level,
            xi_scalar,
            active_set: None,
            reference_active: None,
        };
        let step0 = |source| RunError::Step { step: 0, source };
        sim.relax_initial_profile().map_err(step0)?;
        if sim.config.mesh.amr {
            // adapt to the unloaded notch before any load is applied
            for _ in 0..=sim.config.mesh.max_extra_levels {
                if !sim.adapt() {
                    break;
                }
                sim.reset_to_seed();
                sim.relax_initial_profile().map_err(step0)?;
            }
        }

        // Φ starting guess: one linear solve at the first load level.
        let pins = airy_dirichlet(&sim.mesh, &sim.dofs, &sim.load, sim.load.dt);
        let linear = MaterialModel { beta: 0.0, ..sim.material };
        let guess =
            picard_solve_airy(&sim.mesh, &sim.dofs, &sim.state.phase.phi, &sim.state.airy, &linear, &pins, &sim.solver)
                .map_err(step0)?
                .airy;
        let rec = sim.record(0).map_err(step0)?;
        sim.records.push(rec);
        sim.state.airy = guess;
        Ok(sim)
    }

    /// Damage back to the bare notch on the current mesh.
    fn reset_to_seed(&mut self) {
        let seed = &self.state.seed_mask;
        let phi: Vec<f64> = seed.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
        self.state.phase.phi = self.dofs.conform(&phi);
        self.state.phase.crack_mask = seed.clone();
    }

    /// Staggered solve at zero load; in global mode iterated together with
    /// the ξ update until ξ settles.
    fn relax_initial_profile(&mut self) -> Result<(), StepError> {
        let airy = std::mem::take(&mut self.state.airy);
        self.state.airy = vec![0.0; airy.len()];
        self.staggered_step(0.0)?;
        if self.lsc.mode == XiMode::GlobalOptimal {
            for _ in 0..50 {
                let before = self.xi_scalar;
                self.update_xi();
                self.staggered_step(0.0)?;
                if (self.xi_scalar - before).abs() <= 1e-8 * before {
                    break;
                }
            }
        }
        Ok(())
    }

    pub fn mesh(&self) -> &QuadMesh {
        &self.mesh
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn state(&self) -> &FieldState {
        &self.state
    }

    pub fn records(&self) -> &[EnergyRecord] {
        &self.records
    }

    pub fn fracture_step(&self) -> Option<usize> {
        self.fracture_step
    }

    pub fn masked_nodes(&self) -> usize {
        self.state.phase.crack_mask.iter().filter(|&&m| m).count()
    }

    pub fn finest_level(&self) -> u8 {
        self.finest_level
    }

    /// Current global ξ (meaningful in fixed and global modes).
    pub fn xi_scalar(&self) -> f64 {
        self.xi_scalar
    }

    /// Alternates Φ and φ solves at time `t` until both relative changes
    /// drop below the tolerance.
    pub fn staggered_step(&mut self, t: f64) -> Result<StaggerStats, StepError> {
        let (mesh, dofs) = (&self.mesh, &self.dofs);
        let pins = airy_dirichlet(mesh, dofs, &self.load, t);
        let phi_old = self.state.phase.phi.clone();
        let upper = dofs.to_dofs(&phi_old);
        let mut stats = StaggerStats::default();
        let (mut err_a, mut err_p) = (f64::INFINITY, f64::INFINITY);
        for k in 1..=self.solver.max_stagger {
            let phi_prev = self.state.phase.phi.clone();
            let picard = picard_solve_airy(
                mesh,
                dofs,
                &phi_prev,
                &self.state.airy,
                &self.material,
                &pins,
                &self.solver,
            )?;
            stats.picard_solves += picard.history.len();
            let airy = picard.airy;
            if self.lsc.mode == XiMode::Local {
                self.state.xi = xi_field_local(mesh, &phi_prev, &self.lsc, self.material.gc);
            }
            let raw =
                assemble_phase_unconstrained(mesh, dofs, &airy, &phi_prev, &self.state.xi, &self.material, &self.lsc);
            let mask = self.state.phase.mask_pins(dofs);
            let sol = solve_phase_bounded(&raw, &mask, &upper, self.active_set.as_deref(), self.solver.linear_tol)
                .map_err(|source| StepError::Solve { stage: "φ", source })?;
            self.active_set = Some(sol.active);
            stats.active_set_iterations += sol.iterations;
            debug!("active set settled in {} iterations", sol.iterations);
            let phase = clamp_and_project(&dofs.to_nodal(&sol.phi), &phi_old, &self.state.phase, dofs);
            err_a = rel_change(&airy, &self.state.airy);
            err_p = rel_change(&phase.phi, &phi_prev);
            self.state.airy = airy;
            self.state.phase = phase;
            stats.iterations = k;
            debug!("t = {t:.4}: stagger {k}, Φ change {err_a:.2e}, φ change {err_p:.2e}");
            if err_a <= self.solver.tol_stagger && err_p <= self.solver.tol_stagger {
                if self.lsc.mode == XiMode::Local {
                    self.state.xi = xi_field_local(mesh, &self.state.phase.phi, &self.lsc, self.material.gc);
                }
                return Ok(stats);
            }
        }
        Err(StepError::Stagger { iterations: self.solver.max_stagger, err_airy: err_a, err_phase: err_p })
    }

    fn update_xi(&mut self) {
        match self.lsc.mode {
            XiMode::Fixed => {}
            XiMode::GlobalOptimal => {
                self.xi_scalar = xi_global_optimal(&self.mesh, &self.state.phase.phi, &self.lsc, self.material.gc);
                self.state.xi = XiField::constant(&self.mesh, self.xi_scalar);
            }
            XiMode::Local => {
                self.state.xi = xi_field_local(&self.mesh, &self.state.phase.phi, &self.lsc, self.material.gc);
            }
        }
    }

    /// ξ statistics over cells that are not entirely inside the crack mask.
    pub fn xi_stats(&self) -> XiStats {
        let mask = &self.state.phase.crack_mask;
        let mesh = &self.mesh;
        self.state.xi.stats_where(|k| !mesh.cell(mesh.active_cells()[k]).vertices.iter().all(|&v| mask[v]))
    }

    /// Minimizer of the surface energy under the current ξ with only the
    /// seeded notch pinned to zero. Any admissible damage field has at least
    /// its energy.
    pub fn reference_profile(&mut self) -> Result<Vec<f64>, StepError> {
        let (mesh, dofs) = (&self.mesh, &self.dofs);
        let zero = vec![0.0; mesh.n_vertices()];
        let ones = vec![1.0; mesh.n_vertices()];
        let raw = assemble_phase_unconstrained(mesh, dofs, &zero, &ones, &self.state.xi, &self.material, &self.lsc);
        let pins: Dirichlet = (0..mesh.n_vertices())
            .filter(|&v| self.state.seed_mask[v])
            .filter_map(|v| dofs.dof_of(v))
            .map(|d| (d, 0.0))
            .collect();
        let upper = vec![1.0; dofs.n_dofs()];
        let sol = solve_phase_bounded(&raw, &pins, &upper, self.reference_active.as_deref(), self.solver.linear_tol)
            .map_err(|source| StepError::Solve { stage: "reference φ", source })?;
        let phi = dofs.to_nodal(&sol.phi);
        self.reference_active = Some(sol.active);
        Ok(phi)
    }

    /// Bulk energy, created surface energy and their sum for the current state.
    pub fn energies(&mut self) -> Result<(f64, f64, f64), StepError> {
        let reference = self.reference_profile()?;
        let s = &self.state;
        let bulk = bulk_energy(&self.mesh, &s.airy, &s.phase.phi, &self.material);
        let gc = self.material.gc;
        let surface = surface_energy(&self.mesh, &s.phase.phi, &s.xi, &self.lsc, gc, false)
            - surface_energy(&self.mesh, &reference, &s.xi, &self.lsc, gc, false);
        Ok((bulk, surface, bulk + surface))
    }

    fn record(&mut self, stagger_iters: usize) -> Result<EnergyRecord, StepError> {
        let (bulk, surface, total) = self.energies()?;
        let xs = self.xi_stats();
        Ok(EnergyRecord {
            step: self.state.step,
            time: self.state.time,
            load: self.load.c.abs() * self.state.time,
            bulk,
            surface,
            total,
            xi_min: xs.min,
            xi_max: xs.max,
            xi_mean: xs.mean,
            cells: self.mesh.n_active(),
            dofs: self.dofs.n_dofs(),
            stagger_iters,
        })
    }

    /// Remeshes from the current ξ field. Returns true if the mesh changed.
    pub fn adapt(&mut self) -> bool {
        let (refine, coarsen) = mark_cells(&self.mesh, &self.state.xi, &self.lsc, self.mesh.h_min());
        if refine.is_empty() && coarsen.is_empty() {
            return false;
        }
        let (new_mesh, corr) = self.mesh.refine_and_coarsen(&refine, &coarsen);
        if new_mesh.n_active() == self.mesh.n_active() && corr.origin.iter().all(|o| matches!(o, CellOrigin::Same(_))) {
            return false;
        }
        let new_dofs = DofMap::new(&new_mesh);
        self.state = transfer_solution(&self.mesh, &new_mesh, &corr, &self.state, &new_dofs);
        self.mesh = new_mesh;
        self.dofs = new_dofs;
        self.active_set = None;
        self.reference_active = None;
        let lvl = self.mesh.active_cells().iter().map(|&c| self.mesh.cell(c).level()).max().unwrap_or(0);
        self.finest_level = self.finest_level.max(lvl);
        match self.lsc.mode {
            XiMode::Local => self.update_xi(),
            _ => self.state.xi = XiField::constant(&self.mesh, self.xi_scalar),
        }
        debug!("remeshed: {} refine / {} coarsen flags -> {} cells", refine.len(), coarsen.len(), self.mesh.n_active());
        true
    }

    /// True once no further step will be taken.
    pub fn finished(&self) -> Option<String> {
        let l = &self.config.loading;
        if self.state.step >= l.max_steps {
            return Some("max_steps".into());
        }
        if self.state.time >= l.t_end - 1e-12 {
            return Some("t_end".into());
        }
        if let Some(f) = self.fracture_step {
            if self.state.step >= f + l.post_fracture_steps {
                return Some("fracture".into());
            }
        }
        None
    }

    /// Advances one load step: staggered solve, ξ update, energy record and
    /// remeshing.
    pub fn advance(&mut self) -> Result<&EnergyRecord, StepError> {
        self.solve_step()?;
        self.remesh()?;
        Ok(self.records.last().expect("step recorded"))
    }

    /// The solve half of [`Simulation::advance`]: everything up to and
    /// including the energy record, on the current mesh.
    pub fn solve_step(&mut self) -> Result<&EnergyRecord, StepError> {
        let step = self.state.step + 1;
        let t = step as f64 * self.load.dt;
        let stats = self.staggered_step(t)?;
        self.state.step = step;
        self.state.time = t;
        self.update_xi();
        let rec = self.record(stats.iterations)?;
        if self.fracture_step.is_none() && crack_spans(&self.mesh, &self.state.phase.crack_mask) {
            info!("crack reached the bottom edge at step {step}");
            self.fracture_step = Some(step);
        }
        info!(
            "step {step} t = {t:.4}: bulk {:.6e} surface {:.6e} xi [{:.4}, {:.4}] cells {} masked {} stagger {} picard {}",
            rec.bulk,
            rec.surface,
            rec.xi_min,
            rec.xi_max,
            rec.cells,
            self.masked_nodes(),
            stats.iterations,
            stats.picard_solves
        );
        self.records.push(rec);
        Ok(self.records.last().expect("just pushed"))
    }

    /// The remeshing half of [`Simulation::advance`]. Returns true if the
    /// mesh changed.
    pub fn remesh(&mut self) -> Result<bool, StepError> {
        if !self.config.mesh.amr || !self.adapt() {
            return Ok(false);
        }
        if self.solver.reequilibrate_after_amr {
            self.staggered_step(self.state.time)?;
            self.update_xi();
        }
        Ok(true)
    }

    pub fn snapshot(&self) -> vtk::Snapshot<'_> {
        vtk::Snapshot {
            airy: &self.state.airy,
            phase: &self.state.phase.phi,
            crack: &self.state.phase.crack_mask,
            xi: &self.state.xi.values,
        }
    }

    pub fn report(&self, termination: &str, wall_seconds: f64) -> RunReport {
        let last = self.records.last().expect("step 0 is always recorded");
        let peak = self.records.iter().fold(&self.records[0], |a, r| if r.bulk > a.bulk { r } else { a });
        RunReport {
            steps: self.state.step,
            final_time: self.state.time,
            termination: termination.to_string(),
            fracture_step: self.fracture_step,
            peak_bulk: peak.bulk,
            peak_bulk_time: peak.time,
            final_bulk: last.bulk,
            final_surface: last.surface,
            final_total: last.total,
            final_xi: self.xi_stats(),
            finest_level: self.finest_level,
            dof_steps: self.records.iter().skip(1).map(|r| r.dofs).sum(),
            wall_seconds,
        }
    }
}

struct DirLock {
    path: PathBuf,
    _file: File,
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// Runs a configuration to completion, writing the energy log, VTK
/// snapshots, the effective configuration and a JSON summary to `out_dir`.
pub fn run(config: RunConfig, out_dir: &Path) -> Result<RunReport, RunError> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let lock_path = out_dir.join(".lock");
    let lock = OpenOptions::new().write(true).create_new(true).open(&lock_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AlreadyExists {
            RunError::Locked(out_dir.to_path_buf())
        } else {
            RunError::Io { path: lock_path.clone(), source: e }
        }
    })?;
    let _lock = DirLock { path: lock_path, _file: lock };

    let cfg_path = out_dir.join("config.toml");
    std::fs::write(&cfg_path, config.to_toml_string()).map_err(io_err(&cfg_path))?;
    let vtk_every = config.output.vtk_every;
    let csv_path = out_dir.join(&config.output.csv_name);
    let mut sim = Simulation::new(config)?;
    let mut csv = CsvLog::create(&csv_path).map_err(io_err(&csv_path))?;
    csv.append(&sim.records()[0]).map_err(io_err(&csv_path))?;
    let write_vtk = |sim: &Simulation| -> Result<(), RunError> {
        let p = out_dir.join(format!("step_{:05}.vtk", sim.state().step));
        let title = format!("step {} t {}", sim.state().step, sim.state().time);
        vtk::write(&p, sim.mesh(), &sim.snapshot(), &title).map_err(io_err(&p))
    };
    if vtk_every > 0 {
        write_vtk(&sim)?;
    }
    let termination = loop {
        if let Some(reason) = sim.finished() {
            break reason;
        }
        let step = sim.state().step + 1;
        let rec = sim.advance().map_err(|source| RunError::Step { step, source })?.clone();
        csv.append(&rec).map_err(io_err(&csv_path))?;
        if vtk_every > 0 && (rec.step % vtk_every == 0 || sim.finished().is_some()) {
            write_vtk(&sim)?;
        }
    };
    let report = sim.report(&termination, started.elapsed().as_secs_f64());
    let summary = out_dir.join("summary.json");
    std::fs::write(&summary, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(io_err(&summary))?;
    Ok(report)
}

/// Index map helper for tests and tools: DOF pins as a map.
pub fn pins_from(entries: impl IntoIterator<Item = (usize, f64)>) -> Dirichlet {
    entries.into_iter().collect::<BTreeMap<_, _>>()
}
