//! End-to-end behaviour of the staggered driver on small meshes.

use std::collections::BTreeSet;

use fracfield::constitutive::MaterialModel;
use fracfield::driver::{self, picard_solve_airy, transfer_solution, FieldState, RunError, SolverConfig, StepError};
use fracfield::fem::{Dirichlet, DofMap};
use fracfield::io::bulk_energy;
use fracfield::io::records::read_csv;
use fracfield::length_scale::XiField;
use fracfield::mesh::{build_uniform, Boundary, CellOrigin};
use fracfield::phase_field::PhaseState;
use fracfield::{RunConfig, Simulation};

fn small(extra: &[&str]) -> RunConfig {
    let mut o: Vec<String> = [
        "mesh.divisions_per_side=16",
        "mesh.amr=false",
        "mesh.initial_refinement=false",
        "mesh.max_extra_levels=0",
        "length_scale.mode=\"fixed\"",
        "loading.max_steps=3",
        "output.vtk_every=1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::from_toml_str("", &o).unwrap()
}

#[test]
fn zero_load_stays_at_rest() {
    let mut sim = Simulation::new(small(&["loading.c=0.0"])).unwrap();
    for _ in 0..2 {
        let r = sim.advance().unwrap().clone();
        assert_eq!(r.bulk, 0.0);
        assert!(r.surface.abs() < 1e-12, "{}", r.surface);
        assert_eq!(r.stagger_iters, 1);
    }
}

#[test]
fn symmetric_loading_gives_antisymmetric_airy() {
    let mut sim = Simulation::new(small(&["loading.c=0.5"])).unwrap();
    sim.advance().unwrap();
    sim.advance().unwrap();
    let mesh = sim.mesh();
    let airy = &sim.state().airy;
    for (v, p) in mesh.vertices().iter().enumerate() {
        let m = mesh.find_vertex([1.0 - p[0], p[1]]).unwrap();
        assert!((airy[v] + airy[m]).abs() < 1e-8, "at {p:?}: {} vs {}", airy[v], airy[m]);
    }
}

#[test]
fn far_field_stays_intact_before_initiation() {
    let mut sim = Simulation::new(small(&["loading.c=0.05", "mesh.divisions_per_side=32"])).unwrap();
    sim.advance().unwrap();
    let mesh = sim.mesh();
    for (v, p) in mesh.vertices().iter().enumerate() {
        let dy = (0.575 - p[1]).max(0.0);
        if ((p[0] - 0.5).powi(2) + dy * dy).sqrt() > 0.3 {
            assert_eq!(sim.state().phase.phi[v], 1.0, "at {p:?}");
        }
    }
}

fn top_pins(mesh: &fracfield::mesh::QuadMesh, dofs: &DofMap, value: impl Fn(f64) -> f64) -> Dirichlet {
    (0..mesh.n_vertices())
        .filter(|&v| mesh.on_boundary(v, Boundary::Top))
        .map(|v| (dofs.dof_of(v).unwrap(), value(mesh.vertex(v)[0])))
        .collect()
}

#[test]
fn picard_linear_and_nonlinear() {
    let mesh = build_uniform(16, 0).unwrap();
    let dofs = DofMap::new(&mesh);
    let nv = mesh.n_vertices();
    let phi = vec![1.0; nv];
    let pins = top_pins(&mesh, &dofs, |x| if x < 0.5 { -40.0 } else { 40.0 });
    let solver = SolverConfig::default();

    let linear = MaterialModel { beta: 0.0, ..Default::default() };
    let sol = picard_solve_airy(&mesh, &dofs, &phi, &vec![0.0; nv], &linear, &pins, &solver).unwrap();
    assert_eq!(sol.history.len(), 1);

    // moderate load: the iteration contracts from the first step on
    let limiting = MaterialModel::default();
    let mild = top_pins(&mesh, &dofs, |x| 12.0 * (x - 0.5));
    let sol = picard_solve_airy(&mesh, &dofs, &phi, &vec![0.0; nv], &limiting, &mild, &solver).unwrap();
    assert!(sol.history.len() > 2);
    assert!(sol.history.windows(2).all(|w| w[1] < w[0]), "{:?}", sol.history);

    let tight = SolverConfig { max_picard: 2, ..solver };
    match picard_solve_airy(&mesh, &dofs, &phi, &vec![0.0; nv], &limiting, &pins, &tight) {
        Err(StepError::Picard { history }) => assert_eq!(history.len(), 2),
        other => panic!("expected a Picard failure, got {other:?}"),
    }
}

#[test]
fn uniform_boundary_value_gives_constant_airy() {
    let mesh = build_uniform(8, 0).unwrap();
    let dofs = DofMap::new(&mesh);
    let nv = mesh.n_vertices();
    let pins = top_pins(&mesh, &dofs, |_| 0.3);
    let m = MaterialModel::default();
    let sol = picard_solve_airy(&mesh, &dofs, &vec![1.0; nv], &vec![0.0; nv], &m, &pins, &SolverConfig::default()).unwrap();
    assert!(sol.airy.iter().all(|&a| (a - 0.3).abs() < 1e-10));
    assert!(bulk_energy(&mesh, &sol.airy, &vec![1.0; nv], &m) < 1e-16);
}

fn plain_state(mesh: &fracfield::mesh::QuadMesh, phi: Vec<f64>) -> FieldState {
    let nv = mesh.n_vertices();
    FieldState {
        airy: mesh.vertices().iter().map(|p| p[0] * p[1]).collect(),
        phase: PhaseState { phi, crack_mask: vec![false; nv], threshold: 0.01 },
        xi: XiField::constant(mesh, 0.05),
        step: 0,
        time: 0.0,
        seed_mask: vec![false; nv],
    }
}

#[test]
fn refinement_keeps_nodal_values() {
    let mesh = build_uniform(4, 2).unwrap();
    let phi: Vec<f64> = mesh.vertices().iter().map(|p| 1.0 - 0.5 * p[0] * p[1]).collect();
    let state = plain_state(&mesh, phi);
    let flags: BTreeSet<usize> = mesh.active_cells()[..3].iter().copied().collect();
    let (new, corr) = mesh.refine_and_coarsen(&flags, &BTreeSet::new());
    let moved = transfer_solution(&mesh, &new, &corr, &state, &DofMap::new(&new));
    for (v, p) in mesh.vertices().iter().enumerate() {
        let w = new.find_vertex(*p).unwrap();
        assert_eq!(moved.phase.phi[w], state.phase.phi[v]);
        assert_eq!(moved.airy[w], state.airy[v]);
    }
    // new vertices carry the bilinear interpolant
    for (w, p) in new.vertices().iter().enumerate() {
        assert!((moved.phase.phi[w] - (1.0 - 0.5 * p[0] * p[1])).abs() < 1e-14);
    }
}

#[test]
fn coarsening_takes_the_minimum() {
    let base = build_uniform(4, 1).unwrap();
    let target = base.active_cells()[5];
    let fine = base.refine_and_coarsen(&BTreeSet::from([target]), &BTreeSet::new()).0;
    let mut phi = vec![1.0; fine.n_vertices()];
    // the centre of the refined cell is the only non-unit value
    let key = base.cell(target).key;
    let [ox, oy] = key.origin();
    let centre = fine.find_vertex([ox + 0.5 * key.size(), oy + 0.5 * key.size()]).unwrap();
    phi[centre] = 0.2;
    let state = plain_state(&fine, phi);
    let kids: BTreeSet<usize> = fine.active_cells().iter().copied().filter(|&c| fine.cell(c).level() == 3).collect();
    assert_eq!(kids.len(), 4);
    let (coarse, corr) = fine.refine_and_coarsen(&BTreeSet::new(), &kids);
    assert_eq!(coarse.n_active(), 16);
    let moved = transfer_solution(&fine, &coarse, &corr, &state, &DofMap::new(&coarse));
    let k = corr.origin.iter().position(|o| matches!(o, CellOrigin::Coarsened(_))).unwrap();
    for v in coarse.cell(coarse.active_cells()[k]).vertices {
        assert_eq!(moved.phase.phi[v], 0.2);
    }
    assert_eq!(moved.phase.phi.iter().filter(|&&p| p < 1.0).count(), 4);
}

#[test]
fn zero_steps_reports_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let report = driver::run(small(&["loading.max_steps=0"]), dir.path()).unwrap();
    assert_eq!(report.steps, 0);
    assert_eq!(report.termination, "max_steps");
    let recs = read_csv(&dir.path().join("energies.csv")).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].step, 0);
    assert!(dir.path().join("step_00000.vtk").exists());
    assert!(dir.path().join("summary.json").exists());
    assert!(!dir.path().join(".lock").exists());
}

#[test]
fn run_writes_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let report = driver::run(small(&["loading.c=0.5"]), dir.path()).unwrap();
    assert_eq!(report.steps, 3);
    let recs = read_csv(&dir.path().join("energies.csv")).unwrap();
    assert_eq!(recs.len(), 4);
    for r in &recs {
        assert!((r.total - r.bulk - r.surface).abs() <= 1e-12 * r.total.abs().max(1.0));
        assert!(r.surface >= 0.0);
    }
    assert!(recs.windows(2).all(|w| w[1].bulk > w[0].bulk));
    let text = std::fs::read_to_string(dir.path().join("step_00003.vtk")).unwrap();
    let vtk = fracfield::io::vtk::parse(&text).unwrap();
    assert_eq!(vtk.cells.len(), 256);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 3);
    let again = RunConfig::from_toml_str(&std::fs::read_to_string(dir.path().join("config.toml")).unwrap(), &[]).unwrap();
    assert_eq!(again, small(&["loading.c=0.5"]));
}

#[test]
fn locked_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".lock"), "").unwrap();
    match driver::run(small(&[]), dir.path()) {
        Err(RunError::Locked(p)) => assert_eq!(p, dir.path()),
        other => panic!("expected a lock error, got {other:?}"),
    }
}

#[test]
fn amr_run_refines_near_the_notch() {
    let cfg = small(&[
        "mesh.amr=true",
        "mesh.max_extra_levels=2",
        "mesh.initial_refinement=true",
        "length_scale.mode=\"local\"",
        "length_scale.xi_refine=0.6",
        "length_scale.xi_coarsen=2.0",
        "loading.c=0.5",
        "loading.max_steps=2",
    ]);
    let mut sim = Simulation::new(cfg).unwrap();
    sim.advance().unwrap();
    sim.advance().unwrap();
    let mesh = sim.mesh();
    assert!(mesh.is_balanced());
    assert_eq!(sim.finest_level(), 6);
    let tip = mesh.locate([0.5, 0.575]);
    assert_eq!(mesh.cell(tip).level(), 6);
    assert!(sim.state().xi.values.len() == mesh.n_active());
    let corner = mesh.locate([0.01, 0.01]);
    assert!(mesh.cell(corner).level() < 6, "{} cells", mesh.n_active());
}
