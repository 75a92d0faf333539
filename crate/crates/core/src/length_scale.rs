//! Regularization length ξ: calibration, global optimum and local field.
//!
//! The ξ-dependent part of the energy is
//! `E(ξ) = (Gc/c_v) ∫ [(1 - φ + η)/ξ + ξ |∇φ|²] + ∫ δ ξ`,
//! whose stationary points give both the global constant and the pointwise
//! local value.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::fem::{CellGeometry, ShapeTable};
use crate::mesh::{CellId, QuadMesh};

/// Normalisation constant of the AT1 crack profile.
pub const CV_AT1: f64 = 8.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum XiMode {
    /// ξ stays at its initial value.
    Fixed,
    /// One constant ξ minimizing the energy, updated after each step.
    GlobalOptimal,
    /// Cell-wise ξ from the pointwise stationarity condition.
    #[default]
    Local,
}

impl std::str::FromStr for XiMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(XiMode::Fixed),
            "global_optimal" | "global" => Ok(XiMode::GlobalOptimal),
            "local" => Ok(XiMode::Local),
            other => Err(format!("unknown xi mode '{other}' (fixed, global_optimal, local)")),
        }
    }
}

/// Length-scale parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LengthScaleConfig {
    pub c_v: f64,
    pub eta: f64,
    pub delta: f64,
    pub mode: XiMode,
    /// Initial value, also the value used throughout in fixed mode.
    pub xi_iv: f64,
    pub xi_refine: f64,
    pub xi_coarsen: f64,
    pub xi_floor: f64,
}

impl LengthScaleConfig {
    /// Parameters calibrated for mesh size `h`.
    pub fn calibrated(h: f64, gc: f64) -> Self {
        let delta = calibrate_delta(h, gc, CV_AT1);
        LengthScaleConfig {
            c_v: CV_AT1,
            eta: calibrate_eta(h, gc, CV_AT1, delta),
            delta,
            mode: XiMode::Local,
            xi_iv: 5.0 * h,
            xi_refine: 0.0125,
            xi_coarsen: 0.1,
            xi_floor: 0.011,
        }
    }
}

/// `δ = 3 Gc / (96 c_v h²)`.
pub fn calibrate_delta(h: f64, gc: f64, c_v: f64) -> f64 {
    3.0 * gc / (96.0 * c_v * h * h)
}

/// `η = 100 h² c_v δ / Gc`; equals 3.125 for the calibrated δ.
pub fn calibrate_eta(h: f64, gc: f64, c_v: f64, delta: f64) -> f64 {
    100.0 * h * h * c_v * delta / gc
}

/// Pointwise stationary ξ for damage `phi` and gradient `grad`.
pub fn xi_local(phi: f64, grad: [f64; 2], lsc: &LengthScaleConfig, gc: f64) -> f64 {
    let k = gc / lsc.c_v;
    let gs = grad[0] * grad[0] + grad[1] * grad[1];
    (k * (1.0 - phi + lsc.eta) / (k * gs + lsc.delta)).sqrt()
}

/// One ξ value per active cell, in active-cell order.
#[derive(Clone, Debug, PartialEq)]
pub struct XiField {
    pub values: Vec<f64>,
}

/// Summary statistics of a ξ field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct XiStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl XiField {
    pub fn constant(mesh: &QuadMesh, xi: f64) -> Self {
        XiField { values: vec![xi; mesh.n_active()] }
    }

    /// Statistics over the cells selected by `include` (by active ordinal).
    /// Falls back to all cells when the selection is empty.
    pub fn stats_where(&self, include: impl Fn(usize) -> bool) -> XiStats {
        let sel: Vec<f64> = self.values.iter().enumerate().filter(|(k, _)| include(*k)).map(|(_, &v)| v).collect();
        let vals = if sel.is_empty() { &self.values } else { &sel };
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        XiStats { min, max, mean }
    }

    pub fn stats(&self) -> XiStats {
        self.stats_where(|_| true)
    }
}

/// Local ξ: mean of the pointwise value over the 2x2 Gauss points of each
/// cell, clipped below at `xi_floor`.
pub fn xi_field_local(mesh: &QuadMesh, phi: &[f64], lsc: &LengthScaleConfig, gc: f64) -> XiField {
    let table = ShapeTable::gauss(2);
    let values = (0..mesh.n_active())
        .map(|k| {
            let geo = CellGeometry::new(mesh, k);
            let nodal = geo.gather(phi);
            let mean = (0..table.rule.len())
                .map(|q| xi_local(table.value(q, &nodal), table.gradient(q, &nodal, geo.h), lsc, gc))
                .sum::<f64>()
                / table.rule.len() as f64;
            mean.max(lsc.xi_floor)
        })
        .collect();
    XiField { values }
}

/// Integrals `(∫ (1 - φ), ∫ |∇φ|², |Ω|)`. The 2x2 rule integrates both
/// exactly for Q1 fields on square cells.
pub fn phase_integrals(mesh: &QuadMesh, phi: &[f64]) -> (f64, f64, f64) {
    let table = ShapeTable::gauss(2);
    let (mut damage, mut grad, mut area) = (0.0, 0.0, 0.0);
    for k in 0..mesh.n_active() {
        let geo = CellGeometry::new(mesh, k);
        let nodal = geo.gather(phi);
        let jac = geo.h * geo.h;
        for q in 0..table.rule.len() {
            let w = table.rule.weights[q] * jac;
            let g = table.gradient(q, &nodal, geo.h);
            damage += w * (1.0 - table.value(q, &nodal));
            grad += w * (g[0] * g[0] + g[1] * g[1]);
            area += w;
        }
    }
    (damage, grad, area)
}

/// Constant ξ minimizing the ξ-dependent energy for the given phase field.
pub fn xi_global_optimal(mesh: &QuadMesh, phi: &[f64], lsc: &LengthScaleConfig, gc: f64) -> f64 {
    let k = gc / lsc.c_v;
    let (damage, grad, area) = phase_integrals(mesh, phi);
    (k * (damage + lsc.eta * area) / (k * grad + lsc.delta * area)).sqrt()
}

/// Refinement and coarsening flags from a ξ field: refine where ξ is below
/// `xi_refine` and the cell is larger than `h_min`; coarsen where ξ exceeds
/// `xi_coarsen` and the cell is above the base level.
pub fn mark_cells(
    mesh: &QuadMesh,
    xi: &XiField,
    lsc: &LengthScaleConfig,
    h_min: f64,
) -> (BTreeSet<CellId>, BTreeSet<CellId>) {
    let mut refine = BTreeSet::new();
    let mut coarsen = BTreeSet::new();
    for (k, &c) in mesh.active_cells().iter().enumerate() {
        let cell = mesh.cell(c);
        let x = xi.values[k];
        if x < lsc.xi_refine && cell.size() > h_min * (1.0 + 1e-12) {
            refine.insert(c);
        } else if x > lsc.xi_coarsen && cell.level() > mesh.min_level() {
            coarsen.insert(c);
        }
    }
    (refine, coarsen)
}
