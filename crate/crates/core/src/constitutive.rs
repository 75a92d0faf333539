//! Strain-limiting anti-plane constitutive law and degradation function.
//!
//! In terms of the Airy-type stress function Φ the shear stress magnitude is
//! `|∇Φ|`, and the energy density (before degradation) is
//! `W = |∇Φ|² / (1 + β^α g^α |∇Φ|^{2α})^{1/α}`.

use serde::{Deserialize, Serialize};

/// Material parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialModel {
    /// Shear modulus.
    pub mu: f64,
    /// Critical energy release rate.
    #[serde(rename = "Gc")]
    pub gc: f64,
    /// Strain-limiting parameter; zero gives linear elasticity.
    pub beta: f64,
    /// Strain-limiting exponent.
    pub alpha: f64,
    /// Residual stiffness of fully damaged material.
    pub kappa: f64,
}

impl Default for MaterialModel {
    fn default() -> Self {
        MaterialModel { mu: 80.8, gc: 2.7, beta: 1e-3, alpha: 1.0, kappa: 1e-10 }
    }
}

/// `x^a` for `x >= 0`, `a > 0`, via exp/log with an exact zero.
fn pow_nonneg(x: f64, a: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if a == 1.0 {
        x
    } else {
        (a * x.ln()).exp()
    }
}

impl MaterialModel {
    /// Lists the violated parameter constraints, using `prefix` for names.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            v.push(format!("{prefix}mu > 0"));
        }
        if !(self.gc > 0.0 && self.gc.is_finite()) {
            v.push(format!("{prefix}Gc > 0"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            v.push(format!("{prefix}beta ≥ 0"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            v.push(format!("{prefix}alpha > 0"));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            v.push(format!("{prefix}kappa in (0, 1)"));
        }
        v
    }

    /// `1 + β^α s^α |∇Φ|^{2α}` raised to `1/α`, with `s` the degradation.
    fn denominator(&self, grad_sq: f64, s: f64) -> f64 {
        if self.beta == 0.0 || grad_sq == 0.0 {
            return 1.0;
        }
        let a = self.alpha;
        let inner = 1.0 + pow_nonneg(self.beta * s * grad_sq, a);
        pow_nonneg(inner, 1.0 / a)
    }

    /// Strain response `ψ₁(r) = 1 / (2μ (1 + β^α r^{2α})^{1/α})`, so that
    /// strain = ψ₁(|T|) T.
    pub fn psi1(&self, r: f64) -> f64 {
        1.0 / (2.0 * self.mu * self.denominator(r * r, 1.0))
    }

    /// Degradation `g(φ) = (1 - κ) φ² + κ`.
    pub fn degradation(&self, phi: f64) -> f64 {
        (1.0 - self.kappa) * phi * phi + self.kappa
    }

    /// `dg/dφ`.
    pub fn degradation_derivative(&self, phi: f64) -> f64 {
        2.0 * (1.0 - self.kappa) * phi
    }

    /// Energy density `W(∇Φ, φ)`.
    pub fn energy_density(&self, grad: [f64; 2], phi: f64) -> f64 {
        let gs = grad[0] * grad[0] + grad[1] * grad[1];
        gs / self.denominator(gs, self.degradation(phi))
    }

    /// Frozen coefficient of the Picard linearization: `g(φ)` over the
    /// denominator evaluated at the previous iterate's gradient.
    pub fn picard_coefficient(&self, phi: f64, grad_prev: [f64; 2]) -> f64 {
        let g = self.degradation(phi);
        let gs = grad_prev[0] * grad_prev[0] + grad_prev[1] * grad_prev[1];
        g / self.denominator(gs, g)
    }

    /// Reaction coefficient of the damage equation, `μ (1 - κ) W`.
    pub fn phase_reaction_coefficient(&self, grad: [f64; 2], phi_prev: f64) -> f64 {
        self.mu * (1.0 - self.kappa) * self.energy_density(grad, phi_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi1_at_zero_and_linear_limit() {
        let m = MaterialModel::default();
        assert!((m.psi1(0.0) - 1.0 / (2.0 * 80.8)).abs() < 1e-15);
        let lin = MaterialModel { beta: 0.0, ..m };
        for r in [0.0, 1.0, 1e6] {
            assert_eq!(lin.psi1(r), 1.0 / (2.0 * 80.8));
        }
    }

    #[test]
    fn strain_stays_bounded() {
        // for α = 1, r ψ₁(r) = r / (2μ(1 + β r²)) peaks at r = β^{-1/2}
        let m = MaterialModel::default();
        let peak = 1.0 / (4.0 * m.mu * m.beta.sqrt());
        let r_peak = 1.0 / m.beta.sqrt();
        assert!((r_peak * m.psi1(r_peak) - peak).abs() < 1e-14);
        let mut r = 1e-3;
        while r < 1e8 {
            assert!(r * m.psi1(r) <= peak * (1.0 + 1e-14));
            r *= 1.3;
        }
        assert!(1e8 * m.psi1(1e8) < 1e-6);
    }

    #[test]
    fn degradation_values() {
        let m = MaterialModel::default();
        assert_eq!(m.degradation(0.0), 1e-10);
        assert!((m.degradation(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn energy_density_reduces_to_quadratic() {
        let m = MaterialModel { beta: 0.0, ..Default::default() };
        assert!((m.energy_density([3.0, 4.0], 0.3) - 25.0).abs() < 1e-12);
        assert_eq!(m.picard_coefficient(0.5, [10.0, 0.0]), m.degradation(0.5));
    }

    #[test]
    fn general_alpha_matches_powf() {
        let m = MaterialModel { alpha: 2.5, beta: 0.01, ..Default::default() };
        let gs: f64 = 13.0;
        let g = m.degradation(0.7);
        let expect = gs / (1.0 + (m.beta * g * gs).powf(2.5)).powf(1.0 / 2.5);
        assert!((m.energy_density([2.0, 3.0], 0.7) - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn violations_named() {
        let m = MaterialModel { beta: -1.0, mu: 0.0, ..Default::default() };
        let v = m.violations("material.");
        assert!(v.contains(&"material.beta ≥ 0".to_string()));
        assert!(v.contains(&"material.mu > 0".to_string()));
    }
}
