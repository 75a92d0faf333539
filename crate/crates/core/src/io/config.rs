//! Run configuration: TOML file with `mesh`, `material`, `length_scale`,
//! `loading`, `solver`, `crack` and `output` sections. Missing keys take
//! their defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::MaterialModel;
use crate::length_scale::{calibrate_delta, calibrate_eta, LengthScaleConfig, XiMode, CV_AT1};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("bad override '{0}' (expected section.key=value)")]
    Override(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub divisions_per_side: usize,
    pub max_extra_levels: u8,
    /// Adaptive refinement after each step.
    pub amr: bool,
    /// Refine the cells along the initial crack to the finest level first.
    pub initial_refinement: bool,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { divisions_per_side: 64, max_extra_levels: 4, amr: true, initial_refinement: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LengthScaleSection {
    pub mode: XiMode,
    pub c_v: f64,
    pub eta: f64,
    pub delta: f64,
    /// Derive δ and η from the base mesh size, ignoring the values above.
    pub auto_calibrate: bool,
    /// Initial ξ in units of the base mesh size.
    pub xi_iv_multiplier: f64,
    pub xi_refine: f64,
    pub xi_coarsen: f64,
    pub xi_floor: f64,
}

impl Default for LengthScaleSection {
    fn default() -> Self {
        let h = 1.0 / 64.0;
        let delta = calibrate_delta(h, 2.7, CV_AT1);
        LengthScaleSection {
            mode: XiMode::Local,
            c_v: CV_AT1,
            eta: calibrate_eta(h, 2.7, CV_AT1, delta),
            delta,
            auto_calibrate: true,
            xi_iv_multiplier: 5.0,
            xi_refine: 0.0125,
            xi_coarsen: 0.1,
            xi_floor: 0.011,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadingSection {
    /// Loading rate: Φ = ∓ c t on the two halves of the top edge.
    pub c: f64,
    pub dt: f64,
    pub t_end: f64,
    pub max_steps: usize,
    /// Steps still taken once the crack has reached the bottom edge.
    pub post_fracture_steps: usize,
}

impl Default for LoadingSection {
    fn default() -> Self {
        LoadingSection { c: 1.0, dt: 0.01, t_end: 1.0, max_steps: 1000, post_fracture_steps: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol_stagger: f64,
    pub max_stagger: usize,
    pub tol_picard: f64,
    pub max_picard: usize,
    pub linear_tol: f64,
    /// Repeat the staggered solve at the same load after remeshing.
    pub reequilibrate_after_amr: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol_stagger: 1e-5,
            max_stagger: 200,
            tol_picard: 1e-8,
            max_picard: 30,
            linear_tol: 1e-10,
            reequilibrate_after_amr: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrackSection {
    pub x0: f64,
    pub y_top: f64,
    pub y_bot: f64,
    /// Damage values below this are treated as fully broken.
    pub threshold: f64,
}

impl Default for CrackSection {
    fn default() -> Self {
        CrackSection { x0: 0.5, y_top: 1.0, y_bot: 0.575, threshold: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// VTK snapshot every this many steps; 0 disables snapshots.
    pub vtk_every: usize,
    pub csv_name: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: PathBuf::from("out"), vtk_every: 10, csv_name: "energies.csv".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSection,
    pub material: MaterialModel,
    pub length_scale: LengthScaleSection,
    pub loading: LoadingSection,
    pub solver: SolverSection,
    pub crack: CrackSection,
    pub output: OutputSection,
}

const PRESETS: &[(&str, &str)] = &[
    ("benchmark", include_str!("../../presets/benchmark.toml")),
    ("global_128", include_str!("../../presets/global_128.toml")),
    ("global_256", include_str!("../../presets/global_256.toml")),
    ("global_512", include_str!("../../presets/global_512.toml")),
];

/// Names of the built-in presets.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `section.key=value` overrides to a parsed document.
fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<(), ConfigError> {
    for ov in overrides {
        let (key, val) = ov.split_once('=').ok_or_else(|| ConfigError::Override(ov.clone()))?;
        let (section, field) = key.trim().split_once('.').ok_or_else(|| ConfigError::Override(ov.clone()))?;
        if section.is_empty() || field.is_empty() {
            return Err(ConfigError::Override(ov.clone()));
        }
        let table = doc
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(ov.clone()))?;
        table.insert(field.to_string(), parse_value(val.trim()));
    }
    Ok(())
}

impl RunConfig {
    /// Parses a TOML document, applies overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        apply_overrides(&mut doc, overrides)?;
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(name: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = PRESETS
            .iter()
            .find(|p| p.0 == name)
            .map(|p| p.1)
            .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
        Self::from_toml_str(text, overrides)
    }

    /// Lists every violated constraint; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let m = &self.mesh;
        if m.divisions_per_side < 2 || !m.divisions_per_side.is_power_of_two() {
            v.push("mesh.divisions_per_side is a power of two ≥ 2".into());
        } else if m.divisions_per_side.trailing_zeros() as u8 + m.max_extra_levels > crate::mesh::MAX_SUPPORTED_LEVEL {
            v.push(format!("mesh.max_extra_levels keeps the level ≤ {}", crate::mesh::MAX_SUPPORTED_LEVEL));
        }
        v.extend(self.material.violations("material."));
        let l = &self.length_scale;
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(l.c_v) {
            v.push("length_scale.c_v > 0".into());
        }
        if !l.auto_calibrate {
            if !(l.eta >= 0.0 && l.eta.is_finite()) {
                v.push("length_scale.eta ≥ 0".into());
            }
            if !positive(l.delta) {
                v.push("length_scale.delta > 0".into());
            }
        }
        if !positive(l.xi_iv_multiplier) {
            v.push("length_scale.xi_iv_multiplier > 0".into());
        }
        if !positive(l.xi_floor) {
            v.push("length_scale.xi_floor > 0".into());
        }
        if !(l.xi_refine < l.xi_coarsen) {
            v.push("length_scale.xi_refine < length_scale.xi_coarsen".into());
        }
        let ld = &self.loading;
        if !ld.c.is_finite() {
            v.push("loading.c is finite".into());
        }
        if !positive(ld.dt) {
            v.push("loading.dt > 0".into());
        }
        if !(ld.t_end >= 0.0) {
            v.push("loading.t_end ≥ 0".into());
        }
        let s = &self.solver;
        for (name, x) in [
            ("solver.tol_stagger", s.tol_stagger),
            ("solver.tol_picard", s.tol_picard),
            ("solver.linear_tol", s.linear_tol),
        ] {
            if !positive(x) {
                v.push(format!("{name} > 0"));
            }
        }
        if s.max_stagger == 0 {
            v.push("solver.max_stagger ≥ 1".into());
        }
        if s.max_picard == 0 {
            v.push("solver.max_picard ≥ 1".into());
        }
        let c = &self.crack;
        if !(c.x0 > 0.0 && c.x0 < 1.0) {
            v.push("crack.x0 in (0, 1)".into());
        }
        if !(0.0 <= c.y_bot && c.y_bot <= c.y_top && c.y_top <= 1.0) {
            v.push("0 ≤ crack.y_bot ≤ crack.y_top ≤ 1".into());
        }
        if !(c.threshold >= 0.0 && c.threshold < 1.0) {
            v.push("crack.threshold in [0, 1)".into());
        }
        if self.output.csv_name.is_empty() {
            v.push("output.csv_name is non-empty".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Base mesh size.
    pub fn h_base(&self) -> f64 {
        1.0 / self.mesh.divisions_per_side as f64
    }

    /// Length-scale parameters, calibrated on the base mesh if requested.
    pub fn length_scale_config(&self) -> LengthScaleConfig {
        let l = &self.length_scale;
        let h = self.h_base();
        let gc = self.material.gc;
        let (eta, delta) = if l.auto_calibrate {
            let delta = calibrate_delta(h, gc, l.c_v);
            (calibrate_eta(h, gc, l.c_v, delta), delta)
        } else {
            (l.eta, l.delta)
        };
        LengthScaleConfig {
            c_v: l.c_v,
            eta,
            delta,
            mode: l.mode,
            xi_iv: l.xi_iv_multiplier * h,
            xi_refine: l.xi_refine,
            xi_coarsen: l.xi_coarsen,
            xi_floor: l.xi_floor,
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// Reads a configuration file. A value of the form `preset:NAME` selects a
/// built-in preset instead.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("preset:")) {
        return RunConfig::preset(name, overrides);
    }
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    RunConfig::from_toml_str(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.mesh.divisions_per_side, 64);
        assert_eq!(c.length_scale.mode, XiMode::Local);
        assert!(c.length_scale.auto_calibrate);
    }

    #[test]
    fn negative_beta_is_named() {
        let e = RunConfig::from_toml_str("[material]\nbeta = -1.0\n", &[]).unwrap_err();
        match e {
            ConfigError::Invalid(v) => assert!(v.contains(&"material.beta ≥ 0".to_string())),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn all_violations_listed() {
        let e = RunConfig::from_toml_str("[material]\nbeta = -1.0\nmu = -2.0\n[loading]\ndt = 0.0\n", &[]).unwrap_err();
        let ConfigError::Invalid(v) = e else { panic!() };
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(RunConfig::from_toml_str("[mesh]\ndivisons = 8\n", &[]), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn overrides_apply() {
        let ov = vec!["length_scale.mode=fixed".to_string(), "mesh.divisions_per_side=32".to_string()];
        let c = RunConfig::from_toml_str("", &ov).unwrap();
        assert_eq!(c.length_scale.mode, XiMode::Fixed);
        assert_eq!(c.mesh.divisions_per_side, 32);
        assert!(RunConfig::from_toml_str("", &["nonsense".to_string()]).is_err());
    }

    #[test]
    fn presets_parse() {
        for name in preset_names() {
            RunConfig::preset(name, &[]).unwrap();
        }
        let c = RunConfig::preset("global_128", &[]).unwrap();
        assert_eq!(c.mesh.divisions_per_side, 128);
        assert_eq!(c.length_scale.mode, XiMode::GlobalOptimal);
        assert!((c.length_scale_config().xi_iv - 5.0 / 128.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::preset("benchmark", &[]).unwrap();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string(), &[]).unwrap(), c);
    }
}
