//! Experiment configuration: one TOML document plus dotted-path overrides.
//!
//! Every module-level precondition is checked at parse time with a
//! field-path message, and the resolved document round-trips losslessly so
//! that each output directory can embed the exact configuration it ran.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{FluxModel, SigmaModel, TruncationSpec};
use crate::error::{KsError, Result};
use crate::noise::{NoiseModel, SpectrumLaw};
use crate::solver::{Problem, Scheme, SolverConfig};
use crate::spectral::{SemigroupSpec, SineGrid};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub noise: NoiseConfig,
    pub flux: FluxConfig,
    pub sigma: SigmaConfig,
    pub solver: SolverConfig,
    pub ensemble: EnsembleConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// Interval length.
    pub l: f64,
    /// Resolved sine modes.
    pub k: usize,
    /// Interior grid points for nonlinear/noise evaluation.
    pub m: usize,
    /// Lower bound enforced on the semigroup rates.
    pub mu_min: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kappa: f64,
    pub gamma: f64,
    pub k_noise: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxConfig {
    pub kind: FluxKindConfig,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Knots for `kind = "table"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
}

fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxKindConfig {
    Quadratic,
    Power,
    Table,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaConfig {
    pub mode: SigmaModeConfig,
    /// Constant (additive) part.
    #[serde(default)]
    pub base: f64,
    /// State coefficient (the Lipschitz constant C of the affine family).
    #[serde(default)]
    pub c: f64,
    /// Gradient coefficient; full mode only.
    #[serde(default)]
    pub grad: f64,
    /// Second-derivative coefficient (the constant eps); full mode only.
    #[serde(default)]
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaModeConfig {
    StateOnly,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "jsonl".into()]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domain: DomainConfig { l: std::f64::consts::PI, k: 64, m: 128, mu_min: 1.0 },
            noise: NoiseConfig { kappa: 1.0, gamma: 1.5, k_noise: 32 },
            flux: FluxConfig { kind: FluxKindConfig::Quadratic, p: 2.0, table: None },
            sigma: SigmaConfig { mode: SigmaModeConfig::StateOnly, base: 0.0, c: 0.1, grad: 0.0, eps: 0.0 },
            solver: SolverConfig {
                dt: 1e-3,
                t_end: 1.0,
                n_trunc: 10.0,
                levels: 4,
                scheme: Scheme::ExponentialEuler,
                picard_tol: 1e-10,
                picard_max_iter: 50,
                exact_ou: true,
            },
            ensemble: EnsembleConfig { n_paths: 1000, master_seed: 42 },
            output: OutputConfig { directory: "out".into(), formats: default_formats() },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if !(d.l > 0.0) || !d.l.is_finite() {
            return Err(KsError::Config(format!("domain.l: must be > 0, got {}", d.l)));
        }
        if d.k == 0 {
            return Err(KsError::Config("domain.k: must be >= 1".into()));
        }
        if d.m < d.k {
            return Err(KsError::Config(format!(
                "domain.m: grid must resolve all modes, need m >= k = {}, got {}",
                d.k, d.m
            )));
        }
        if 2 * d.m < 3 * d.k {
            return Err(KsError::Config(format!(
                "domain.m: flux dealiasing needs m >= ceil(3k/2) = {}, got {}",
                (3 * d.k).div_ceil(2),
                d.m
            )));
        }
        if !(d.mu_min > 0.0) {
            return Err(KsError::Config(format!("domain.mu_min: must be > 0, got {}", d.mu_min)));
        }
        let n = &self.noise;
        if n.kappa < 0.0 {
            return Err(KsError::Config(format!("noise.kappa: must be >= 0, got {}", n.kappa)));
        }
        if !(n.gamma > 0.5) {
            return Err(KsError::Config(format!(
                "noise.gamma: must be > 1/2 for a trace-class spectrum, got {}",
                n.gamma
            )));
        }
        if n.k_noise == 0 || n.k_noise > d.k {
            return Err(KsError::Config(format!(
                "noise.k_noise: must be in 1..=domain.k = {}, got {}",
                d.k, n.k_noise
            )));
        }
        let f = &self.flux;
        match f.kind {
            FluxKindConfig::Quadratic => {
                if f.p != 2.0 {
                    return Err(KsError::Config(format!(
                        "flux.p: the quadratic flux has p = 2, got {}",
                        f.p
                    )));
                }
            }
            FluxKindConfig::Power => {
                if !(f.p >= 1.0) {
                    return Err(KsError::Config(format!("flux.p: must be >= 1, got {}", f.p)));
                }
            }
            FluxKindConfig::Table => {
                if f.table.is_none() {
                    return Err(KsError::Config("flux.table: required for kind = \"table\"".into()));
                }
            }
        }
        let s = &self.sigma;
        if s.mode == SigmaModeConfig::StateOnly && (s.grad != 0.0 || s.eps != 0.0) {
            return Err(KsError::Config(
                "sigma.grad / sigma.eps: must be 0 in state-only mode".into(),
            ));
        }
        self.solver.validate().map_err(|e| KsError::Config(format!("solver: {e}")))?;
        if self.ensemble.n_paths == 0 {
            return Err(KsError::Config("ensemble.n_paths: must be >= 1".into()));
        }
        Ok(())
    }

    pub fn flux_model(&self) -> Result<FluxModel> {
        match self.flux.kind {
            FluxKindConfig::Quadratic => Ok(FluxModel::quadratic()),
            FluxKindConfig::Power => FluxModel::power(self.flux.p),
            FluxKindConfig::Table => FluxModel::table(
                self.flux
                    .table
                    .clone()
                    .ok_or_else(|| KsError::Config("flux.table missing".into()))?,
            ),
        }
    }

    pub fn sigma_model(&self) -> SigmaModel {
        match self.sigma.mode {
            SigmaModeConfig::StateOnly => SigmaModel::state_only(self.sigma.base, self.sigma.c),
            SigmaModeConfig::Full => {
                SigmaModel::full(self.sigma.base, self.sigma.c, self.sigma.grad, self.sigma.eps)
            }
        }
    }

    /// Assembles the full problem (basis, grid, noise, models).
    pub fn build_problem(&self) -> Result<Problem> {
        self.validate()?;
        let basis = SemigroupSpec::build(self.domain.l, self.domain.k, self.domain.mu_min)?;
        let grid = SineGrid::new(self.domain.l, self.domain.m)?;
        let noise = NoiseModel::build(
            &basis,
            SpectrumLaw { kappa: self.noise.kappa, gamma: self.noise.gamma },
            self.noise.k_noise,
            &grid,
        )?;
        Ok(Problem {
            basis,
            grid,
            noise,
            flux: self.flux_model()?,
            trunc: TruncationSpec::new(self.solver.n_trunc)?,
            sigma: self.sigma_model(),
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| KsError::Config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Loads from `path` (or the defaults when absent) and applies
    /// `key.path=value` overrides before validation.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => ExperimentConfig::default().to_toml_string(),
        };
        let mut table: toml::Table =
            toml::from_str(&base).map_err(|e| KsError::Config(format!("parse error: {e}")))?;
        for entry in overrides {
            let (key, value) = entry
                .split_once('=')
                .ok_or_else(|| KsError::Config(format!("override '{entry}' is not key=value")))?;
            apply_override(&mut table, key.trim(), value.trim())?;
        }
        let text = toml::to_string(&table).map_err(|e| KsError::Config(e.to_string()))?;
        Self::from_toml_str(&text)
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(KsError::Config(format!("override key '{key}' has empty segments")));
    }
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| KsError::Config(format!("override key '{key}' crosses a non-table")))?;
    }
    current.insert(parts[parts.len() - 1].to_string(), parse_toml_value(value));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(text, back.to_toml_string());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = ExperimentConfig::load(
            None,
            &["solver.dt=1e-4".into(), "ensemble.n_paths=7".into(), "sigma.c=0.25".into()],
        )
        .unwrap();
        assert_eq!(cfg.solver.dt, 1e-4);
        assert_eq!(cfg.ensemble.n_paths, 7);
        assert_eq!(cfg.sigma.c, 0.25);
    }

    #[test]
    fn invalid_configs_report_field_paths() {
        let err = ExperimentConfig::load(None, &["domain.m=10".into()]).unwrap_err();
        assert!(err.to_string().contains("domain.m"), "{err}");
        let err = ExperimentConfig::load(None, &["noise.gamma=0.4".into()]).unwrap_err();
        assert!(err.to_string().contains("noise.gamma"), "{err}");
        let err = ExperimentConfig::load(None, &["sigma.eps=0.1".into()]).unwrap_err();
        assert!(err.to_string().contains("sigma"), "{err}");
        assert!(ExperimentConfig::load(None, &["bogus".into()]).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::load(None, &["solver.typo_field=3".into()]).is_err());
    }

    #[test]
    fn problem_assembly_matches_config() {
        let cfg = ExperimentConfig::default();
        let p = cfg.build_problem().unwrap();
        assert_eq!(p.basis.modes(), cfg.domain.k);
        assert_eq!(p.grid.len(), cfg.domain.m);
        assert_eq!(p.noise.modes(), cfg.noise.k_noise);
        assert_eq!(p.trunc.radius(), cfg.solver.n_trunc);
    }

    #[test]
    fn full_sigma_mode_accepts_eps() {
        let cfg = ExperimentConfig::load(
            None,
            &["sigma.mode=\"full\"".into(), "sigma.eps=0.05".into()],
        )
        .unwrap();
        let m = cfg.sigma_model();
        assert_eq!(m.lip_eps(), 0.05);
    }
}
