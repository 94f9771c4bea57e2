//! Experiment configuration (TOML, unknown keys rejected).
//!
//! ```
//! use homoscale::config::ExperimentConfig;
//!
//! let cfg = ExperimentConfig::from_toml_str("seed = 3\n[expansion]\nalpha = 3.0\n").unwrap();
//! assert_eq!(cfg.alpha(), 3.0);
//! assert!(ExperimentConfig::from_toml_str("[eps]\nladdr = [0.1]\n").is_err());
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell::CoefficientSpec;
use crate::drift::LeadingWiring;
use crate::environment::DiffusionModel;
use crate::error::{Error, Result};
use crate::expansion::{PlanOptions, TestFunction};
use crate::macro_pde::Iota;
use crate::oscillatory::{TimeScheme, EPS_LADDER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub theta: f64,
    pub sigma0: f64,
    pub half_width: f64,
    pub ny: usize,
    pub fd_order: usize,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self { theta: 1.0, sigma0: std::f64::consts::SQRT_2, half_width: 8.0, ny: 256, fd_order: 6 }
    }
}

impl EnvironmentConfig {
    pub fn model(&self) -> Result<DiffusionModel> {
        DiffusionModel::ornstein_uhlenbeck_with_order(self.theta, self.sigma0, self.half_width, self.ny, self.fd_order)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub spec: CoefficientSpec,
    pub nz: usize,
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        Self { spec: CoefficientSpec::reference(), nz: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionConfig {
    pub alpha: f64,
    pub include_u1: bool,
    pub j0_override: Option<usize>,
    /// Corrector depth; derived from the plan when absent.
    pub depth: Option<usize>,
    pub leading: LeadingWiring,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self { alpha: 1.0, include_u1: true, j0_override: None, depth: None, leading: LeadingWiring::Kappa0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsConfig {
    pub ladder: Vec<f64>,
    /// Must agree with `expansion.alpha` when both are given.
    pub alpha: Option<f64>,
    pub budget_node_steps: Option<u64>,
    pub n_seeds: usize,
    pub scheme: TimeScheme,
}

impl Default for EpsConfig {
    fn default() -> Self {
        Self { ladder: EPS_LADDER.to_vec(), alpha: None, budget_node_steps: None, n_seeds: 8, scheme: TimeScheme::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroConfig {
    pub iota: Iota,
    pub t_final: f64,
    pub nt: usize,
    pub substeps: usize,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self { iota: Iota::default(), t_final: 0.5, nt: 64, substeps: 4 }
    }
}

/// Integrand of the invariance-principle experiment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvarianceProfile {
    /// `⟨a⟩^k(y) − a^{k,eff}` of the sub-diffusive cascade.
    #[default]
    MeanA,
    /// `g(y) = y`.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LawConfig {
    pub phi_dictionary: Vec<TestFunction>,
    pub n_paths: usize,
    pub ks_level: f64,
    /// Level of the confidence intervals.
    pub ci_level: f64,
    /// ε of the law experiment; the smallest ladder entry when absent.
    pub epsilon: Option<f64>,
    pub invariance_profile: InvarianceProfile,
    pub invariance_t: Vec<f64>,
    pub invariance_eps: Vec<f64>,
    pub invariance_paths: usize,
    /// Time scaling of `A^ε`; the experiment's α when absent.
    pub invariance_alpha: Option<f64>,
}

impl Default for LawConfig {
    fn default() -> Self {
        Self {
            phi_dictionary: TestFunction::dictionary(),
            n_paths: 400,
            ks_level: 0.01,
            ci_level: 0.05,
            epsilon: None,
            invariance_profile: InvarianceProfile::MeanA,
            invariance_t: vec![0.5, 1.0, 2.0],
            invariance_eps: vec![0.1, 0.05],
            invariance_paths: 1000,
            invariance_alpha: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub coefficient: CoefficientConfig,
    #[serde(default)]
    pub expansion: ExpansionConfig,
    #[serde(default)]
    pub eps: EpsConfig,
    #[serde(default, rename = "macro")]
    pub macro_: MacroConfig,
    #[serde(default)]
    pub law: LawConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn alpha(&self) -> f64 {
        self.eps.alpha.unwrap_or(self.expansion.alpha)
    }

    /// Replace every α in the document.
    pub fn override_alpha(&mut self, alpha: f64) -> Result<()> {
        self.expansion.alpha = alpha;
        self.eps.alpha = None;
        self.validate()
    }

    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions { include_u1: self.expansion.include_u1, j0_override: self.expansion.j0_override }
    }

    /// ε of the law experiment.
    pub fn law_epsilon(&self) -> f64 {
        self.law.epsilon.unwrap_or_else(|| self.eps.ladder.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Some(a) = self.eps.alpha {
            if (a - self.expansion.alpha).abs() > 1e-12 {
                return bad(format!("eps.alpha = {a} disagrees with expansion.alpha = {}", self.expansion.alpha));
            }
        }
        if !(self.alpha() > 0.0) {
            return bad("alpha must be positive".into());
        }
        if self.eps.ladder.is_empty() {
            return bad("eps.ladder is empty".into());
        }
        for &e in self.eps.ladder.iter().chain(self.law.invariance_eps.iter()).chain(self.law.epsilon.iter()) {
            if !(0.02..=0.5).contains(&e) {
                return bad(format!("epsilon {e} outside [0.02, 0.5]"));
            }
        }
        if self.macro_.nt == 0 || self.macro_.substeps == 0 || !(self.macro_.t_final > 0.0) {
            return bad("macro.nt, macro.substeps and macro.t_final must be positive".into());
        }
        if !(0.0..1.0).contains(&self.law.ks_level) || !(0.0..1.0).contains(&self.law.ci_level) {
            return bad("law.ks_level and law.ci_level must lie in (0, 1)".into());
        }
        if self.law.n_paths < 2 || self.law.invariance_paths < 2 || self.eps.n_seeds == 0 {
            return bad("ensembles need at least two members".into());
        }
        if self.law.phi_dictionary.is_empty() {
            return bad("law.phi_dictionary is empty".into());
        }
        Ok(())
    }

    /// Canonical TOML rendering.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn rejects_unknown_keys_everywhere() {
        for doc in ["bogus = 1", "[environment]\ntheta = 1.0\nsigma0 = 1.0\nhalf_width = 8.0\nny = 64\nfd_order = 6\nextra = 2", "[law]\nks = 0.1", "[macro]\nT = 1.0", "[zzz]\n"] {
            assert!(matches!(ExperimentConfig::from_toml_str(doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn alpha_consistency() {
        assert!(ExperimentConfig::from_toml_str("[expansion]\nalpha = 3.0\n[eps]\nalpha = 1.0\n").is_err());
        let mut cfg = ExperimentConfig::from_toml_str("[expansion]\nalpha = 3.0\n[eps]\nalpha = 3.0\n").unwrap();
        cfg.override_alpha(5.0).unwrap();
        assert_eq!(cfg.alpha(), 5.0);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn sections_parse() {
        let doc = r#"
seed = 9
[coefficient]
spec = { preset = "z_only", base = 2.0, amplitude = 1.0 }
nz = 128
[expansion]
alpha = 3.0
leading = "kappa1"
include_u1 = false
[eps]
ladder = [0.1, 0.05]
budget_node_steps = 1000
scheme = "crank_nicolson"
[macro]
iota = { kind = "bump", radius = 2.0 }
t_final = 0.25
[law]
phi_dictionary = [{ kind = "gaussian", center = 0.0, width = 1.0 }]
n_paths = 50
"#;
        let cfg = ExperimentConfig::from_toml_str(doc).unwrap();
        assert_eq!(cfg.expansion.leading, LeadingWiring::Kappa1);
        assert_eq!(cfg.eps.scheme, TimeScheme::CrankNicolson);
        assert_eq!(cfg.law_epsilon(), 0.05);
        assert_eq!(cfg.macro_.iota, Iota::Bump { radius: 2.0 });
    }
}
