//! Run configuration: a TOML document mirroring [`RunConfig`], overridable
//! from the command line.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use favsite::env::{calibrate_law, DisplacementLaw, FamilyId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: String,
    /// Free parameters of the family; the preset when absent.
    pub params: Option<Vec<f64>>,
    pub master_seed: u64,
    pub replicas: u64,
    pub n_grid: Vec<u64>,
    pub m_grid: Vec<u64>,
    pub gamma: f64,
    pub eps_grid: Vec<f64>,
    pub lambda_cap: f64,
    pub v_margin: f64,
    pub arena_cap: usize,
    pub vertex_budget: usize,
    /// Monte Carlo sample count for the spine and tail-bound checks.
    pub samples: u64,
    /// Sub-checks to run; empty means all of them.
    pub checks: Vec<String>,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: "f1".into(),
            params: None,
            master_seed: 1,
            replicas: 20,
            n_grid: vec![1_000, 10_000, 100_000],
            m_grid: vec![1_000],
            gamma: 1.5,
            eps_grid: vec![0.3],
            lambda_cap: 3f64.exp() - 1.0,
            v_margin: 0.5,
            arena_cap: 1 << 26,
            vertex_budget: 5,
            samples: 100_000,
            checks: Vec::new(),
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the serialized configuration without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    pub fn law(&self) -> anyhow::Result<DisplacementLaw> {
        let fam = FamilyId::parse(&self.family)?;
        let params = self.params.clone().unwrap_or_else(|| fam.default_params());
        Ok(calibrate_law(fam, &params)?)
    }

    pub fn wants(&self, check: &str) -> bool {
        self.checks.is_empty() || self.checks.iter().any(|c| c == check)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.replicas == 0 {
            bail!("replicas must be positive");
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 2) {
            bail!("every n in n_grid must be at least 2");
        }
        if self.m_grid.is_empty() || self.m_grid.contains(&0) {
            bail!("every m in m_grid must be positive");
        }
        if self.eps_grid.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            bail!("eps values must lie in (0, 1]");
        }
        if self.lambda_cap.is_nan() || self.lambda_cap <= 0.0 {
            bail!("lambda_cap must be positive");
        }
        if self.samples < 2 {
            bail!("samples must be at least 2");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            params: Some(vec![0.25]),
            checks: vec!["persistence".into()],
            lambda_cap: 0.1 + 0.2,
            ..RunConfig::default()
        };
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn hash_ignores_output_directory_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("famly = \"f1\"").is_err());
        let c: RunConfig = toml::from_str("family = \"f3\"\nreplicas = 3").unwrap();
        assert_eq!(c.replicas, 3);
        assert_eq!(c.gamma, 1.5);
    }
}
