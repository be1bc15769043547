//! TOML run configuration shared by every pipeline stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ecc::{build_code, CodeSpec};
use crate::error::{Error, Result};
use crate::federation::{FederationConfig, Method};
use crate::model::Architecture;
use crate::synth::DatasetSpec;
use crate::verification::ImpostorSampling;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeConfig {
    /// Field degree; the code length is `2^m - 1`.
    pub m: usize,
    pub k_min: usize,
    /// Server-assigned prefix length `l_b`.
    pub base_bits: usize,
    pub server_seed: u64,
    /// Root of the per-client seeds for the random suffixes.
    pub client_seed: u64,
}

impl Default for CodeConfig {
    fn default() -> Self {
        CodeConfig {
            m: 4,
            k_min: 7,
            base_bits: 6,
            server_seed: 7,
            client_seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 32],
            init_seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationConfig {
    /// Target warm-up TPR.
    pub q: f64,
    pub impostors: ImpostorSampling,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig {
            q: 0.9,
            impostors: ImpostorSampling::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Save a checkpoint every this many rounds; 0 disables.
    pub checkpoint_every: usize,
    pub data: DatasetSpec,
    pub code: CodeConfig,
    pub model: ModelConfig,
    pub federation: FederationConfig,
    pub verification: VerificationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("out"),
            checkpoint_every: 0,
            data: DatasetSpec::default(),
            code: CodeConfig::default(),
            model: ModelConfig::default(),
            federation: FederationConfig::default(),
            verification: VerificationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always serializable")
    }

    pub fn users(&self) -> usize {
        self.data.k_train
    }

    pub fn code_spec(&self) -> Result<CodeSpec> {
        build_code(self.code.m, self.code.k_min)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.data.dim, self.model.hidden.clone())
    }

    /// Output rows of the projection: the code length for FedUV, one per
    /// user for the baselines.
    pub fn projection_rows(&self) -> Result<usize> {
        Ok(if self.federation.method.uses_codewords() {
            self.code_spec()?.c
        } else {
            self.users()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::ConfigInvalid(msg));
        self.data
            .validate()
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        self.federation.validate()?;
        let users = self.users();
        let l_b = self.code.base_bits;
        if l_b == 0 || (l_b < 64 && (users as u128) > (1u128 << l_b)) {
            return invalid(format!(
                "{users} users do not fit in {l_b}-bit base vectors"
            ));
        }
        let spec = self
            .code_spec()
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        if spec.k <= l_b {
            return invalid(format!(
                "code dimension {} leaves no random bits after {l_b} base bits",
                spec.k
            ));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return invalid("model.hidden needs at least one non-zero width".into());
        }
        if !(self.verification.q > 0.0 && self.verification.q <= 1.0) {
            return invalid(format!(
                "verification.q must be in (0, 1], got {}",
                self.verification.q
            ));
        }
        if self.federation.method == Method::Fedaws && users < 2 {
            return invalid("fedaws needs at least two users".into());
        }
        Ok(())
    }
}
