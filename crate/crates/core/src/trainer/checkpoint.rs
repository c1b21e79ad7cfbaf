//! Checkpoint file: one JSON document holding the stage tag, architecture,
//! all parameters, normalizer statistics, sampler state, RNG states, the
//! resolved configuration, and (for exact training resume) optimizer moments
//! and per-environment snapshots.

use super::config::PpoConfig;
use super::sampler::SamplerState;
use super::update::OptimState;
use super::{StageTag, TrainModel};
use crate::env::{EnvCfg, EnvSave, OBS_LAYOUT_VERSION};
use crate::error::{Error, Result};
use crate::mlp::MlpNet;
use crate::model::PtbModel;
use crate::obsnorm::RunningNorm;
use crate::policy::{GaussianHead, MoeNet, MoePolicy, ResidualPolicy};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDesc {
    pub obs_dim: usize,
    pub critic_obs_dim: usize,
    pub act_dim: usize,
    pub n_experts: usize,
    pub hidden: Vec<usize>,
    pub residual_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsBlob {
    pub experts: Vec<MlpNet>,
    pub gating: MlpNet,
    pub critic: MoeNet,
    pub residual: Option<ResidualPolicy>,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainEnvSave {
    pub env: EnvSave,
    pub ep_return: f64,
    pub ep_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub optim: OptimState,
    pub envs: Vec<TrainEnvSave>,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub obs_layout_version: u32,
    pub stage: StageTag,
    pub arch: ArchDesc,
    pub params: ParamsBlob,
    pub norm_actor: RunningNorm,
    pub norm_critic: RunningNorm,
    pub sampler: Option<SamplerState>,
    pub rng_state: u64,
    pub iteration: u64,
    pub config: PpoConfig,
    pub env_cfg: EnvCfg,
    pub model: PtbModel,
    pub train_state: Option<TrainState>,
}

impl Checkpoint {
    pub fn to_model(&self) -> TrainModel {
        TrainModel {
            actor: MoePolicy {
                net: MoeNet {
                    experts: self.params.experts.clone(),
                    gating: self.params.gating.clone(),
                },
                head: GaussianHead { log_std: self.params.log_std.clone() },
            },
            critic: self.params.critic.clone(),
            residual: self.params.residual.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "schema_version: expected {CHECKPOINT_SCHEMA_VERSION}, found {}",
                self.schema_version
            )));
        }
        if self.obs_layout_version != OBS_LAYOUT_VERSION {
            return Err(Error::Schema(format!(
                "obs_layout_version: checkpoint has {}, this build expects {OBS_LAYOUT_VERSION}",
                self.obs_layout_version
            )));
        }
        let stage_residual = matches!(self.stage, StageTag::ResidualAdapt);
        if stage_residual != self.params.residual.is_some() {
            return Err(Error::Schema("stage tag does not match presence of residual params".into()));
        }
        for (i, e) in self.params.experts.iter().enumerate() {
            e.check_shapes().map_err(|err| Error::Schema(format!("params.experts[{i}]: {err}")))?;
        }
        self.params.gating.check_shapes().map_err(|e| Error::Schema(format!("params.gating: {e}")))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serialization");
        std::fs::write(path.as_ref(), text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}
