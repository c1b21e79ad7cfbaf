//! Run configuration: a TOML file with sections mirroring every tunable in
//! the pipeline. Unknown keys are rejected; command-line flags override file
//! values; the fully resolved configuration is echoed into checkpoints and
//! reports.

use ptbc_core::env::{DomainRandCfg, EnvCfg, EvalMode};
use ptbc_core::error::{Error, Result};
use ptbc_core::model::PtbModel;
use ptbc_core::reward::RewardCfg;
use ptbc_core::trainer::{PpoConfig, TrainerCfg};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub contact_z_thresh: f64,
    pub domain_rand: DomainRandCfg,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection { contact_z_thresh: 0.01, domain_rand: DomainRandCfg::default() }
    }
}

/// Overrides applied on top of `[ppo]` for the adaptation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSection {
    pub iterations: usize,
    pub lambda_p: f64,
    pub lambda_k: f64,
    pub lr_init: f64,
    pub target_succ: f64,
}

impl Default for AdaptSection {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        AdaptSection {
            iterations: 150,
            lambda_p: ppo.lambda_p,
            lambda_k: ppo.lambda_k,
            lr_init: ppo.lr_init,
            target_succ: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub clip_len: usize,
    pub floor: f64,
    pub update_interval: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        SamplerSection {
            clip_len: ppo.clip_len,
            floor: ppo.sampler_floor,
            update_interval: ppo.sampler_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes_per_clip: usize,
    pub mode: String,
    pub format: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { episodes_per_clip: 10, mode: "train".into(), format: "json".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: PtbModel,
    pub env: EnvSection,
    pub reward: RewardCfg,
    pub ppo: PpoConfig,
    pub adapt: AdaptSection,
    pub sampler: SamplerSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }

    fn env_cfg(&self, mode: EvalMode) -> EnvCfg {
        EnvCfg {
            mode,
            domain_rand: self.env.domain_rand.clone(),
            reward: self.reward.clone(),
            contact_z_thresh: self.env.contact_z_thresh,
        }
    }

    /// Trainer configuration for base training.
    pub fn trainer_cfg(&self) -> TrainerCfg {
        let mut ppo = self.ppo.clone();
        ppo.clip_len = self.sampler.clip_len;
        ppo.sampler_floor = self.sampler.floor;
        ppo.sampler_interval = self.sampler.update_interval;
        TrainerCfg { ppo, env: self.env_cfg(EvalMode::Train), model: self.model.clone() }
    }

    /// Trainer configuration for residual adaptation (adapt-section overrides
    /// applied).
    pub fn adapt_cfg(&self) -> TrainerCfg {
        let mut cfg = self.trainer_cfg();
        cfg.ppo.iterations = self.adapt.iterations;
        cfg.ppo.lambda_p = self.adapt.lambda_p;
        cfg.ppo.lambda_k = self.adapt.lambda_k;
        cfg.ppo.lr_init = self.adapt.lr_init;
        cfg.ppo.target_succ = self.adapt.target_succ;
        cfg
    }

    /// Environment configuration for evaluation in the given mode.
    pub fn eval_env_cfg(&self, mode: EvalMode) -> EnvCfg {
        self.env_cfg(mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_rejected() {
        let r: std::result::Result<RunConfig, _> = toml::from_str("[ppo]\nnonsense = 3\n");
        assert!(r.is_err());
        let r2: std::result::Result<RunConfig, _> = toml::from_str("[mystery]\nx = 1\n");
        assert!(r2.is_err());
    }

    #[test]
    fn sampler_section_overrides_ppo() {
        let cfg: RunConfig = toml::from_str("[sampler]\nclip_len = 77\n").unwrap();
        assert_eq!(cfg.trainer_cfg().ppo.clip_len, 77);
    }

    #[test]
    fn adapt_overrides_applied() {
        let cfg: RunConfig = toml::from_str("[adapt]\nlambda_k = 0.5\niterations = 9\n").unwrap();
        let t = cfg.adapt_cfg();
        assert_eq!(t.ppo.lambda_k, 0.5);
        assert_eq!(t.ppo.iterations, 9);
        assert_eq!(cfg.trainer_cfg().ppo.lambda_k, PpoConfig::default().lambda_k);
    }
}
