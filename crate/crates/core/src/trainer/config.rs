//! Training hyperparameters. Paper-scale values (4096 envs, 12 experts,
//! [512, 256, 128] hidden) stay selectable; the defaults are desk-scale so a
//! full run fits in CPU minutes.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub n_envs: usize,
    pub steps_per_env: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    pub lr_init: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub desired_kl: f64,
    pub max_grad_norm: f64,
    pub lambda_p: f64,
    pub lambda_k: f64,
    pub parseval_s: f64,

    // Architecture.
    pub n_experts: usize,
    pub hidden: Vec<usize>,
    pub residual_hidden: Vec<usize>,
    pub init_log_std: f64,

    // Loop control.
    pub iterations: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Stop early once a training-mode evaluation reaches this success rate
    /// (percent); 0 disables early stopping.
    pub target_succ: f64,

    // Adaptive sampling.
    pub clip_len: usize,
    pub sampler_floor: f64,
    pub sampler_interval: usize,

    // Plumbing.
    pub normalize_obs: bool,
    pub normalize_adv: bool,
    /// Worker threads for rollouts and gradient accumulation; 0 = auto.
    /// Results are bit-identical for any setting (fixed chunking).
    pub threads: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            n_envs: 256,
            steps_per_env: 24,
            epochs: 5,
            minibatches: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            value_coeff: 1.0,
            entropy_coeff: 1e-2,
            lr_init: 1e-3,
            lr_max: 1e-2,
            lr_min: 1e-5,
            desired_kl: 0.01,
            max_grad_norm: 1.0,
            lambda_p: 1e-7,
            lambda_k: 1e-4,
            parseval_s: 2.0,
            n_experts: 4,
            hidden: vec![64, 64, 32],
            residual_hidden: vec![64, 64, 32],
            init_log_std: 0.0,
            iterations: 500,
            eval_every: 25,
            eval_episodes: 4,
            target_succ: 0.0,
            clip_len: 100,
            sampler_floor: 0.05,
            sampler_interval: 50,
            normalize_obs: true,
            normalize_adv: true,
            threads: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_envs", self.n_envs as f64),
            ("steps_per_env", self.steps_per_env as f64),
            ("epochs", self.epochs as f64),
            ("minibatches", self.minibatches as f64),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("value_coeff", self.value_coeff),
            ("lr_init", self.lr_init),
            ("lr_max", self.lr_max),
            ("lr_min", self.lr_min),
            ("desired_kl", self.desired_kl),
            ("max_grad_norm", self.max_grad_norm),
            ("parseval_s", self.parseval_s),
            ("n_experts", self.n_experts as f64),
            ("clip_len", self.clip_len as f64),
            ("sampler_interval", self.sampler_interval as f64),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::InvalidArgument(format!("ppo.{name} must be positive")));
            }
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::InvalidArgument(format!("ppo.clip {} outside (0, 1)", self.clip)));
        }
        if self.lambda_p < 0.0 || self.lambda_k < 0.0 || self.entropy_coeff < 0.0 {
            return Err(Error::InvalidArgument("ppo coefficients must be non-negative".into()));
        }
        if self.hidden.is_empty() || self.residual_hidden.is_empty() {
            return Err(Error::InvalidArgument("hidden layer lists cannot be empty".into()));
        }
        if self.clip_len < 10 {
            return Err(Error::InvalidArgument(format!("ppo.clip_len {} < 10", self.clip_len)));
        }
        if self.n_envs * self.steps_per_env % self.minibatches != 0 {
            return Err(Error::InvalidArgument(format!(
                "rollout size {} not divisible into {} minibatches",
                self.n_envs * self.steps_per_env,
                self.minibatches
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_valid() {
        PpoConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_clip_rejected() {
        let cfg = PpoConfig { clip: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn indivisible_minibatches_rejected() {
        let cfg = PpoConfig { n_envs: 7, steps_per_env: 3, minibatches: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = PpoConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PpoConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_rejected() {
        let r: std::result::Result<PpoConfig, _> = serde_json::from_str(r#"{"n_envs": 4, "bogus": 1}"#);
        assert!(r.is_err());
    }
}
