//! Training orchestration: base pretraining of the mixture-of-experts
//! controller and residual adaptation on top of a frozen base, both driven
//! by the same PPO loop with adaptive sampling and KL-adaptive learning rate.

pub mod checkpoint;
pub mod config;
pub mod rollout;
pub mod sampler;
pub mod update;

pub use checkpoint::{ArchDesc, Checkpoint, ParamsBlob, TrainEnvSave, TrainState, CHECKPOINT_SCHEMA_VERSION};
pub use config::PpoConfig;
pub use rollout::{collect_rollouts, compute_gae, EnvSlot, RolloutBuffer, Transition};
pub use sampler::{SamplerDist, SamplerState, SegEvent};
pub use update::{
    adapt_lr, flatten_grads, flatten_trainable, minibatch_gradients, minibatch_loss, ppo_update,
    write_trainable, ModelGrads, OptimState, UpdateStats,
};

use crate::env::{BalancerEnv, EnvCfg, ACTOR_OBS_DIM, ACT_DIM, CRITIC_OBS_DIM, OBS_LAYOUT_VERSION};
use crate::error::{Error, Result};
use crate::mlp::MlpScratch;
use crate::model::PtbModel;
use crate::motion::MotionLibrary;
use crate::obsnorm::RunningNorm;
use crate::parallel::resolve_threads;
use crate::policy::{GaussianHead, MoeNet, MoePolicy, MoeScratch, PolicyView, ResidualPolicy};
use crate::rng::{tags, Prng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Base,
    ResidualAdapt,
}

/// The networks a training stage touches. `residual: None` marks the base
/// stage; in the adaptation stage the actor is frozen and only the residual,
/// critic, and shared log-std receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainModel {
    pub actor: MoePolicy,
    pub critic: MoeNet,
    pub residual: Option<ResidualPolicy>,
}

/// Reusable buffers for policy evaluation in the rollout loop.
#[derive(Debug, Default)]
pub struct RolloutScratch {
    moe: MoeScratch,
    mlp: MlpScratch,
}

impl TrainModel {
    pub fn new_base(cfg: &PpoConfig, rng: &mut Prng) -> Self {
        TrainModel {
            actor: MoePolicy::new(ACTOR_OBS_DIM, ACT_DIM, cfg.n_experts, &cfg.hidden, cfg.init_log_std, rng),
            critic: MoeNet::new(CRITIC_OBS_DIM, 1, cfg.n_experts, &cfg.hidden, rng),
            residual: None,
        }
    }

    pub fn stage(&self) -> StageTag {
        if self.residual.is_some() {
            StageTag::ResidualAdapt
        } else {
            StageTag::Base
        }
    }

    pub fn head(&self) -> &GaussianHead {
        &self.actor.head
    }

    /// Action mean under the current stage (base, or base + residual).
    pub fn mean_scratch(&self, obs: &[f64], s: &mut RolloutScratch) -> [f64; ACT_DIM] {
        let base = self.actor.net.mean_into(obs, &mut s.moe);
        let mut out = [base[0], base[1]];
        if let Some(res) = self.residual.as_ref() {
            let r = res.net.eval_into(obs, &mut s.mlp);
            out[0] += r[0];
            out[1] += r[1];
        }
        out
    }

    pub fn view(&self) -> PolicyView<'_> {
        match self.residual.as_ref() {
            None => PolicyView::Base(&self.actor),
            Some(res) => PolicyView::Composite { base: &self.actor, residual: res },
        }
    }
}

/// Full configuration of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerCfg {
    pub ppo: PpoConfig,
    pub env: EnvCfg,
    pub model: PtbModel,
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterLog {
    pub iteration: u64,
    pub mean_reward: f64,
    pub episodes: usize,
    pub successes: usize,
    pub mean_ep_len: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl_penalty: f64,
    pub parseval: f64,
    pub measured_kl: f64,
    pub lr: f64,
    pub eval_succ: Option<f64>,
    pub aborted: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<IterLog>,
    pub aborted: bool,
}

struct TrainRun {
    cfg: TrainerCfg,
    model: TrainModel,
    opt: OptimState,
    lr: f64,
    slots: Vec<EnvSlot>,
    sampler: SamplerState,
    norm_actor: RunningNorm,
    norm_critic: RunningNorm,
    shuffle_rng: Prng,
    eval_rng_seed: u64,
    iteration: u64,
    update_norm: bool,
    /// Serialized frozen base actor (adaptation stage): verified unchanged
    /// before every save.
    frozen_actor: Option<String>,
    segments: Vec<Vec<(usize, usize)>>,
}

fn build_slots(cfg: &TrainerCfg, seed: u64) -> Vec<EnvSlot> {
    (0..cfg.ppo.n_envs)
        .map(|i| EnvSlot {
            env: BalancerEnv::new(
                cfg.model.clone(),
                cfg.env.clone(),
                Prng::derived_indexed(seed, tags::ROLLOUT_ENV, i as u64),
            ),
            ep_return: 0.0,
            ep_len: 0,
        })
        .collect()
}

impl TrainRun {
    fn new_base(library: &MotionLibrary, cfg: &TrainerCfg, seed: u64) -> Result<Self> {
        cfg.ppo.validate()?;
        let mut init_rng = Prng::derived(seed, tags::INIT);
        let model = TrainModel::new_base(&cfg.ppo, &mut init_rng);
        let opt = OptimState::new(&model);
        let mut run = TrainRun {
            lr: cfg.ppo.lr_init,
            opt,
            slots: build_slots(cfg, seed),
            sampler: SamplerState::new(
                &library.clips.iter().map(|c| crate::motion::segment_clips(c, cfg.ppo.clip_len).len()).collect::<Vec<_>>(),
                cfg.ppo.sampler_floor,
                cfg.ppo.sampler_interval,
            ),
            norm_actor: RunningNorm::new(ACTOR_OBS_DIM, cfg.ppo.normalize_obs),
            norm_critic: RunningNorm::new(CRITIC_OBS_DIM, cfg.ppo.normalize_obs),
            shuffle_rng: Prng::derived(seed, tags::MINIBATCH),
            eval_rng_seed: seed,
            iteration: 0,
            update_norm: true,
            frozen_actor: None,
            segments: library
                .clips
                .iter()
                .map(|c| crate::motion::segment_clips(c, cfg.ppo.clip_len))
                .collect(),
            model,
            cfg: cfg.clone(),
        };
        run.assign_all(library);
        Ok(run)
    }

    fn new_adapt(base: &Checkpoint, library: &MotionLibrary, cfg: &TrainerCfg, seed: u64) -> Result<Self> {
        cfg.ppo.validate()?;
        if base.stage != StageTag::Base {
            return Err(Error::InvalidArgument(
                "adaptation requires a base-stage checkpoint".into(),
            ));
        }
        if base.arch.obs_dim != ACTOR_OBS_DIM || base.arch.act_dim != ACT_DIM {
            return Err(Error::InvalidArgument(format!(
                "architecture mismatch: checkpoint obs/act {}x{}, expected {}x{}",
                base.arch.obs_dim, base.arch.act_dim, ACTOR_OBS_DIM, ACT_DIM
            )));
        }
        let mut init_rng = Prng::derived(seed, tags::INIT);
        let mut model = base.to_model();
        model.residual = Some(ResidualPolicy::new(
            ACTOR_OBS_DIM,
            ACT_DIM,
            &cfg.ppo.residual_hidden,
            cfg.ppo.parseval_s,
            &mut init_rng,
        ));
        let frozen_actor = serde_json::to_string(&model.actor.net).expect("actor serialization");
        let opt = OptimState::new(&model);
        let mut run = TrainRun {
            lr: cfg.ppo.lr_init,
            opt,
            slots: build_slots(cfg, seed),
            sampler: SamplerState::new(
                &library.clips.iter().map(|c| crate::motion::segment_clips(c, cfg.ppo.clip_len).len()).collect::<Vec<_>>(),
                cfg.ppo.sampler_floor,
                cfg.ppo.sampler_interval,
            ),
            // Normalizer statistics come from the base run and stay frozen so
            // the frozen actor keeps seeing the distribution it was trained
            // on.
            norm_actor: base.norm_actor.clone(),
            norm_critic: base.norm_critic.clone(),
            shuffle_rng: Prng::derived(seed, tags::MINIBATCH),
            eval_rng_seed: seed,
            iteration: 0,
            update_norm: false,
            frozen_actor: Some(frozen_actor),
            segments: library
                .clips
                .iter()
                .map(|c| crate::motion::segment_clips(c, cfg.ppo.clip_len))
                .collect(),
            model,
            cfg: cfg.clone(),
        };
        run.assign_all(library);
        Ok(run)
    }

    fn from_checkpoint(ckpt: &Checkpoint, library: &MotionLibrary) -> Result<Self> {
        let ts = ckpt
            .train_state
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("checkpoint carries no training state to resume".into()))?;
        let cfg = TrainerCfg {
            ppo: ckpt.config.clone(),
            env: ckpt.env_cfg.clone(),
            model: ckpt.model.clone(),
        };
        let model = ckpt.to_model();
        let frozen_actor = match ckpt.stage {
            StageTag::ResidualAdapt => Some(serde_json::to_string(&model.actor.net).expect("actor serialization")),
            StageTag::Base => None,
        };
        Ok(TrainRun {
            lr: ts.lr,
            opt: ts.optim.clone(),
            slots: ts
                .envs
                .iter()
                .map(|s| EnvSlot {
                    env: BalancerEnv::restore(cfg.model.clone(), cfg.env.clone(), s.env.clone()),
                    ep_return: s.ep_return,
                    ep_len: s.ep_len,
                })
                .collect(),
            sampler: ckpt
                .sampler
                .clone()
                .ok_or_else(|| Error::InvalidArgument("checkpoint carries no sampler state".into()))?,
            norm_actor: ckpt.norm_actor.clone(),
            norm_critic: ckpt.norm_critic.clone(),
            shuffle_rng: Prng::new(ckpt.rng_state),
            eval_rng_seed: ckpt.rng_state,
            iteration: ckpt.iteration,
            update_norm: matches!(ckpt.stage, StageTag::Base),
            frozen_actor,
            segments: library
                .clips
                .iter()
                .map(|c| crate::motion::segment_clips(c, ckpt.config.clip_len))
                .collect(),
            model,
            cfg,
        })
    }

    fn assign_all(&mut self, library: &MotionLibrary) {
        let dist = self.sampler.dist();
        let mut events = Vec::new();
        for slot in self.slots.iter_mut() {
            slot.ep_return = 0.0;
            slot.ep_len = 0;
            rollout::assign_and_reset(&mut slot.env, library, &self.segments, &dist, &mut events);
        }
        self.sampler.record(&events);
    }

    fn checkpoint(&self) -> Result<Checkpoint> {
        if let Some(frozen) = self.frozen_actor.as_ref() {
            let now = serde_json::to_string(&self.model.actor.net).expect("actor serialization");
            if *frozen != now {
                return Err(Error::Numerical(
                    "frozen base actor parameters changed during adaptation".into(),
                ));
            }
        }
        Ok(Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            obs_layout_version: OBS_LAYOUT_VERSION,
            stage: self.model.stage(),
            arch: ArchDesc {
                obs_dim: ACTOR_OBS_DIM,
                critic_obs_dim: CRITIC_OBS_DIM,
                act_dim: ACT_DIM,
                n_experts: self.model.actor.net.n_experts(),
                hidden: self.cfg.ppo.hidden.clone(),
                residual_hidden: self.cfg.ppo.residual_hidden.clone(),
            },
            params: ParamsBlob {
                experts: self.model.actor.net.experts.clone(),
                gating: self.model.actor.net.gating.clone(),
                critic: self.model.critic.clone(),
                residual: self.model.residual.clone(),
                log_std: self.model.actor.head.log_std.clone(),
            },
            norm_actor: self.norm_actor.clone(),
            norm_critic: self.norm_critic.clone(),
            sampler: Some(self.sampler.clone()),
            rng_state: self.shuffle_rng.state(),
            iteration: self.iteration,
            config: self.cfg.ppo.clone(),
            env_cfg: self.cfg.env.clone(),
            model: self.cfg.model.clone(),
            train_state: Some(TrainState {
                optim: self.opt.clone(),
                envs: self
                    .slots
                    .iter()
                    .map(|s| TrainEnvSave { env: s.env.save(), ep_return: s.ep_return, ep_len: s.ep_len })
                    .collect(),
                lr: self.lr,
            }),
        })
    }

    /// Run `iterations` training iterations; returns (logs, aborted).
    fn run(&mut self, library: &MotionLibrary, iterations: usize) -> (Vec<IterLog>, bool) {
        let threads = resolve_threads(self.cfg.ppo.threads);
        let mut logs = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            self.iteration += 1;
            let dist = self.sampler.dist();
            let buffer = collect_rollouts(
                &mut self.slots,
                library,
                &self.segments,
                &self.model,
                &self.norm_actor,
                &self.norm_critic,
                &dist,
                self.cfg.ppo.steps_per_env,
                threads,
            );
            let mut buffer = match buffer {
                Ok(b) => b,
                Err(e) => {
                    logs.push(self.abort_log(format!("rollout aborted: {e}")));
                    return (logs, true);
                }
            };
            self.sampler.record(&buffer.events);
            compute_gae(&mut buffer, self.cfg.ppo.gamma, self.cfg.ppo.gae_lambda);

            let stats = match ppo_update(
                &mut self.model,
                &mut self.opt,
                &mut self.lr,
                &mut buffer,
                &self.cfg.ppo,
                &mut self.shuffle_rng,
                threads,
            ) {
                Ok(s) => s,
                Err(e) => {
                    logs.push(self.abort_log(format!("update aborted: {e}")));
                    return (logs, true);
                }
            };
            let mean_reward = buffer.mean_reward();
            if !mean_reward.is_finite() {
                logs.push(self.abort_log("mean return is not finite".into()));
                return (logs, true);
            }
            self.lr = adapt_lr(self.lr, stats.measured_kl, &self.cfg.ppo);

            if self.update_norm {
                self.norm_actor.update(&buffer.actor_stats);
                self.norm_critic.update(&buffer.critic_stats);
            }
            if self.sampler.maybe_update(self.iteration as usize) {
                // All environments move to assignments drawn from the
                // refreshed distributions.
                self.assign_all(library);
            }

            let mut eval_succ = None;
            if self.cfg.ppo.eval_every > 0 && self.iteration as usize % self.cfg.ppo.eval_every == 0 {
                if let Ok(report) = crate::evalkit::run_eval(
                    &self.model.view(),
                    &self.norm_actor,
                    &self.cfg.model,
                    &self.cfg.env,
                    library,
                    self.cfg.ppo.eval_episodes,
                    Prng::derived(self.eval_rng_seed, tags::EVAL).state() ^ self.iteration,
                    "train-snapshot",
                ) {
                    eval_succ = Some(report.aggregate.succ.mean);
                }
            }

            let episodes = buffer.episodes.len();
            let successes = buffer.episodes.iter().filter(|e| e.success).count();
            let mean_ep_len = if episodes > 0 {
                buffer.episodes.iter().map(|e| e.len as f64).sum::<f64>() / episodes as f64
            } else {
                0.0
            };
            logs.push(IterLog {
                iteration: self.iteration,
                mean_reward,
                episodes,
                successes,
                mean_ep_len,
                policy_loss: stats.policy_loss,
                value_loss: stats.value_loss,
                entropy: stats.entropy,
                kl_penalty: stats.kl_penalty,
                parseval: stats.parseval,
                measured_kl: stats.measured_kl,
                lr: self.lr,
                eval_succ,
                aborted: false,
            });

            if let Some(s) = eval_succ {
                if self.cfg.ppo.target_succ > 0.0 && s >= self.cfg.ppo.target_succ {
                    break;
                }
            }
        }
        (logs, false)
    }

    fn abort_log(&self, reason: String) -> IterLog {
        eprintln!("training aborted at iteration {}: {reason}", self.iteration);
        IterLog {
            iteration: self.iteration,
            mean_reward: f64::NAN,
            episodes: 0,
            successes: 0,
            mean_ep_len: 0.0,
            policy_loss: f64::NAN,
            value_loss: f64::NAN,
            entropy: f64::NAN,
            kl_penalty: f64::NAN,
            parseval: f64::NAN,
            measured_kl: f64::NAN,
            lr: self.lr,
            eval_succ: None,
            aborted: true,
        }
    }
}

/// Train the mixture-of-experts controller from scratch.
pub fn train_base(library: &MotionLibrary, cfg: &TrainerCfg, seed: u64) -> Result<TrainOutcome> {
    let mut run = TrainRun::new_base(library, cfg, seed)?;
    let (logs, aborted) = run.run(library, cfg.ppo.iterations);
    Ok(TrainOutcome { checkpoint: run.checkpoint()?, logs, aborted })
}

/// Adapt a frozen base controller with a residual policy trained under the
/// combined objective (surrogate + value + entropy + orthogonality + KL
/// anchor). The critic warm-starts from the base checkpoint; the base actor
/// is bit-frozen.
pub fn adapt_residual(base: &Checkpoint, library: &MotionLibrary, cfg: &TrainerCfg, seed: u64) -> Result<TrainOutcome> {
    let mut run = TrainRun::new_adapt(base, library, cfg, seed)?;
    let (logs, aborted) = run.run(library, cfg.ppo.iterations);
    Ok(TrainOutcome { checkpoint: run.checkpoint()?, logs, aborted })
}

/// Resume a checkpointed run for `iterations` more iterations; bit-identical
/// to having never stopped.
pub fn continue_training(ckpt: &Checkpoint, library: &MotionLibrary, iterations: usize) -> Result<TrainOutcome> {
    let mut run = TrainRun::from_checkpoint(ckpt, library)?;
    let (logs, aborted) = run.run(library, iterations);
    Ok(TrainOutcome { checkpoint: run.checkpoint()?, logs, aborted })
}
