//! Vectorized rollout collection and generalized advantage estimation.
//!
//! Environments are stepped in fixed contiguous chunks (any thread count
//! yields identical results); each environment owns its PRNG, samples its
//! own resets from a frozen sampler snapshot, and appends transitions in
//! environment-major order.

use super::sampler::{SamplerDist, SegEvent};
use super::TrainModel;
use crate::env::{BalancerEnv, Termination};
use crate::error::{Error, Result};
use crate::motion::MotionLibrary;
use crate::obsnorm::{BatchStats, RunningNorm};
use crate::parallel::{for_each_chunk_mut, DEFAULT_CHUNKS};
use crate::policy::MoeScratch;

/// One environment plus its episode bookkeeping.
#[derive(Debug, Clone)]
pub struct EnvSlot {
    pub env: BalancerEnv,
    pub ep_return: f64,
    pub ep_len: usize,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub actor_obs: Vec<f64>,
    pub critic_obs: Vec<f64>,
    pub action: [f64; 2],
    pub mean_old: [f64; 2],
    pub logp_old: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub clip_id: u32,
    pub seg_id: u32,
    pub termination: Termination,
    pub advantage: f64,
    pub ret: f64,
}

/// Episode outcome observed during a rollout.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeStat {
    pub ret: f64,
    pub len: usize,
    pub success: bool,
    pub termination: Termination,
}

#[derive(Debug)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub steps: usize,
    /// Environment-major: `data[env * steps + t]`.
    pub data: Vec<Transition>,
    /// Per-env value bootstrap at the horizon (zero if the final step ended
    /// an episode).
    pub bootstrap: Vec<f64>,
    pub actor_stats: BatchStats,
    pub critic_stats: BatchStats,
    pub events: Vec<SegEvent>,
    pub episodes: Vec<EpisodeStat>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|t| t.reward).sum::<f64>() / self.data.len() as f64
    }
}

struct ChunkOut {
    transitions: Vec<Transition>,
    bootstrap: Vec<f64>,
    actor_stats: BatchStats,
    critic_stats: BatchStats,
    events: Vec<SegEvent>,
    episodes: Vec<EpisodeStat>,
}

/// Advance a slot's segment cursor after a step, emitting attempt events for
/// every newly entered segment.
fn advance_segments(env: &mut BalancerEnv, segments: &[Vec<(usize, usize)>], events: &mut Vec<SegEvent>) {
    let segs = &segments[env.clip_id];
    while env.seg_id + 1 < segs.len() && env.state.frame_idx >= segs[env.seg_id].1 {
        env.seg_id += 1;
        events.push(SegEvent { clip: env.clip_id, seg: env.seg_id, failed: false });
    }
}

/// Sample a fresh (motion, segment) assignment and reset the environment,
/// recording the attempt event.
pub fn assign_and_reset(
    env: &mut BalancerEnv,
    library: &MotionLibrary,
    segments: &[Vec<(usize, usize)>],
    dist: &SamplerDist,
    events: &mut Vec<SegEvent>,
) {
    let (clip_id, seg_id) = {
        let mut r = env.rng.clone();
        let pick = dist.sample(&mut r);
        env.rng = r;
        pick
    };
    let seg = segments[clip_id][seg_id];
    env.reset_to_frame(&library.clips[clip_id], seg, clip_id, seg_id);
    events.push(SegEvent { clip: clip_id, seg: seg_id, failed: false });
}

/// Collect `steps` transitions from every environment.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    slots: &mut [EnvSlot],
    library: &MotionLibrary,
    segments: &[Vec<(usize, usize)>],
    model: &TrainModel,
    norm_actor: &RunningNorm,
    norm_critic: &RunningNorm,
    dist: &SamplerDist,
    steps: usize,
    threads: usize,
) -> Result<RolloutBuffer> {
    let n_envs = slots.len();
    let actor_dim = norm_actor.dim();
    let critic_dim = norm_critic.dim();

    let results: std::sync::Mutex<Vec<Option<Result<ChunkOut>>>> =
        std::sync::Mutex::new((0..DEFAULT_CHUNKS.min(n_envs.max(1))).map(|_| None).collect());

    for_each_chunk_mut(slots, DEFAULT_CHUNKS, threads, |chunk_idx, _start, chunk| {
        let out = run_chunk(
            chunk, library, segments, model, norm_actor, norm_critic, dist, steps, actor_dim, critic_dim,
        );
        results.lock().expect("rollout results")[chunk_idx] = Some(out);
    });

    let mut data = Vec::with_capacity(n_envs * steps);
    let mut bootstrap = Vec::with_capacity(n_envs);
    let mut actor_stats = BatchStats::new(actor_dim);
    let mut critic_stats = BatchStats::new(critic_dim);
    let mut events = Vec::new();
    let mut episodes = Vec::new();
    for slot in results.into_inner().expect("rollout results").into_iter() {
        let chunk = slot.expect("every chunk ran")?;
        data.extend(chunk.transitions);
        bootstrap.extend(chunk.bootstrap);
        actor_stats.merge(&chunk.actor_stats);
        critic_stats.merge(&chunk.critic_stats);
        events.extend(chunk.events);
        episodes.extend(chunk.episodes);
    }
    Ok(RolloutBuffer {
        n_envs,
        steps,
        data,
        bootstrap,
        actor_stats,
        critic_stats,
        events,
        episodes,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    chunk: &mut [EnvSlot],
    library: &MotionLibrary,
    segments: &[Vec<(usize, usize)>],
    model: &TrainModel,
    norm_actor: &RunningNorm,
    norm_critic: &RunningNorm,
    dist: &SamplerDist,
    steps: usize,
    actor_dim: usize,
    critic_dim: usize,
) -> Result<ChunkOut> {
    let mut out = ChunkOut {
        transitions: Vec::with_capacity(chunk.len() * steps),
        bootstrap: Vec::with_capacity(chunk.len()),
        actor_stats: BatchStats::new(actor_dim),
        critic_stats: BatchStats::new(critic_dim),
        events: Vec::new(),
        episodes: Vec::new(),
    };
    let mut scratch = super::RolloutScratch::default();
    let mut critic_scratch = MoeScratch::default();
    let mut obs_a_n = Vec::with_capacity(actor_dim);
    let mut obs_c_n = Vec::with_capacity(critic_dim);

    for slot in chunk.iter_mut() {
        let mut last_done = false;
        for _ in 0..steps {
            let clip = &library.clips[slot.env.clip_id];
            let raw_a = slot.env.build_actor_obs(clip)?;
            if !raw_a.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical("non-finite observation during rollout".into()));
            }
            let raw_c = slot.env.build_critic_obs(clip, &raw_a, slot.env.static_cop());
            out.actor_stats.push(&raw_a);
            out.critic_stats.push(&raw_c);
            norm_actor.normalize_into(&raw_a, &mut obs_a_n);
            norm_critic.normalize_into(&raw_c, &mut obs_c_n);

            let mean = model.mean_scratch(&obs_a_n, &mut scratch);
            let (action_v, logp) = {
                let mut rng = slot.env.rng.clone();
                let pair = model.head().sample(&mean, &mut rng);
                slot.env.rng = rng;
                pair
            };
            let action = [action_v[0], action_v[1]];
            let value = model.critic.mean_into(&obs_c_n, &mut critic_scratch)[0];

            let step = slot.env.step(&library.clips[slot.env.clip_id], action)?;
            slot.ep_return += step.reward;
            slot.ep_len += 1;

            out.transitions.push(Transition {
                actor_obs: obs_a_n.clone(),
                critic_obs: obs_c_n.clone(),
                action,
                mean_old: [mean[0], mean[1]],
                logp_old: logp,
                reward: step.reward,
                value,
                done: step.done,
                clip_id: slot.env.clip_id as u32,
                seg_id: slot.env.seg_id as u32,
                termination: step.termination,
                advantage: 0.0,
                ret: 0.0,
            });

            if step.done {
                if step.termination.is_failure() {
                    out.events.push(SegEvent {
                        clip: slot.env.clip_id,
                        seg: slot.env.seg_id,
                        failed: true,
                    });
                }
                out.episodes.push(EpisodeStat {
                    ret: slot.ep_return,
                    len: slot.ep_len,
                    success: step.success,
                    termination: step.termination,
                });
                slot.ep_return = 0.0;
                slot.ep_len = 0;
                assign_and_reset(&mut slot.env, library, segments, dist, &mut out.events);
                last_done = true;
            } else {
                advance_segments(&mut slot.env, segments, &mut out.events);
                last_done = false;
            }
        }
        // Horizon bootstrap for the episode still in flight.
        if last_done {
            out.bootstrap.push(0.0);
        } else {
            let clip = &library.clips[slot.env.clip_id];
            let raw_a = slot.env.build_actor_obs(clip)?;
            let raw_c = slot.env.build_critic_obs(clip, &raw_a, slot.env.static_cop());
            norm_critic.normalize_into(&raw_c, &mut obs_c_n);
            out.bootstrap.push(model.critic.mean_into(&obs_c_n, &mut critic_scratch)[0]);
        }
    }
    Ok(out)
}

/// Standard GAE recursion per environment; `returns = advantages + values`.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    let steps = buffer.steps;
    for e in 0..buffer.n_envs {
        let mut adv = 0.0;
        for t in (0..steps).rev() {
            let i = e * steps + t;
            let (next_value, next_nonterminal) = if buffer.data[i].done {
                (0.0, 0.0)
            } else if t == steps - 1 {
                (buffer.bootstrap[e], 1.0)
            } else {
                (buffer.data[i + 1].value, 1.0)
            };
            let delta = buffer.data[i].reward + gamma * next_value * next_nonterminal - buffer.data[i].value;
            adv = delta + gamma * lambda * next_nonterminal * adv;
            buffer.data[i].advantage = adv;
            buffer.data[i].ret = adv + buffer.data[i].value;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_buffer(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64) -> RolloutBuffer {
        let data: Vec<Transition> = rewards
            .iter()
            .zip(values.iter())
            .zip(dones.iter())
            .map(|((&r, &v), &d)| Transition {
                actor_obs: vec![],
                critic_obs: vec![],
                action: [0.0; 2],
                mean_old: [0.0; 2],
                logp_old: 0.0,
                reward: r,
                value: v,
                done: d,
                clip_id: 0,
                seg_id: 0,
                termination: Termination::None,
                advantage: 0.0,
                ret: 0.0,
            })
            .collect();
        RolloutBuffer {
            n_envs: 1,
            steps: data.len(),
            data,
            bootstrap: vec![bootstrap],
            actor_stats: BatchStats::new(0),
            critic_stats: BatchStats::new(0),
            events: vec![],
            episodes: vec![],
        }
    }

    #[test]
    fn gae_single_terminal_step() {
        let mut b = toy_buffer(&[1.0], &[0.0], &[true], 0.0);
        compute_gae(&mut b, 0.99, 0.95);
        assert!((b.data[0].advantage - 1.0).abs() < 1e-15);
        assert!((b.data[0].ret - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gae_two_step_hand_recursion() {
        // r = (0, 1), V = 0,终 done at t=1: A₀ = γλ·A₁ + δ₀ = 0.99·0.95·1.
        let mut b = toy_buffer(&[0.0, 1.0], &[0.0, 0.0], &[false, true], 0.0);
        compute_gae(&mut b, 0.99, 0.95);
        assert!((b.data[1].advantage - 1.0).abs() < 1e-15);
        let expect = 0.99 * 0.95;
        assert!((b.data[0].advantage - expect).abs() < 1e-12, "{}", b.data[0].advantage);
    }

    #[test]
    fn gae_constant_reward_fixed_point() {
        // V = r/(1−γ) is the fixed point: advantages ≈ 0 with bootstrap.
        let gamma = 0.99;
        let r = 1.0;
        let v = r / (1.0 - gamma);
        let n = 24;
        let mut b = toy_buffer(&vec![r; n], &vec![v; n], &vec![false; n], v);
        compute_gae(&mut b, gamma, 0.95);
        for t in &b.data {
            assert!(t.advantage.abs() < 1e-9, "advantage {}", t.advantage);
        }
    }

    #[test]
    fn gae_bootstrap_used_only_when_not_done() {
        let mut with = toy_buffer(&[1.0], &[0.0], &[false], 10.0);
        compute_gae(&mut with, 0.99, 0.95);
        assert!((with.data[0].advantage - (1.0 + 0.99 * 10.0)).abs() < 1e-12);
        let mut without = toy_buffer(&[1.0], &[0.0], &[true], 10.0);
        compute_gae(&mut without, 0.99, 0.95);
        assert!((without.data[0].advantage - 1.0).abs() < 1e-15);
    }
}
