//! PPO update: clipped surrogate, value regression, entropy bonus, and (in
//! the adaptation stage) the orthogonality and KL regularizers — all with
//! hand-derived gradients, accumulated over fixed chunks so results do not
//! depend on thread count, optimized with Adam under a global grad-norm clip.

use super::config::PpoConfig;
use super::rollout::RolloutBuffer;
use super::TrainModel;
use crate::error::{Error, Result};
use crate::mlp::MlpGrads;
use crate::parallel::map_chunks;
use crate::policy::{kl_shared_cov, parseval_accumulate, parseval_loss, MoeGrads};
use crate::rng::Prng;
use serde::{Deserialize, Serialize};

/// Chunk count for minibatch gradient accumulation (fixed; part of the run's
/// numerical definition).
pub const GRAD_CHUNKS: usize = 8;

/// Gradient buffers for the trainable parameter set of a stage. The base
/// stage trains actor + critic + log_std; the adaptation stage trains
/// residual + critic + log_std and leaves the actor untouched.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelGrads {
    pub actor: Option<MoeGrads>,
    pub critic: MoeGrads,
    pub residual: Option<MlpGrads>,
    pub log_std: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(model: &TrainModel) -> Self {
        ModelGrads {
            actor: if model.residual.is_none() { Some(MoeGrads::zeros_like(&model.actor.net)) } else { None },
            critic: MoeGrads::zeros_like(&model.critic),
            residual: model.residual.as_ref().map(|r| MlpGrads::zeros_like(&r.net)),
            log_std: vec![0.0; model.actor.head.log_std.len()],
        }
    }

    pub fn clear(&mut self) {
        if let Some(a) = self.actor.as_mut() {
            a.clear();
        }
        self.critic.clear();
        if let Some(r) = self.residual.as_mut() {
            r.clear();
        }
        self.log_std.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        if let (Some(a), Some(b)) = (self.actor.as_mut(), other.actor.as_ref()) {
            a.add_assign(b);
        }
        self.critic.add_assign(&other.critic);
        if let (Some(a), Some(b)) = (self.residual.as_mut(), other.residual.as_ref()) {
            a.add_assign(b);
        }
        for (x, y) in self.log_std.iter_mut().zip(other.log_std.iter()) {
            *x += y;
        }
    }

    pub fn scale(&mut self, k: f64) {
        if let Some(a) = self.actor.as_mut() {
            a.scale(k);
        }
        self.critic.scale(k);
        if let Some(r) = self.residual.as_mut() {
            r.scale(k);
        }
        self.log_std.iter_mut().for_each(|v| *v *= k);
    }

    pub fn sum_sq(&self) -> f64 {
        let mut s = self.critic.sum_sq() + self.log_std.iter().map(|v| v * v).sum::<f64>();
        if let Some(a) = self.actor.as_ref() {
            s += a.sum_sq();
        }
        if let Some(r) = self.residual.as_ref() {
            s += r.sum_sq();
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.sum_sq().is_finite()
    }
}

/// Adam moments for the trainable set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimState {
    pub m: ModelGrads,
    pub v: ModelGrads,
    pub t: u64,
}

impl OptimState {
    pub fn new(model: &TrainModel) -> Self {
        OptimState { m: ModelGrads::zeros_like(model), v: ModelGrads::zeros_like(model), t: 0 }
    }
}

fn adam_slice(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, cfg: &PpoConfig, bc1: f64, bc2: f64) {
    for i in 0..p.len() {
        m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
        v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
    }
}

fn adam_mlp(net: &mut crate::mlp::MlpNet, g: &MlpGrads, m: &mut MlpGrads, v: &mut MlpGrads, lr: f64, cfg: &PpoConfig, bc1: f64, bc2: f64) {
    for l in 0..net.n_layers() {
        adam_slice(&mut net.weights[l].data, &g.dw[l].data, &mut m.dw[l].data, &mut v.dw[l].data, lr, cfg, bc1, bc2);
        adam_slice(&mut net.biases[l], &g.db[l], &mut m.db[l], &mut v.db[l], lr, cfg, bc1, bc2);
    }
}

fn adam_moe(net: &mut crate::policy::MoeNet, g: &MoeGrads, m: &mut MoeGrads, v: &mut MoeGrads, lr: f64, cfg: &PpoConfig, bc1: f64, bc2: f64) {
    for e in 0..net.experts.len() {
        adam_mlp(&mut net.experts[e], &g.experts[e], &mut m.experts[e], &mut v.experts[e], lr, cfg, bc1, bc2);
    }
    adam_mlp(&mut net.gating, &g.gating, &mut m.gating, &mut v.gating, lr, cfg, bc1, bc2);
}

/// One Adam step over the trainable set.
pub fn adam_step(model: &mut TrainModel, grads: &ModelGrads, opt: &mut OptimState, lr: f64, cfg: &PpoConfig) {
    opt.t += 1;
    let bc1 = 1.0 - cfg.adam_beta1.powi(opt.t as i32);
    let bc2 = 1.0 - cfg.adam_beta2.powi(opt.t as i32);
    if let (Some(g), Some(m), Some(v)) = (grads.actor.as_ref(), opt.m.actor.as_mut(), opt.v.actor.as_mut()) {
        adam_moe(&mut model.actor.net, g, m, v, lr, cfg, bc1, bc2);
    }
    adam_moe(&mut model.critic, &grads.critic, &mut opt.m.critic, &mut opt.v.critic, lr, cfg, bc1, bc2);
    if let (Some(res), Some(g), Some(m), Some(v)) = (
        model.residual.as_mut(),
        grads.residual.as_ref(),
        opt.m.residual.as_mut(),
        opt.v.residual.as_mut(),
    ) {
        adam_mlp(&mut res.net, g, m, v, lr, cfg, bc1, bc2);
    }
    adam_slice(
        &mut model.actor.head.log_std,
        &grads.log_std,
        &mut opt.m.log_std,
        &mut opt.v.log_std,
        lr,
        cfg,
        bc1,
        bc2,
    );
}

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_74;

/// Per-minibatch loss statistics (sums; divide by `n` for means).
#[derive(Debug, Clone, Copy, Default)]
pub struct MbStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub kl_penalty: f64,
    pub n: usize,
}

impl MbStats {
    fn merge(&mut self, o: &MbStats) {
        self.surrogate += o.surrogate;
        self.value_loss += o.value_loss;
        self.kl_penalty += o.kl_penalty;
        self.n += o.n;
    }
}

/// Accumulate analytic gradients of the total loss over the transitions in
/// `idx` (already divided by the minibatch size `n_mb`).
fn accumulate_transitions(
    model: &TrainModel,
    buffer: &RolloutBuffer,
    idx: &[usize],
    n_mb: f64,
    cfg: &PpoConfig,
    grads: &mut ModelGrads,
) -> MbStats {
    let mut stats = MbStats::default();
    let head = &model.actor.head;
    let act_dim = head.log_std.len();
    let inv_n = 1.0 / n_mb;
    let mut sigma = vec![0.0; act_dim];
    let mut inv_sigma = vec![0.0; act_dim];
    for i in 0..act_dim {
        sigma[i] = head.log_std[i].exp();
        inv_sigma[i] = 1.0 / sigma[i];
    }

    for &i in idx {
        let tr = &buffer.data[i];

        // Actor mean under the current parameters.
        let (mu, actor_cache, residual_cache, mu_r) = match model.residual.as_ref() {
            None => {
                let (mu, cache) = model.actor.net.forward(&tr.actor_obs).expect("actor obs dims");
                (mu, Some(cache), None, Vec::new())
            }
            Some(res) => {
                let base = model.actor.net.mean(&tr.actor_obs).expect("actor obs dims");
                let (mu_r, cache) = res.net.forward(&tr.actor_obs).expect("residual obs dims");
                let mu: Vec<f64> = base.iter().zip(mu_r.iter()).map(|(b, r)| b + r).collect();
                (mu, None, Some(cache), mu_r)
            }
        };

        let mut logp = 0.0;
        let mut z = vec![0.0; act_dim];
        for d in 0..act_dim {
            z[d] = (tr.action[d] - mu[d]) * inv_sigma[d];
            logp -= head.log_std[d] + HALF_LN_TAU + 0.5 * z[d] * z[d];
        }
        let ratio = (logp - tr.logp_old).exp();
        let adv = tr.advantage;
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let surr = (ratio * adv).min(clipped * adv);
        stats.surrogate += -surr;

        // d(−surr)/dlogp: active only on the unclipped branch of the min.
        let use_unclipped = ratio * adv <= clipped * adv;
        let dlogp = if use_unclipped { -adv * ratio * inv_n } else { 0.0 };

        let mut dmu = vec![0.0; act_dim];
        if dlogp != 0.0 {
            for d in 0..act_dim {
                dmu[d] = dlogp * z[d] * inv_sigma[d];
                grads.log_std[d] += dlogp * (z[d] * z[d] - 1.0);
            }
        }

        // KL anchor (adaptation stage): ½ Σ μ_r²/σ² per state.
        if let Some(res) = model.residual.as_ref() {
            if cfg.lambda_k > 0.0 {
                let mut kl = 0.0;
                for d in 0..act_dim {
                    let r = mu_r[d];
                    let inv_var = inv_sigma[d] * inv_sigma[d];
                    kl += 0.5 * r * r * inv_var;
                    dmu[d] += cfg.lambda_k * r * inv_var * inv_n;
                    grads.log_std[d] += cfg.lambda_k * (-r * r * inv_var) * inv_n;
                }
                stats.kl_penalty += kl;
            }
            if dmu.iter().any(|v| *v != 0.0) {
                res.net.backward_unchecked(
                    residual_cache.as_ref().expect("residual cache"),
                    &dmu,
                    grads.residual.as_mut().expect("residual grads"),
                );
            }
        } else if dmu.iter().any(|v| *v != 0.0) {
            model.actor.net.backward(
                actor_cache.as_ref().expect("actor cache"),
                &dmu,
                grads.actor.as_mut().expect("actor grads"),
            );
        }

        // Value regression.
        let (v, v_cache) = model.critic.forward(&tr.critic_obs).expect("critic obs dims");
        let err = v[0] - tr.ret;
        stats.value_loss += err * err;
        let dv = [cfg.value_coeff * 2.0 * err * inv_n];
        model.critic.backward(&v_cache, &dv, &mut grads.critic);

        stats.n += 1;
    }
    stats
}

/// Total loss of a minibatch under the current parameters (pure evaluation;
/// the finite-difference oracle drives this).
pub fn minibatch_loss(model: &TrainModel, buffer: &RolloutBuffer, idx: &[usize], cfg: &PpoConfig) -> f64 {
    let head = &model.actor.head;
    let act_dim = head.log_std.len();
    let n = idx.len() as f64;
    let mut surrogate = 0.0;
    let mut value_loss = 0.0;
    let mut kl_penalty = 0.0;
    for &i in idx {
        let tr = &buffer.data[i];
        let (mu, mu_r) = match model.residual.as_ref() {
            None => (model.actor.net.mean(&tr.actor_obs).expect("dims"), Vec::new()),
            Some(res) => {
                let base = model.actor.net.mean(&tr.actor_obs).expect("dims");
                let r = res.net.eval(&tr.actor_obs);
                (base.iter().zip(r.iter()).map(|(b, q)| b + q).collect(), r)
            }
        };
        let mut logp = 0.0;
        for d in 0..act_dim {
            let zd = (tr.action[d] - mu[d]) / head.log_std[d].exp();
            logp -= head.log_std[d] + HALF_LN_TAU + 0.5 * zd * zd;
        }
        let ratio = (logp - tr.logp_old).exp();
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        surrogate += -(ratio * tr.advantage).min(clipped * tr.advantage);
        let v = model.critic.mean(&tr.critic_obs).expect("dims")[0];
        value_loss += (v - tr.ret) * (v - tr.ret);
        if model.residual.is_some() && cfg.lambda_k > 0.0 {
            let base: Vec<f64> = mu.iter().zip(mu_r.iter()).map(|(m, r)| m - r).collect();
            kl_penalty += kl_shared_cov(&mu, &base, head);
        }
    }
    let mut loss = surrogate / n + cfg.value_coeff * value_loss / n - cfg.entropy_coeff * head.entropy()
        + cfg.lambda_k * kl_penalty / n;
    if let Some(res) = model.residual.as_ref() {
        if cfg.lambda_p > 0.0 {
            loss += cfg.lambda_p * parseval_loss(res);
        }
    }
    loss
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl_penalty: f64,
    pub parseval: f64,
    pub measured_kl: f64,
    pub grad_norm: f64,
    pub skipped_minibatches: usize,
}

/// Normalize advantages to zero mean and unit standard deviation in place.
pub fn normalize_advantages(buffer: &mut RolloutBuffer) {
    let n = buffer.data.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = buffer.data.iter().map(|t| t.advantage).sum::<f64>() / n;
    let var = buffer.data.iter().map(|t| (t.advantage - mean) * (t.advantage - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    for t in buffer.data.iter_mut() {
        t.advantage = (t.advantage - mean) * inv;
    }
}

/// Analytic KL(old‖new) averaged over the buffer states.
pub fn measured_kl(model: &TrainModel, buffer: &RolloutBuffer, old_log_std: &[f64]) -> f64 {
    let head = &model.actor.head;
    let act_dim = head.log_std.len();
    let mut scratch = super::RolloutScratch::default();
    let mut total = 0.0;
    for tr in buffer.data.iter() {
        let mu_new = model.mean_scratch(&tr.actor_obs, &mut scratch);
        for d in 0..act_dim {
            let so = old_log_std[d].exp();
            let sn = head.log_std[d].exp();
            let dm = tr.mean_old[d] - mu_new[d];
            total += head.log_std[d] - old_log_std[d] + (so * so + dm * dm) / (2.0 * sn * sn) - 0.5;
        }
    }
    total / buffer.data.len() as f64
}

/// Run `epochs × minibatches` clipped-surrogate updates. Returns the loss
/// statistics and the measured policy KL for the learning-rate controller.
/// A minibatch that produces non-finite gradients is skipped and the working
/// learning rate halves.
pub fn ppo_update(
    model: &mut TrainModel,
    opt: &mut OptimState,
    lr: &mut f64,
    buffer: &mut RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut Prng,
    threads: usize,
) -> Result<UpdateStats> {
    if cfg.normalize_adv {
        normalize_advantages(buffer);
    }
    let old_log_std = model.actor.head.log_std.clone();
    let n = buffer.data.len();
    let mb_size = n / cfg.minibatches;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut grad_norm_acc = 0.0;
    let mut steps = 0usize;
    let mut total = ModelGrads::zeros_like(model);

    for _epoch in 0..cfg.epochs {
        // Fisher-Yates shuffle.
        for i in (1..n).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            perm.swap(i, j);
        }
        for mb in 0..cfg.minibatches {
            let idx = &perm[mb * mb_size..(mb + 1) * mb_size];
            let n_mb = idx.len() as f64;

            let chunk_outs = map_chunks(idx.len(), GRAD_CHUNKS, threads, |_c, s, e| {
                let mut g = ModelGrads::zeros_like(model);
                let st = accumulate_transitions(model, buffer, &idx[s..e], n_mb, cfg, &mut g);
                (g, st)
            });
            total.clear();
            let mut mb_stats = MbStats::default();
            for (g, st) in chunk_outs.iter() {
                total.add_assign(g);
                mb_stats.merge(st);
            }
            // Whole-minibatch terms: entropy bonus and the orthogonality
            // regularizer.
            for d in total.log_std.iter_mut() {
                *d -= cfg.entropy_coeff;
            }
            if let (Some(res), Some(rg)) = (model.residual.as_ref(), total.residual.as_mut()) {
                parseval_accumulate(res, cfg.lambda_p, rg);
            }

            if !total.is_finite() {
                stats.skipped_minibatches += 1;
                *lr = (*lr / 2.0).max(cfg.lr_min);
                continue;
            }
            let norm = total.sum_sq().sqrt();
            if norm > cfg.max_grad_norm {
                total.scale(cfg.max_grad_norm / norm);
            }
            grad_norm_acc += norm.min(cfg.max_grad_norm);
            adam_step(model, &total, opt, *lr, cfg);
            steps += 1;

            stats.policy_loss += mb_stats.surrogate / n_mb;
            stats.value_loss += mb_stats.value_loss / n_mb;
            stats.kl_penalty += mb_stats.kl_penalty / n_mb;
        }
    }
    let denom = (steps.max(1)) as f64;
    stats.policy_loss /= denom;
    stats.value_loss /= denom;
    stats.kl_penalty /= denom;
    stats.grad_norm = grad_norm_acc / denom;
    stats.entropy = model.actor.head.entropy();
    stats.parseval = model.residual.as_ref().map(parseval_loss).unwrap_or(0.0);
    stats.measured_kl = measured_kl(model, buffer, &old_log_std);
    if !stats.measured_kl.is_finite() {
        return Err(Error::Numerical("measured KL is not finite".into()));
    }
    Ok(stats)
}

fn push_mlp(net: &crate::mlp::MlpNet, out: &mut Vec<f64>) {
    for l in 0..net.n_layers() {
        out.extend_from_slice(&net.weights[l].data);
        out.extend_from_slice(&net.biases[l]);
    }
}

fn pull_mlp(net: &mut crate::mlp::MlpNet, theta: &[f64], k: &mut usize) {
    for l in 0..net.n_layers() {
        for v in net.weights[l].data.iter_mut() {
            *v = theta[*k];
            *k += 1;
        }
        for v in net.biases[l].iter_mut() {
            *v = theta[*k];
            *k += 1;
        }
    }
}

fn push_mlp_grads(g: &MlpGrads, out: &mut Vec<f64>) {
    for l in 0..g.dw.len() {
        out.extend_from_slice(&g.dw[l].data);
        out.extend_from_slice(&g.db[l]);
    }
}

/// Flatten the stage's trainable parameters (matching [`flatten_grads`]
/// order): base stage = actor experts, gating, critic, log_std; adaptation
/// stage = residual, critic, log_std.
pub fn flatten_trainable(model: &TrainModel) -> Vec<f64> {
    let mut out = Vec::new();
    match model.residual.as_ref() {
        None => {
            for e in &model.actor.net.experts {
                push_mlp(e, &mut out);
            }
            push_mlp(&model.actor.net.gating, &mut out);
        }
        Some(res) => push_mlp(&res.net, &mut out),
    }
    for e in &model.critic.experts {
        push_mlp(e, &mut out);
    }
    push_mlp(&model.critic.gating, &mut out);
    out.extend_from_slice(&model.actor.head.log_std);
    out
}

/// Inverse of [`flatten_trainable`].
pub fn write_trainable(model: &mut TrainModel, theta: &[f64]) {
    let mut k = 0;
    if model.residual.is_none() {
        for i in 0..model.actor.net.experts.len() {
            pull_mlp(&mut model.actor.net.experts[i], theta, &mut k);
        }
        pull_mlp(&mut model.actor.net.gating, theta, &mut k);
    } else {
        let res = model.residual.as_mut().expect("residual");
        pull_mlp(&mut res.net, theta, &mut k);
    }
    for i in 0..model.critic.experts.len() {
        pull_mlp(&mut model.critic.experts[i], theta, &mut k);
    }
    pull_mlp(&mut model.critic.gating, theta, &mut k);
    for v in model.actor.head.log_std.iter_mut() {
        *v = theta[k];
        k += 1;
    }
    assert_eq!(k, theta.len(), "parameter vector length mismatch");
}

/// Flatten gradients in [`flatten_trainable`] order.
pub fn flatten_grads(grads: &ModelGrads) -> Vec<f64> {
    let mut out = Vec::new();
    if let Some(a) = grads.actor.as_ref() {
        for e in &a.experts {
            push_mlp_grads(e, &mut out);
        }
        push_mlp_grads(&a.gating, &mut out);
    }
    if let Some(r) = grads.residual.as_ref() {
        push_mlp_grads(r, &mut out);
    }
    for e in &grads.critic.experts {
        push_mlp_grads(e, &mut out);
    }
    push_mlp_grads(&grads.critic.gating, &mut out);
    out.extend_from_slice(&grads.log_std);
    out
}

/// Accumulate analytic gradients of [`minibatch_loss`] into a fresh buffer
/// (single-chunk path; the exactness oracle compares this against central
/// finite differences of the loss).
pub fn minibatch_gradients(
    model: &TrainModel,
    buffer: &RolloutBuffer,
    idx: &[usize],
    cfg: &PpoConfig,
) -> ModelGrads {
    let mut grads = ModelGrads::zeros_like(model);
    let n_mb = idx.len() as f64;
    accumulate_transitions(model, buffer, idx, n_mb, cfg, &mut grads);
    for d in grads.log_std.iter_mut() {
        *d -= cfg.entropy_coeff;
    }
    if let (Some(res), Some(rg)) = (model.residual.as_ref(), grads.residual.as_mut()) {
        parseval_accumulate(res, cfg.lambda_p, rg);
    }
    grads
}

/// KL-adaptive learning-rate rule: step ×/÷1.5 outside a 2× dead band around
/// the target, clamped to the configured range.
pub fn adapt_lr(lr: f64, measured_kl: f64, cfg: &PpoConfig) -> f64 {
    let mut out = lr;
    if measured_kl > 2.0 * cfg.desired_kl {
        out = lr / 1.5;
    } else if measured_kl < cfg.desired_kl / 2.0 {
        out = lr * 1.5;
    }
    out.clamp(cfg.lr_min, cfg.lr_max)
}
