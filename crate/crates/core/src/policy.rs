//! Mixture-of-experts actor/critic, Gaussian action head, residual policy
//! composition, and the orthogonality/KL regularizers with their closed-form
//! bounds.
//!
//! The adaptation stage composes a frozen base actor with a small residual
//! net: the composite action mean is `mean_base(obs) + mean_residual(obs)`,
//! and both policies share one state-independent diagonal Gaussian head. That
//! shared covariance is what makes the KL between composite and base collapse
//! to ½·μᵣᵀΣ⁻¹μᵣ and gives the residual-output bound checked by the
//! verification harness.

use crate::error::{Error, Result};
use crate::linalg::{dot, spectral_norm, spectral_norm_sym, Matrix, POWER_ITER_MAX, POWER_ITER_TOL};
use crate::mlp::{MlpCache, MlpGrads, MlpNet, MlpScratch};
use crate::rng::Prng;
use serde::{Deserialize, Serialize};

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_74; // ½·ln(2π)

/// State-independent diagonal Gaussian head; one log-std per action channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn new(act_dim: usize, init_log_std: f64) -> Self {
        GaussianHead { log_std: vec![init_log_std; act_dim] }
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Σᵢ (log σᵢ + ½·ln(2πe)).
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + HALF_LN_TAU + 0.5).sum()
    }

    /// Exact diagonal-Gaussian log density of `action` under N(mean, Σ).
    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        debug_assert_eq!(mean.len(), self.log_std.len());
        let mut lp = 0.0;
        for i in 0..mean.len() {
            let ls = self.log_std[i];
            let z = (action[i] - mean[i]) * (-ls).exp();
            lp -= ls + HALF_LN_TAU + 0.5 * z * z;
        }
        lp
    }

    /// Draw `action ~ N(mean, diag(exp(2·log_std)))` and return its log density.
    pub fn sample(&self, mean: &[f64], rng: &mut Prng) -> (Vec<f64>, f64) {
        let mut action = Vec::with_capacity(mean.len());
        for (m, ls) in mean.iter().zip(self.log_std.iter()) {
            action.push(m + ls.exp() * rng.normal());
        }
        let lp = self.log_prob(mean, &action);
        (action, lp)
    }

    /// Largest eigenvalue of the covariance, max exp(2·log_std).
    pub fn lambda_max(&self) -> f64 {
        self.log_std.iter().fold(f64::NEG_INFINITY, |m, ls| m.max((2.0 * ls).exp()))
    }
}

/// Gating-weighted convex combination of identically shaped expert MLPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeNet {
    pub experts: Vec<MlpNet>,
    pub gating: MlpNet,
}

/// Forward-pass record for [`MoeNet::forward`].
#[derive(Debug, Clone)]
pub struct MoeCache {
    pub gating: MlpCache,
    pub weights: Vec<f64>,
    pub experts: Vec<MlpCache>,
    pub expert_outs: Vec<Vec<f64>>,
}

/// Gradient buffers shaped like a [`MoeNet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoeGrads {
    pub experts: Vec<MlpGrads>,
    pub gating: MlpGrads,
}

/// Reusable evaluation buffers for the rollout hot path.
#[derive(Debug, Default, Clone)]
pub struct MoeScratch {
    mlp: MlpScratch,
    weights: Vec<f64>,
    acc: Vec<f64>,
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

impl MoeNet {
    /// Build with `n_experts` experts of the given hidden sizes and a gating
    /// net with one hidden layer of width ⌈input/2⌉ and a softmax output.
    pub fn new(input_dim: usize, output_dim: usize, n_experts: usize, hidden: &[usize], rng: &mut Prng) -> Self {
        assert!(n_experts >= 1);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let experts = (0..n_experts)
            .map(|_| MlpNet::new_orthogonal(&dims, 2.0f64.sqrt(), 0.01, rng))
            .collect();
        let gate_hidden = input_dim.div_ceil(2);
        let gating = MlpNet::new_orthogonal(&[input_dim, gate_hidden, n_experts], 2.0f64.sqrt(), 0.01, rng);
        MoeNet { experts, gating }
    }

    pub fn input_dim(&self) -> usize {
        self.experts[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.experts[0].output_dim()
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn param_count(&self) -> usize {
        self.experts.iter().map(|e| e.param_count()).sum::<usize>() + self.gating.param_count()
    }

    /// Softmax gating weights at `x`.
    pub fn gate_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "moe: observation length {} != input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut logits = self.gating.eval(x);
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// μ(x) = Σₑ softmax(gating(x))ₑ · expertₑ(x).
    pub fn mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "moe: observation length {} != input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut s = MoeScratch::default();
        Ok(self.mean_into(x, &mut s).to_vec())
    }

    /// Allocation-free mean for the rollout loop.
    pub fn mean_into<'s>(&self, x: &[f64], s: &'s mut MoeScratch) -> &'s [f64] {
        let od = self.output_dim();
        s.weights.clear();
        s.weights.extend_from_slice(self.gating.eval_into(x, &mut s.mlp));
        softmax_in_place(&mut s.weights);
        s.acc.clear();
        s.acc.resize(od, 0.0);
        for (e, &w) in self.experts.iter().zip(s.weights.iter()) {
            let out = e.eval_into(x, &mut s.mlp);
            for (a, &o) in s.acc.iter_mut().zip(out.iter()) {
                *a += w * o;
            }
        }
        &s.acc
    }

    /// Forward pass with the cache needed for [`MoeNet::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MoeCache)> {
        let (logits, gating_cache) = self.gating.forward(x)?;
        let mut weights = logits;
        softmax_in_place(&mut weights);
        let mut expert_caches = Vec::with_capacity(self.experts.len());
        let mut expert_outs = Vec::with_capacity(self.experts.len());
        let mut mean = vec![0.0; self.output_dim()];
        for (e, &w) in self.experts.iter().zip(weights.iter()) {
            let (out, cache) = e.forward(x)?;
            for (m, &o) in mean.iter_mut().zip(out.iter()) {
                *m += w * o;
            }
            expert_caches.push(cache);
            expert_outs.push(out);
        }
        Ok((mean, MoeCache { gating: gating_cache, weights, experts: expert_caches, expert_outs }))
    }

    /// Accumulate parameter gradients for upstream dL/dμ.
    pub fn backward(&self, cache: &MoeCache, dmean: &[f64], grads: &mut MoeGrads) {
        // Experts: scaled by their gate weight.
        let mut scaled = vec![0.0; dmean.len()];
        for (i, (e, cache_e)) in self.experts.iter().zip(cache.experts.iter()).enumerate() {
            let w = cache.weights[i];
            for (s, &d) in scaled.iter_mut().zip(dmean.iter()) {
                *s = w * d;
            }
            e.backward_unchecked(cache_e, &scaled, &mut grads.experts[i]);
        }
        // Gating: backprop dL/dlogits through the softmax.
        let scores: Vec<f64> = cache.expert_outs.iter().map(|o| dot(dmean, o)).collect();
        let avg: f64 = cache.weights.iter().zip(scores.iter()).map(|(w, s)| w * s).sum();
        let dlogits: Vec<f64> = cache
            .weights
            .iter()
            .zip(scores.iter())
            .map(|(w, s)| w * (s - avg))
            .collect();
        self.gating.backward_unchecked(&cache.gating, &dlogits, &mut grads.gating);
    }
}

impl MoeGrads {
    pub fn zeros_like(net: &MoeNet) -> Self {
        MoeGrads {
            experts: net.experts.iter().map(MlpGrads::zeros_like).collect(),
            gating: MlpGrads::zeros_like(&net.gating),
        }
    }

    pub fn clear(&mut self) {
        self.experts.iter_mut().for_each(MlpGrads::clear);
        self.gating.clear();
    }

    pub fn add_assign(&mut self, other: &MoeGrads) {
        for (a, b) in self.experts.iter_mut().zip(other.experts.iter()) {
            a.add_assign(b);
        }
        self.gating.add_assign(&other.gating);
    }

    pub fn scale(&mut self, k: f64) {
        self.experts.iter_mut().for_each(|g| g.scale(k));
        self.gating.scale(k);
    }

    pub fn sum_sq(&self) -> f64 {
        self.experts.iter().map(|g| g.sum_sq()).sum::<f64>() + self.gating.sum_sq()
    }
}

/// Mixture-of-experts actor with its Gaussian head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoePolicy {
    pub net: MoeNet,
    pub head: GaussianHead,
}

impl MoePolicy {
    pub fn new(obs_dim: usize, act_dim: usize, n_experts: usize, hidden: &[usize], init_log_std: f64, rng: &mut Prng) -> Self {
        MoePolicy {
            net: MoeNet::new(obs_dim, act_dim, n_experts, hidden, rng),
            head: GaussianHead::new(act_dim, init_log_std),
        }
    }
}

/// Additive-correction policy: a plain MLP plus the scale used by its
/// orthogonality regularizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPolicy {
    pub net: MlpNet,
    pub parseval_scale: f64,
}

impl ResidualPolicy {
    /// Residual net over the same observation/action space as the base actor.
    /// Hidden layers start at exact scaled-orthonormality (gain √s) and the
    /// final layer near zero, so the composite initially matches the base.
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], parseval_scale: f64, rng: &mut Prng) -> Self {
        assert!(parseval_scale > 0.0);
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(act_dim);
        ResidualPolicy {
            net: MlpNet::new_orthogonal(&dims, parseval_scale.sqrt(), 0.01, rng),
            parseval_scale,
        }
    }
}

/// Frozen base actor plus trainable residual; the head is shared by both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositePolicy {
    pub base: MoePolicy,
    pub residual: ResidualPolicy,
}

impl CompositePolicy {
    pub fn head(&self) -> &GaussianHead {
        &self.base.head
    }

    pub fn head_mut(&mut self) -> &mut GaussianHead {
        &mut self.base.head
    }

    /// μ(x) = μ_base(x) + μ_residual(x).
    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut mean = self.base.net.mean(obs)?;
        let r = self.residual.net.eval(obs);
        for (m, ri) in mean.iter_mut().zip(r.iter()) {
            *m += ri;
        }
        Ok(mean)
    }

    pub fn residual_mean(&self, obs: &[f64]) -> Vec<f64> {
        self.residual.net.eval(obs)
    }
}

/// Borrowed view of a deployable policy, base or composite, for evaluation.
#[derive(Debug, Clone, Copy)]
pub enum PolicyView<'a> {
    Base(&'a MoePolicy),
    Composite { base: &'a MoePolicy, residual: &'a ResidualPolicy },
}

impl PolicyView<'_> {
    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        match self {
            PolicyView::Base(p) => p.net.mean(obs),
            PolicyView::Composite { base, residual } => {
                let mut m = base.net.mean(obs)?;
                let r = residual.net.eval(obs);
                for (mi, ri) in m.iter_mut().zip(r.iter()) {
                    *mi += ri;
                }
                Ok(m)
            }
        }
    }

    pub fn head(&self) -> &GaussianHead {
        match self {
            PolicyView::Base(p) => &p.head,
            PolicyView::Composite { base, .. } => &base.head,
        }
    }

    pub fn residual(&self) -> Option<&ResidualPolicy> {
        match self {
            PolicyView::Base(_) => None,
            PolicyView::Composite { residual, .. } => Some(residual),
        }
    }
}

/// Gram of `w` taken on its smaller dimension, so scaled orthonormality is
/// attainable for both tall and wide layers.
fn gram_small(w: &Matrix) -> Matrix {
    if w.cols <= w.rows {
        w.gram_columns()
    } else {
        w.gram_rows()
    }
}

/// Σ_{l<L} ‖Gram(W_l) − s·I‖_F² over all layers except the final one.
pub fn parseval_loss(policy: &ResidualPolicy) -> f64 {
    parseval_loss_net(&policy.net, policy.parseval_scale)
}

pub fn parseval_loss_net(net: &MlpNet, s: f64) -> f64 {
    let n = net.n_layers();
    net.weights[..n - 1]
        .iter()
        .map(|w| gram_small(w).sub_scaled_identity(s).frobenius_sq())
        .sum()
}

/// Exact gradient of [`parseval_loss`]: per non-final layer,
/// 4·W·(WᵀW − sI) for tall layers and 4·(WWᵀ − sI)·W for wide ones.
pub fn parseval_grad(policy: &ResidualPolicy) -> Vec<Matrix> {
    let net = &policy.net;
    let s = policy.parseval_scale;
    let n = net.n_layers();
    net.weights[..n - 1].iter().map(|w| parseval_grad_layer(w, s)).collect()
}

pub fn parseval_grad_layer(w: &Matrix, s: f64) -> Matrix {
    let d = gram_small(w).sub_scaled_identity(s);
    let mut g = Matrix::zeros(w.rows, w.cols);
    if w.cols <= w.rows {
        // 4 · W · D, D = WᵀW − sI (cols×cols)
        for r in 0..w.rows {
            for c in 0..w.cols {
                let mut acc = 0.0;
                for k in 0..w.cols {
                    acc += w.get(r, k) * d.get(k, c);
                }
                g.set(r, c, 4.0 * acc);
            }
        }
    } else {
        // 4 · D · W, D = WWᵀ − sI (rows×rows)
        for r in 0..w.rows {
            for c in 0..w.cols {
                let mut acc = 0.0;
                for k in 0..w.rows {
                    acc += d.get(r, k) * w.get(k, c);
                }
                g.set(r, c, 4.0 * acc);
            }
        }
    }
    g
}

/// Accumulate λ·∇parseval_loss into existing gradient buffers.
pub fn parseval_accumulate(policy: &ResidualPolicy, coeff: f64, grads: &mut MlpGrads) {
    if coeff == 0.0 {
        return;
    }
    for (l, g) in parseval_grad(policy).into_iter().enumerate() {
        for (dst, src) in grads.dw[l].data.iter_mut().zip(g.data.iter()) {
            *dst += coeff * src;
        }
    }
}

/// Per-layer defects ε_l = ‖Gram(W_l) − sI‖₂ for the non-final layers.
pub fn parseval_defects(policy: &ResidualPolicy) -> Result<Vec<f64>> {
    let net = &policy.net;
    let n = net.n_layers();
    net.weights[..n - 1]
        .iter()
        .map(|w| {
            spectral_norm_sym(
                &gram_small(w).sub_scaled_identity(policy.parseval_scale),
                POWER_ITER_TOL,
                POWER_ITER_MAX,
            )
        })
        .collect()
}

/// Lipschitz bound Π_{l<L} √(s + ε_l) · ‖W_L‖₂ for the residual net.
pub fn lipschitz_bound(policy: &ResidualPolicy) -> Result<f64> {
    let eps = parseval_defects(policy)?;
    let mut bound = 1.0;
    for e in eps {
        bound *= (policy.parseval_scale + e).sqrt();
    }
    let last = &policy.net.weights[policy.net.n_layers() - 1];
    Ok(bound * spectral_norm(last)?)
}

/// Largest observed ‖f(x) − f(y)‖/‖x − y‖ over `n_pairs` pairs drawn i.i.d.
/// from N(0, 10²·I) in observation space.
pub fn empirical_lipschitz(net: &MlpNet, n_pairs: usize, rng: &mut Prng) -> f64 {
    let d = net.input_dim();
    let mut scratch = MlpScratch::default();
    let mut worst = 0.0f64;
    for _ in 0..n_pairs {
        let x: Vec<f64> = (0..d).map(|_| 10.0 * rng.normal()).collect();
        let y: Vec<f64> = (0..d).map(|_| 10.0 * rng.normal()).collect();
        let dxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dxy == 0.0 {
            continue;
        }
        let fx = net.eval_into(&x, &mut scratch).to_vec();
        let fy = net.eval_into(&y, &mut scratch);
        let dfy: f64 = fx.iter().zip(fy.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(dfy / dxy);
    }
    worst
}

/// KL divergence between two Gaussians sharing the head's covariance:
/// ½ Σᵢ (μᵢ − μ_b,ᵢ)²/σᵢ².
pub fn kl_shared_cov(mu_composite: &[f64], mu_base: &[f64], head: &GaussianHead) -> f64 {
    debug_assert_eq!(mu_composite.len(), mu_base.len());
    debug_assert_eq!(mu_composite.len(), head.log_std.len());
    let mut kl = 0.0;
    for i in 0..mu_composite.len() {
        let d = mu_composite[i] - mu_base[i];
        let inv_var = (-2.0 * head.log_std[i]).exp();
        kl += 0.5 * d * d * inv_var;
    }
    kl
}

/// Residual-output bound √(2·kl·λmax(Σ)).
pub fn residual_norm_bound(kl: f64, head: &GaussianHead) -> Result<f64> {
    if kl < 0.0 {
        return Err(Error::InvalidArgument(format!("residual_norm_bound: negative kl {kl}")));
    }
    Ok((2.0 * kl * head.lambda_max()).sqrt())
}

/// Shorthand for the spec'd mixture mean.
pub fn moe_mean(policy: &MoePolicy, obs: &[f64]) -> Result<Vec<f64>> {
    policy.net.mean(obs)
}

/// Shorthand for the composite mean.
pub fn composite_mean(policy: &CompositePolicy, obs: &[f64]) -> Result<Vec<f64>> {
    policy.mean(obs)
}
