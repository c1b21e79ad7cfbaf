//! Two-stage adaptive sampling: per-motion segment distributions and a
//! motion-level distribution, both proportional to observed failure rates
//! plus an exploration floor. Counts window between updates.

use crate::rng::Prng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    /// attempts[m][s], failures[m][s] since the last distribution update.
    pub attempts: Vec<Vec<u64>>,
    pub failures: Vec<Vec<u64>>,
    pub p_seg: Vec<Vec<f64>>,
    pub p_motion: Vec<f64>,
    pub floor: f64,
    pub update_interval: usize,
}

/// One sampling event: entering a segment counts an attempt; a termination
/// inside it counts a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegEvent {
    pub clip: usize,
    pub seg: usize,
    pub failed: bool,
}

fn normalized_rates(attempts: &[u64], failures: &[u64], floor: f64) -> Vec<f64> {
    let weights: Vec<f64> = attempts
        .iter()
        .zip(failures.iter())
        .map(|(&a, &f)| if a == 0 { floor } else { f as f64 / a as f64 + floor })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

impl SamplerState {
    /// Uniform distributions over the given per-motion segment counts.
    pub fn new(seg_counts: &[usize], floor: f64, update_interval: usize) -> Self {
        assert!(!seg_counts.is_empty());
        assert!(floor > 0.0);
        let p_seg = seg_counts.iter().map(|&n| vec![1.0 / n as f64; n]).collect();
        let n_m = seg_counts.len();
        SamplerState {
            attempts: seg_counts.iter().map(|&n| vec![0; n]).collect(),
            failures: seg_counts.iter().map(|&n| vec![0; n]).collect(),
            p_seg,
            p_motion: vec![1.0 / n_m as f64; n_m],
            floor,
            update_interval,
        }
    }

    pub fn record(&mut self, events: &[SegEvent]) {
        for e in events {
            if e.failed {
                self.failures[e.clip][e.seg] += 1;
            } else {
                self.attempts[e.clip][e.seg] += 1;
            }
        }
    }

    /// Recompute both distributions from the windowed counts and reset the
    /// window. Returns true every `update_interval` iterations.
    pub fn maybe_update(&mut self, iteration: usize) -> bool {
        if iteration == 0 || iteration % self.update_interval != 0 {
            return false;
        }
        for m in 0..self.p_seg.len() {
            self.p_seg[m] = normalized_rates(&self.attempts[m], &self.failures[m], self.floor);
        }
        let m_attempts: Vec<u64> = self.attempts.iter().map(|a| a.iter().sum()).collect();
        let m_failures: Vec<u64> = self.failures.iter().map(|f| f.iter().sum()).collect();
        self.p_motion = normalized_rates(&m_attempts, &m_failures, self.floor);
        for a in self.attempts.iter_mut() {
            a.iter_mut().for_each(|v| *v = 0);
        }
        for f in self.failures.iter_mut() {
            f.iter_mut().for_each(|v| *v = 0);
        }
        true
    }

    /// Read-only snapshot used by environments during a rollout.
    pub fn dist(&self) -> SamplerDist {
        SamplerDist { p_motion: self.p_motion.clone(), p_seg: self.p_seg.clone() }
    }
}

/// Frozen distributions handed to the data-parallel rollout workers.
#[derive(Debug, Clone)]
pub struct SamplerDist {
    pub p_motion: Vec<f64>,
    pub p_seg: Vec<Vec<f64>>,
}

impl SamplerDist {
    pub fn sample(&self, rng: &mut Prng) -> (usize, usize) {
        let m = rng.sample_index(&self.p_motion);
        let s = rng.sample_index(&self.p_seg[m]);
        (m, s)
    }
}
