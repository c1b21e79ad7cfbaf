//! Running observation normalization. Statistics update once per iteration
//! from the raw observations of the finished rollout, so the transform is
//! constant within a rollout and within the update epochs that follow it.

use serde::{Deserialize, Serialize};

const NORM_EPS: f64 = 1e-8;
const NORM_CLIP: f64 = 10.0;

/// Per-channel running mean/variance (parallel-merge form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub enabled: bool,
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

/// Plain per-channel sums accumulated while collecting a batch.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub count: f64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl BatchStats {
    pub fn new(dim: usize) -> Self {
        BatchStats { count: 0.0, sum: vec![0.0; dim], sum_sq: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for (i, &v) in x.iter().enumerate() {
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
    }

    pub fn merge(&mut self, other: &BatchStats) {
        self.count += other.count;
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
    }
}

impl RunningNorm {
    pub fn new(dim: usize, enabled: bool) -> Self {
        RunningNorm { enabled, count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merge one batch of statistics (Chan et al. parallel update).
    pub fn update(&mut self, batch: &BatchStats) {
        if !self.enabled || batch.count == 0.0 {
            return;
        }
        let bn = batch.count;
        for i in 0..self.mean.len() {
            let b_mean = batch.sum[i] / bn;
            let b_m2 = batch.sum_sq[i] - bn * b_mean * b_mean;
            let delta = b_mean - self.mean[i];
            let total = self.count + bn;
            self.mean[i] += delta * bn / total;
            self.m2[i] += b_m2 + delta * delta * self.count * bn / total;
        }
        self.count += bn;
    }

    #[inline]
    pub fn normalize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if !self.enabled || self.count < 2.0 {
            out.extend_from_slice(x);
            return;
        }
        for (i, &v) in x.iter().enumerate() {
            let var = self.m2[i] / self.count;
            let z = (v - self.mean[i]) / (var + NORM_EPS).sqrt();
            out.push(z.clamp(-NORM_CLIP, NORM_CLIP));
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.normalize_into(x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    #[test]
    fn disabled_is_identity() {
        let mut n = RunningNorm::new(3, false);
        let mut b = BatchStats::new(3);
        b.push(&[1.0, 2.0, 3.0]);
        n.update(&b);
        assert_eq!(n.normalize(&[5.0, -1.0, 0.5]), vec![5.0, -1.0, 0.5]);
    }

    #[test]
    fn converges_to_unit_scale() {
        let mut rng = Prng::new(1);
        let mut n = RunningNorm::new(2, true);
        for _ in 0..50 {
            let mut b = BatchStats::new(2);
            for _ in 0..200 {
                b.push(&[3.0 + 2.0 * rng.normal(), -1.0 + 0.5 * rng.normal()]);
            }
            n.update(&b);
        }
        let z = n.normalize(&[3.0, -1.0]);
        assert!(z[0].abs() < 0.1 && z[1].abs() < 0.1, "{z:?}");
        let z2 = n.normalize(&[5.0, -0.5]);
        assert!((z2[0] - 1.0).abs() < 0.1, "{z2:?}");
        assert!((z2[1] - 1.0).abs() < 0.1, "{z2:?}");
    }

    #[test]
    fn incremental_matches_single_batch() {
        let mut rng = Prng::new(2);
        let data: Vec<Vec<f64>> = (0..1000).map(|_| vec![rng.normal(), 10.0 * rng.normal()]).collect();
        let mut one = RunningNorm::new(2, true);
        let mut big = BatchStats::new(2);
        for x in &data {
            big.push(x);
        }
        one.update(&big);

        let mut inc = RunningNorm::new(2, true);
        for chunk in data.chunks(100) {
            let mut b = BatchStats::new(2);
            for x in chunk {
                b.push(x);
            }
            inc.update(&b);
        }
        for i in 0..2 {
            assert!((one.mean[i] - inc.mean[i]).abs() < 1e-9);
            assert!((one.m2[i] - inc.m2[i]).abs() < 1e-6 * one.m2[i].abs().max(1.0));
        }
    }

    #[test]
    fn clamps_outliers() {
        let mut n = RunningNorm::new(1, true);
        let mut b = BatchStats::new(1);
        for i in 0..100 {
            b.push(&[i as f64 * 0.01]);
        }
        n.update(&b);
        let z = n.normalize(&[1e9]);
        assert_eq!(z[0], 10.0);
    }
}
